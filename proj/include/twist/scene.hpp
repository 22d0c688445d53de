#pragma once

// Synthetic road-scene process: a static tiled background with rectangular
// vehicle and pedestrian blobs that random-walk, appear and disappear. Blobs
// never overlap, so every object is fully visible. Each frame carries derived
// traffic-state labels and an exogenous priority bit.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/core_types.hpp"

namespace twist {

struct TokenBand {
  Token begin = 0;  // inclusive
  Token end = 0;    // exclusive

  bool empty() const noexcept { return end <= begin; }
  bool contains(Token t) const noexcept { return t >= begin && t < end; }
  Token size() const noexcept { return empty() ? 0 : end - begin; }
};

enum class ObjectKind { Vehicle, Pedestrian };

struct SceneConfig {
  int height = 12;
  int width = 12;
  int codebook_size = 64;
  TokenBand background{0, 32};
  TokenBand vehicle{32, 48};
  TokenBand pedestrian{48, 64};
  int background_patch = 3;  // side of the constant background tiles
  int vehicle_height = 2, vehicle_width = 3;
  int pedestrian_height = 2, pedestrian_width = 1;
  int max_objects = 6;
  int initial_vehicles = 0;
  int initial_pedestrians = 0;
  double birth_probability = 0.15;
  double death_probability = 0.05;
  double vehicle_fraction = 0.5;  // share of births that are vehicles
  int step = 1;                   // random-walk step, cells per frame
  int density_low = 1;            // count <= density_low  -> class 0
  int density_high = 3;           // count <= density_high -> class 1, else 2
  int priority_threshold = 3;     // q = 1 iff count > priority_threshold
  std::uint64_t map_seed = 1;     // background layout
  std::uint64_t seed = 1;         // objects

  void validate() const {
    if (height < 1 || width < 1) throw ConfigError("scene grid must be non-empty");
    if (background.empty() || vehicle.empty() || pedestrian.empty())
      throw ConfigError("scene token bands must be non-empty");
    const Token K = static_cast<Token>(codebook_size);
    for (auto* b : {&background, &vehicle, &pedestrian})
      if (b->end > K) throw ConfigError("scene token band exceeds codebook");
    auto overlap = [](const TokenBand& a, const TokenBand& b) {
      return a.begin < b.end && b.begin < a.end;
    };
    if (overlap(background, vehicle) || overlap(background, pedestrian) ||
        overlap(vehicle, pedestrian))
      throw ConfigError("scene token bands must be disjoint");
    if (!(density_low < density_high)) throw ConfigError("density thresholds must be increasing");
    if (background_patch < 1 || step < 0 || max_objects < 0)
      throw ConfigError("invalid scene geometry parameters");
    if (vehicle_height < 1 || vehicle_width < 1 || pedestrian_height < 1 || pedestrian_width < 1)
      throw ConfigError("object blobs must be at least 1x1");
  }
};

struct Label {
  int car = 0;
  int ped = 0;
  int den = 0;
  friend bool operator==(const Label&, const Label&) = default;
};

// Task 0: vehicle presence, 1: pedestrian presence, 2: density class.
inline int label_component(const Label& y, int task) {
  return task == 0 ? y.car : task == 1 ? y.ped : y.den;
}

struct LabeledFrame {
  TokenGrid grid;
  Label label;
  int priority = 0;
};

struct SceneObject {
  ObjectKind kind;
  int row, col;  // top-left corner
  int height, width;
  bool immortal = false;
  std::vector<Token> pattern;  // height*width tokens, fixed at birth
};

inline int density_class(const SceneConfig& cfg, int count) {
  if (count <= cfg.density_low) return 0;
  if (count <= cfg.density_high) return 1;
  return 2;
}

inline Label label_from_objects(const SceneConfig& cfg, const std::vector<SceneObject>& objects) {
  Label y;
  for (auto& o : objects) {
    if (o.kind == ObjectKind::Vehicle) y.car = 1;
    if (o.kind == ObjectKind::Pedestrian) y.ped = 1;
  }
  y.den = density_class(cfg, static_cast<int>(objects.size()));
  return y;
}

// Stateful object process; generate_episode drives it frame by frame.
class SceneProcess {
public:
  explicit SceneProcess(SceneConfig cfg) : cfg_(std::move(cfg)), rng_(make_rng(cfg_.seed)) {
    cfg_.validate();
    background_ = TokenGrid(cfg_.height, cfg_.width);
    // The background map has its own seed so every episode can share one
    // static layout while the objects differ.
    Rng map_rng = make_rng(derive_seed(cfg_.map_seed, {0x3A9ull}));
    std::uniform_int_distribution<Token> bg(cfg_.background.begin, cfg_.background.end - 1);
    const int p = cfg_.background_patch;
    for (int r0 = 0; r0 < cfg_.height; r0 += p)
      for (int c0 = 0; c0 < cfg_.width; c0 += p) {
        const Token t = bg(map_rng);
        for (int r = r0; r < std::min(r0 + p, cfg_.height); ++r)
          for (int c = c0; c < std::min(c0 + p, cfg_.width); ++c) background_.at(r, c) = t;
      }
    const bool immortal = cfg_.death_probability <= 0.0;
    for (int i = 0; i < cfg_.initial_vehicles; ++i) spawn(ObjectKind::Vehicle, immortal);
    for (int i = 0; i < cfg_.initial_pedestrians; ++i) spawn(ObjectKind::Pedestrian, immortal);
  }

  const std::vector<SceneObject>& objects() const noexcept { return objects_; }
  const TokenGrid& background() const noexcept { return background_; }

  // Advances the object process one frame (deaths, births, motion).
  void advance() {
    std::bernoulli_distribution die(std::clamp(cfg_.death_probability, 0.0, 1.0));
    std::vector<SceneObject> kept;
    for (auto& o : objects_)
      if (o.immortal || !die(rng_)) kept.push_back(std::move(o));
    objects_ = std::move(kept);

    std::bernoulli_distribution born(std::clamp(cfg_.birth_probability, 0.0, 1.0));
    if (static_cast<int>(objects_.size()) < cfg_.max_objects && born(rng_)) {
      std::bernoulli_distribution veh(std::clamp(cfg_.vehicle_fraction, 0.0, 1.0));
      spawn(veh(rng_) ? ObjectKind::Vehicle : ObjectKind::Pedestrian, false);
    }

    // A move that would overlap another object is rejected.
    std::uniform_int_distribution<int> move(-1, 1);
    for (std::size_t k = 0; k < objects_.size(); ++k) {
      auto& o = objects_[k];
      const int dr = cfg_.step * move(rng_), dc = cfg_.step * move(rng_);
      const int r = std::clamp(o.row + dr, 0, cfg_.height - o.height);
      const int c = std::clamp(o.col + dc, 0, cfg_.width - o.width);
      if (is_free(r, c, o.height, o.width, k)) {
        o.row = r;
        o.col = c;
      }
    }
  }

  LabeledFrame render() const {
    LabeledFrame f;
    f.grid = background_;
    for (auto& o : objects_)
      for (int r = 0; r < o.height; ++r)
        for (int c = 0; c < o.width; ++c)
          f.grid.at(o.row + r, o.col + c) = o.pattern[static_cast<std::size_t>(r) * o.width + c];
    f.label = label_from_objects(cfg_, objects_);
    f.priority = static_cast<int>(objects_.size()) > cfg_.priority_threshold ? 1 : 0;
    return f;
  }

private:
  void spawn(ObjectKind kind, bool immortal) {
    SceneObject o;
    o.kind = kind;
    o.immortal = immortal;
    const bool v = kind == ObjectKind::Vehicle;
    o.height = std::min(v ? cfg_.vehicle_height : cfg_.pedestrian_height, cfg_.height);
    o.width = std::min(v ? cfg_.vehicle_width : cfg_.pedestrian_width, cfg_.width);
    std::uniform_int_distribution<int> rr(0, cfg_.height - o.height);
    std::uniform_int_distribution<int> cc(0, cfg_.width - o.width);
    bool placed = false;
    for (int attempt = 0; attempt < kSpawnAttempts && !placed; ++attempt) {
      o.row = rr(rng_);
      o.col = cc(rng_);
      placed = is_free(o.row, o.col, o.height, o.width, objects_.size());
    }
    const TokenBand& band = v ? cfg_.vehicle : cfg_.pedestrian;
    std::uniform_int_distribution<Token> tok(band.begin, band.end - 1);
    o.pattern.resize(static_cast<std::size_t>(o.height) * o.width);
    for (auto& t : o.pattern) t = tok(rng_);
    if (placed) objects_.push_back(std::move(o));
  }

  // True when the rectangle overlaps no object other than objects_[skip].
  bool is_free(int row, int col, int h, int w, std::size_t skip) const {
    for (std::size_t k = 0; k < objects_.size(); ++k) {
      if (k == skip) continue;
      const auto& o = objects_[k];
      if (row < o.row + o.height && o.row < row + h && col < o.col + o.width && o.col < col + w) return false;
    }
    return true;
  }

  static constexpr int kSpawnAttempts = 32;

  SceneConfig cfg_;
  Rng rng_;
  TokenGrid background_;
  std::vector<SceneObject> objects_;
};

inline std::vector<LabeledFrame> generate_episode(const SceneConfig& cfg, int frames) {
  if (frames < 1) throw ConfigError("episode needs at least one frame");
  SceneProcess proc(cfg);
  std::vector<LabeledFrame> out;
  out.reserve(static_cast<std::size_t>(frames));
  out.push_back(proc.render());
  for (int t = 1; t < frames; ++t) {
    proc.advance();
    out.push_back(proc.render());
  }
  return out;
}

// ---- JSONL episode files ---------------------------------------------------
// {"t":int, "tokens":[int], "label":[car,ped,den], "q":int} per line.

inline nlohmann::json frame_to_json(const LabeledFrame& f, long long t) {
  auto j = grid_to_json(f.grid, t);
  j["label"] = {f.label.car, f.label.ped, f.label.den};
  j["q"] = f.priority;
  return j;
}

inline void write_episode(std::ostream& os, const std::vector<LabeledFrame>& frames) {
  for (std::size_t t = 0; t < frames.size(); ++t)
    os << frame_to_json(frames[t], static_cast<long long>(t)).dump() << '\n';
}

inline void save_episode(const std::string& path, const std::vector<LabeledFrame>& frames) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_episode(os, frames);
}

inline std::vector<LabeledFrame> read_episode(std::istream& is, int height, int width,
                                              int codebook_size) {
  const auto alphabet = TokenAlphabet::make(codebook_size);
  std::vector<LabeledFrame> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    LabeledFrame f;
    try {
      f.grid = grid_from_json(j, height, width);
      auto lab = j.at("label").get<std::vector<int>>();
      if (lab.size() != 3) throw ParseError("label must have 3 entries", lineno);
      f.label = {lab[0], lab[1], lab[2]};
      f.priority = j.at("q").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    } catch (const DimensionError& e) {
      throw ParseError(e.what(), lineno);
    }
    try {
      f.grid.validate(alphabet);
    } catch (const Error& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (f.label.car < 0 || f.label.car > 1 || f.label.ped < 0 || f.label.ped > 1 ||
        f.label.den < 0 || f.label.den > 2 || f.priority < 0 || f.priority > 1)
      throw ValidationError("line " + std::to_string(lineno) + ": label or priority out of range");
    frames.push_back(std::move(f));
  }
  return frames;
}

inline std::vector<LabeledFrame> load_episode(const std::string& path, int height, int width,
                                              int codebook_size) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open episode file " + path);
  return read_episode(is, height, width, codebook_size);
}

inline nlohmann::json to_json(const SceneConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"codebook_size", c.codebook_size},
          {"background", {c.background.begin, c.background.end}},
          {"vehicle", {c.vehicle.begin, c.vehicle.end}},
          {"pedestrian", {c.pedestrian.begin, c.pedestrian.end}},
          {"background_patch", c.background_patch},
          {"vehicle_size", {c.vehicle_height, c.vehicle_width}},
          {"pedestrian_size", {c.pedestrian_height, c.pedestrian_width}},
          {"max_objects", c.max_objects},
          {"initial_vehicles", c.initial_vehicles},
          {"initial_pedestrians", c.initial_pedestrians},
          {"birth_probability", c.birth_probability},
          {"death_probability", c.death_probability},
          {"vehicle_fraction", c.vehicle_fraction},
          {"step", c.step},
          {"density_thresholds", {c.density_low, c.density_high}},
          {"priority_threshold", c.priority_threshold},
          {"map_seed", c.map_seed},
          {"seed", c.seed}};
}

inline void from_json_into(const nlohmann::json& j, SceneConfig& c) {
  auto band = [&](const char* key, TokenBand& b) {
    if (j.contains(key)) {
      auto v = j.at(key).get<std::vector<Token>>();
      if (v.size() != 2) throw ConfigError(std::string("scene.") + key + " must be [begin, end)");
      b = {v[0], v[1]};
    }
  };
  auto pair = [&](const char* key, int& a, int& b) {
    if (j.contains(key)) {
      auto v = j.at(key).get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError(std::string("scene.") + key + " must have 2 entries");
      a = v[0];
      b = v[1];
    }
  };
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("height", c.height);
  get("width", c.width);
  get("codebook_size", c.codebook_size);
  band("background", c.background);
  band("vehicle", c.vehicle);
  band("pedestrian", c.pedestrian);
  get("background_patch", c.background_patch);
  pair("vehicle_size", c.vehicle_height, c.vehicle_width);
  pair("pedestrian_size", c.pedestrian_height, c.pedestrian_width);
  get("max_objects", c.max_objects);
  get("initial_vehicles", c.initial_vehicles);
  get("initial_pedestrians", c.initial_pedestrians);
  get("birth_probability", c.birth_probability);
  get("death_probability", c.death_probability);
  get("vehicle_fraction", c.vehicle_fraction);
  get("step", c.step);
  pair("density_thresholds", c.density_low, c.density_high);
  get("priority_threshold", c.priority_threshold);
  get("map_seed", c.map_seed);
  get("seed", c.seed);
}

}  // namespace twist
