#pragma once

// Experiment configuration. The file format is JSON; every key is optional
// and falls back to the desk-scale defaults below. `apply_override` lets a
// CLI flag replace any value by dotted path.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/app_head.hpp"
#include "twist/controller.hpp"
#include "twist/core_types.hpp"
#include "twist/phy.hpp"
#include "twist/receiver.hpp"
#include "twist/scene.hpp"
#include "twist/uep.hpp"

namespace twist {

enum class GammaSource { Nominal, Instantaneous };

struct ScheduleSegment {
  int frames = 50;
  double snr_db = 10.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  SceneConfig scene;

  int embedding_dim = 16;
  std::uint64_t embedding_seed = 7;
  int region_rows = 4, region_cols = 4;
  HeadTrainConfig head_train;

  int groups = 4;
  std::vector<ProtectionPolicy> policies = default_policy_set();
  ModeBudgets budgets;

  CompletionKind completion = CompletionKind::Cooccurrence;
  double completion_smoothing = 1.0;
  double persistence_weight = 1.0;
  int vote_iterations = 4;

  int train_episodes = 20, train_frames = 100;
  int calibration_episodes = 2, calibration_frames = 50;
  int validation_episodes = 2, validation_frames = 60;
  ChannelKind design_channel = ChannelKind::RayleighBlock;
  double design_snr_db = 10.0;
  long long profile_tokens = 100000;
  std::vector<double> threshold_grid = default_threshold_grid();
  int max_threshold_cycles = 5;

  ControllerGrid controller_grid;
  std::vector<double> channel_cuts{0.2, 0.4, 0.6, 0.8};
  std::vector<double> validation_snrs{2.0, 10.0, 18.0};
  std::vector<ChannelKind> validation_channels{ChannelKind::Awgn, ChannelKind::RayleighBlock};
  GammaRange gamma_range;
  GammaSource gamma_source = GammaSource::Nominal;

  double alpha = 1.0;
  double beta = 0.25;
  double omega_priority = 2.0;

  // Evaluation; not part of the artifact hash.
  std::vector<double> snr_sweep{0.0, 4.0, 8.0, 12.0, 16.0, 20.0};
  std::vector<ChannelKind> channels{ChannelKind::Awgn, ChannelKind::RayleighBlock};
  std::vector<std::string> methods{"twist",     "static-low",  "static-med",    "static-high",
                                   "channel-adaptive", "no-gamma", "no-rho",   "no-drift",
                                   "no-q",      "uniform",     "no-gating",     "no-completion",
                                   "hard-only"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int frames = 200;
  int rolling_window = 20;
  std::vector<ScheduleSegment> temporal_schedule{{50, 16.0}, {50, 4.0}, {50, 12.0}, {50, 0.0}};
  std::uint64_t temporal_seed = 1;

  std::string artifacts_dir = "artifacts";
  std::string output_dir = "results";

  TokenAlphabet alphabet() const { return TokenAlphabet::make(scene.codebook_size); }
  int positions() const { return scene.height * scene.width; }

  void validate() const {
    scene.validate();
    (void)alphabet();
    if (embedding_dim < 1) throw ConfigError("embedding dim must be positive");
    if (groups < 1 || groups > positions()) throw ConfigError("groups must lie in [1, L]");
    if (policies.empty()) throw ConfigError("policy set is empty");
    for (std::size_t i = 0; i < policies.size(); ++i) {
      if (policies[i].repetition < 1) throw ConfigError("repetition factors must be positive");
      if (i && policies[i].repetition <= policies[i - 1].repetition)
        throw ConfigError("policies must be listed by strictly increasing repetition");
    }
    if (budgets.nominal < 1) throw ConfigError("nominal budget must be positive");
    if (train_episodes < 1 || train_frames < 1 || calibration_episodes < 1 ||
        calibration_frames < 1 || validation_episodes < 1 || validation_frames < 1)
      throw ConfigError("offline split sizes must be positive");
    if (threshold_grid.empty()) throw ConfigError("threshold grid is empty");
    if (seeds.empty()) throw ConfigError("seed list is empty");
    if (frames < 1) throw ConfigError("frames must be positive");
    if (alpha < 0 || beta < 0 || omega_priority < 0) throw ConfigError("objective weights must be non-negative");
    if (!(gamma_range.max_db > gamma_range.min_db)) throw ConfigError("gamma range is empty");
  }
};

// ---- JSON --------------------------------------------------------------------

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  std::vector<int> reps;
  for (auto& p : c.policies) reps.push_back(p.repetition);
  auto chans = [](const std::vector<ChannelKind>& v) {
    std::vector<std::string> s;
    for (auto k : v) s.emplace_back(to_string(k));
    return s;
  };
  json sched = json::array();
  for (auto& s : c.temporal_schedule) sched.push_back({s.frames, s.snr_db});
  return {
      {"seed", c.seed},
      {"scene", to_json(c.scene)},
      {"embedding", {{"dim", c.embedding_dim}, {"seed", c.embedding_seed}}},
      {"head",
       {{"region_rows", c.region_rows},
        {"region_cols", c.region_cols},
        {"epochs", c.head_train.epochs},
        {"learning_rate", c.head_train.learning_rate},
        {"batch_size", c.head_train.batch_size},
        {"target_loss", c.head_train.target_loss},
        {"seed", c.head_train.seed}}},
      {"groups", c.groups},
      {"policies", reps},
      {"budgets",
       {{"nominal", c.budgets.nominal},
        {"low_factor", c.budgets.low_factor},
        {"high_factor", c.budgets.high_factor}}},
      {"completion",
       {{"kind", std::string(to_string(c.completion))},
        {"smoothing", c.completion_smoothing},
        {"persistence_weight", c.persistence_weight},
        {"max_iterations", c.vote_iterations}}},
      {"offline",
       {{"train_episodes", c.train_episodes},
        {"train_frames", c.train_frames},
        {"calibration_episodes", c.calibration_episodes},
        {"calibration_frames", c.calibration_frames},
        {"validation_episodes", c.validation_episodes},
        {"validation_frames", c.validation_frames},
        {"design_channel", std::string(to_string(c.design_channel))},
        {"design_snr_db", c.design_snr_db},
        {"profile_tokens", c.profile_tokens},
        {"threshold_grid", c.threshold_grid},
        {"max_threshold_cycles", c.max_threshold_cycles}}},
      {"controller",
       {{"eta_grid", c.controller_grid.eta},
        {"theta_low_grid", c.controller_grid.theta_low},
        {"theta_high_grid", c.controller_grid.theta_high},
        {"channel_cuts", c.channel_cuts},
        {"validation_snrs", c.validation_snrs},
        {"validation_channels", chans(c.validation_channels)},
        {"gamma_min_db", c.gamma_range.min_db},
        {"gamma_max_db", c.gamma_range.max_db},
        {"gamma_source", c.gamma_source == GammaSource::Nominal ? "nominal" : "instantaneous"}}},
      {"objective", {{"alpha", c.alpha}, {"beta", c.beta}, {"omega_priority", c.omega_priority}}},
      {"evaluation",
       {{"snr_sweep", c.snr_sweep},
        {"channels", chans(c.channels)},
        {"methods", c.methods},
        {"seeds", c.seeds},
        {"frames", c.frames},
        {"rolling_window", c.rolling_window},
        {"temporal_schedule", sched},
        {"temporal_seed", c.temporal_seed}}},
      {"artifacts_dir", c.artifacts_dir},
      {"output_dir", c.output_dir},
  };
}

namespace detail {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline std::vector<ChannelKind> read_channels(const nlohmann::json& j) {
  std::vector<ChannelKind> out;
  for (auto& s : j.get<std::vector<std::string>>()) out.push_back(parse_channel(s));
  return out;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    using detail::read;
    read(j, "seed", c.seed);
    if (j.contains("scene")) from_json_into(j.at("scene"), c.scene);
    if (j.contains("embedding")) {
      read(j["embedding"], "dim", c.embedding_dim);
      read(j["embedding"], "seed", c.embedding_seed);
    }
    if (j.contains("head")) {
      const auto& h = j.at("head");
      read(h, "region_rows", c.region_rows);
      read(h, "region_cols", c.region_cols);
      read(h, "epochs", c.head_train.epochs);
      read(h, "learning_rate", c.head_train.learning_rate);
      read(h, "batch_size", c.head_train.batch_size);
      read(h, "target_loss", c.head_train.target_loss);
      read(h, "seed", c.head_train.seed);
    }
    read(j, "groups", c.groups);
    if (j.contains("policies")) {
      c.policies.clear();
      for (int r : j.at("policies").get<std::vector<int>>()) c.policies.push_back({r});
    }
    if (j.contains("budgets")) {
      read(j["budgets"], "nominal", c.budgets.nominal);
      read(j["budgets"], "low_factor", c.budgets.low_factor);
      read(j["budgets"], "high_factor", c.budgets.high_factor);
    }
    if (j.contains("completion")) {
      const auto& m = j.at("completion");
      if (m.contains("kind")) c.completion = parse_completion(m.at("kind").get<std::string>());
      read(m, "smoothing", c.completion_smoothing);
      read(m, "persistence_weight", c.persistence_weight);
      read(m, "max_iterations", c.vote_iterations);
    }
    if (j.contains("offline")) {
      const auto& o = j.at("offline");
      read(o, "train_episodes", c.train_episodes);
      read(o, "train_frames", c.train_frames);
      read(o, "calibration_episodes", c.calibration_episodes);
      read(o, "calibration_frames", c.calibration_frames);
      read(o, "validation_episodes", c.validation_episodes);
      read(o, "validation_frames", c.validation_frames);
      if (o.contains("design_channel")) c.design_channel = parse_channel(o.at("design_channel").get<std::string>());
      read(o, "design_snr_db", c.design_snr_db);
      read(o, "profile_tokens", c.profile_tokens);
      read(o, "threshold_grid", c.threshold_grid);
      read(o, "max_threshold_cycles", c.max_threshold_cycles);
    }
    if (j.contains("controller")) {
      const auto& k = j.at("controller");
      read(k, "eta_grid", c.controller_grid.eta);
      read(k, "theta_low_grid", c.controller_grid.theta_low);
      read(k, "theta_high_grid", c.controller_grid.theta_high);
      read(k, "channel_cuts", c.channel_cuts);
      read(k, "validation_snrs", c.validation_snrs);
      if (k.contains("validation_channels")) c.validation_channels = detail::read_channels(k.at("validation_channels"));
      read(k, "gamma_min_db", c.gamma_range.min_db);
      read(k, "gamma_max_db", c.gamma_range.max_db);
      if (k.contains("gamma_source")) {
        const auto s = k.at("gamma_source").get<std::string>();
        if (s == "nominal") c.gamma_source = GammaSource::Nominal;
        else if (s == "instantaneous") c.gamma_source = GammaSource::Instantaneous;
        else throw ConfigError("gamma_source must be nominal or instantaneous");
      }
    }
    if (j.contains("objective")) {
      read(j["objective"], "alpha", c.alpha);
      read(j["objective"], "beta", c.beta);
      read(j["objective"], "omega_priority", c.omega_priority);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      read(e, "snr_sweep", c.snr_sweep);
      if (e.contains("channels")) c.channels = detail::read_channels(e.at("channels"));
      read(e, "methods", c.methods);
      read(e, "seeds", c.seeds);
      read(e, "frames", c.frames);
      read(e, "rolling_window", c.rolling_window);
      if (e.contains("temporal_schedule")) {
        c.temporal_schedule.clear();
        for (auto& seg : e.at("temporal_schedule")) {
          if (!seg.is_array() || seg.size() != 2) throw ConfigError("schedule segments are [frames, snr_db]");
          c.temporal_schedule.push_back({seg[0].get<int>(), seg[1].get<double>()});
        }
      }
      read(e, "temporal_seed", c.temporal_seed);
    }
    read(j, "artifacts_dir", c.artifacts_dir);
    read(j, "output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

// Replaces the value at a dotted path ("evaluation.frames=50"). The value is
// parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + path);
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + path + ": " + e.what());
    }
  }
  // Start from the defaults so overrides can address any key.
  nlohmann::json merged = to_json(ExperimentConfig{});
  merged.merge_patch(j);
  for (auto& o : overrides) apply_override(merged, o);
  return config_from_json(merged);
}

// Hash of everything the offline artifacts depend on.
inline std::uint64_t artifact_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("evaluation");
  j.erase("artifacts_dir");
  j.erase("output_dir");
  return fnv1a64(j.dump());
}

inline std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = d[v & 15];
  return s;
}

}  // namespace twist
