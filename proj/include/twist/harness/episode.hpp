#pragma once

// Online closed loop for one episode, its JSONL trace, per-episode summary
// metrics and the causality replay audit.

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/harness/offline.hpp"
#include "twist/harness/pipeline.hpp"
#include "twist/metrics.hpp"

namespace twist {

struct FrameRecord {
  int t = 0;
  SyncMode mode = SyncMode::Med;
  double snr_db = 0.0;  // nominal
  FeedbackStats stats;
  double tsmr = 0.0;
  std::optional<double> auer;
  double loss = 0.0;
  double objective = 0.0;
  Label prediction;
  Label label;
  int n_used = 0;
  int budget = 0;
  std::uint64_t noise = 0;  // fingerprint of the channel draws
  double wall_us = 0.0;
};

struct TraceHeader {
  std::string method;
  ControllerKind controller = ControllerKind::Full;
  ControllerParams params;
  ChannelKind channel = ChannelKind::Awgn;
  std::uint64_t seed = 0;
  std::uint64_t scene_seed = 0;
  std::uint64_t cell_seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t bundle_hash = 0;
  ModeBudgets budgets;
  int frames = 0;
};

struct EpisodeTrace {
  TraceHeader header;
  std::vector<FrameRecord> frames;
};

// Runs the closed loop: a_t is fixed before frame t is sent and a_{t+1} is
// chosen from frame t's statistics only.
inline EpisodeTrace run_episode(const ArtifactBundle& b, const ExperimentConfig& cfg, const MethodSpec& method,
                                const std::vector<LabeledFrame>& episode, ChannelKind channel,
                                std::span<const double> snr_per_frame, std::uint64_t cell_seed,
                                std::uint64_t bundle_hash = 0,
                                std::optional<ControllerKind> controller_override = std::nullopt) {
  if (snr_per_frame.size() != episode.size()) throw ConfigError("SNR schedule length differs from episode");
  if (b.config_hash != artifact_hash(cfg))
    throw ArtifactMismatchError("artifact bundle was built for a different configuration");
  MethodSpec spec = method;
  if (controller_override) spec.controller = *controller_override;
  const auto ctrl = controller_for(spec, b);
  const auto& prot = protection_for(method, b);
  const ReceiverOptions opt{method.gating, method.completion};
  const std::vector<double> zeros(b.groups.num_groups, 0.0);

  EpisodeTrace tr;
  tr.header = {method.name, ctrl.kind, ctrl.params, channel, 0, 0, cell_seed, b.config_hash, bundle_hash,
               cfg.budgets, static_cast<int>(episode.size())};
  std::optional<TokenGrid> prev;
  SyncMode mode = ctrl.initial_mode();
  for (std::size_t t = 0; t < episode.size(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto& src = episode[t];
    const auto& prof = prot.profiles[index_of(mode)];
    const ChannelConfig ch{channel, snr_per_frame[t]};
    const auto phy = phy_roundtrip(src.grid, b.groups, prof, b.alphabet, ch, derive_seed(cell_seed, {t}));
    const double gamma_db = channel_report_db(cfg, ch.snr_db, phy.rx.h);
    auto e = twin_update(phy.soft, src, method.gating ? std::span<const double>(prof.thresholds) : zeros,
                         prev ? &*prev : nullptr, b, opt, gamma_db, cfg.gamma_range);

    FrameRecord r;
    r.t = static_cast<int>(t);
    r.mode = mode;
    r.snr_db = ch.snr_db;
    r.stats = e.stats;
    r.tsmr = e.tsmr;
    r.auer = e.auer;
    r.loss = e.loss;
    r.objective = frame_objective(e, src.priority, mode, cfg);
    r.prediction = e.output.prediction;
    r.label = src.label;
    r.n_used = phy.tx.channel_uses();
    r.budget = prof.budget;
    r.noise = phy.rx.noise_fingerprint;

    mode = ctrl.next_mode(e.stats);
    prev = std::move(e.twin);
    r.wall_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
    tr.frames.push_back(r);
  }
  return tr;
}

// ---- summary metrics -------------------------------------------------------------------

struct EpisodeSummary {
  F1Scores f1;
  std::optional<double> urgent_f1;
  double tsmr = 0.0;
  std::optional<double> auer;  // mean over frames with accepted tokens
  double rho = 0.0;
  double drift = 0.0;
  double cost = 0.0;
  double loss = 0.0;
  double objective = 0.0;
  std::array<double, 3> mode_fraction{};
  std::uint64_t noise_hash = 0;
};

inline EpisodeSummary summarize(const EpisodeTrace& tr) {
  if (tr.frames.empty()) throw ValidationError("empty trace");
  EpisodeSummary s;
  std::vector<Label> pred, truth;
  std::vector<int> q;
  std::vector<SyncMode> modes;
  double auer_sum = 0.0;
  std::size_t auer_n = 0;
  std::uint64_t nh = 0xcbf29ce484222325ULL;
  for (auto& f : tr.frames) {
    pred.push_back(f.prediction);
    truth.push_back(f.label);
    q.push_back(f.stats.priority);
    modes.push_back(f.mode);
    s.tsmr += f.tsmr;
    s.rho += f.stats.rho;
    s.drift += f.stats.drift;
    s.loss += f.loss;
    s.objective += f.objective;
    s.mode_fraction[index_of(f.mode)] += 1.0;
    if (f.auer) {
      auer_sum += *f.auer;
      ++auer_n;
    }
    nh = fnv1a64(std::string_view(reinterpret_cast<const char*>(&f.noise), sizeof f.noise), nh);
  }
  const double T = static_cast<double>(tr.frames.size());
  s.f1 = macro_f1(pred, truth);
  if (auto u = urgent_macro_f1(pred, truth, q)) s.urgent_f1 = u->macro;
  s.tsmr /= T;
  s.rho /= T;
  s.drift /= T;
  s.loss /= T;
  s.objective /= T;
  for (auto& m : s.mode_fraction) m /= T;
  if (auer_n) s.auer = auer_sum / static_cast<double>(auer_n);
  s.cost = normalized_cost(modes, tr.header.budgets);
  s.noise_hash = nh;
  return s;
}

// ---- JSONL ----------------------------------------------------------------------

inline nlohmann::json to_json(const TraceHeader& h) {
  return {{"type", "header"},
          {"method", h.method},
          {"controller", std::string(to_string(h.controller))},
          {"params", to_json(h.params)},
          {"channel", std::string(to_string(h.channel))},
          {"seed", h.seed},
          {"scene_seed", h.scene_seed},
          {"cell_seed", h.cell_seed},
          {"config_hash", hex64(h.config_hash)},
          {"bundle_hash", hex64(h.bundle_hash)},
          {"budgets", {h.budgets.nominal, h.budgets.low_factor, h.budgets.high_factor}},
          {"frames", h.frames}};
}

inline nlohmann::json to_json(const FrameRecord& r) {
  auto lab = [](const Label& y) { return std::vector<int>{y.car, y.ped, y.den}; };
  return {{"t", r.t},
          {"mode", std::string(to_string(r.mode))},
          {"snr_db", r.snr_db},
          {"gamma", r.stats.gamma},
          {"rho", r.stats.rho},
          {"drift", r.stats.drift},
          {"q", r.stats.priority},
          {"tsmr", r.tsmr},
          {"auer", r.auer ? nlohmann::json(*r.auer) : nlohmann::json(nullptr)},
          {"loss", r.loss},
          {"objective", r.objective},
          {"pred", lab(r.prediction)},
          {"label", lab(r.label)},
          {"n_used", r.n_used},
          {"budget", r.budget},
          {"noise", hex64(r.noise)},
          {"wall_us", r.wall_us}};
}

inline void write_trace(std::ostream& os, const EpisodeTrace& tr) {
  os << to_json(tr.header).dump() << '\n';
  for (auto& f : tr.frames) os << to_json(f).dump() << '\n';
}

inline void save_trace(const std::string& path, const EpisodeTrace& tr) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write trace " + path);
  write_trace(os, tr);
}

inline EpisodeTrace read_trace(std::istream& is) {
  EpisodeTrace tr;
  std::string line;
  std::size_t n = 0;
  auto label = [](const nlohmann::json& j) {
    auto v = j.get<std::vector<int>>();
    if (v.size() != 3) throw ValidationError("label needs 3 entries");
    return Label{v[0], v[1], v[2]};
  };
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (n == 1) {
        if (j.value("type", std::string()) != "header") throw ParseError("trace must start with a header", n);
        auto& h = tr.header;
        h.method = j.at("method");
        h.controller = parse_controller(j.at("controller").get<std::string>());
        h.params = controller_params_from_json(j.at("params"));
        h.channel = parse_channel(j.at("channel").get<std::string>());
        h.seed = j.at("seed");
        h.scene_seed = j.at("scene_seed");
        h.cell_seed = j.at("cell_seed");
        h.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
        h.bundle_hash = std::stoull(j.at("bundle_hash").get<std::string>(), nullptr, 16);
        const auto& bud = j.at("budgets");
        h.budgets = {bud.at(0).get<int>(), bud.at(1).get<double>(), bud.at(2).get<double>()};
        h.frames = j.at("frames");
        continue;
      }
      FrameRecord r;
      r.t = j.at("t");
      r.mode = parse_mode(j.at("mode").get<std::string>());
      r.snr_db = j.at("snr_db");
      r.stats = {j.at("gamma"), j.at("rho"), j.at("drift"), j.at("q")};
      r.tsmr = j.at("tsmr");
      if (!j.at("auer").is_null()) r.auer = j.at("auer").get<double>();
      r.loss = j.at("loss");
      r.objective = j.at("objective");
      r.prediction = label(j.at("pred"));
      r.label = label(j.at("label"));
      r.n_used = j.at("n_used");
      r.budget = j.at("budget");
      r.noise = std::stoull(j.at("noise").get<std::string>(), nullptr, 16);
      r.wall_us = j.at("wall_us");
      tr.frames.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), n);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), n);
    }
  }
  if (n == 0) throw ParseError("empty trace", 1);
  return tr;
}

inline EpisodeTrace load_trace(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open trace " + path);
  return read_trace(is);
}

// ---- replay audit ------------------------------------------------------------------

struct ReplayReport {
  bool ok = true;
  std::size_t frames = 0;
  std::vector<std::string> problems;
};

// Recomputes every decision from the logged statistics and parameters and
// checks the frame count and the per-frame budget.
inline ReplayReport replay_trace(const EpisodeTrace& tr) {
  ReplayReport rep;
  rep.frames = tr.frames.size();
  auto fail = [&](std::string msg) {
    rep.ok = false;
    rep.problems.push_back(std::move(msg));
  };
  if (static_cast<int>(tr.frames.size()) != tr.header.frames)
    fail("frame count " + std::to_string(tr.frames.size()) + " != header " + std::to_string(tr.header.frames));
  const ModeController ctrl{tr.header.controller, tr.header.params};
  SyncMode expect = ctrl.initial_mode();
  for (std::size_t t = 0; t < tr.frames.size(); ++t) {
    const auto& f = tr.frames[t];
    if (f.t != static_cast<int>(t)) fail("frame " + std::to_string(t) + " has index " + std::to_string(f.t));
    if (f.mode != expect)
      fail("frame " + std::to_string(t) + ": logged mode " + std::string(to_string(f.mode)) + ", replay gives " +
           std::string(to_string(expect)));
    if (f.budget != tr.header.budgets.budget(f.mode)) fail("frame " + std::to_string(t) + ": budget mismatch");
    if (f.n_used > f.budget) fail("frame " + std::to_string(t) + ": N_used exceeds budget");
    expect = ctrl.next_mode(f.stats);
  }
  return rep;
}

// Re-runs the logged episode from the artifacts and compares every
// deterministic field of every frame.
inline ReplayReport rerun_audit(const ArtifactBundle& b, const ExperimentConfig& cfg, const EpisodeTrace& tr) {
  ReplayReport rep = replay_trace(tr);
  if (tr.header.config_hash != b.config_hash)
    throw ArtifactMismatchError("trace was produced under config " + hex64(tr.header.config_hash));
  SceneConfig sc = cfg.scene;
  sc.seed = tr.header.scene_seed;
  const auto ep = generate_episode(sc, static_cast<int>(tr.frames.size()));
  std::vector<double> snr;
  for (auto& f : tr.frames) snr.push_back(f.snr_db);
  const auto again = run_episode(b, cfg, method_spec(tr.header.method), ep, tr.header.channel, snr,
                                 tr.header.cell_seed, 0, tr.header.controller);
  for (std::size_t t = 0; t < tr.frames.size(); ++t) {
    const auto& x = tr.frames[t];
    const auto& y = again.frames[t];
    if (x.mode != y.mode || !(x.stats == y.stats) || x.tsmr != y.tsmr || x.auer != y.auer || x.loss != y.loss ||
        !(x.prediction == y.prediction) || !(x.label == y.label) || x.n_used != y.n_used || x.noise != y.noise) {
      rep.ok = false;
      rep.problems.push_back("frame " + std::to_string(t) + " differs on re-run");
    }
  }
  return rep;
}

}  // namespace twist
