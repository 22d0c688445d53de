#pragma once

// Offline preparation: head, completion statistics, utilities, grouping,
// error-rate table, per-mode protection, per-mode thresholds and controller
// parameters, persisted as one artifact directory.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/harness/config.hpp"
#include "twist/harness/pipeline.hpp"

namespace twist {

// ---- data splits -------------------------------------------------------------------

inline std::vector<std::vector<LabeledFrame>> make_split(const ExperimentConfig& cfg, SeedTag tag,
                                                         int episodes, int frames) {
  std::vector<std::vector<LabeledFrame>> out;
  for (int e = 0; e < episodes; ++e) {
    SceneConfig sc = cfg.scene;
    sc.seed = derive_seed(cfg.seed, {tag, static_cast<std::uint64_t>(e)});
    out.push_back(generate_episode(sc, frames));
  }
  return out;
}

inline std::vector<LabeledFrame> flatten(const std::vector<std::vector<LabeledFrame>>& eps) {
  std::vector<LabeledFrame> out;
  for (auto& e : eps) out.insert(out.end(), e.begin(), e.end());
  return out;
}

// Channel report for the controller's gamma input.
inline double channel_report_db(const ExperimentConfig& cfg, double snr_db, Complex h) {
  if (cfg.gamma_source == GammaSource::Nominal) return snr_db;
  const double g = std::norm(h);
  return g > 0.0 ? snr_db + 10.0 * std::log10(g) : cfg.gamma_range.min_db;
}

// ---- cached closed loop ----------------------------------------------------------------

// Soft frames for every mode of one episode under one channel. Every mode
// shares the per-frame stream seed, so fading and noise are common.
struct CachedRun {
  const std::vector<LabeledFrame>* frames = nullptr;
  std::vector<double> gamma_db;
  std::vector<std::array<SoftTokenFrame, 3>> soft;
};

inline CachedRun cache_run(const std::vector<LabeledFrame>& frames, const ArtifactBundle& b,
                           const ModeProtection& prot, const ExperimentConfig& cfg,
                           const ChannelConfig& ch, std::uint64_t run_seed) {
  CachedRun run;
  run.frames = &frames;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto stream = derive_seed(run_seed, {t});
    std::array<SoftTokenFrame, 3> per_mode;
    Complex h{1.0, 0.0};
    for (auto m : kAllModes) {
      auto r = phy_roundtrip(frames[t].grid, b.groups, prot.profiles[index_of(m)], b.alphabet, ch, stream);
      h = r.rx.h;
      per_mode[index_of(m)] = strip_bit_posteriors(std::move(r.soft));
    }
    run.gamma_db.push_back(channel_report_db(cfg, ch.snr_db, h));
    run.soft.push_back(std::move(per_mode));
  }
  return run;
}

// Mean app loss of a fixed mode with thresholds tau over the cached runs.
inline double threshold_objective(std::span<const CachedRun> runs, SyncMode mode,
                                  std::span<const double> tau, const ArtifactBundle& b,
                                  const ExperimentConfig& cfg) {
  double total = 0.0;
  std::size_t n = 0;
  for (auto& run : runs) {
    std::optional<TokenGrid> prev;
    for (std::size_t t = 0; t < run.frames->size(); ++t) {
      auto e = twin_update(run.soft[t][index_of(mode)], (*run.frames)[t], tau, prev ? &*prev : nullptr, b, {},
                           run.gamma_db[t], cfg.gamma_range);
      total += e.loss;
      ++n;
      prev = std::move(e.twin);
    }
  }
  return total / static_cast<double>(n);
}

// Closed-loop objective and mean normalized cost of one controller.
inline CandidateScore closed_loop_score(std::span<const CachedRun> runs, const ModeController& ctrl,
                                        const ModeProtection& prot, const ArtifactBundle& b,
                                        const ExperimentConfig& cfg) {
  double obj = 0.0, cost = 0.0;
  std::size_t n = 0;
  for (auto& run : runs) {
    std::optional<TokenGrid> prev;
    SyncMode mode = ctrl.initial_mode();
    for (std::size_t t = 0; t < run.frames->size(); ++t) {
      const auto& src = (*run.frames)[t];
      auto e = twin_update(run.soft[t][index_of(mode)], src, prot.profiles[index_of(mode)].thresholds,
                           prev ? &*prev : nullptr, b, {}, run.gamma_db[t], cfg.gamma_range);
      obj += frame_objective(e, src.priority, mode, cfg);
      cost += cfg.budgets.normalized_cost(mode);
      ++n;
      mode = ctrl.next_mode(e.stats);
      prev = std::move(e.twin);
    }
  }
  return {obj / static_cast<double>(n), cost / static_cast<double>(n)};
}

// Scores of many candidates of one controller kind. Candidates that have
// chosen the same modes so far share a twin state, so each run is simulated
// once per distinct mode history; a branch splits when its members disagree
// on the next mode. Per-candidate sums accumulate in frame order, matching
// closed_loop_score exactly.
inline std::vector<CandidateScore> closed_loop_scores(std::span<const CachedRun> runs, ControllerKind kind,
                                                      std::span<const ControllerParams> cands,
                                                      const ModeProtection& prot, const ArtifactBundle& b,
                                                      const ExperimentConfig& cfg) {
  std::vector<double> obj(cands.size(), 0.0), cost(cands.size(), 0.0);
  std::size_t n = 0;
  struct Branch {
    std::vector<std::size_t> members;
    std::optional<TokenGrid> prev;
    SyncMode mode;
  };
  const SyncMode first = ModeController{kind, {}}.initial_mode();
  std::vector<std::size_t> all(cands.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (auto& run : runs) {
    std::vector<Branch> live;
    live.push_back({all, std::nullopt, first});
    for (std::size_t t = 0; t < run.frames->size(); ++t) {
      const auto& src = (*run.frames)[t];
      std::vector<Branch> next;
      for (auto& br : live) {
        const auto& thr = prot.profiles[index_of(br.mode)].thresholds;
        auto e = twin_update(run.soft[t][index_of(br.mode)], src, thr, br.prev ? &*br.prev : nullptr, b, {},
                             run.gamma_db[t], cfg.gamma_range);
        const double fo = frame_objective(e, src.priority, br.mode, cfg);
        const double c = cfg.budgets.normalized_cost(br.mode);
        std::array<std::vector<std::size_t>, 3> split;
        for (auto i : br.members) {
          obj[i] += fo;
          cost[i] += c;
          split[index_of(ModeController{kind, cands[i]}.next_mode(e.stats))].push_back(i);
        }
        for (auto m : kAllModes)
          if (!split[index_of(m)].empty()) next.push_back({std::move(split[index_of(m)]), e.twin, m});
      }
      live = std::move(next);
      ++n;
    }
  }
  std::vector<CandidateScore> out(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i)
    out[i] = {obj[i] / static_cast<double>(n), cost[i] / static_cast<double>(n)};
  return out;
}

inline std::vector<CachedRun> validation_runs(const std::vector<std::vector<LabeledFrame>>& episodes,
                                              const ArtifactBundle& b, const ExperimentConfig& cfg) {
  std::vector<CachedRun> runs;
  for (auto kind : cfg.validation_channels)
    for (std::size_t s = 0; s < cfg.validation_snrs.size(); ++s)
      for (std::size_t e = 0; e < episodes.size(); ++e) {
        const ChannelConfig ch{kind, cfg.validation_snrs[s]};
        const auto seed = derive_seed(cfg.seed, {kTagValidChannel, static_cast<std::uint64_t>(kind), s, e});
        runs.push_back(cache_run(episodes[e], b, b.twist, cfg, ch, seed));
      }
  return runs;
}

// ---- persistence ---------------------------------------------------------------------

inline const std::vector<std::string>& artifact_files() {
  static const std::vector<std::string> files{"head.json",         "utility.json",    "groups.json",
                                              "eps_table.json",    "mode_profiles.json", "controller.json",
                                              "completion.bin"};
  return files;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw ArtifactMismatchError("missing artifact " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& data) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << data;
}

namespace detail {

inline nlohmann::json profiles_json(const ModeProtection& mp, const std::array<double, 3>& calib) {
  nlohmann::json arr = nlohmann::json::array();
  for (auto m : kAllModes) {
    auto j = to_json(mp.profiles[index_of(m)]);
    j["uep_objective"] = mp.objective[index_of(m)];
    j["calibration_loss"] = calib[index_of(m)];
    arr.push_back(j);
  }
  return arr;
}

inline void profiles_from_json(const nlohmann::json& arr, ModeProtection& mp, std::array<double, 3>& calib) {
  if (!arr.is_array() || arr.size() != 3) throw ArtifactMismatchError("mode profile artifact needs 3 modes");
  for (auto& j : arr) {
    auto p = mode_profile_from_json(j);
    const int i = index_of(p.mode);
    mp.objective[i] = j.at("uep_objective").get<double>();
    calib[i] = j.at("calibration_loss").get<double>();
    mp.profiles[i] = std::move(p);
  }
}

inline nlohmann::json score_json(const ControllerParams& p, const CandidateScore& s) {
  auto j = to_json(p);
  j["objective"] = s.objective;
  j["mean_cost"] = s.mean_cost;
  return j;
}

}  // namespace detail

// Writes the bundle to a fresh sibling directory and swaps it in, so a
// failure never leaves a half-written artifact set behind.
inline void save_bundle(const ArtifactBundle& b, const ExperimentConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path final_dir(dir);
  const fs::path tmp = final_dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  const auto hash = hex64(b.config_hash);
  auto dump = [](const nlohmann::json& j) { return j.dump(1) + "\n"; };

  write_file(tmp / "head.json", dump({{"config_hash", hash},
                                      {"epochs_run", b.head_epochs},
                                      {"final_loss", b.head_loss},
                                      {"head", to_json(b.head)}}));
  write_file(tmp / "utility.json", dump({{"config_hash", hash},
                                         {"seed", cfg.seed},
                                         {"calibration_frames", b.utility.calibration_frames},
                                         {"mean", b.utility.mean}}));
  write_file(tmp / "groups.json", dump({{"config_hash", hash}, {"seed", cfg.seed}, {"groups", to_json(b.groups)}}));
  const std::string eps = dump({{"config_hash", hash}, {"table", to_json(b.eps)}});
  write_file(tmp / "eps_table.json", eps);
  write_file(tmp / "mode_profiles.json", dump({{"config_hash", hash},
                                               {"eps_hash", hex64(fnv1a64(eps))},
                                               {"twist", detail::profiles_json(b.twist, b.twist_calib_loss)},
                                               {"uniform", detail::profiles_json(b.uniform, b.uniform_calib_loss)}}));
  write_file(tmp / "controller.json",
             dump({{"config_hash", hash},
                   {"twist", detail::score_json(b.controller, b.controller_score)},
                   {"channel_adaptive", detail::score_json(b.channel_adaptive, b.channel_adaptive_score)}}));
  save_completion((tmp / "completion.bin").string(), b.completion);

  nlohmann::json files = nlohmann::json::object();
  for (auto& f : artifact_files()) files[f] = hex64(fnv1a64(read_file(tmp / f)));
  write_file(tmp / "manifest.json", dump({{"config_hash", hash}, {"files", files}}));

  fs::remove_all(final_dir);
  if (final_dir.has_parent_path()) fs::create_directories(final_dir.parent_path());
  fs::rename(tmp, final_dir);
}

inline std::optional<std::uint64_t> stored_config_hash(const std::string& dir) {
  const auto p = std::filesystem::path(dir) / "manifest.json";
  if (!std::filesystem::exists(p)) return std::nullopt;
  try {
    return std::stoull(nlohmann::json::parse(read_file(p)).at("config_hash").get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Hash of the whole artifact set (the manifest lists every file hash).
inline std::uint64_t bundle_hash(const std::string& dir) {
  return fnv1a64(read_file(std::filesystem::path(dir) / "manifest.json"));
}

// Loads a bundle and checks it was built from this configuration.
inline ArtifactBundle load_bundle(const ExperimentConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  const auto want = artifact_hash(cfg);
  if (!fs::exists(d / "manifest.json"))
    throw ArtifactMismatchError("no artifacts in " + dir + "; run `offline` first");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(d / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactMismatchError(std::string("unreadable artifact manifest: ") + e.what());
  }
  if (manifest.value("config_hash", std::string()) != hex64(want))
    throw ArtifactMismatchError("artifacts in " + dir + " were built for config " +
                                manifest.value("config_hash", std::string("?")) + ", current config is " +
                                hex64(want) + "; rerun `offline`");
  for (auto& f : artifact_files())
    if (manifest.at("files").value(f, std::string()) != hex64(fnv1a64(read_file(d / f))))
      throw ArtifactMismatchError("artifact " + f + " does not match its manifest entry");

  ArtifactBundle b;
  b.config_hash = want;
  b.alphabet = cfg.alphabet();
  b.table = EmbeddingTable::build(cfg.scene.codebook_size, cfg.embedding_dim, cfg.embedding_seed);
  try {
    auto head = nlohmann::json::parse(read_file(d / "head.json"));
    b.head = head_from_json(head.at("head"));
    b.head_epochs = head.at("epochs_run");
    b.head_loss = head.at("final_loss");
    auto util = nlohmann::json::parse(read_file(d / "utility.json"));
    b.utility.mean = util.at("mean").get<std::vector<double>>();
    b.utility.calibration_frames = util.at("calibration_frames");
    b.groups = group_map_from_json(nlohmann::json::parse(read_file(d / "groups.json")).at("groups"));
    b.eps = error_table_from_json(nlohmann::json::parse(read_file(d / "eps_table.json")).at("table"));
    auto prof = nlohmann::json::parse(read_file(d / "mode_profiles.json"));
    detail::profiles_from_json(prof.at("twist"), b.twist, b.twist_calib_loss);
    detail::profiles_from_json(prof.at("uniform"), b.uniform, b.uniform_calib_loss);
    auto ctrl = nlohmann::json::parse(read_file(d / "controller.json"));
    b.controller = controller_params_from_json(ctrl.at("twist"));
    b.controller_score = {ctrl["twist"].at("objective"), ctrl["twist"].at("mean_cost")};
    b.channel_adaptive = controller_params_from_json(ctrl.at("channel_adaptive"));
    b.channel_adaptive_score = {ctrl["channel_adaptive"].at("objective"), ctrl["channel_adaptive"].at("mean_cost")};
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactMismatchError(std::string("malformed artifact: ") + e.what());
  }
  b.completion = load_completion((d / "completion.bin").string());
  if (b.groups.positions() != static_cast<std::size_t>(cfg.positions()))
    throw ArtifactMismatchError("group map does not match the grid size");
  return b;
}

// ---- the pipeline ---------------------------------------------------------------------

using Logger = std::function<void(const std::string&)>;

namespace detail {

template <typename Fn>
auto stage(const char* name, const Logger& log, Fn&& fn) {
  if (log) log(std::string("offline: ") + name);
  try {
    return fn();
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(std::string(name) + ": " + e.what(), e.min_required());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

}  // namespace detail

// Builds every artifact in memory; nothing is written.
inline ArtifactBundle build_bundle(const ExperimentConfig& cfg, const Logger& log = {}) {
  cfg.validate();
  ArtifactBundle b;
  b.config_hash = artifact_hash(cfg);
  b.alphabet = cfg.alphabet();
  b.table = EmbeddingTable::build(cfg.scene.codebook_size, cfg.embedding_dim, cfg.embedding_seed);

  const auto train = detail::stage("scenes", log, [&] {
    return make_split(cfg, kTagTrainScene, cfg.train_episodes, cfg.train_frames);
  });
  const auto calib = make_split(cfg, kTagCalibScene, cfg.calibration_episodes, cfg.calibration_frames);
  const auto valid = make_split(cfg, kTagValidScene, cfg.validation_episodes, cfg.validation_frames);

  detail::stage("head", log, [&] {
    const auto frames = flatten(train);
    auto r = train_head(frames, b.table, cfg.region_rows, cfg.region_cols, cfg.head_train);
    b.head = std::move(r.head);
    b.head_epochs = r.epochs_run;
    b.head_loss = r.final_loss;
    return 0;
  });
  detail::stage("completion", log, [&] {
    b.completion = train_completion(train, cfg.scene.codebook_size, cfg.completion, cfg.completion_smoothing,
                                    cfg.persistence_weight);
    b.completion.max_iterations = cfg.vote_iterations;
    return 0;
  });
  detail::stage("utility", log, [&] {
    b.utility = mean_utility_profile(flatten(calib), b.head, b.table);
    b.groups = build_group_map(b.utility, cfg.groups);
    return 0;
  });
  detail::stage("error-profile", log, [&] {
    std::vector<double> snrs{cfg.design_snr_db};
    for (double s : cfg.validation_snrs)
      if (std::find(snrs.begin(), snrs.end(), s) == snrs.end()) snrs.push_back(s);
    b.eps = profile_error_rates(cfg.policies, snrs, cfg.design_channel, b.alphabet, cfg.profile_tokens,
                                derive_seed(cfg.seed, {kTagProfile}));
    return 0;
  });
  detail::stage("protection", log, [&] {
    b.twist = build_mode_profiles(b.groups, b.eps, cfg.policies, cfg.budgets, cfg.design_snr_db, b.alphabet);
    b.uniform = build_uniform_profiles(b.groups, b.eps, cfg.policies, cfg.budgets, cfg.design_snr_db, b.alphabet);
    return 0;
  });
  detail::stage("thresholds", log, [&] {
    const ChannelConfig ch{cfg.design_channel, cfg.design_snr_db};
    for (auto* set : {&b.twist, &b.uniform}) {
      std::vector<CachedRun> runs;
      for (std::size_t e = 0; e < calib.size(); ++e)
        runs.push_back(cache_run(calib[e], b, *set, cfg, ch, derive_seed(cfg.seed, {kTagCalibChannel, e})));
      auto& losses = set == &b.twist ? b.twist_calib_loss : b.uniform_calib_loss;
      for (auto m : kAllModes) {
        auto res = calibrate_thresholds(
            cfg.groups, cfg.threshold_grid,
            [&](std::span<const double> tau) { return threshold_objective(runs, m, tau, b, cfg); },
            cfg.max_threshold_cycles);
        set->profiles[index_of(m)].thresholds = res.thresholds;
        losses[index_of(m)] = res.objective;
      }
    }
    return 0;
  });
  detail::stage("controller", log, [&] {
    const auto runs = validation_runs(valid, b, cfg);
    auto evaluate = [&](ControllerKind kind) {
      return [&, kind](std::span<const ControllerParams> cands) {
        return closed_loop_scores(runs, kind, cands, b.twist, b, cfg);
      };
    };
    const auto grid = cfg.controller_grid.candidates();
    auto full = calibrate_controller(grid, evaluate(ControllerKind::Full));
    b.controller = full.params;
    b.controller_score = full.score;
    const auto cuts = channel_adaptive_candidates(cfg.channel_cuts);
    auto ca = calibrate_controller(cuts, evaluate(ControllerKind::ChannelOnly));
    b.channel_adaptive = ca.params;
    b.channel_adaptive_score = ca.score;
    return 0;
  });
  return b;
}

// Loads the cached bundle when it matches the configuration, otherwise
// rebuilds and persists it.
inline ArtifactBundle run_offline(const ExperimentConfig& cfg, const Logger& log = {}, bool force = false) {
  const auto want = artifact_hash(cfg);
  if (!force && stored_config_hash(cfg.artifacts_dir) == want) {
    if (log) log("offline: artifacts up to date (" + hex64(want) + ")");
    return load_bundle(cfg, cfg.artifacts_dir);
  }
  auto b = build_bundle(cfg, log);
  detail::stage("persist", log, [&] {
    save_bundle(b, cfg, cfg.artifacts_dir);
    return 0;
  });
  return b;
}

}  // namespace twist
