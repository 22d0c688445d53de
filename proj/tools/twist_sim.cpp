// twist-sim: command-line front end for the simulator.
//
// Exit codes: 0 success, 1 other failure (including a failed audit),
// 2 configuration error, 3 infeasible budget, 4 stale or mismatched artifacts.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "twist/twist.hpp"

namespace fs = std::filesystem;
using namespace twist;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::string artifacts;
  std::string out;
  bool quiet = false;

  ExperimentConfig load() const {
    auto overrides = set;
    if (!artifacts.empty()) overrides.push_back("artifacts_dir=\"" + artifacts + "\"");
    if (!out.empty()) overrides.push_back("output_dir=\"" + out + "\"");
    return load_config(config, overrides);
  }

  Logger logger() const {
    if (quiet) return {};
    return [](const std::string& s) { std::cerr << s << '\n'; };
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON config file (defaults apply when omitted)");
  app->add_option("--set", c.set, "Override a config value, e.g. --set evaluation.frames=50")->take_all();
  app->add_option("--artifacts", c.artifacts, "Artifact directory");
  app->add_option("--out", c.out, "Output directory or file");
  app->add_flag("-q,--quiet", c.quiet, "Suppress progress messages");
}

nlohmann::json summary_json(const EpisodeSummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"macro_f1", s.f1.macro},
          {"f1_car", s.f1.car},
          {"f1_ped", s.f1.ped},
          {"f1_density", s.f1.density},
          {"urgent_f1", opt(s.urgent_f1)},
          {"tsmr", s.tsmr},
          {"auer", opt(s.auer)},
          {"rho", s.rho},
          {"cost", s.cost},
          {"mode_fraction", s.mode_fraction}};
}

void make_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::vector<std::string> collect_traces(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path().string());
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TWIST closed-loop token synchronization simulator"};
  app.require_subcommand(1);

  Common gen_c, prof_c, off_c, run_c, grid_c, rep_c, report_c;

  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic scene episode as JSONL");
  add_common(gen, gen_c);
  int gen_frames = 100;
  std::uint64_t gen_seed = 1;
  gen->add_option("--frames", gen_frames, "Number of frames")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Scene seed");

  auto* prof = app.add_subcommand("profile-phy", "Profile token error rates per policy and SNR");
  add_common(prof, prof_c);
  std::vector<double> prof_snrs{0, 4, 8, 12, 16, 20};
  long long prof_trials = 100000;
  std::string prof_channel = "awgn";
  prof->add_option("--snr-list", prof_snrs, "Comma-separated SNRs in dB")->delimiter(',');
  prof->add_option("--trials", prof_trials, "Tokens per (policy, SNR) point")->check(CLI::PositiveNumber);
  prof->add_option("--channel", prof_channel, "awgn or rayleigh");

  auto* off = app.add_subcommand("offline", "Build (or load cached) offline artifacts");
  add_common(off, off_c);
  bool off_force = false;
  off->add_flag("--force", off_force, "Rebuild even when the cache matches");

  auto* run = app.add_subcommand("run", "Run one closed-loop episode and write its trace");
  add_common(run, run_c);
  std::string run_method = "twist", run_channel = "rayleigh", run_controller;
  double run_snr = 10.0;
  std::uint64_t run_seed = 1;
  int run_frames = 0;
  run->add_option("--method", run_method, "Method name");
  run->add_option("--controller", run_controller,
                  "Controller override: full|no-gamma|no-rho|no-drift|no-q|channel-only|static-low|static-med|static-high");
  run->add_option("--channel", run_channel, "awgn or rayleigh");
  run->add_option("--snr", run_snr, "Nominal SNR in dB");
  run->add_option("--seed", run_seed, "Episode seed");
  run->add_option("--frames", run_frames, "Frames (default from config)");

  auto* grid = app.add_subcommand("grid", "Run the full method x channel x SNR x seed sweep");
  add_common(grid, grid_c);
  int grid_jobs = 1;
  bool grid_no_traces = false;
  grid->add_option("-j,--jobs", grid_jobs, "Worker threads")->check(CLI::PositiveNumber);
  grid->add_flag("--no-traces", grid_no_traces, "Do not write per-cell traces");

  auto* rep = app.add_subcommand("replay", "Audit logged traces for causality and determinism");
  add_common(rep, rep_c);
  std::vector<std::string> rep_inputs;
  bool rep_rerun = false;
  rep->add_option("traces", rep_inputs, "Trace files or directories")->required();
  rep->add_flag("--rerun", rep_rerun, "Also re-run each episode from the artifacts and compare");

  auto* report = app.add_subcommand("report", "Rebuild summary and figure CSVs from cells.csv");
  add_common(report, report_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      auto cfg = gen_c.load();
      cfg.scene.seed = gen_seed;
      const auto ep = generate_episode(cfg.scene, gen_frames);
      if (gen_c.out.empty()) write_episode(std::cout, ep);
      else {
        make_parent(gen_c.out);
        save_episode(gen_c.out, ep);
      }
      return 0;
    }
    if (*prof) {
      auto cfg = prof_c.load();
      const auto kind = parse_channel(prof_channel);
      const auto tab = profile_error_rates(cfg.policies, prof_snrs, kind, cfg.alphabet(), prof_trials,
                                           derive_seed(cfg.seed, {kTagProfile}));
      std::vector<int> reps;
      for (auto& p : cfg.policies) reps.push_back(p.repetition);
      const nlohmann::json j{{"config_hash", hex64(artifact_hash(cfg))},
                             {"snr_db", prof_snrs},
                             {"policies", reps},
                             {"table", to_json(tab)}};
      const std::string path = prof_c.out.empty() ? (fs::path(cfg.artifacts_dir) / "eps_cache.json").string()
                                                  : prof_c.out;
      make_parent(path);
      std::ofstream(path) << j.dump(1) << '\n';
      std::cout << path << '\n';
      return 0;
    }
    if (*off) {
      auto cfg = off_c.load();
      const auto b = run_offline(cfg, off_c.logger(), off_force);
      std::cout << "artifacts " << cfg.artifacts_dir << " config " << hex64(b.config_hash) << " bundle "
                << hex64(bundle_hash(cfg.artifacts_dir)) << '\n';
      return 0;
    }
    if (*run) {
      auto cfg = run_c.load();
      const auto b = load_bundle(cfg, cfg.artifacts_dir);
      const int T = run_frames > 0 ? run_frames : cfg.frames;
      const auto ep = test_episode(cfg, run_seed, T);
      const auto kind = parse_channel(run_channel);
      const std::vector<double> snr(ep.size(), run_snr);
      std::optional<ControllerKind> ctrl;
      if (!run_controller.empty()) ctrl = parse_controller(run_controller);
      auto tr = run_episode(b, cfg, method_spec(run_method), ep, kind, snr,
                            derive_seed(cfg.seed, {kTagCell, static_cast<std::uint64_t>(kind), run_seed}),
                            bundle_hash(cfg.artifacts_dir), ctrl);
      tr.header.seed = run_seed;
      tr.header.scene_seed = derive_seed(cfg.seed, {kTagTestScene, run_seed});
      const std::string path = run_c.out.empty() ? "trace.jsonl" : run_c.out;
      make_parent(path);
      save_trace(path, tr);
      std::cout << summary_json(summarize(tr)).dump(1) << '\n';
      return 0;
    }
    if (*grid) {
      auto cfg = grid_c.load();
      const auto b = load_bundle(cfg, cfg.artifacts_dir);
      GridOptions opt;
      opt.jobs = grid_jobs;
      opt.write_traces = !grid_no_traces;
      opt.log = grid_c.logger();
      const auto res = run_grid(b, cfg, opt);
      const auto temporal = run_temporal(b, cfg, temporal_methods(cfg));
      std::ofstream os(fs::path(cfg.output_dir) / "fig5_temporal.csv");
      write_temporal(os, temporal, cfg.rolling_window);
      std::cout << res.cells.size() << " cells written to " << cfg.output_dir << "; replay failures "
                << res.replay_failures << '\n';
      return res.replay_failures ? 1 : 0;
    }
    if (*rep) {
      const auto files = collect_traces(rep_inputs);
      if (files.empty()) throw ConfigError("no traces found");
      std::optional<ExperimentConfig> cfg;
      std::optional<ArtifactBundle> b;
      if (rep_rerun) {
        cfg = rep_c.load();
        b = load_bundle(*cfg, cfg->artifacts_dir);
      }
      std::size_t bad = 0;
      for (auto& f : files) {
        const auto tr = load_trace(f);
        const auto r = rep_rerun ? rerun_audit(*b, *cfg, tr) : replay_trace(tr);
        if (!r.ok) {
          ++bad;
          std::cout << "FAIL " << f << '\n';
          for (auto& p : r.problems) std::cout << "  " << p << '\n';
        }
      }
      std::cout << files.size() - bad << "/" << files.size() << " traces pass\n";
      return bad ? 1 : 0;
    }
    if (*report) {
      auto cfg = report_c.load();
      const auto rows = write_report(cfg.output_dir);
      std::cout << rows.size() << " summary rows written to " << cfg.output_dir << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << " (minimum " << e.min_required() << ")\n";
    return 3;
  } catch (const ArtifactMismatchError& e) {
    std::cerr << "artifact mismatch: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
