#pragma once

// Experiment grid: method x channel x SNR x seed cells run on a work queue,
// per-cell metric rows, seed-aggregated tables and figure-shaped CSVs.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "twist/harness/episode.hpp"
#include "twist/harness/offline.hpp"

namespace twist {

inline const std::vector<std::string>& cell_metric_names() {
  static const std::vector<std::string> names{
      "macro_f1", "f1_car", "f1_ped",    "f1_density", "urgent_f1", "tsmr",     "auer",     "rho",
      "drift",    "cost",   "loss",      "objective",  "frac_low",  "frac_med", "frac_high"};
  return names;
}

inline std::vector<std::optional<double>> cell_metrics(const EpisodeSummary& s) {
  return {s.f1.macro, s.f1.car,  s.f1.ped,      s.f1.density,  s.urgent_f1,       s.tsmr,
          s.auer,     s.rho,     s.drift,       s.cost,        s.loss,            s.objective,
          s.mode_fraction[0],    s.mode_fraction[1],  s.mode_fraction[2]};
}

struct CellRow {
  std::string method;
  ChannelKind channel = ChannelKind::Awgn;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::optional<double>> values;  // cell_metric_names() order
  std::uint64_t noise_hash = 0;

  std::optional<double> metric(std::string_view name) const {
    const auto& n = cell_metric_names();
    const auto it = std::find(n.begin(), n.end(), name);
    if (it == n.end()) throw ConfigError("unknown metric '" + std::string(name) + "'");
    return values.at(static_cast<std::size_t>(it - n.begin()));
  }
};

// ---- formatting ------------------------------------------------------------------

inline std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline void write_cells(std::ostream& os, const std::vector<CellRow>& rows) {
  os << "method,channel,snr_db,seed";
  for (auto& m : cell_metric_names()) os << ',' << m;
  os << ",noise_hash\n";
  for (auto& r : rows) {
    os << r.method << ',' << to_string(r.channel) << ',' << fmt(r.snr_db) << ',' << r.seed;
    for (auto& v : r.values) os << ',' << fmt(v);
    os << ',' << hex64(r.noise_hash) << '\n';
  }
}

inline std::vector<CellRow> read_cells(std::istream& is) {
  std::vector<CellRow> rows;
  std::string line;
  std::size_t n = 0;
  const std::size_t want = 5 + cell_metric_names().size();
  while (std::getline(is, line)) {
    if (++n == 1 || line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != want) throw ParseError("expected " + std::to_string(want) + " fields", n);
    try {
      CellRow r;
      r.method = f[0];
      r.channel = parse_channel(f[1]);
      r.snr_db = std::stod(f[2]);
      r.seed = std::stoull(f[3]);
      for (std::size_t k = 0; k < cell_metric_names().size(); ++k)
        r.values.push_back(f[4 + k].empty() ? std::nullopt : std::optional<double>(std::stod(f[4 + k])));
      r.noise_hash = std::stoull(f.back(), nullptr, 16);
      rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw ParseError(e.what(), n);
    }
  }
  return rows;
}

// ---- aggregation -----------------------------------------------------------------

struct SummaryRow {
  std::string method;
  ChannelKind channel = ChannelKind::Awgn;
  double snr_db = 0.0;
  std::size_t seeds = 0;
  std::vector<MeanStd> stats;  // cell_metric_names() order; n counts defined values

  const MeanStd& metric(std::string_view name) const {
    const auto& n = cell_metric_names();
    const auto it = std::find(n.begin(), n.end(), name);
    if (it == n.end()) throw ConfigError("unknown metric '" + std::string(name) + "'");
    return stats.at(static_cast<std::size_t>(it - n.begin()));
  }
};

// Rows keep the first-seen order of (method, channel, SNR).
inline std::vector<SummaryRow> aggregate(const std::vector<CellRow>& cells) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<std::vector<double>>> values;
  for (auto& c : cells) {
    std::size_t i = 0;
    while (i < out.size() &&
           !(out[i].method == c.method && out[i].channel == c.channel && out[i].snr_db == c.snr_db))
      ++i;
    if (i == out.size()) {
      out.push_back({c.method, c.channel, c.snr_db, 0, {}});
      values.emplace_back(cell_metric_names().size());
    }
    ++out[i].seeds;
    for (std::size_t k = 0; k < c.values.size(); ++k)
      if (c.values[k]) values[i][k].push_back(*c.values[k]);
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (auto& v : values[i]) out[i].stats.push_back(mean_std(v));
  return out;
}

inline void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "method,channel,snr_db,seeds";
  for (auto& m : cell_metric_names()) os << ',' << m << "_mean," << m << "_std";
  os << '\n';
  for (auto& r : rows) {
    os << r.method << ',' << to_string(r.channel) << ',' << fmt(r.snr_db) << ',' << r.seeds;
    for (auto& s : r.stats) {
      if (s.n) os << ',' << fmt(s.mean, "%.6f") << ',' << fmt(s.std, "%.6f");
      else os << ",,";
    }
    os << '\n';
  }
}

struct FigureSpec {
  std::string file;
  std::vector<std::string> methods;
  std::vector<std::string> metrics;
};

inline std::vector<FigureSpec> figure_specs() {
  return {
      {"fig4_main.csv",
       {"twist", "static-low", "static-med", "static-high", "channel-adaptive"},
       {"macro_f1", "cost"}},
      {"fig7_diagnostics.csv",
       {"twist", "static-low", "static-med", "static-high", "channel-adaptive", "uniform", "no-gating",
        "no-completion", "hard-only"},
       {"tsmr", "auer", "rho"}},
      {"fig8_ablation.csv",
       {"twist", "no-gamma", "no-rho", "no-drift", "no-q", "uniform", "no-gating", "no-completion", "hard-only"},
       {"macro_f1", "cost", "tsmr"}},
      {"fig9_urgent.csv",
       {"twist", "static-low", "static-med", "static-high", "channel-adaptive", "no-gamma", "no-rho", "no-drift",
        "no-q"},
       {"urgent_f1"}},
  };
}

inline void write_figure(std::ostream& os, const FigureSpec& spec, const std::vector<SummaryRow>& rows) {
  os << "method,channel,snr_db,seeds";
  for (auto& m : spec.metrics) os << ',' << m << "_mean," << m << "_std";
  os << '\n';
  for (auto& r : rows) {
    if (std::find(spec.methods.begin(), spec.methods.end(), r.method) == spec.methods.end()) continue;
    os << r.method << ',' << to_string(r.channel) << ',' << fmt(r.snr_db) << ',' << r.seeds;
    for (auto& m : spec.metrics) {
      const auto& s = r.metric(m);
      if (s.n) os << ',' << fmt(s.mean, "%.6f") << ',' << fmt(s.std, "%.6f");
      else os << ",,";
    }
    os << '\n';
  }
}

// Rebuilds summary.csv and the per-figure tables from cells.csv.
inline std::vector<SummaryRow> write_report(const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(out_dir) / "cells.csv");
  if (!is) throw ConfigError("no cells.csv in " + out_dir + "; run `grid` first");
  const auto rows = aggregate(read_cells(is));
  std::ofstream sum(fs::path(out_dir) / "summary.csv");
  write_summary(sum, rows);
  for (auto& spec : figure_specs()) {
    std::ofstream os(fs::path(out_dir) / spec.file);
    write_figure(os, spec, rows);
  }
  return rows;
}

// ---- the grid -------------------------------------------------------------------

inline std::vector<LabeledFrame> test_episode(const ExperimentConfig& cfg, std::uint64_t seed, int frames) {
  SceneConfig sc = cfg.scene;
  sc.seed = derive_seed(cfg.seed, {kTagTestScene, seed});
  return generate_episode(sc, frames);
}

// Same stream for every method of a (channel, SNR, seed) cell.
inline std::uint64_t cell_seed(const ExperimentConfig& cfg, ChannelKind ch, std::size_t snr_index,
                               std::uint64_t seed) {
  return derive_seed(cfg.seed, {kTagCell, static_cast<std::uint64_t>(ch), snr_index, seed});
}

struct GridOptions {
  int jobs = 1;
  bool write_traces = true;
  Logger log;
};

struct GridResult {
  std::vector<CellRow> cells;
  std::vector<SummaryRow> summary;
  std::size_t replay_failures = 0;
};

// Runs every cell, writes cells.csv, summary.csv, the figure tables and
// (optionally) one trace per cell under traces/.
inline GridResult run_grid(const ArtifactBundle& b, const ExperimentConfig& cfg, const GridOptions& opt = {}) {
  namespace fs = std::filesystem;
  for (auto& m : cfg.methods) (void)method_spec(m);
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  if (opt.write_traces) fs::create_directories(out / "traces");
  const std::uint64_t bhash =
      fs::exists(fs::path(cfg.artifacts_dir) / "manifest.json") ? bundle_hash(cfg.artifacts_dir) : 0;

  std::map<std::uint64_t, std::vector<LabeledFrame>> episodes;
  for (auto s : cfg.seeds) episodes[s] = test_episode(cfg, s, cfg.frames);

  struct Job {
    std::string method;
    ChannelKind channel;
    std::size_t snr_index;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto& m : cfg.methods)
    for (auto ch : cfg.channels)
      for (std::size_t si = 0; si < cfg.snr_sweep.size(); ++si)
        for (auto s : cfg.seeds) jobs.push_back({m, ch, si, s});

  GridResult res;
  res.cells.resize(jobs.size());
  std::vector<char> replay_ok(jobs.size(), 1);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure) return;
      }
      try {
        const auto& j = jobs[i];
        const auto& ep = episodes.at(j.seed);
        const std::vector<double> snr(ep.size(), cfg.snr_sweep[j.snr_index]);
        auto tr = run_episode(b, cfg, method_spec(j.method), ep, j.channel, snr,
                              cell_seed(cfg, j.channel, j.snr_index, j.seed), bhash);
        tr.header.seed = j.seed;
        tr.header.scene_seed = derive_seed(cfg.seed, {kTagTestScene, j.seed});
        replay_ok[i] = replay_trace(tr).ok;
        const auto s = summarize(tr);
        res.cells[i] = {j.method, j.channel, cfg.snr_sweep[j.snr_index], j.seed, cell_metrics(s), s.noise_hash};
        if (opt.write_traces)
          save_trace((out / "traces" /
                      (j.method + "_" + std::string(to_string(j.channel)) + "_" + fmt(cfg.snr_sweep[j.snr_index]) +
                       "_" + std::to_string(j.seed) + ".jsonl"))
                         .string(),
                     tr);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n = std::max(1, opt.jobs);
  if (opt.log) opt.log("grid: " + std::to_string(jobs.size()) + " cells on " + std::to_string(n) + " job(s)");
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  res.replay_failures = static_cast<std::size_t>(std::count(replay_ok.begin(), replay_ok.end(), 0));

  {
    std::ofstream os(out / "cells.csv");
    write_cells(os, res.cells);
  }
  res.summary = write_report(out.string());
  return res;
}

// ---- temporal panel -------------------------------------------------------------------

struct TemporalResult {
  std::vector<EpisodeTrace> traces;
};

// Piecewise-constant nominal SNR schedule under per-frame Rayleigh draws.
inline TemporalResult run_temporal(const ArtifactBundle& b, const ExperimentConfig& cfg,
                                   const std::vector<std::string>& methods) {
  std::vector<double> snr;
  for (auto& seg : cfg.temporal_schedule)
    for (int k = 0; k < seg.frames; ++k) snr.push_back(seg.snr_db);
  if (snr.empty()) throw ConfigError("temporal schedule is empty");
  SceneConfig sc = cfg.scene;
  sc.seed = derive_seed(cfg.seed, {kTagTemporal, cfg.temporal_seed});
  const auto ep = generate_episode(sc, static_cast<int>(snr.size()));
  const auto seed = derive_seed(cfg.seed, {kTagTemporal, cfg.temporal_seed, 1});
  TemporalResult res;
  for (auto& m : methods) {
    auto tr = run_episode(b, cfg, method_spec(m), ep, ChannelKind::RayleighBlock, snr, seed);
    tr.header.seed = cfg.temporal_seed;
    tr.header.scene_seed = sc.seed;
    res.traces.push_back(std::move(tr));
  }
  return res;
}

inline void write_temporal(std::ostream& os, const TemporalResult& res, int window) {
  os << "method,t,snr_db,mode,cost,gamma,rho,drift,q,tsmr,correct,rolling_correctness\n";
  for (auto& tr : res.traces) {
    std::vector<Label> pred, truth;
    for (auto& f : tr.frames) {
      pred.push_back(f.prediction);
      truth.push_back(f.label);
    }
    const auto roll = rolling_correctness(pred, truth, window);
    for (std::size_t t = 0; t < tr.frames.size(); ++t) {
      const auto& f = tr.frames[t];
      os << tr.header.method << ',' << f.t << ',' << fmt(f.snr_db) << ',' << to_string(f.mode) << ','
         << fmt(tr.header.budgets.normalized_cost(f.mode)) << ',' << fmt(f.stats.gamma, "%.6f") << ','
         << fmt(f.stats.rho, "%.6f") << ',' << fmt(f.stats.drift, "%.6f") << ',' << f.stats.priority << ','
         << fmt(f.tsmr, "%.6f") << ',' << (f.prediction == f.label ? 1 : 0) << ',' << fmt(roll[t], "%.6f")
         << '\n';
    }
  }
}

inline std::vector<std::string> temporal_methods(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const char* m : {"twist", "static-med", "static-high", "channel-adaptive"})
    if (std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end()) out.emplace_back(m);
  return out;
}

}  // namespace twist
