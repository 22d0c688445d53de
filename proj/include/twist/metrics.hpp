#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "twist/core_types.hpp"
#include "twist/phy.hpp"
#include "twist/scene.hpp"
#include "twist/uep.hpp"

namespace twist {

struct F1Scores {
  double car = 0.0;
  double ped = 0.0;
  double density = 0.0;
  double macro = 0.0;
};

// F1 of one class. A class that never occurs and is never predicted scores
// 1; otherwise TP = 0 scores 0.
inline double class_f1(long tp, long fp, long fn) {
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

inline double task_class_f1(std::span<const Label> pred, std::span<const Label> truth, int task, int cls) {
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const bool p = label_component(pred[n], task) == cls;
    const bool t = label_component(truth[n], task) == cls;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  return class_f1(tp, fp, fn);
}

inline F1Scores macro_f1(std::span<const Label> pred, std::span<const Label> truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw ValidationError("macro-F1 needs equally sized, non-empty inputs");
  F1Scores s;
  s.car = task_class_f1(pred, truth, 0, 1);
  s.ped = task_class_f1(pred, truth, 1, 1);
  s.density = (task_class_f1(pred, truth, 2, 0) + task_class_f1(pred, truth, 2, 1) +
               task_class_f1(pred, truth, 2, 2)) / 3.0;
  s.macro = (s.car + s.ped + s.density) / 3.0;
  return s;
}

// Restricted to frames with priority 1; nullopt when there are none.
inline std::optional<F1Scores> urgent_macro_f1(std::span<const Label> pred, std::span<const Label> truth,
                                               std::span<const int> priority) {
  std::vector<Label> p, t;
  for (std::size_t n = 0; n < pred.size(); ++n)
    if (priority[n] == 1) {
      p.push_back(pred[n]);
      t.push_back(truth[n]);
    }
  if (p.empty()) return std::nullopt;
  return macro_f1(p, t);
}

inline double tsmr(const TokenGrid& twin, const TokenGrid& source) {
  if (!twin.same_shape(source)) throw DimensionError("TSMR grids differ in shape");
  std::size_t n = 0;
  for (std::size_t i = 0; i < twin.size(); ++i) n += twin.tokens[i] != source.tokens[i];
  return static_cast<double>(n) / static_cast<double>(twin.size());
}

// Wrong hard tokens among accepted positions; nullopt when nothing was
// accepted (such frames are left out of averages).
inline std::optional<double> auer(std::span<const Token> hard, const GatedTokenGrid& gated,
                                  const TokenGrid& source) {
  if (hard.size() != gated.size() || gated.size() != source.size())
    throw DimensionError("AUER inputs differ in shape");
  std::size_t accepted = 0, wrong = 0;
  for (std::size_t i = 0; i < gated.size(); ++i)
    if (gated.entries[i]) {
      ++accepted;
      wrong += hard[i] != source.tokens[i];
    }
  if (!accepted) return std::nullopt;
  return static_cast<double>(wrong) / static_cast<double>(accepted);
}

inline std::optional<double> auer(const SoftTokenFrame& soft, const GatedTokenGrid& gated,
                                  const TokenGrid& source) {
  return auer(soft.hard, gated, source);
}

inline double normalized_cost(std::span<const SyncMode> modes, const ModeBudgets& budgets) {
  if (modes.empty()) throw ValidationError("normalized cost needs at least one frame");
  double s = 0.0;
  for (auto m : modes) s += budgets.normalized_cost(m);
  return s / static_cast<double>(modes.size());
}

// Exact-match rate of the full label triple over a trailing window.
inline std::vector<double> rolling_correctness(std::span<const Label> pred, std::span<const Label> truth,
                                               int window = 20) {
  std::vector<double> out(pred.size());
  int hits = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    hits += pred[n] == truth[n];
    if (n >= static_cast<std::size_t>(window)) hits -= pred[n - window] == truth[n - window];
    out[n] = static_cast<double>(hits) / static_cast<double>(std::min<std::size_t>(n + 1, window));
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one value
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace twist
