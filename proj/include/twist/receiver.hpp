#pragma once

// Twin-side recovery: confidence gating, erasure completion, twin-state
// update and group-wise threshold calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twist/core_types.hpp"
#include "twist/phy.hpp"
#include "twist/scene.hpp"

namespace twist {

// ---- gating ------------------------------------------------------------------

// Position i is accepted iff c_i >= tau_{g(i)}.
inline GatedTokenGrid gate(const SoftTokenFrame& soft, const GroupMap& gm,
                           std::span<const double> thresholds, int height, int width) {
  if (gm.positions() != soft.size()) throw DimensionError("group map does not match frame");
  GatedTokenGrid out{height, width, {}};
  out.entries.resize(soft.size());
  for (std::size_t i = 0; i < soft.size(); ++i)
    if (soft.confidence[i] >= thresholds[gm.assignment[i]]) out.entries[i] = soft.hard[i];
  return out;
}

struct GateAction {
  bool accept = false;
  Token token = 0;
};

// Bayes-risk accept-or-erase decision for one position: accepting u costs
// w (1 - p(u)), erasing costs lambda. Accepts the MAP token iff
// w (1 - c) <= lambda, i.e. c >= 1 - lambda / w.
inline GateAction bayes_gate_check(std::span<const double> posterior, double w, double lambda) {
  if (!(w > 0.0) || !(lambda >= 0.0) || !(lambda <= w))
    throw ConfigError("Bayes gate needs w > 0 and 0 <= lambda <= w");
  if (posterior.empty()) throw ConfigError("empty posterior");
  const auto it = std::max_element(posterior.begin(), posterior.end());
  const double c = *it;
  return {w * (1.0 - c) <= lambda, static_cast<Token>(it - posterior.begin())};
}

// ---- completion ------------------------------------------------------------------

enum class CompletionKind { TemporalCopy, NeighborVote, Cooccurrence };

inline std::string_view to_string(CompletionKind k) noexcept {
  switch (k) {
    case CompletionKind::TemporalCopy: return "temporal_copy";
    case CompletionKind::NeighborVote: return "neighbor_vote";
    case CompletionKind::Cooccurrence: return "cooccurrence";
  }
  return "?";
}

inline CompletionKind parse_completion(std::string_view s) {
  if (s == "temporal_copy") return CompletionKind::TemporalCopy;
  if (s == "neighbor_vote") return CompletionKind::NeighborVote;
  if (s == "cooccurrence") return CompletionKind::Cooccurrence;
  throw ConfigError("unknown completion kind '" + std::string(s) + "'");
}

struct CompletionModel {
  CompletionKind kind = CompletionKind::Cooccurrence;
  int codebook_size = 0;
  double smoothing = 1.0;            // Laplace alpha
  double persistence_weight = 1.0;   // weight of the temporal log-prior
  int max_iterations = 4;            // neighbor-vote passes
  Token fallback_token = 0;          // most frequent training token
  std::vector<double> neighbor_counts;  // [neighbor][token], K*K, symmetric
  std::vector<double> temporal_counts;  // [previous][current], K*K
  std::vector<double> log_neighbor;     // log P(token | neighbor)
  std::vector<double> log_temporal;     // log P(current | previous)

  void finalize() {
    const auto K = static_cast<std::size_t>(codebook_size);
    auto normalize = [&](const std::vector<double>& counts, std::vector<double>& logp) {
      logp.assign(K * K, 0.0);
      for (std::size_t a = 0; a < K; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < K; ++b) row += counts[a * K + b] + smoothing;
        for (std::size_t b = 0; b < K; ++b) logp[a * K + b] = std::log((counts[a * K + b] + smoothing) / row);
      }
    };
    normalize(neighbor_counts, log_neighbor);
    normalize(temporal_counts, log_temporal);
  }

  double neighbor_prob(Token given, Token k) const {
    return std::exp(log_neighbor[static_cast<std::size_t>(given) * codebook_size + k]);
  }
};

// Counts horizontal and vertical neighbor pairs (both directions) and
// same-position transitions between consecutive clean frames.
inline CompletionModel train_completion(std::span<const std::vector<LabeledFrame>> episodes,
                                        int codebook_size, CompletionKind kind,
                                        double smoothing = 1.0, double persistence_weight = 1.0) {
  CompletionModel m;
  m.kind = kind;
  m.codebook_size = codebook_size;
  m.smoothing = smoothing;
  m.persistence_weight = persistence_weight;
  const auto K = static_cast<std::size_t>(codebook_size);
  m.neighbor_counts.assign(K * K, 0.0);
  m.temporal_counts.assign(K * K, 0.0);
  std::vector<double> freq(K, 0.0);
  for (auto& ep : episodes)
    for (std::size_t t = 0; t < ep.size(); ++t) {
      const auto& g = ep[t].grid;
      for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
          const Token a = g.at(r, c);
          if (a >= K) throw InvalidTokenError("training token outside codebook");
          freq[a] += 1.0;
          if (c + 1 < g.width) {
            const Token b = g.at(r, c + 1);
            m.neighbor_counts[a * K + b] += 1.0;
            m.neighbor_counts[b * K + a] += 1.0;
          }
          if (r + 1 < g.height) {
            const Token b = g.at(r + 1, c);
            m.neighbor_counts[a * K + b] += 1.0;
            m.neighbor_counts[b * K + a] += 1.0;
          }
        }
      if (t > 0) {
        const auto& p = ep[t - 1].grid;
        for (std::size_t i = 0; i < g.size(); ++i) m.temporal_counts[p.tokens[i] * K + g.tokens[i]] += 1.0;
      }
    }
  m.fallback_token = static_cast<Token>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  m.finalize();
  return m;
}

namespace detail {

template <typename Fn>
void for_each_neighbor(int height, int width, std::size_t i, Fn&& fn) {
  const int r = static_cast<int>(i) / width, c = static_cast<int>(i) % width;
  if (r > 0) fn(i - width);
  if (r + 1 < height) fn(i + width);
  if (c > 0) fn(i - 1);
  if (c + 1 < width) fn(i + 1);
}

inline Token temporal_fill(const CompletionModel& m, const TokenGrid* prev, std::size_t i) {
  return prev ? prev->tokens[i] : m.fallback_token;
}

}  // namespace detail

// Restores every erased position. The output never contains erasures.
inline TokenGrid complete(const GatedTokenGrid& gated, const TokenGrid* prev,
                          const CompletionModel& model) {
  if (prev && (prev->height != gated.height || prev->width != gated.width))
    throw DimensionError("previous twin state differs in shape");
  const int H = gated.height, W = gated.width;
  TokenGrid out(H, W);
  for (std::size_t i = 0; i < gated.size(); ++i)
    out.tokens[i] = gated.entries[i].value_or(detail::temporal_fill(model, prev, i));

  switch (model.kind) {
    case CompletionKind::TemporalCopy:
      break;

    case CompletionKind::NeighborVote: {
      std::vector<std::optional<Token>> state = gated.entries;
      std::vector<int> votes(static_cast<std::size_t>(model.codebook_size), 0);
      for (int it = 0; it < model.max_iterations; ++it) {
        auto next = state;
        bool progress = false;
        for (std::size_t i = 0; i < state.size(); ++i) {
          if (state[i]) continue;
          std::fill(votes.begin(), votes.end(), 0);
          int any = 0;
          detail::for_each_neighbor(H, W, i, [&](std::size_t n) {
            if (state[n]) {
              ++votes[*state[n]];
              ++any;
            }
          });
          if (!any) continue;
          next[i] = static_cast<Token>(std::max_element(votes.begin(), votes.end()) - votes.begin());
          progress = true;
        }
        state = std::move(next);
        if (!progress) break;
      }
      for (std::size_t i = 0; i < state.size(); ++i)
        if (state[i]) out.tokens[i] = *state[i];
      break;
    }

    case CompletionKind::Cooccurrence: {
      const auto K = static_cast<std::size_t>(model.codebook_size);
      std::vector<double> score(K);
      for (std::size_t i = 0; i < gated.size(); ++i) {
        if (gated.entries[i]) continue;
        std::fill(score.begin(), score.end(), 0.0);
        bool evidence = false;
        detail::for_each_neighbor(H, W, i, [&](std::size_t n) {
          if (!gated.entries[n]) return;
          const double* row = model.log_neighbor.data() + static_cast<std::size_t>(*gated.entries[n]) * K;
          for (std::size_t k = 0; k < K; ++k) score[k] += row[k];
          evidence = true;
        });
        if (prev) {
          const double* row = model.log_temporal.data() + static_cast<std::size_t>(prev->tokens[i]) * K;
          for (std::size_t k = 0; k < K; ++k) score[k] += model.persistence_weight * row[k];
          evidence = true;
        }
        out.tokens[i] = evidence
                            ? static_cast<Token>(std::max_element(score.begin(), score.end()) - score.begin())
                            : model.fallback_token;
      }
      break;
    }
  }
  return out;
}

// Erased positions take the fallback token; no context is used.
inline TokenGrid fill_erasures(const GatedTokenGrid& gated, Token fallback) {
  TokenGrid out(gated.height, gated.width);
  for (std::size_t i = 0; i < gated.size(); ++i) out.tokens[i] = gated.entries[i].value_or(fallback);
  return out;
}

inline TokenGrid update_twin_state(const TokenGrid& completed) { return completed; }

// ---- binary completion artifact ----------------------------------------------------
// "TWCM" | u32 version | i32 K | i32 kind | f64 smoothing | f64 persistence |
// i32 max_iterations | u32 fallback | K*K f64 neighbor counts | K*K f64 temporal counts

namespace detail {
template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("truncated completion artifact");
  return v;
}
}  // namespace detail

inline void save_completion(const std::string& path, const CompletionModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write("TWCM", 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::int32_t>(os, m.codebook_size);
  detail::put<std::int32_t>(os, static_cast<std::int32_t>(m.kind));
  detail::put<double>(os, m.smoothing);
  detail::put<double>(os, m.persistence_weight);
  detail::put<std::int32_t>(os, m.max_iterations);
  detail::put<std::uint32_t>(os, m.fallback_token);
  os.write(reinterpret_cast<const char*>(m.neighbor_counts.data()),
           static_cast<std::streamsize>(m.neighbor_counts.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(m.temporal_counts.data()),
           static_cast<std::streamsize>(m.temporal_counts.size() * sizeof(double)));
}

inline CompletionModel load_completion(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open completion artifact " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "TWCM") throw ValidationError("bad completion artifact magic");
  if (detail::get<std::uint32_t>(is) != 1) throw ValidationError("unsupported completion artifact version");
  CompletionModel m;
  m.codebook_size = detail::get<std::int32_t>(is);
  m.kind = static_cast<CompletionKind>(detail::get<std::int32_t>(is));
  m.smoothing = detail::get<double>(is);
  m.persistence_weight = detail::get<double>(is);
  m.max_iterations = detail::get<std::int32_t>(is);
  m.fallback_token = detail::get<std::uint32_t>(is);
  const auto n = static_cast<std::size_t>(m.codebook_size) * m.codebook_size;
  m.neighbor_counts.resize(n);
  m.temporal_counts.resize(n);
  for (auto* v : {&m.neighbor_counts, &m.temporal_counts})
    if (!is.read(reinterpret_cast<char*>(v->data()), static_cast<std::streamsize>(n * sizeof(double))))
      throw ValidationError("truncated completion artifact");
  m.finalize();
  return m;
}

// ---- threshold calibration -------------------------------------------------------

inline std::vector<double> default_threshold_grid() {
  return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
}

struct ThresholdCalibration {
  std::vector<double> thresholds;
  double objective = 0.0;
  int cycles = 0;
  std::vector<double> cycle_objective;  // objective after each full cycle
  std::size_t evaluations = 0;
};

// Coordinate search: start from tau_g = 0.5, sweep groups cyclically, try
// every candidate for one group with the others fixed, keep the smallest
// tau among minimizers. Stops after a cycle without change or max_cycles.
// The all-zero profile is checked last and wins if strictly better.
inline ThresholdCalibration calibrate_thresholds(
    int groups, std::span<const double> candidates,
    const std::function<double(std::span<const double>)>& objective, int max_cycles = 5) {
  if (candidates.empty()) throw ConfigError("threshold candidate grid is empty");
  for (double c : candidates)
    if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("threshold candidates must lie in [0,1]");
  std::vector<double> grid(candidates.begin(), candidates.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  ThresholdCalibration res;
  std::map<std::vector<double>, double> cache;
  auto eval = [&](const std::vector<double>& tau) {
    auto it = cache.find(tau);
    if (it != cache.end()) return it->second;
    ++res.evaluations;
    return cache[tau] = objective(tau);
  };

  std::vector<double> tau(groups, 0.5);
  double current = eval(tau);
  for (int cycle = 0; cycle < max_cycles; ++cycle) {
    bool changed = false;
    for (int g = 0; g < groups; ++g) {
      double best_v = INFINITY, best_t = tau[g];
      auto trial = tau;
      for (double c : grid) {
        trial[g] = c;
        const double v = eval(trial);
        if (v < best_v) {
          best_v = v;
          best_t = c;
        }
      }
      if (best_t != tau[g]) changed = true;
      tau[g] = best_t;
      current = best_v;
    }
    res.cycles = cycle + 1;
    res.cycle_objective.push_back(current);
    if (!changed) break;
  }
  if (std::find(grid.begin(), grid.end(), 0.0) != grid.end()) {
    std::vector<double> zero(groups, 0.0);
    const double v = eval(zero);
    if (v < current) {
      tau = zero;
      current = v;
    }
  }
  res.thresholds = tau;
  res.objective = current;
  return res;
}

}  // namespace twist
