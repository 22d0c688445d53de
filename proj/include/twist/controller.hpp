#pragma once

// Closed-loop mode selection from twin-side feedback statistics, plus the
// static and channel-only baselines and the input-ablation masks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/core_types.hpp"

namespace twist {

struct FeedbackStats {
  double gamma = 0.0;  // normalized channel quality, larger is better
  double rho = 0.0;    // erasure ratio
  double drift = 0.0;  // fraction of twin positions changed since last frame
  int priority = 0;

  friend bool operator==(const FeedbackStats&, const FeedbackStats&) = default;
};

struct GammaRange {
  double min_db = 0.0;
  double max_db = 20.0;

  double normalize(double gamma_db) const {
    if (!(max_db > min_db)) throw ConfigError("gamma range must satisfy max > min");
    return std::clamp((gamma_db - min_db) / (max_db - min_db), 0.0, 1.0);
  }
};

inline FeedbackStats compute_stats(const GatedTokenGrid& gated, const TokenGrid& twin,
                                   const TokenGrid* twin_prev, double gamma_db,
                                   const GammaRange& range, int priority) {
  if (gated.size() != twin.size() || (twin_prev && !twin.same_shape(*twin_prev)))
    throw DimensionError("feedback inputs differ in shape");
  FeedbackStats s;
  const double L = static_cast<double>(twin.size());
  s.rho = static_cast<double>(gated.erased_count()) / L;
  if (twin_prev) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < twin.size(); ++i) changed += twin.tokens[i] != twin_prev->tokens[i];
    s.drift = static_cast<double>(changed) / L;
  }
  s.gamma = range.normalize(gamma_db);
  s.priority = priority;
  return s;
}

struct InputMask {
  bool gamma = true, rho = true, drift = true, priority = true;
  friend bool operator==(const InputMask&, const InputMask&) = default;
};

struct ControllerParams {
  double eta_rho = 1.0, eta_drift = 1.0, eta_priority = 1.0, eta_gamma = 1.0;
  double theta_low = -0.25, theta_high = 0.5;
  InputMask mask;

  void validate() const {
    if (eta_rho < 0 || eta_drift < 0 || eta_priority < 0 || eta_gamma < 0)
      throw ConfigError("controller weights must be non-negative");
    if (!(theta_low < theta_high)) throw ConfigError("controller needs theta_low < theta_high");
  }

  auto key() const {
    return std::make_tuple(eta_rho, eta_drift, eta_priority, eta_gamma, theta_low, theta_high);
  }
  friend bool operator==(const ControllerParams&, const ControllerParams&) = default;
};

// psi = eta_rho rho + eta_d d + eta_q q - eta_gamma gamma; masked inputs
// contribute nothing.
inline double risk_score(const FeedbackStats& s, const ControllerParams& p) {
  double psi = 0.0;
  if (p.mask.rho) psi += p.eta_rho * s.rho;
  if (p.mask.drift) psi += p.eta_drift * s.drift;
  if (p.mask.priority) psi += p.eta_priority * s.priority;
  if (p.mask.gamma) psi -= p.eta_gamma * s.gamma;
  return psi;
}

inline SyncMode select_mode(double psi, int priority, const ControllerParams& p) {
  if (psi >= p.theta_high) return SyncMode::High;
  if (psi <= p.theta_low && priority == 0) return SyncMode::Low;
  return SyncMode::Med;
}

enum class ControllerKind {
  Full,
  NoGamma,
  NoRho,
  NoDrift,
  NoPriority,
  ChannelOnly,
  StaticLow,
  StaticMed,
  StaticHigh
};

inline std::string_view to_string(ControllerKind k) noexcept {
  switch (k) {
    case ControllerKind::Full: return "full";
    case ControllerKind::NoGamma: return "no-gamma";
    case ControllerKind::NoRho: return "no-rho";
    case ControllerKind::NoDrift: return "no-drift";
    case ControllerKind::NoPriority: return "no-q";
    case ControllerKind::ChannelOnly: return "channel-only";
    case ControllerKind::StaticLow: return "static-low";
    case ControllerKind::StaticMed: return "static-med";
    case ControllerKind::StaticHigh: return "static-high";
  }
  return "?";
}

inline ControllerKind parse_controller(std::string_view s) {
  for (auto k : {ControllerKind::Full, ControllerKind::NoGamma, ControllerKind::NoRho,
                 ControllerKind::NoDrift, ControllerKind::NoPriority, ControllerKind::ChannelOnly,
                 ControllerKind::StaticLow, ControllerKind::StaticMed, ControllerKind::StaticHigh})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown controller '" + std::string(s) + "'");
}

inline InputMask mask_for(ControllerKind k) {
  InputMask m;
  switch (k) {
    case ControllerKind::NoGamma: m.gamma = false; break;
    case ControllerKind::NoRho: m.rho = false; break;
    case ControllerKind::NoDrift: m.drift = false; break;
    case ControllerKind::NoPriority: m.priority = false; break;
    case ControllerKind::ChannelOnly: m = {true, false, false, false}; break;
    default: break;
  }
  return m;
}

inline std::optional<SyncMode> static_mode(ControllerKind k) {
  switch (k) {
    case ControllerKind::StaticLow: return SyncMode::Low;
    case ControllerKind::StaticMed: return SyncMode::Med;
    case ControllerKind::StaticHigh: return SyncMode::High;
    default: return std::nullopt;
  }
}

// Decision rule used online. Static kinds ignore the statistics; score kinds
// apply the mask to both the score and the low-mode priority condition.
struct ModeController {
  ControllerKind kind = ControllerKind::Full;
  ControllerParams params;

  SyncMode initial_mode() const { return static_mode(kind).value_or(SyncMode::Med); }

  SyncMode next_mode(const FeedbackStats& s) const {
    if (auto m = static_mode(kind)) return *m;
    const int q = params.mask.priority ? s.priority : 0;
    return select_mode(risk_score(s, params), q, params);
  }
};

// Channel-only cut points on gamma: HIGH when gamma <= low_cut, LOW when
// gamma >= high_cut, MED otherwise. Expressed as score parameters with only
// the gamma input enabled (psi = -gamma).
inline ControllerParams channel_adaptive_params(double low_cut, double high_cut) {
  ControllerParams p;
  p.eta_rho = p.eta_drift = p.eta_priority = 0.0;
  p.eta_gamma = 1.0;
  p.theta_high = -low_cut;
  p.theta_low = -high_cut;
  p.mask = mask_for(ControllerKind::ChannelOnly);
  return p;
}

struct ControllerGrid {
  std::vector<double> eta{0.0, 0.5, 1.0, 2.0};
  std::vector<double> theta_low{-0.5, -0.25, 0.0};
  std::vector<double> theta_high{0.25, 0.5, 0.75};

  std::vector<ControllerParams> candidates() const {
    std::vector<ControllerParams> out;
    for (double er : eta)
      for (double ed : eta)
        for (double eq : eta)
          for (double eg : eta)
            for (double tl : theta_low)
              for (double th : theta_high) {
                if (!(tl < th)) continue;
                ControllerParams p;
                p.eta_rho = er;
                p.eta_drift = ed;
                p.eta_priority = eq;
                p.eta_gamma = eg;
                p.theta_low = tl;
                p.theta_high = th;
                out.push_back(p);
              }
    return out;
  }
};

inline std::vector<ControllerParams> channel_adaptive_candidates(std::span<const double> cuts) {
  std::vector<ControllerParams> out;
  for (double lo : cuts)
    for (double hi : cuts)
      if (lo < hi) out.push_back(channel_adaptive_params(lo, hi));
  return out;
}

struct CandidateScore {
  double objective = 0.0;
  double mean_cost = 0.0;
};

struct ControllerCalibration {
  ControllerParams params;
  CandidateScore score;
  std::vector<CandidateScore> all;  // per candidate, input order
};

// Exhaustive grid search. Ties on the objective go to the lower mean cost,
// then to the lexicographically smaller parameter tuple.
inline ControllerCalibration calibrate_controller(
    std::span<const ControllerParams> candidates,
    const std::function<std::vector<CandidateScore>(std::span<const ControllerParams>)>& evaluate) {
  if (candidates.empty()) throw ConfigError("controller candidate grid is empty");
  for (auto& c : candidates) c.validate();
  ControllerCalibration res;
  res.all = evaluate(candidates);
  if (res.all.size() != candidates.size()) throw Error("controller evaluator returned wrong count");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const auto& a = res.all[i];
    const auto& b = res.all[best];
    if (a.objective < b.objective ||
        (a.objective == b.objective &&
         (a.mean_cost < b.mean_cost ||
          (a.mean_cost == b.mean_cost && candidates[i].key() < candidates[best].key()))))
      best = i;
  }
  res.params = candidates[best];
  res.score = res.all[best];
  return res;
}

inline nlohmann::json to_json(const ControllerParams& p) {
  return {{"eta_rho", p.eta_rho},
          {"eta_drift", p.eta_drift},
          {"eta_priority", p.eta_priority},
          {"eta_gamma", p.eta_gamma},
          {"theta_low", p.theta_low},
          {"theta_high", p.theta_high},
          {"mask", {p.mask.gamma, p.mask.rho, p.mask.drift, p.mask.priority}}};
}

inline ControllerParams controller_params_from_json(const nlohmann::json& j) {
  ControllerParams p;
  p.eta_rho = j.at("eta_rho");
  p.eta_drift = j.at("eta_drift");
  p.eta_priority = j.at("eta_priority");
  p.eta_gamma = j.at("eta_gamma");
  p.theta_low = j.at("theta_low");
  p.theta_high = j.at("theta_high");
  if (j.contains("mask")) {
    auto m = j.at("mask").get<std::vector<bool>>();
    if (m.size() != 4) throw ValidationError("controller mask must have 4 entries");
    p.mask = {m[0], m[1], m[2], m[3]};
  }
  p.validate();
  return p;
}

}  // namespace twist
