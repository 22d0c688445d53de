#pragma once

// Pieces shared by the offline calibrations and the online episode runner:
// the artifact bundle, the method table, and one twin-side frame update.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twist/app_head.hpp"
#include "twist/controller.hpp"
#include "twist/harness/config.hpp"
#include "twist/metrics.hpp"
#include "twist/phy.hpp"
#include "twist/receiver.hpp"
#include "twist/uep.hpp"

namespace twist {

// Stream tags for derive_seed; every random stream of a run hangs off
// cfg.seed through one of these.
enum SeedTag : std::uint64_t {
  kTagTrainScene = 1,
  kTagCalibScene = 2,
  kTagValidScene = 3,
  kTagTestScene = 4,
  kTagCalibChannel = 5,
  kTagValidChannel = 6,
  kTagProfile = 7,
  kTagCell = 8,
  kTagTemporal = 9,
};

struct ArtifactBundle {
  std::uint64_t config_hash = 0;
  TokenAlphabet alphabet;
  EmbeddingTable table;
  StateHead head;
  int head_epochs = 0;
  double head_loss = 0.0;
  CompletionModel completion;
  UtilityProfile utility;
  GroupMap groups;
  ErrorRateTable eps;
  ModeProtection twist;    // thresholds calibrated per mode
  ModeProtection uniform;  // uniform-protection ablation, own thresholds
  std::array<double, 3> twist_calib_loss{};
  std::array<double, 3> uniform_calib_loss{};
  ControllerParams controller;
  CandidateScore controller_score;
  ControllerParams channel_adaptive;
  CandidateScore channel_adaptive_score;
};

// ---- methods -------------------------------------------------------------------

struct MethodSpec {
  std::string name;
  ControllerKind controller = ControllerKind::Full;
  bool uniform_protection = false;
  bool gating = true;
  bool completion = true;
};

inline const std::vector<std::string>& all_method_names() {
  static const std::vector<std::string> names{
      "twist",  "static-low", "static-med", "static-high", "channel-adaptive", "no-gamma",     "no-rho",
      "no-drift", "no-q",     "uniform",    "no-gating",   "no-completion",    "hard-only"};
  return names;
}

inline MethodSpec method_spec(std::string_view name) {
  MethodSpec m;
  m.name = std::string(name);
  if (name == "twist") return m;
  if (name == "static-low") m.controller = ControllerKind::StaticLow;
  else if (name == "static-med") m.controller = ControllerKind::StaticMed;
  else if (name == "static-high") m.controller = ControllerKind::StaticHigh;
  else if (name == "channel-adaptive") m.controller = ControllerKind::ChannelOnly;
  else if (name == "no-gamma") m.controller = ControllerKind::NoGamma;
  else if (name == "no-rho") m.controller = ControllerKind::NoRho;
  else if (name == "no-drift") m.controller = ControllerKind::NoDrift;
  else if (name == "no-q") m.controller = ControllerKind::NoPriority;
  else if (name == "uniform") m.uniform_protection = true;
  else if (name == "no-gating") m.gating = false;
  else if (name == "no-completion") m.completion = false;
  else if (name == "hard-only") m.gating = m.completion = false;
  else throw ConfigError("unknown method '" + std::string(name) + "'");
  return m;
}

// Controller used by a method. Input ablations keep the calibrated TWIST
// weights and only drop the masked input.
inline ModeController controller_for(const MethodSpec& m, const ArtifactBundle& b) {
  ModeController c;
  c.kind = m.controller;
  if (m.controller == ControllerKind::ChannelOnly) {
    c.params = b.channel_adaptive;
  } else {
    c.params = b.controller;
    c.params.mask = mask_for(m.controller);
  }
  return c;
}

inline const ModeProtection& protection_for(const MethodSpec& m, const ArtifactBundle& b) {
  return m.uniform_protection ? b.uniform : b.twist;
}

// ---- one twin-side frame ----------------------------------------------------------

struct ReceiverOptions {
  bool gating = true;
  bool completion = true;
};

struct FrameEval {
  GatedTokenGrid gated;
  TokenGrid twin;
  HeadOutput output;
  double loss = 0.0;
  double tsmr = 0.0;
  std::optional<double> auer;
  FeedbackStats stats;
};

// Gate, complete, update the twin, infer and compute the feedback
// statistics for frame t. prev is the twin state after frame t-1.
inline FrameEval twin_update(const SoftTokenFrame& soft, const LabeledFrame& source,
                             std::span<const double> thresholds, const TokenGrid* prev,
                             const ArtifactBundle& b, ReceiverOptions opt, double gamma_db,
                             const GammaRange& range) {
  FrameEval e;
  const int H = source.grid.height, W = source.grid.width;
  if (opt.gating) {
    e.gated = gate(soft, b.groups, thresholds, H, W);
  } else {
    e.gated = GatedTokenGrid{H, W, {}};
    e.gated.entries.assign(soft.hard.begin(), soft.hard.end());
  }
  e.twin = update_twin_state(opt.completion ? complete(e.gated, prev, b.completion)
                                            : fill_erasures(e.gated, b.completion.fallback_token));
  e.output = infer_state(embed(e.twin, b.table), b.head);
  e.loss = app_loss(e.output.logits, source.label);
  e.tsmr = tsmr(e.twin, source.grid);
  e.auer = auer(soft, e.gated, source.grid);
  e.stats = compute_stats(e.gated, e.twin, prev, gamma_db, range, source.priority);
  return e;
}

// Per-frame closed-loop objective omega(q) L_app + alpha TSMR + beta N/B0.
inline double frame_objective(const FrameEval& e, int priority, SyncMode mode, const ExperimentConfig& cfg) {
  const double omega = 1.0 + cfg.omega_priority * priority;
  return omega * e.loss + cfg.alpha * e.tsmr + cfg.beta * cfg.budgets.normalized_cost(mode);
}

inline SoftTokenFrame strip_bit_posteriors(SoftTokenFrame f) {
  f.bit_p1.clear();
  f.bit_p1.shrink_to_fit();
  return f;
}

}  // namespace twist
