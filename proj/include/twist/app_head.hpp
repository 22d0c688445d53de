#pragma once

// Twin-side traffic-state head. The grid is tiled into rectangular regions,
// each region's embeddings are mean-pooled, and three affine maps produce
// logits for vehicle presence (2 classes), pedestrian presence (2) and
// density (3). Everything downstream of the embedding matrix is
// differentiable in closed form, so token utilities are exact gradients.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/core_types.hpp"
#include "twist/scene.hpp"

namespace twist {

inline constexpr int kNumTasks = 3;
inline constexpr std::array<int, kNumTasks> kTaskClasses{2, 2, 3};

struct StateHead {
  int height = 0, width = 0;
  int region_rows = 0, region_cols = 0;
  int dim = 0;
  std::vector<int> region_of;     // per position
  std::vector<int> region_count;  // positions per region
  std::array<Matrix, kNumTasks> weights;  // classes x (R*dim)
  std::array<std::vector<double>, kNumTasks> bias;

  int regions() const noexcept { return region_rows * region_cols; }
  int features() const noexcept { return regions() * dim; }

  static StateHead zeros(int height, int width, int region_rows, int region_cols, int dim) {
    if (height < 1 || width < 1 || dim < 1 || region_rows < 1 || region_cols < 1 ||
        region_rows > height || region_cols > width)
      throw ConfigError("invalid head geometry");
    StateHead h;
    h.height = height;
    h.width = width;
    h.region_rows = region_rows;
    h.region_cols = region_cols;
    h.dim = dim;
    h.region_of.resize(static_cast<std::size_t>(height) * width);
    h.region_count.assign(h.regions(), 0);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        const int reg = (r * region_rows / height) * region_cols + (c * region_cols / width);
        h.region_of[static_cast<std::size_t>(r) * width + c] = reg;
        ++h.region_count[reg];
      }
    for (int k = 0; k < kNumTasks; ++k) {
      h.weights[k] = Matrix(kTaskClasses[k], h.features());
      h.bias[k].assign(kTaskClasses[k], 0.0);
    }
    return h;
  }

  static StateHead random(int height, int width, int region_rows, int region_cols, int dim,
                          std::uint64_t seed, double scale = 1.0) {
    auto h = zeros(height, width, region_rows, region_cols, dim);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (int k = 0; k < kNumTasks; ++k) {
      for (auto& w : h.weights[k].data) w = n(rng);
      for (auto& b : h.bias[k]) b = n(rng);
    }
    return h;
  }
};

struct HeadOutput {
  std::array<std::vector<double>, kNumTasks> logits;
  Label prediction;
};

inline Matrix pool_regions(const Matrix& z, const StateHead& head) {
  if (z.rows != static_cast<int>(head.region_of.size()) || z.cols != head.dim)
    throw DimensionError("embedding matrix " + std::to_string(z.rows) + "x" +
                         std::to_string(z.cols) + " does not match head " +
                         std::to_string(head.region_of.size()) + "x" + std::to_string(head.dim));
  Matrix pooled(head.regions(), head.dim);
  for (int i = 0; i < z.rows; ++i) {
    auto dst = pooled.row(head.region_of[i]);
    auto src = z.row(i);
    for (int d = 0; d < head.dim; ++d) dst[d] += src[d];
  }
  for (int r = 0; r < head.regions(); ++r)
    for (auto& v : pooled.row(r)) v /= head.region_count[r];
  return pooled;
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline HeadOutput head_from_pooled(const Matrix& pooled, const StateHead& head) {
  HeadOutput out;
  for (int k = 0; k < kNumTasks; ++k) {
    const Matrix& w = head.weights[k];
    auto& lg = out.logits[k];
    lg = head.bias[k];
    for (int c = 0; c < w.rows; ++c) {
      auto wr = w.row(c);
      double s = 0.0;
      for (std::size_t f = 0; f < pooled.data.size(); ++f) s += wr[f] * pooled.data[f];
      lg[c] += s;
    }
  }
  out.prediction = {argmax(out.logits[0]), argmax(out.logits[1]), argmax(out.logits[2])};
  return out;
}

inline HeadOutput infer_state(const Matrix& z, const StateHead& head) {
  return head_from_pooled(pool_regions(z, head), head);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) s += (p[c] = std::exp(logits[c] - m));
  for (auto& v : p) v /= s;
  return p;
}

inline void check_label(const Label& y) {
  if (y.car < 0 || y.car > 1 || y.ped < 0 || y.ped > 1 || y.den < 0 || y.den > 2)
    throw ValidationError("label out of range");
}

// Sum of the per-task softmax cross-entropies.
inline double app_loss(const std::array<std::vector<double>, kNumTasks>& logits, const Label& y) {
  check_label(y);
  double loss = 0.0;
  for (int k = 0; k < kNumTasks; ++k) {
    const auto& lg = logits[k];
    const double m = *std::max_element(lg.begin(), lg.end());
    double s = 0.0;
    for (double v : lg) s += std::exp(v - m);
    loss += m + std::log(s) - lg[label_component(y, k)];
  }
  return loss;
}

// d(summed loss)/d(pooled features), flattened R*dim.
inline std::vector<double> pooled_gradient(const HeadOutput& out, const StateHead& head,
                                           const Label& y) {
  std::vector<double> g(static_cast<std::size_t>(head.features()), 0.0);
  for (int k = 0; k < kNumTasks; ++k) {
    auto p = softmax(out.logits[k]);
    p[label_component(y, k)] -= 1.0;
    const Matrix& w = head.weights[k];
    for (int c = 0; c < w.rows; ++c) {
      auto wr = w.row(c);
      for (std::size_t f = 0; f < g.size(); ++f) g[f] += p[c] * wr[f];
    }
  }
  return g;
}

// Gradient of the summed application loss with respect to every row of Z.
inline Matrix loss_gradient(const Matrix& z, const StateHead& head, const Label& y) {
  const auto out = infer_state(z, head);
  const auto gp = pooled_gradient(out, head, y);
  Matrix grad(z.rows, z.cols);
  for (int i = 0; i < z.rows; ++i) {
    const int reg = head.region_of[i];
    const double inv = 1.0 / head.region_count[reg];
    auto dst = grad.row(i);
    for (int d = 0; d < z.cols; ++d) dst[d] = gp[static_cast<std::size_t>(reg) * z.cols + d] * inv;
  }
  return grad;
}

inline double row_norm(const Matrix& m, int i) {
  double s = 0.0;
  for (double v : m.row(i)) s += v * v;
  return std::sqrt(s);
}

// Gradient-norm utility of every token position at the clean embedding.
inline std::vector<double> token_utilities(const TokenGrid& grid, const Label& y,
                                           const StateHead& head, const EmbeddingTable& table) {
  const auto grad = loss_gradient(embed(grid, table), head, y);
  std::vector<double> w(grid.size());
  for (int i = 0; i < grad.rows; ++i) w[i] = row_norm(grad, i);
  return w;
}

struct UtilityProfile {
  std::vector<double> mean;
  std::size_t calibration_frames = 0;
};

inline UtilityProfile mean_utility_profile(std::span<const LabeledFrame> frames,
                                           const StateHead& head, const EmbeddingTable& table) {
  if (frames.empty()) throw ValidationError("utility profile needs at least one calibration frame");
  UtilityProfile prof;
  prof.mean.assign(frames.front().grid.size(), 0.0);
  for (auto& f : frames) {
    auto w = token_utilities(f.grid, f.label, head, table);
    for (std::size_t i = 0; i < w.size(); ++i) prof.mean[i] += w[i];
  }
  for (auto& v : prof.mean) v /= static_cast<double>(frames.size());
  prof.calibration_frames = frames.size();
  return prof;
}

// Quantile grouping: positions sorted by utility (descending, ties by index),
// then cut into G contiguous runs; the trailing (low-utility) groups absorb
// the remainder when L is not divisible by G.
inline GroupMap build_group_map(const UtilityProfile& profile, int G) {
  const int L = static_cast<int>(profile.mean.size());
  if (G < 1 || G > L) throw ConfigError("group count must lie in [1, L]");
  std::vector<int> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return profile.mean[a] > profile.mean[b]; });
  GroupMap gm;
  gm.num_groups = G;
  gm.assignment.assign(L, 0);
  gm.sizes.assign(G, L / G);
  for (int g = G - (L % G); g < G; ++g) ++gm.sizes[g];
  gm.utilities.assign(G, 0.0);
  int pos = 0;
  for (int g = 0; g < G; ++g)
    for (int n = 0; n < gm.sizes[g]; ++n, ++pos) {
      gm.assignment[order[pos]] = g;
      gm.utilities[g] += profile.mean[order[pos]];
    }
  return gm;
}

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

inline constexpr double kPathSupremumSafety = 1.5;
inline constexpr int kPathSamples = 11;

// Utility-weighted loss degradation bound for a corrupted grid. The path
// supremum of each position's gradient norm is approximated on an 11-point
// alpha grid and inflated by a 1.5 safety factor.
inline BoundCheck check_loss_bound(const TokenGrid& clean, const TokenGrid& corrupted,
                                    const Label& y, const StateHead& head,
                                    const EmbeddingTable& table) {
  if (!clean.same_shape(corrupted)) throw DimensionError("grids differ in shape");
  const Matrix z = embed(clean, table);
  const Matrix zh = embed(corrupted, table);
  BoundCheck out;
  out.lhs = std::abs(app_loss(infer_state(zh, head).logits, y) -
                     app_loss(infer_state(z, head).logits, y));
  std::vector<double> wsup(clean.size(), 0.0);
  Matrix za(z.rows, z.cols);
  for (int s = 0; s < kPathSamples; ++s) {
    const double a = static_cast<double>(s) / (kPathSamples - 1);
    for (std::size_t k = 0; k < z.data.size(); ++k) za.data[k] = z.data[k] + a * (zh.data[k] - z.data[k]);
    const Matrix g = loss_gradient(za, head, y);
    for (int i = 0; i < g.rows; ++i) wsup[i] = std::max(wsup[i], row_norm(g, i));
  }
  const double diam = table.diameter();
  double sum = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (clean.tokens[i] != corrupted.tokens[i]) sum += kPathSupremumSafety * wsup[i];
  out.rhs = diam * sum;
  out.holds = out.lhs <= out.rhs;
  return out;
}

// ---- training --------------------------------------------------------------

struct HeadTrainConfig {
  int epochs = 200;
  double learning_rate = 0.01;
  int batch_size = 32;
  double target_loss = 0.05;
  std::uint64_t seed = 11;
};

struct HeadTrainResult {
  StateHead head;
  int epochs_run = 0;
  double final_loss = 0.0;
};

// Minibatch gradient descent on mean cross-entropy over clean frames; stops
// after cfg.epochs or once the epoch-mean loss drops below cfg.target_loss.
inline HeadTrainResult train_head(std::span<const LabeledFrame> frames, const EmbeddingTable& table,
                                  int region_rows, int region_cols, const HeadTrainConfig& cfg) {
  if (frames.empty()) throw ValidationError("head training needs at least one frame");
  const auto& g0 = frames.front().grid;
  HeadTrainResult res{StateHead::zeros(g0.height, g0.width, region_rows, region_cols, table.dim()), 0, 0.0};
  StateHead& head = res.head;

  // Descent runs on standardized features; the scaling is folded back into
  // the weights and bias at the end, so the head stays affine in the pooled
  // embeddings.
  const std::size_t F = static_cast<std::size_t>(head.features());
  std::vector<Matrix> pooled;
  pooled.reserve(frames.size());
  for (auto& f : frames) pooled.push_back(pool_regions(embed(f.grid, table), head));
  std::vector<double> mu(F, 0.0), sd(F, 0.0);
  for (auto& x : pooled)
    for (std::size_t f = 0; f < F; ++f) mu[f] += x.data[f];
  for (auto& m : mu) m /= static_cast<double>(pooled.size());
  for (auto& x : pooled)
    for (std::size_t f = 0; f < F; ++f) sd[f] += (x.data[f] - mu[f]) * (x.data[f] - mu[f]);
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(pooled.size())) + 1e-8;
  for (auto& x : pooled)
    for (std::size_t f = 0; f < F; ++f) x.data[f] = (x.data[f] - mu[f]) / sd[f];

  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(cfg.seed);
  std::array<Matrix, kNumTasks> gw;
  std::array<std::vector<double>, kNumTasks> gb;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (int k = 0; k < kNumTasks; ++k) {
        gw[k] = Matrix(kTaskClasses[k], head.features());
        gb[k].assign(kTaskClasses[k], 0.0);
      }
      for (std::size_t n = start; n < stop; ++n) {
        const auto& x = pooled[order[n]];
        const Label& y = frames[order[n]].label;
        const auto out = head_from_pooled(x, head);
        epoch_loss += app_loss(out.logits, y);
        for (int k = 0; k < kNumTasks; ++k) {
          auto p = softmax(out.logits[k]);
          p[label_component(y, k)] -= 1.0;
          for (int c = 0; c < kTaskClasses[k]; ++c) {
            gb[k][c] += p[c];
            auto gr = gw[k].row(c);
            for (std::size_t f = 0; f < F; ++f) gr[f] += p[c] * x.data[f];
          }
        }
      }
      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      for (int k = 0; k < kNumTasks; ++k) {
        for (std::size_t q = 0; q < gw[k].data.size(); ++q) head.weights[k].data[q] -= step * gw[k].data[q];
        for (int c = 0; c < kTaskClasses[k]; ++c) head.bias[k][c] -= step * gb[k][c];
      }
    }
    res.epochs_run = epoch + 1;
    res.final_loss = epoch_loss / static_cast<double>(frames.size());
    if (res.final_loss < cfg.target_loss) break;
  }
  for (int k = 0; k < kNumTasks; ++k)
    for (int c = 0; c < kTaskClasses[k]; ++c) {
      auto w = head.weights[k].row(c);
      for (std::size_t f = 0; f < F; ++f) {
        w[f] /= sd[f];
        head.bias[k][c] -= w[f] * mu[f];
      }
    }
  return res;
}

inline nlohmann::json to_json(const StateHead& h) {
  nlohmann::json tasks = nlohmann::json::array();
  for (int k = 0; k < kNumTasks; ++k)
    tasks.push_back({{"weights", h.weights[k].data}, {"bias", h.bias[k]}});
  return {{"height", h.height},     {"width", h.width}, {"region_rows", h.region_rows},
          {"region_cols", h.region_cols}, {"dim", h.dim},     {"tasks", tasks}};
}

inline StateHead head_from_json(const nlohmann::json& j) {
  auto h = StateHead::zeros(j.at("height"), j.at("width"), j.at("region_rows"),
                            j.at("region_cols"), j.at("dim"));
  const auto& tasks = j.at("tasks");
  if (tasks.size() != kNumTasks) throw ValidationError("head must have 3 tasks");
  for (int k = 0; k < kNumTasks; ++k) {
    auto w = tasks[k].at("weights").get<std::vector<double>>();
    if (w.size() != h.weights[k].data.size()) throw ValidationError("head weight size mismatch");
    h.weights[k].data = std::move(w);
    h.bias[k] = tasks[k].at("bias").get<std::vector<double>>();
    if (static_cast<int>(h.bias[k].size()) != kTaskClasses[k])
      throw ValidationError("head bias size mismatch");
  }
  return h;
}

}  // namespace twist
