#pragma once

// Shared domain vocabulary: token alphabets, grids, embeddings, modes,
// utility groups and per-mode profiles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/error.hpp"
#include "twist/rng.hpp"

namespace twist {

// Token indices are 0-based: a codebook of size K holds indices [0, K).
using Token = std::uint32_t;

inline constexpr int kBitsPerSymbol = 4;  // 16QAM

struct TokenAlphabet {
  int codebook_size = 0;
  int bits_per_token = 0;

  static TokenAlphabet make(int K) {
    if (K < 2 || (K & (K - 1)) != 0)
      throw ConfigError("codebook size must be a power of two >= 2, got " + std::to_string(K));
    int b = 0;
    while ((1 << b) < K) ++b;
    return TokenAlphabet{K, b};
  }

  bool contains(Token t) const noexcept { return t < static_cast<Token>(codebook_size); }

  // MSB first.
  std::vector<std::uint8_t> to_bits(Token t) const {
    std::vector<std::uint8_t> bits(bits_per_token);
    for (int j = 0; j < bits_per_token; ++j)
      bits[j] = static_cast<std::uint8_t>((t >> (bits_per_token - 1 - j)) & 1u);
    return bits;
  }

  Token from_bits(std::span<const std::uint8_t> bits) const {
    Token t = 0;
    for (auto b : bits) t = (t << 1) | (b & 1u);
    return t;
  }
};

struct TokenGrid {
  int height = 0;
  int width = 0;
  std::vector<Token> tokens;  // row-major, size height*width

  TokenGrid() = default;
  TokenGrid(int h, int w, Token fill = 0)
      : height(h), width(w), tokens(static_cast<std::size_t>(h) * w, fill) {}
  TokenGrid(int h, int w, std::vector<Token> values)
      : height(h), width(w), tokens(std::move(values)) {
    if (tokens.size() != static_cast<std::size_t>(h) * w)
      throw DimensionError("token count " + std::to_string(tokens.size()) +
                           " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
  }

  std::size_t size() const noexcept { return tokens.size(); }
  Token at(int r, int c) const { return tokens[static_cast<std::size_t>(r) * width + c]; }
  Token& at(int r, int c) { return tokens[static_cast<std::size_t>(r) * width + c]; }

  void validate(const TokenAlphabet& alphabet) const {
    if (tokens.size() != static_cast<std::size_t>(height) * width)
      throw ValidationError("grid size mismatch");
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (!alphabet.contains(tokens[i]))
        throw InvalidTokenError("token " + std::to_string(tokens[i]) + " at position " +
                                std::to_string(i) + " outside [0, " +
                                std::to_string(alphabet.codebook_size) + ")");
  }

  bool same_shape(const TokenGrid& o) const noexcept {
    return height == o.height && width == o.width && size() == o.size();
  }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

// Channel output after gating. std::nullopt is the erasure symbol; it is
// never a codebook index.
struct GatedTokenGrid {
  int height = 0;
  int width = 0;
  std::vector<std::optional<Token>> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool erased(std::size_t i) const { return !entries[i].has_value(); }
  std::size_t erased_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](auto& e) { return !e.has_value(); }));
  }

  static GatedTokenGrid accept_all(const TokenGrid& g) {
    GatedTokenGrid out{g.height, g.width, {}};
    out.entries.assign(g.tokens.begin(), g.tokens.end());
    return out;
  }
};

// Dense row-major matrix; just enough for embeddings and head weights.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
};

class EmbeddingTable {
public:
  EmbeddingTable() = default;

  // Rows come from a seeded standard-normal stream and are rescaled to unit
  // RMS (row norm sqrt(D)).
  static EmbeddingTable build(int K, int D, std::uint64_t seed) {
    if (K < 1 || D < 1) throw ConfigError("embedding table needs K, D >= 1");
    EmbeddingTable t;
    t.seed_ = seed;
    t.values_ = Matrix(K, D);
    Rng rng = make_rng(derive_seed(seed, {0xE3BEDull}));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int k = 0; k < K; ++k) {
      auto row = t.values_.row(k);
      double ss = 0.0;
      for (auto& v : row) {
        v = normal(rng);
        ss += v * v;
      }
      const double rms = std::sqrt(ss / D);
      if (rms > 0.0)
        for (auto& v : row) v /= rms;
    }
    return t;
  }

  int rows() const noexcept { return values_.rows; }
  int dim() const noexcept { return values_.cols; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::span<const double> row(Token k) const { return values_.row(static_cast<int>(k)); }
  const Matrix& values() const noexcept { return values_; }

  double distance(Token u, Token v) const {
    auto a = row(u), b = row(v);
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  }

  // Maximum pairwise row distance (exhaustive scan).
  double diameter() const {
    double best = 0.0;
    for (int u = 0; u < rows(); ++u)
      for (int v = u + 1; v < rows(); ++v)
        best = std::max(best, distance(static_cast<Token>(u), static_cast<Token>(v)));
    return best;
  }

private:
  Matrix values_;
  std::uint64_t seed_ = 0;
};

// Row i of the result is the embedding of grid.tokens[i].
inline Matrix embed(const TokenGrid& grid, const EmbeddingTable& table) {
  Matrix z(static_cast<int>(grid.size()), table.dim());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Token t = grid.tokens[i];
    if (t >= static_cast<Token>(table.rows()))
      throw InvalidTokenError("token " + std::to_string(t) + " at position " + std::to_string(i) +
                              " outside embedding table of " + std::to_string(table.rows()) + " rows");
    auto src = table.row(t);
    std::copy(src.begin(), src.end(), z.row(static_cast<int>(i)).begin());
  }
  return z;
}

enum class SyncMode : int { Low = 0, Med = 1, High = 2 };
inline constexpr std::array<SyncMode, 3> kAllModes{SyncMode::Low, SyncMode::Med, SyncMode::High};

inline constexpr int index_of(SyncMode m) noexcept { return static_cast<int>(m); }

inline std::string_view to_string(SyncMode m) noexcept {
  switch (m) {
    case SyncMode::Low: return "low";
    case SyncMode::Med: return "med";
    case SyncMode::High: return "high";
  }
  return "?";
}

inline SyncMode parse_mode(std::string_view s) {
  if (s == "low") return SyncMode::Low;
  if (s == "med") return SyncMode::Med;
  if (s == "high") return SyncMode::High;
  throw ConfigError("unknown sync mode '" + std::string(s) + "'");
}

// Position -> utility group. Groups are 0-based here; group 0 carries the
// highest mean utility.
struct GroupMap {
  int num_groups = 0;
  std::vector<int> assignment;
  std::vector<int> sizes;
  std::vector<double> utilities;

  std::size_t positions() const noexcept { return assignment.size(); }

  void validate() const {
    if (num_groups < 1) throw ValidationError("group map needs at least one group");
    if (static_cast<int>(sizes.size()) != num_groups ||
        static_cast<int>(utilities.size()) != num_groups)
      throw ValidationError("group map stat vectors do not match G");
    std::vector<int> count(num_groups, 0);
    for (int g : assignment) {
      if (g < 0 || g >= num_groups) throw ValidationError("group index out of range");
      ++count[g];
    }
    for (int g = 0; g < num_groups; ++g) {
      if (count[g] != sizes[g]) throw ValidationError("group size mismatch");
      if (sizes[g] < 1) throw ValidationError("empty utility group");
    }
  }
};

// Soft-combined repetition protection. cost_bits is the exact number of
// coded bits a token occupies; channel_uses divides it by the 16QAM symbol
// width, so tokens share symbols when concatenated.
struct ProtectionPolicy {
  int repetition = 1;

  int cost_bits(int bits_per_token) const noexcept { return bits_per_token * repetition; }
  double channel_uses(int bits_per_token) const noexcept {
    return static_cast<double>(cost_bits(bits_per_token)) / kBitsPerSymbol;
  }
  friend bool operator==(const ProtectionPolicy&, const ProtectionPolicy&) = default;
};

inline std::vector<ProtectionPolicy> default_policy_set() { return {{1}, {2}, {3}, {4}}; }

struct ModeProfile {
  SyncMode mode = SyncMode::Med;
  int budget = 0;  // channel uses per frame
  std::vector<ProtectionPolicy> protection;
  std::vector<double> thresholds;

  long long coded_bits(const GroupMap& gm, int bits_per_token) const {
    long long bits = 0;
    for (int g = 0; g < gm.num_groups; ++g)
      bits += static_cast<long long>(gm.sizes[g]) * protection[g].cost_bits(bits_per_token);
    return bits;
  }

  bool feasible(const GroupMap& gm, int bits_per_token) const {
    return coded_bits(gm, bits_per_token) <= static_cast<long long>(budget) * kBitsPerSymbol;
  }

  void validate(const GroupMap& gm) const {
    if (static_cast<int>(protection.size()) != gm.num_groups ||
        static_cast<int>(thresholds.size()) != gm.num_groups)
      throw ValidationError("mode profile length does not match G");
    for (double t : thresholds)
      if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("threshold outside [0,1]");
    for (auto& p : protection)
      if (p.repetition < 1) throw ValidationError("repetition factor must be positive");
  }
};

// ---- serialization -------------------------------------------------------

// One frame per line: {"t": <frame index>, "tokens": [ints]}; indices 0-based.
inline nlohmann::json grid_to_json(const TokenGrid& g, long long t) {
  return nlohmann::json{{"t", t}, {"tokens", g.tokens}};
}

inline TokenGrid grid_from_json(const nlohmann::json& j, int height, int width) {
  return TokenGrid(height, width, j.at("tokens").get<std::vector<Token>>());
}

inline nlohmann::json to_json(const GroupMap& gm) {
  return {{"G", gm.num_groups},
          {"assignment", gm.assignment},
          {"sizes", gm.sizes},
          {"utilities", gm.utilities}};
}

inline GroupMap group_map_from_json(const nlohmann::json& j) {
  GroupMap gm;
  gm.num_groups = j.at("G").get<int>();
  gm.assignment = j.at("assignment").get<std::vector<int>>();
  gm.sizes = j.at("sizes").get<std::vector<int>>();
  gm.utilities = j.at("utilities").get<std::vector<double>>();
  gm.validate();
  return gm;
}

inline nlohmann::json to_json(const ModeProfile& p) {
  std::vector<int> reps;
  for (auto& x : p.protection) reps.push_back(x.repetition);
  return {{"mode", std::string(to_string(p.mode))},
          {"budget", p.budget},
          {"repetition", reps},
          {"thresholds", p.thresholds}};
}

inline ModeProfile mode_profile_from_json(const nlohmann::json& j) {
  ModeProfile p;
  p.mode = parse_mode(j.at("mode").get<std::string>());
  p.budget = j.at("budget").get<int>();
  for (int r : j.at("repetition").get<std::vector<int>>()) p.protection.push_back({r});
  p.thresholds = j.at("thresholds").get<std::vector<double>>();
  return p;
}

}  // namespace twist
