#pragma once

// Digital physical layer: token bits -> repetition protection -> Gray 16QAM
// -> flat block-fading channel -> coherent max-log demodulation -> combined
// bit LLRs -> independent-bit token posteriors.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twist/core_types.hpp"

namespace twist {

using Complex = std::complex<double>;

enum class ChannelKind { Awgn, RayleighBlock };

inline std::string_view to_string(ChannelKind k) noexcept {
  return k == ChannelKind::Awgn ? "awgn" : "rayleigh";
}

inline ChannelKind parse_channel(std::string_view s) {
  if (s == "awgn") return ChannelKind::Awgn;
  if (s == "rayleigh") return ChannelKind::RayleighBlock;
  throw ConfigError("unknown channel kind '" + std::string(s) + "'");
}

struct ChannelConfig {
  ChannelKind kind = ChannelKind::Awgn;
  double snr_db = 10.0;
  bool noiseless = false;  // forces sigma^2 = 0

  double noise_variance() const {
    if (noiseless) return 0.0;
    if (!std::isfinite(snr_db)) throw ConfigError("SNR must be finite");
    return std::pow(10.0, -snr_db / 10.0);
  }
};

// ---- Gray 16QAM ------------------------------------------------------------

inline const double kQamScale = 1.0 / std::sqrt(10.0);

// Per-axis Gray labels (hi, lo): 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
constexpr double gray_level(int hi, int lo) noexcept {
  return hi ? (lo ? 1.0 : 3.0) : (lo ? -1.0 : -3.0);
}

// Bits b0 b1 select the in-phase level, b2 b3 the quadrature level.
inline Complex qam16_map(std::span<const std::uint8_t, 4> bits) {
  return {gray_level(bits[0], bits[1]) * kQamScale, gray_level(bits[2], bits[3]) * kQamScale};
}

// Max-log LLRs ln P(bit=1)/P(bit=0) for the two bits of one axis. y is the
// de-rotated coordinate, amp the fading magnitude, sigma2 the complex noise
// variance (sigma2/2 per axis).
inline std::array<double, 2> axis_llrs(double y, double amp, double sigma2) {
  static constexpr std::array<std::array<int, 2>, 4> kLabels{{{0, 0}, {0, 1}, {1, 1}, {1, 0}}};
  std::array<double, 2> llr{};
  for (int bit = 0; bit < 2; ++bit) {
    double d0 = INFINITY, d1 = INFINITY;
    for (auto& lab : kLabels) {
      const double s = gray_level(lab[0], lab[1]) * kQamScale * amp;
      const double d = (y - s) * (y - s);
      (lab[bit] ? d1 : d0) = std::min(lab[bit] ? d1 : d0, d);
    }
    if (sigma2 > 0.0) {
      llr[bit] = (d0 - d1) / sigma2;
    } else {
      llr[bit] = d0 < d1 ? -INFINITY : (d1 < d0 ? INFINITY : 0.0);
    }
  }
  return llr;
}

// ---- framing ---------------------------------------------------------------

struct FrameLayout {
  int bits_per_token = 0;
  std::vector<int> bit_offset;   // first coded bit of each token
  std::vector<int> repetition;   // copies of the token word
  int payload_bits = 0;          // before padding

  std::size_t tokens() const noexcept { return bit_offset.size(); }
};

struct TxFrame {
  std::vector<Complex> symbols;
  FrameLayout layout;

  int channel_uses() const noexcept { return static_cast<int>(symbols.size()); }
};

// Each token's b-bit word is repeated r times; words are concatenated in
// position order, zero-padded to a multiple of 4 bits and Gray-mapped.
inline TxFrame encode_tokens(std::span<const Token> tokens, std::span<const int> repetition,
                             const TokenAlphabet& alphabet) {
  const int b = alphabet.bits_per_token;
  TxFrame tx;
  tx.layout.bits_per_token = b;
  tx.layout.bit_offset.resize(tokens.size());
  tx.layout.repetition.assign(repetition.begin(), repetition.end());
  std::vector<std::uint8_t> bits;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!alphabet.contains(tokens[i]))
      throw InvalidTokenError("token " + std::to_string(tokens[i]) + " outside alphabet");
    tx.layout.bit_offset[i] = static_cast<int>(bits.size());
    const auto word = alphabet.to_bits(tokens[i]);
    for (int c = 0; c < repetition[i]; ++c) bits.insert(bits.end(), word.begin(), word.end());
  }
  tx.layout.payload_bits = static_cast<int>(bits.size());
  while (bits.size() % kBitsPerSymbol) bits.push_back(0);
  tx.symbols.reserve(bits.size() / kBitsPerSymbol);
  for (std::size_t k = 0; k < bits.size(); k += kBitsPerSymbol)
    tx.symbols.push_back(qam16_map(std::span<const std::uint8_t, 4>(bits.data() + k, 4)));
  return tx;
}

inline TxFrame encode_frame(const TokenGrid& grid, const GroupMap& gm, const ModeProfile& profile,
                            const TokenAlphabet& alphabet) {
  if (gm.positions() != grid.size()) throw DimensionError("group map does not match grid");
  if (!profile.feasible(gm, alphabet.bits_per_token)) {
    const long long need = (profile.coded_bits(gm, alphabet.bits_per_token) + kBitsPerSymbol - 1) /
                           kBitsPerSymbol;
    throw InfeasibleError("profile for mode " + std::string(to_string(profile.mode)) + " needs " +
                              std::to_string(need) + " channel uses, budget is " +
                              std::to_string(profile.budget),
                          need);
  }
  std::vector<int> reps(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    reps[i] = profile.protection[gm.assignment[i]].repetition;
  return encode_tokens(grid.tokens, reps, alphabet);
}

// ---- channel ---------------------------------------------------------------

struct Received {
  std::vector<Complex> samples;
  Complex h{1.0, 0.0};
  double noise_variance = 0.0;
  std::uint64_t noise_fingerprint = 0;  // hash of h and the leading unit-noise draws
};

// r = h s + w. The stream seed fixes h and the unit-variance noise draws, so
// frames sent under different modes share the fading and the noise prefix.
inline Received transmit(std::span<const Complex> symbols, const ChannelConfig& ch,
                         std::uint64_t stream_seed) {
  Rng rng = make_rng(stream_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Received rx;
  const double hr = n(rng), hi = n(rng);
  rx.h = ch.kind == ChannelKind::RayleighBlock ? Complex(hr, hi) / std::sqrt(2.0) : Complex(1.0, 0.0);
  rx.noise_variance = ch.noise_variance();
  const double sd = std::sqrt(rx.noise_variance / 2.0);
  std::uint64_t fp = fnv1a64(std::string_view(reinterpret_cast<const char*>(&rx.h), sizeof(Complex)));
  rx.samples.resize(symbols.size());
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    const double a = n(rng), b = n(rng);
    if (k < 8) {
      const double ab[2] = {a, b};
      fp = fnv1a64(std::string_view(reinterpret_cast<const char*>(ab), sizeof ab), fp);
    }
    rx.samples[k] = rx.h * symbols[k] + Complex(sd * a, sd * b);
  }
  rx.noise_fingerprint = fp;
  return rx;
}

inline constexpr double kDegenerateChannel = 1e-9;

struct Demodulated {
  std::vector<double> llr;  // combined, per token bit (token-major, MSB first)
  bool degenerate = false;
};

// Per channel-bit max-log LLRs after matched rotation r h*/|h|.
inline std::vector<double> symbol_llrs(std::span<const Complex> r, Complex h, double sigma2,
                                       bool* degenerate = nullptr) {
  std::vector<double> out(r.size() * kBitsPerSymbol, 0.0);
  const double amp = std::abs(h);
  if (amp < kDegenerateChannel) {
    if (degenerate) *degenerate = true;
    return out;
  }
  if (degenerate) *degenerate = false;
  const Complex rot = std::conj(h) / amp;
  for (std::size_t k = 0; k < r.size(); ++k) {
    const Complex y = r[k] * rot;
    const auto li = axis_llrs(y.real(), amp, sigma2);
    const auto lq = axis_llrs(y.imag(), amp, sigma2);
    out[k * 4 + 0] = li[0];
    out[k * 4 + 1] = li[1];
    out[k * 4 + 2] = lq[0];
    out[k * 4 + 3] = lq[1];
  }
  return out;
}

// Soft combining: the LLR of a token bit is the sum over its copies. Padding
// bits are dropped.
inline std::vector<double> combine_repetitions(std::span<const double> channel_llrs,
                                               const FrameLayout& layout) {
  const int b = layout.bits_per_token;
  std::vector<double> out(layout.tokens() * b, 0.0);
  for (std::size_t i = 0; i < layout.tokens(); ++i)
    for (int c = 0; c < layout.repetition[i]; ++c)
      for (int j = 0; j < b; ++j) out[i * b + j] += channel_llrs[layout.bit_offset[i] + c * b + j];
  return out;
}

inline Demodulated soft_demodulate(const Received& rx, const FrameLayout& layout) {
  Demodulated d;
  const auto raw = symbol_llrs(rx.samples, rx.h, rx.noise_variance, &d.degenerate);
  d.llr = combine_repetitions(raw, layout);
  return d;
}

// ---- token posteriors --------------------------------------------------------

struct SoftTokenFrame {
  int bits_per_token = 0;
  std::vector<Token> hard;
  std::vector<double> confidence;      // max_k p(k) in (0, 1]
  std::vector<double> log_confidence;
  std::vector<double> bit_p1;          // p(bit = 1), token-major

  std::size_t size() const noexcept { return hard.size(); }
};

inline double log_sigmoid(double x) {
  if (x == INFINITY) return 0.0;
  if (x == -INFINITY) return -INFINITY;
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return std::exp(log_sigmoid(x)); }

// Independent-bit posterior p(k) = prod_j p(bit_j = k_j). The bitwise MAP
// word maximizes it, and its probability is the confidence. LLR exactly 0
// resolves to bit 0.
inline SoftTokenFrame token_posteriors(std::span<const double> llr, const TokenAlphabet& alphabet) {
  const int b = alphabet.bits_per_token;
  if (llr.size() % b) throw DimensionError("LLR count is not a multiple of bits per token");
  SoftTokenFrame f;
  f.bits_per_token = b;
  const std::size_t L = llr.size() / b;
  f.hard.resize(L);
  f.confidence.resize(L);
  f.log_confidence.resize(L);
  f.bit_p1.resize(llr.size());
  for (std::size_t i = 0; i < L; ++i) {
    Token t = 0;
    double lc = 0.0;
    for (int j = 0; j < b; ++j) {
      const double x = llr[i * b + j];
      f.bit_p1[i * b + j] = sigmoid(x);
      const int bit = x > 0.0 ? 1 : 0;
      t = (t << 1) | static_cast<Token>(bit);
      lc += log_sigmoid(std::abs(x));
    }
    f.hard[i] = t;
    f.log_confidence[i] = lc;
    f.confidence[i] = std::exp(lc);
  }
  return f;
}

// Full posterior of one token, for oracles and the Bayes-gate check.
inline std::vector<double> token_posterior_vector(const SoftTokenFrame& f, std::size_t i) {
  const int b = f.bits_per_token;
  std::vector<double> p(std::size_t{1} << b);
  for (std::size_t k = 0; k < p.size(); ++k) {
    double v = 1.0;
    for (int j = 0; j < b; ++j) {
      const int bit = static_cast<int>((k >> (b - 1 - j)) & 1u);
      const double p1 = f.bit_p1[i * b + j];
      v *= bit ? p1 : 1.0 - p1;
    }
    p[k] = v;
  }
  return p;
}

// One full PHY pass for a frame.
struct PhyResult {
  TxFrame tx;
  Received rx;
  SoftTokenFrame soft;
};

inline PhyResult phy_roundtrip(const TokenGrid& grid, const GroupMap& gm, const ModeProfile& profile,
                               const TokenAlphabet& alphabet, const ChannelConfig& ch,
                               std::uint64_t stream_seed) {
  PhyResult res;
  res.tx = encode_frame(grid, gm, profile, alphabet);
  res.rx = transmit(res.tx.symbols, ch, stream_seed);
  const auto d = soft_demodulate(res.rx, res.tx.layout);
  res.soft = token_posteriors(d.llr, alphabet);
  return res;
}

// ---- offline error-rate profiling ----------------------------------------------

// Token error rate after combining, before gating, per (policy, SNR). Under
// repetition protection the rate does not depend on the group, so one row
// serves every group.
struct ErrorRateTable {
  ChannelKind channel = ChannelKind::Awgn;
  std::vector<double> snr_db;
  std::vector<int> repetition;
  std::vector<std::vector<double>> rate;  // [policy][snr]
  long long tokens_per_point = 0;
  std::uint64_t seed = 0;

  double eps(int /*group*/, int policy, std::size_t snr_index) const {
    return rate.at(policy).at(snr_index);
  }

  std::size_t snr_index(double snr) const {
    for (std::size_t s = 0; s < snr_db.size(); ++s)
      if (std::abs(snr_db[s] - snr) < 1e-9) return s;
    throw ConfigError("error-rate table does not cover SNR " + std::to_string(snr) + " dB");
  }
};

inline ErrorRateTable profile_error_rates(std::span<const ProtectionPolicy> policies,
                                          std::span<const double> snrs, ChannelKind kind,
                                          const TokenAlphabet& alphabet, long long tokens,
                                          std::uint64_t seed, bool noiseless = false,
                                          int tokens_per_frame = 64) {
  if (tokens < 1) throw ConfigError("error-rate profiling needs at least one trial");
  ErrorRateTable tab;
  tab.channel = kind;
  tab.snr_db.assign(snrs.begin(), snrs.end());
  tab.tokens_per_point = tokens;
  tab.seed = seed;
  for (auto& p : policies) tab.repetition.push_back(p.repetition);
  tab.rate.assign(policies.size(), std::vector<double>(snrs.size(), 0.0));
  std::uniform_int_distribution<Token> tok(0, static_cast<Token>(alphabet.codebook_size - 1));
  for (std::size_t s = 0; s < snrs.size(); ++s) {
    const ChannelConfig ch{kind, snrs[s], noiseless};
    for (std::size_t p = 0; p < policies.size(); ++p) {
      // Paired streams: the same tokens and channel draws for every policy.
      Rng src = make_rng(derive_seed(seed, {s, 0x70}));
      long long errors = 0, done = 0;
      std::uint64_t frame = 0;
      while (done < tokens) {
        const int n = static_cast<int>(std::min<long long>(tokens_per_frame, tokens - done));
        std::vector<Token> t(n);
        for (auto& x : t) x = tok(src);
        std::vector<int> reps(n, policies[p].repetition);
        const auto tx = encode_tokens(t, reps, alphabet);
        const auto rx = transmit(tx.symbols, ch, derive_seed(seed, {s, frame++}));
        const auto soft = token_posteriors(soft_demodulate(rx, tx.layout).llr, alphabet);
        for (int i = 0; i < n; ++i) errors += soft.hard[i] != t[i];
        done += n;
      }
      tab.rate[p][s] = static_cast<double>(errors) / static_cast<double>(tokens);
    }
  }
  return tab;
}

inline nlohmann::json to_json(const ErrorRateTable& t) {
  return {{"channel", std::string(to_string(t.channel))},
          {"snr_db", t.snr_db},
          {"repetition", t.repetition},
          {"rate", t.rate},
          {"tokens_per_point", t.tokens_per_point},
          {"seed", t.seed}};
}

inline ErrorRateTable error_table_from_json(const nlohmann::json& j) {
  ErrorRateTable t;
  t.channel = parse_channel(j.at("channel").get<std::string>());
  t.snr_db = j.at("snr_db").get<std::vector<double>>();
  t.repetition = j.at("repetition").get<std::vector<int>>();
  t.rate = j.at("rate").get<std::vector<std::vector<double>>>();
  t.tokens_per_point = j.at("tokens_per_point").get<long long>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

}  // namespace twist
