#include <gtest/gtest.h>

#include <cmath>

#include "twist/phy.hpp"

using namespace twist;

namespace {

double qfunc(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

std::array<std::uint8_t, 4> nibble(int v) {
  return {static_cast<std::uint8_t>((v >> 3) & 1), static_cast<std::uint8_t>((v >> 2) & 1),
          static_cast<std::uint8_t>((v >> 1) & 1), static_cast<std::uint8_t>(v & 1)};
}

// Measured uncoded bit error rate with hard LLR-sign decisions.
double measure_ber(double snr_db, long long bits, std::uint64_t seed) {
  const auto alphabet = TokenAlphabet::make(16);  // one token per symbol
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<Token> tok(0, 15);
  long long errors = 0, done = 0;
  std::uint64_t frame = 0;
  while (done < bits) {
    std::vector<Token> t(1024);
    for (auto& x : t) x = tok(rng);
    const std::vector<int> reps(t.size(), 1);
    const auto tx = encode_tokens(t, reps, alphabet);
    const auto rx = transmit(tx.symbols, {ChannelKind::Awgn, snr_db}, derive_seed(seed, {frame++}));
    const auto soft = token_posteriors(soft_demodulate(rx, tx.layout).llr, alphabet);
    for (std::size_t i = 0; i < t.size(); ++i) errors += std::popcount(soft.hard[i] ^ t[i]);
    done += static_cast<long long>(t.size()) * 4;
  }
  return static_cast<double>(errors) / static_cast<double>(done);
}

}  // namespace

TEST(Qam, UnitAverageEnergy) {
  double e = 0.0;
  for (int v = 0; v < 16; ++v) {
    const auto b = nibble(v);
    e += std::norm(qam16_map(std::span<const std::uint8_t, 4>(b)));
  }
  EXPECT_NEAR(e / 16.0, 1.0, 1e-12);
}

TEST(Qam, GrayNeighborsDifferInOneBit) {
  const std::array<std::array<int, 2>, 4> order{{{0, 0}, {0, 1}, {1, 1}, {1, 0}}};
  for (int i = 0; i + 1 < 4; ++i) {
    EXPECT_LT(gray_level(order[i][0], order[i][1]), gray_level(order[i + 1][0], order[i + 1][1]));
    EXPECT_EQ((order[i][0] != order[i + 1][0]) + (order[i][1] != order[i + 1][1]), 1);
  }
}

TEST(Qam, AxisLlrsMatchTwoDimensionalMaxLog) {
  Rng rng = make_rng(1);
  std::normal_distribution<double> n(0.0, 0.6);
  std::uniform_real_distribution<double> amp(0.2, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Complex y(n(rng), n(rng));
    const double a = amp(rng), s2 = 0.3;
    const auto li = axis_llrs(y.real(), a, s2), lq = axis_llrs(y.imag(), a, s2);
    const std::array<double, 4> lib{li[0], li[1], lq[0], lq[1]};
    for (int bit = 0; bit < 4; ++bit) {
      double d0 = INFINITY, d1 = INFINITY;
      for (int v = 0; v < 16; ++v) {
        const auto b = nibble(v);
        const double d = std::norm(y - a * qam16_map(std::span<const std::uint8_t, 4>(b)));
        (b[bit] ? d1 : d0) = std::min(b[bit] ? d1 : d0, d);
      }
      EXPECT_NEAR(lib[bit], (d0 - d1) / s2, 1e-9);
    }
  }
}

TEST(Framing, LayoutOffsetsAndPadding) {
  const auto a = TokenAlphabet::make(64);
  const std::vector<Token> t{1, 2, 3};
  const std::vector<int> r{2, 1, 3};
  const auto tx = encode_tokens(t, r, a);
  EXPECT_EQ(tx.layout.bit_offset, (std::vector<int>{0, 12, 18}));
  EXPECT_EQ(tx.layout.payload_bits, 36);
  EXPECT_EQ(tx.channel_uses(), 9);
  const auto tx2 = encode_tokens(std::vector<Token>{5}, std::vector<int>{1}, a);
  EXPECT_EQ(tx2.channel_uses(), 2);  // 6 bits padded to 8
  EXPECT_THROW(encode_tokens(std::vector<Token>{64}, std::vector<int>{1}, a), InvalidTokenError);
}

TEST(Framing, InfeasibleProfileReportsMinimum) {
  const auto a = TokenAlphabet::make(64);
  const GroupMap gm{1, {0, 0, 0, 0}, {4}, {1.0}};
  const ModeProfile p{SyncMode::Low, 11, {{2}}, {0.0}};
  try {
    encode_frame(TokenGrid(2, 2, Token{0}), gm, p, a);
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.min_required(), 12);
  }
}

TEST(Channel, NoiselessRoundTripIsExactAndConfident) {
  const auto a = TokenAlphabet::make(64);
  Rng rng = make_rng(2);
  std::uniform_int_distribution<Token> tok(0, 63);
  TokenGrid g(4, 4);
  for (auto& t : g.tokens) t = tok(rng);
  const GroupMap gm{1, std::vector<int>(16, 0), {16}, {1.0}};
  const ModeProfile p{SyncMode::Med, 72, {{3}}, {0.5}};
  for (auto kind : {ChannelKind::Awgn, ChannelKind::RayleighBlock}) {
    const auto res = phy_roundtrip(g, gm, p, a, {kind, 10.0, true}, 7);
    EXPECT_EQ(res.soft.hard, g.tokens);
    for (double c : res.soft.confidence) EXPECT_EQ(c, 1.0);
  }
}

TEST(Channel, SharedStreamGivesCommonFadingAndNoisePrefix) {
  std::vector<Complex> s1(10, Complex(kQamScale, kQamScale)), s2(30, Complex(-kQamScale, kQamScale));
  const ChannelConfig ch{ChannelKind::RayleighBlock, 5.0};
  const auto a = transmit(s1, ch, 99), b = transmit(s2, ch, 99);
  EXPECT_EQ(a.h, b.h);
  EXPECT_EQ(a.noise_fingerprint, b.noise_fingerprint);
  for (std::size_t k = 0; k < s1.size(); ++k) {
    EXPECT_NEAR((a.samples[k] - a.h * s1[k]).real(), (b.samples[k] - b.h * s2[k]).real(), 1e-12);
    EXPECT_NEAR((a.samples[k] - a.h * s1[k]).imag(), (b.samples[k] - b.h * s2[k]).imag(), 1e-12);
  }
  EXPECT_NE(transmit(s1, ch, 100).noise_fingerprint, a.noise_fingerprint);
}

TEST(Channel, RayleighGainHasUnitMeanPower) {
  double p = 0.0;
  const int n = 20000;
  const std::vector<Complex> one{Complex(1.0, 0.0)};
  for (int k = 0; k < n; ++k) p += std::norm(transmit(one, {ChannelKind::RayleighBlock, 10.0}, k).h);
  EXPECT_NEAR(p / n, 1.0, 0.03);
}

TEST(Channel, RejectsNonFiniteSnr) {
  ChannelConfig ch{ChannelKind::Awgn, INFINITY};
  EXPECT_THROW(ch.noise_variance(), ConfigError);
  ch.noiseless = true;
  EXPECT_EQ(ch.noise_variance(), 0.0);
}

TEST(Demod, DegenerateChannelYieldsZeroLlrs) {
  bool degenerate = false;
  const std::vector<Complex> r{Complex(0.3, -0.1)};
  const auto llr = symbol_llrs(r, Complex(0.0, 0.0), 0.1, &degenerate);
  EXPECT_TRUE(degenerate);
  for (double v : llr) EXPECT_EQ(v, 0.0);
}

TEST(Demod, RepetitionLlrsAreSummed) {
  // token 0: copies at bits [0,2) and [2,4); token 1: one copy at [4,6); 2 pad bits
  const FrameLayout layout{2, {0, 4}, {2, 1}, 6};
  const std::vector<double> raw{1, 2, 10, 20, -3, 4, 99, 99};
  EXPECT_EQ(combine_repetitions(raw, layout), (std::vector<double>{11, 22, -3, 4}));
}

TEST(Posterior, MatchesBruteForceEnumeration) {
  const auto a = TokenAlphabet::make(16);
  Rng rng = make_rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> llr(8);
    for (auto& v : llr) v = n(rng);
    const auto f = token_posteriors(llr, a);
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> p(16);
      double total = 0.0;
      for (int k = 0; k < 16; ++k) {
        double v = 1.0;
        for (int j = 0; j < 4; ++j) {
          const double p1 = 1.0 / (1.0 + std::exp(-llr[i * 4 + j]));
          v *= ((k >> (3 - j)) & 1) ? p1 : 1.0 - p1;
        }
        total += (p[k] = v);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      EXPECT_EQ(f.hard[i], static_cast<Token>(best));
      EXPECT_NEAR(f.confidence[i], p[best], 1e-12);
      const auto lib = token_posterior_vector(f, i);
      for (int k = 0; k < 16; ++k) EXPECT_NEAR(lib[k], p[k], 1e-12);
    }
  }
}

TEST(Posterior, ZeroLlrResolvesToBitZero) {
  const auto a = TokenAlphabet::make(4);
  const std::vector<double> llr{0.0, 0.0};
  const auto f = token_posteriors(llr, a);
  EXPECT_EQ(f.hard[0], 0u);
  EXPECT_NEAR(f.confidence[0], 0.25, 1e-15);
  EXPECT_THROW(token_posteriors(std::vector<double>{1.0, 2.0, 3.0}, a), DimensionError);
}

TEST(Posterior, ExtremeLlrsStayFinite) {
  const auto a = TokenAlphabet::make(4);
  const auto f = token_posteriors(std::vector<double>{800.0, -800.0}, a);
  EXPECT_EQ(f.hard[0], 2u);
  EXPECT_EQ(f.confidence[0], 1.0);
  EXPECT_TRUE(std::isfinite(f.log_confidence[0]));
}

TEST(Ber, UncodedAwgnMatchesQFunction) {
  for (double snr : {8.0, 12.0}) {
    const double d = std::sqrt(std::pow(10.0, snr / 10.0) / 5.0);
    const double analytic = 0.75 * (qfunc(d) + qfunc(3 * d));
    EXPECT_NEAR(measure_ber(snr, 1'000'000, 5) / analytic, 1.0, 0.08) << snr << " dB";
  }
}

TEST(Profile, RepetitionReducesErrorsAndNoiselessIsClean) {
  const auto a = TokenAlphabet::make(64);
  const auto pol = default_policy_set();
  const std::vector<double> snr{4.0, 8.0};
  const auto tab = profile_error_rates(pol, snr, ChannelKind::Awgn, a, 20000, 3);
  for (std::size_t s = 0; s < snr.size(); ++s)
    for (std::size_t p = 0; p + 1 < pol.size(); ++p) EXPECT_LT(tab.rate[p + 1][s], tab.rate[p][s]);
  const auto clean = profile_error_rates(pol, snr, ChannelKind::RayleighBlock, a, 2000, 3, true);
  for (auto& row : clean.rate)
    for (double r : row) EXPECT_EQ(r, 0.0);
  EXPECT_EQ(tab.snr_index(8.0), 1u);
  EXPECT_THROW(tab.snr_index(6.0), ConfigError);
  EXPECT_THROW(profile_error_rates(pol, snr, ChannelKind::Awgn, a, 0, 1), ConfigError);
}

TEST(Profile, JsonRoundTrip) {
  const auto a = TokenAlphabet::make(16);
  const auto pol = default_policy_set();
  const std::vector<double> snr{6.0};
  const auto tab = profile_error_rates(pol, snr, ChannelKind::RayleighBlock, a, 500, 9);
  const auto back = error_table_from_json(to_json(tab));
  EXPECT_EQ(back.rate, tab.rate);
  EXPECT_EQ(back.channel, tab.channel);
  EXPECT_EQ(back.seed, tab.seed);
}
