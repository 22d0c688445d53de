#include <gtest/gtest.h>

#include "twist/metrics.hpp"

using namespace twist;

namespace {

// Per-class F1 from an explicit confusion matrix.
double confusion_f1(const std::vector<std::vector<long>>& cm, int cls) {
  long tp = cm[cls][cls], fp = 0, fn = 0;
  for (std::size_t k = 0; k < cm.size(); ++k)
    if (static_cast<int>(k) != cls) {
      fp += cm[k][cls];
      fn += cm[cls][k];
    }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

std::vector<Label> random_labels(Rng& rng, int n) {
  std::uniform_int_distribution<int> b(0, 1), d(0, 2);
  std::vector<Label> out(n);
  for (auto& y : out) y = {b(rng), b(rng), d(rng)};
  return out;
}

}  // namespace

TEST(F1, MatchesConfusionMatrixOracle) {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pred = random_labels(rng, 40), truth = random_labels(rng, 40);
    std::vector<std::vector<long>> car(2, std::vector<long>(2)), ped = car, den(3, std::vector<long>(3));
    for (std::size_t n = 0; n < pred.size(); ++n) {
      ++car[truth[n].car][pred[n].car];
      ++ped[truth[n].ped][pred[n].ped];
      ++den[truth[n].den][pred[n].den];
    }
    const auto s = macro_f1(pred, truth);
    EXPECT_NEAR(s.car, confusion_f1(car, 1), 1e-12);
    EXPECT_NEAR(s.ped, confusion_f1(ped, 1), 1e-12);
    const double d = (confusion_f1(den, 0) + confusion_f1(den, 1) + confusion_f1(den, 2)) / 3.0;
    EXPECT_NEAR(s.density, d, 1e-12);
    EXPECT_NEAR(s.macro, (s.car + s.ped + d) / 3.0, 1e-12);
  }
}

TEST(F1, PerfectAndZeroDivisionConventions) {
  const std::vector<Label> y{{0, 0, 0}, {0, 0, 0}};
  // no positives anywhere: absent classes score 1
  EXPECT_DOUBLE_EQ(macro_f1(y, y).macro, 1.0);
  const std::vector<Label> p{{1, 0, 0}, {1, 0, 0}};
  EXPECT_DOUBLE_EQ(macro_f1(p, y).car, 0.0);
  EXPECT_DOUBLE_EQ(class_f1(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(class_f1(0, 3, 0), 0.0);
  EXPECT_THROW(macro_f1(std::vector<Label>{}, std::vector<Label>{}), ValidationError);
  EXPECT_THROW(macro_f1(p, std::vector<Label>{{0, 0, 0}}), ValidationError);
}

TEST(UrgentF1, EqualsFilterThenScore) {
  Rng rng = make_rng(2);
  const auto pred = random_labels(rng, 30), truth = random_labels(rng, 30);
  std::vector<int> q(30);
  std::vector<Label> fp, ft;
  for (int n = 0; n < 30; ++n) {
    q[n] = n % 3 == 0;
    if (q[n]) {
      fp.push_back(pred[n]);
      ft.push_back(truth[n]);
    }
  }
  const auto u = urgent_macro_f1(pred, truth, q);
  ASSERT_TRUE(u);
  EXPECT_DOUBLE_EQ(u->macro, macro_f1(fp, ft).macro);
  EXPECT_FALSE(urgent_macro_f1(pred, truth, std::vector<int>(30, 0)));
}

TEST(Tsmr, CountsMismatchedPositions) {
  const TokenGrid a(2, 2, std::vector<Token>{1, 2, 3, 4}), b(2, 2, std::vector<Token>{1, 0, 3, 0});
  EXPECT_DOUBLE_EQ(tsmr(a, b), 0.5);
  EXPECT_DOUBLE_EQ(tsmr(a, a), 0.0);
  EXPECT_THROW(tsmr(a, TokenGrid(1, 4)), DimensionError);
}

TEST(Auer, AcceptedErrorsOnly) {
  const TokenGrid src(1, 4, std::vector<Token>{1, 2, 3, 4});
  const std::vector<Token> hard{1, 9, 9, 4};
  const GatedTokenGrid g{1, 4, {Token{1}, Token{9}, std::nullopt, Token{4}}};
  EXPECT_DOUBLE_EQ(*auer(hard, g, src), 1.0 / 3.0);
  const GatedTokenGrid none{1, 4, {std::nullopt, std::nullopt, std::nullopt, std::nullopt}};
  EXPECT_FALSE(auer(hard, none, src));
  // with nothing erased AUER is the raw token error rate
  EXPECT_DOUBLE_EQ(*auer(hard, GatedTokenGrid::accept_all(TokenGrid(1, 4, hard)), src), 0.5);
}

TEST(Cost, MeanNormalizedBudget) {
  const std::vector<SyncMode> m{SyncMode::Low, SyncMode::High, SyncMode::High, SyncMode::Med};
  EXPECT_DOUBLE_EQ(normalized_cost(m, ModeBudgets{}), (0.5 + 2 + 2 + 1) / 4.0);
  EXPECT_THROW(normalized_cost(std::vector<SyncMode>{}, ModeBudgets{}), ValidationError);
}

TEST(Rolling, TrailingWindowExactMatch) {
  const std::vector<Label> t{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 0, 2}};
  const std::vector<Label> p{{0, 0, 0}, {1, 0, 1}, {1, 1, 0}, {0, 0, 2}};
  const auto r = rolling_correctness(p, t, 2);
  EXPECT_EQ(r, (std::vector<double>{1.0, 0.5, 0.5, 1.0}));
}

TEST(Stats, MeanAndSampleStd) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto s = mean_std(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_EQ(mean_std(std::vector<double>{7.0}).std, 0.0);
  EXPECT_EQ(mean_std(std::vector<double>{}).n, 0u);
}
