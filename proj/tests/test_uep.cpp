#include <gtest/gtest.h>

#include "twist/app_head.hpp"
#include "twist/uep.hpp"

using namespace twist;

namespace {

// Enumerates all |P|^G assignments; keeps the lexicographically first optimum.
UepSolution brute_force(const UepInstance& inst) {
  const int G = inst.groups(), P = inst.policies();
  UepSolution best;
  best.objective = INFINITY;
  std::vector<int> a(G, 0);
  for (;;) {
    long long cost = 0;
    for (int g = 0; g < G; ++g) cost += inst.group_sizes[g] * inst.policy_costs[a[g]];
    if (cost <= inst.budget) {
      const double v = uep_objective(inst, a);
      if (v < best.objective) best = {a, v};
    }
    int g = G - 1;
    while (g >= 0 && ++a[g] == P) a[g--] = 0;
    if (g < 0) break;
  }
  return best;
}

UepInstance random_instance(Rng& rng, int G, int P) {
  std::uniform_int_distribution<long long> size(1, 6), cost(1, 5);
  std::uniform_real_distribution<double> u(0.0, 3.0), e(0.0, 1.0);
  UepInstance inst;
  for (int g = 0; g < G; ++g) {
    inst.group_sizes.push_back(size(rng));
    inst.group_utilities.push_back(u(rng));
    std::vector<double> row;
    for (int p = 0; p < P; ++p) row.push_back(e(rng));
    inst.eps.push_back(row);
  }
  for (int p = 0; p < P; ++p) inst.policy_costs.push_back(cost(rng));
  long long lo = inst.min_required_budget(), hi = 0;
  const long long cmax = *std::max_element(inst.policy_costs.begin(), inst.policy_costs.end());
  for (auto l : inst.group_sizes) hi += l * cmax;
  inst.budget = std::uniform_int_distribution<long long>(lo, hi)(rng);
  return inst;
}

}  // namespace

TEST(Uep, DynamicProgramMatchesExhaustiveSearch) {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int G = 1 + trial % 4, P = 1 + (trial / 4) % 4;
    const auto inst = random_instance(rng, G, P);
    const auto dp = solve_uep(inst);
    const auto bf = brute_force(inst);
    EXPECT_NEAR(dp.objective, bf.objective, 1e-12);
    EXPECT_EQ(dp.policy, bf.policy);
    EXPECT_NEAR(uep_objective(inst, dp.policy), dp.objective, 1e-12);
  }
}

TEST(Uep, ObjectiveNonIncreasingInBudget) {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 3, 4);
    double prev = INFINITY;
    for (long long n = inst.min_required_budget(); n < inst.min_required_budget() + 60; n += 3) {
      inst.budget = n;
      const double v = solve_uep(inst).objective;
      EXPECT_LE(v, prev + 1e-12);
      prev = v;
    }
  }
}

TEST(Uep, InfeasibleBudgetReportsMinimum) {
  UepInstance inst{{4, 2}, {1.0, 1.0}, {6, 12}, {{0.5, 0.1}, {0.5, 0.1}}, 35};
  try {
    solve_uep(inst);
    FAIL();
  } catch (const InfeasibleError& e) {
    EXPECT_EQ(e.min_required(), 36);
  }
  inst.budget = 36;
  EXPECT_EQ(solve_uep(inst).policy, (std::vector<int>{0, 0}));
}

TEST(Uep, PrefersProtectingHighUtilityGroup) {
  // room to upgrade exactly one group of two tokens
  UepInstance inst{{2, 2}, {5.0, 1.0}, {1, 2}, {{0.4, 0.1}, {0.4, 0.1}}, 6};
  EXPECT_EQ(solve_uep(inst).policy, (std::vector<int>{1, 0}));
}

TEST(Uep, ValidationErrors) {
  UepInstance ok{{1}, {1.0}, {1}, {{0.1}}, 1};
  EXPECT_NO_THROW(solve_uep(ok));
  auto bad = ok;
  bad.policy_costs = {0};
  EXPECT_THROW(solve_uep(bad), ConfigError);
  bad = ok;
  bad.eps = {{1.5}};
  EXPECT_THROW(solve_uep(bad), ConfigError);
  bad = ok;
  bad.group_utilities = {};
  EXPECT_THROW(solve_uep(bad), ConfigError);
  EXPECT_THROW(solve_uep(UepInstance{}), ConfigError);
}

TEST(Budgets, ModeBudgetsAndCost) {
  const ModeBudgets b;
  EXPECT_EQ(b.budget(SyncMode::Low), 256);
  EXPECT_EQ(b.budget(SyncMode::Med), 512);
  EXPECT_EQ(b.budget(SyncMode::High), 1024);
  EXPECT_DOUBLE_EQ(b.normalized_cost(SyncMode::Low), 0.5);
  EXPECT_DOUBLE_EQ(b.normalized_cost(SyncMode::High), 2.0);
}

namespace {

struct Fixture {
  GroupMap gm;
  ErrorRateTable tab;
  TokenAlphabet a = TokenAlphabet::make(64);
  std::vector<ProtectionPolicy> pol = default_policy_set();
};

Fixture make_fixture(int G) {
  Fixture f;
  UtilityProfile prof;
  for (int i = 0; i < 144; ++i) prof.mean.push_back(1.0 / (1 + i % 17));
  f.gm = build_group_map(prof, G);
  f.tab.snr_db = {10.0};
  f.tab.repetition = {1, 2, 3, 4};
  f.tab.rate = {{0.3}, {0.15}, {0.08}, {0.05}};
  return f;
}

}  // namespace

TEST(ModeProfiles, FeasibleForEveryMode) {
  const auto f = make_fixture(4);
  const auto mp = build_mode_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 10.0, f.a);
  for (auto m : kAllModes) {
    const auto& p = mp.profiles[index_of(m)];
    EXPECT_EQ(p.mode, m);
    EXPECT_TRUE(p.feasible(f.gm, 6));
    EXPECT_NO_THROW(p.validate(f.gm));
  }
  // More budget never hurts.
  EXPECT_GE(mp.objective[0], mp.objective[1]);
  EXPECT_GE(mp.objective[1], mp.objective[2]);
  // Desk numbers: LOW fits only r=1, HIGH affords r=4 everywhere.
  for (auto& p : mp.profiles[0].protection) EXPECT_EQ(p.repetition, 1);
  for (auto& p : mp.profiles[2].protection) EXPECT_EQ(p.repetition, 4);
}

TEST(ModeProfiles, SingleGroupUniformEqualsUep) {
  const auto f = make_fixture(1);
  const auto twist = build_mode_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 10.0, f.a);
  const auto uni = build_uniform_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 10.0, f.a);
  for (int m = 0; m < 3; ++m) {
    EXPECT_EQ(twist.profiles[m].protection, uni.profiles[m].protection);
    EXPECT_DOUBLE_EQ(twist.objective[m], uni.objective[m]);
  }
}

TEST(ModeProfiles, UniformNeverBeatsUep) {
  const auto f = make_fixture(4);
  const auto twist = build_mode_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 10.0, f.a);
  const auto uni = build_uniform_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 10.0, f.a);
  for (int m = 0; m < 3; ++m) {
    EXPECT_LE(twist.objective[m], uni.objective[m] + 1e-12);
    const auto& r = uni.profiles[m].protection;
    for (auto& p : r) EXPECT_EQ(p, r.front());
  }
}

TEST(ModeProfiles, MismatchedTableIsRejected) {
  auto f = make_fixture(2);
  f.tab.repetition = {1, 2, 4, 8};
  EXPECT_THROW(build_mode_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 10.0, f.a), ConfigError);
  f = make_fixture(2);
  EXPECT_THROW(build_mode_profiles(f.gm, f.tab, f.pol, ModeBudgets{}, 12.0, f.a), ConfigError);
  ModeBudgets tiny;
  tiny.nominal = 300;  // LOW = 150 channel uses < 216 needed
  EXPECT_THROW(build_mode_profiles(f.gm, f.tab, f.pol, tiny, 10.0, f.a), InfeasibleError);
}
