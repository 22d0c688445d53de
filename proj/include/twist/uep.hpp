#pragma once

// Mode-conditioned unequal error protection: pick one policy per utility
// group minimizing sum_g W_g eps_g(pi_g) subject to sum_g L_g c(pi_g) <= N.

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "twist/core_types.hpp"
#include "twist/phy.hpp"

namespace twist {

struct UepInstance {
  std::vector<long long> group_sizes;       // L_g
  std::vector<double> group_utilities;      // W_g
  std::vector<long long> policy_costs;      // c(pi) per token, any integer unit
  std::vector<std::vector<double>> eps;     // [group][policy]
  long long budget = 0;                     // same unit as the costs

  int groups() const noexcept { return static_cast<int>(group_sizes.size()); }
  int policies() const noexcept { return static_cast<int>(policy_costs.size()); }

  void validate() const {
    if (group_sizes.empty() || policy_costs.empty()) throw ConfigError("empty UEP instance");
    if (group_utilities.size() != group_sizes.size() || eps.size() != group_sizes.size())
      throw ConfigError("UEP group vectors differ in length");
    for (auto c : policy_costs)
      if (c <= 0) throw ConfigError("policy costs must be positive");
    for (auto& row : eps) {
      if (static_cast<int>(row.size()) != policies()) throw ConfigError("eps row length mismatch");
      for (double e : row)
        if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("eps values must lie in [0,1]");
    }
  }

  long long min_required_budget() const {
    long long cmin = *std::min_element(policy_costs.begin(), policy_costs.end());
    long long total = 0;
    for (auto l : group_sizes) total += l * cmin;
    return total;
  }
};

struct UepSolution {
  std::vector<int> policy;  // index into the instance's policy list, per group
  double objective = 0.0;
};

// Exact DP over (group, remaining budget). Among optimal assignments the
// lexicographically smallest policy-index vector is returned.
inline UepSolution solve_uep(const UepInstance& inst) {
  inst.validate();
  const long long need = inst.min_required_budget();
  if (need > inst.budget)
    throw InfeasibleError("UEP budget " + std::to_string(inst.budget) +
                              " is below the minimum required " + std::to_string(need),
                          need);
  const int G = inst.groups(), P = inst.policies();
  const auto N = static_cast<std::size_t>(inst.budget);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // best[g][rem]: optimal cost of groups g..G-1 with rem budget units left.
  std::vector<std::vector<double>> best(G + 1, std::vector<double>(N + 1, kInf));
  std::fill(best[G].begin(), best[G].end(), 0.0);
  auto term = [&](int g, int p, std::size_t rem) {
    const long long c = inst.group_sizes[g] * inst.policy_costs[p];
    if (c > static_cast<long long>(rem)) return kInf;
    const double tail = best[g + 1][rem - static_cast<std::size_t>(c)];
    return tail == kInf ? kInf : inst.group_utilities[g] * inst.eps[g][p] + tail;
  };
  for (int g = G - 1; g >= 0; --g)
    for (std::size_t rem = 0; rem <= N; ++rem) {
      double v = kInf;
      for (int p = 0; p < P; ++p) v = std::min(v, term(g, p, rem));
      best[g][rem] = v;
    }
  UepSolution sol;
  sol.objective = best[0][N];
  std::size_t rem = N;
  for (int g = 0; g < G; ++g) {
    for (int p = 0; p < P; ++p)
      if (term(g, p, rem) == best[g][rem]) {
        sol.policy.push_back(p);
        rem -= static_cast<std::size_t>(inst.group_sizes[g] * inst.policy_costs[p]);
        break;
      }
  }
  return sol;
}

inline double uep_objective(const UepInstance& inst, std::span<const int> policy) {
  double v = 0.0;
  for (int g = 0; g < inst.groups(); ++g) v += inst.group_utilities[g] * inst.eps[g][policy[g]];
  return v;
}

// Per-frame channel-use budgets: N(low) = low_factor B0, N(med) = B0,
// N(high) = high_factor B0.
struct ModeBudgets {
  int nominal = 512;
  double low_factor = 0.5;
  double high_factor = 2.0;

  int budget(SyncMode m) const {
    switch (m) {
      case SyncMode::Low: return static_cast<int>(std::lround(low_factor * nominal));
      case SyncMode::Med: return nominal;
      case SyncMode::High: return static_cast<int>(std::lround(high_factor * nominal));
    }
    return nominal;
  }
  double normalized_cost(SyncMode m) const {
    return static_cast<double>(budget(m)) / static_cast<double>(nominal);
  }
};

inline UepInstance make_uep_instance(const GroupMap& gm, const ErrorRateTable& table,
                                     std::span<const ProtectionPolicy> policies, double design_snr_db,
                                     int budget, const TokenAlphabet& alphabet) {
  const auto si = table.snr_index(design_snr_db);
  UepInstance inst;
  for (int g = 0; g < gm.num_groups; ++g) {
    inst.group_sizes.push_back(gm.sizes[g]);
    inst.group_utilities.push_back(gm.utilities[g]);
    std::vector<double> row;
    for (std::size_t p = 0; p < policies.size(); ++p) {
      std::size_t col = p;
      if (p >= table.repetition.size() || table.repetition[p] != policies[p].repetition)
        throw ConfigError("error-rate table does not match the policy set");
      row.push_back(table.eps(g, static_cast<int>(col), si));
    }
    inst.eps.push_back(std::move(row));
  }
  for (auto& p : policies) inst.policy_costs.push_back(p.cost_bits(alphabet.bits_per_token));
  inst.budget = static_cast<long long>(budget) * kBitsPerSymbol;
  return inst;
}

struct ModeProtection {
  std::array<ModeProfile, 3> profiles;
  std::array<double, 3> objective{};
};

// One UEP solve per mode. Thresholds are left at zero for later calibration.
inline ModeProtection build_mode_profiles(const GroupMap& gm, const ErrorRateTable& table,
                                          std::span<const ProtectionPolicy> policies,
                                          const ModeBudgets& budgets, double design_snr_db,
                                          const TokenAlphabet& alphabet) {
  ModeProtection out;
  for (auto m : kAllModes) {
    const auto inst = make_uep_instance(gm, table, policies, design_snr_db, budgets.budget(m), alphabet);
    const auto sol = solve_uep(inst);
    ModeProfile prof;
    prof.mode = m;
    prof.budget = budgets.budget(m);
    for (int p : sol.policy) prof.protection.push_back(policies[p]);
    prof.thresholds.assign(gm.num_groups, 0.0);
    out.profiles[index_of(m)] = std::move(prof);
    out.objective[index_of(m)] = sol.objective;
  }
  return out;
}

// Same policy for every group: the costliest one that fits the budget.
inline UepSolution uniform_solution(const UepInstance& inst) {
  inst.validate();
  long long total = 0;
  for (auto l : inst.group_sizes) total += l;
  int chosen = -1;
  for (int p = 0; p < inst.policies(); ++p)
    if (total * inst.policy_costs[p] <= inst.budget &&
        (chosen < 0 || inst.policy_costs[p] > inst.policy_costs[chosen]))
      chosen = p;
  if (chosen < 0) throw InfeasibleError("no uniform policy fits the budget", inst.min_required_budget());
  UepSolution sol;
  sol.policy.assign(inst.groups(), chosen);
  sol.objective = uep_objective(inst, sol.policy);
  return sol;
}

inline ModeProtection build_uniform_profiles(const GroupMap& gm, const ErrorRateTable& table,
                                             std::span<const ProtectionPolicy> policies,
                                             const ModeBudgets& budgets, double design_snr_db,
                                             const TokenAlphabet& alphabet) {
  ModeProtection out;
  for (auto m : kAllModes) {
    const auto inst = make_uep_instance(gm, table, policies, design_snr_db, budgets.budget(m), alphabet);
    const auto sol = uniform_solution(inst);
    ModeProfile prof;
    prof.mode = m;
    prof.budget = budgets.budget(m);
    for (int p : sol.policy) prof.protection.push_back(policies[p]);
    prof.thresholds.assign(gm.num_groups, 0.0);
    out.profiles[index_of(m)] = std::move(prof);
    out.objective[index_of(m)] = sol.objective;
  }
  return out;
}

}  // namespace twist
