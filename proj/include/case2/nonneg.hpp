#pragma once

#include <vector>

#include "case2/types.hpp"

namespace case2::nonneg {

// Collapsed 2x2 of the study: a = treated cases, b = control cases,
// c = treated non-events, d = control non-events.
struct TwoByTwo {
  long long a = 0;
  long long b = 0;
  long long c = 0;
  long long d = 0;
};

// b_i units removed from b, d_i from d: one way of placing the n units that
// violate the nonnegative-effect assumption.
struct Allocation {
  long long from_b = 0;
  long long from_d = 0;
};

// One-sided upper-tail hypergeometric p for the table adjusted by A
// attributed events and the given removal; computed in log space.
double fisher_p(const TwoByTwo& table, long long attributed, const Allocation& removal);

// The bare point probability of the adjusted table, exposed for inspection.
double fisher_point(const TwoByTwo& table, long long attributed, const Allocation& removal);

struct WorstAllocation {
  Allocation allocation;
  double p_max = 0.0;
};

// Maximizes fisher_p over the n+1 (or fewer, when b or d is small) feasible
// allocations; deterministic tie-break toward smaller from_b.
WorstAllocation worst_allocation(const TwoByTwo& table, long long n, long long attributed);

// Smallest A whose worst-allocation p exceeds alpha; {A >= a_star} covers the
// interval of the unknown true allocation by construction.
long long nonneg_interval(const TwoByTwo& table, long long n, double alpha);

// Stratified extension: per-stratum violation budgets, allocations chosen
// independently within each stratum to maximize the combined
// Mantel-Haenszel p (no cross-stratum coupling; capped enumeration).
struct StratumBudget {
  TwoByTwo table;
  long long n = 0;
  long long attributed = 0;
};

struct MantelHaenszelResult {
  double p_upper = 1.0;
  double statistic = 0.0;  // z score
  bool degenerate = false;
  std::vector<Allocation> allocations;
};

MantelHaenszelResult mantel_haenszel_worst(const std::vector<StratumBudget>& strata);

}  // namespace case2::nonneg
