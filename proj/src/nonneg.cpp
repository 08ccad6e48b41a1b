#include "case2/nonneg.hpp"

#include <algorithm>
#include <cmath>

#include "case2/stats.hpp"

namespace case2::nonneg {

namespace {

struct Adjusted {
  long long a, b, c, d;
};

Adjusted adjust(const TwoByTwo& table, long long attributed, const Allocation& removal) {
  if (table.a < 0 || table.b < 0 || table.c < 0 || table.d < 0) {
    throw Case2Error(Errc::invalid_allocation, "table counts must be nonnegative");
  }
  if (removal.from_b < 0 || removal.from_d < 0 || removal.from_b > table.b ||
      removal.from_d > table.d) {
    throw Case2Error(Errc::invalid_allocation,
                     "allocation removes more control cases than exist");
  }
  if (attributed < 0 || attributed > table.a) {
    throw Case2Error(Errc::invalid_allocation, "attributed count exceeds treated cases");
  }
  return {table.a - attributed, table.b - removal.from_b, table.c, table.d - removal.from_d};
}

double log_point(const Adjusted& t, long long x) {
  const long long r1 = t.a + t.b;
  const long long r2 = t.c + t.d;
  const long long c1 = t.a + t.c;
  const long long n = r1 + r2;
  return log_choose(r1, x) + log_choose(r2, c1 - x) - log_choose(n, c1);
}

}  // namespace

double fisher_point(const TwoByTwo& table, long long attributed, const Allocation& removal) {
  const Adjusted t = adjust(table, attributed, removal);
  return std::exp(log_point(t, t.a));
}

double fisher_p(const TwoByTwo& table, long long attributed, const Allocation& removal) {
  const Adjusted t = adjust(table, attributed, removal);
  const long long r1 = t.a + t.b;
  const long long c1 = t.a + t.c;
  const long long hi = std::min(r1, c1);
  KahanSum tail;
  for (long long x = t.a; x <= hi; ++x) {
    const double lp = log_point(t, x);
    if (std::isfinite(lp)) tail.add(std::exp(lp));
  }
  return clamp01(tail.value());
}

WorstAllocation worst_allocation(const TwoByTwo& table, long long n, long long attributed) {
  if (n < 0) throw Case2Error(Errc::invalid_allocation, "n must be nonnegative");
  if (n > table.b + table.d) {
    throw Case2Error(Errc::infeasible, "n exceeds the " + std::to_string(table.b + table.d) +
                                           " control cases available");
  }
  WorstAllocation best;
  best.p_max = -1.0;
  const long long lo = std::max<long long>(0, n - table.d);
  const long long hi = std::min(n, table.b);
  for (long long from_b = lo; from_b <= hi; ++from_b) {
    const Allocation alloc{from_b, n - from_b};
    const double p = fisher_p(table, attributed, alloc);
    if (p > best.p_max) {
      best.p_max = p;
      best.allocation = alloc;
    }
  }
  return best;
}

long long nonneg_interval(const TwoByTwo& table, long long n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Case2Error(Errc::invalid_params, "alpha must be in (0, 1)");
  }
  for (long long attributed = 0;; ++attributed) {
    if (worst_allocation(table, n, attributed).p_max > alpha) return attributed;
    if (attributed >= table.a) return table.a;  // tail at a'=0 is 1, unreachable
  }
}

MantelHaenszelResult mantel_haenszel_worst(const std::vector<StratumBudget>& strata) {
  if (strata.empty()) throw Case2Error(Errc::empty_input, "no strata");
  long long total_enumerations = 0;

  MantelHaenszelResult result;
  double sum_a = 0.0, sum_mu = 0.0, sum_var = 0.0;
  for (const auto& stratum : strata) {
    if (stratum.n > stratum.table.b + stratum.table.d) {
      throw Case2Error(Errc::infeasible, "stratum budget exceeds its control cases");
    }
    const long long lo = std::max<long long>(0, stratum.n - stratum.table.d);
    const long long hi = std::min(stratum.n, stratum.table.b);
    total_enumerations += hi - lo + 1;
    if (total_enumerations > 1000000) {
      throw Case2Error(Errc::too_large, "stratified allocation enumeration exceeds 1e6");
    }
    // worst per stratum: maximize the null mean, then the variance
    double best_mu = -1.0, best_var = 0.0;
    Allocation best_alloc;
    Adjusted best_t{0, 0, 0, 0};
    for (long long from_b = lo; from_b <= hi; ++from_b) {
      const Allocation alloc{from_b, stratum.n - from_b};
      const Adjusted t = adjust(stratum.table, stratum.attributed, alloc);
      const double n_tot = double(t.a + t.b + t.c + t.d);
      if (n_tot <= 0) continue;
      const double r1 = double(t.a + t.b), r2 = double(t.c + t.d);
      const double c1 = double(t.a + t.c), c2 = double(t.b + t.d);
      const double mu = r1 * c1 / n_tot;
      const double var = n_tot > 1 ? r1 * r2 * c1 * c2 / (n_tot * n_tot * (n_tot - 1.0)) : 0.0;
      if (mu > best_mu || (mu == best_mu && var > best_var)) {
        best_mu = mu;
        best_var = var;
        best_alloc = alloc;
        best_t = t;
      }
    }
    result.allocations.push_back(best_alloc);
    sum_a += double(best_t.a);
    sum_mu += best_mu < 0.0 ? 0.0 : best_mu;
    sum_var += best_mu < 0.0 ? 0.0 : best_var;
  }

  if (sum_var <= 0.0) {
    result.degenerate = true;
    result.statistic = 0.0;
    result.p_upper = sum_a > sum_mu ? 0.0 : 1.0;
    return result;
  }
  result.statistic = (sum_a - sum_mu) / std::sqrt(sum_var);
  result.p_upper = clamp01(normal_upper_tail(result.statistic));
  return result;
}

}  // namespace case2::nonneg
