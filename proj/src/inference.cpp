#include "case2/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "case2/parallel.hpp"
#include "case2/stats.hpp"

namespace case2 {

long long sign_score(const Study& study) {
  long long t = 0;
  for (const auto& set : study.sets) t += set.narrow_treated() ? 1 : 0;
  return t;
}

double per_set_upper(int z_plus, int kappa_c, int J, const SensitivityParams& params) {
  params.validate();
  const double zk = double(z_plus) * double(kappa_c);
  if (zk <= 0.0) return 0.0;
  const double m = params.multiplier();
  return m * zk / (m * zk + (double(J) - zk));
}

double per_set_lower(int z_plus, int kappa_c, int J, const SensitivityParams& params) {
  params.validate();
  const double zk = double(z_plus) * double(kappa_c);
  if (zk <= 0.0) return 0.0;
  return zk / (zk + (double(J) - zk) * params.gamma);
}

double poisson_binomial_tail(const std::vector<double>& probs, long long k) {
  if (k <= 0) return 1.0;
  if (k > (long long)probs.size()) return 0.0;

  // dp[c] = P(count == c) over processed terms for c < k; `top` absorbs the
  // >= k mass so the array stays O(k).
  std::vector<double> dp(std::size_t(k), 0.0);
  dp[0] = 1.0;
  KahanSum top;
  for (double p : probs) {
    if (p < 0.0) p = 0.0;
    if (p > 1.0) p = 1.0;
    const double q = 1.0 - p;
    top.add(dp[std::size_t(k) - 1] * p);
    for (std::size_t c = std::size_t(k) - 1; c >= 1; --c) {
      dp[c] = dp[c] * q + dp[c - 1] * p;
    }
    dp[0] *= q;
  }
  return clamp01(top.value());
}

double normal_tail(const std::vector<double>& probs, long long k, bool* degenerate) {
  KahanSum mean_acc, var_acc;
  for (double p : probs) {
    mean_acc.add(p);
    var_acc.add(p * (1.0 - p));
  }
  const double mean = mean_acc.value();
  const double var = var_acc.value();
  if (degenerate) *degenerate = false;
  if (var <= 0.0) {
    if (degenerate) *degenerate = true;
    return double(k) > mean ? 0.0 : 1.0;
  }
  const double z = (double(k) - mean) / std::sqrt(var);
  return clamp01(normal_upper_tail(z));
}

namespace {

// Step-2 state shared across the a-search: the unattributed bound for every
// set plus the attribution pool (treated-narrow sets) ordered by gap, ties by
// set order.
struct StudyBounds {
  long long t = 0;
  std::vector<double> pi_upper;       // lambda_barbar per set, study order
  std::vector<std::size_t> pool;      // treated-narrow set indices, ascending gap
  std::vector<PerSetBound> per_set;   // treated-narrow sets, study order
};

StudyBounds compute_bounds(const Study& study, const SensitivityParams& params) {
  StudyBounds b;
  b.t = sign_score(study);
  b.pi_upper.resize(study.sets.size());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < study.sets.size(); ++i) {
    const auto& set = study.sets[i];
    const double up = per_set_upper(set.z_plus(), 1, study.J, params);
    b.pi_upper[i] = up;
    if (set.narrow_treated()) {
      // L_i+ = 1, so the attributed-state bound is identically zero.
      const double lo = per_set_upper(set.z_plus(), 0, study.J, params);
      PerSetBound entry;
      entry.set_id = set.set_id;
      entry.lambda_bar = lo;
      entry.lambda_barbar = up;
      entry.gap = up - lo;
      entry.w_bar = lo * (1.0 - lo);
      entry.w_barbar = up * (1.0 - up);
      b.per_set.push_back(entry);
      pool.push_back(i);
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t x, std::size_t y) {
    return b.pi_upper[x] < b.pi_upper[y];
  });
  b.pool = std::move(pool);
  return b;
}

TestResult pvalue_from_bounds(const StudyBounds& bounds, long long a, TailMethod method) {
  TestResult res;
  res.a = a;
  res.t = bounds.t;
  res.statistic = bounds.t - a;
  res.method = method;
  res.per_set = bounds.per_set;

  if (a >= bounds.t) {
    res.statistic = std::max<long long>(res.statistic, 0);
    res.p_upper = 1.0;
    res.flag = TestFlag::certain;
    return res;
  }

  std::vector<double> pi = bounds.pi_upper;
  for (long long r = 0; r < a; ++r) pi[bounds.pool[std::size_t(r)]] = 0.0;

  KahanSum expectation;
  for (double p : pi) expectation.add(p);
  if (double(a) + expectation.value() >= double(bounds.t)) {
    res.p_upper = 1.0;
    res.flag = TestFlag::plausible_by_expectation;
    return res;
  }

  const long long k = bounds.t - a;
  res.p_upper = method == TailMethod::exact ? poisson_binomial_tail(pi, k)
                                            : clamp01(normal_tail(pi, k));
  return res;
}

}  // namespace

TestResult worst_case_pvalue(const Study& study, const SensitivityParams& params, long long a,
                             TailMethod method) {
  if (a < 0) throw Case2Error(Errc::invalid_params, "a must be nonnegative");
  params.validate();
  return pvalue_from_bounds(compute_bounds(study, params), a, method);
}

PredictionInterval prediction_interval(const Study& study, const SensitivityParams& params,
                                       double alpha, TailMethod method) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Case2Error(Errc::invalid_params, "alpha must be in (0, 1)");
  }
  params.validate();
  const StudyBounds bounds = compute_bounds(study, params);

  PredictionInterval interval;
  double prev = -1.0;
  for (long long a = 0;; ++a) {
    const TestResult res = pvalue_from_bounds(bounds, a, method);
    interval.trace.emplace_back(a, res.p_upper);
    // p is nondecreasing in a; a drop beyond rounding indicates a defect.
    if (res.p_upper < prev - 1e-9) {
      throw Case2Error(Errc::invalid_params, "p-value not monotone in a at a=" +
                                                 std::to_string(a));
    }
    prev = res.p_upper;
    if (res.p_upper > alpha) {
      interval.a_star = a;
      interval.p_at_a_star = res.p_upper;
      break;
    }
  }
  return interval;
}

std::vector<SweepRow> sweep(const Study& study, const std::vector<GridPoint>& grid, double alpha,
                            TailMethod method, unsigned threads) {
  if (grid.empty()) throw Case2Error(Errc::empty_input, "empty sensitivity grid");
  for (const auto& point : grid) point.params.validate();

  std::vector<SweepRow> rows(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    const GridPoint& point = grid[i];
    const double row_alpha = point.alpha.value_or(alpha);
    const PredictionInterval pi = prediction_interval(study, point.params, row_alpha, method);
    SweepRow row;
    row.gamma = point.params.gamma;
    row.theta = point.params.theta;
    row.delta = point.params.delta;
    row.alpha = row_alpha;
    row.a_star = pi.a_star;
    row.p_at_a_star = pi.p_at_a_star;
    row.method = tail_method_name(method);
    rows[i] = std::move(row);
  });
  return rows;
}

TwoByTwoSummary two_by_two_from_counts(long long narrow_treated, long long narrow_untreated,
                                       long long marginal_treated, long long marginal_untreated) {
  TwoByTwoSummary s;
  s.narrow_treated = narrow_treated;
  s.narrow_untreated = narrow_untreated;
  s.marginal_treated = marginal_treated;
  s.marginal_untreated = marginal_untreated;
  const bool zero_cell = narrow_treated == 0 || narrow_untreated == 0 || marginal_treated == 0 ||
                         marginal_untreated == 0;
  if (zero_cell) {
    s.haldane_corrected = true;
    s.odds_ratio = ((double(narrow_treated) + 0.5) * (double(marginal_untreated) + 0.5)) /
                   ((double(narrow_untreated) + 0.5) * (double(marginal_treated) + 0.5));
  } else {
    s.odds_ratio = (double(narrow_treated) * double(marginal_untreated)) /
                   (double(narrow_untreated) * double(marginal_treated));
  }
  return s;
}

TwoByTwoSummary two_by_two_summary(const std::vector<PopulationRecord>& pop) {
  if (pop.empty()) throw Case2Error(Errc::empty_input, "empty population");
  long long nt = 0, nu = 0, mt = 0, mu = 0;
  for (const auto& rec : pop) {
    if (rec.case_type == CaseType::narrow) {
      (rec.treated ? nt : nu) += 1;
    } else {
      (rec.treated ? mt : mu) += 1;
    }
  }
  return two_by_two_from_counts(nt, nu, mt, mu);
}

TwoByTwoSummary two_by_two_from_study(const Study& study) {
  long long nt = 0, nu = 0, mt = 0, mu = 0;
  for (const auto& set : study.sets) {
    for (const auto& u : set.units) {
      if (u.narrow) {
        (u.treated ? nt : nu) += 1;
      } else {
        (u.treated ? mt : mu) += 1;
      }
    }
  }
  return two_by_two_from_counts(nt, nu, mt, mu);
}

}  // namespace case2
