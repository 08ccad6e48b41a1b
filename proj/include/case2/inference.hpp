#pragma once

#include <optional>
#include <string>
#include <vector>

#include "case2/csv.hpp"
#include "case2/types.hpp"

namespace case2 {

enum class TailMethod { exact, normal };

inline const char* tail_method_name(TailMethod m) {
  return m == TailMethod::exact ? "exact" : "normal";
}

// Worst-case null probability pair for one matched set with a treated narrow
// case: lambda_barbar bounds the unattributed state, lambda_bar the
// attributed state (identically 0 when each set holds a single narrow case).
// w_bar / w_barbar are the associated Bernoulli variances; they are reported
// for transparency but drive no decision.
struct PerSetBound {
  std::string set_id;
  double lambda_bar = 0.0;
  double lambda_barbar = 0.0;
  double gap = 0.0;
  double w_bar = 0.0;
  double w_barbar = 0.0;
};

enum class TestFlag {
  none,
  certain,                   // a >= T: nothing left to explain
  plausible_by_expectation,  // worst-case expectation already reaches T - a
};

inline const char* test_flag_name(TestFlag f) {
  switch (f) {
    case TestFlag::certain: return "certain";
    case TestFlag::plausible_by_expectation: return "plausible_by_expectation";
    default: return "none";
  }
}

struct TestResult {
  long long statistic = 0;  // T - a, the count the null must explain
  long long t = 0;          // observed sign score
  long long a = 0;
  double p_upper = 1.0;
  TailMethod method = TailMethod::exact;
  TestFlag flag = TestFlag::none;
  std::vector<PerSetBound> per_set;  // one entry per treated-narrow set, study order
};

struct PredictionInterval {
  long long a_star = 0;
  double p_at_a_star = 1.0;
  std::vector<std::pair<long long, double>> trace;  // every (a, p) evaluated
};

struct GridPoint {
  SensitivityParams params;
  std::optional<double> alpha;  // overrides the sweep-level alpha when set
};

struct TwoByTwoSummary {
  // rows: narrow, marginal; columns: treated, untreated
  long long narrow_treated = 0;
  long long narrow_untreated = 0;
  long long marginal_treated = 0;
  long long marginal_untreated = 0;
  double odds_ratio = 1.0;
  bool haldane_corrected = false;
};

// Number of matched sets whose narrow case is treated.
long long sign_score(const Study& study);

// Upper / lower bounds on the per-set success probability. kappa_c is the
// hypothesis-adjusted narrow indicator for the set (0 once attributed).
double per_set_upper(int z_plus, int kappa_c, int J, const SensitivityParams& params);
double per_set_lower(int z_plus, int kappa_c, int J, const SensitivityParams& params);

// Exact P(sum of independent Bernoulli(probs) >= k) by convolution, O(I*k).
double poisson_binomial_tail(const std::vector<double>& probs, long long k);

// Large-sample 1 - Phi((k - sum p) / sqrt(sum p(1-p))). When the variance is
// zero the tail is 0 or 1 by the sign of k - sum p and *degenerate is set.
double normal_tail(const std::vector<double>& probs, long long k, bool* degenerate = nullptr);

// Worst-case upper bound on the one-sided significance level for the
// hypothesis that exactly `a` treated narrow cases were caused by treatment,
// maximized set-by-set (asymptotic separability).
TestResult worst_case_pvalue(const Study& study, const SensitivityParams& params, long long a,
                             TailMethod method = TailMethod::exact);

// Smallest a whose worst-case p exceeds alpha; the one-sided prediction
// interval for the attributable effect is {A : A >= a_star}.
PredictionInterval prediction_interval(const Study& study, const SensitivityParams& params,
                                       double alpha, TailMethod method = TailMethod::exact);

std::vector<SweepRow> sweep(const Study& study, const std::vector<GridPoint>& grid, double alpha,
                            TailMethod method = TailMethod::exact, unsigned threads = 0);

TwoByTwoSummary two_by_two_summary(const std::vector<PopulationRecord>& pop);
TwoByTwoSummary two_by_two_from_counts(long long narrow_treated, long long narrow_untreated,
                                       long long marginal_treated, long long marginal_untreated);

// The same 2x2 computed from a matched study's units.
TwoByTwoSummary two_by_two_from_study(const Study& study);

}  // namespace case2
