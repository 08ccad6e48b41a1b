#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "case2/csv.hpp"
#include "case2/types.hpp"

namespace case2 {

struct MatchSpec {
  int ratio = 1;  // marginal cases per narrow case (J - 1)
  std::vector<std::string> exact_on;
  std::vector<std::string> distance_covariates;
  std::optional<double> caliper;  // max distance per pair; off by default
};

struct DistanceMatrix {
  std::size_t rows = 0;  // narrow units
  std::size_t cols = 0;  // marginal units
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

struct MatchProblem {
  std::vector<std::string> narrow_ids;
  std::vector<std::string> marginal_ids;
  std::vector<std::string> narrow_strata;
  std::vector<std::string> marginal_strata;
  DistanceMatrix distances;
  bool singular_covariance = false;  // pseudo-inverse fallback engaged
};

struct MatchResult {
  std::map<std::string, std::vector<std::string>> assignments;
  double total_distance = 0.0;
  // total on the scaled integer costs the solver minimizes (distances
  // rounded at 1e-6 resolution); exact optimality is stated on this value
  long long total_scaled_cost = 0;
  bool singular_covariance = false;
};

struct BalanceRow {
  std::string covariate;  // indicator columns are written name=level
  double smd = 0.0;
  bool undefined = false;  // constant but unequal groups (infinite SMD)
};

// Squared rank-based Mahalanobis distance between every narrow and marginal
// unit: covariates are rank-transformed column-wise (average ranks for ties),
// the rank covariance is tie-adjusted to the untied-rank variance, and the
// quadratic form uses a pseudo-inverse. Categorical covariates are one-hot
// encoded before ranking. Invariant under strictly monotone transformations
// of any covariate column.
DistanceMatrix robust_mahalanobis(const Population& pop,
                                  const std::vector<std::string>& covariates,
                                  bool* singular = nullptr);

// Distances plus exact-match stratum labels for optimal_match.
MatchProblem build_match_problem(const Population& pop, const MatchSpec& spec);

// Minimum total-distance 1:ratio assignment subject to exact stratification,
// solved per stratum as a min-cost flow on integral costs. Optimality is
// exact, not heuristic.
MatchResult optimal_match(const MatchProblem& problem, const MatchSpec& spec,
                          unsigned threads = 0);

// Standardized mean differences over the matched units; categorical
// covariates expand to one indicator row per level.
std::vector<BalanceRow> balance_table(const Population& pop, const MatchResult& result);

// Matched-study view of the assignment: one set per narrow case, the source
// unit id carried as a categorical covariate.
Study assemble_matched_study(const Population& pop, const MatchResult& result);

}  // namespace case2
