#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "case2/calibration.hpp"
#include "case2/csv.hpp"
#include "case2/types.hpp"

namespace case2::simulate {

// Covariate generators: "normal", "uniform" (numeric), "binary", "cat<k>"
// (categorical with k levels).
struct CovariateSpec {
  std::string name;
  std::string distribution;
};

struct SimConfig {
  long long n_sets = 100;
  int j = 3;
  double gamma = 1.0;
  double theta = 1.0;
  double delta = 1.0;
  double alpha_z = 0.0;
  std::vector<CovariateSpec> covariates;
  // 0 = null (theta_t == theta_c), 1 = the (Theta, Delta)-extremal theta_t;
  // intermediate values scale the case-type shift between the two.
  double true_attributable_rate = 0.0;
  std::uint64_t seed = 1;
  double theta_c_min = 0.2;
  double theta_c_max = 0.8;
  bool include_truth = false;

  void validate() const;
};

// Units drawn under the sensitivity model: u ~ U[0,1], treatment with logit
// alpha_z + log(gamma) u, potential case types coupled comonotonically with
// P(narrow) theta_c under control and theta_t under treatment. Ground-truth
// columns (truth_*) appear only when include_truth is set. Deterministic
// given the seed; n_units = 0 means n_sets * j.
Population simulate_population(const SimConfig& cfg, long long n_units = 0);

struct MatchedSim {
  Study study;
  long long true_attributable = 0;  // realized A among the study's narrow cases
};

// Forms n_sets matched sets by pairing each simulated narrow case with j-1
// marginal cases from the same exact-covariate stratum.
MatchedSim simulate_matched(const SimConfig& cfg);

// Random-intercept logistic data with known coefficients, for the
// calibration recovery checks.
struct LogisticGroupsConfig {
  long long n_groups = 100;
  int group_size = 4;
  double intercept = 0.0;
  std::vector<double> x_coefficients;  // one N(0,1) covariate per entry
  double treatment_coefficient = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 1;
};

calibration::CalibrationData simulate_logistic_groups(const LogisticGroupsConfig& cfg);

}  // namespace case2::simulate
