#pragma once

#include <string>
#include <vector>

#include "case2/csv.hpp"
#include "case2/types.hpp"

namespace case2::calibration {

// Dense per-unit design for the random-intercept logistic model of the
// narrow-case indicator. Column 0 is the intercept, column 1 the treatment
// indicator; categorical covariates are one-hot encoded against a reference
// level.
struct CalibrationData {
  std::vector<std::string> column_names;
  std::vector<std::vector<double>> x;  // row per unit
  std::vector<int> y;                  // narrow indicator
  std::vector<int> group;              // 0-based group index
  std::vector<std::string> group_ids;
  int treatment_column = 1;

  std::size_t n_units() const { return x.size(); }
  std::size_t n_groups() const { return group_ids.size(); }
};

CalibrationData build_calibration_data(const std::vector<PopulationRecord>& records,
                                       const std::vector<CovariateColumn>& schema,
                                       const std::vector<std::string>& covariates);

// Matched studies carry exactly the set_id grouping the model needs.
CalibrationData build_calibration_data(const Study& study,
                                       const std::vector<std::string>& covariates);

struct CalibrationFit {
  std::vector<std::string> coefficient_names;
  std::vector<double> coefficients;
  double random_intercept_sd = 0.0;
  bool converged = false;
  double log_likelihood = 0.0;
  int iterations = 0;
  int quadrature_nodes = 21;
  int treatment_column = 1;
};

// Maximum marginal likelihood with a per-group normal random intercept,
// integrated by adaptive Gauss-Hermite quadrature; Newton-type outer
// optimization with finite-difference derivatives. Convergence when the
// gradient max-norm drops below `tol` (fit.converged records whether the
// iteration cap was hit instead).
CalibrationFit fit_random_intercept_logistic(const CalibrationData& data, int nodes = 21,
                                             int max_iter = 200, double tol = 1e-6);

// Ordinary logistic regression (sigma forced to zero); used as a
// cross-check and for degenerate data.
CalibrationFit fit_fixed_logistic(const CalibrationData& data, int max_iter = 200,
                                  double tol = 1e-6);

double log_likelihood(const CalibrationData& data, const std::vector<double>& beta, double sigma,
                      int nodes);

struct RatioBounds {
  double theta_hat = 1.0;  // max over subjects of P(narrow|Z=1)/P(narrow|Z=0)
  double delta_hat = 1.0;  // max over subjects of P(marginal|Z=0)/P(marginal|Z=1)
};

// Fitted-ratio maxima over all subjects, with each group's random intercept
// plugged in at its posterior mode.
RatioBounds ratio_bounds(const CalibrationFit& fit, const CalibrationData& data);

}  // namespace case2::calibration
