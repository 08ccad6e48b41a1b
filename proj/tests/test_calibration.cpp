#include <doctest.h>

#include <cmath>

#include "case2/calibration.hpp"
#include "case2/simulate.hpp"
#include "case2/stats.hpp"

using namespace case2;
using calibration::CalibrationData;
using calibration::CalibrationFit;

TEST_SUITE_BEGIN("calibration");

namespace {

// hand-rolled Newton/IRLS logistic regression used as an independent check
std::vector<double> irls_logistic(const CalibrationData& data) {
  const std::size_t p = data.column_names.size();
  std::vector<double> beta(p, 0.0);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> grad(p, 0.0);
    std::vector<std::vector<double>> hess(p, std::vector<double>(p, 0.0));
    for (std::size_t r = 0; r < data.n_units(); ++r) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += beta[j] * data.x[r][j];
      const double mu = expit(eta);
      for (std::size_t j = 0; j < p; ++j) {
        grad[j] += (data.y[r] - mu) * data.x[r][j];
        for (std::size_t k = 0; k < p; ++k) {
          hess[j][k] += mu * (1.0 - mu) * data.x[r][j] * data.x[r][k];
        }
      }
    }
    // Gaussian elimination on the (small) normal equations
    std::vector<std::vector<double>> aug = hess;
    for (std::size_t j = 0; j < p; ++j) aug[j].push_back(grad[j]);
    for (std::size_t col = 0; col < p; ++col) {
      std::size_t pivot = col;
      for (std::size_t r2 = col + 1; r2 < p; ++r2) {
        if (std::abs(aug[r2][col]) > std::abs(aug[pivot][col])) pivot = r2;
      }
      std::swap(aug[col], aug[pivot]);
      for (std::size_t r2 = 0; r2 < p; ++r2) {
        if (r2 == col || aug[col][col] == 0.0) continue;
        const double f = aug[r2][col] / aug[col][col];
        for (std::size_t c2 = col; c2 <= p; ++c2) aug[r2][c2] -= f * aug[col][c2];
      }
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double step = aug[j][p] / aug[j][j];
      beta[j] += step;
      shift = std::max(shift, std::abs(step));
    }
    if (shift < 1e-12) break;
  }
  return beta;
}

CalibrationData intercept_only_data(const std::vector<int>& ys) {
  CalibrationData data;
  data.column_names = {"(intercept)"};
  data.treatment_column = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    data.x.push_back({1.0});
    data.y.push_back(ys[i]);
    data.group.push_back(int(i % 4));
  }
  data.group_ids = {"g1", "g2", "g3", "g4"};
  return data;
}

}  // namespace

TEST_CASE("intercept-only fit recovers logit of the sample mean") {
  std::vector<int> ys;
  for (int i = 0; i < 40; ++i) ys.push_back(i < 13 ? 1 : 0);
  const auto fit = calibration::fit_random_intercept_logistic(intercept_only_data(ys));
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0] - logit(13.0 / 40.0)) < 1e-6);
  CHECK(fit.random_intercept_sd < 0.05);
}

TEST_CASE("sigma forced to zero reproduces plain logistic regression") {
  simulate::LogisticGroupsConfig cfg;
  cfg.n_groups = 60;
  cfg.group_size = 5;
  cfg.intercept = -0.4;
  cfg.x_coefficients = {0.7, -0.5, 0.3};
  cfg.treatment_coefficient = 0.9;
  cfg.sigma = 0.0;
  cfg.seed = 404;
  const auto data = simulate::simulate_logistic_groups(cfg);

  const auto fit = calibration::fit_fixed_logistic(data);
  const auto reference = irls_logistic(data);
  REQUIRE(fit.coefficients.size() == reference.size());
  for (std::size_t j = 0; j < reference.size(); ++j) {
    CHECK(fit.coefficients[j] == doctest::Approx(reference[j]).epsilon(1e-4));
  }
}

TEST_CASE("doubling quadrature nodes leaves the log-likelihood unchanged at desk scale") {
  simulate::LogisticGroupsConfig cfg;
  cfg.n_groups = 40;
  cfg.group_size = 4;
  cfg.intercept = -0.2;
  cfg.treatment_coefficient = 0.5;
  cfg.sigma = 0.8;
  cfg.seed = 11;
  const auto data = simulate::simulate_logistic_groups(cfg);
  const auto fit = calibration::fit_random_intercept_logistic(data, 21);
  const double ll21 = calibration::log_likelihood(data, fit.coefficients,
                                                  fit.random_intercept_sd, 21);
  const double ll41 = calibration::log_likelihood(data, fit.coefficients,
                                                  fit.random_intercept_sd, 41);
  CHECK(std::abs(ll21 - ll41) < 1e-6);
}

TEST_CASE("parameter recovery on simulated data") {
  simulate::LogisticGroupsConfig cfg;
  cfg.n_groups = 100;
  cfg.group_size = 4;
  cfg.intercept = -0.5;
  cfg.x_coefficients = {0.8};
  cfg.treatment_coefficient = 0.6;
  cfg.sigma = 0.7;
  cfg.seed = 2024;
  const auto data = simulate::simulate_logistic_groups(cfg);
  const auto fit = calibration::fit_random_intercept_logistic(data);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0] - cfg.intercept) < 0.45);
  CHECK(std::abs(fit.coefficients[1] - cfg.treatment_coefficient) < 0.45);
  CHECK(std::abs(fit.coefficients[2] - cfg.x_coefficients[0]) < 0.45);
  CHECK(std::abs(fit.random_intercept_sd - cfg.sigma) < 0.5);
}

TEST_CASE("perfect separation is detected and named") {
  CalibrationData data;
  data.column_names = {"(intercept)", "treated", "marker"};
  data.treatment_column = 1;
  for (int i = 0; i < 40; ++i) {
    const double marker = i % 2 == 0 ? 1.0 : 0.0;
    data.x.push_back({1.0, i % 3 == 0 ? 1.0 : 0.0, marker});
    data.y.push_back(marker > 0.5 ? 1 : 0);  // outcome determined by marker
    data.group.push_back(i % 5);
  }
  data.group_ids = {"g1", "g2", "g3", "g4", "g5"};
  try {
    calibration::fit_random_intercept_logistic(data);
    FAIL("expected Separation");
  } catch (const Case2Error& e) {
    CHECK(e.code() == Errc::separation);
    CHECK(std::string(e.what()).find("marker") != std::string::npos);
  }
}

TEST_CASE("too few groups") {
  CalibrationData data;
  data.column_names = {"(intercept)"};
  data.x = {{1.0}, {1.0}};
  data.y = {0, 1};
  data.group = {0, 0};
  data.group_ids = {"only"};
  CHECK_THROWS_AS(calibration::fit_random_intercept_logistic(data), Case2Error);
}

TEST_CASE("ratio_bounds") {
  SUBCASE("zero treatment coefficient gives exactly (1, 1)") {
    simulate::LogisticGroupsConfig cfg;
    cfg.n_groups = 30;
    cfg.group_size = 4;
    cfg.sigma = 0.5;
    cfg.seed = 5;
    const auto data = simulate::simulate_logistic_groups(cfg);
    CalibrationFit fit;
    fit.coefficient_names = data.column_names;
    fit.coefficients = {0.3, 0.0};  // treatment coefficient exactly zero
    fit.random_intercept_sd = 0.5;
    fit.converged = true;
    fit.treatment_column = 1;
    const auto bounds = calibration::ratio_bounds(fit, data);
    CHECK(bounds.theta_hat == 1.0);
    CHECK(bounds.delta_hat == 1.0);
  }
  SUBCASE("single subject with known coefficients matches hand computation") {
    CalibrationData data;
    data.column_names = {"(intercept)", "treated"};
    data.treatment_column = 1;
    data.x = {{1.0, 1.0}, {1.0, 0.0}};
    data.y = {1, 0};
    data.group = {0, 1};
    data.group_ids = {"g1", "g2"};
    CalibrationFit fit;
    fit.coefficient_names = data.column_names;
    fit.coefficients = {-0.3, 0.8};
    fit.random_intercept_sd = 0.0;  // no random effect: modes are zero
    fit.converged = true;
    fit.treatment_column = 1;
    const auto bounds = calibration::ratio_bounds(fit, data);
    const double p1 = expit(-0.3 + 0.8);
    const double p0 = expit(-0.3);
    CHECK(bounds.theta_hat == doctest::Approx(p1 / p0).epsilon(1e-12));
    CHECK(bounds.delta_hat == doctest::Approx((1 - p0) / (1 - p1)).epsilon(1e-12));
  }
  SUBCASE("positive treatment coefficient pushes both ratios above one") {
    simulate::LogisticGroupsConfig cfg;
    cfg.n_groups = 40;
    cfg.group_size = 4;
    cfg.treatment_coefficient = 0.7;
    cfg.sigma = 0.4;
    cfg.seed = 31;
    const auto data = simulate::simulate_logistic_groups(cfg);
    const auto fit = calibration::fit_random_intercept_logistic(data);
    if (fit.converged) {
      const auto bounds = calibration::ratio_bounds(fit, data);
      if (fit.coefficients[1] > 0.0) {
        CHECK(bounds.theta_hat > 1.0);
        CHECK(bounds.delta_hat > 1.0);
      }
    }
  }
  SUBCASE("unconverged fit is refused") {
    CalibrationFit fit;
    fit.converged = false;
    CalibrationData data;
    CHECK_THROWS_AS(calibration::ratio_bounds(fit, data), Case2Error);
  }
}

TEST_CASE("build_calibration_data encodes covariates and groups") {
  std::vector<PopulationRecord> records;
  std::vector<CovariateColumn> schema = {{"age", CovariateType::numeric},
                                         {"region", CovariateType::categorical}};
  const char* regions[] = {"east", "west", "north"};
  for (int i = 0; i < 12; ++i) {
    PopulationRecord rec;
    rec.unit_id = "u" + std::to_string(i);
    rec.set_id = "set" + std::to_string(i / 3);
    rec.case_type = i % 3 == 0 ? CaseType::narrow : CaseType::marginal;
    rec.treated = i % 2 == 0;
    rec.covariates = {CovariateValue::number(30.0 + i),
                      CovariateValue::category(regions[i % 3])};
    records.push_back(rec);
  }
  const auto data = calibration::build_calibration_data(records, schema, {"age", "region"});
  CHECK(data.n_groups() == 4);
  // intercept, treated, age, two region indicators (reference level dropped)
  CHECK(data.column_names.size() == 5);
  CHECK(data.treatment_column == 1);

  SUBCASE("missing set_id is rejected") {
    records[0].set_id.clear();
    CHECK_THROWS_AS(calibration::build_calibration_data(records, schema, {"age"}), Case2Error);
  }
}

TEST_SUITE_END();
