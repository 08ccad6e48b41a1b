#include "case2/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "case2/stats.hpp"

namespace case2::calibration {

namespace {

struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> log_weights;
};

// Golub-Welsch on the Hermite Jacobi matrix: integrates f against exp(-t^2).
GaussHermite gauss_hermite(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double off = std::sqrt(double(i) / 2.0);
    jacobi(i, i - 1) = off;
    jacobi(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  GaussHermite gh;
  gh.nodes.resize(std::size_t(n));
  gh.log_weights.resize(std::size_t(n));
  const double log_sqrt_pi = 0.5 * std::log(M_PI);
  for (int k = 0; k < n; ++k) {
    gh.nodes[std::size_t(k)] = solver.eigenvalues()[k];
    const double v0 = solver.eigenvectors()(0, k);
    gh.log_weights[std::size_t(k)] = log_sqrt_pi + 2.0 * std::log(std::abs(v0));
  }
  return gh;
}

struct GroupView {
  std::vector<std::size_t> rows;
};

std::vector<GroupView> group_rows(const CalibrationData& data) {
  std::vector<GroupView> groups(data.n_groups());
  for (std::size_t r = 0; r < data.n_units(); ++r) {
    groups[std::size_t(data.group[r])].rows.push_back(r);
  }
  return groups;
}

double linear_predictor(const CalibrationData& data, const std::vector<double>& beta,
                        std::size_t row) {
  double eta = 0.0;
  for (std::size_t j = 0; j < beta.size(); ++j) eta += beta[j] * data.x[row][j];
  return eta;
}

// log Bernoulli likelihood of one unit at random effect v
double unit_loglik(double eta, int y, double sigma, double v) {
  const double z = eta + sigma * v;
  // log expit(z) = -log1p(exp(-z)) with the stable branch
  const double log_p = z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  const double log_q = z >= 0 ? -z - std::log1p(std::exp(-z)) : -std::log1p(std::exp(z));
  return y ? log_p : log_q;
}

// Posterior mode of the group's random effect (standard-normal scale);
// the objective is strictly concave in v.
double group_mode(const CalibrationData& data, const GroupView& g,
                  const std::vector<double>& eta, double sigma, double* curvature) {
  double v = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    double grad = -v;
    double hess = -1.0;
    for (std::size_t r : g.rows) {
      const double mu = expit(eta[r] + sigma * v);
      grad += sigma * (double(data.y[r]) - mu);
      hess -= sigma * sigma * mu * (1.0 - mu);
    }
    const double step = grad / -hess;
    v += step;
    if (std::abs(step) < 1e-11) break;
  }
  if (curvature) {
    double hess = -1.0;
    for (std::size_t r : g.rows) {
      const double mu = expit(eta[r] + sigma * v);
      hess -= sigma * sigma * mu * (1.0 - mu);
    }
    *curvature = -hess;
  }
  return v;
}

double group_log_marginal(const CalibrationData& data, const GroupView& g,
                          const std::vector<double>& eta, double sigma,
                          const GaussHermite& gh) {
  double curvature = 1.0;
  const double mode = group_mode(data, g, eta, sigma, &curvature);
  const double scale = 1.0 / std::sqrt(curvature);
  const double sqrt2s = std::sqrt(2.0) * scale;

  // log integrand h(v) = sum log-lik + log phi(v)
  auto log_h = [&](double v) {
    double h = -0.5 * v * v - 0.918938533204672742;  // log(1/sqrt(2pi))
    for (std::size_t r : g.rows) h += unit_loglik(eta[r], data.y[r], sigma, v);
    return h;
  };

  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(gh.nodes.size());
  for (std::size_t k = 0; k < gh.nodes.size(); ++k) {
    const double t = gh.nodes[k];
    const double v = mode + sqrt2s * t;
    terms[k] = gh.log_weights[k] + t * t + log_h(v);
    max_term = std::max(max_term, terms[k]);
  }
  double sum = 0.0;
  for (double term : terms) sum += std::exp(term - max_term);
  return std::log(sqrt2s) + max_term + std::log(sum);
}

struct Objective {
  const CalibrationData& data;
  const std::vector<GroupView>& groups;
  const GaussHermite& gh;

  double operator()(const std::vector<double>& params) const {
    std::vector<double> beta(params.begin(), params.end() - 1);
    const double sigma = std::abs(params.back());
    std::vector<double> eta(data.n_units());
    for (std::size_t r = 0; r < data.n_units(); ++r) eta[r] = linear_predictor(data, beta, r);
    double ll = 0.0;
    for (const auto& g : groups) ll += group_log_marginal(data, g, eta, sigma, gh);
    return ll;
  }
};

void check_separation(const std::vector<double>& params,
                      const std::vector<std::string>& names) {
  for (std::size_t j = 0; j + 1 < params.size(); ++j) {
    if (std::abs(params[j]) > 15.0) {
      throw Case2Error(Errc::separation,
                       "coefficient for '" + names[j] + "' diverged (|" +
                           std::to_string(params[j]) + "| > 15); data are separated");
    }
  }
}

}  // namespace

CalibrationData build_calibration_data(const std::vector<PopulationRecord>& records,
                                       const std::vector<CovariateColumn>& schema,
                                       const std::vector<std::string>& covariates) {
  if (records.empty()) throw Case2Error(Errc::empty_input, "no records");

  CalibrationData data;
  data.column_names = {"(intercept)", "treated"};

  struct Encoder {
    int column;
    bool numeric;
    std::vector<std::string> levels;  // without the reference level
  };
  std::vector<Encoder> encoders;
  for (const auto& name : covariates) {
    int col = -1;
    for (int c = 0; c < int(schema.size()); ++c) {
      if (schema[c].name == name) col = c;
    }
    if (col < 0) {
      throw Case2Error(Errc::non_numeric_covariate, "covariate '" + name + "' not found");
    }
    if (schema[col].type == CovariateType::numeric) {
      encoders.push_back({col, true, {}});
      data.column_names.push_back(name);
    } else {
      std::set<std::string> levels;
      for (const auto& rec : records) {
        const auto& cv = rec.covariates[std::size_t(col)];
        levels.insert(cv.missing ? "<missing>" : cv.cat);
      }
      Encoder enc{col, false, {}};
      bool first = true;
      for (const auto& level : levels) {
        if (first) {  // reference level
          first = false;
          continue;
        }
        enc.levels.push_back(level);
        data.column_names.push_back(name + "=" + level);
      }
      encoders.push_back(std::move(enc));
    }
  }

  std::map<std::string, int> group_index;
  for (const auto& rec : records) {
    if (rec.set_id.empty()) {
      throw Case2Error(Errc::too_few_groups,
                       "records lack set_id grouping for the random intercept");
    }
    auto [it, inserted] = group_index.try_emplace(rec.set_id, int(group_index.size()));
    if (inserted) data.group_ids.push_back(rec.set_id);
    data.group.push_back(it->second);
    data.y.push_back(rec.case_type == CaseType::narrow ? 1 : 0);

    std::vector<double> row{1.0, rec.treated ? 1.0 : 0.0};
    for (const auto& enc : encoders) {
      const auto& cv = rec.covariates[std::size_t(enc.column)];
      if (enc.numeric) {
        if (cv.missing) {
          throw Case2Error(Errc::non_numeric_covariate,
                           "numeric covariate '" + schema[std::size_t(enc.column)].name +
                               "' has missing values");
        }
        row.push_back(cv.num);
      } else {
        const std::string text = cv.missing ? "<missing>" : cv.cat;
        for (const auto& level : enc.levels) row.push_back(text == level ? 1.0 : 0.0);
      }
    }
    data.x.push_back(std::move(row));
  }
  if (data.n_groups() < 2) {
    throw Case2Error(Errc::too_few_groups, "need at least 2 groups, have " +
                                               std::to_string(data.n_groups()));
  }
  return data;
}

CalibrationData build_calibration_data(const Study& study,
                                       const std::vector<std::string>& covariates) {
  std::vector<PopulationRecord> records;
  for (const auto& set : study.sets) {
    for (const auto& u : set.units) {
      PopulationRecord rec;
      rec.unit_id = set.set_id + ":" + std::to_string(u.unit_index);
      rec.case_type = u.narrow ? CaseType::narrow : CaseType::marginal;
      rec.treated = u.treated;
      rec.covariates = u.covariates;
      rec.set_id = set.set_id;
      records.push_back(std::move(rec));
    }
  }
  return build_calibration_data(records, study.schema, covariates);
}

double log_likelihood(const CalibrationData& data, const std::vector<double>& beta, double sigma,
                      int nodes) {
  const GaussHermite gh = gauss_hermite(nodes);
  const auto groups = group_rows(data);
  std::vector<double> params = beta;
  params.push_back(sigma);
  return Objective{data, groups, gh}(params);
}

namespace {

CalibrationFit run_fit(const CalibrationData& data, int nodes, int max_iter, double tol,
                       bool fix_sigma_zero) {
  if (data.n_groups() < 2) {
    throw Case2Error(Errc::too_few_groups, "need at least 2 groups");
  }
  const GaussHermite gh = gauss_hermite(nodes);
  const auto groups = group_rows(data);
  const Objective objective{data, groups, gh};

  const std::size_t p = data.column_names.size();
  std::vector<double> params(p + 1, 0.0);
  double mean_y = 0.0;
  for (int y : data.y) mean_y += y;
  mean_y /= double(data.y.size());
  mean_y = std::min(std::max(mean_y, 1e-6), 1.0 - 1e-6);
  params[0] = logit(mean_y);
  params[p] = fix_sigma_zero ? 0.0 : 0.5;

  const std::size_t n_free = fix_sigma_zero ? p : p + 1;
  double current = objective(params);

  CalibrationFit fit;
  fit.coefficient_names = data.column_names;
  fit.quadrature_nodes = nodes;
  fit.treatment_column = data.treatment_column;

  int iter = 0;
  for (; iter < max_iter; ++iter) {
    std::vector<double> free_params(params.begin(), params.begin() + long(n_free));
    auto eval_free = [&](const std::vector<double>& q) {
      std::vector<double> full = q;
      if (fix_sigma_zero) full.push_back(0.0);
      return objective(full);
    };

    // gradient
    std::vector<double> grad(n_free);
    {
      std::vector<double> q = free_params;
      for (std::size_t j = 0; j < n_free; ++j) {
        const double h = 1e-5 * std::max(1.0, std::abs(q[j]));
        q[j] = free_params[j] + h;
        const double up = eval_free(q);
        q[j] = free_params[j] - h;
        const double down = eval_free(q);
        q[j] = free_params[j];
        grad[j] = (up - down) / (2.0 * h);
      }
    }
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    if (gmax < tol) {
      fit.converged = true;
      break;
    }

    // finite-difference Hessian from gradient displacements
    Eigen::MatrixXd hess(n_free, n_free);
    {
      std::vector<double> q = free_params;
      for (std::size_t j = 0; j < n_free; ++j) {
        const double h = 1e-4 * std::max(1.0, std::abs(free_params[j]));
        q[j] = free_params[j] + h;
        std::vector<double> gp(n_free);
        {
          std::vector<double> r = q;
          for (std::size_t i = 0; i < n_free; ++i) {
            const double hi = 1e-5 * std::max(1.0, std::abs(q[i]));
            r[i] = q[i] + hi;
            const double up = eval_free(r);
            r[i] = q[i] - hi;
            const double down = eval_free(r);
            r[i] = q[i];
            gp[i] = (up - down) / (2.0 * hi);
          }
        }
        q[j] = free_params[j];
        for (std::size_t i = 0; i < n_free; ++i) {
          hess(Eigen::Index(i), Eigen::Index(j)) = (gp[i] - grad[i]) / h;
        }
      }
      hess = 0.5 * (hess + hess.transpose().eval());
    }

    // ascent direction: Newton with a ridge fallback
    Eigen::VectorXd g(n_free);
    for (std::size_t j = 0; j < n_free; ++j) g[Eigen::Index(j)] = grad[j];
    Eigen::VectorXd dir;
    bool have_newton = false;
    for (double ridge : {0.0, 1e-6, 1e-3, 1e-1}) {
      Eigen::MatrixXd h_reg = -hess + ridge * Eigen::MatrixXd::Identity(n_free, n_free);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(h_reg);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
      dir = ldlt.solve(g);
      if (dir.dot(g) > 0.0) {
        have_newton = true;
        break;
      }
    }
    if (!have_newton) dir = g;  // gradient ascent fallback

    double step = 1.0;
    bool improved = false;
    const double slope = dir.dot(g);
    for (int ls = 0; ls < 40; ++ls) {
      std::vector<double> trial = free_params;
      for (std::size_t j = 0; j < n_free; ++j) trial[j] += step * dir[Eigen::Index(j)];
      const double value = eval_free(trial);
      if (value > current + 1e-4 * step * slope ||
          (ls > 20 && value > current)) {
        free_params = trial;
        current = value;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    for (std::size_t j = 0; j < n_free; ++j) params[j] = free_params[j];
    check_separation(params, data.column_names);
    if (!improved) {
      // flat to numerical precision; treat the current point as the optimum
      fit.converged = gmax < 100 * tol;
      break;
    }
  }

  fit.iterations = iter;
  fit.coefficients.assign(params.begin(), params.begin() + long(p));
  fit.random_intercept_sd = fix_sigma_zero ? 0.0 : std::abs(params[p]);
  fit.log_likelihood = current;
  return fit;
}

}  // namespace

CalibrationFit fit_random_intercept_logistic(const CalibrationData& data, int nodes,
                                             int max_iter, double tol) {
  return run_fit(data, nodes, max_iter, tol, false);
}

CalibrationFit fit_fixed_logistic(const CalibrationData& data, int max_iter, double tol) {
  return run_fit(data, 3, max_iter, tol, true);
}

RatioBounds ratio_bounds(const CalibrationFit& fit, const CalibrationData& data) {
  if (!fit.converged) {
    throw Case2Error(Errc::not_converged, "fit did not converge; refusing to report ratios");
  }
  const auto groups = group_rows(data);
  std::vector<double> eta(data.n_units());
  for (std::size_t r = 0; r < data.n_units(); ++r) {
    eta[r] = linear_predictor(data, fit.coefficients, r);
  }
  std::vector<double> modes(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    modes[g] = group_mode(data, groups[g], eta, fit.random_intercept_sd, nullptr);
  }

  const int tcol = fit.treatment_column;
  const double beta_t = fit.coefficients[std::size_t(tcol)];
  RatioBounds bounds;
  for (std::size_t r = 0; r < data.n_units(); ++r) {
    const double re = fit.random_intercept_sd * modes[std::size_t(data.group[r])];
    const double eta_treated = eta[r] - beta_t * data.x[r][std::size_t(tcol)] + beta_t + re;
    const double eta_control = eta[r] - beta_t * data.x[r][std::size_t(tcol)] + re;
    const double p1 = expit(eta_treated);
    const double p0 = expit(eta_control);
    bounds.theta_hat = std::max(bounds.theta_hat, p1 / p0);
    bounds.delta_hat = std::max(bounds.delta_hat, (1.0 - p0) / (1.0 - p1));
  }
  return bounds;
}

}  // namespace case2::calibration
