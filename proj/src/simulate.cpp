#include "case2/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

#include "case2/rng.hpp"
#include "case2/stats.hpp"

namespace case2::simulate {

namespace {

struct SimUnit {
  std::vector<CovariateValue> covariates;
  std::string stratum;
  double u = 0.0;
  double theta_c = 0.0;
  double theta_t = 0.0;
  bool treated = false;
  bool kappa_t = false;  // narrow under treatment
  bool kappa_c = false;  // narrow under control
  bool narrow = false;   // observed
  bool caused = false;   // treated narrow case caused by treatment
};

int categorical_levels(const std::string& distribution) {
  if (distribution == "binary") return 2;
  if (distribution.rfind("cat", 0) == 0) {
    const int k = std::atoi(distribution.c_str() + 3);
    if (k < 2) {
      throw Case2Error(Errc::invalid_params,
                       "categorical distribution needs at least 2 levels: " + distribution);
    }
    return k;
  }
  return 0;
}

SimUnit draw_unit(const SimConfig& cfg, Rng rng) {
  SimUnit unit;
  for (const auto& spec : cfg.covariates) {
    const int levels = categorical_levels(spec.distribution);
    if (levels > 0) {
      const int level = int(rng.below(std::uint64_t(levels)));
      const std::string text = "l" + std::to_string(level + 1);
      unit.covariates.push_back(CovariateValue::category(text));
      unit.stratum += "|" + text;
    } else if (spec.distribution == "normal") {
      unit.covariates.push_back(CovariateValue::number(rng.normal()));
    } else if (spec.distribution == "uniform") {
      unit.covariates.push_back(CovariateValue::number(rng.uniform()));
    } else {
      throw Case2Error(Errc::invalid_params,
                       "unknown covariate distribution '" + spec.distribution + "'");
    }
  }
  if (unit.stratum.empty()) unit.stratum = "<all>";

  unit.u = rng.uniform();
  unit.treated = rng.bernoulli(expit(cfg.alpha_z + std::log(cfg.gamma) * unit.u));
  unit.theta_c = rng.uniform(cfg.theta_c_min, cfg.theta_c_max);
  const double cap =
      std::min(cfg.theta * unit.theta_c, 1.0 - (1.0 - unit.theta_c) / cfg.delta);
  unit.theta_t = unit.theta_c + cfg.true_attributable_rate * (cap - unit.theta_c);
  if (!(unit.theta_t > 0.0 && unit.theta_t < 1.0)) {
    throw Case2Error(Errc::infeasible_thetas,
                     "implied theta_t = " + std::to_string(unit.theta_t) + " outside (0,1)");
  }
  // comonotone coupling keeps kappa_t >= kappa_c (nonnegative effect)
  const double w = rng.uniform();
  unit.kappa_t = w < unit.theta_t;
  unit.kappa_c = w < unit.theta_c;
  unit.narrow = unit.treated ? unit.kappa_t : unit.kappa_c;
  unit.caused = unit.treated && unit.kappa_t && !unit.kappa_c;
  return unit;
}

std::vector<CovariateColumn> observable_schema(const SimConfig& cfg) {
  std::vector<CovariateColumn> schema;
  for (const auto& spec : cfg.covariates) {
    schema.push_back({spec.name, categorical_levels(spec.distribution) > 0
                                     ? CovariateType::categorical
                                     : CovariateType::numeric});
  }
  return schema;
}

}  // namespace

void SimConfig::validate() const {
  if (n_sets < 1) throw Case2Error(Errc::invalid_params, "n_sets must be >= 1");
  if (j < 2) throw Case2Error(Errc::invalid_params, "j must be >= 2");
  SensitivityParams{gamma, theta, delta, MultiplierMode::proposition_one}.validate();
  if (!(true_attributable_rate >= 0.0 && true_attributable_rate <= 1.0)) {
    throw Case2Error(Errc::invalid_params, "true_attributable_rate must be in [0,1]");
  }
  if (!(theta_c_min > 0.0 && theta_c_max < 1.0 && theta_c_min <= theta_c_max)) {
    throw Case2Error(Errc::infeasible_thetas, "theta_c range must sit inside (0,1)");
  }
  for (const auto& spec : covariates) {
    if (categorical_levels(spec.distribution) == 0 && spec.distribution != "normal" &&
        spec.distribution != "uniform") {
      throw Case2Error(Errc::invalid_params,
                       "unknown covariate distribution '" + spec.distribution + "'");
    }
  }
}

Population simulate_population(const SimConfig& cfg, long long n_units) {
  cfg.validate();
  if (n_units <= 0) n_units = cfg.n_sets * cfg.j;

  Population pop;
  pop.schema = observable_schema(cfg);
  if (cfg.include_truth) {
    for (const char* name : {"truth_u", "truth_theta_c", "truth_theta_t", "truth_kappa_t",
                             "truth_kappa_c", "truth_caused"}) {
      pop.schema.push_back({name, CovariateType::numeric});
    }
  }

  const Rng master(cfg.seed);
  for (long long i = 0; i < n_units; ++i) {
    const SimUnit unit = draw_unit(cfg, master.split(std::uint64_t(i)));
    PopulationRecord rec;
    rec.unit_id = "u" + std::to_string(i + 1);
    rec.case_type = unit.narrow ? CaseType::narrow : CaseType::marginal;
    rec.treated = unit.treated;
    rec.covariates = unit.covariates;
    if (cfg.include_truth) {
      rec.covariates.push_back(CovariateValue::number(unit.u));
      rec.covariates.push_back(CovariateValue::number(unit.theta_c));
      rec.covariates.push_back(CovariateValue::number(unit.theta_t));
      rec.covariates.push_back(CovariateValue::number(unit.kappa_t ? 1.0 : 0.0));
      rec.covariates.push_back(CovariateValue::number(unit.kappa_c ? 1.0 : 0.0));
      rec.covariates.push_back(CovariateValue::number(unit.caused ? 1.0 : 0.0));
    }
    pop.records.push_back(std::move(rec));
  }
  return pop;
}

MatchedSim simulate_matched(const SimConfig& cfg) {
  cfg.validate();

  struct Pools {
    std::deque<SimUnit> narrow;
    std::deque<SimUnit> marginal;
  };
  std::map<std::string, Pools> pools;

  const Rng master(cfg.seed);
  const long long max_draws =
      std::max<long long>(100000, 500 * cfg.n_sets * cfg.j);

  std::vector<Unit> units;
  long long formed = 0;
  long long true_attributable = 0;
  long long drawn = 0;

  auto try_form = [&](Pools& pool) {
    while (formed < cfg.n_sets && !pool.narrow.empty() &&
           (long long)pool.marginal.size() >= cfg.j - 1) {
      ++formed;
      char set_id[24];
      std::snprintf(set_id, sizeof(set_id), "s%08lld", formed);
      const SimUnit narrow_unit = pool.narrow.front();
      pool.narrow.pop_front();
      if (narrow_unit.caused) ++true_attributable;
      Unit nu;
      nu.set_id = set_id;
      nu.treated = narrow_unit.treated;
      nu.narrow = true;
      nu.covariates = narrow_unit.covariates;
      units.push_back(std::move(nu));
      for (int k = 0; k < cfg.j - 1; ++k) {
        const SimUnit marginal_unit = pool.marginal.front();
        pool.marginal.pop_front();
        Unit mu;
        mu.set_id = set_id;
        mu.treated = marginal_unit.treated;
        mu.narrow = false;
        mu.covariates = marginal_unit.covariates;
        units.push_back(std::move(mu));
      }
    }
  };

  while (formed < cfg.n_sets) {
    if (drawn >= max_draws) {
      throw Case2Error(Errc::insufficient_marginals,
                       "formed only " + std::to_string(formed) + " of " +
                           std::to_string(cfg.n_sets) + " sets after " +
                           std::to_string(drawn) + " draws");
    }
    SimUnit unit = draw_unit(cfg, master.split(std::uint64_t(drawn)));
    ++drawn;
    Pools& pool = pools[unit.stratum];
    (unit.narrow ? pool.narrow : pool.marginal).push_back(std::move(unit));
    try_form(pool);
  }

  MatchedSim sim;
  sim.true_attributable = true_attributable;
  sim.study = validate_study(units, observable_schema(cfg));
  return sim;
}

calibration::CalibrationData simulate_logistic_groups(const LogisticGroupsConfig& cfg) {
  if (cfg.n_groups < 2) throw Case2Error(Errc::invalid_params, "need at least 2 groups");
  if (cfg.group_size < 1) throw Case2Error(Errc::invalid_params, "group_size must be >= 1");
  if (cfg.sigma < 0.0) throw Case2Error(Errc::invalid_params, "sigma must be >= 0");

  calibration::CalibrationData data;
  data.column_names = {"(intercept)", "treated"};
  for (std::size_t k = 0; k < cfg.x_coefficients.size(); ++k) {
    data.column_names.push_back("x" + std::to_string(k + 1));
  }

  const Rng master(cfg.seed);
  for (long long g = 0; g < cfg.n_groups; ++g) {
    Rng rng = master.split(std::uint64_t(g));
    const double v = rng.normal();
    data.group_ids.push_back("g" + std::to_string(g + 1));
    for (int i = 0; i < cfg.group_size; ++i) {
      std::vector<double> row{1.0, rng.bernoulli(0.5) ? 1.0 : 0.0};
      double eta = cfg.intercept + cfg.treatment_coefficient * row[1] + cfg.sigma * v;
      for (double coef : cfg.x_coefficients) {
        const double x = rng.normal();
        row.push_back(x);
        eta += coef * x;
      }
      data.x.push_back(std::move(row));
      data.y.push_back(rng.bernoulli(expit(eta)) ? 1 : 0);
      data.group.push_back(int(g));
    }
  }
  return data;
}

}  // namespace case2::simulate
