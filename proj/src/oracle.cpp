#include "case2/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "case2/stats.hpp"

namespace case2::oracle {

namespace {

void check_config(const ConditionalConfig& cfg) {
  if (cfg.J < 2) throw Case2Error(Errc::domain_error, "J must be >= 2");
  if (cfg.z_plus < 0 || cfg.z_plus > cfg.J) {
    throw Case2Error(Errc::domain_error, "z_plus outside 0..J");
  }
  if (int(cfg.u.size()) != cfg.J || int(cfg.theta_t.size()) != cfg.J ||
      int(cfg.theta_c.size()) != cfg.J) {
    throw Case2Error(Errc::domain_error, "u/theta vectors must have length J");
  }
  if (!(cfg.gamma >= 1.0)) throw Case2Error(Errc::domain_error, "gamma must be >= 1");
  for (int j = 0; j < cfg.J; ++j) {
    if (!(cfg.u[j] >= 0.0 && cfg.u[j] <= 1.0)) {
      throw Case2Error(Errc::domain_error, "u outside [0,1]");
    }
    if (!(cfg.theta_t[j] > 0.0 && cfg.theta_t[j] < 1.0) ||
        !(cfg.theta_c[j] > 0.0 && cfg.theta_c[j] < 1.0)) {
      throw Case2Error(Errc::domain_error, "theta values must lie strictly inside (0,1)");
    }
  }
}

double treatment_prob(const ConditionalConfig& cfg, int j) {
  return expit(cfg.alpha_z + std::log(cfg.gamma) * cfg.u[j]);
}

// Conditional P(Z=1 | marginal case observed) for unit j >= 1.
double marginal_unit_q(const ConditionalConfig& cfg, int j) {
  const double pi = treatment_prob(cfg, j);
  const double num = pi * (1.0 - cfg.theta_t[j]);
  const double den = num + (1.0 - pi) * (1.0 - cfg.theta_c[j]);
  return num / den;
}

}  // namespace

std::vector<double> elementary_symmetric(const std::vector<double>& w) {
  std::vector<double> e(w.size() + 1, 0.0);
  e[0] = 1.0;
  std::size_t used = 0;
  for (double x : w) {
    ++used;
    for (std::size_t b = used; b >= 1; --b) e[b] += x * e[b - 1];
  }
  return e;
}

double exact_conditional_prob(const ConditionalConfig& cfg) {
  check_config(cfg);
  if (cfg.z_plus == 0) return 0.0;
  if (cfg.z_plus == cfg.J) return 1.0;

  const double pi1 = treatment_prob(cfg, 0);
  const double narrow_treated = pi1 * cfg.theta_t[0];
  const double narrow_untreated = (1.0 - pi1) * cfg.theta_c[0];

  std::vector<double> w;
  w.reserve(cfg.J - 1);
  for (int j = 1; j < cfg.J; ++j) {
    const double q = marginal_unit_q(cfg, j);
    w.push_back(q / (1.0 - q));
  }
  const auto e = elementary_symmetric(w);
  const double num = narrow_treated * e[std::size_t(cfg.z_plus - 1)];
  const double den = num + narrow_untreated * e[std::size_t(cfg.z_plus)];
  return num / den;
}

double exact_conditional_prob_enumerated(const ConditionalConfig& cfg) {
  check_config(cfg);
  if (cfg.z_plus == 0) return 0.0;
  if (cfg.z_plus == cfg.J) return 1.0;

  const double pi1 = treatment_prob(cfg, 0);
  const double narrow_treated = pi1 * cfg.theta_t[0];
  const double narrow_untreated = (1.0 - pi1) * cfg.theta_c[0];

  std::vector<double> q;
  for (int j = 1; j < cfg.J; ++j) q.push_back(marginal_unit_q(cfg, j));

  const int m = cfg.J - 1;
  double sum_with = 0.0;   // marginal assignments carrying z_plus - 1 treated
  double sum_without = 0.0;  // assignments carrying z_plus treated
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    const int bits = std::popcount(mask);
    if (bits != cfg.z_plus - 1 && bits != cfg.z_plus) continue;
    double prod = 1.0;
    for (int j = 0; j < m; ++j) {
      prod *= (mask >> j) & 1u ? q[j] : 1.0 - q[j];
    }
    (bits == cfg.z_plus - 1 ? sum_with : sum_without) += prod;
  }
  const double num = narrow_treated * sum_with;
  return num / (num + narrow_untreated * sum_without);
}

ConditionalConfig sample_config(int J, const SensitivityParams& params, Rng& rng) {
  params.validate();
  ConditionalConfig cfg;
  cfg.J = J;
  cfg.z_plus = 1 + int(rng.below(std::uint64_t(J - 1)));
  cfg.gamma = params.gamma;
  cfg.alpha_z = rng.uniform(-2.0, 2.0);
  cfg.u.resize(J);
  cfg.theta_t.resize(J);
  cfg.theta_c.resize(J);
  for (int j = 0; j < J; ++j) {
    cfg.u[j] = rng.uniform();
    const double tc = rng.uniform(0.05, 0.95);
    const double cap = std::min(params.theta * tc, 1.0 - (1.0 - tc) / params.delta);
    double tt = tc;
    if (cap - tc > 1e-12) {
      for (int tries = 0; tries < 10000; ++tries) {
        const double cand = rng.uniform(tc, 1.0);
        if (cand <= cap) {
          tt = cand;
          break;
        }
      }
      if (tt == tc) tt = rng.uniform(tc, cap);
    }
    cfg.theta_c[j] = tc;
    cfg.theta_t[j] = std::min(tt, 1.0 - 1e-12);
  }
  return cfg;
}

ConditionalConfig lower_corner(int J, int z_plus, double gamma, double alpha_z,
                               double theta_base) {
  ConditionalConfig cfg;
  cfg.J = J;
  cfg.z_plus = z_plus;
  cfg.gamma = gamma;
  cfg.alpha_z = alpha_z;
  cfg.u.assign(J, 1.0);
  cfg.u[0] = 0.0;
  cfg.theta_t.assign(J, theta_base);
  cfg.theta_c.assign(J, theta_base);
  return cfg;
}

ConditionalConfig upper_corner(int J, int z_plus, const SensitivityParams& params,
                               double alpha_z) {
  params.validate();
  ConditionalConfig cfg;
  cfg.J = J;
  cfg.z_plus = z_plus;
  cfg.gamma = params.gamma;
  cfg.alpha_z = alpha_z;
  cfg.u.assign(J, 0.0);
  cfg.u[0] = 1.0;
  cfg.theta_t.assign(J, 0.5);
  cfg.theta_c.assign(J, 0.5);
  // Only the narrow unit's theta_t/theta_c and the marginal units'
  // (1-theta_c)/(1-theta_t) enter the probability; pinning them to Theta and
  // Delta attains the bound exactly.
  const double c0 = std::min(0.4, 0.9 / params.theta);
  cfg.theta_c[0] = c0;
  cfg.theta_t[0] = params.theta * c0;
  const double s = std::min(0.3, 0.5 / params.delta);
  for (int j = 1; j < J; ++j) {
    cfg.theta_t[j] = 1.0 - s;
    cfg.theta_c[j] = 1.0 - params.delta * s;
  }
  return cfg;
}

double enumerate_tail(const std::vector<double>& probs, long long k) {
  const int n = int(probs.size());
  if (n > 20) throw Case2Error(Errc::too_large, "enumerate_tail supports at most 20 terms");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  double total = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) < k) continue;
    double prod = 1.0;
    for (int i = 0; i < n; ++i) {
      prod *= (mask >> i) & 1u ? probs[i] : 1.0 - probs[i];
    }
    total += prod;
  }
  return clamp01(total);
}

double exhaustive_worst_case(const Study& study, const SensitivityParams& params, long long a,
                             TailMethod method) {
  if (a < 0) throw Case2Error(Errc::invalid_params, "a must be nonnegative");
  params.validate();

  std::vector<double> upper(study.sets.size());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < study.sets.size(); ++i) {
    upper[i] = per_set_upper(study.sets[i].z_plus(), 1, study.J, params);
    if (study.sets[i].narrow_treated()) pool.push_back(i);
  }
  const long long t = (long long)pool.size();
  if (a >= t) return 1.0;
  if (t > 20) throw Case2Error(Errc::too_large, "exhaustive search supports at most 20 treated-narrow sets");

  // C(t, a) guard
  double combos = 1.0;
  for (long long i = 0; i < a; ++i) combos = combos * double(t - i) / double(i + 1);
  if (combos > 1e6) throw Case2Error(Errc::too_large, "attribution space exceeds 1e6");

  const long long k = t - a;
  double best = 0.0;
  std::vector<int> pick(static_cast<std::size_t>(a));
  std::iota(pick.begin(), pick.end(), 0);
  std::vector<double> pi;
  while (true) {
    pi = upper;
    for (int idx : pick) pi[pool[std::size_t(idx)]] = 0.0;
    // same plausible-by-expectation rule as the separability path
    KahanSum expectation;
    for (double prob : pi) expectation.add(prob);
    const double p = double(a) + expectation.value() >= double(t)
                         ? 1.0
                         : (method == TailMethod::exact ? poisson_binomial_tail(pi, k)
                                                        : normal_tail(pi, k));
    best = std::max(best, p);
    // next combination of `a` indices out of t
    long long pos = a - 1;
    while (pos >= 0 && pick[std::size_t(pos)] == int(t - a + pos)) --pos;
    if (pos < 0) break;
    ++pick[std::size_t(pos)];
    for (long long q = pos + 1; q < a; ++q) pick[std::size_t(q)] = pick[std::size_t(q - 1)] + 1;
  }
  return best;
}

long long exhaustive_a_star(const Study& study, const SensitivityParams& params, double alpha,
                            TailMethod method) {
  for (long long a = 0;; ++a) {
    if (exhaustive_worst_case(study, params, a, method) > alpha) return a;
  }
}

VerifyReport run_verification(long long draws_per_j, std::uint64_t seed) {
  VerifyReport report;
  Rng master(seed);
  for (int J : {2, 3, 4}) {
    Rng rng = master.split(std::uint64_t(J));
    for (long long d = 0; d < draws_per_j; ++d) {
      SensitivityParams params;
      params.gamma = rng.uniform(1.0, 3.0);
      params.theta = rng.uniform(1.0, 2.5);
      params.delta = rng.uniform(1.0, 2.5);
      const ConditionalConfig cfg = sample_config(J, params, rng);
      const double p = exact_conditional_prob(cfg);
      const double lo = per_set_lower(cfg.z_plus, 1, J, params);
      const double hi = per_set_upper(cfg.z_plus, 1, J, params);
      ++report.containment_checked;
      const double excess = std::max(lo - p, p - hi);
      if (excess > 1e-12) {
        ++report.containment_violations;
        report.max_out_of_bounds = std::max(report.max_out_of_bounds, excess);
      }
      if (d < 2000) {
        const double p2 = exact_conditional_prob_enumerated(cfg);
        ++report.agreement_checked;
        const double diff = std::abs(p - p2);
        report.max_path_difference = std::max(report.max_path_difference, diff);
        if (diff > 1e-12) ++report.agreement_failures;
      }
    }

    // bound attainment at the stated corners
    for (double gamma : {1.0, 1.5, 2.0, 3.0}) {
      for (double theta : {1.0, 1.3, 2.0}) {
        for (double delta : {1.0, 1.2, 1.8}) {
          SensitivityParams params{gamma, theta, delta, MultiplierMode::proposition_one};
          for (int zp = 1; zp < J; ++zp) {
            const double lo = per_set_lower(zp, 1, J, params);
            const double hi = per_set_upper(zp, 1, J, params);
            const double p_lo =
                exact_conditional_prob(lower_corner(J, zp, gamma, -0.3, 0.35));
            const double p_hi = exact_conditional_prob(upper_corner(J, zp, params, -0.3));
            report.attainment_checked += 2;
            const double gap_lo = std::abs(p_lo - lo);
            const double gap_hi = std::abs(p_hi - hi);
            report.max_attainment_gap =
                std::max({report.max_attainment_gap, gap_lo, gap_hi});
            if (gap_lo > 1e-9) ++report.attainment_failures;
            if (gap_hi > 1e-9) ++report.attainment_failures;
          }
        }
      }
    }
  }
  return report;
}

}  // namespace case2::oracle
