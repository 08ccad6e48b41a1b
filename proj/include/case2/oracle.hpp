#pragma once

#include <cstdint>
#include <vector>

#include "case2/inference.hpp"
#include "case2/rng.hpp"
#include "case2/types.hpp"

namespace case2::oracle {

// One fully specified matched set under the sensitivity model: treatment
// logits alpha_z + log(gamma)*u and per-unit narrow-case probabilities under
// treatment / control. Unit 0 is the narrow case.
struct ConditionalConfig {
  int J = 2;
  int z_plus = 1;
  std::vector<double> u;        // in [0,1], length J
  std::vector<double> theta_t;  // in (0,1), length J
  std::vector<double> theta_c;  // in (0,1), length J
  double gamma = 1.0;
  double alpha_z = 0.0;
};

// Exact P(narrow case treated | set composition, Z_i+) evaluated through
// elementary symmetric functions of the per-unit conditional treatment odds.
double exact_conditional_prob(const ConditionalConfig& cfg);

// Same probability by direct enumeration over all treatment assignment
// vectors; agrees with the symmetric-function path to 1e-12.
double exact_conditional_prob_enumerated(const ConditionalConfig& cfg);

// Stable e_0..e_n of the inputs via the forward recurrence (all terms
// nonnegative, no cancellation).
std::vector<double> elementary_symmetric(const std::vector<double>& w);

// Random in-model configuration: u uniform, alpha_z in [-2,2], theta_c in
// (0.05, 0.95), theta_t rejection-sampled inside the (Theta, Delta) feasible
// interval above theta_c.
ConditionalConfig sample_config(int J, const SensitivityParams& params, Rng& rng);

// Corner configurations from the bound-attainment statement.
ConditionalConfig lower_corner(int J, int z_plus, double gamma, double alpha_z,
                               double theta_base);
ConditionalConfig upper_corner(int J, int z_plus, const SensitivityParams& params,
                               double alpha_z);

// Exhaustive finite-sample maximization that asymptotic separability
// approximates: max over all C(T, a) attribution choices of the tail
// probability at T - a, applying the same plausible-by-expectation rule per
// attribution. Returns 1 when a >= T.
double exhaustive_worst_case(const Study& study, const SensitivityParams& params, long long a,
                             TailMethod method = TailMethod::exact);

// Smallest a whose exhaustive worst-case p exceeds alpha.
long long exhaustive_a_star(const Study& study, const SensitivityParams& params, double alpha,
                            TailMethod method = TailMethod::exact);

// P(sum Bernoulli(probs) >= k) by summing all 2^I outcomes. I <= 20.
double enumerate_tail(const std::vector<double>& probs, long long k);

struct VerifyReport {
  long long containment_checked = 0;
  long long containment_violations = 0;
  double max_out_of_bounds = 0.0;   // largest excursion beyond a bound
  long long attainment_checked = 0;
  long long attainment_failures = 0;
  double max_attainment_gap = 0.0;
  long long agreement_checked = 0;
  long long agreement_failures = 0;
  double max_path_difference = 0.0;

  bool passed() const {
    return containment_violations == 0 && attainment_failures == 0 && agreement_failures == 0;
  }
};

// Containment, attainment and internal-agreement suites over random in-model
// draws for J in {2,3,4}; the `verify` CLI mode prints this report.
VerifyReport run_verification(long long draws_per_j, std::uint64_t seed);

}  // namespace case2::oracle
