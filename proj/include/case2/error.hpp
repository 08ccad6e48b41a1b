#pragma once

#include <stdexcept>
#include <string>

namespace case2 {

// Every recoverable failure in the library throws Case2Error with a stable
// code, so callers (and the CLI) can map failures to exit codes and
// machine-readable messages without string matching.
enum class Errc {
  // core model
  empty_input,
  unequal_set_sizes,
  narrow_count_violation,
  duplicate_unit,
  incompatible_hypothesis,
  invalid_study,
  invalid_params,
  // ingestion
  malformed_csv,
  missing_column,
  bad_value,
  duplicate_id,
  // matching
  non_numeric_covariate,
  infeasible_stratum,
  // oracle
  domain_error,
  too_large,
  // nonneg
  invalid_allocation,
  infeasible,
  // calibration
  separation,
  too_few_groups,
  not_converged,
  // simulate
  infeasible_thetas,
  insufficient_marginals,
};

const char* errc_name(Errc code);

class Case2Error : public std::runtime_error {
 public:
  Case2Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace case2
