#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "case2/types.hpp"

namespace case2 {

enum class CaseType { narrow, marginal };

// Pre-matching unit record: the input to matching, calibration and the
// population-level 2x2 summary.
struct PopulationRecord {
  std::string unit_id;
  CaseType case_type = CaseType::marginal;
  bool treated = false;
  std::vector<CovariateValue> covariates;
  // optional grouping used by calibration when present in the file
  std::string set_id;
};

struct Population {
  std::vector<PopulationRecord> records;
  std::vector<CovariateColumn> schema;
  bool has_set_id = false;
};

// One row of Table-4-style sweep output.
struct SweepRow {
  double gamma = 1.0;
  double theta = 1.0;
  double delta = 1.0;
  double alpha = 0.05;
  long long a_star = 0;
  double p_at_a_star = 1.0;
  std::string method = "exact";
};

enum class ResultFormat { json, csv };

// Matched-study CSV: required columns set_id, treated, narrow; every other
// column is a covariate (numeric if all of its non-empty values parse as
// numbers, categorical otherwise). Row order never affects the result.
Study parse_matched_csv(std::istream& source);
Study parse_matched_csv_string(const std::string& text);

Population parse_population_csv(std::istream& source);
Population parse_population_csv_string(const std::string& text);

std::string write_study_csv(const Study& study);
std::string write_population_csv(const Population& pop);

// Stable column order: gamma, theta, delta, alpha, a_star, p_at_a_star, method.
std::string write_results(const std::vector<SweepRow>& rows, ResultFormat format);

// Shortest decimal representation that round-trips; integral values keep a
// trailing ".0" so a results file is visibly typed.
std::string format_double(double v);

}  // namespace case2
