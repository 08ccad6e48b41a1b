#include "case2/types.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace case2 {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::empty_input: return "EmptyInput";
    case Errc::unequal_set_sizes: return "UnequalSetSizes";
    case Errc::narrow_count_violation: return "NarrowCountViolation";
    case Errc::duplicate_unit: return "DuplicateUnit";
    case Errc::incompatible_hypothesis: return "IncompatibleHypothesis";
    case Errc::invalid_study: return "InvalidStudy";
    case Errc::invalid_params: return "InvalidParams";
    case Errc::malformed_csv: return "MalformedCsv";
    case Errc::missing_column: return "MissingColumn";
    case Errc::bad_value: return "BadValue";
    case Errc::duplicate_id: return "DuplicateId";
    case Errc::non_numeric_covariate: return "NonNumericCovariate";
    case Errc::infeasible_stratum: return "InfeasibleStratum";
    case Errc::domain_error: return "DomainError";
    case Errc::too_large: return "TooLarge";
    case Errc::invalid_allocation: return "InvalidAllocation";
    case Errc::infeasible: return "Infeasible";
    case Errc::separation: return "Separation";
    case Errc::too_few_groups: return "TooFewGroups";
    case Errc::not_converged: return "NotConverged";
    case Errc::infeasible_thetas: return "InfeasibleThetas";
    case Errc::insufficient_marginals: return "InsufficientMarginals";
  }
  return "UnknownError";
}

namespace {

// Deterministic sort key for marginal units so that the canonical Study does
// not depend on input row order.
std::string unit_sort_key(const Unit& u) {
  std::ostringstream key;
  key << (u.treated ? '1' : '0');
  for (const auto& cv : u.covariates) {
    key << '|';
    if (cv.missing) {
      key << "<na>";
    } else if (!cv.cat.empty()) {
      key << cv.cat;
    } else {
      std::ostringstream num;
      num.precision(17);
      num << cv.num;
      key << num.str();
    }
  }
  return key.str();
}

}  // namespace

Study validate_study(const std::vector<Unit>& records, std::vector<CovariateColumn> schema) {
  if (records.empty()) throw Case2Error(Errc::empty_input, "no unit records");

  const std::size_t n_cov = records.front().covariates.size();
  std::map<std::string, std::vector<Unit>> groups;
  std::set<std::pair<std::string, int>> seen;
  for (const auto& rec : records) {
    if (rec.covariates.size() != n_cov) {
      throw Case2Error(Errc::invalid_study,
                       "unit in set '" + rec.set_id + "' has inconsistent covariate count");
    }
    if (rec.unit_index > 0 && !seen.insert({rec.set_id, rec.unit_index}).second) {
      throw Case2Error(Errc::duplicate_unit, "set '" + rec.set_id + "' repeats unit index " +
                                                 std::to_string(rec.unit_index));
    }
    groups[rec.set_id].push_back(rec);
  }

  Study study;
  study.J = int(groups.begin()->second.size());
  if (study.J < 2) {
    throw Case2Error(Errc::invalid_study, "matched sets need at least one marginal case (J >= 2)");
  }
  if (schema.size() != n_cov) {
    schema.clear();
    for (std::size_t c = 0; c < n_cov; ++c) {
      schema.push_back({"c" + std::to_string(c + 1), CovariateType::categorical});
    }
  }
  study.schema = std::move(schema);

  for (auto& [set_id, units] : groups) {
    if (int(units.size()) != study.J) {
      throw Case2Error(Errc::unequal_set_sizes,
                       "set '" + set_id + "' has " + std::to_string(units.size()) +
                           " units, expected " + std::to_string(study.J));
    }
    int n_narrow = 0;
    for (const auto& u : units) n_narrow += u.narrow ? 1 : 0;
    if (n_narrow != 1) {
      throw Case2Error(Errc::narrow_count_violation,
                       "set '" + set_id + "' has " + std::to_string(n_narrow) +
                           " narrow cases, expected exactly 1");
    }

    MatchedSet set;
    set.set_id = set_id;
    auto narrow_it = std::find_if(units.begin(), units.end(),
                                  [](const Unit& u) { return u.narrow; });
    set.units.push_back(*narrow_it);
    units.erase(narrow_it);
    std::stable_sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
      return unit_sort_key(a) < unit_sort_key(b);
    });
    for (auto& u : units) set.units.push_back(std::move(u));
    for (std::size_t j = 0; j < set.units.size(); ++j) {
      set.units[j].set_id = set_id;
      set.units[j].unit_index = int(j) + 1;
    }
    study.sets.push_back(std::move(set));
  }
  // std::map iteration already yields sets sorted by set_id.
  return study;
}

std::vector<int> adjusted_kappa(const Study& study, const AttributionHypothesis& hyp) {
  std::set<std::string> remaining = hyp.attributed;
  std::vector<int> kappa;
  kappa.reserve(study.sets.size());
  for (const auto& set : study.sets) {
    auto it = remaining.find(set.set_id);
    if (it == remaining.end()) {
      kappa.push_back(1);
      continue;
    }
    if (!set.narrow_treated()) {
      throw Case2Error(Errc::incompatible_hypothesis,
                       "set '" + set.set_id +
                           "' is attributed but its narrow case is untreated");
    }
    kappa.push_back(0);
    remaining.erase(it);
  }
  if (!remaining.empty()) {
    throw Case2Error(Errc::incompatible_hypothesis,
                     "attributed set '" + *remaining.begin() + "' does not exist in the study");
  }
  return kappa;
}

ParamInterpretation interpret_params(const SensitivityParams& params) {
  params.validate();
  return {1.0 - 1.0 / params.theta, 1.0 - 1.0 / params.delta};
}

}  // namespace case2
