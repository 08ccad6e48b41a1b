#pragma once

#include <set>
#include <string>
#include <vector>

#include "case2/error.hpp"

namespace case2 {

enum class CovariateType { numeric, categorical };

// One cell of a covariate row. Numeric columns may carry missing values at
// ingestion time; matching rejects them, categorical columns keep "missing"
// as an explicit level.
struct CovariateValue {
  bool missing = true;
  double num = 0.0;
  std::string cat;

  static CovariateValue number(double v) { return {false, v, {}}; }
  static CovariateValue category(std::string v) { return {false, 0.0, std::move(v)}; }
  static CovariateValue none() { return {}; }
};

struct CovariateColumn {
  std::string name;
  CovariateType type = CovariateType::numeric;
};

// A single broad case inside a matched set. `narrow` is the observed narrow
// case indicator; every unit in a case-case design is a case, so there is no
// referent flag.
struct Unit {
  std::string set_id;
  int unit_index = 0;  // 1..J after validation; 0 = unassigned
  bool treated = false;
  bool narrow = false;
  std::vector<CovariateValue> covariates;
};

struct MatchedSet {
  std::string set_id;
  std::vector<Unit> units;  // unit 1 is the narrow case after validation

  int z_plus() const {
    int z = 0;
    for (const auto& u : units) z += u.treated ? 1 : 0;
    return z;
  }
  int l_plus() const {
    int l = 0;
    for (const auto& u : units) l += u.narrow ? 1 : 0;
    return l;
  }
  bool narrow_treated() const { return units.front().treated; }
};

struct Study {
  std::vector<MatchedSet> sets;
  int J = 0;
  std::vector<CovariateColumn> schema;

  int I() const { return int(sets.size()); }
};

enum class MultiplierMode {
  proposition_one,  // Theta * Delta * Gamma
  as_printed,       // Theta^2 * Gamma
};

struct SensitivityParams {
  double gamma = 1.0;
  double theta = 1.0;
  double delta = 1.0;
  MultiplierMode multiplier_mode = MultiplierMode::proposition_one;

  void validate() const {
    if (!(gamma >= 1.0) || !(theta >= 1.0) || !(delta >= 1.0)) {
      throw Case2Error(Errc::invalid_params, "gamma, theta, delta must all be >= 1");
    }
  }

  double multiplier() const {
    return multiplier_mode == MultiplierMode::proposition_one ? theta * delta * gamma
                                                              : theta * theta * gamma;
  }
};

// A compatible sharp hypothesis: the named sets have their (treated) narrow
// case attributed to the treatment.
struct AttributionHypothesis {
  std::set<std::string> attributed;

  int a() const { return int(attributed.size()); }
};

struct ParamInterpretation {
  double theta_fraction = 0.0;  // 1 - 1/Theta
  double delta_fraction = 0.0;  // 1 - 1/Delta
};

// --- operations -------------------------------------------------------------

// Groups records by set_id and enforces the design invariants: equal set
// sizes J >= 2, exactly one narrow case per set, no duplicate units. Output
// is canonical: sets sorted by set_id, narrow case first within each set,
// marginal units in a deterministic order independent of input row order.
Study validate_study(const std::vector<Unit>& records,
                     std::vector<CovariateColumn> schema = {});

// kappa_n(r_C,i+) per set: 0 for attributed sets, 1 otherwise, in study set
// order. Throws if an attributed set's narrow case is untreated (or unknown).
std::vector<int> adjusted_kappa(const Study& study, const AttributionHypothesis& hyp);

ParamInterpretation interpret_params(const SensitivityParams& params);

}  // namespace case2
