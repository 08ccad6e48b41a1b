#include <doctest.h>

#include <cmath>

#include "case2/inference.hpp"
#include "case2/oracle.hpp"
#include "test_util.hpp"

using namespace case2;
using testutil::SetShape;

TEST_SUITE_BEGIN("inference");

TEST_CASE("sign_score counts treated narrow cases") {
  CHECK(sign_score(testutil::make_study({{1, true}, {2, true}, {1, false}}, 3)) == 2);
  CHECK(sign_score(testutil::make_study({{0, false}, {0, false}}, 3)) == 0);

  // motivating-data scale: 1365 sets, 247 treated narrow cases
  const Study big = testutil::table_shape_study(1365, 3, 247, 0.108, 12);
  CHECK(sign_score(big) == 247);
}

TEST_CASE("per_set_upper") {
  SensitivityParams base;
  CHECK(per_set_upper(1, 1, 3, base) == doctest::Approx(1.0 / 3.0));
  CHECK(per_set_upper(0, 1, 3, base) == 0.0);
  CHECK(per_set_upper(1, 0, 3, base) == 0.0);

  SensitivityParams g2 = base;
  g2.gamma = 2.0;
  CHECK(per_set_upper(1, 1, 3, g2) == doctest::Approx(0.5));

  SensitivityParams td = base;
  td.theta = 1.2;
  td.delta = 1.2;
  CHECK(per_set_upper(1, 1, 3, td) == doctest::Approx(0.41860465116279066).epsilon(1e-12));
}

TEST_CASE("per_set_lower") {
  SensitivityParams base;
  CHECK(per_set_lower(1, 1, 3, base) == doctest::Approx(1.0 / 3.0));

  SensitivityParams g2 = base;
  g2.gamma = 2.0;
  CHECK(per_set_lower(1, 1, 3, g2) == doctest::Approx(0.2));

  // Theta and Delta never enter the lower bound
  SensitivityParams g2td = g2;
  g2td.theta = 5.0;
  g2td.delta = 5.0;
  CHECK(per_set_lower(1, 1, 3, g2td) == doctest::Approx(0.2));
}

TEST_CASE("bound containment, equality only at the randomization point") {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    SensitivityParams params;
    params.gamma = 1.0 + 2.0 * rng.uniform();
    params.theta = 1.0 + 1.5 * rng.uniform();
    params.delta = 1.0 + 1.5 * rng.uniform();
    const int j = 2 + int(rng.below(4));
    const int z = int(rng.below(std::uint64_t(j + 1)));
    const double lo = per_set_lower(z, 1, j, params);
    const double hi = per_set_upper(z, 1, j, params);
    CHECK(lo <= hi + 1e-15);
  }
  SensitivityParams unit;
  for (int j = 2; j <= 5; ++j) {
    for (int z = 0; z <= j; ++z) {
      CHECK(per_set_lower(z, 1, j, unit) == doctest::Approx(per_set_upper(z, 1, j, unit)));
    }
  }
  // strict separation as soon as any parameter leaves 1
  for (int which = 0; which < 3; ++which) {
    SensitivityParams bumped;
    (which == 0 ? bumped.gamma : which == 1 ? bumped.theta : bumped.delta) = 1.3;
    CHECK(per_set_lower(1, 1, 3, bumped) < per_set_upper(1, 1, 3, bumped));
  }
}

TEST_CASE("poisson_binomial_tail") {
  CHECK(poisson_binomial_tail({0.5, 0.5}, 1) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(poisson_binomial_tail({0.3, 0.9, 0.2}, 0) == 1.0);
  CHECK(poisson_binomial_tail({0.3, 0.9}, 3) == 0.0);

  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> probs;
    const int n = 1 + int(rng.below(12));
    for (int i = 0; i < n; ++i) probs.push_back(rng.uniform());
    const long long k = (long long)rng.below(std::uint64_t(n + 2));
    const double dp = poisson_binomial_tail(probs, k);
    const double brute = oracle::enumerate_tail(probs, k);
    CHECK(dp == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("normal_tail") {
  SUBCASE("k at the mean gives one half") {
    const std::vector<double> probs(10, 0.25);
    bool degenerate = false;
    // sum p = 2.5; use k = 2.5 unreachable for integers, so construct sum = k
    const std::vector<double> four(8, 0.5);  // mean 4
    CHECK(normal_tail(four, 4, &degenerate) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_FALSE(degenerate);
    (void)probs;
  }
  SUBCASE("large homogeneous case matches the exact tail within 0.01") {
    const std::vector<double> probs(1000, 0.3);
    const double approx = normal_tail(probs, 330);
    const double exact = poisson_binomial_tail(probs, 330);
    CHECK(std::abs(approx - exact) < 0.01);
  }
  SUBCASE("degenerate variance") {
    bool degenerate = false;
    CHECK(normal_tail(std::vector<double>(5, 0.0), 1, &degenerate) == 0.0);
    CHECK(degenerate);
    CHECK(normal_tail(std::vector<double>(5, 1.0), 3, &degenerate) == 1.0);
    CHECK(degenerate);
  }
}

TEST_CASE("worst_case_pvalue on the worked three-set study") {
  // I=3, J=3, every set has one treated unit and a treated narrow case
  const Study study = testutil::make_study({{1, true}, {1, true}, {1, true}}, 3);
  SensitivityParams unit;

  const TestResult r0 = worst_case_pvalue(study, unit, 0);
  CHECK(r0.t == 3);
  CHECK(r0.p_upper == doctest::Approx(1.0 / 27.0).epsilon(1e-12));
  CHECK(r0.flag == TestFlag::none);
  REQUIRE(r0.per_set.size() == 3);
  for (const auto& b : r0.per_set) {
    CHECK(b.lambda_bar == 0.0);
    CHECK(b.lambda_barbar == doctest::Approx(1.0 / 3.0));
    CHECK(b.gap == doctest::Approx(1.0 / 3.0));
    CHECK(b.w_barbar == doctest::Approx(2.0 / 9.0));
    CHECK(b.w_bar == 0.0);
  }

  const TestResult r1 = worst_case_pvalue(study, unit, 1);
  CHECK(r1.p_upper == doctest::Approx(1.0 / 9.0).epsilon(1e-12));

  const TestResult r3 = worst_case_pvalue(study, unit, 3);
  CHECK(r3.p_upper == 1.0);
  CHECK(r3.flag == TestFlag::certain);
}

TEST_CASE("sets with untreated narrow cases still contribute their upper bound") {
  // two sets, J=3, one treated unit each; only set 1 has a treated narrow
  // case. Under randomization both sets are Bernoulli(1/3), so
  // P(T >= 1) = 1 - (2/3)^2 = 5/9, not 1/3.
  const Study study = testutil::make_study({{1, true}, {1, false}}, 3);
  SensitivityParams unit;
  const TestResult res = worst_case_pvalue(study, unit, 0);
  CHECK(res.t == 1);
  CHECK(res.p_upper == doctest::Approx(5.0 / 9.0).epsilon(1e-12));
  // only the treated-narrow set is in the attribution pool
  REQUIRE(res.per_set.size() == 1);
  CHECK(res.per_set[0].set_id == "s0001");
}

TEST_CASE("worst-case expectation reaching T short-circuits to plausibility") {
  // J=2: both sets carry bound 1/2, so a=0 already expects T=1 events
  const Study study = testutil::make_study({{1, true}, {1, false}}, 2);
  SensitivityParams unit;
  const TestResult res = worst_case_pvalue(study, unit, 0);
  CHECK(res.p_upper == 1.0);
  CHECK(res.flag == TestFlag::plausible_by_expectation);
}

TEST_CASE("randomization-case reduction: unattributed bounds equal z/J at the null point") {
  Rng rng(17);
  SensitivityParams unit;
  for (int trial = 0; trial < 20; ++trial) {
    const Study study = testutil::random_study(rng, 8, 4);
    for (const auto& set : study.sets) {
      CHECK(per_set_upper(set.z_plus(), 1, study.J, unit) ==
            doctest::Approx(double(set.z_plus()) / study.J).epsilon(1e-14));
    }
  }
}

TEST_CASE("p is nondecreasing in a under both tail methods") {
  Rng rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const Study study = testutil::random_study(rng, 10, 4);
    SensitivityParams params;
    params.gamma = 1.0 + rng.uniform();
    params.theta = 1.0 + rng.uniform();
    params.delta = 1.0 + rng.uniform();
    const long long t = sign_score(study);
    for (TailMethod method : {TailMethod::exact, TailMethod::normal}) {
      double prev = -1.0;
      for (long long a = 0; a <= t; ++a) {
        const double p = worst_case_pvalue(study, params, a, method).p_upper;
        CHECK(p >= prev - 1e-12);
        prev = p;
      }
      CHECK(prev == 1.0);  // a = T is certain
    }
  }
}

TEST_CASE("prediction_interval on the worked study") {
  const Study study = testutil::make_study({{1, true}, {1, true}, {1, true}}, 3);
  SensitivityParams unit;
  const PredictionInterval interval = prediction_interval(study, unit, 0.05);
  CHECK(interval.a_star == 1);
  REQUIRE(interval.trace.size() == 2);
  CHECK(interval.trace[0].second == doctest::Approx(1.0 / 27.0));
  CHECK(interval.trace[1].second == doctest::Approx(1.0 / 9.0));
  CHECK(interval.p_at_a_star == doctest::Approx(1.0 / 9.0));

  // p(0) > alpha gives the degenerate interval A >= 0
  const PredictionInterval loose = prediction_interval(study, unit, 0.02);
  CHECK(loose.a_star == 0);
}

TEST_CASE("prediction_interval rejects bad alpha") {
  const Study study = testutil::make_study({{1, true}}, 2);
  CHECK_THROWS_AS(prediction_interval(study, {}, 0.0), Case2Error);
  CHECK_THROWS_AS(prediction_interval(study, {}, 1.0), Case2Error);
}

TEST_CASE("sweep") {
  const Study study = testutil::table_shape_study(400, 3, 90, 0.12, 29);

  SUBCASE("a_star is nonincreasing in gamma") {
    std::vector<GridPoint> grid;
    for (double g : {1.0, 1.5, 2.0}) {
      GridPoint point;
      point.params.gamma = g;
      grid.push_back(point);
    }
    const auto rows = sweep(study, grid, 0.05);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].a_star >= rows[1].a_star);
    CHECK(rows[1].a_star >= rows[2].a_star);
    CHECK(rows[0].a_star > 0);
  }
  SUBCASE("singleton grid equals prediction_interval") {
    GridPoint point;
    point.params.gamma = 1.4;
    const auto rows = sweep(study, {point}, 0.05);
    const auto interval = prediction_interval(study, point.params, 0.05);
    CHECK(rows[0].a_star == interval.a_star);
    CHECK(rows[0].p_at_a_star == interval.p_at_a_star);
  }
  SUBCASE("duplicated grid points give identical rows") {
    GridPoint point;
    point.params.gamma = 1.25;
    const auto rows = sweep(study, {point, point}, 0.05, TailMethod::exact, 2);
    CHECK(rows[0].a_star == rows[1].a_star);
    CHECK(rows[0].p_at_a_star == rows[1].p_at_a_star);
  }
  SUBCASE("a_star is nonincreasing in theta and delta too") {
    std::vector<GridPoint> grid;
    for (double v : {1.0, 1.3, 1.8}) {
      GridPoint point;
      point.params.theta = v;
      grid.push_back(point);
      point.params = {};
      point.params.delta = v;
      grid.push_back(point);
    }
    const auto rows = sweep(study, grid, 0.05);
    CHECK(rows[0].a_star >= rows[2].a_star);
    CHECK(rows[2].a_star >= rows[4].a_star);  // theta ascending
    CHECK(rows[1].a_star >= rows[3].a_star);
    CHECK(rows[3].a_star >= rows[5].a_star);  // delta ascending
  }
  SUBCASE("empty grid is an error") {
    CHECK_THROWS_AS(sweep(study, {}, 0.05), Case2Error);
  }
}

TEST_CASE("two_by_two_summary") {
  SUBCASE("motivating-data counts give the reported odds ratio") {
    const auto s = two_by_two_from_counts(247, 1118, 183, 2547);
    CHECK(s.odds_ratio == doctest::Approx(3.0749142).epsilon(1e-6));
    CHECK(std::round(s.odds_ratio * 100.0) / 100.0 == doctest::Approx(3.07));
    CHECK_FALSE(s.haldane_corrected);
  }
  SUBCASE("symmetric table") {
    CHECK(two_by_two_from_counts(5, 5, 5, 5).odds_ratio == doctest::Approx(1.0));
  }
  SUBCASE("zero cell engages the Haldane correction") {
    const auto s = two_by_two_from_counts(3, 0, 2, 4);
    CHECK(s.haldane_corrected);
    CHECK(s.odds_ratio == doctest::Approx((3.5 * 4.5) / (0.5 * 2.5)));
  }
  SUBCASE("from population records") {
    std::vector<PopulationRecord> pop;
    auto add = [&](CaseType type, bool treated, int count) {
      for (int i = 0; i < count; ++i) {
        PopulationRecord rec;
        rec.unit_id = std::to_string(pop.size());
        rec.case_type = type;
        rec.treated = treated;
        pop.push_back(rec);
      }
    };
    add(CaseType::narrow, true, 7);
    add(CaseType::narrow, false, 3);
    add(CaseType::marginal, true, 2);
    add(CaseType::marginal, false, 8);
    const auto s = two_by_two_summary(pop);
    CHECK(s.narrow_treated == 7);
    CHECK(s.odds_ratio == doctest::Approx((7.0 * 8.0) / (3.0 * 2.0)));
  }
}

TEST_CASE("exact and normal methods agree on homogeneous studies") {
  // all sets share z_plus = 1; 260 of 600 narrow cases treated
  std::vector<SetShape> shapes;
  for (int i = 0; i < 600; ++i) shapes.push_back({1, i < 260});
  const Study study = testutil::make_study(shapes, 3);
  SensitivityParams params;
  const auto exact = prediction_interval(study, params, 0.05, TailMethod::exact);
  const auto normal = prediction_interval(study, params, 0.05, TailMethod::normal);
  for (const auto& [a, p] : exact.trace) {
    const double pn = worst_case_pvalue(study, params, a, TailMethod::normal).p_upper;
    CHECK(std::abs(p - pn) < 0.01);
  }
  CHECK(std::llabs(exact.a_star - normal.a_star) <= 1);
}

TEST_SUITE_END();
