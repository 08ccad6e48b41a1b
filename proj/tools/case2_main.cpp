#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "case2/calibration.hpp"
#include "case2/csv.hpp"
#include "case2/inference.hpp"
#include "case2/matching.hpp"
#include "case2/nonneg.hpp"
#include "case2/oracle.hpp"
#include "case2/simulate.hpp"
#include "case2/types.hpp"

using json = nlohmann::json;

namespace {

using namespace case2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open input file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw UsageError("cannot open output file '" + out_path + "'");
  out << text;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

SensitivityParams make_params(double gamma, double theta, double delta,
                              const std::string& multiplier) {
  SensitivityParams params;
  params.gamma = gamma;
  params.theta = theta;
  params.delta = delta;
  if (multiplier == "prop1") {
    params.multiplier_mode = MultiplierMode::proposition_one;
  } else if (multiplier == "printed") {
    params.multiplier_mode = MultiplierMode::as_printed;
  } else {
    throw UsageError("--multiplier must be prop1 or printed");
  }
  params.validate();
  return params;
}

TailMethod make_method(const std::string& name) {
  if (name == "exact") return TailMethod::exact;
  if (name == "normal") return TailMethod::normal;
  throw UsageError("--method must be exact or normal");
}

std::vector<GridPoint> parse_grid_csv(const std::string& text, MultiplierMode mode) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw UsageError("grid file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_list(line);
  int gcol = -1, tcol = -1, dcol = -1, acol = -1;
  for (int c = 0; c < int(header.size()); ++c) {
    if (header[c] == "gamma") gcol = c;
    else if (header[c] == "theta") tcol = c;
    else if (header[c] == "delta") dcol = c;
    else if (header[c] == "alpha") acol = c;
  }
  if (gcol < 0 || tcol < 0 || dcol < 0) {
    throw UsageError("grid file needs columns gamma,theta,delta[,alpha]");
  }
  std::vector<GridPoint> grid;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_list(line);
    if (fields.size() < header.size()) {
      throw UsageError("grid line " + std::to_string(lineno) + " is short");
    }
    GridPoint point;
    try {
      point.params.gamma = std::stod(fields[std::size_t(gcol)]);
      point.params.theta = std::stod(fields[std::size_t(tcol)]);
      point.params.delta = std::stod(fields[std::size_t(dcol)]);
      if (acol >= 0) point.alpha = std::stod(fields[std::size_t(acol)]);
    } catch (const std::exception&) {
      throw UsageError("grid line " + std::to_string(lineno) + " has a non-numeric value");
    }
    point.params.multiplier_mode = mode;
    point.params.validate();
    grid.push_back(point);
  }
  if (grid.empty()) throw UsageError("grid file has no rows");
  return grid;
}

json test_result_json(const TestResult& res, const SensitivityParams& params) {
  const auto interp = interpret_params(params);
  json per_set = json::array();
  for (const auto& b : res.per_set) {
    per_set.push_back({{"set_id", b.set_id},
                       {"lambda_bar", b.lambda_bar},
                       {"lambda_barbar", b.lambda_barbar},
                       {"gap", b.gap},
                       {"w_bar", b.w_bar},
                       {"w_barbar", b.w_barbar}});
  }
  return json{{"t", res.t},
              {"a", res.a},
              {"statistic", res.statistic},
              {"p_upper", res.p_upper},
              {"method", tail_method_name(res.method)},
              {"flag", test_flag_name(res.flag)},
              {"multiplier", params.multiplier()},
              {"theta_fraction", interp.theta_fraction},
              {"delta_fraction", interp.delta_fraction},
              {"per_set_bounds", per_set}};
}

int run(int argc, char** argv) {
  CLI::App app{"attributable-effect inference and sensitivity analysis for matched "
               "case-case studies"};
  app.require_subcommand(1);
  argv = app.ensure_utf8(argv);

  std::string input, out, format, grid_path, balance_path;
  std::string method = "exact", multiplier = "prop1";
  double gamma = 1.0, theta = 1.0, delta = 1.0, alpha = 0.05;
  long long a_hyp = 0;
  unsigned threads = 0;

  // match
  auto* match_cmd = app.add_subcommand("match", "build 1:k matched sets from a population CSV");
  std::string exact_on, distance_on;
  int ratio = 2;
  double caliper = -1.0;
  match_cmd->add_option("--input", input, "population CSV")->required();
  match_cmd->add_option("--out", out, "matched-study CSV output (default stdout)");
  match_cmd->add_option("--ratio", ratio, "marginal cases per narrow case (default 2)");
  match_cmd->add_option("--exact-on", exact_on, "comma-separated covariates for exact strata");
  match_cmd->add_option("--distance", distance_on,
                        "comma-separated covariates for the rank-Mahalanobis distance");
  match_cmd->add_option("--caliper", caliper, "maximum pair distance (off by default)");
  match_cmd->add_option("--balance", balance_path, "write a covariate balance CSV here");
  match_cmd->add_option("--threads", threads, "worker cap (default: all cores)");

  // test
  auto* test_cmd = app.add_subcommand("test", "worst-case p-value for a fixed attribution count");
  test_cmd->add_option("--input", input, "matched-study CSV")->required();
  test_cmd->add_option("--gamma", gamma, "hidden-bias bound (>= 1)");
  test_cmd->add_option("--theta", theta, "selection-bias bound (>= 1)");
  test_cmd->add_option("--delta", delta, "treatment-caused-marginal bound (>= 1)");
  test_cmd->add_option("--a", a_hyp, "attributed count under test (default 0)");
  test_cmd->add_option("--method", method, "exact|normal (default exact)");
  test_cmd->add_option("--multiplier", multiplier, "prop1|printed (default prop1)");
  test_cmd->add_option("--out", out, "output path (default stdout)");

  // attribute
  auto* attr_cmd = app.add_subcommand("attribute", "one-sided prediction interval for A");
  attr_cmd->add_option("--input", input, "matched-study CSV")->required();
  attr_cmd->add_option("--gamma", gamma, "hidden-bias bound (>= 1)");
  attr_cmd->add_option("--theta", theta, "selection-bias bound (>= 1)");
  attr_cmd->add_option("--delta", delta, "treatment-caused-marginal bound (>= 1)");
  attr_cmd->add_option("--alpha", alpha, "one-sided level (default 0.05)");
  attr_cmd->add_option("--method", method, "exact|normal");
  attr_cmd->add_option("--multiplier", multiplier, "prop1|printed");
  attr_cmd->add_option("--format", format, "json|csv (default json)");
  attr_cmd->add_option("--out", out, "output path");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "prediction intervals over a sensitivity grid");
  sweep_cmd->add_option("--input", input, "matched-study CSV")->required();
  sweep_cmd->add_option("--grid", grid_path, "CSV with gamma,theta,delta[,alpha]")->required();
  sweep_cmd->add_option("--alpha", alpha, "default level for rows without alpha");
  sweep_cmd->add_option("--method", method, "exact|normal");
  sweep_cmd->add_option("--multiplier", multiplier, "prop1|printed");
  sweep_cmd->add_option("--format", format, "csv|json (default csv here)");
  sweep_cmd->add_option("--out", out, "output path");
  sweep_cmd->add_option("--threads", threads, "worker cap");

  // nonneg
  auto* nonneg_cmd =
      app.add_subcommand("nonneg", "attributable-effect interval allowing assumption violations");
  std::string table_text;
  long long violators = 0;
  nonneg_cmd->add_option("--table", table_text, "a,b,c,d counts")->required();
  nonneg_cmd->add_option("--n", violators, "units violating the nonnegative-effect assumption");
  nonneg_cmd->add_option("--alpha", alpha, "one-sided level (default 0.05)");
  nonneg_cmd->add_option("--out", out, "output path");

  // calibrate
  auto* cal_cmd = app.add_subcommand(
      "calibrate", "bound Theta and Delta with a random-intercept logistic fit");
  std::string cal_covariates;
  int nodes = 21, max_iter = 200;
  cal_cmd->add_option("--input", input, "matched-study CSV (or population CSV with set_id)")
      ->required();
  cal_cmd->add_option("--covariates", cal_covariates,
                      "comma-separated covariates (default: all)");
  cal_cmd->add_option("--nodes", nodes, "Gauss-Hermite nodes (default 21)");
  cal_cmd->add_option("--max-iter", max_iter, "outer iteration cap (default 200)");
  cal_cmd->add_option("--out", out, "output path");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "synthetic studies under the sensitivity model");
  simulate::SimConfig sim_cfg;
  std::string sim_covariates;
  bool truth = false, population_out = false;
  sim_cmd->add_option("--sets", sim_cfg.n_sets, "number of matched sets");
  sim_cmd->add_option("--j", sim_cfg.j, "set size (1 narrow + j-1 marginal)");
  sim_cmd->add_option("--gamma", sim_cfg.gamma, "generative Gamma");
  sim_cmd->add_option("--theta", sim_cfg.theta, "generative Theta");
  sim_cmd->add_option("--delta", sim_cfg.delta, "generative Delta");
  sim_cmd->add_option("--alpha-z", sim_cfg.alpha_z, "baseline treatment logit");
  sim_cmd->add_option("--rate", sim_cfg.true_attributable_rate,
                      "case-type shift scale in [0,1] (0 = null)");
  sim_cmd->add_option("--seed", sim_cfg.seed, "64-bit seed");
  sim_cmd->add_option("--theta-c-min", sim_cfg.theta_c_min,
                      "lower end of the per-unit narrow-case probability (default 0.2)");
  sim_cmd->add_option("--theta-c-max", sim_cfg.theta_c_max,
                      "upper end of the per-unit narrow-case probability (default 0.8)");
  sim_cmd->add_option("--covariates", sim_covariates,
                      "name:dist pairs, dist in normal|uniform|binary|cat<k>");
  sim_cmd->add_flag("--truth", truth, "emit ground-truth columns / counts");
  sim_cmd->add_flag("--population", population_out, "write a population CSV instead of a study");
  sim_cmd->add_option("--out", out, "output path");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the bound containment/attainment oracles");
  long long draws = 10000;
  std::uint64_t verify_seed = 20260809;
  verify_cmd->add_option("--draws", draws, "random configurations per set size (default 10000)");
  verify_cmd->add_option("--seed", verify_seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (match_cmd->parsed()) {
      const Population pop = parse_population_csv_string(read_file(input));
      MatchSpec spec;
      spec.ratio = ratio;
      spec.exact_on = split_list(exact_on);
      spec.distance_covariates = split_list(distance_on);
      if (spec.distance_covariates.empty()) {
        throw UsageError("--distance needs at least one covariate");
      }
      if (caliper >= 0.0) spec.caliper = caliper;
      const MatchProblem problem = build_match_problem(pop, spec);
      if (problem.singular_covariance) {
        std::cerr << "warning: rank covariance is singular; using the pseudo-inverse\n";
      }
      const MatchResult result = optimal_match(problem, spec, threads);
      const Study study = assemble_matched_study(pop, result);
      emit(write_study_csv(study), out);
      if (!balance_path.empty()) {
        std::string bal = "covariate,smd,flag\n";
        for (const auto& row : balance_table(pop, result)) {
          bal += row.covariate + "," + format_double(row.smd) + "," +
                 (row.undefined ? "undefined" : "ok") + "\n";
        }
        emit(bal, balance_path);
      }
      std::cerr << json{{"sets", study.I()},
                        {"j", study.J},
                        {"total_distance", result.total_distance}}
                       .dump()
                << "\n";
      return 0;
    }

    if (test_cmd->parsed()) {
      const Study study = parse_matched_csv_string(read_file(input));
      const SensitivityParams params = make_params(gamma, theta, delta, multiplier);
      const TestResult res = worst_case_pvalue(study, params, a_hyp, make_method(method));
      json output = test_result_json(res, params);
      const auto summary = two_by_two_from_study(study);
      output["two_by_two"] = {{"narrow_treated", summary.narrow_treated},
                              {"narrow_untreated", summary.narrow_untreated},
                              {"marginal_treated", summary.marginal_treated},
                              {"marginal_untreated", summary.marginal_untreated},
                              {"odds_ratio", summary.odds_ratio},
                              {"haldane_corrected", summary.haldane_corrected}};
      emit(output.dump(2) + "\n", out);
      return 0;
    }

    if (attr_cmd->parsed()) {
      if (format.empty()) format = "json";
      const Study study = parse_matched_csv_string(read_file(input));
      const SensitivityParams params = make_params(gamma, theta, delta, multiplier);
      const TailMethod tm = make_method(method);
      const PredictionInterval interval = prediction_interval(study, params, alpha, tm);
      if (format == "csv") {
        SweepRow row{params.gamma, params.theta, params.delta, alpha,
                     interval.a_star,  interval.p_at_a_star, tail_method_name(tm)};
        emit(write_results({row}, ResultFormat::csv), out);
      } else if (format == "json") {
        json trace = json::array();
        for (const auto& [a, p] : interval.trace) trace.push_back({{"a", a}, {"p", p}});
        emit(json{{"a_star", interval.a_star},
                  {"p_at_a_star", interval.p_at_a_star},
                  {"alpha", alpha},
                  {"gamma", params.gamma},
                  {"theta", params.theta},
                  {"delta", params.delta},
                  {"method", tail_method_name(tm)},
                  {"interval", "A >= " + std::to_string(interval.a_star)},
                  {"trace", trace}}
                 .dump(2) +
                 "\n",
             out);
      } else {
        throw UsageError("--format must be json or csv");
      }
      return 0;
    }

    if (sweep_cmd->parsed()) {
      if (format.empty()) format = "csv";
      if (format != "json" && format != "csv") throw UsageError("--format must be json or csv");
      const Study study = parse_matched_csv_string(read_file(input));
      SensitivityParams mode_probe = make_params(1.0, 1.0, 1.0, multiplier);
      const auto grid = parse_grid_csv(read_file(grid_path), mode_probe.multiplier_mode);
      const auto rows = sweep(study, grid, alpha, make_method(method), threads);
      const ResultFormat rf = format == "json" ? ResultFormat::json : ResultFormat::csv;
      emit(write_results(rows, rf), out);
      return 0;
    }

    if (nonneg_cmd->parsed()) {
      const auto cells = split_list(table_text);
      if (cells.size() != 4) throw UsageError("--table expects a,b,c,d");
      nonneg::TwoByTwo table;
      try {
        table.a = std::stoll(cells[0]);
        table.b = std::stoll(cells[1]);
        table.c = std::stoll(cells[2]);
        table.d = std::stoll(cells[3]);
      } catch (const std::exception&) {
        throw UsageError("--table cells must be integers");
      }
      const long long a_star = nonneg::nonneg_interval(table, violators, alpha);
      const auto worst = nonneg::worst_allocation(table, violators, a_star);
      emit(json{{"table", {{"a", table.a}, {"b", table.b}, {"c", table.c}, {"d", table.d}}},
                {"n", violators},
                {"alpha", alpha},
                {"a_star", a_star},
                {"interval", "A >= " + std::to_string(a_star)},
                {"p_at_a_star", worst.p_max},
                {"worst_allocation",
                 {{"from_b", worst.allocation.from_b}, {"from_d", worst.allocation.from_d}}},
                {"point_probability",
                 nonneg::fisher_point(table, a_star, worst.allocation)}}
               .dump(2) +
               "\n",
           out);
      return 0;
    }

    if (cal_cmd->parsed()) {
      const std::string text = read_file(input);
      std::istringstream head(text);
      std::string header;
      std::getline(head, header);
      calibration::CalibrationData data;
      if (header.find("case_type") != std::string::npos) {
        const Population pop = parse_population_csv_string(text);
        if (!pop.has_set_id) {
          throw Case2Error(Errc::too_few_groups,
                           "population file needs a set_id column for grouping");
        }
        std::vector<std::string> covs = split_list(cal_covariates);
        if (covs.empty()) {
          for (const auto& col : pop.schema) covs.push_back(col.name);
        }
        data = calibration::build_calibration_data(pop.records, pop.schema, covs);
      } else {
        const Study study = parse_matched_csv_string(text);
        std::vector<std::string> covs = split_list(cal_covariates);
        if (covs.empty()) {
          for (const auto& col : study.schema) covs.push_back(col.name);
        }
        data = calibration::build_calibration_data(study, covs);
      }
      const auto fit = calibration::fit_random_intercept_logistic(data, nodes, max_iter);
      json coef = json::object();
      for (std::size_t j = 0; j < fit.coefficients.size(); ++j) {
        coef[fit.coefficient_names[j]] = fit.coefficients[j];
      }
      json output{{"coefficients", coef},
                  {"random_intercept_sd", fit.random_intercept_sd},
                  {"converged", fit.converged},
                  {"log_likelihood", fit.log_likelihood},
                  {"iterations", fit.iterations},
                  {"quadrature_nodes", fit.quadrature_nodes},
                  {"warnings",
                   {"the random intercept is a latent variable and is assumed independent of "
                    "covariates and treatment; it is not a fitted unmeasured confounder",
                    "the ratio maxima carry unpropagated estimation error; treat these bounds "
                    "as informal guidance for choosing Theta and Delta"}}};
      if (fit.converged) {
        const auto bounds = calibration::ratio_bounds(fit, data);
        output["theta_hat"] = bounds.theta_hat;
        output["delta_hat"] = bounds.delta_hat;
      }
      emit(output.dump(2) + "\n", out);
      return 0;
    }

    if (sim_cmd->parsed()) {
      for (const auto& pair : split_list(sim_covariates)) {
        const auto pos = pair.find(':');
        if (pos == std::string::npos) {
          throw UsageError("--covariates entries look like name:dist");
        }
        sim_cfg.covariates.push_back({pair.substr(0, pos), pair.substr(pos + 1)});
      }
      sim_cfg.include_truth = truth;
      if (population_out) {
        const Population pop = simulate::simulate_population(sim_cfg);
        emit(write_population_csv(pop), out);
      } else {
        const auto sim = simulate::simulate_matched(sim_cfg);
        emit(write_study_csv(sim.study), out);
        if (truth) {
          std::cerr << json{{"true_attributable", sim.true_attributable}}.dump() << "\n";
        }
      }
      return 0;
    }

    if (verify_cmd->parsed()) {
      const auto report = oracle::run_verification(draws, verify_seed);
      std::cout << "containment: " << report.containment_checked << " checked, "
                << report.containment_violations << " violations (max excursion "
                << report.max_out_of_bounds << ")\n";
      std::cout << "attainment:  " << report.attainment_checked << " corners, "
                << report.attainment_failures << " failures (max gap "
                << report.max_attainment_gap << ")\n";
      std::cout << "agreement:   " << report.agreement_checked << " pairs, "
                << report.agreement_failures << " failures (max diff "
                << report.max_path_difference << ")\n";
      std::cout << "verify: " << (report.passed() ? "PASS" : "FAIL") << "\n";
      return report.passed() ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const Case2Error& e) {
    const bool usage = e.code() == Errc::invalid_params;
    std::cerr << json{{"error", errc_name(e.code())}, {"message", e.what()}}.dump() << "\n";
    return usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
