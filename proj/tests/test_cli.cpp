// End-to-end checks of the case2 binary: exit codes, stable output, and the
// pipe simulate -> match/attribute/sweep/calibrate.

#include <cassert>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace {

const std::string kBin = CASE2_BIN_PATH;

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = kBin + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  FILE* pipe = popen(cmd.c_str(), "r");
  assert(pipe != nullptr);
  RunResult result;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, got);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  assert(out.good());
  out << text;
}

int checks = 0;

void expect(bool cond, const std::string& what) {
  ++checks;
  if (!cond) {
    std::cerr << "FAILED: " << what << "\n";
    std::exit(1);
  }
}

}  // namespace

int main() {
  const std::string dir = "cli_tmp";
  if (std::system(("rm -rf " + dir + " && mkdir -p " + dir).c_str()) != 0) return 1;

  // --- simulate a matched study -------------------------------------------
  const std::string study_csv = dir + "/study.csv";
  auto sim = run("simulate --sets 80 --j 3 --seed 42 --alpha-z -0.5 --out " + study_csv);
  expect(sim.exit_code == 0, "simulate exits 0");
  {
    std::ifstream in(study_csv);
    std::string header;
    std::getline(in, header);
    expect(header == "set_id,treated,narrow", "simulated study header");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
    expect(rows == 240, "80 sets of 3 rows");
  }

  // --- attribute: json output, determinism, usage errors -------------------
  auto attr = run("attribute --input " + study_csv + " --gamma 1 --theta 1 --delta 1 "
                  "--alpha 0.05");
  expect(attr.exit_code == 0, "attribute exits 0");
  const json attr_json = json::parse(attr.output);
  expect(attr_json.contains("a_star") && attr_json.contains("trace"), "attribute json fields");
  expect(attr_json["a_star"].get<long long>() >= 0, "a_star nonnegative");
  expect(attr_json["trace"].size() == std::size_t(attr_json["a_star"].get<long long>()) + 1,
         "trace covers 0..a_star");

  auto attr_again = run("attribute --input " + study_csv + " --gamma 1 --theta 1 --delta 1 "
                        "--alpha 0.05");
  expect(attr.output == attr_again.output, "attribute output is byte-identical across runs");

  auto bad_gamma = run("attribute --input " + study_csv + " --gamma 0.5", true);
  expect(bad_gamma.exit_code == 2, "gamma below 1 is a usage error");
  expect(bad_gamma.output.find("gamma") != std::string::npos, "error mentions gamma");

  auto missing = run("attribute --input " + dir + "/nope.csv", true);
  expect(missing.exit_code == 2, "missing input file is a usage error");

  // --- test subcommand ------------------------------------------------------
  auto test_out = run("test --input " + study_csv + " --gamma 1.5 --a 2");
  expect(test_out.exit_code == 0, "test exits 0");
  const json test_json = json::parse(test_out.output);
  expect(test_json.contains("p_upper") && test_json.contains("per_set_bounds"),
         "test json fields");
  expect(test_json["multiplier"].get<double>() == 1.5, "multiplier echoed");
  expect(test_json["two_by_two"].contains("odds_ratio"), "study 2x2 included");

  auto printed = run("test --input " + study_csv + " --gamma 1.5 --theta 1.2 --delta 1.4 "
                     "--multiplier printed");
  const json printed_json = json::parse(printed.output);
  expect(std::abs(printed_json["multiplier"].get<double>() - 1.2 * 1.2 * 1.5) < 1e-12,
         "printed multiplier is theta^2 gamma");

  // --- sweep ----------------------------------------------------------------
  const std::string grid_csv = dir + "/grid.csv";
  write_file(grid_csv, "gamma,theta,delta\n1.0,1.0,1.0\n1.5,1.0,1.0\n2.0,1.0,1.0\n");
  auto sweep_out = run("sweep --input " + study_csv + " --grid " + grid_csv);
  expect(sweep_out.exit_code == 0, "sweep exits 0");
  expect(sweep_out.output.rfind("gamma,theta,delta,alpha,a_star,p_at_a_star,method\n", 0) == 0,
         "sweep csv header");
  int lines = 0;
  for (char c : sweep_out.output) lines += c == '\n' ? 1 : 0;
  expect(lines == 4, "header plus one row per grid point");

  auto sweep_json = run("sweep --input " + study_csv + " --grid " + grid_csv +
                        " --format json --threads 2");
  const json rows = json::parse(sweep_json.output);
  expect(rows.is_array() && rows.size() == 3, "json sweep rows");
  expect(rows[0]["a_star"].get<long long>() >= rows[2]["a_star"].get<long long>(),
         "a_star nonincreasing in gamma");

  // --- nonneg ----------------------------------------------------------------
  auto nn = run("nonneg --table 30,10,10,30 --n 2 --alpha 0.05");
  expect(nn.exit_code == 0, "nonneg exits 0");
  const json nn_json = json::parse(nn.output);
  expect(nn_json.contains("a_star") && nn_json.contains("worst_allocation"),
         "nonneg json fields");
  auto nn_bad = run("nonneg --table 1,2,3", true);
  expect(nn_bad.exit_code == 2, "short table is a usage error");

  // --- match -----------------------------------------------------------------
  const std::string pop_csv = dir + "/pop.csv";
  {
    std::string text = "unit_id,case_type,treated,sex,age\n";
    int id = 0;
    for (const char* sex : {"m", "f"}) {
      for (int i = 0; i < 4; ++i) {
        text += "n" + std::to_string(id++) + ",narrow," + (i % 2 ? "1" : "0") + "," + sex +
                "," + std::to_string(40 + i) + "\n";
      }
      for (int i = 0; i < 9; ++i) {
        text += "m" + std::to_string(id++) + ",marginal," + (i % 3 ? "0" : "1") + "," + sex +
                "," + std::to_string(38 + i) + "\n";
      }
    }
    write_file(pop_csv, text);
  }
  const std::string matched_csv = dir + "/matched.csv";
  const std::string balance_csv = dir + "/balance.csv";
  auto match_out = run("match --input " + pop_csv + " --ratio 2 --exact-on sex "
                       "--distance age --out " + matched_csv + " --balance " + balance_csv);
  expect(match_out.exit_code == 0, "match exits 0");
  {
    std::ifstream in(matched_csv);
    std::string header;
    std::getline(in, header);
    expect(header.rfind("set_id,treated,narrow,source_unit_id", 0) == 0,
           "matched csv keeps source ids");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
    expect(rows == 8 * 3, "8 sets of 3 units");
    std::ifstream bal(balance_csv);
    std::getline(bal, header);
    expect(header == "covariate,smd,flag", "balance header");
  }

  auto infeasible = run("match --input " + pop_csv + " --ratio 4 --exact-on sex "
                        "--distance age --out " + dir + "/x.csv", true);
  expect(infeasible.exit_code == 1, "infeasible match is an analysis error");
  expect(infeasible.output.find("InfeasibleStratum") != std::string::npos,
         "stratum named in the error");

  // --- attribute on the matched file (smoke of the full pipeline) ------------
  auto attr2 = run("attribute --input " + matched_csv + " --format csv");
  expect(attr2.exit_code == 0, "attribute on matched output");
  expect(attr2.output.rfind("gamma,", 0) == 0, "csv format header");

  // --- calibrate --------------------------------------------------------------
  const std::string cal_csv = dir + "/cal.csv";
  auto sim_cal = run("simulate --sets 150 --j 3 --theta 1.6 --delta 2 --rate 0.7 --seed 9 "
                     "--covariates site:cat2,score:normal --out " + cal_csv);
  expect(sim_cal.exit_code == 0, "simulate for calibration");
  auto cal = run("calibrate --input " + cal_csv + " --covariates score --max-iter 80");
  expect(cal.exit_code == 0, "calibrate exits 0");
  const json cal_json = json::parse(cal.output);
  expect(cal_json.contains("coefficients") && cal_json.contains("warnings"),
         "calibrate json fields");
  if (cal_json["converged"].get<bool>()) {
    expect(cal_json.contains("theta_hat") && cal_json.contains("delta_hat"),
           "ratio bounds reported on convergence");
    expect(cal_json["theta_hat"].get<double>() >= 1.0, "theta_hat at least 1");
  }

  // --- verify ------------------------------------------------------------------
  auto verify = run("verify --draws 300 --seed 5");
  expect(verify.exit_code == 0, "verify exits 0");
  expect(verify.output.find("verify: PASS") != std::string::npos, "verify prints PASS");

  // --- population simulation with truth columns ---------------------------------
  auto pop_sim = run("simulate --sets 30 --population --truth --seed 3 --out " + dir +
                     "/simpop.csv");
  expect(pop_sim.exit_code == 0, "population simulate exits 0");
  {
    std::ifstream in(dir + "/simpop.csv");
    std::string header;
    std::getline(in, header);
    expect(header.find("truth_u") != std::string::npos, "truth columns present");
  }

  std::printf("cli tests passed (%d checks)\n", checks);
  if (std::system(("rm -rf " + dir).c_str()) != 0) return 1;
  return 0;
}
