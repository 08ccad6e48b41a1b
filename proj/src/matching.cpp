#include "case2/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "case2/parallel.hpp"

namespace case2 {

namespace {

constexpr double kCostScale = 1e6;

int find_column(const Population& pop, const std::string& name) {
  for (int c = 0; c < int(pop.schema.size()); ++c) {
    if (pop.schema[c].name == name) return c;
  }
  throw Case2Error(Errc::non_numeric_covariate, "covariate '" + name + "' not found");
}

std::string categorical_text(const CovariateValue& cv) {
  return cv.missing ? std::string("<missing>") : cv.cat;
}

// One-hot expansion of the named covariates into a dense numeric matrix,
// rows aligned with pop.records.
Eigen::MatrixXd design_matrix(const Population& pop, const std::vector<std::string>& names) {
  const std::size_t n = pop.records.size();
  std::vector<std::vector<double>> columns;
  for (const auto& name : names) {
    const int c = find_column(pop, name);
    if (pop.schema[c].type == CovariateType::numeric) {
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) {
        const auto& cv = pop.records[r].covariates[c];
        if (cv.missing) {
          throw Case2Error(Errc::non_numeric_covariate,
                           "numeric covariate '" + name + "' has missing values");
        }
        col[r] = cv.num;
      }
      columns.push_back(std::move(col));
    } else {
      std::set<std::string> levels;
      for (const auto& rec : pop.records) levels.insert(categorical_text(rec.covariates[c]));
      for (const auto& level : levels) {
        std::vector<double> col(n);
        for (std::size_t r = 0; r < n; ++r) {
          col[r] = categorical_text(pop.records[r].covariates[c]) == level ? 1.0 : 0.0;
        }
        columns.push_back(std::move(col));
      }
    }
  }
  Eigen::MatrixXd X(n, columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (std::size_t r = 0; r < n; ++r) X(Eigen::Index(r), Eigen::Index(j)) = columns[j][r];
  }
  return X;
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& col) {
  const Eigen::Index n = col.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return col[a] < col[b]; });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && col[order[std::size_t(j + 1)]] == col[order[std::size_t(i)]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[std::size_t(k)]] = r;
    i = j + 1;
  }
  return ranks;
}

std::string stratum_key(const PopulationRecord& rec, const Population& pop,
                        const std::vector<int>& exact_cols) {
  std::string key;
  for (int c : exact_cols) {
    const auto& cv = rec.covariates[c];
    key += '|';
    if (cv.missing) {
      key += "<missing>";
    } else if (pop.schema[c].type == CovariateType::numeric) {
      key += format_double(cv.num);
    } else {
      key += cv.cat;
    }
  }
  return key.empty() ? std::string("<all>") : key;
}

// --- min-cost flow (successive shortest paths, dense Dijkstra) -------------

struct FlowEdge {
  int to;
  int cap;
  long long cost;
  int rev;
};

class MinCostFlow {
 public:
  explicit MinCostFlow(int n) : graph_(std::size_t(n)), n_(n) {}

  void add_edge(int from, int to, int cap, long long cost) {
    graph_[std::size_t(from)].push_back({to, cap, cost, int(graph_[std::size_t(to)].size())});
    graph_[std::size_t(to)].push_back({from, 0, -cost, int(graph_[std::size_t(from)].size()) - 1});
  }

  // Sends up to `want` units; returns (flow, cost).
  std::pair<int, long long> solve(int source, int sink, int want) {
    std::vector<long long> potential(std::size_t(n_), 0);
    int flow = 0;
    long long cost = 0;
    const long long inf = std::numeric_limits<long long>::max() / 4;
    while (flow < want) {
      std::vector<long long> dist(std::size_t(n_), inf);
      std::vector<int> prev_node(std::size_t(n_), -1), prev_edge(std::size_t(n_), -1);
      std::vector<bool> done(std::size_t(n_), false);
      dist[std::size_t(source)] = 0;
      for (int iter = 0; iter < n_; ++iter) {
        int u = -1;
        long long best = inf;
        for (int v = 0; v < n_; ++v) {
          if (!done[std::size_t(v)] && dist[std::size_t(v)] < best) {
            best = dist[std::size_t(v)];
            u = v;
          }
        }
        if (u < 0) break;
        done[std::size_t(u)] = true;
        for (std::size_t e = 0; e < graph_[std::size_t(u)].size(); ++e) {
          const FlowEdge& edge = graph_[std::size_t(u)][e];
          if (edge.cap <= 0) continue;
          const long long nd =
              dist[std::size_t(u)] + edge.cost + potential[std::size_t(u)] -
              potential[std::size_t(edge.to)];
          if (nd < dist[std::size_t(edge.to)]) {
            dist[std::size_t(edge.to)] = nd;
            prev_node[std::size_t(edge.to)] = u;
            prev_edge[std::size_t(edge.to)] = int(e);
          }
        }
      }
      if (dist[std::size_t(sink)] >= inf) break;  // no augmenting path left
      for (int v = 0; v < n_; ++v) {
        if (dist[std::size_t(v)] < inf) potential[std::size_t(v)] += dist[std::size_t(v)];
      }
      // augment one unit along the shortest path (all edge caps are small)
      int add = want - flow;
      for (int v = sink; v != source; v = prev_node[std::size_t(v)]) {
        add = std::min(add, graph_[std::size_t(prev_node[std::size_t(v)])]
                                [std::size_t(prev_edge[std::size_t(v)])].cap);
      }
      for (int v = sink; v != source; v = prev_node[std::size_t(v)]) {
        FlowEdge& edge =
            graph_[std::size_t(prev_node[std::size_t(v)])][std::size_t(prev_edge[std::size_t(v)])];
        edge.cap -= add;
        graph_[std::size_t(v)][std::size_t(edge.rev)].cap += add;
        cost += edge.cost * add;
      }
      flow += add;
    }
    return {flow, cost};
  }

  const std::vector<std::vector<FlowEdge>>& graph() const { return graph_; }

 private:
  std::vector<std::vector<FlowEdge>> graph_;
  int n_;
};

}  // namespace

DistanceMatrix robust_mahalanobis(const Population& pop,
                                  const std::vector<std::string>& covariates,
                                  bool* singular) {
  if (pop.records.size() < 2) {
    throw Case2Error(Errc::empty_input, "need at least two units to compute distances");
  }
  Eigen::MatrixXd X = design_matrix(pop, covariates);
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  for (Eigen::Index j = 0; j < k; ++j) X.col(j) = average_ranks(X.col(j));

  Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / double(n - 1);

  // tie adjustment: rescale each variable to the variance of untied ranks
  const double untied_var = double(n) * double(n + 1) / 12.0;
  Eigen::VectorXd scale(k);
  bool degenerate = false;
  for (Eigen::Index j = 0; j < k; ++j) {
    if (cov(j, j) > 0.0) {
      scale[j] = std::sqrt(untied_var / cov(j, j));
    } else {
      scale[j] = 0.0;  // constant column, contributes nothing
      degenerate = true;
    }
  }
  cov = scale.asDiagonal() * cov * scale.asDiagonal();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cov, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-10);
  if (svd.rank() < k) degenerate = true;
  // pseudo-inverse via SVD; PSD by construction
  Eigen::VectorXd inv_sv = svd.singularValues();
  for (Eigen::Index j = 0; j < inv_sv.size(); ++j) {
    inv_sv[j] = inv_sv[j] > svd.threshold() * svd.singularValues()[0] ? 1.0 / inv_sv[j] : 0.0;
  }
  Eigen::MatrixXd icov = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  if (singular) *singular = degenerate;

  std::vector<Eigen::Index> narrow_rows, marginal_rows;
  for (std::size_t r = 0; r < pop.records.size(); ++r) {
    (pop.records[r].case_type == CaseType::narrow ? narrow_rows : marginal_rows)
        .push_back(Eigen::Index(r));
  }

  DistanceMatrix dm;
  dm.rows = narrow_rows.size();
  dm.cols = marginal_rows.size();
  dm.data.assign(dm.rows * dm.cols, 0.0);
  parallel_for(dm.rows, 0, [&](std::size_t i) {
    for (std::size_t j = 0; j < dm.cols; ++j) {
      Eigen::VectorXd diff = X.row(narrow_rows[i]) - X.row(marginal_rows[j]);
      dm.at(i, j) = diff.dot(icov * diff);
    }
  });
  return dm;
}

MatchProblem build_match_problem(const Population& pop, const MatchSpec& spec) {
  if (spec.ratio < 1) throw Case2Error(Errc::invalid_params, "match ratio must be >= 1");
  MatchProblem problem;
  bool singular = false;
  problem.distances = robust_mahalanobis(pop, spec.distance_covariates, &singular);
  problem.singular_covariance = singular;

  std::vector<int> exact_cols;
  for (const auto& name : spec.exact_on) exact_cols.push_back(find_column(pop, name));
  for (const auto& rec : pop.records) {
    const std::string key = stratum_key(rec, pop, exact_cols);
    if (rec.case_type == CaseType::narrow) {
      problem.narrow_ids.push_back(rec.unit_id);
      problem.narrow_strata.push_back(key);
    } else {
      problem.marginal_ids.push_back(rec.unit_id);
      problem.marginal_strata.push_back(key);
    }
  }
  return problem;
}

MatchResult optimal_match(const MatchProblem& problem, const MatchSpec& spec, unsigned threads) {
  if (spec.ratio < 1) throw Case2Error(Errc::invalid_params, "match ratio must be >= 1");
  if (problem.narrow_ids.empty()) {
    throw Case2Error(Errc::empty_input, "no narrow units to match");
  }

  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> strata;
  for (std::size_t i = 0; i < problem.narrow_ids.size(); ++i) {
    strata[problem.narrow_strata[i]].first.push_back(i);
  }
  for (std::size_t j = 0; j < problem.marginal_ids.size(); ++j) {
    strata[problem.marginal_strata[j]].second.push_back(j);
  }
  for (const auto& [key, units] : strata) {
    const std::size_t need = units.first.size() * std::size_t(spec.ratio);
    if (units.second.size() < need) {
      throw Case2Error(Errc::infeasible_stratum,
                       "stratum '" + key + "' has " + std::to_string(units.second.size()) +
                           " marginal cases, needs " + std::to_string(need) + " (deficit " +
                           std::to_string(need - units.second.size()) + ")");
    }
  }

  std::vector<const std::pair<std::vector<std::size_t>, std::vector<std::size_t>>*> order;
  std::vector<std::string> keys;
  for (const auto& [key, units] : strata) {
    order.push_back(&units);
    keys.push_back(key);
  }

  MatchResult result;
  result.singular_covariance = problem.singular_covariance;
  std::vector<std::map<std::string, std::vector<std::string>>> partial(order.size());
  std::vector<double> dist_sums(order.size(), 0.0);
  std::vector<long long> cost_sums(order.size(), 0);

  parallel_for(order.size(), threads, [&](std::size_t s) {
    const auto& [narrow, marginal] = *order[s];
    if (narrow.empty()) return;
    const int n = int(narrow.size());
    const int m = int(marginal.size());
    const int source = 0;
    const int sink = n + m + 1;
    MinCostFlow flow(n + m + 2);
    for (int i = 0; i < n; ++i) flow.add_edge(source, 1 + i, spec.ratio, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        const double d = problem.distances.at(narrow[std::size_t(i)], marginal[std::size_t(j)]);
        if (spec.caliper && d > *spec.caliper) continue;
        flow.add_edge(1 + i, 1 + n + j, 1, llround(d * kCostScale));
      }
    }
    for (int j = 0; j < m; ++j) flow.add_edge(1 + n + j, sink, 1, 0);

    const int want = n * spec.ratio;
    auto [sent, cost] = flow.solve(source, sink, want);
    if (sent < want) {
      throw Case2Error(Errc::infeasible_stratum,
                       "stratum '" + keys[s] + "' cannot place " + std::to_string(want - sent) +
                           " assignment(s)" + (spec.caliper ? " under the caliper" : ""));
    }
    cost_sums[s] = cost;
    for (int i = 0; i < n; ++i) {
      const auto& edges = flow.graph()[std::size_t(1 + i)];
      std::vector<std::string>& partners =
          partial[s][problem.narrow_ids[narrow[std::size_t(i)]]];
      for (const auto& e : edges) {
        if (e.to >= 1 + n && e.to < 1 + n + m && e.cap == 0) {
          const std::size_t j = marginal[std::size_t(e.to - 1 - n)];
          partners.push_back(problem.marginal_ids[j]);
          dist_sums[s] += problem.distances.at(narrow[std::size_t(i)], j);
        }
      }
    }
  });

  for (std::size_t s = 0; s < order.size(); ++s) {
    for (auto& [id, partners] : partial[s]) {
      std::sort(partners.begin(), partners.end());
      result.assignments[id] = std::move(partners);
    }
    result.total_distance += dist_sums[s];
    result.total_scaled_cost += cost_sums[s];
  }
  return result;
}

std::vector<BalanceRow> balance_table(const Population& pop, const MatchResult& result) {
  if (result.assignments.empty()) {
    throw Case2Error(Errc::empty_input, "empty match result");
  }
  std::set<std::string> narrow_ids, marginal_ids;
  for (const auto& [nid, partners] : result.assignments) {
    narrow_ids.insert(nid);
    marginal_ids.insert(partners.begin(), partners.end());
  }

  struct Column {
    std::string name;
    std::vector<double> narrow_vals;
    std::vector<double> marginal_vals;
  };
  std::vector<Column> columns;
  for (int c = 0; c < int(pop.schema.size()); ++c) {
    if (pop.schema[c].type == CovariateType::numeric) {
      columns.push_back({pop.schema[c].name, {}, {}});
    } else {
      std::set<std::string> levels;
      for (const auto& rec : pop.records) levels.insert(categorical_text(rec.covariates[c]));
      for (const auto& level : levels) {
        columns.push_back({pop.schema[c].name + "=" + level, {}, {}});
      }
    }
  }

  for (const auto& rec : pop.records) {
    const bool is_narrow = narrow_ids.count(rec.unit_id) > 0;
    const bool is_marginal = marginal_ids.count(rec.unit_id) > 0;
    if (!is_narrow && !is_marginal) continue;
    std::size_t col_idx = 0;
    for (int c = 0; c < int(pop.schema.size()); ++c) {
      if (pop.schema[c].type == CovariateType::numeric) {
        const auto& cv = rec.covariates[c];
        if (cv.missing) {
          throw Case2Error(Errc::non_numeric_covariate, "numeric covariate '" +
                                                            pop.schema[c].name +
                                                            "' has missing values");
        }
        (is_narrow ? columns[col_idx].narrow_vals : columns[col_idx].marginal_vals)
            .push_back(cv.num);
        ++col_idx;
      } else {
        const std::string text = categorical_text(rec.covariates[c]);
        while (col_idx < columns.size() &&
               columns[col_idx].name.rfind(pop.schema[c].name + "=", 0) == 0) {
          const std::string level = columns[col_idx].name.substr(pop.schema[c].name.size() + 1);
          (is_narrow ? columns[col_idx].narrow_vals : columns[col_idx].marginal_vals)
              .push_back(text == level ? 1.0 : 0.0);
          ++col_idx;
        }
      }
    }
  }

  auto mean_var = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / double(xs.size() - 1) : 0.0;
    return std::pair<double, double>(mean, var);
  };

  std::vector<BalanceRow> rows;
  for (const auto& col : columns) {
    BalanceRow row;
    row.covariate = col.name;
    const auto [m1, v1] = mean_var(col.narrow_vals);
    const auto [m2, v2] = mean_var(col.marginal_vals);
    const double pooled = std::sqrt(0.5 * (v1 + v2));
    if (pooled > 0.0) {
      row.smd = (m1 - m2) / pooled;
    } else if (m1 == m2) {
      row.smd = 0.0;
    } else {
      row.smd = std::numeric_limits<double>::infinity();
      row.undefined = true;
    }
    rows.push_back(row);
  }
  return rows;
}

Study assemble_matched_study(const Population& pop, const MatchResult& result) {
  std::map<std::string, const PopulationRecord*> by_id;
  for (const auto& rec : pop.records) by_id[rec.unit_id] = &rec;

  std::vector<Unit> units;
  for (const auto& [nid, partners] : result.assignments) {
    auto push = [&](const std::string& id, bool narrow) {
      const PopulationRecord* rec = by_id.at(id);
      Unit u;
      u.set_id = nid;
      u.treated = rec->treated;
      u.narrow = narrow;
      u.covariates.push_back(CovariateValue::category(id));
      for (const auto& cv : rec->covariates) u.covariates.push_back(cv);
      units.push_back(std::move(u));
    };
    push(nid, true);
    for (const auto& mid : partners) push(mid, false);
  }

  std::vector<CovariateColumn> schema;
  schema.push_back({"source_unit_id", CovariateType::categorical});
  for (const auto& col : pop.schema) schema.push_back(col);
  return validate_study(units, schema);
}

}  // namespace case2
