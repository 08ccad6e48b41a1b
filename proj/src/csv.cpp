#include "case2/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <istream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace case2 {

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// RFC-4180-ish: comma separated, double-quote escaping, LF or CRLF accepted.
CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    record.push_back(field);
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    if (table.header.empty()) {
      table.header = record;
    } else {
      if (record.size() != table.header.size()) {
        throw Case2Error(Errc::malformed_csv,
                         "line " + std::to_string(line) + " has " +
                             std::to_string(record.size()) + " fields, header has " +
                             std::to_string(table.header.size()));
      }
      table.rows.push_back(record);
    }
    record.clear();
    row_started = false;
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) {
          throw Case2Error(Errc::malformed_csv,
                           "line " + std::to_string(line) + ": quote inside unquoted field");
        }
        in_quotes = true;
        row_started = true;
        break;
      case ',':
        end_field();
        row_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_started || !field.empty() || !record.empty()) end_record();
        ++line;
        break;
      default:
        field.push_back(c);
        row_started = true;
        break;
    }
  }
  if (in_quotes) throw Case2Error(Errc::malformed_csv, "unterminated quoted field");
  if (row_started || !field.empty() || !record.empty()) end_record();
  if (table.header.empty()) throw Case2Error(Errc::malformed_csv, "missing header row");
  return table;
}

int column_index(const CsvTable& table, const std::string& name) {
  auto it = std::find(table.header.begin(), table.header.end(), name);
  if (it == table.header.end()) {
    throw Case2Error(Errc::missing_column, "required column '" + name + "' not found");
  }
  return int(it - table.header.begin());
}

bool parse_full_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + s.size() && !s.empty();
}

bool parse_binary(const std::string& s, const std::string& column, std::size_t row) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw Case2Error(Errc::bad_value, "column '" + column + "' row " + std::to_string(row + 2) +
                                        ": expected 0 or 1, got '" + s + "'");
}

// Type inference is per column over the whole file, so schemas cannot depend
// on row order.
std::vector<CovariateColumn> infer_schema(const CsvTable& table,
                                          const std::vector<int>& cov_cols) {
  std::vector<CovariateColumn> schema;
  for (int col : cov_cols) {
    bool numeric = true;
    for (const auto& row : table.rows) {
      const std::string& v = row[col];
      if (v.empty()) continue;
      double d;
      if (!parse_full_double(v, d)) {
        numeric = false;
        break;
      }
    }
    schema.push_back({table.header[col],
                      numeric ? CovariateType::numeric : CovariateType::categorical});
  }
  return schema;
}

CovariateValue make_covariate(const std::string& raw, CovariateType type) {
  if (raw.empty()) return CovariateValue::none();
  if (type == CovariateType::numeric) {
    double d = 0.0;
    parse_full_double(raw, d);
    return CovariateValue::number(d);
  }
  return CovariateValue::category(raw);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::string covariate_text(const CovariateValue& cv, CovariateType type) {
  if (cv.missing) return "";
  if (type == CovariateType::numeric) return format_double(cv.num);
  return cv.cat;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
      s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
    s += ".0";
  }
  return s;
}

Study parse_matched_csv(std::istream& source) {
  CsvTable table = read_csv(source);
  int set_col = column_index(table, "set_id");
  int treated_col = column_index(table, "treated");
  int narrow_col = column_index(table, "narrow");

  std::vector<int> cov_cols;
  for (int c = 0; c < int(table.header.size()); ++c) {
    if (c != set_col && c != treated_col && c != narrow_col) cov_cols.push_back(c);
  }
  auto schema = infer_schema(table, cov_cols);

  std::vector<Unit> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    Unit u;
    u.set_id = row[set_col];
    u.treated = parse_binary(row[treated_col], "treated", r);
    u.narrow = parse_binary(row[narrow_col], "narrow", r);
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      u.covariates.push_back(make_covariate(row[cov_cols[k]], schema[k].type));
    }
    records.push_back(std::move(u));
  }
  return validate_study(records, schema);
}

Study parse_matched_csv_string(const std::string& text) {
  std::istringstream in(text);
  return parse_matched_csv(in);
}

Population parse_population_csv(std::istream& source) {
  CsvTable table = read_csv(source);
  int id_col = column_index(table, "unit_id");
  int type_col = column_index(table, "case_type");
  int treated_col = column_index(table, "treated");
  int set_col = -1;
  for (int c = 0; c < int(table.header.size()); ++c) {
    if (table.header[c] == "set_id") set_col = c;
  }

  std::vector<int> cov_cols;
  for (int c = 0; c < int(table.header.size()); ++c) {
    if (c != id_col && c != type_col && c != treated_col && c != set_col) cov_cols.push_back(c);
  }

  Population pop;
  pop.schema = infer_schema(table, cov_cols);
  pop.has_set_id = set_col >= 0;

  std::set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    PopulationRecord rec;
    rec.unit_id = row[id_col];
    if (!seen.insert(rec.unit_id).second) {
      throw Case2Error(Errc::duplicate_id, "unit_id '" + rec.unit_id + "' appears twice");
    }
    if (row[type_col] == "narrow") {
      rec.case_type = CaseType::narrow;
    } else if (row[type_col] == "marginal") {
      rec.case_type = CaseType::marginal;
    } else {
      throw Case2Error(Errc::bad_value, "case_type row " + std::to_string(r + 2) +
                                            ": expected narrow or marginal, got '" +
                                            row[type_col] + "'");
    }
    rec.treated = parse_binary(row[treated_col], "treated", r);
    if (set_col >= 0) rec.set_id = row[set_col];
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      rec.covariates.push_back(make_covariate(row[cov_cols[k]], pop.schema[k].type));
    }
    pop.records.push_back(std::move(rec));
  }
  return pop;
}

Population parse_population_csv_string(const std::string& text) {
  std::istringstream in(text);
  return parse_population_csv(in);
}

std::string write_study_csv(const Study& study) {
  std::string out = "set_id,treated,narrow";
  for (const auto& col : study.schema) out += "," + csv_escape(col.name);
  out += "\n";
  for (const auto& set : study.sets) {
    for (const auto& u : set.units) {
      out += csv_escape(set.set_id);
      out += u.treated ? ",1" : ",0";
      out += u.narrow ? ",1" : ",0";
      for (std::size_t k = 0; k < u.covariates.size(); ++k) {
        out += "," + csv_escape(covariate_text(u.covariates[k], study.schema[k].type));
      }
      out += "\n";
    }
  }
  return out;
}

std::string write_population_csv(const Population& pop) {
  std::string out = "unit_id,case_type,treated";
  if (pop.has_set_id) out += ",set_id";
  for (const auto& col : pop.schema) out += "," + csv_escape(col.name);
  out += "\n";
  for (const auto& rec : pop.records) {
    out += csv_escape(rec.unit_id);
    out += rec.case_type == CaseType::narrow ? ",narrow" : ",marginal";
    out += rec.treated ? ",1" : ",0";
    if (pop.has_set_id) out += "," + csv_escape(rec.set_id);
    for (std::size_t k = 0; k < rec.covariates.size(); ++k) {
      out += "," + csv_escape(covariate_text(rec.covariates[k], pop.schema[k].type));
    }
    out += "\n";
  }
  return out;
}

std::string write_results(const std::vector<SweepRow>& rows, ResultFormat format) {
  if (rows.empty()) throw Case2Error(Errc::empty_input, "no result rows to write");
  if (format == ResultFormat::csv) {
    std::string out = "gamma,theta,delta,alpha,a_star,p_at_a_star,method\n";
    for (const auto& row : rows) {
      out += format_double(row.gamma) + "," + format_double(row.theta) + "," +
             format_double(row.delta) + "," + format_double(row.alpha) + "," +
             std::to_string(row.a_star) + "," + format_double(row.p_at_a_star) + "," +
             csv_escape(row.method) + "\n";
    }
    return out;
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    arr.push_back({{"gamma", row.gamma},
                   {"theta", row.theta},
                   {"delta", row.delta},
                   {"alpha", row.alpha},
                   {"a_star", row.a_star},
                   {"p_at_a_star", row.p_at_a_star},
                   {"method", row.method}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace case2
