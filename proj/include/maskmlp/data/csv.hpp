#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/data/dataset.hpp"
#include "maskmlp/data/schema.hpp"

namespace maskmlp {

struct CsvOptions {
  std::vector<std::string> missing_tokens{"", "NA"};
  // Alternate header spellings accepted for schema columns.
  std::map<std::string, std::string> aliases{{"TKPctCrct", "TKPctCrt"}};
};

namespace csv_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Splits one RFC 4180 record. Quoted fields may contain commas and "".
inline std::vector<std::string> split_record(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

}  // namespace csv_detail

/// Reads a CSV whose header names exactly the schema's columns, in any order.
inline Dataset load_csv(const std::filesystem::path& path, const DatasetSchema& schema, const CsvOptions& opts = {}) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV '" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  auto header = csv_detail::split_record(line);
  std::map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string name = header[i];
    if (auto a = opts.aliases.find(name); a != opts.aliases.end() && !schema.find(name)) name = a->second;
    if (!schema.find(name)) throw SchemaError("unknown column '" + header[i] + "'");
    if (!col_of.emplace(name, i).second) throw SchemaError("duplicate column '" + name + "'");
  }
  for (const auto& v : schema.variables) {
    if (!col_of.count(v.name)) throw SchemaError("missing column '" + v.name + "'");
  }

  const std::set<std::string> missing_tokens(opts.missing_tokens.begin(), opts.missing_tokens.end());
  const auto feats = schema.features();
  std::set<std::string> label_cols;
  for (const auto& t : schema.tasks) {
    label_cols.insert(t.pre);
    label_cols.insert(t.post);
  }

  Dataset d;
  d.schema = schema;
  std::vector<std::vector<double>> feat_rows;
  std::vector<std::vector<std::uint8_t>> obs_rows;
  std::unordered_set<std::string> seen_students;
  std::size_t line_no = 1;

  while (std::getline(in, line)) {
    ++line_no;
    if (csv_detail::trim(line).empty()) continue;
    const auto fields = csv_detail::split_record(line);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(fields.size()));
    }
    auto cell = [&](const std::string& col) -> const std::string& { return fields[col_of.at(col)]; };
    auto is_missing = [&](const std::string& s) { return missing_tokens.count(s) > 0; };
    auto numeric = [&](const std::string& col, double& out) -> bool {
      const auto& s = cell(col);
      if (is_missing(s)) return false;
      if (!csv_detail::parse_double(s, out)) {
        throw ParseError("row " + std::to_string(line_no) + ", column '" + col + "': non-numeric value '" + s + "'");
      }
      return true;
    };

    std::vector<double> fv(feats.size(), 0.0);
    std::vector<std::uint8_t> ov(feats.size(), 1);
    for (std::size_t c = 0; c < feats.size(); ++c) {
      double v = 0.0;
      if (!numeric(feats[c].name, v)) {
        ov[c] = 0;
        continue;
      }
      if (feats[c].kind == VariableKind::binary && v != 0.0 && v != 1.0) {
        throw ParseError("row " + std::to_string(line_no) + ", column '" + feats[c].name +
                         "': binary value must be 0 or 1, got '" + cell(feats[c].name) + "'");
      }
      fv[c] = v;
    }
    feat_rows.push_back(std::move(fv));
    obs_rows.push_back(std::move(ov));

    for (const auto& col : label_cols) {
      double v = 0.0;
      const bool ok = numeric(col, v);
      auto& src = d.label_sources[col];
      src.values.push_back(ok ? v : 0.0);
      src.observed.push_back(ok ? 1 : 0);
    }

    double tx = 0.0;
    if (!numeric(schema.intervention, tx) || (tx != 0.0 && tx != 1.0)) {
      throw IntegrityError("row " + std::to_string(line_no) + ": intervention flag '" + schema.intervention +
                           "' must be 0 or 1");
    }
    d.intervention.push_back(static_cast<int>(tx));

    auto id = [&](const std::string& col) {
      const auto& s = cell(col);
      if (is_missing(s)) throw IntegrityError("row " + std::to_string(line_no) + ": missing " + col);
      return s;
    };
    const std::string sid = id(schema.student_id);
    if (!seen_students.insert(sid).second) {
      throw IntegrityError("row " + std::to_string(line_no) + ": duplicate student id '" + sid + "'");
    }
    d.student_ids.push_back(sid);
    d.school_ids.push_back(id(schema.school_id));
    d.teacher_ids.push_back(id(schema.teacher_id));
    for (const auto& tag : schema.subgroup_tags) {
      const auto& s = cell(tag);
      d.subgroups[tag].push_back(is_missing(s) ? "NA" : s);
    }
  }

  d.features = FeatureMatrix(feat_rows.size(), feats.size());
  for (std::size_t r = 0; r < feat_rows.size(); ++r) {
    for (std::size_t c = 0; c < feats.size(); ++c) {
      d.features.values(r, c) = feat_rows[r][c];
      d.features.observed[r * feats.size() + c] = obs_rows[r][c];
    }
  }
  for (const auto& col : label_cols) d.label_sources[col];  // present even with zero rows
  for (const auto& tag : schema.subgroup_tags) d.subgroups[tag];
  d.validate();
  return d;
}

/// Writes the dataset with a header in schema column order. Missing cells
/// are written empty; numbers use the shortest round-trip representation.
inline void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const auto& s = d.schema;
  const auto cols = s.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << csv_detail::quote_if_needed(cols[i]);
  out << '\n';
  for (std::size_t r = 0; r < d.rows(); ++r) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out << ',';
      const auto& name = cols[i];
      if (auto fi = s.feature_index(name)) {
        if (d.features.is_observed(r, *fi)) out << csv_detail::format_double(d.features.values(r, *fi));
      } else if (auto it = d.label_sources.find(name); it != d.label_sources.end()) {
        if (it->second.observed[r]) out << csv_detail::format_double(it->second.values[r]);
      } else if (name == s.student_id) {
        out << csv_detail::quote_if_needed(d.student_ids[r]);
      } else if (name == s.school_id) {
        out << csv_detail::quote_if_needed(d.school_ids[r]);
      } else if (name == s.teacher_id) {
        out << csv_detail::quote_if_needed(d.teacher_ids[r]);
      } else if (name == s.intervention) {
        out << d.intervention[r];
      } else if (auto tg = d.subgroups.find(name); tg != d.subgroups.end()) {
        const auto& v = tg->second[r];
        if (v != "NA") out << csv_detail::quote_if_needed(v);
      }
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace maskmlp
