#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/rng.hpp"

namespace maskmlp {

enum class VariableKind { numeric, binary };

enum class VariableRole { feature, label_source_pre, label_source_post, group_id, subgroup_tag };

struct Variable {
  std::string name;
  VariableKind kind = VariableKind::numeric;
  VariableRole role = VariableRole::feature;
  // Counted by compute_missing_rate (the reading assessment measures).
  bool assessment = false;
};

/// A prediction target: improvement = post - pre on one assessment.
struct LabelTask {
  std::string name;
  std::string pre;
  std::string post;
};

inline const char* to_string(VariableKind k) { return k == VariableKind::numeric ? "numeric" : "binary"; }

inline const char* to_string(VariableRole r) {
  switch (r) {
    case VariableRole::feature: return "feature";
    case VariableRole::label_source_pre: return "label-source-pre";
    case VariableRole::label_source_post: return "label-source-post";
    case VariableRole::group_id: return "group-id";
    case VariableRole::subgroup_tag: return "subgroup-tag";
  }
  return "?";
}

inline VariableKind kind_from_string(const std::string& s) {
  if (s == "numeric") return VariableKind::numeric;
  if (s == "binary" || s == "binary-categorical") return VariableKind::binary;
  throw SchemaError("unknown variable kind '" + s + "'");
}

inline VariableRole role_from_string(const std::string& s) {
  if (s == "feature") return VariableRole::feature;
  if (s == "label-source-pre") return VariableRole::label_source_pre;
  if (s == "label-source-post") return VariableRole::label_source_post;
  if (s == "group-id") return VariableRole::group_id;
  if (s == "subgroup-tag") return VariableRole::subgroup_tag;
  throw SchemaError("unknown variable role '" + s + "'");
}

/// Declarative description of a tabular dataset: which columns are model
/// inputs, which feed label derivation, and which identify groups.
struct DatasetSchema {
  std::vector<Variable> variables;
  std::vector<LabelTask> tasks;
  std::string student_id = "student_id";
  std::string school_id = "school_id";
  std::string teacher_id = "teacher_id";
  std::string intervention = "Tx";
  std::vector<std::string> subgroup_tags;

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& v : variables)
      if (v.role == VariableRole::feature) out.push_back(v.name);
    return out;
  }

  std::vector<Variable> features() const {
    std::vector<Variable> out;
    for (const auto& v : variables)
      if (v.role == VariableRole::feature) out.push_back(v);
    return out;
  }

  std::size_t feature_count() const { return feature_names().size(); }

  std::optional<std::size_t> feature_index(const std::string& name) const {
    std::size_t i = 0;
    for (const auto& v : variables) {
      if (v.role != VariableRole::feature) continue;
      if (v.name == name) return i;
      ++i;
    }
    return std::nullopt;
  }

  const Variable* find(const std::string& name) const {
    for (const auto& v : variables)
      if (v.name == name) return &v;
    return nullptr;
  }

  const LabelTask& task(const std::string& name) const {
    for (const auto& t : tasks)
      if (t.name == name) return t;
    throw SchemaError("schema defines no task '" + name + "'");
  }

  /// Every CSV column, in file order.
  std::vector<std::string> columns() const {
    std::vector<std::string> out;
    for (const auto& v : variables) out.push_back(v.name);
    return out;
  }

  /// Identity of the model-input layout: feature names and kinds, in order.
  std::string hash() const {
    std::string canon;
    for (const auto& v : variables) {
      if (v.role != VariableRole::feature) continue;
      canon += v.name;
      canon += v.kind == VariableKind::numeric ? ":n;" : ":b;";
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
    return buf;
  }

  void validate() const {
    std::set<std::string> names;
    for (const auto& v : variables) {
      if (v.name.empty()) throw SchemaError("schema variable with empty name");
      if (!names.insert(v.name).second) throw SchemaError("duplicate schema variable '" + v.name + "'");
    }
    auto require = [&](const std::string& col, const char* what) {
      if (!find(col)) throw SchemaError(std::string("schema lacks the ") + what + " column '" + col + "'");
    };
    require(student_id, "student id");
    require(school_id, "school id");
    require(teacher_id, "teacher id");
    require(intervention, "intervention");
    if (feature_count() == 0) throw SchemaError("schema declares no features");
    for (const auto& t : tasks) {
      const auto* pre = find(t.pre);
      const auto* post = find(t.post);
      if (!pre) throw SchemaError("task '" + t.name + "' pre column '" + t.pre + "' is not in the schema");
      if (!post) throw SchemaError("task '" + t.name + "' post column '" + t.post + "' is not in the schema");
      if (pre->role != VariableRole::feature && pre->role != VariableRole::label_source_pre) {
        throw SchemaError("task '" + t.name + "' pre column '" + t.pre + "' has role " + to_string(pre->role));
      }
      if (post->role != VariableRole::label_source_post) {
        throw SchemaError("task '" + t.name + "' post column '" + t.post + "' must be label-source-post");
      }
    }
    for (const auto& tag : subgroup_tags) require(tag, "subgroup tag");
  }

  /// The schema with one feature removed from the model inputs. A column that
  /// still serves as a label source, the intervention flag or a subgroup tag
  /// stays in the schema under that role.
  DatasetSchema without_feature(const std::string& name) const {
    if (!feature_index(name)) throw SchemaError("cannot drop unknown feature '" + name + "'");
    DatasetSchema s = *this;
    auto it = std::find_if(s.variables.begin(), s.variables.end(), [&](const Variable& v) { return v.name == name; });
    const bool is_pre = std::any_of(tasks.begin(), tasks.end(), [&](const LabelTask& t) { return t.pre == name; });
    const bool is_tag = name == intervention ||
                        std::find(subgroup_tags.begin(), subgroup_tags.end(), name) != subgroup_tags.end();
    if (is_pre) {
      it->role = VariableRole::label_source_pre;
    } else if (is_tag) {
      it->role = VariableRole::subgroup_tag;
    } else {
      s.variables.erase(it);
    }
    return s;
  }
};

/// The ECRI variable set: 16 model inputs, two pre/post tasks, three id
/// columns and two subgroup-only columns.
inline DatasetSchema ecri_schema() {
  using K = VariableKind;
  using R = VariableRole;
  DatasetSchema s;
  s.variables = {
      {"student_id", K::numeric, R::group_id, false},
      {"school_id", K::numeric, R::group_id, false},
      {"teacher_id", K::numeric, R::group_id, false},
      {"Gender", K::binary, R::feature, false},
      {"Tx", K::binary, R::feature, false},
      {"Age1b", K::numeric, R::feature, false},
      {"Tier2_N", K::numeric, R::feature, false},
      {"grp_rate", K::numeric, R::feature, false},
      {"rcmistot", K::numeric, R::feature, false},
      {"gnrl_fid", K::numeric, R::feature, false},
      {"TKPctCrt", K::numeric, R::feature, false},
      {"NWFcls", K::numeric, R::feature, true},
      {"NWFwrc", K::numeric, R::feature, true},
      {"ORFwc", K::numeric, R::feature, true},
      {"SAwrS", K::numeric, R::feature, true},
      {"SAsrS", K::numeric, R::feature, true},
      {"SAtoS", K::numeric, R::feature, true},
      {"RMwidRS", K::numeric, R::feature, true},
      {"RMwdaRS", K::numeric, R::feature, true},
      {"RMwidRS_post", K::numeric, R::label_source_post, false},
      {"RMwdaRS_post", K::numeric, R::label_source_post, false},
      {"at_risk", K::binary, R::subgroup_tag, false},
      {"frl", K::binary, R::subgroup_tag, false},
  };
  s.tasks = {{"word_identification", "RMwidRS", "RMwidRS_post"}, {"word_attack", "RMwdaRS", "RMwdaRS_post"}};
  s.subgroup_tags = {"Gender", "at_risk", "frl"};
  return s;
}

inline nlohmann::json to_json(const DatasetSchema& s) {
  nlohmann::json j;
  j["variables"] = nlohmann::json::array();
  for (const auto& v : s.variables) {
    j["variables"].push_back({{"name", v.name}, {"kind", to_string(v.kind)}, {"role", to_string(v.role)},
                              {"assessment", v.assessment}});
  }
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : s.tasks) j["tasks"].push_back({{"name", t.name}, {"pre", t.pre}, {"post", t.post}});
  j["student_id"] = s.student_id;
  j["school_id"] = s.school_id;
  j["teacher_id"] = s.teacher_id;
  j["intervention"] = s.intervention;
  j["subgroup_tags"] = s.subgroup_tags;
  return j;
}

inline DatasetSchema schema_from_json(const nlohmann::json& j) {
  DatasetSchema s;
  try {
    for (const auto& v : j.at("variables")) {
      s.variables.push_back({v.at("name").get<std::string>(), kind_from_string(v.value("kind", "numeric")),
                             role_from_string(v.value("role", "feature")), v.value("assessment", false)});
    }
    for (const auto& t : j.value("tasks", nlohmann::json::array())) {
      s.tasks.push_back({t.at("name").get<std::string>(), t.at("pre").get<std::string>(), t.at("post").get<std::string>()});
    }
    s.student_id = j.value("student_id", s.student_id);
    s.school_id = j.value("school_id", s.school_id);
    s.teacher_id = j.value("teacher_id", s.teacher_id);
    s.intervention = j.value("intervention", s.intervention);
    s.subgroup_tags = j.value("subgroup_tags", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema JSON: ") + e.what());
  }
  s.validate();
  return s;
}

inline DatasetSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return schema_from_json(j);
}

}  // namespace maskmlp
