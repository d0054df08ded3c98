#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <string>

#include <spdlog/spdlog.h>

#include "maskmlp/core/rng.hpp"

namespace test_util {

// Pipeline progress lines drown the test output.
inline const bool quiet_logs = [] {
  spdlog::set_level(spdlog::level::warn);
  return true;
}();

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("maskmlp_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace test_util

#include <fstream>
#include <sstream>
#include <vector>

#include "maskmlp/data/schema.hpp"

namespace test_util {

// One CSV row of the ECRI schema with every column filled; callers blank
// or override cells by column name.
struct EcriRow {
  std::map<std::string, std::string> cells;

  explicit EcriRow(int id, int school = 1) {
    for (const auto& c : maskmlp::ecri_schema().columns()) cells[c] = "1";
    cells["student_id"] = std::to_string(id);
    cells["school_id"] = std::to_string(school);
    cells["teacher_id"] = std::to_string(school * 10);
    cells["Gender"] = std::to_string(id % 2);
    cells["Tx"] = std::to_string((id / 2) % 2);
    cells["Age1b"] = std::to_string(6.0 + 0.1 * id);
    cells["RMwidRS"] = std::to_string(10 + id);
    cells["RMwidRS_post"] = std::to_string(20 + 2 * id);
  }
  EcriRow& set(const std::string& col, const std::string& v) {
    cells[col] = v;
    return *this;
  }
};

inline std::string ecri_csv(const std::vector<EcriRow>& rows, std::vector<std::string> columns = {}) {
  if (columns.empty()) columns = maskmlp::ecri_schema().columns();
  std::ostringstream out;
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << r.cells.at(columns[i]);
    out << "\n";
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace test_util

#include "maskmlp/data/dataset.hpp"

namespace test_util {

// In-memory dataset with numeric features f0..f{k-1}, a pre/post pair for
// task "toy" and one school per `rows_per_school` rows. All rows are
// controls, so the label threshold is the positive fraction and each row's
// label equals `y`.
inline maskmlp::Dataset toy_dataset(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                    std::size_t rows_per_school = 50) {
  using namespace maskmlp;
  const std::size_t k = x.empty() ? 0 : x[0].size();
  DatasetSchema s;
  s.variables = {{"student_id", VariableKind::numeric, VariableRole::group_id, false},
                 {"school_id", VariableKind::numeric, VariableRole::group_id, false},
                 {"teacher_id", VariableKind::numeric, VariableRole::group_id, false},
                 {"Tx", VariableKind::binary, VariableRole::subgroup_tag, false}};
  for (std::size_t j = 0; j < k; ++j)
    s.variables.push_back({"f" + std::to_string(j), VariableKind::numeric, VariableRole::feature, false});
  s.variables.push_back({"pre", VariableKind::numeric, VariableRole::label_source_pre, false});
  s.variables.push_back({"post", VariableKind::numeric, VariableRole::label_source_post, false});
  s.tasks = {{"toy", "pre", "post"}};
  Dataset d;
  d.schema = s;
  d.features = FeatureMatrix(x.size(), k);
  auto& pre = d.label_sources["pre"];
  auto& post = d.label_sources["post"];
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t j = 0; j < k; ++j) d.features.values(r, j) = x[r][j];
    d.student_ids.push_back(std::to_string(r));
    d.school_ids.push_back(std::to_string(r / rows_per_school));
    d.teacher_ids.push_back(std::to_string(r / rows_per_school));
    d.intervention.push_back(0);
    pre.values.push_back(0.0);
    pre.observed.push_back(1);
    post.values.push_back(y[r]);
    post.observed.push_back(1);
  }
  d.validate();
  return d;
}

}  // namespace test_util
