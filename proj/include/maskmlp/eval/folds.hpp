#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/rng.hpp"

namespace maskmlp {

enum class SplitMode { school, student };

inline const char* to_string(SplitMode m) { return m == SplitMode::school ? "school" : "student"; }

inline SplitMode split_mode_from_string(const std::string& s) {
  if (s == "school" || s == "school_split") return SplitMode::school;
  if (s == "student" || s == "student_split") return SplitMode::student;
  throw ConfigError("unknown split mode '" + s + "'");
}

/// k disjoint test sets over positions 0..n-1, built so that no group id
/// falls in two folds.
struct FoldPlan {
  std::size_t k = 5;
  SplitMode mode = SplitMode::school;
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> test;         // positions, ascending
  std::vector<std::vector<std::string>> test_groups;  // group ids, ascending

  std::vector<std::size_t> train(std::size_t fold) const {
    std::vector<char> in_test(n, 0);
    for (auto p : test.at(fold)) in_test[p] = 1;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      if (!in_test[i]) out.push_back(i);
    return out;
  }
};

/// Grouped k-fold. Groups are shuffled by the seed, stably ordered by
/// descending size, then each goes to the currently smallest fold (lowest
/// index on ties).
inline FoldPlan make_folds(std::span<const std::string> group_ids, std::size_t k, SplitMode mode, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < group_ids.size(); ++i) members[group_ids[i]].push_back(i);
  if (members.size() < k) {
    throw ConfigError("cannot build " + std::to_string(k) + " folds from " + std::to_string(members.size()) + " " +
                      (mode == SplitMode::school ? "schools" : "students"));
  }
  std::vector<std::string> groups;
  for (const auto& [g, _] : members) groups.push_back(g);
  Rng rng(seed);
  rng.shuffle(groups);
  std::stable_sort(groups.begin(), groups.end(), [&](const std::string& a, const std::string& b) {
    return members[a].size() > members[b].size();
  });

  FoldPlan plan;
  plan.k = k;
  plan.mode = mode;
  plan.n = group_ids.size();
  plan.test.resize(k);
  plan.test_groups.resize(k);
  std::vector<std::size_t> load(k, 0);
  for (const auto& g : groups) {
    const auto f = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    const auto& rows = members[g];
    plan.test[f].insert(plan.test[f].end(), rows.begin(), rows.end());
    plan.test_groups[f].push_back(g);
    load[f] += rows.size();
  }
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(plan.test[f].begin(), plan.test[f].end());
    std::sort(plan.test_groups[f].begin(), plan.test_groups[f].end());
  }
  return plan;
}

}  // namespace maskmlp
