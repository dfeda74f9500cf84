#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace edgediff {

struct PairCount {
  int a = 0;  // a < b
  int b = 0;
  std::int64_t count = 0;
};

/// Recipe co-occurrence statistics over interned ingredient ids.
/// Ids are assigned in order of first appearance.
struct CorpusStats {
  std::int64_t n_recipes = 0;
  std::vector<std::string> names;
  std::vector<std::int64_t> counts;
  std::vector<PairCount> pairs;  // sorted by (a, b)
  std::int64_t skipped_empty = 0;

  std::optional<int> id_of(std::string_view name) const;
  std::int64_t count_of(std::string_view name) const;
  /// Co-occurrence count of an unordered pair; 0 when never seen together.
  std::int64_t pair_count(int a, int b) const;

  std::unordered_map<std::string, int> index;
};

/// Counts a tokenized corpus. Duplicate ingredients inside a recipe count
/// once; recipes that are empty after de-duplication are tallied in
/// skipped_empty and otherwise ignored.
CorpusStats count_recipes(const std::vector<std::vector<std::string>>& recipes);

}  // namespace edgediff
