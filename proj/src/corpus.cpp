#include "edgediff/corpus.hpp"

#include <algorithm>

namespace edgediff {

std::optional<int> CorpusStats::id_of(std::string_view name) const {
  auto it = index.find(std::string(name));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

std::int64_t CorpusStats::count_of(std::string_view name) const {
  auto id = id_of(name);
  return id ? counts[static_cast<std::size_t>(*id)] : 0;
}

std::int64_t CorpusStats::pair_count(int a, int b) const {
  if (a > b) std::swap(a, b);
  auto it = std::lower_bound(pairs.begin(), pairs.end(), std::pair{a, b},
                             [](const PairCount& p, const std::pair<int, int>& k) {
                               return p.a < k.first || (p.a == k.first && p.b < k.second);
                             });
  if (it != pairs.end() && it->a == a && it->b == b) return it->count;
  return 0;
}

CorpusStats count_recipes(const std::vector<std::vector<std::string>>& recipes) {
  CorpusStats stats;
  std::unordered_map<std::uint64_t, std::int64_t> pair_map;
  std::vector<int> ids;
  for (const auto& recipe : recipes) {
    ids.clear();
    for (const auto& name : recipe) {
      auto [it, inserted] = stats.index.try_emplace(name, static_cast<int>(stats.names.size()));
      if (inserted) {
        stats.names.push_back(name);
        stats.counts.push_back(0);
      }
      ids.push_back(it->second);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.empty()) {
      ++stats.skipped_empty;
      continue;
    }
    ++stats.n_recipes;
    for (std::size_t x = 0; x < ids.size(); ++x) {
      ++stats.counts[static_cast<std::size_t>(ids[x])];
      for (std::size_t y = x + 1; y < ids.size(); ++y)
        ++pair_map[(static_cast<std::uint64_t>(ids[x]) << 32) | static_cast<std::uint32_t>(ids[y])];
    }
  }
  stats.pairs.reserve(pair_map.size());
  for (const auto& [key, count] : pair_map)
    stats.pairs.push_back({static_cast<int>(key >> 32), static_cast<int>(key & 0xffffffffU), count});
  std::sort(stats.pairs.begin(), stats.pairs.end(),
            [](const PairCount& x, const PairCount& y) { return x.a < y.a || (x.a == y.a && x.b < y.b); });
  return stats;
}

}  // namespace edgediff
