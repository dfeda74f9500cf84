#include "edgediff/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "edgediff/error.hpp"
#include "edgediff/rng.hpp"
#include "edgediff/text_io.hpp"

namespace edgediff {

namespace {

std::string where(const std::filesystem::path& path, std::size_t line_index) {
  return path.string() + ":" + std::to_string(line_index + 1);
}

std::pair<std::string, std::string> two_fields(const std::string& line, const std::filesystem::path& path,
                                               std::size_t i) {
  const auto fields = io::split_tabs(line);
  require(fields.size() == 2, where(path, i) + ": expected 2 tab-separated fields, found " +
                                  std::to_string(fields.size()));
  require(!fields[0].empty() && !fields[1].empty(), where(path, i) + ": empty field");
  return {std::string(fields[0]), std::string(fields[1])};
}

std::string node_rows(const HeteroGraph& g) {
  std::string out;
  for (const Node& n : g.nodes()) {
    out += std::to_string(n.id);
    out += '\t';
    out += n.name;
    out += '\t';
    out += to_string(n.kind);
    out += '\t';
    out += n.category.value_or("");
    out += '\n';
  }
  return out;
}

std::string edge_rows(const HeteroGraph& g) {
  std::string out;
  for (const Edge& e : g.edges()) {
    out += std::to_string(e.a);
    out += '\t';
    out += std::to_string(e.b);
    out += '\t';
    out += io::format_double(e.weight);
    out += '\n';
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::string>> parse_recipe_lists(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  require(!lines.empty(), path.string() + ": empty recipe corpus");
  std::vector<std::vector<std::string>> recipes;
  recipes.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> recipe;
    if (!lines[i].empty()) {
      for (auto field : io::split_tabs(lines[i])) {
        require(!field.empty(), where(path, i) + ": empty ingredient field");
        recipe.emplace_back(field);
      }
    }
    recipes.push_back(std::move(recipe));
  }
  return recipes;
}

CorpusStats parse_recipe_corpus(const std::filesystem::path& path) {
  CorpusStats stats = count_recipes(parse_recipe_lists(path));
  require(stats.n_recipes > 0, path.string() + ": corpus has no non-empty recipes");
  return stats;
}

std::map<std::string, Fingerprint> parse_fingerprints(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::map<std::string, Fingerprint> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto [name, bits] = two_fields(lines[i], path, i);
    require(bits.size() == static_cast<std::size_t>(kFingerprintBits),
            where(path, i) + ": fingerprint for '" + name + "' has " + std::to_string(bits.size()) +
                " bits, expected " + std::to_string(kFingerprintBits));
    Fingerprint fp;
    for (std::size_t b = 0; b < bits.size(); ++b) {
      require(bits[b] == '0' || bits[b] == '1', where(path, i) + ": fingerprint characters must be 0 or 1");
      fp[b] = bits[b] == '1';
    }
    require(out.emplace(name, fp).second, where(path, i) + ": duplicate fingerprint name '" + name + "'");
  }
  return out;
}

std::string format_fingerprint(const Fingerprint& fp) {
  std::string s(kFingerprintBits, '0');
  for (std::size_t b = 0; b < s.size(); ++b)
    if (fp[b]) s[b] = '1';
  return s;
}

std::vector<Association> parse_associations(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::vector<Association> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    out.push_back(two_fields(lines[i], path, i));
  }
  return out;
}

std::map<std::string, std::string> parse_categories(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto [name, category] = two_fields(lines[i], path, i);
    auto [it, inserted] = out.emplace(name, category);
    require(inserted || it->second == category, where(path, i) + ": conflicting category for '" + name + "'");
  }
  return out;
}

SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg) {
  require(cfg.n_ingredients >= 1 && cfg.n_compounds >= 1 && cfg.n_recipes >= 1 && cfg.n_categories >= 1,
          "synthetic corpus: all counts must be at least 1");
  require(cfg.n_categories <= 9, "synthetic corpus: at most 9 categories");
  require(cfg.n_ingredients >= 2 * cfg.n_categories,
          "synthetic corpus: need at least 2 ingredients per category to place a hub and a non-hub in each");

  constexpr double kWithinCategory = 0.85;
  constexpr double kCrossLink = 0.1;
  constexpr int kSignatureBits = 48;
  constexpr double kSignatureKeep = 0.85;
  constexpr double kBackgroundBit = 0.02;

  const int C = cfg.n_categories;
  auto ingredient_name = [](int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ing%04d", i);
    return std::string(buf);
  };
  auto compound_name = [](int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "cmp%04d", k);
    return std::string(buf);
  };

  std::vector<std::vector<int>> members(static_cast<std::size_t>(C));
  for (int i = 0; i < cfg.n_ingredients; ++i) members[static_cast<std::size_t>(i % C)].push_back(i);
  std::vector<std::vector<int>> cat_compounds(static_cast<std::size_t>(C));
  for (int k = 0; k < cfg.n_compounds; ++k) cat_compounds[static_cast<std::size_t>(k % C)].push_back(k);

  SynthCorpus out;
  Rng rng(derive_seed(cfg.seed, 1));

  // Recipes. The first recipes each start from a fresh ingredient so that the
  // whole vocabulary appears whenever n_recipes >= n_ingredients.
  std::vector<bool> seen(static_cast<std::size_t>(cfg.n_ingredients), false);
  for (int r = 0; r < cfg.n_recipes; ++r) {
    std::vector<int> picks;
    int primary;
    if (r < cfg.n_ingredients) {
      picks.push_back(r);
      primary = r % C;
    } else {
      primary = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
    }
    const int size = 3 + static_cast<int>(rng.below(5));
    while (static_cast<int>(picks.size()) < size) {
      if (rng.bernoulli(kWithinCategory)) {
        const auto& pool = members[static_cast<std::size_t>(primary)];
        picks.push_back(pool[rng.below(pool.size())]);
      } else {
        picks.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_ingredients))));
      }
    }
    std::sort(picks.begin(), picks.end());
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    for (std::size_t x = 0; x < picks.size(); ++x) {
      if (x) out.recipes += '\t';
      out.recipes += ingredient_name(picks[x]);
      seen[static_cast<std::size_t>(picks[x])] = true;
    }
    out.recipes += '\n';
  }

  // Associations: the first ceil(size/2) members of each category are hubs.
  Rng link_rng(derive_seed(cfg.seed, 2));
  for (int c = 0; c < C; ++c) {
    const auto& pool = members[static_cast<std::size_t>(c)];
    const auto& own = cat_compounds[static_cast<std::size_t>(c)];
    const std::size_t n_hubs = (pool.size() + 1) / 2;
    for (std::size_t h = 0; h < n_hubs; ++h) {
      const int ing = pool[h];
      std::set<int> linked;
      for (int l = 0; l < 2; ++l) {
        linked.insert(own.empty() ? static_cast<int>(link_rng.below(static_cast<std::uint64_t>(cfg.n_compounds)))
                                  : own[link_rng.below(own.size())]);
      }
      if (link_rng.bernoulli(kCrossLink))
        linked.insert(static_cast<int>(link_rng.below(static_cast<std::uint64_t>(cfg.n_compounds))));
      if (!seen[static_cast<std::size_t>(ing)]) continue;
      for (int k : linked) out.associations += ingredient_name(ing) + '\t' + compound_name(k) + '\n';
    }
  }

  // Fingerprints: per-category signature bit blocks plus sparse background.
  Rng fp_rng(derive_seed(cfg.seed, 3));
  std::vector<std::vector<int>> signature(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    std::set<int> bits;
    while (static_cast<int>(bits.size()) < kSignatureBits)
      bits.insert(static_cast<int>(fp_rng.below(kFingerprintBits)));
    signature[static_cast<std::size_t>(c)].assign(bits.begin(), bits.end());
  }
  for (int k = 0; k < cfg.n_compounds; ++k) {
    Fingerprint fp;
    for (int b : signature[static_cast<std::size_t>(k % C)])
      if (fp_rng.bernoulli(kSignatureKeep)) fp[static_cast<std::size_t>(b)] = true;
    for (std::size_t b = 0; b < kFingerprintBits; ++b)
      if (fp_rng.bernoulli(kBackgroundBit)) fp[b] = true;
    out.fingerprints += compound_name(k) + '\t' + format_fingerprint(fp) + '\n';
  }

  for (int i = 0; i < cfg.n_ingredients; ++i)
    out.categories += ingredient_name(i) + '\t' + kFoodCategories[i % C] + '\n';
  return out;
}

void write_synthetic_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  io::ensure_dir(dir);
  io::atomic_write(dir / "recipes.tsv", corpus.recipes);
  io::atomic_write(dir / "associations.tsv", corpus.associations);
  io::atomic_write(dir / "fingerprints.tsv", corpus.fingerprints);
  io::atomic_write(dir / "categories.tsv", corpus.categories);
}

void write_graph(const HeteroGraph& g, const std::filesystem::path& dir) {
  io::ensure_dir(dir);
  const std::string nodes = node_rows(g);
  const std::string edges = edge_rows(g);
  io::Manifest m;
  m.set("format", "edgediff-graph");
  m.set("version", kGraphFormatVersion);
  m.set("nodes", std::to_string(g.size()));
  m.set("edges", std::to_string(g.edges().size()));
  m.set("hash", io::hex64(graph_hash(g)));
  m.set("duplicate_associations", std::to_string(g.meta().duplicate_associations));
  m.set("skipped_recipes", std::to_string(g.meta().skipped_recipes));
  m.set("ingredient_edges", std::to_string(g.meta().ingredient_edges));
  m.set("compound_edges", std::to_string(g.meta().compound_edges));
  io::atomic_write(dir / "nodes.tsv", nodes);
  io::atomic_write(dir / "edges.tsv", edges);
  io::atomic_write(dir / "manifest.txt", m.serialize());
}

HeteroGraph read_graph(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  const auto m = io::Manifest::parse(io::read_file(manifest_path), manifest_path.string());
  require(m.get("format") == "edgediff-graph", manifest_path.string() + ": not a graph manifest");
  require(m.get("version") == kGraphFormatVersion,
          manifest_path.string() + ": unsupported graph format version '" + m.get("version") + "'");
  const auto n_nodes = m.get_int("nodes");
  const auto n_edges = m.get_int("edges");

  const auto node_path = dir / "nodes.tsv";
  const auto edge_path = dir / "edges.tsv";
  const auto node_lines = io::read_lines(node_path);
  const auto edge_lines = io::read_lines(edge_path);
  require(static_cast<long long>(node_lines.size()) == n_nodes,
          node_path.string() + ": expected " + std::to_string(n_nodes) + " rows, found " +
              std::to_string(node_lines.size()) + " (truncated?)");
  require(static_cast<long long>(edge_lines.size()) == n_edges,
          edge_path.string() + ": expected " + std::to_string(n_edges) + " rows, found " +
              std::to_string(edge_lines.size()) + " (truncated?)");

  std::vector<Node> nodes;
  nodes.reserve(node_lines.size());
  for (std::size_t i = 0; i < node_lines.size(); ++i) {
    const auto f = io::split_tabs(node_lines[i]);
    require(f.size() == 4, where(node_path, i) + ": expected 4 fields");
    Node n;
    n.id = static_cast<int>(io::parse_int(f[0], where(node_path, i)));
    n.name = std::string(f[1]);
    n.kind = parse_node_kind(f[2]);
    if (!f[3].empty()) n.category = std::string(f[3]);
    nodes.push_back(std::move(n));
  }
  std::vector<Edge> edges;
  edges.reserve(edge_lines.size());
  for (std::size_t i = 0; i < edge_lines.size(); ++i) {
    const auto f = io::split_tabs(edge_lines[i]);
    require(f.size() == 3, where(edge_path, i) + ": expected 3 fields");
    edges.push_back({static_cast<int>(io::parse_int(f[0], where(edge_path, i))),
                     static_cast<int>(io::parse_int(f[1], where(edge_path, i))),
                     io::parse_double(f[2], where(edge_path, i))});
  }
  BuildMetadata meta;
  if (m.has("duplicate_associations")) meta.duplicate_associations = m.get_int("duplicate_associations");
  if (m.has("skipped_recipes")) meta.skipped_recipes = m.get_int("skipped_recipes");
  if (m.has("ingredient_edges")) meta.ingredient_edges = m.get_int("ingredient_edges");
  if (m.has("compound_edges")) meta.compound_edges = m.get_int("compound_edges");
  HeteroGraph g(std::move(nodes), std::move(edges), meta);
  require(io::hex64(graph_hash(g)) == m.get("hash"), manifest_path.string() + ": content hash mismatch");
  return g;
}

std::uint64_t graph_hash(const HeteroGraph& g) {
  return io::fnv1a64(edge_rows(g), io::fnv1a64(node_rows(g)));
}

}  // namespace edgediff
