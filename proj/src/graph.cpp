#include "edgediff/graph.hpp"

#include <algorithm>
#include <cmath>

#include "edgediff/error.hpp"

namespace edgediff {

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::HubIngredient: return "hub";
    case NodeKind::NonHubIngredient: return "nonhub";
    case NodeKind::FlavorCompound: return "flavor";
    case NodeKind::DrugCompound: return "drug";
  }
  return "?";
}

NodeKind parse_node_kind(std::string_view text) {
  if (text == "hub") return NodeKind::HubIngredient;
  if (text == "nonhub") return NodeKind::NonHubIngredient;
  if (text == "flavor") return NodeKind::FlavorCompound;
  if (text == "drug") return NodeKind::DrugCompound;
  fail("unknown node kind '" + std::string(text) + "'");
}

HeteroGraph::HeteroGraph(std::vector<Node> nodes, std::vector<Edge> edges, BuildMetadata meta)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), meta_(meta) {
  const int n = size();
  adjacency_.assign(nodes_.size(), {});
  for (int i = 0; i < n; ++i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    require(node.id == i, "node ids must be contiguous: position " + std::to_string(i) + " has id " +
                              std::to_string(node.id));
    require(!node.name.empty(), "node " + std::to_string(i) + " has an empty name");
    require(by_name_.emplace(node.name, i).second, "duplicate node name '" + node.name + "'");
  }
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const Edge& e = edges_[k];
    const std::string where = "edge " + std::to_string(k);
    require(e.a >= 0 && e.b < n && e.a < e.b, where + ": endpoints must satisfy 0 <= a < b < |V|");
    require(e.weight >= 0.0 && e.weight <= 1.0, where + ": weight outside [0,1]");
    require(is_ingredient(nodes_[static_cast<std::size_t>(e.a)].kind) ||
                is_ingredient(nodes_[static_cast<std::size_t>(e.b)].kind),
            where + ": compound-compound edges are not allowed");
    adjacency_[static_cast<std::size_t>(e.a)].push_back({e.b, e.weight});
    adjacency_[static_cast<std::size_t>(e.b)].push_back({e.a, e.weight});
  }
  for (int i = 0; i < n; ++i) {
    auto& adj = adjacency_[static_cast<std::size_t>(i)];
    std::sort(adj.begin(), adj.end(), [](const Neighbor& x, const Neighbor& y) { return x.node < y.node; });
    for (std::size_t k = 1; k < adj.size(); ++k)
      require(adj[k].node != adj[k - 1].node,
              "duplicate edge (" + std::to_string(std::min(i, adj[k].node)) + "," +
                  std::to_string(std::max(i, adj[k].node)) + ")");
    const NodeKind kind = nodes_[static_cast<std::size_t>(i)].kind;
    if (is_ingredient(kind)) {
      const bool hub = has_compound_neighbor(i);
      require(hub == (kind == NodeKind::HubIngredient),
              "ingredient '" + nodes_[static_cast<std::size_t>(i)].name + "' kind disagrees with hub rule");
    }
  }
}

std::optional<int> HeteroGraph::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

double HeteroGraph::weight(int a, int b) const {
  const auto& adj = adjacency_.at(static_cast<std::size_t>(a));
  auto it = std::lower_bound(adj.begin(), adj.end(), b, [](const Neighbor& x, int id) { return x.node < id; });
  return (it != adj.end() && it->node == b) ? it->weight : 0.0;
}

bool HeteroGraph::has_compound_neighbor(int id) const {
  for (const auto& nb : neighbors(id))
    if (is_compound(nodes_[static_cast<std::size_t>(nb.node)].kind)) return true;
  return false;
}

double compute_npmi(std::int64_t count_ij, std::int64_t count_i, std::int64_t count_j, std::int64_t n_recipes) {
  require(n_recipes > 0, "npmi: n_recipes must be positive");
  require(count_i >= 1 && count_j >= 1, "npmi: marginal counts must be at least 1");
  require(count_ij >= 0, "npmi: negative co-occurrence count");
  require(count_ij <= count_i && count_ij <= count_j, "npmi: co-occurrence count exceeds a marginal count");
  require(count_i <= n_recipes && count_j <= n_recipes, "npmi: marginal count exceeds n_recipes");
  if (count_ij == 0) return -1.0;
  if (count_ij == n_recipes) return 1.0;  // every recipe holds both; -log p_ij = 0
  const double n = static_cast<double>(n_recipes);
  // Both logs take correctly rounded quotients of integer products, so
  // independence gives exactly 0 and count_ij = count_i = count_j gives
  // exactly 1 (c n / c^2 and n / c round to the same double).
  const double ratio = (static_cast<double>(count_ij) * n) / (static_cast<double>(count_i) * static_cast<double>(count_j));
  return std::log(ratio) / std::log(n / static_cast<double>(count_ij));
}

HeteroGraph build_hetero_graph(const CorpusStats& corpus, const std::vector<Association>& flavor_assoc,
                               const std::vector<Association>& drug_assoc, const GraphBuildOptions& options,
                               const std::map<std::string, std::string>& categories) {
  require(corpus.n_recipes > 0, "cannot build a graph from an empty corpus");
  require(options.npmi_threshold >= -1.0 && options.npmi_threshold <= 1.0, "npmi threshold must lie in [-1,1]");
  require(options.min_cooccur >= 0, "min_cooccur must be non-negative");

  const int n_ingredients = static_cast<int>(corpus.names.size());
  std::vector<Node> nodes;
  nodes.reserve(static_cast<std::size_t>(n_ingredients));
  for (int i = 0; i < n_ingredients; ++i) {
    Node node{i, corpus.names[static_cast<std::size_t>(i)], NodeKind::NonHubIngredient, std::nullopt};
    if (auto it = categories.find(node.name); it != categories.end()) node.category = it->second;
    nodes.push_back(std::move(node));
  }

  BuildMetadata meta;
  meta.skipped_recipes = corpus.skipped_empty;
  std::vector<Edge> edges;
  for (const PairCount& p : corpus.pairs) {
    if (p.count < options.min_cooccur) continue;
    const double npmi = compute_npmi(p.count, corpus.counts[static_cast<std::size_t>(p.a)],
                                     corpus.counts[static_cast<std::size_t>(p.b)], corpus.n_recipes);
    if (npmi < options.npmi_threshold) continue;
    edges.push_back({p.a, p.b, npmi_to_weight(npmi)});
  }
  meta.ingredient_edges = static_cast<std::int64_t>(edges.size());

  std::unordered_map<std::string, int> compound_ids;
  std::vector<std::pair<int, int>> links;
  auto add_rows = [&](const std::vector<Association>& rows, NodeKind kind) {
    for (const auto& [ingredient, compound] : rows) {
      auto ing = corpus.id_of(ingredient);
      require(ing.has_value(), "association references unknown ingredient '" + ingredient + "'");
      require(!corpus.id_of(compound), "compound name '" + compound + "' collides with an ingredient");
      auto [it, inserted] = compound_ids.try_emplace(compound, static_cast<int>(nodes.size()));
      if (inserted) nodes.push_back({it->second, compound, kind, std::nullopt});
      links.emplace_back(*ing, it->second);
    }
  };
  add_rows(flavor_assoc, NodeKind::FlavorCompound);
  add_rows(drug_assoc, NodeKind::DrugCompound);

  std::sort(links.begin(), links.end());
  const auto unique_end = std::unique(links.begin(), links.end());
  meta.duplicate_associations = static_cast<std::int64_t>(links.end() - unique_end);
  links.erase(unique_end, links.end());
  for (const auto& [ing, comp] : links) {
    nodes[static_cast<std::size_t>(ing)].kind = NodeKind::HubIngredient;
    edges.push_back({ing, comp, 1.0});
  }
  meta.compound_edges = static_cast<std::int64_t>(links.size());

  std::sort(edges.begin(), edges.end(),
            [](const Edge& x, const Edge& y) { return x.a < y.a || (x.a == y.a && x.b < y.b); });
  return HeteroGraph(std::move(nodes), std::move(edges), meta);
}

HubPartition hub_partition(const HeteroGraph& g) {
  HubPartition part;
  for (const Node& node : g.nodes()) {
    if (!is_ingredient(node.kind)) continue;
    (g.has_compound_neighbor(node.id) ? part.hubs : part.non_hubs).push_back(node.id);
  }
  return part;
}

}  // namespace edgediff
