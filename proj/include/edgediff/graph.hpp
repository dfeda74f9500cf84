#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edgediff/corpus.hpp"

namespace edgediff {

enum class NodeKind { HubIngredient, NonHubIngredient, FlavorCompound, DrugCompound };

std::string_view to_string(NodeKind kind);
NodeKind parse_node_kind(std::string_view text);
constexpr bool is_ingredient(NodeKind k) {
  return k == NodeKind::HubIngredient || k == NodeKind::NonHubIngredient;
}
constexpr bool is_compound(NodeKind k) { return !is_ingredient(k); }

struct Node {
  int id = 0;
  std::string name;
  NodeKind kind = NodeKind::NonHubIngredient;
  std::optional<std::string> category;

  bool operator==(const Node&) const = default;
};

struct Edge {
  int a = 0;  // a < b
  int b = 0;
  double weight = 0.0;

  bool operator==(const Edge&) const = default;
};

struct Neighbor {
  int node = 0;
  double weight = 0.0;
};

/// Counters collected while building; not part of graph identity.
struct BuildMetadata {
  std::int64_t duplicate_associations = 0;
  std::int64_t skipped_recipes = 0;
  std::int64_t ingredient_edges = 0;
  std::int64_t compound_edges = 0;
};

/// Immutable heterogeneous ingredient/compound graph. The constructor
/// validates every structural invariant and builds the adjacency index.
class HeteroGraph {
 public:
  HeteroGraph() = default;
  HeteroGraph(std::vector<Node> nodes, std::vector<Edge> edges, BuildMetadata meta = {});

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(nodes_.size()); }
  const BuildMetadata& meta() const { return meta_; }

  /// Neighbors sorted by node id.
  std::span<const Neighbor> neighbors(int id) const { return adjacency_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view name) const;
  /// Edge weight, or 0 when the pair is not connected.
  double weight(int a, int b) const;
  bool has_compound_neighbor(int id) const;

  bool operator==(const HeteroGraph& other) const { return nodes_ == other.nodes_ && edges_ == other.edges_; }

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<Neighbor>> adjacency_;
  std::unordered_map<std::string, int> by_name_;
  BuildMetadata meta_;
};

/// Normalized pointwise mutual information of an ingredient pair from raw
/// recipe counts. Returns -1 for pairs that never co-occur.
double compute_npmi(std::int64_t count_ij, std::int64_t count_i, std::int64_t count_j, std::int64_t n_recipes);

/// Maps NPMI in [-1, 1] to an edge weight in [0, 1].
constexpr double npmi_to_weight(double npmi) { return (npmi + 1.0) / 2.0; }

struct GraphBuildOptions {
  double npmi_threshold = 0.0;
  std::int64_t min_cooccur = 2;
};

using Association = std::pair<std::string, std::string>;  // ingredient, compound

/// Ingredient nodes come first in corpus interning order, then compounds in
/// order of first association (flavor rows before drug rows). `categories`
/// maps ingredient names to food-category labels.
HeteroGraph build_hetero_graph(const CorpusStats& corpus, const std::vector<Association>& flavor_assoc,
                               const std::vector<Association>& drug_assoc, const GraphBuildOptions& options,
                               const std::map<std::string, std::string>& categories = {});

struct HubPartition {
  std::vector<int> hubs;
  std::vector<int> non_hubs;
};

HubPartition hub_partition(const HeteroGraph& g);

}  // namespace edgediff
