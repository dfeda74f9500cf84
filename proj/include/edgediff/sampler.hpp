#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "edgediff/graph.hpp"
#include "edgediff/rng.hpp"

namespace edgediff {

/// m ingredient ids and their m x m edge-score matrix (symmetric, zero
/// diagonal, entries in [0,1]).
struct Subgraph {
  std::vector<int> node_ids;
  Eigen::MatrixXd x0;

  int size() const { return static_cast<int>(node_ids.size()); }
};

struct SubgraphDataset {
  int m = 0;
  std::vector<Subgraph> train;
  std::vector<Subgraph> validation;
  std::uint64_t seed = 0;
  std::uint64_t graph_hash = 0;
};

/// Hub slots for a subgraph of size m; odd sizes give hubs the extra slot.
constexpr int hub_slots(int m) { return (m + 1) / 2; }

Subgraph subgraph_from_ids(const HeteroGraph& g, std::vector<int> node_ids);

/// ceil(m/2) hubs and floor(m/2) non-hubs, each drawn uniformly without
/// replacement. The overload taking a partition avoids recomputing it.
Subgraph sample_balanced_subgraph(const HeteroGraph& g, int m, Rng& rng);
Subgraph sample_balanced_subgraph(const HeteroGraph& g, const HubPartition& part, int m, Rng& rng);

/// Sample i of the training split uses stream i of `seed`; validation
/// samples use a disjoint stream range. Output is independent of `threads`.
SubgraphDataset build_dataset(const HeteroGraph& g, int m, int n_train, int n_val, std::uint64_t seed,
                              int threads = 1);
void validate_dataset_config(int m, long long n_train, long long n_val);

void write_dataset(const SubgraphDataset& ds, const std::filesystem::path& dir);
SubgraphDataset read_dataset(const std::filesystem::path& dir);

}  // namespace edgediff
