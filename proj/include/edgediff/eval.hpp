#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edgediff/graph.hpp"
#include "edgediff/trainer.hpp"

namespace edgediff {

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centers;              // k x dim
  std::vector<double> inertia_history;  // after every assignment step
  int iterations = 0;
  bool converged = false;

  double inertia() const { return inertia_history.back(); }
};

/// Lloyd's algorithm on the rows of `points` with k-means++ seeding. Ties go
/// to the lowest cluster index; a cluster left empty is re-seeded at the
/// point farthest from its current center.
KMeansResult kmeans_cluster(const Eigen::MatrixXd& points, int k, int max_iters, std::uint64_t seed);

/// Mutual information over the arithmetic mean of the two entropies. 1 for
/// partitions equal up to relabeling; 0 when either entropy is 0.
double nmi_score(const std::vector<int>& a, const std::vector<int>& b);

struct NmiOptions {
  int k = 9;
  int repeats = 10;
  int max_iters = 300;
  int top_n = 0;  // 0 = every hub; otherwise the top_n hubs by degree
  std::uint64_t seed = 0;
  int threads = 1;
};

struct NmiReport {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over repeats
  int repeats = 0;
  int k = 0;
  int n_points = 0;
  std::vector<double> scores;
};

/// Clusters the rows of `points` once per repeat (seed stream r) and scores
/// each clustering against `labels`.
NmiReport nmi_report(const Eigen::MatrixXd& points, const std::vector<int>& labels, const NmiOptions& opts);

struct NmiSelection {
  std::vector<int> node_ids;
  std::vector<int> labels;
  std::vector<std::string> label_names;
  Eigen::MatrixXd points;  // one embedding row per selected hub
};

/// Hub-ingredient embedding rows and their category labels. Categories come
/// from `categories` (name -> category) and fall back to the graph's own
/// annotations; a selected hub without one is an error.
NmiSelection select_hub_embeddings(const DenoiserParams& params, const HeteroGraph& g,
                                   const std::map<std::string, std::string>& categories, int top_n);

NmiReport nmi_protocol(const DenoiserParams& params, const HeteroGraph& g,
                       const std::map<std::string, std::string>& categories, const NmiOptions& opts);

struct ReferenceNmi {
  const char* model;
  double mean;
  double std;
};

/// Published clustering scores at full data scale, printed for comparison.
inline constexpr ReferenceNmi kReferenceNmi[] = {
    {"FlavorGraph", 0.2995, 0.0403},
    {"FlavorGraph_CSP", 0.3102, 0.0407},
    {"diffusion (25 nodes)", 0.2167, 0.0319},
    {"diffusion (50 nodes)", 0.3236, 0.0134},
    {"diffusion (100 nodes)", 0.3170, 0.0207},
    {"diffusion (200 nodes)", 0.2935, 0.0300},
    {"diffusion_CSP (25 nodes)", 0.2970, 0.0144},
    {"diffusion_CSP (50 nodes)", 0.2862, 0.0152},
    {"diffusion_CSP (100 nodes)", 0.3169, 0.0257},
    {"diffusion_CSP (200 nodes)", 0.3410, 0.0150},
};

struct GeneralizationMatrix {
  std::vector<int> train_sizes;
  std::vector<int> test_sizes;
  Eigen::MatrixXd mse;  // train x test

  /// "Train Size\tTest (m)..." header, one row per train size.
  std::string to_tsv() const;
};

bool same_schedule(const NoiseSchedule& a, const NoiseSchedule& b);

/// Entry (i, j): validation epsilon-MSE of checkpoint i on dataset j, scored
/// exactly as during training.
GeneralizationMatrix generalization_matrix(const std::vector<Checkpoint>& checkpoints,
                                           const std::vector<SubgraphDataset>& datasets, const NoiseSchedule& sched,
                                           int threads = 1);

/// Centered projection of the rows of `points` onto the top two principal
/// axes. Each axis is signed so its largest-magnitude loading is positive.
Eigen::MatrixXd project_2d(const Eigen::MatrixXd& points);

}  // namespace edgediff
