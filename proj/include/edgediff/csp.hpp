#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "edgediff/denoiser.hpp"
#include "edgediff/graph.hpp"
#include "edgediff/ingest.hpp"

namespace edgediff {

inline constexpr double kCspClamp = 1e-7;

/// OR over the fingerprints of every compound neighbor of a hub ingredient.
Fingerprint aggregate_target_fingerprint(const HeteroGraph& g, const std::map<std::string, Fingerprint>& fingerprints,
                                         int hub_id);

/// Fingerprint targets for every hub with at least one fingerprinted
/// compound neighbor. Column r of `bits` is the target of the node whose
/// row_of_node entry is r.
struct CspTargets {
  std::vector<int> row_of_node;  // -1 for nodes without a target
  Eigen::MatrixXd bits;          // kFingerprintBits x n_targets, 0/1 entries
  int hubs_without_fingerprint = 0;

  bool has(int node) const {
    return node >= 0 && node < static_cast<int>(row_of_node.size()) && row_of_node[static_cast<std::size_t>(node)] >= 0;
  }
  auto target(int node) const { return bits.col(row_of_node[static_cast<std::size_t>(node)]); }
};

CspTargets build_csp_targets(const HeteroGraph& g, const std::map<std::string, Fingerprint>& fingerprints);

Eigen::VectorXd fingerprint_vector(const Fingerprint& fp);

/// Binary cross-entropy summed over bits, with predictions clamped to
/// [kCspClamp, 1 - kCspClamp].
double csp_loss_from_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& target);
/// d loss / d logits; zero where the clamp is active.
Eigen::VectorXd csp_logit_grad(const Eigen::VectorXd& logits, const Eigen::VectorXd& target);

/// Loss of the linear-sigmoid head (weight bits x d, bias bits x 1) on one
/// embedding.
double csp_loss(const Eigen::VectorXd& embedding, const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                const Eigen::VectorXd& target);

/// Adds scale * gradients of csp_loss to d_embedding, d_weight and d_bias
/// and returns the unscaled loss.
double csp_loss_grad(const Eigen::Ref<const Eigen::VectorXd>& embedding, const Eigen::Ref<const Eigen::MatrixXd>& weight,
                     const Eigen::Ref<const Eigen::VectorXd>& bias, const Eigen::Ref<const Eigen::VectorXd>& target,
                     double scale, Eigen::Ref<Eigen::VectorXd> d_embedding, Eigen::Ref<Eigen::MatrixXd> d_weight,
                     Eigen::Ref<Eigen::VectorXd> d_bias);

}  // namespace edgediff
