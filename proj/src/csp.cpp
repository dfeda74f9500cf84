#include "edgediff/csp.hpp"

#include <algorithm>
#include <cmath>

#include "edgediff/error.hpp"

namespace edgediff {

Fingerprint aggregate_target_fingerprint(const HeteroGraph& g, const std::map<std::string, Fingerprint>& fingerprints,
                                         int hub_id) {
  require(hub_id >= 0 && hub_id < g.size(), "csp: node id out of range");
  const Node& hub = g.node(hub_id);
  require(hub.kind == NodeKind::HubIngredient, "csp: '" + hub.name + "' is not a hub ingredient");
  Fingerprint acc;
  bool any = false;
  for (const Neighbor& nb : g.neighbors(hub_id)) {
    const Node& other = g.node(nb.node);
    if (!is_compound(other.kind)) continue;
    auto it = fingerprints.find(other.name);
    if (it == fingerprints.end()) continue;
    acc |= it->second;
    any = true;
  }
  require(any, "csp: hub '" + hub.name + "' has no fingerprinted compound neighbor");
  return acc;
}

Eigen::VectorXd fingerprint_vector(const Fingerprint& fp) {
  Eigen::VectorXd v(kFingerprintBits);
  for (int b = 0; b < kFingerprintBits; ++b) v(b) = fp[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
  return v;
}

CspTargets build_csp_targets(const HeteroGraph& g, const std::map<std::string, Fingerprint>& fingerprints) {
  CspTargets targets;
  targets.row_of_node.assign(static_cast<std::size_t>(g.size()), -1);
  std::vector<Eigen::VectorXd> cols;
  for (const Node& node : g.nodes()) {
    if (node.kind != NodeKind::HubIngredient) continue;
    bool fingerprinted = false;
    for (const Neighbor& nb : g.neighbors(node.id))
      if (is_compound(g.node(nb.node).kind) && fingerprints.count(g.node(nb.node).name)) fingerprinted = true;
    if (!fingerprinted) {
      ++targets.hubs_without_fingerprint;
      continue;
    }
    targets.row_of_node[static_cast<std::size_t>(node.id)] = static_cast<int>(cols.size());
    cols.push_back(fingerprint_vector(aggregate_target_fingerprint(g, fingerprints, node.id)));
  }
  targets.bits.resize(kFingerprintBits, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) targets.bits.col(static_cast<Eigen::Index>(c)) = cols[c];
  return targets;
}

namespace {

double clamped_sigmoid(double z) {
  const double f = 1.0 / (1.0 + std::exp(-z));
  return std::clamp(f, kCspClamp, 1.0 - kCspClamp);
}

}  // namespace

double csp_loss_from_logits(const Eigen::VectorXd& logits, const Eigen::VectorXd& target) {
  require(logits.size() == target.size(), "csp: logit and target lengths differ");
  double loss = 0.0;
  for (Eigen::Index d = 0; d < logits.size(); ++d) {
    const double f = clamped_sigmoid(logits(d));
    loss -= target(d) * std::log(f) + (1.0 - target(d)) * std::log(1.0 - f);
  }
  return loss;
}

Eigen::VectorXd csp_logit_grad(const Eigen::VectorXd& logits, const Eigen::VectorXd& target) {
  Eigen::VectorXd g(logits.size());
  for (Eigen::Index d = 0; d < logits.size(); ++d) {
    const double raw = 1.0 / (1.0 + std::exp(-logits(d)));
    g(d) = (raw < kCspClamp || raw > 1.0 - kCspClamp) ? 0.0 : raw - target(d);
  }
  return g;
}

double csp_loss(const Eigen::VectorXd& embedding, const Eigen::MatrixXd& weight, const Eigen::VectorXd& bias,
                const Eigen::VectorXd& target) {
  return csp_loss_from_logits(weight * embedding + bias, target);
}

double csp_loss_grad(const Eigen::Ref<const Eigen::VectorXd>& embedding, const Eigen::Ref<const Eigen::MatrixXd>& weight,
                     const Eigen::Ref<const Eigen::VectorXd>& bias, const Eigen::Ref<const Eigen::VectorXd>& target,
                     double scale, Eigen::Ref<Eigen::VectorXd> d_embedding, Eigen::Ref<Eigen::MatrixXd> d_weight,
                     Eigen::Ref<Eigen::VectorXd> d_bias) {
  const Eigen::VectorXd logits = weight * embedding + bias;
  const Eigen::VectorXd target_v = target;
  const Eigen::VectorXd g = scale * csp_logit_grad(logits, target_v);
  d_bias += g;
  d_weight.noalias() += g * embedding.transpose();
  d_embedding.noalias() += weight.transpose() * g;
  return csp_loss_from_logits(logits, target_v);
}

}  // namespace edgediff
