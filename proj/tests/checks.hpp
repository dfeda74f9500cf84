#pragma once

// Randomized structural checks shared by the unit tests and the acceptance
// binary.

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "edgediff/csp.hpp"
#include "edgediff/trainer.hpp"
#include "support.hpp"

namespace testing_support {

struct GradCheckResult {
  std::map<std::string, double> worst_by_class;  // tensor class -> max relative error
  double worst = 0.0;
  std::string worst_name;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t checked = 0;
  bool absent_rows_exact_zero = true;
  double loss = 0.0;
};

/// "layer1.mlp_e.w1" -> "mlp_e.w1", "emb" -> "emb".
inline std::string tensor_class(const std::string& name) {
  if (name.rfind("layer", 0) == 0) return name.substr(name.find('.') + 1);
  return name;
}

/// Central differences against loss_and_gradients on a 5-node, two-layer
/// model with the fingerprint head active. The head is narrowed to
/// `csp_bits` so the loss stays O(1): with all 881 bits the summed
/// cross-entropy is in the hundreds and float64 roundoff in the loss
/// (about 1e-16 * loss / step) swamps gradients near 1e-6. Two samples share some nodes;
/// embedding rows 5 and 6 never appear.
inline GradCheckResult gradient_check(std::uint64_t seed, double step = 1e-6, int csp_bits = 4) {
  using namespace edgediff;
  DenoiserConfig cfg;
  cfg.layers = 2;
  cfg.node_dim = cfg.edge_dim = 3;
  cfg.time_dim = 4;
  cfg.n_nodes_total = 7;
  cfg.csp_bits = csp_bits;
  DenoiserParams params = random_params(cfg, seed);

  Rng rng(seed + 1);
  const NoiseSchedule sched = make_schedule(10, 1e-3, 0.2);
  static const std::vector<int> ids_a{0, 1, 2, 3, 4};
  static const std::vector<int> ids_b{3, 1, 4, 0, 2};
  std::vector<NoisyExample> batch;
  for (const auto* ids : {&ids_a, &ids_b}) {
    NoisyExample ex;
    ex.node_ids = *ids;
    ex.x0 = to_model_space(random_scores(5, rng));
    ex.t = 1 + static_cast<int>(rng.below(10));
    ex.eps = symmetric_noise(5, rng);
    batch.push_back(std::move(ex));
  }

  CspTargets targets;
  targets.row_of_node = {0, -1, 1, -1, 2, -1, -1};
  targets.bits = Eigen::MatrixXd::Zero(csp_bits, 3);
  for (int r = 0; r < 3; ++r)
    for (int b = 0; b < csp_bits; ++b) targets.bits(b, r) = rng.bernoulli(0.3) ? 1.0 : 0.0;
  const CspObjective csp{&targets, 0.3};

  const LossAndGradients lg = loss_and_gradients(params, batch, sched, csp);
  auto loss = [&] { return loss_and_gradients(params, batch, sched, csp).loss; };

  GradCheckResult out;
  out.loss = lg.loss;
  const ParamLayout& L = *params.layout;
  const auto& emb = L.slot(L.emb);
  for (const auto& slot : L.slots()) {
    const std::string cls = tensor_class(slot.name);
    double& worst = out.worst_by_class[cls];
    for (std::size_t k = 0; k < slot.size(); ++k) {
      const std::size_t idx = slot.offset + k;
      if (slot.name == emb.name && static_cast<int>(k) / emb.rows >= 5) {
        if (lg.grad[idx] != 0.0) out.absent_rows_exact_zero = false;
        continue;
      }
      const double numeric = central_difference(params.values, idx, step, loss);
      const double err = relative_error(lg.grad[idx], numeric);
      ++out.checked;
      worst = std::max(worst, err);
      if (err > out.worst) {
        out.worst = err;
        out.worst_name = slot.name + "[" + std::to_string(k) + "]";
        out.worst_analytic = lg.grad[idx];
        out.worst_numeric = numeric;
      }
    }
  }
  return out;
}

/// Max |f(PxP^T, P ids) - P f(x, ids) P^T| over `trials` random permutations
/// of random m <= 8 inputs.
inline double permutation_equivariance_gap(std::uint64_t seed, int trials) {
  using namespace edgediff;
  double worst = 0.0;
  Rng rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(7));
    DenoiserConfig cfg;
    cfg.layers = 2;
    cfg.node_dim = cfg.edge_dim = 6;
    cfg.time_dim = 4;
    cfg.n_nodes_total = 12;
    const DenoiserParams params = random_params(cfg, rng.next_u64());
    std::vector<int> ids(12);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
    ids.resize(static_cast<std::size_t>(m));
    const Eigen::MatrixXd x = random_symmetric(m, rng);
    const int t = 1 + static_cast<int>(rng.below(50));
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    // Row i of the permuted input is row perm[i] of the original.
    Eigen::MatrixXd xp(m, m);
    std::vector<int> idsp(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      idsp[static_cast<std::size_t>(i)] = ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      for (int j = 0; j < m; ++j) xp(i, j) = x(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      const Eigen::MatrixXd y = predict_noise(x, t, ids, params, mode);
      const Eigen::MatrixXd yp = predict_noise(xp, t, idsp, params, mode);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          worst = std::max(worst, std::abs(yp(i, j) - y(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)])));
    }
  }
  return worst;
}

/// Count of trials where the output is not exactly symmetric with an exact
/// zero diagonal.
inline int symmetry_failures(std::uint64_t seed, int trials) {
  using namespace edgediff;
  int failures = 0;
  Rng rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(9));
    DenoiserConfig cfg;
    cfg.layers = 1 + static_cast<int>(rng.below(3));
    cfg.node_dim = cfg.edge_dim = 2 + static_cast<int>(rng.below(6));
    cfg.time_dim = 6;
    cfg.n_nodes_total = 16;
    const DenoiserParams params = random_params(cfg, rng.next_u64());
    std::vector<int> ids(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) ids[static_cast<std::size_t>(i)] = i;
    // Deliberately asymmetric input; the output must still be symmetric.
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(m, m);
    const Eigen::MatrixXd y = predict_noise(x, 1 + static_cast<int>(rng.below(20)), ids, params,
                                            trial % 2 ? Mode::Eval : Mode::Train);
    bool ok = true;
    for (int i = 0; i < m; ++i) {
      ok = ok && y(i, i) == 0.0;
      for (int j = 0; j < m; ++j) ok = ok && y(i, j) == y(j, i) && std::isfinite(y(i, j));
    }
    if (!ok) ++failures;
  }
  return failures;
}

/// With MLP_e, MLP_t, U and V zeroed, every layer's edge stream equals e0.
/// Returns the largest deviation seen.
inline double residual_identity_gap(std::uint64_t seed, int trials) {
  using namespace edgediff;
  double worst = 0.0;
  Rng rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(7));
    DenoiserConfig cfg;
    cfg.layers = 1 + static_cast<int>(rng.below(3));
    cfg.node_dim = cfg.edge_dim = 4;
    cfg.time_dim = 4;
    cfg.n_nodes_total = 10;
    DenoiserParams params = random_params(cfg, rng.next_u64());
    const ParamLayout& L = *params.layout;
    for (const auto& ls : L.layers)
      for (int s : {ls.mlp_e_w1, ls.mlp_e_b1, ls.mlp_e_w2, ls.mlp_e_b2, ls.mlp_t_w1, ls.mlp_t_b1, ls.mlp_t_w2,
                    ls.mlp_t_b2, ls.U, ls.V})
        params.tensor(s).setZero();
    std::vector<int> ids(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) ids[static_cast<std::size_t>(i)] = 9 - i;
    const Eigen::MatrixXd x = random_symmetric(m, rng);
    const NoisyGraph g{ids, &x, 1 + static_cast<int>(rng.below(20))};
    const BatchForward fwd = forward_batch(params, std::span<const NoisyGraph>(&g, 1), Mode::Train);
    const auto streams = edge_streams(fwd, 0);
    for (std::size_t k = 1; k < streams.size(); ++k)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          const auto col = i * m + j;
          worst = std::max(worst, (streams[k].col(col) - streams[0].col(col)).cwiseAbs().maxCoeff());
        }
  }
  return worst;
}

}  // namespace testing_support
