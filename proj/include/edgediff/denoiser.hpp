#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "edgediff/diffusion.hpp"

namespace edgediff {

struct DenoiserConfig {
  int layers = 2;
  int node_dim = 64;
  int edge_dim = 64;
  int n_nodes_total = 0;
  int time_dim = 32;
  int csp_bits = 0;  // 0 disables the fingerprint head

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

/// Named tensor slot inside a flat parameter vector. Tensors are stored
/// column-major as (rows, cols).
struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct LayerSlots {
  int P, Q, R;
  int bn_e_gamma, bn_e_beta;
  int mlp_e_w1, mlp_e_b1, mlp_e_w2, mlp_e_b2;
  int mlp_t_w1, mlp_t_b1, mlp_t_w2, mlp_t_b2;
  int U, V;
  int bn_h_gamma, bn_h_beta;
};

/// Canonical parameter order: embedding table, scalar edge projection, the
/// per-layer tensors, the noise head, then the optional fingerprint head.
class ParamLayout {
 public:
  explicit ParamLayout(const DenoiserConfig& config);

  const std::vector<TensorSlot>& slots() const { return slots_; }
  const TensorSlot& slot(int index) const { return slots_[static_cast<std::size_t>(index)]; }
  int find(std::string_view name) const;
  std::size_t size() const { return size_; }
  /// Range holding every tensor except the embedding table.
  std::size_t dense_begin() const { return slots_[static_cast<std::size_t>(edge_in_w)].offset; }

  /// Running-statistics buffer: per layer edge mean, edge var, node mean, node var.
  std::size_t buffer_size() const { return buffer_size_; }
  std::size_t edge_mean_offset(int layer) const;
  std::size_t edge_var_offset(int layer) const;
  std::size_t node_mean_offset(int layer) const;
  std::size_t node_var_offset(int layer) const;

  int emb = 0;
  int edge_in_w = 0, edge_in_b = 0;
  std::vector<LayerSlots> layers;
  int head_w1 = 0, head_b1 = 0, head_w2 = 0, head_b2 = 0;
  int csp_w = -1, csp_b = -1;

 private:
  int add(std::string name, int rows, int cols);

  DenoiserConfig config_;
  std::vector<TensorSlot> slots_;
  std::size_t size_ = 0;
  std::size_t buffer_size_ = 0;
};

using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

struct DenoiserParams {
  DenoiserConfig config;
  std::shared_ptr<const ParamLayout> layout;
  std::vector<double> values;
  std::vector<double> buffers;

  MatrixMap tensor(int slot);
  ConstMatrixMap tensor(int slot) const;
  Eigen::Map<Eigen::VectorXd> buffer(std::size_t offset, int length);
  Eigen::Map<const Eigen::VectorXd> buffer(std::size_t offset, int length) const;
};

ConstMatrixMap view(const std::vector<double>& data, const TensorSlot& slot);
MatrixMap view(std::vector<double>& data, const TensorSlot& slot);

/// Linear weights ~ N(0, 1/fan_in), biases 0, normalization scale 1 and
/// shift 0, running mean 0 and variance 1, embeddings ~ N(0, 1/node_dim).
DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed);

/// Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...] with w_k decaying
/// geometrically from 1 down to 1/10000 across the half-width.
Eigen::VectorXd timestep_features(int t, int time_dim);

enum class Mode { Train, Eval };

inline constexpr double kNormEpsilon = 1e-5;

/// One noised subgraph fed to the network.
struct NoisyGraph {
  std::span<const int> node_ids;
  const Eigen::MatrixXd* xt = nullptr;
  int t = 1;
};

struct ForwardCache;

struct BatchStats {
  std::vector<Eigen::VectorXd> edge_mean, edge_var, node_mean, node_var;
};

struct BatchForward {
  std::vector<Eigen::MatrixXd> eps_hat;
  std::shared_ptr<ForwardCache> cache;
};

/// Runs the network over a batch. In Train mode normalization uses
/// statistics pooled over every edge (node) of the batch; in Eval mode it
/// uses the running buffers.
BatchForward forward_batch(const DenoiserParams& params, std::span<const NoisyGraph> batch, Mode mode,
                           int threads = 1);

/// Batch normalization statistics from a Train-mode forward.
BatchStats batch_stats(const BatchForward& fwd);

/// Accumulates dL/dtheta into `grad` given dL/d eps_hat per sample. Only
/// entries (i, j) with i != j of each upstream matrix are read.
/// `emb_extra` optionally adds gradient directly on each sample's input
/// embeddings (d x m per sample).
void backward_batch(const DenoiserParams& params, const BatchForward& fwd, std::span<const Eigen::MatrixXd> d_eps_hat,
                    std::vector<double>& grad, int threads = 1,
                    std::span<const Eigen::MatrixXd> emb_extra = {});

/// Single-graph convenience wrapper over forward_batch.
Eigen::MatrixXd predict_noise(const Eigen::MatrixXd& xt, int t, std::span<const int> node_ids,
                              const DenoiserParams& params, Mode mode);

/// Edge features entering the noise head (d_e x m^2, column i*m + j) and
/// per-layer edge streams, for structural checks.
std::vector<Eigen::MatrixXd> edge_streams(const BatchForward& fwd, std::size_t sample);

}  // namespace edgediff
