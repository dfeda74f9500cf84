#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgediff/csp.hpp"
#include "edgediff/denoiser.hpp"
#include "edgediff/diffusion.hpp"
#include "edgediff/sampler.hpp"

namespace edgediff {

/// One training example with its noise already drawn. x0 is in model space.
struct NoisyExample {
  std::span<const int> node_ids;
  Eigen::MatrixXd x0;
  int t = 1;
  Eigen::MatrixXd eps;
};

struct CspObjective {
  const CspTargets* targets = nullptr;
  double lambda = 0.0;

  bool active() const { return targets != nullptr && lambda != 0.0; }
};

struct LossAndGradients {
  double loss = 0.0;   // recon + lambda * csp
  double recon = 0.0;  // epsilon-prediction MSE
  double csp = 0.0;    // mean fingerprint loss over hub occurrences
  std::vector<double> grad;
  BatchStats stats;
};

/// Exact gradient of the Train-mode batch objective.
LossAndGradients loss_and_gradients(const DenoiserParams& params, std::span<const NoisyExample> batch,
                                    const NoiseSchedule& sched, const CspObjective& csp = {}, int threads = 1);

/// Draws (t, eps) per subgraph from `rng` and differentiates the batch
/// objective. Raises if the loss or any gradient entry is non-finite,
/// naming the first offending tensor.
LossAndGradients parameter_gradients(std::span<const Subgraph* const> batch, const DenoiserParams& params,
                                     const NoiseSchedule& sched, Rng& rng, const CspObjective& csp = {},
                                     int threads = 1);

/// Eval-mode epsilon MSE over `samples`; sample k draws its noise from
/// stream k of `noise_seed`.
double evaluate_mse(const DenoiserParams& params, std::span<const Subgraph> samples, const NoiseSchedule& sched,
                    std::uint64_t noise_seed, int threads = 1);

/// Noise seed for scoring a dataset's validation split. Derived from the
/// dataset alone so every checkpoint is scored on identical draws.
std::uint64_t validation_noise_seed(const SubgraphDataset& ds);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig config) : config_(config), m_(n, 0.0), v_(n, 0.0) {}
  void step(std::vector<double>& params, const std::vector<double>& grad);
  long long steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  long long t_ = 0;
};

struct TrainConfig {
  int epochs = 10;
  long long max_steps = 0;  // 0 = no cap
  int batch_size = 16;
  AdamConfig adam;
  double norm_momentum = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  long long steps = 0;
  int batch_size = 0;
  int train_m = 0;
  double csp_lambda = 0.0;
  std::vector<double> train_curve;  // mean batch epsilon-MSE per epoch
  std::vector<double> val_curve;    // Eval-mode validation MSE per epoch
  double final_val_mse = 0.0;
  std::uint64_t val_noise_seed = 0;
  std::uint64_t graph_hash = 0;
  bool diverged = false;
};

struct Checkpoint {
  DenoiserParams params;
  NoiseSchedule schedule;
  TrainingMeta meta;
};

/// Minibatch Adam on the epsilon objective (plus lambda * fingerprint loss
/// when `csp` is active). On a non-finite loss training stops and the last
/// finite parameters are returned with meta.diverged set.
Checkpoint train(const SubgraphDataset& dataset, const DenoiserConfig& config, const NoiseSchedule& sched,
                 const TrainConfig& tc, const CspObjective& csp = {});

/// Header of key=value lines, a blank line, then parameters followed by
/// running statistics as little-endian float64 in canonical slot order.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes, const std::string& context);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace edgediff
