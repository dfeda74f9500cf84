#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "edgediff/rng.hpp"

namespace edgediff {

/// Linear variance schedule. Arrays are indexed by step t in [0, T]; index 0
/// holds the conventions beta_0 = 0 and alpha_bar_0 = 1.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

/// Zero-diagonal symmetric matrix with i.i.d. standard normal entries above
/// the diagonal, drawn in row-major upper-triangle order.
Eigen::MatrixXd symmetric_noise(int m, Rng& rng);

/// Edge scores in [0,1] to the zero-centred diffusion space (2w - 1) and
/// back. The diagonal stays zero in both directions.
Eigen::MatrixXd to_model_space(const Eigen::MatrixXd& x0);
Eigen::MatrixXd to_value_space(const Eigen::MatrixXd& x);
Eigen::MatrixXd clamp_unit(Eigen::MatrixXd x);

/// Mean squared difference over the strict upper triangle.
double upper_triangle_mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Eigen::MatrixXd forward_sample(const Eigen::MatrixXd& x0, int t, const Eigen::MatrixXd& eps,
                               const NoiseSchedule& sched);

struct PosteriorParams {
  Eigen::MatrixXd mean;
  double variance = 0.0;
};

struct PosteriorCoefficients {
  double x0 = 0.0;
  double xt = 0.0;
  double variance = 0.0;
};

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& sched);
PosteriorParams posterior_params(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xt, int t,
                                 const NoiseSchedule& sched);

/// Clean-graph estimate implied by a noise prediction at step t.
Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& xt, int t, const Eigen::MatrixXd& eps_hat,
                           const NoiseSchedule& sched);
/// Deterministic DDIM update from step t to any earlier step t_prev.
Eigen::MatrixXd ddim_step_to(const Eigen::MatrixXd& xt, int t, int t_prev, const Eigen::MatrixXd& eps_hat,
                             const NoiseSchedule& sched);
inline Eigen::MatrixXd ddim_step(const Eigen::MatrixXd& xt, int t, const Eigen::MatrixXd& eps_hat,
                                 const NoiseSchedule& sched) {
  return ddim_step_to(xt, t, t - 1, eps_hat, sched);
}

/// Evenly spaced subsequence tau_1 < ... < tau_steps = T used for strided
/// sampling; tau_k = floor(k T / steps).
std::vector<int> ddim_timesteps(int T, int steps);

struct NoiseDraw {
  int t = 1;
  Eigen::MatrixXd eps;
};

/// t ~ Uniform{1..T}, then eps.
NoiseDraw draw_noise(int m, const NoiseSchedule& sched, Rng& rng);

/// eps_hat = predictor(x_t, t, sample index).
using NoisePredictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int, std::size_t)>;

/// Epsilon-prediction objective over a batch of model-space x0 matrices:
/// mean over samples of the upper-triangle MSE between eps and eps_hat.
double training_loss(const std::vector<Eigen::MatrixXd>& batch_x0, Rng& rng, const NoiseSchedule& sched,
                     const NoisePredictor& predictor);

struct Reconstruction {
  Eigen::MatrixXd final_values;  // value space, clamped to [0,1]
  Eigen::MatrixXd final_model;   // model space, unclamped
  std::vector<Eigen::MatrixXd> trace;  // model space: x_T followed by one matrix per step
};

/// DDIM sampling from x_T ~ N(0, I) drawn with `seed`. The predictor's
/// sample index argument is always 0.
Reconstruction reconstruct(int m, const NoisePredictor& predictor, const NoiseSchedule& sched, std::uint64_t seed,
                           int steps, bool trace);

}  // namespace edgediff
