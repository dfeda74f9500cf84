#include "edgediff/diffusion.hpp"

#include <cmath>
#include <string>

#include "edgediff/error.hpp"

namespace edgediff {

namespace {

void check_step(int t, const NoiseSchedule& sched) {
  require(t >= 1 && t <= sched.T, "timestep " + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
}

void check_square_pair(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  require(a.rows() == a.cols() && a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

}  // namespace

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  require(T >= 1, "schedule needs at least one step");
  require(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0,
          "schedule betas must lie in the open interval (0,1)");
  require(beta_start <= beta_end, "schedule requires beta_start <= beta_end");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s.beta[i] = T == 1 ? beta_start
                       : beta_start + static_cast<double>(t - 1) / static_cast<double>(T - 1) * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
  }
  return s;
}

Eigen::MatrixXd symmetric_noise(int m, Rng& rng) {
  Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      eps(i, j) = rng.normal();
      eps(j, i) = eps(i, j);
    }
  return eps;
}

Eigen::MatrixXd to_model_space(const Eigen::MatrixXd& x0) {
  Eigen::MatrixXd x = (2.0 * x0.array() - 1.0).matrix();
  x.diagonal().setZero();
  return x;
}

Eigen::MatrixXd to_value_space(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd w = ((x.array() + 1.0) / 2.0).matrix();
  w.diagonal().setZero();
  return w;
}

Eigen::MatrixXd clamp_unit(Eigen::MatrixXd x) { return x.cwiseMax(0.0).cwiseMin(1.0); }

double upper_triangle_mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_square_pair(a, b, "upper_triangle_mse");
  const Eigen::Index m = a.rows();
  require(m >= 2, "upper_triangle_mse needs at least a 2x2 matrix");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double d = a(i, j) - b(i, j);
      sum += d * d;
    }
  return sum / static_cast<double>(m * (m - 1) / 2);
}

Eigen::MatrixXd forward_sample(const Eigen::MatrixXd& x0, int t, const Eigen::MatrixXd& eps,
                               const NoiseSchedule& sched) {
  check_step(t, sched);
  check_square_pair(x0, eps, "forward_sample");
  const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& sched) {
  check_step(t, sched);
  const auto i = static_cast<std::size_t>(t);
  const double ab = sched.alpha_bar[i];
  const double ab_prev = sched.alpha_bar[i - 1];
  const double beta = sched.beta[i];
  return {std::sqrt(ab_prev) * beta / (1.0 - ab), std::sqrt(sched.alpha[i]) * (1.0 - ab_prev) / (1.0 - ab),
          (1.0 - ab_prev) / (1.0 - ab) * beta};
}

PosteriorParams posterior_params(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& xt, int t,
                                 const NoiseSchedule& sched) {
  check_square_pair(x0, xt, "posterior_params");
  const auto c = posterior_coefficients(t, sched);
  return {c.x0 * x0 + c.xt * xt, c.variance};
}

Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& xt, int t, const Eigen::MatrixXd& eps_hat,
                           const NoiseSchedule& sched) {
  check_step(t, sched);
  check_square_pair(xt, eps_hat, "predict_x0");
  const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  return (xt - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

Eigen::MatrixXd ddim_step_to(const Eigen::MatrixXd& xt, int t, int t_prev, const Eigen::MatrixXd& eps_hat,
                             const NoiseSchedule& sched) {
  require(t_prev >= 0 && t_prev < t, "ddim step must move to an earlier timestep");
  const Eigen::MatrixXd x0_hat = predict_x0(xt, t, eps_hat, sched);
  const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t_prev)];
  return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  require(steps >= 1 && steps <= T, "sampling steps must lie in [1, T]");
  std::vector<int> tau(static_cast<std::size_t>(steps));
  for (int k = 1; k <= steps; ++k)
    tau[static_cast<std::size_t>(k - 1)] =
        static_cast<int>(static_cast<long long>(k) * T / steps);
  return tau;
}

NoiseDraw draw_noise(int m, const NoiseSchedule& sched, Rng& rng) {
  NoiseDraw d;
  d.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
  d.eps = symmetric_noise(m, rng);
  return d;
}

double training_loss(const std::vector<Eigen::MatrixXd>& batch_x0, Rng& rng, const NoiseSchedule& sched,
                     const NoisePredictor& predictor) {
  require(!batch_x0.empty(), "training_loss: empty batch");
  double total = 0.0;
  for (std::size_t s = 0; s < batch_x0.size(); ++s) {
    const auto& x0 = batch_x0[s];
    const NoiseDraw d = draw_noise(static_cast<int>(x0.rows()), sched, rng);
    const Eigen::MatrixXd xt = forward_sample(x0, d.t, d.eps, sched);
    total += upper_triangle_mse(d.eps, predictor(xt, d.t, s));
  }
  return total / static_cast<double>(batch_x0.size());
}

Reconstruction reconstruct(int m, const NoisePredictor& predictor, const NoiseSchedule& sched, std::uint64_t seed,
                           int steps, bool trace) {
  require(m >= 2, "reconstruction needs at least 2 nodes");
  const auto tau = ddim_timesteps(sched.T, steps);
  Rng rng(seed);
  Eigen::MatrixXd x = symmetric_noise(m, rng);
  Reconstruction out;
  if (trace) out.trace.push_back(x);
  for (std::size_t k = tau.size(); k-- > 0;) {
    const int t = tau[k];
    const int t_prev = k == 0 ? 0 : tau[k - 1];
    x = ddim_step_to(x, t, t_prev, predictor(x, t, 0), sched);
    if (trace) out.trace.push_back(x);
  }
  out.final_model = x;
  out.final_values = clamp_unit(to_value_space(x));
  return out;
}

}  // namespace edgediff
