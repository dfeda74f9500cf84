#include <cmath>

#include "doctest.h"
#include "edgediff/diffusion.hpp"
#include "edgediff/error.hpp"
#include "support.hpp"

using namespace edgediff;
using Eigen::MatrixXd;

namespace {

constexpr double kTol = 1e-10;

bool symmetric_zero_diag(const MatrixXd& x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (x(i, i) != 0.0) return false;
    for (Eigen::Index j = 0; j < i; ++j)
      if (x(i, j) != x(j, i)) return false;
  }
  return true;
}

// Betas up to 0.1 keep alpha_bar_T >= 0.9^100, so dividing by sqrt(alpha_bar)
// amplifies roundoff by at most ~200.
NoiseSchedule random_schedule(Rng& rng, double max_beta = 0.1) {
  const int T = 1 + static_cast<int>(rng.below(100));
  double lo = 1e-4 + (max_beta - 1e-4) * rng.uniform();
  double hi = 1e-4 + (max_beta - 1e-4) * rng.uniform();
  if (lo > hi) std::swap(lo, hi);
  return make_schedule(T, lo, hi);
}

}  // namespace

TEST_CASE("hand schedule") {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  REQUIRE(s.alpha_bar.size() == 3);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(std::abs(s.alpha_bar[1] - 0.9) < 1e-15);
  CHECK(std::abs(s.alpha_bar[2] - 0.72) < 1e-15);
  const NoiseSchedule one = make_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar[1] == 0.5);
  CHECK_THROWS_AS(make_schedule(2, 0.0, 0.1), Error);
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), Error);
  CHECK_THROWS_AS(make_schedule(2, 0.2, 0.1), Error);
  CHECK_THROWS_AS(make_schedule(2, 0.1, 1.0), Error);
}

TEST_CASE("random schedules satisfy the product law") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const NoiseSchedule s = random_schedule(rng);
    for (int t = 1; t <= s.T; ++t) {
      const double expect_beta =
          s.T == 1 ? s.beta_start : s.beta_start + (t - 1) * (s.beta_end - s.beta_start) / (s.T - 1);
      CHECK(std::abs(s.beta[static_cast<std::size_t>(t)] - expect_beta) < 1e-15);
      CHECK(s.beta[static_cast<std::size_t>(t)] > 0.0);
      CHECK(s.beta[static_cast<std::size_t>(t)] < 1.0);
      CHECK(std::abs(s.alpha_bar[static_cast<std::size_t>(t)] -
                     s.alpha_bar[static_cast<std::size_t>(t - 1)] * s.alpha[static_cast<std::size_t>(t)]) < 1e-12);
      CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)]);
    }
  }
}

TEST_CASE("forward sample") {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  MatrixXd x0 = MatrixXd::Zero(2, 2), eps = MatrixXd::Zero(2, 2);
  x0(0, 1) = x0(1, 0) = 1.0;
  eps(0, 1) = eps(1, 0) = 1.0;
  CHECK(std::abs(forward_sample(x0, 2, eps, s)(0, 1) - 1.3776783996367752) < kTol);
  const MatrixXd quiet = forward_sample(x0, 2, MatrixXd::Zero(2, 2), s);
  CHECK(std::abs(quiet(0, 1) - std::sqrt(0.72)) < kTol);
  CHECK_THROWS_AS(forward_sample(x0, 3, eps, s), Error);
  CHECK_THROWS_AS(forward_sample(x0, 1, MatrixXd::Zero(3, 3), s), Error);

  // Composing q(x1|x0) and q(x2|x1) gives the closed form's mean and variance.
  const double mean = std::sqrt(s.alpha[1]) * std::sqrt(s.alpha[2]);
  const double var = s.alpha[2] * s.beta[1] + s.beta[2];
  CHECK(std::abs(mean - std::sqrt(s.alpha_bar[2])) < 1e-12);
  CHECK(std::abs(var - (1.0 - s.alpha_bar[2])) < 1e-12);
}

TEST_CASE("forward marginal statistics") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(5);
  const int m = 12;  // 66 entries per matrix
  const MatrixXd x0 = to_model_space(testing_support::random_scores(m, rng));
  double sum = 0.0, sq = 0.0, expect_mean = 0.0;
  long n = 0;
  while (n < 100000) {
    const MatrixXd xt = forward_sample(x0, s.T, symmetric_noise(m, rng), s);
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) {
        sum += xt(i, j);
        sq += xt(i, j) * xt(i, j);
        expect_mean += std::sqrt(s.alpha_bar[1000]) * x0(i, j);
        ++n;
      }
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean - expect_mean / n) < 3.0 / std::sqrt(static_cast<double>(n)));
  // Sample variance of a unit normal has standard deviation sqrt(2/n).
  CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n) + s.alpha_bar[1000]);
}

TEST_CASE("posterior parameters") {
  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  const PosteriorCoefficients c = posterior_coefficients(2, s);
  CHECK(std::abs(c.x0 - 0.6776309271789385) < kTol);
  CHECK(std::abs(c.xt - 0.3194382824999698) < kTol);
  CHECK(std::abs(c.variance - 0.07142857142857141) < kTol);
  const PosteriorCoefficients first = posterior_coefficients(1, s);
  CHECK(std::abs(first.x0 - 1.0) < 1e-12);
  CHECK(first.xt == 0.0);
  CHECK(first.variance == 0.0);

  Rng rng(8);
  const MatrixXd x0 = testing_support::random_symmetric(4, rng);
  const MatrixXd xt = testing_support::random_symmetric(4, rng);
  const PosteriorParams p = posterior_params(x0, xt, 2, s);
  CHECK((p.mean - (c.x0 * x0 + c.xt * xt)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(symmetric_zero_diag(p.mean));
  CHECK((posterior_params(x0, xt, 1, s).mean - x0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(posterior_params(MatrixXd::Zero(4, 4), MatrixXd::Zero(4, 4), 2, s).mean.isZero(0.0));
  CHECK_THROWS_AS(posterior_params(x0, xt, 0, s), Error);

  // Random schedules against the textbook formula evaluated directly.
  for (int trial = 0; trial < 200; ++trial) {
    const NoiseSchedule r = random_schedule(rng);
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.T)));
    const double ab = r.alpha_bar[static_cast<std::size_t>(t)], abp = r.alpha_bar[static_cast<std::size_t>(t - 1)];
    const double b = r.beta[static_cast<std::size_t>(t)];
    const PosteriorCoefficients q = posterior_coefficients(t, r);
    CHECK(std::abs(q.x0 - std::sqrt(abp) * b / (1.0 - ab)) < kTol);
    CHECK(std::abs(q.xt - std::sqrt(1.0 - b) * (1.0 - abp) / (1.0 - ab)) < kTol);
    CHECK(std::abs(q.variance - (1.0 - abp) / (1.0 - ab) * b) < kTol);
  }
}

TEST_CASE("DDIM inverts the forward process given the true noise") {
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const NoiseSchedule s = random_schedule(rng);
    const int m = 2 + static_cast<int>(rng.below(6));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    const MatrixXd x0 = testing_support::random_symmetric(m, rng);
    const MatrixXd eps = symmetric_noise(m, rng);
    const MatrixXd xt = forward_sample(x0, t, eps, s);
    CHECK(symmetric_zero_diag(xt));
    const MatrixXd x0_hat = predict_x0(xt, t, eps, s);
    worst = std::max(worst, (x0_hat - x0).cwiseAbs().maxCoeff());
    CHECK(symmetric_zero_diag(ddim_step(xt, t, eps, s)));
  }
  CHECK(worst < kTol);

  // Steep schedules: the error is bounded by machine roundoff scaled by the
  // conditioning 1 / sqrt(alpha_bar_t).
  for (int trial = 0; trial < 1000; ++trial) {
    const NoiseSchedule s = random_schedule(rng, 0.6);
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    const MatrixXd x0 = testing_support::random_symmetric(4, rng);
    const MatrixXd eps = symmetric_noise(4, rng);
    const MatrixXd x0_hat = predict_x0(forward_sample(x0, t, eps, s), t, eps, s);
    const double scale = std::max(1.0, eps.cwiseAbs().maxCoeff() + x0.cwiseAbs().maxCoeff());
    CHECK((x0_hat - x0).cwiseAbs().maxCoeff() <=
          16.0 * 2.220446049250313e-16 * scale / std::sqrt(s.alpha_bar[static_cast<std::size_t>(t)]));
  }

  const NoiseSchedule s = make_schedule(2, 0.1, 0.2);
  const MatrixXd x1 = testing_support::random_symmetric(3, rng);
  const MatrixXd e = symmetric_noise(3, rng);
  CHECK((ddim_step(x1, 1, e, s) - predict_x0(x1, 1, e, s)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(ddim_step(x1, 0, e, s), Error);
  CHECK_THROWS_AS(ddim_step_to(x1, 1, 1, e, s), Error);
}

TEST_CASE("zero-noise chain telescopes") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const NoiseSchedule s = random_schedule(rng);
    const MatrixXd z = symmetric_noise(4, rng);
    MatrixXd x = z;
    for (int t = s.T; t >= 1; --t) x = ddim_step(x, t, MatrixXd::Zero(4, 4), s);
    const MatrixXd closed = z / std::sqrt(s.alpha_bar[static_cast<std::size_t>(s.T)]);
    CHECK((x - closed).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, closed.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("strided timesteps") {
  CHECK(ddim_timesteps(50, 10) == std::vector<int>{5, 10, 15, 20, 25, 30, 35, 40, 45, 50});
  CHECK(ddim_timesteps(10, 3) == std::vector<int>{3, 6, 10});
  CHECK(ddim_timesteps(4, 4) == std::vector<int>{1, 2, 3, 4});
  CHECK_THROWS_AS(ddim_timesteps(4, 5), Error);
  CHECK_THROWS_AS(ddim_timesteps(4, 0), Error);
}

TEST_CASE("value-space mapping") {
  Rng rng(4);
  const MatrixXd w = testing_support::random_scores(5, rng);
  const MatrixXd x = to_model_space(w);
  CHECK(symmetric_zero_diag(x));
  CHECK(x(0, 1) == 2.0 * w(0, 1) - 1.0);
  CHECK((to_value_space(x) - w).cwiseAbs().maxCoeff() < 1e-15);
  MatrixXd wild = MatrixXd::Zero(2, 2);
  wild(0, 1) = wild(1, 0) = 3.0;
  CHECK(clamp_unit(wild)(0, 1) == 1.0);
  wild(0, 1) = wild(1, 0) = -3.0;
  CHECK(clamp_unit(wild)(1, 0) == 0.0);
}

TEST_CASE("training loss") {
  const NoiseSchedule s = make_schedule(10, 0.01, 0.2);
  Rng rng(6);
  std::vector<MatrixXd> batch{testing_support::random_symmetric(4, rng), testing_support::random_symmetric(4, rng)};
  const NoiseSchedule& sc = s;

  // A predictor that recovers the injected noise exactly.
  auto exact = [&](std::size_t k) {
    return [&, k](const MatrixXd& xt, int t, std::size_t idx) -> MatrixXd {
      const std::size_t which = k == SIZE_MAX ? idx : k;
      const double ab = sc.alpha_bar[static_cast<std::size_t>(t)];
      return (xt - std::sqrt(ab) * batch[which]) / std::sqrt(1.0 - ab);
    };
  };
  Rng r1(1);
  CHECK(training_loss(batch, r1, s, exact(SIZE_MAX)) < 1e-20);

  Rng r2(1), r3(1);
  auto zero = [](const MatrixXd& xt, int, std::size_t) -> MatrixXd { return MatrixXd::Zero(xt.rows(), xt.cols()); };
  const double a = training_loss(batch, r2, s, zero);
  const double b = training_loss(batch, r3, s, zero);
  CHECK(a == b);
  CHECK(a > 0.0);

  // Constant offset of one on every upper-triangle entry.
  auto off_by_one = exact(SIZE_MAX);
  auto shifted = [&](const MatrixXd& xt, int t, std::size_t idx) -> MatrixXd {
    MatrixXd e = off_by_one(xt, t, idx);
    MatrixXd one = MatrixXd::Ones(xt.rows(), xt.cols());
    one.diagonal().setZero();
    return e + one;
  };
  Rng r4(3);
  CHECK(std::abs(training_loss(batch, r4, s, shifted) - 1.0) < 1e-12);
  Rng r5(3);
  CHECK_THROWS_AS(training_loss({}, r5, s, zero), Error);

  Rng r6(9);
  for (int k = 0; k < 2000; ++k) {
    const NoiseDraw d = draw_noise(3, s, r6);
    CHECK(d.t >= 1);
    CHECK(d.t <= s.T);
    CHECK(symmetric_zero_diag(d.eps));
  }
}

TEST_CASE("reconstruction with an exact-noise oracle") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const NoiseSchedule s = random_schedule(rng);
    const int m = 2 + static_cast<int>(rng.below(8));
    const MatrixXd x0 = to_model_space(testing_support::random_scores(m, rng));
    auto oracle = [&](const MatrixXd& xt, int t, std::size_t idx) -> MatrixXd {
      CHECK(idx == 0);
      const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
      return (xt - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    };
    const int steps = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    const Reconstruction r = reconstruct(m, oracle, s, 77 + static_cast<std::uint64_t>(trial), steps, true);
    CHECK((r.final_model - x0).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(r.trace.size() == static_cast<std::size_t>(steps + 1));
    CHECK(r.trace.back() == r.final_model);
    CHECK((r.final_values - to_value_space(x0)).cwiseAbs().maxCoeff() < 1e-9);
    for (const MatrixXd& x : r.trace) CHECK(symmetric_zero_diag(x));
  }

  // Determinism and the seed's effect on x_T.
  const NoiseSchedule s = make_schedule(10, 0.05, 0.5);
  auto zero = [](const MatrixXd& xt, int, std::size_t) -> MatrixXd { return MatrixXd::Zero(xt.rows(), xt.cols()); };
  const Reconstruction a = reconstruct(5, zero, s, 3, 10, true);
  const Reconstruction b = reconstruct(5, zero, s, 3, 10, true);
  CHECK(a.final_model == b.final_model);
  CHECK(a.trace.front() != reconstruct(5, zero, s, 4, 10, true).trace.front());
  CHECK(reconstruct(5, zero, s, 3, 10, false).trace.empty());
  CHECK((a.final_values.array() >= 0.0).all());
  CHECK((a.final_values.array() <= 1.0).all());
  CHECK_THROWS_AS(reconstruct(1, zero, s, 3, 10, false), Error);
}
