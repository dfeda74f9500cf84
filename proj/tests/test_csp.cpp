#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "edgediff/csp.hpp"
#include "edgediff/error.hpp"
#include "support.hpp"

using namespace edgediff;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// H links to compounds c1..c5; G links to c6 only, which has no fingerprint.
HeteroGraph csp_graph() {
  const CorpusStats s = count_recipes({{"H", "G", "N"}, {"H", "N"}, {"G", "N"}});
  std::vector<Association> assoc;
  for (int k = 1; k <= 6; ++k) assoc.push_back({k == 6 ? "G" : "H", "c" + std::to_string(k)});
  return build_hetero_graph(s, assoc, {}, {});
}

Fingerprint random_fingerprint(Rng& rng, double density) {
  Fingerprint fp;
  for (int b = 0; b < kFingerprintBits; ++b) fp[static_cast<std::size_t>(b)] = rng.bernoulli(density);
  return fp;
}

VectorXd random_target(Rng& rng) { return fingerprint_vector(random_fingerprint(rng, 0.3)); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("target aggregation") {
  const HeteroGraph g = csp_graph();
  const int h = *g.find("H");
  Rng rng(3);
  std::map<std::string, Fingerprint> fps;
  for (int k = 1; k <= 5; ++k) fps["c" + std::to_string(k)] = random_fingerprint(rng, 0.05);

  // Brute-force OR loop oracle.
  std::vector<bool> expect(kFingerprintBits, false);
  for (const auto& [name, fp] : fps)
    for (int b = 0; b < kFingerprintBits; ++b) expect[static_cast<std::size_t>(b)] = expect[static_cast<std::size_t>(b)] || fp.test(static_cast<std::size_t>(b));
  const Fingerprint got = aggregate_target_fingerprint(g, fps, h);
  for (int b = 0; b < kFingerprintBits; ++b) CHECK(got.test(static_cast<std::size_t>(b)) == expect[static_cast<std::size_t>(b)]);

  std::map<std::string, Fingerprint> single{{"c2", fps["c2"]}};
  CHECK(aggregate_target_fingerprint(g, single, h) == fps["c2"]);
  Fingerprint a, b;
  a.set(3);
  b.set(7);
  const Fingerprint ab = aggregate_target_fingerprint(g, {{"c1", a}, {"c4", b}}, h);
  CHECK(ab.count() == 2);
  CHECK(ab.test(3));
  CHECK(ab.test(7));

  CHECK_THROWS_AS(aggregate_target_fingerprint(g, fps, *g.find("G")), Error);
  CHECK_THROWS_AS(aggregate_target_fingerprint(g, fps, *g.find("N")), Error);
  CHECK_THROWS_AS(aggregate_target_fingerprint(g, fps, *g.find("c1")), Error);

  const CspTargets t = build_csp_targets(g, fps);
  CHECK(t.has(h));
  CHECK(!t.has(*g.find("G")));
  CHECK(!t.has(*g.find("N")));
  CHECK(t.hubs_without_fingerprint == 1);
  CHECK(t.bits.rows() == kFingerprintBits);
  CHECK(t.target(h) == fingerprint_vector(got));
}

TEST_CASE("loss examples") {
  const VectorXd half = VectorXd::Zero(kFingerprintBits);
  Rng rng(5);
  const VectorXd y = random_target(rng);
  CHECK(std::abs(csp_loss_from_logits(half, y) - 610.6626660733118) < 1e-9);
  // Logits large enough to saturate the clamp in the right direction.
  const VectorXd perfect = (2.0 * y.array() - 1.0) * 40.0;
  CHECK(csp_loss_from_logits(perfect, y) < kFingerprintBits * 1e-6);
  CHECK(csp_loss_from_logits(VectorXd::Constant(kFingerprintBits, -40.0), VectorXd::Zero(kFingerprintBits)) <
        kFingerprintBits * 1e-6);
  CHECK(csp_logit_grad(perfect, y).isZero(0.0));
  CHECK_THROWS_AS(csp_loss_from_logits(half, VectorXd::Zero(5)), Error);

  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd z = 10.0 * VectorXd::NullaryExpr(kFingerprintBits, [&] { return rng.normal(); });
    CHECK(csp_loss_from_logits(z, random_target(rng)) >= 0.0);
  }
}

TEST_CASE("head gradient matches finite differences") {
  Rng rng(19);
  const int d = 6;
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd e = VectorXd::NullaryExpr(d, [&] { return rng.normal(); });
    MatrixXd w = MatrixXd::NullaryExpr(kFingerprintBits, d, [&] { return 0.3 * rng.normal(); });
    VectorXd b = VectorXd::NullaryExpr(kFingerprintBits, [&] { return 0.3 * rng.normal(); });
    const VectorXd y = random_target(rng);
    VectorXd de = VectorXd::Zero(d), db = VectorXd::Zero(kFingerprintBits);
    MatrixXd dw = MatrixXd::Zero(kFingerprintBits, d);
    const double loss = csp_loss_grad(e, w, b, y, 1.0, de, dw, db);
    CHECK(loss == csp_loss(e, w, b, y));

    const double h = 1e-6;
    auto fd = [&](double& slot) {
      const double keep = slot;
      slot = keep + h;
      const double up = csp_loss(e, w, b, y);
      slot = keep - h;
      const double down = csp_loss(e, w, b, y);
      slot = keep;
      return (up - down) / (2.0 * h);
    };
    for (int i = 0; i < d; ++i) worst = std::max(worst, testing_support::relative_error(de(i), fd(e(i))));
    for (int k = 0; k < 40; ++k) {
      const int r = static_cast<int>(rng.below(kFingerprintBits));
      const int c = static_cast<int>(rng.below(d));
      worst = std::max(worst, testing_support::relative_error(dw(r, c), fd(w(r, c))));
      worst = std::max(worst, testing_support::relative_error(db(r), fd(b(r))));
    }

    // Scale multiplies the accumulated gradient and leaves the return value alone.
    VectorXd de2 = VectorXd::Zero(d), db2 = VectorXd::Zero(kFingerprintBits);
    MatrixXd dw2 = MatrixXd::Zero(kFingerprintBits, d);
    CHECK(csp_loss_grad(e, w, b, y, 0.25, de2, dw2, db2) == loss);
    CHECK((de2 - 0.25 * de).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("convexity in the logits") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const VectorXd y = random_target(rng);
    VectorXd z = 2.0 * VectorXd::NullaryExpr(kFingerprintBits, [&] { return rng.normal(); });
    std::vector<int> slice(5);
    for (int& s : slice) s = static_cast<int>(rng.below(kFingerprintBits));
    std::sort(slice.begin(), slice.end());
    slice.erase(std::unique(slice.begin(), slice.end()), slice.end());
    const int k = static_cast<int>(slice.size());

    // Second differences of the loss over the slice.
    const double h = 1e-4;
    MatrixXd hess(k, k);
    auto f = [&](int a, double da, int b, double db) {
      VectorXd p = z;
      p(slice[static_cast<std::size_t>(a)]) += da;
      p(slice[static_cast<std::size_t>(b)]) += db;
      return csp_loss_from_logits(p, y);
    };
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        hess(a, b) = (f(a, h, b, h) - f(a, h, b, -h) - f(a, -h, b, h) + f(a, -h, b, -h)) / (4.0 * h * h);
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (hess + hess.transpose()));
    CHECK(eig.eigenvalues().minCoeff() > -1e-3);
    for (int a = 0; a < k; ++a) {
      const double s = sigmoid(z(slice[static_cast<std::size_t>(a)]));
      CHECK(std::abs(hess(a, a) - s * (1.0 - s)) < 1e-3);
    }
  }
}

TEST_CASE("bit order does not matter") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd y = random_target(rng);
    const VectorXd z = 3.0 * VectorXd::NullaryExpr(kFingerprintBits, [&] { return rng.normal(); });
    std::vector<int> perm(kFingerprintBits);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = kFingerprintBits - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    VectorXd yp(kFingerprintBits), zp(kFingerprintBits);
    for (int i = 0; i < kFingerprintBits; ++i) {
      yp(i) = y(perm[static_cast<std::size_t>(i)]);
      zp(i) = z(perm[static_cast<std::size_t>(i)]);
    }
    CHECK(std::abs(csp_loss_from_logits(zp, yp) - csp_loss_from_logits(z, y)) < 1e-9);
  }
}
