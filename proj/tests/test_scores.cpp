#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "boxip/oracles.hpp"
#include "boxip/rng.hpp"
#include "boxip/scores.hpp"

using namespace boxip;

namespace {

SpMat from_dense(const Mat& D) {
  SpMat A(D.rows(), D.cols());
  for (Index i = 0; i < D.rows(); ++i)
    for (Index j = 0; j < D.cols(); ++j)
      if (D(i, j) != 0.0) A.insert(i, j) = D(i, j);
  A.makeCompressed();
  return A;
}

SpMat small3x2() {
  Mat D(3, 2);
  D << 1, 0, 0, 1, 1, 1;
  return from_dense(D);
}

SpMat random_matrix(Index m, Index n, RngStream& rng) {
  Mat D(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) D(i, j) = rng.next_gaussian();
  return from_dense(D);
}

Vec positive_vec(Index m, RngStream& rng, double lo = 0.3, double span = 1.7) {
  Vec g(m);
  for (Index i = 0; i < m; ++i) g[i] = lo + span * rng.next_double();
  return g;
}

}  // namespace

TEST_CASE("leverage scores: square invertible matrix gives all ones") {
  Mat D(3, 3);
  D << 2, 1, 0, 0, 1, 3, 1, 0, 1;
  SpMat A = from_dense(D);
  RngStream rng(1);
  Vec g = positive_vec(3, rng);
  Vec sigma = scores::leverage_scores(A, g);
  for (Index i = 0; i < 3; ++i) CHECK(sigma[i] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("leverage scores: 3x2 example") {
  Vec sigma = scores::leverage_scores(small3x2(), Vec::Ones(3));
  for (Index i = 0; i < 3; ++i) CHECK(sigma[i] == doctest::Approx(2.0 / 3).epsilon(1e-10));
}

TEST_CASE("leverage scores sum to n and match the dense oracle") {
  RngStream rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    RngStream tr = rng.fork(trial);
    Index n = 2 + tr.next_below(6);
    Index m = n + 1 + tr.next_below(30);
    SpMat A = random_matrix(m, n, tr);
    Vec g = positive_vec(m, tr);
    Vec sigma = scores::leverage_scores(A, g);
    CHECK(std::abs(sigma.sum() - static_cast<double>(n)) < 1e-8);
    Vec ref = oracles::dense_scores(A, g).witness;
    CHECK((sigma - ref).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("sketched leverage scores stay within the advertised factor") {
  RngStream rng(17);
  int good = 0;
  const int trials = 60;
  for (int trial = 0; trial < trials; ++trial) {
    RngStream tr = rng.fork(trial);
    SpMat A = random_matrix(24, 4, tr);
    Vec g = positive_vec(24, tr);
    Vec exact = scores::leverage_scores(A, g);
    Vec approx = scores::leverage_scores(A, g, scores::ScoreMode::sketch(0.3, 900 + trial));
    bool ok = true;
    for (Index i = 0; i < 24; ++i)
      if (std::abs(std::log(approx[i] / exact[i])) > 0.3) ok = false;
    if (ok) ++good;
  }
  CHECK(good >= trials - 3);
}

TEST_CASE("leverage scores reject rank-deficient scalings") {
  SpMat A = small3x2();
  Vec g(3);
  g << 1.0, 0.0, 0.0;  // second column vanishes
  CHECK_THROWS_AS(scores::leverage_scores(A, g), SingularSystem);
}

TEST_CASE("lewis fixed point: p = 2 is scores plus regularizer") {
  SpMat A = small3x2();
  Vec z = Vec::Constant(3, 2.0 / 3);
  Vec w = scores::lewis_fixed_point(A, Vec::Ones(3), z, 2.0, 1e-12);
  Vec sigma = scores::leverage_scores(A, Vec::Ones(3));
  CHECK((w - (sigma + z)).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("lewis fixed point: square invertible gives 1 + z") {
  Mat D(3, 3);
  D << 1, 2, 0, 0, 1, 1, 3, 0, 1;
  SpMat A = from_dense(D);
  RngStream rng(3);
  Vec g = positive_vec(3, rng);
  Vec z = Vec::Constant(3, 1.0);
  for (double p : {0.5, 1.0, 1.5}) {
    Vec w = scores::lewis_fixed_point(A, g, z, p, 1e-10);
    for (Index i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(2.0).epsilon(1e-8));
  }
}

TEST_CASE("lewis fixed point: m = 3, p = 1 matches the long-iteration oracle") {
  SpMat A = small3x2();
  Vec z = Vec::Constant(3, 2.0 / 3);
  Vec w = scores::lewis_fixed_point(A, Vec::Ones(3), z, 1.0, 1e-9);
  Vec ref = oracles::dense_lewis(A, Vec::Ones(3), z, 1.0).witness;
  CHECK((w.array().log() - ref.array().log()).abs().maxCoeff() < 1e-8);
}

TEST_CASE("lewis fixed point: mass identity and residual on random instances") {
  RngStream rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    RngStream tr = rng.fork(trial);
    Index n = 2 + tr.next_below(8);
    Index m = n + 2 + tr.next_below(50);
    SpMat A = random_matrix(m, n, tr);
    Vec g = positive_vec(m, tr);
    Vec z = Vec::Constant(m, static_cast<double>(n) / m);
    double alpha = 1.0 / (4.0 * std::log(4.0 * static_cast<double>(m) / n));
    for (double p : {0.5, 1.0 - alpha, 1.5}) {
      Vec w = scores::lewis_fixed_point(A, g, z, p, 1e-7);
      CHECK(scores::lewis_residual(A, g, z, p, w) <= 1e-6);
      double mass = w.lpNorm<1>();
      double want = static_cast<double>(n) + z.lpNorm<1>();
      CHECK(std::abs(mass - want) / want < 1e-6);
    }
  }
}

TEST_CASE("one contraction step shrinks the log-scale residual by 1 - p/2") {
  RngStream rng(57);
  for (int trial = 0; trial < 30; ++trial) {
    RngStream tr = rng.fork(trial);
    Index n = 2 + tr.next_below(5);
    Index m = n + 2 + tr.next_below(40);
    SpMat A = random_matrix(m, n, tr);
    Vec g = positive_vec(m, tr);
    Vec z = Vec::Constant(m, static_cast<double>(n) / m);
    for (double p : {0.5, 1.0, 1.5}) {
      Vec wstar = scores::lewis_fixed_point(A, g, z, p, 1e-12);
      Vec w = wstar;
      for (Index i = 0; i < m; ++i)
        w[i] *= std::exp(0.05 * (tr.next_double() * 2.0 - 1.0));
      double before = scores::lewis_residual(A, g, z, p, w);
      Vec scale = w.array().pow(0.5 - 1.0 / p) * g.array();
      Vec target = scores::leverage_scores(A, scale) + z;
      Vec w2 = (w.array().pow(2.0 / p - 1.0) * target.array()).pow(p / 2.0);
      double after = scores::lewis_residual(A, g, z, p, w2);
      CHECK(after <= (1.0 - p / 2.0) * before + 1e-3 * before + 1e-12);
    }
  }
}

TEST_CASE("scale stability: g' within e of g moves the weights at most e^4") {
  RngStream rng(71);
  SpMat A = random_matrix(20, 4, rng);
  Vec g = positive_vec(20, rng);
  Vec z = Vec::Constant(20, 4.0 / 20);
  const double p = 1.0;
  Vec w1 = scores::lewis_fixed_point(A, g, z, p, 1e-10);
  const double e = 0.05;
  Vec g2 = g;
  for (Index i = 0; i < 20; ++i) g2[i] *= std::exp(e * (rng.next_double() * 2.0 - 1.0));
  Vec w2 = scores::lewis_fixed_point(A, g2, z, p, 1e-10);
  double move = (w1.array().log() - w2.array().log()).abs().maxCoeff();
  CHECK(move <= 4.0 * e + 1e-6);
}

TEST_CASE("lewis maintenance: init residual, scale invariance, query contract") {
  RngStream rng(101);
  SpMat A = random_matrix(18, 3, rng);
  Vec g = positive_vec(18, rng);
  Vec z = Vec::Constant(18, 3.0 / 18);
  scores::LewisState::Config cfg;
  cfg.p = 1.0;
  cfg.eps = 1e-3;
  cfg.delta = 2.0;

  scores::LewisState st(A, g, z, cfg);
  CHECK(st.residual() <= cfg.eps);
  CHECK(st.level_count() >= 2);

  // Global rescaling leaves the weights unchanged.
  scores::LewisState st2(A, Vec(3.0 * g), z, cfg);
  CHECK((st.weights().array().log() - st2.weights().array().log()).abs().maxCoeff() < 1e-6);

  SUBCASE("no scaling between queries changes nothing") {
    Vec before = st.weights();
    auto q = st.query();
    CHECK(q.changed.empty());
    CHECK((st.weights() - before).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("tiny drift keeps the residual") {
    st.scale(2, g[2] * std::exp(cfg.eps / 100.0));
    st.query();
    CHECK(st.residual() <= cfg.eps);
  }

  SUBCASE("large practical-mode drift reconverges to the fixed point") {
    for (Index i = 0; i < 18; ++i) st.scale(i, g[i] * 3.0);
    st.query();
    CHECK(st.residual() <= cfg.eps);
    Vec ref = scores::lewis_fixed_point(A, Vec(3.0 * g), z, cfg.p, cfg.eps / 2.0);
    double gap = (st.weights().array().log() - ref.array().log()).abs().maxCoeff();
    CHECK(gap <= 2.0 * cfg.eps);
  }
}

TEST_CASE("lewis maintenance matches the fixed point along a random walk") {
  RngStream rng(202);
  SpMat A = random_matrix(14, 3, rng);
  Vec g = positive_vec(14, rng);
  Vec z = Vec::Constant(14, 3.0 / 14);
  scores::LewisState::Config cfg;
  cfg.p = 0.8;
  cfg.eps = 5e-4;
  cfg.delta = 2.0;
  scores::LewisState st(A, g, z, cfg);
  for (int step = 0; step < 12; ++step) {
    Index i = static_cast<Index>(rng.next_below(14));
    g[i] *= std::exp((rng.next_double() * 2.0 - 1.0) * cfg.eps);
    st.scale(i, g[i]);
    st.query();
    CHECK(st.residual() <= cfg.eps);
    Vec ref = scores::lewis_fixed_point(A, g, z, cfg.p, 1e-10);
    double gap = (st.weights().array().log() - ref.array().log()).abs().maxCoeff();
    CHECK(gap <= cfg.eps * 1.01);  // residual eps implies factor e^eps of exact
  }
}

TEST_CASE("theory-mode drift diagnostic") {
  RngStream rng(303);
  SpMat A = random_matrix(10, 2, rng);
  Vec g = positive_vec(10, rng);
  Vec z = Vec::Constant(10, 2.0 / 10);
  scores::LewisState::Config cfg;
  cfg.p = 1.0;
  cfg.eps = 1e-3;
  cfg.delta = 2.0;
  cfg.practical = false;
  scores::LewisState st(A, g, z, cfg);
  st.scale(0, g[0] * std::exp(10.0 * cfg.delta * cfg.eps));
  CHECK_THROWS_AS(st.query(), DriftTooLarge);
}

TEST_CASE("regularizer validation") {
  CHECK_THROWS(scores::validate_regularizer(Vec::Constant(4, 0.01), 4, 2));
  CHECK_THROWS(scores::validate_regularizer(Vec::Constant(4, 10.0), 4, 2));
  CHECK_NOTHROW(scores::validate_regularizer(Vec::Constant(4, 0.5), 4, 2));
}
