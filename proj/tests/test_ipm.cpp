#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "boxip/ipm.hpp"
#include "boxip/oracles.hpp"
#include "boxip/rng.hpp"

using namespace boxip;
using namespace boxip::ipm;

namespace {

SpMat from_dense(const Mat& D) {
  SpMat A(D.rows(), D.cols());
  for (Index i = 0; i < D.rows(); ++i)
    for (Index j = 0; j < D.cols(); ++j)
      if (D(i, j) != 0.0) A.insert(i, j) = D(i, j);
  A.makeCompressed();
  return A;
}

SpMat random_matrix(Index m, Index n, RngStream& rng) {
  Mat D(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) D(i, j) = rng.next_gaussian();
  return from_dense(D);
}

/// Box LP with random bounds, b chosen so the start is exactly feasible,
/// and costs set to make (x, s, mu) exactly y-centered for a chosen y.
struct CenteredFixture {
  LpInstance inst;
  CenteredTriple state;
  IpmParams params;
};

CenteredFixture make_centered(Index m, Index n, double yscale, uint64_t seed,
                              Mode mode = Mode::Theory) {
  RngStream rng(seed);
  CenteredFixture fx;
  fx.inst.A = random_matrix(m, n, rng);
  fx.inst.lower.resize(m);
  fx.inst.upper.resize(m);
  for (Index i = 0; i < m; ++i) {
    double c = rng.next_gaussian();
    double w = 0.5 + 2.0 * rng.next_double();
    fx.inst.lower[i] = c - w;
    fx.inst.upper[i] = c + w;
  }
  Vec x = 0.5 * (fx.inst.lower + fx.inst.upper);
  // jitter keeps phi' nonzero but safely interior
  for (Index i = 0; i < m; ++i)
    x[i] += 0.2 * (fx.inst.upper[i] - fx.inst.lower[i]) * (rng.next_double() - 0.5);
  fx.inst.b = linalg::multiply_transpose(fx.inst.A, x);

  fx.params = IpmParams::make(m, n, 4.0, mode, seed);
  Vec tau = tau_weights({fx.inst.A, fx.inst.b, Vec::Zero(m), fx.inst.lower, fx.inst.upper},
                        x, fx.params.p, 1e-10);
  const double mu = 1.0;
  Vec phi1(m), phi2(m);
  for (Index i = 0; i < m; ++i) {
    auto d = barrier_derivs(x[i], fx.inst.lower[i], fx.inst.upper[i]);
    phi1[i] = d.d1;
    phi2[i] = d.d2;
  }
  Vec y(m);
  for (Index i = 0; i < m; ++i)
    y[i] = yscale * fx.params.epsilon * (2.0 * rng.next_double() - 1.0);
  Vec s(m);
  for (Index i = 0; i < m; ++i)
    s[i] = mu * tau[i] * (y[i] * std::sqrt(phi2[i]) - phi1[i]);
  fx.inst.c = s;  // dual feasibility with z = 0
  fx.inst.validate();

  fx.state = CenteredTriple::from_exact(fx.inst, x, s, mu);
  fx.state.tau_bar = tau;
  return fx;
}

}  // namespace

TEST_CASE("barrier derivatives: closed forms") {
  auto d = barrier_derivs(1.0, 0.0, 2.0);
  CHECK(d.d1 == 0.0);  // exact zero at a representable midpoint
  CHECK(d.d2 == 2.0);
  CHECK(d.d3 == 0.0);
  CHECK(d.d4 == 12.0);
  CHECK_THROWS_AS(barrier_derivs(0.0, 0.0, 2.0), OutOfDomain);
  CHECK_THROWS_AS(barrier_derivs(2.5, 0.0, 2.0), OutOfDomain);
}

TEST_CASE("barrier: midpoint of integer bounds has exactly zero slope") {
  RngStream rng(2);
  for (int k = 0; k < 200; ++k) {
    double lo = static_cast<double>(static_cast<int>(rng.next_below(100)) - 50);
    double hi = lo + 1.0 + static_cast<double>(rng.next_below(60));
    auto d = barrier_derivs((lo + hi) / 2.0, lo, hi);
    CHECK(d.d1 == 0.0);
  }
}

TEST_CASE("barrier satisfies the high self-concordance inequalities on a grid") {
  RngStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    double lo = rng.next_gaussian() * 3.0;
    double hi = lo + 0.1 + 4.0 * rng.next_double();
    for (int k = 1; k < 100; ++k) {
      double x = lo + (hi - lo) * k / 100.0;
      auto d = barrier_derivs(x, lo, hi);
      CHECK(std::abs(d.d1) <= std::sqrt(d.d2) * (1 + 1e-12));
      CHECK(std::abs(d.d3) <= 2.0 * std::pow(d.d2, 1.5) * (1 + 1e-12));
      CHECK(std::abs(d.d4) <= 6.0 * d.d2 * d.d2 * (1 + 1e-12));
    }
  }
}

TEST_CASE("flat operator: single active coordinate closed form") {
  const double c_norm = 25.0;
  Vec g = Vec::Zero(4);
  g[0] = 3.0;
  Vec tau(4);
  tau << 0.7, 0.2, 0.4, 0.9;
  Vec h = flat_operator(g, tau, c_norm);
  const double t = 1.0 / (1.0 + c_norm * std::sqrt(tau[0]));
  CHECK(h[0] == doctest::Approx(t).epsilon(1e-9));
  for (Index i = 1; i < 4; ++i) CHECK(h[i] == 0.0);
  CHECK(dual_tau_inf_norm(g, tau, c_norm) == doctest::Approx(3.0 * t).epsilon(1e-9));
}

TEST_CASE("flat operator: symmetric input splits by the budget equation") {
  const double c_norm = 10.0;
  Vec g(3), tau(3);
  g << 2.0, -2.0, 2.0;
  tau << 0.5, 0.5, 0.5;
  Vec h = flat_operator(g, tau, c_norm);
  // all |g_i|/tau_i equal: h = t * sign(g)
  CHECK(h[0] == doctest::Approx(-h[1]).epsilon(1e-12));
  CHECK(h[0] == doctest::Approx(h[2]).epsilon(1e-12));
  const double t = 1.0 / (1.0 + c_norm * std::sqrt(1.5));
  CHECK(std::abs(h[0]) == doctest::Approx(t).epsilon(1e-9));
}

TEST_CASE("flat operator: zero gradient returns zero") {
  Vec h = flat_operator(Vec::Zero(3), Vec::Ones(3), 5.0);
  CHECK(h.norm() == 0.0);
}

TEST_CASE("flat operator: budget identity and oracle optimality on random inputs") {
  RngStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    RngStream tr = rng.fork(trial);
    Index m = 2 + tr.next_below(9);
    Vec g(m), tau(m);
    for (Index i = 0; i < m; ++i) {
      g[i] = tr.next_gaussian();
      tau[i] = 0.05 + 1.5 * tr.next_double();
    }
    if (g.lpNorm<Eigen::Infinity>() == 0.0) continue;
    double c_norm = 2.0 + 40.0 * tr.next_double();
    Vec h = flat_operator(g, tau, c_norm);

    double tn = 0.0;
    for (Index i = 0; i < m; ++i) tn += tau[i] * h[i] * h[i];
    double budget = h.lpNorm<Eigen::Infinity>() + c_norm * std::sqrt(tn);
    CHECK(std::abs(budget - 1.0) <= 1e-9);

    auto oracle = oracles::maximize_tau_inf_ball(g, tau, c_norm);
    CHECK(g.dot(h) >= oracle.value - 1e-6 * (1.0 + std::abs(oracle.value)));
  }
}

TEST_CASE("potential: exact center, single coordinate, and bound") {
  RngStream rng(7);
  const Index m = 12, n = 3;
  auto fx = make_centered(m, n, 0.0, 99);
  auto pot = potential(fx.inst, fx.state.x, fx.state.s, fx.state.mu, fx.state.tau_bar,
                       fx.params.lambda);
  CHECK(pot.value == doctest::Approx(static_cast<double>(m)).epsilon(1e-9));
  CHECK(pot.y.cwiseAbs().maxCoeff() < 1e-12);

  // y_1 = 1/lambda, rest zero: Psi = (m-1) + cosh(1).
  Vec s2 = fx.state.s;
  Vec phi2 = barrier_d2(fx.inst, fx.state.x);
  s2[0] += fx.state.mu * fx.state.tau_bar[0] * std::sqrt(phi2[0]) / fx.params.lambda;
  auto pot2 = potential(fx.inst, fx.state.x, s2, fx.state.mu, fx.state.tau_bar,
                        fx.params.lambda);
  CHECK(pot2.value ==
        doctest::Approx(static_cast<double>(m - 1) + std::cosh(1.0)).epsilon(1e-9));

  // ||y||_inf <= eps with lambda * eps <= ln m implies Psi <= m^2.
  const double lam = std::log(static_cast<double>(m)) / fx.params.epsilon;
  Vec s3 = fx.state.s;
  for (Index i = 0; i < m; ++i)
    s3[i] += fx.state.mu * fx.state.tau_bar[i] * std::sqrt(phi2[i]) * fx.params.epsilon *
             (2.0 * rng.next_double() - 1.0);
  auto pot3 = potential(fx.inst, fx.state.x, s3, fx.state.mu, fx.state.tau_bar, lam);
  CHECK(pot3.value <= static_cast<double>(m) * m);
}

TEST_CASE("potential: log-space guard for extreme arguments") {
  auto fx = make_centered(6, 2, 0.0, 17);
  Vec phi2 = barrier_d2(fx.inst, fx.state.x);
  Vec s = fx.state.s;
  s[0] += fx.state.mu * fx.state.tau_bar[0] * std::sqrt(phi2[0]) * 600.0 / fx.params.lambda;
  auto pot = potential(fx.inst, fx.state.x, s, fx.state.mu, fx.state.tau_bar,
                       fx.params.lambda);
  CHECK(std::isfinite(pot.log_value));
  CHECK(pot.log_value == doctest::Approx(600.0 - std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("tau weights: square invertible gives 1 + z") {
  Mat D(3, 3);
  D << 2, 0, 1, 1, 1, 0, 0, 1, 3;
  LpInstance inst;
  inst.A = from_dense(D);
  inst.lower = Vec::Zero(3);
  inst.upper = Vec::Ones(3);
  inst.c = Vec::Zero(3);
  inst.b = Vec::Zero(3);
  Vec x = Vec::Constant(3, 0.3);
  Vec z = default_regularizer(inst.A);
  Vec tau = tau_weights(inst, x, 0.9, 1e-10);
  for (Index i = 0; i < 3; ++i)
    CHECK(tau[i] == doctest::Approx(1.0 + z[i]).epsilon(1e-8));
}

TEST_CASE("tau weights: invariant under uniform bound scaling") {
  RngStream rng(23);
  LpInstance inst;
  inst.A = random_matrix(9, 3, rng);
  inst.lower = -Vec::Ones(9);
  inst.upper = Vec::Ones(9);
  inst.b = Vec::Zero(3);
  inst.c = Vec::Zero(9);
  Vec x = Vec::Constant(9, 0.1);
  Vec tau1 = tau_weights(inst, x, 0.875, 1e-10);

  LpInstance wide = inst;
  wide.lower *= 7.0;
  wide.upper *= 7.0;
  Vec tau2 = tau_weights(wide, Vec(7.0 * x), 0.875, 1e-10);
  CHECK((tau1.array().log() - tau2.array().log()).abs().maxCoeff() < 1e-8);
}

TEST_CASE("derived parameters follow the closed formulas") {
  auto p = IpmParams::make(45, 10, 4.0, Mode::Theory, 0);
  const double alpha = 1.0 / (4.0 * std::log(4.0 * 45.0 / 10.0));
  CHECK(p.alpha == doctest::Approx(alpha));
  CHECK(p.p == doctest::Approx(1.0 - alpha));
  const double eps = std::min(alpha / 4.0, 1.0 / 80.0);
  CHECK(p.epsilon == doctest::Approx(eps));
  CHECK(p.lambda == doctest::Approx(4.0 * std::log(4.0 * 45.0 / (eps * eps)) / eps));
  CHECK(p.gamma == doctest::Approx(eps / (4.0 * p.lambda)));
  CHECK(p.c_norm == doctest::Approx(4.0 / alpha));
  CHECK(p.r == doctest::Approx(eps * p.gamma / (p.c_norm * std::sqrt(10.0))));

  // Practical mode keeps lambda at its centering floor: Psi <= m^2 still
  // certifies eps-centering, every other derived quantity follows the same
  // formulas from that lambda.
  auto q = IpmParams::make(45, 10, 4.0, Mode::Practical, 0);
  CHECK(q.lambda == doctest::Approx(1.2 * std::log(2.0 * 45.0 * 45.0) / eps));
  CHECK(std::cosh(q.lambda * q.epsilon) > 45.0 * 45.0);
  CHECK(q.gamma == doctest::Approx(eps / (4.0 * q.lambda)));
  CHECK(q.r == doctest::Approx(eps * q.gamma / (q.c_norm * std::sqrt(10.0))));
}

TEST_CASE("short step: exactly central state with mu unchanged is a fixed point") {
  auto fx = make_centered(14, 4, 0.0, 31, Mode::Theory);
  Backends backends(fx.inst, fx.params);
  Vec x0 = fx.state.x, s0 = fx.state.s;
  short_step(fx.inst, fx.state, fx.state.mu, fx.params, backends);
  CHECK((fx.state.x - x0).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK((fx.state.s - s0).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("short step: theory-mode potential stays controlled over seeds") {
  int good = 0;
  const int seeds = 100;
  for (int seed = 0; seed < seeds; ++seed) {
    auto fx = make_centered(40, 8, 0.5, 1000 + seed, Mode::Theory);
    Backends backends(fx.inst, fx.params);
    auto before = potential(fx.inst, fx.state.x, fx.state.s, fx.state.mu, fx.state.tau_bar,
                            fx.params.lambda);
    double mu_new = (1.0 - fx.params.r) * fx.state.mu;
    short_step(fx.inst, fx.state, mu_new, fx.params, backends);
    auto after = potential(fx.inst, fx.state.x, fx.state.s, fx.state.mu, fx.state.tau_bar,
                           fx.params.lambda);
    if (after.value <= before.value + 40.0) ++good;
  }
  CHECK(good >= 95);
}

TEST_CASE("short step: identity sampler restores exact feasibility") {
  auto fx = make_centered(20, 5, 0.4, 77, Mode::Theory);
  fx.params.sampler = SamplerKind::Identity;
  Backends backends(fx.inst, fx.params);
  // perturb x off the affine subspace slightly, within the feasibility slack
  fx.state.x[0] += 1e-7;
  fx.state.delta = linalg::multiply_transpose(fx.inst.A, fx.state.x) - fx.inst.b;
  double feas0 = fx.state.delta.norm();
  CHECK(feas0 > 0.0);
  short_step(fx.inst, fx.state, fx.state.mu * (1 - fx.params.r), fx.params, backends);
  CHECK(fx.state.delta.norm() < 1e-10 + 1e-6 * feas0);
}

TEST_CASE("measured centering and invariants hold along a practical run") {
  auto fx = make_centered(16, 4, 0.1, 55, Mode::Practical);
  Backends backends(fx.inst, fx.params);
  std::vector<StepRecord> recs;
  auto cb = [&](const StepRecord& r) { recs.push_back(r); };
  const double m2 = 16.0 * 16.0;
  auto out = path_following(fx.inst, fx.state, fx.state.mu * 1e-4, fx.params, backends, cb);
  CHECK(out.mu <= fx.state.mu * 1e-4 * (1 + 1e-9));
  REQUIRE(!recs.empty());
  for (const auto& r : recs) {
    CHECK(r.yinf_certified <= fx.params.epsilon);
    CHECK(r.psi <= m2);
    CHECK(r.invar_x <= fx.params.epsilon);
    CHECK(r.invar_tau <= fx.params.epsilon);
    CHECK(r.dual_resid <= 1e-8);
    CHECK(r.feas <= fx.params.epsilon * fx.params.gamma / fx.params.c_norm);
  }
}

TEST_CASE("path following solves the 2-variable box LP") {
  LpInstance inst;
  Mat D(2, 1);
  D << 1, 1;
  inst.A = from_dense(D);
  inst.b = Vec::Ones(1);
  inst.c = Vec::Zero(2);
  inst.c[0] = 1.0;
  inst.lower = Vec::Zero(2);
  inst.upper = Vec::Ones(2);

  auto params = IpmParams::make(2, 1, 4.0, Mode::Practical, 3);
  CenteredTriple st = CenteredTriple::from_exact(inst, Vec::Constant(2, 0.5), inst.c, 5000.0);
  st.tau_bar = tau_weights(inst, st.x, params.p, 1e-8);
  auto rep = measure_centering(inst, st.x, st.s, st.mu, st.tau_bar, params);
  REQUIRE(rep.yinf <= params.epsilon / params.c_start);

  Backends backends(inst, params);
  const double mu_final = 1e-9;
  auto out = path_following(inst, st, mu_final, params, backends);
  auto [xf, sf] = final_point(inst, out);
  CHECK(inst.c.dot(xf) <= 1e-6);
  CHECK(std::abs(xf[0] + xf[1] - 1.0) < 1e-9);

  // mu_final = mu_init returns the state unchanged
  auto same = path_following(inst, out, out.mu, params, backends);
  CHECK(same.x == out.x);
}

TEST_CASE("final point: feasible iterate is unchanged, perturbed one is restored") {
  auto fx = make_centered(12, 3, 0.2, 91);
  auto [xf, sf] = final_point(fx.inst, fx.state);
  CHECK((xf - fx.state.x).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(sf == fx.state.s);

  CenteredTriple pert = fx.state;
  RngStream rng(13);
  Vec noise(12);
  for (Index i = 0; i < 12; ++i) noise[i] = 1e-4 * rng.next_gaussian();
  pert.x += noise;
  auto [xr, sr] = final_point(fx.inst, pert);
  CHECK((linalg::multiply_transpose(fx.inst.A, xr) - fx.inst.b).lpNorm<Eigen::Infinity>() <
        1e-8);
}

TEST_CASE("theory mode rejects mu steps beyond r * mu") {
  auto fx = make_centered(10, 3, 0.1, 41, Mode::Theory);
  Backends backends(fx.inst, fx.params);
  CHECK_THROWS(short_step(fx.inst, fx.state, fx.state.mu * 0.5, fx.params, backends));
}
