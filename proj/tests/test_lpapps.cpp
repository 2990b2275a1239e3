#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "boxip/lpapps.hpp"
#include "boxip/oracles.hpp"
#include "boxip/rng.hpp"

using namespace boxip;
using namespace boxip::lpapps;

namespace {

SpMat from_dense(const Mat& D) {
  SpMat A(D.rows(), D.cols());
  for (Index i = 0; i < D.rows(); ++i)
    for (Index j = 0; j < D.cols(); ++j)
      if (D(i, j) != 0.0) A.insert(i, j) = D(i, j);
  A.makeCompressed();
  return A;
}

ipm::LpInstance box_lp() {
  ipm::LpInstance inst;
  Mat D(2, 1);
  D << 1, 1;
  inst.A = from_dense(D);
  inst.b = Vec::Ones(1);
  inst.c = Vec::Zero(2);
  inst.c[0] = 1.0;
  inst.lower = Vec::Zero(2);
  inst.upper = Vec::Ones(2);
  return inst;
}

ipm::LpInstance random_lp(RngStream& rng, Index m, Index n, int scale) {
  ipm::LpInstance inst;
  Mat D(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      D(i, j) = static_cast<double>(static_cast<int64_t>(rng.next_below(2 * scale + 1)) -
                                    scale);
  // Guard against zero rows and rank deficiency.
  for (Index i = 0; i < m; ++i)
    if (D.row(i).cwiseAbs().maxCoeff() == 0.0) D(i, i % n) = 1.0;
  for (Index j = 0; j < n; ++j) D(j, j) += scale + 1;
  inst.A = from_dense(D);
  inst.c.resize(m);
  inst.lower.resize(m);
  inst.upper.resize(m);
  for (Index i = 0; i < m; ++i) {
    inst.c[i] = static_cast<double>(static_cast<int64_t>(rng.next_below(2 * scale + 1)) -
                                    scale);
    int64_t lo = static_cast<int64_t>(rng.next_below(scale)) - scale;
    inst.lower[i] = static_cast<double>(lo);
    inst.upper[i] = static_cast<double>(lo + 1 + static_cast<int64_t>(rng.next_below(scale)));
  }
  // b from a strictly interior point keeps the instance feasible.
  Vec x(m);
  for (Index i = 0; i < m; ++i) {
    double t = 0.2 + 0.6 * rng.next_double();
    x[i] = inst.lower[i] + t * (inst.upper[i] - inst.lower[i]);
  }
  inst.b = linalg::multiply_transpose(inst.A, x);
  return inst;
}

}  // namespace

TEST_CASE("lp augmentation: exact feasibility, midpoint start, aux bookkeeping") {
  auto inst = box_lp();
  inst.b[0] = 1.7;  // midpoint is infeasible, forcing a nonempty aux block
  auto aug = augment_lp(inst, 1e-5);
  CHECK(aug.lp.rows() > inst.rows());
  Vec resid = linalg::multiply_transpose(aug.lp.A, aug.x_init) - aug.lp.b;
  CHECK(resid.lpNorm<Eigen::Infinity>() < 1e-12);
  // Auxiliary start values are positive after the recorded sign flips.
  for (Index t = aug.original_rows; t < aug.lp.rows(); ++t)
    CHECK(aug.x_init[t] > 0.0);
  // Midpoints on the original block.
  for (Index i = 0; i < aug.original_rows; ++i)
    CHECK(aug.x_init[i] ==
          doctest::Approx(0.5 * (inst.lower[i] + inst.upper[i])).epsilon(1e-12));
}

TEST_CASE("lp initial point is measured centered") {
  auto inst = box_lp();
  inst.b[0] = 1.3;
  auto aug = augment_lp(inst, 1e-5);
  auto params =
      ipm::IpmParams::make(aug.lp.rows(), aug.lp.cols(), 4.0, ipm::Mode::Practical, 7);
  const double eps = params.epsilon / params.c_start;
  auto triple = lp_initial_point(aug, eps, params);
  auto rep =
      ipm::measure_centering(aug.lp, triple.x, triple.s, triple.mu, triple.tau_bar, params);
  CHECK(rep.yinf <= eps);
  CHECK(rep.dual_resid <= 1e-10);
  CHECK((triple.s - aug.lp.c).norm() == 0.0);
}

TEST_CASE("solve_lp: 2-variable box LP reaches the analytic optimum") {
  auto r = solve_lp(box_lp(), 1e-5, {});
  CHECK(r.objective <= 1e-5);
  CHECK(r.objective >= -1e-9);
  CHECK(r.feas_inf <= 1e-5);
  CHECK(r.x[0] >= 0.0);
  CHECK(r.x[1] <= 1.0);
}

TEST_CASE("solve_lp matches the enumeration oracle on random integral LPs") {
  RngStream rng(118);
  int done = 0;
  for (int trial = 0; done < 6 && trial < 12; ++trial) {
    RngStream tr = rng.fork(trial);
    auto inst = random_lp(tr, 9, 3, 4);
    oracles::OracleLp olp{inst.A, inst.b, inst.c, inst.lower, inst.upper};
    oracles::OracleResult oracle;
    try {
      oracle = oracles::enumerate_lp(olp);
    } catch (const Infeasible&) {
      continue;
    }
    SolveConfig cfg;
    cfg.seed = 9000 + trial;
    auto r = solve_lp(inst, 1e-5, cfg);
    CHECK(r.objective <= oracle.value + 1e-5);
    CHECK(r.objective >= oracle.value - 1e-5);
    CHECK(r.feas_inf <= 1e-5);
    ++done;
  }
  CHECK(done >= 4);
}

TEST_CASE("solve_lp: tighter delta tightens the feasibility residual") {
  auto inst = box_lp();
  inst.b[0] = 1.2;
  SolveConfig cfg;
  cfg.seed = 5;
  auto loose = solve_lp(inst, 1e-3, cfg);
  auto tight = solve_lp(inst, 1e-6, cfg);
  CHECK(tight.feas_inf <= 1e-6);
  CHECK(loose.feas_inf <= 1e-3);
}

TEST_CASE("l1 regression: median of three") {
  SpMat A(3, 1);
  for (int i = 0; i < 3; ++i) A.insert(i, 0) = 1.0;
  A.makeCompressed();
  Vec c(3);
  c << -1, -2, -4;
  auto r = solve_l1_regression(A, c, 1e-6, {});
  CHECK(r.value == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(r.z[0] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("l1 regression: exact fit reaches ~zero value") {
  RngStream rng(9);
  Mat D(6, 2);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 2; ++j) D(i, j) = rng.next_gaussian();
  SpMat A = from_dense(D);
  Vec ztrue(2);
  ztrue << 1.5, -0.75;
  Vec c = -(D * ztrue);
  auto r = solve_l1_regression(A, c, 1e-6, {});
  CHECK(r.value <= 1e-6);
}

TEST_CASE("l1 regression matches the subset enumeration oracle") {
  RngStream rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    RngStream tr = rng.fork(trial);
    Index m = 8 + tr.next_below(6);
    Mat D(m, 3);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < 3; ++j) D(i, j) = tr.next_gaussian();
    SpMat A = from_dense(D);
    Vec c(m);
    for (Index i = 0; i < m; ++i) c[i] = 2.0 * tr.next_gaussian();
    auto oracle = oracles::enumerate_l1(A, c);
    SolveConfig cfg;
    cfg.seed = 700 + trial;
    auto r = solve_l1_regression(A, c, 1e-5, cfg);
    CHECK(r.value <= oracle.value + 1e-5);
    // weak duality: the returned value can never beat the oracle optimum
    CHECK(r.value >= oracle.value - 1e-9);
  }
}

TEST_CASE("mdp: one state, two actions") {
  MdpInstance mdp;
  mdp.num_states = 1;
  mdp.num_actions = 2;
  mdp.discount = 0.9;
  mdp.transitions = {{Vec::Ones(1), Vec::Ones(1)}};
  Vec r(2);
  r << 1, 0;
  mdp.rewards = {r};
  auto res = solve_mdp(mdp, 1e-3, {});
  CHECK(res.policy[0] == 0);
  CHECK(res.values[0] == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("mdp: identical rewards make every policy optimal") {
  MdpInstance mdp;
  mdp.num_states = 2;
  mdp.num_actions = 2;
  mdp.discount = 0.5;
  Vec u(2);
  u << 0.5, 0.5;
  mdp.transitions = {{u, u}, {u, u}};
  Vec r(2);
  r << 3, 3;
  mdp.rewards = {r, r};
  auto res = solve_mdp(mdp, 1e-3, {});
  for (double v : res.values) CHECK(v == doctest::Approx(6.0).epsilon(1e-4));
}

TEST_CASE("mdp: random instances are eps-optimal against value iteration") {
  RngStream rng(33);
  for (int trial = 0; trial < 3; ++trial) {
    RngStream tr = rng.fork(trial);
    MdpInstance mdp;
    mdp.num_states = 3;
    mdp.num_actions = 2;
    mdp.discount = 0.8;
    for (int i = 0; i < mdp.num_states; ++i) {
      std::vector<Vec> row;
      Vec rew(mdp.num_actions);
      for (int a = 0; a < mdp.num_actions; ++a) {
        Vec p(mdp.num_states);
        for (int j = 0; j < mdp.num_states; ++j) p[j] = 0.05 + tr.next_double();
        p /= p.sum();
        row.push_back(p);
        rew[a] = 2.0 * tr.next_double() - 1.0;
      }
      mdp.transitions.push_back(row);
      mdp.rewards.push_back(rew);
    }
    oracles::OracleMdp om{mdp.num_states, mdp.num_actions, mdp.transitions, mdp.rewards,
                          mdp.discount};
    auto vi = oracles::value_iteration(om);
    SolveConfig cfg;
    cfg.seed = 40 + trial;
    auto res = solve_mdp(mdp, 1e-3, cfg);
    CHECK((vi.witness - res.values).lpNorm<Eigen::Infinity>() <= 1e-3);
  }
}

TEST_CASE("mdp policy extraction is invariant to uniform reward shifts") {
  MdpInstance mdp;
  mdp.num_states = 2;
  mdp.num_actions = 2;
  mdp.discount = 0.7;
  Vec u(2);
  u << 0.3, 0.7;
  Vec w(2);
  w << 0.9, 0.1;
  mdp.transitions = {{u, w}, {w, u}};
  Vec r0(2), r1(2);
  r0 << 0.4, -0.2;
  r1 << -0.1, 0.6;
  mdp.rewards = {r0, r1};
  auto base = solve_mdp(mdp, 1e-3, {});

  MdpInstance shifted = mdp;
  for (auto& r : shifted.rewards) r.array() += 0.37;
  auto moved = solve_mdp(shifted, 1e-3, {});
  CHECK(base.policy == moved.policy);
  const double shift_value = 0.37 / (1.0 - mdp.discount);
  for (int i = 0; i < 2; ++i)
    CHECK(moved.values[i] == doctest::Approx(base.values[i] + shift_value).epsilon(1e-6));
}

TEST_CASE("mdp validation rejects malformed tables") {
  MdpInstance mdp;
  mdp.num_states = 1;
  mdp.num_actions = 1;
  mdp.discount = 0.9;
  Vec bad(1);
  bad << 0.7;  // does not sum to one
  mdp.transitions = {{bad}};
  mdp.rewards = {Vec::Ones(1)};
  CHECK_THROWS(mdp.validate());
}
