#include "boxip/lpapps.hpp"

#include <algorithm>
#include <cmath>

namespace boxip::lpapps {

namespace {

double data_bound(const ipm::LpInstance& inst) {
  double w = 1.0;
  for (Index i = 0; i < inst.A.rows(); ++i)
    for (SpMat::InnerIterator it(inst.A, i); it; ++it) w = std::max(w, std::abs(it.value()));
  w = std::max(w, inst.b.cwiseAbs().maxCoeff());
  w = std::max(w, inst.lower.cwiseAbs().maxCoeff());
  w = std::max(w, inst.upper.cwiseAbs().maxCoeff());
  return w;
}

}  // namespace

AugmentedLp augment_lp(const ipm::LpInstance& inst, double delta) {
  inst.validate();
  if (!(delta > 0.0)) throw Error("augment_lp: delta must be positive");
  const Index m = inst.rows(), n = inst.cols();
  AugmentedLp aug;
  aug.original_rows = m;
  aug.xi = (inst.upper - inst.lower).maxCoeff();
  const double W = data_bound(inst);
  aug.delta_prime = delta / (10.0 * static_cast<double>(m) * W * W);
  const double cost_mass = std::max(inst.c.lpNorm<1>(), 1.0);
  aug.penalty = 2.0 * cost_mass / aug.delta_prime;

  Vec x_mid = 0.5 * (inst.lower + inst.upper);
  Vec resid = inst.b - linalg::multiply_transpose(inst.A, x_mid);
  aug.beta = resid.lpNorm<Eigen::Infinity>() / aug.xi;
  if (aug.beta == 0.0) aug.beta = 1.0;  // already feasible; block drops entirely

  for (Index j = 0; j < n; ++j) {
    const double v = resid[j] / aug.beta;
    if (v == 0.0) continue;  // zero-excess auxiliary removed
    aug.aux_cols.push_back(j);
    aug.aux_sign.push_back(v > 0.0 ? 1.0 : -1.0);
  }
  const Index ma = static_cast<Index>(aug.aux_cols.size());

  std::vector<Eigen::Triplet<double>> trips;
  for (Index i = 0; i < m; ++i)
    for (SpMat::InnerIterator it(inst.A, i); it; ++it)
      trips.emplace_back(i, it.col(), it.value());
  Vec cost(m + ma), lower(m + ma), upper(m + ma);
  cost.head(m) = inst.c;
  lower.head(m) = inst.lower;
  upper.head(m) = inst.upper;
  aug.x_init.resize(m + ma);
  aug.x_init.head(m) = x_mid;
  for (Index t = 0; t < ma; ++t) {
    const Index j = aug.aux_cols[t];
    trips.emplace_back(m + t, j, aug.beta * aug.aux_sign[t]);
    const double xt = std::abs(resid[j]) / aug.beta;  // sign-flipped to be positive
    aug.x_init[m + t] = xt;
    lower[m + t] = -aug.xi;
    upper[m + t] = 2.0 * xt + aug.xi;
    cost[m + t] = aug.penalty;
  }
  SpMat A(m + ma, n);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  aug.lp = {std::move(A), inst.b, std::move(cost), std::move(lower), std::move(upper)};
  aug.lp.validate();

  Vec feas = linalg::multiply_transpose(aug.lp.A, aug.x_init) - aug.lp.b;
  if (feas.lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + inst.b.cwiseAbs().maxCoeff()))
    throw Error("identity-block augmentation is not exactly feasible");
  return aug;
}

ipm::CenteredTriple lp_initial_point(const AugmentedLp& aug, double eps,
                                     const ipm::IpmParams& params) {
  const Index m = aug.lp.rows();
  Vec tau = ipm::tau_weights(aug.lp, aug.x_init, params.p,
                             params.tau_tol());
  const double cost_mass = std::max(aug.lp.c.head(aug.original_rows).lpNorm<1>(), 1.0);
  double needed = 0.0;
  Vec phi2 = ipm::barrier_d2(aug.lp, aug.x_init);
  Vec phi1 = ipm::barrier_d1(aug.lp, aug.x_init);
  for (Index i = 0; i < m; ++i)
    needed = std::max(needed, std::abs(aug.lp.c[i]) / (tau[i] * std::sqrt(phi2[i])) +
                                  std::abs(phi1[i]) / std::sqrt(phi2[i]));
  const double mu0 =
      std::max(8.0 * static_cast<double>(m) * cost_mass * aug.xi / (eps * aug.delta_prime),
               2.0 * needed / eps);
  auto triple = ipm::CenteredTriple::from_exact(aug.lp, aug.x_init, aug.lp.c, mu0);
  triple.tau_bar = std::move(tau);
  auto rep =
      ipm::measure_centering(aug.lp, triple.x, triple.s, triple.mu, triple.tau_bar, params);
  if (rep.yinf > eps || rep.dual_resid > 1e-8)
    throw CenteringCheckFailed("lp initial point is not eps-centered: ||y|| = " +
                               std::to_string(rep.yinf));
  return triple;
}

LpResult solve_lp(const ipm::LpInstance& inst, double delta, const SolveConfig& cfg) {
  AugmentedLp aug = augment_lp(inst, delta);
  auto params = ipm::IpmParams::make(aug.lp.rows(), aug.lp.cols(), cfg.C, cfg.mode, cfg.seed);
  params.sampler = cfg.sampler;
  params.tau_backend = cfg.tau_backend;
  const double eps_start = params.epsilon / params.c_start;
  auto triple = lp_initial_point(aug, eps_start, params);

  const double cost_mass = std::max(inst.c.lpNorm<1>(), 1.0);
  const double mu_target =
      aug.delta_prime * cost_mass * aug.xi / (params.C * static_cast<double>(aug.lp.cols()));

  ipm::Backends backends(aug.lp, params);
  auto state = ipm::path_following(aug.lp, triple, mu_target, params, backends, cfg.progress);
  auto [xf, sf] = ipm::final_point(aug.lp, state);

  LpResult out;
  out.x = xf.head(aug.original_rows);
  out.objective = inst.c.dot(out.x);
  out.feas_inf = (linalg::multiply_transpose(inst.A, out.x) - inst.b).lpNorm<Eigen::Infinity>();
  for (Index t = aug.original_rows; t < aug.lp.rows(); ++t)
    if (std::abs(xf[t]) > aug.delta_prime * aug.xi) out.aux_clean = false;
  if (!out.aux_clean)
    throw Infeasible("auxiliary block did not vanish; instance is likely infeasible");
  return out;
}

L1Result solve_l1_regression(const SpMat& A, const Vec& c, double delta,
                             const SolveConfig& cfg) {
  if (A.rows() != c.size()) throw Error("l1 regression: dimension mismatch");
  if (!(delta > 0.0)) throw Error("l1 regression: delta must be positive");
  const Index m = A.rows(), n = A.cols();

  ipm::LpInstance box;
  box.A = A;
  box.b = Vec::Zero(n);
  box.c = c;
  box.lower = Vec::Constant(m, -1.0);
  box.upper = Vec::Constant(m, 1.0);
  box.validate();

  auto params = ipm::IpmParams::make(m, n, cfg.C, cfg.mode, cfg.seed);
  params.sampler = cfg.sampler;
  params.tau_backend = cfg.tau_backend;
  const double eps_start = params.epsilon / params.c_start;

  const double cmax = std::max(c.cwiseAbs().maxCoeff(), 1e-300);
  const double mu0 = cmax * static_cast<double>(m) / (static_cast<double>(n) * eps_start);
  auto triple = ipm::CenteredTriple::from_exact(box, Vec::Zero(m), c, mu0);
  triple.tau_bar = ipm::tau_weights(box, triple.x, params.p,
                                    params.tau_tol());
  auto rep = ipm::measure_centering(box, triple.x, triple.s, triple.mu, triple.tau_bar, params);
  if (rep.yinf > eps_start)
    throw CenteringCheckFailed("l1 initial point is not centered");

  const double mu_target = delta / (params.C * static_cast<double>(n));
  ipm::Backends backends(box, params);
  auto state = ipm::path_following(box, triple, mu_target, params, backends, cfg.progress);
  auto [xf, sf] = ipm::final_point(box, state);

  linalg::NormalOperator gram(A, Vec::Ones(m));
  L1Result out;
  out.z = gram.solve(linalg::multiply_transpose(A, sf - c));
  Vec fit(m);
  for (Index i = 0; i < m; ++i) {
    double acc = 0.0;
    for (SpMat::InnerIterator it(A, i); it; ++it) acc += it.value() * out.z[it.col()];
    fit[i] = acc + c[i];
  }
  out.value = fit.lpNorm<1>();
  return out;
}

void MdpInstance::validate() const {
  if (num_states < 1 || num_actions < 1) throw Error("MDP needs states and actions");
  if (!(discount > 0.0 && discount < 1.0)) throw Error("discount must be in (0,1)");
  if (static_cast<int>(transitions.size()) != num_states ||
      static_cast<int>(rewards.size()) != num_states)
    throw Error("MDP tables have wrong shape");
  for (int i = 0; i < num_states; ++i) {
    if (static_cast<int>(transitions[i].size()) != num_actions ||
        rewards[i].size() != num_actions)
      throw Error("MDP tables have wrong shape");
    for (int a = 0; a < num_actions; ++a) {
      const Vec& p = transitions[i][a];
      if (p.size() != num_states) throw Error("transition row has wrong length");
      if (p.minCoeff() < -1e-15) throw Error("negative transition probability");
      if (std::abs(p.sum() - 1.0) > 1e-12) throw Error("transition row does not sum to 1");
    }
  }
}

MdpResult solve_mdp(const MdpInstance& mdp, double eps, const SolveConfig& cfg) {
  mdp.validate();
  if (!(eps > 0.0)) throw Error("solve_mdp: eps must be positive");
  const int S = mdp.num_states, A = mdp.num_actions;
  const double gamma = mdp.discount;
  double M = 1e-9;
  for (int i = 0; i < S; ++i) M = std::max(M, mdp.rewards[i].cwiseAbs().maxCoeff());

  const double eps2 = eps * (1.0 - gamma) * (1.0 - gamma) / (8.0 * S);
  const double alpha = eps2 * (1.0 - gamma) * (1.0 - gamma) / (4.0 * S * M * M);
  double eps3 = std::min(alpha * eps2, eps2 * (1.0 - gamma) / (2.0 * M));
  if (cfg.mode == ipm::Mode::Practical) eps3 = std::max(eps3, 1e-9);

  // l1 instance rows: two copies of S^{-1}(E - gamma P) against b -+ s,
  // plus the anchoring alpha * 1^T row.
  const Index rows = 2 * static_cast<Index>(S) * A + 1;
  std::vector<Eigen::Triplet<double>> trips;
  Vec cvec(rows);
  Index r = 0;
  for (int copy = 0; copy < 2; ++copy) {
    const double shift = copy == 0 ? -1.0 : 1.0;
    for (int i = 0; i < S; ++i) {
      for (int a = 0; a < A; ++a, ++r) {
        const double si = 0.5 * (2.0 * M / (1.0 - gamma) - mdp.rewards[i][a]);
        const double bi = 0.5 * (2.0 * M / (1.0 - gamma) + mdp.rewards[i][a]);
        for (int j = 0; j < S; ++j) {
          double v = (i == j ? 1.0 : 0.0) - gamma * mdp.transitions[i][a][j];
          if (v != 0.0) trips.emplace_back(r, j, v / si);
        }
        cvec[r] = -bi / si + shift;
      }
    }
  }
  for (int j = 0; j < S; ++j) trips.emplace_back(r, j, alpha);
  cvec[r] = alpha * static_cast<double>(S) * M / (1.0 - gamma);

  SpMat Al1(rows, S);
  Al1.setFromTriplets(trips.begin(), trips.end());
  Al1.makeCompressed();

  L1Result l1 = solve_l1_regression(Al1, cvec, eps3, cfg);

  MdpResult out;
  out.lp_values = l1.z;
  out.policy.resize(S);
  for (int i = 0; i < S; ++i) {
    int best = 0;
    double bestq = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) {
      const double q = mdp.rewards[i][a] + gamma * mdp.transitions[i][a].dot(l1.z);
      if (q > bestq + 0.0) {  // strict: lowest index wins ties
        bestq = q;
        best = a;
      }
    }
    out.policy[i] = best;
  }
  // Exact policy evaluation.
  Mat Mt = Mat::Identity(S, S);
  Vec rp(S);
  for (int i = 0; i < S; ++i) {
    Mt.row(i) -= gamma * mdp.transitions[i][out.policy[i]].transpose();
    rp[i] = mdp.rewards[i][out.policy[i]];
  }
  out.values = Mt.fullPivLu().solve(rp);
  return out;
}

}  // namespace boxip::lpapps
