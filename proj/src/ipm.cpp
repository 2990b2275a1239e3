#include "boxip/ipm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace boxip::ipm {

void LpInstance::validate() const {
  linalg::validate_matrix(A);
  if (b.size() != A.cols() || c.size() != A.rows() || lower.size() != A.rows() ||
      upper.size() != A.rows())
    throw Error("LpInstance: dimension mismatch");
  require_finite(b, "b");
  require_finite(c, "c");
  require_finite(lower, "lower");
  require_finite(upper, "upper");
  for (Index i = 0; i < A.rows(); ++i)
    if (!(lower[i] < upper[i])) throw Error("LpInstance: bounds must satisfy lower < upper");
}

BarrierDerivs barrier_derivs(double x, double lo, double hi) {
  if (!(x > lo && x < hi)) throw OutOfDomain("barrier evaluated at or beyond a bound");
  const double a = 1.0 / (hi - x);  // distance to the upper bound, inverted
  const double b = 1.0 / (x - lo);
  BarrierDerivs d;
  d.value = -std::log(x - lo) - std::log(hi - x);
  d.d1 = a - b;
  d.d2 = a * a + b * b;
  d.d3 = 2.0 * (a * a * a - b * b * b);
  d.d4 = 6.0 * (a * a * a * a + b * b * b * b);
  return d;
}

Vec barrier_d1(const LpInstance& inst, const Vec& x) {
  Vec out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    if (!(x[i] > inst.lower[i] && x[i] < inst.upper[i]))
      throw OutOfDomain("iterate left the box at coordinate " + std::to_string(i));
    out[i] = 1.0 / (inst.upper[i] - x[i]) - 1.0 / (x[i] - inst.lower[i]);
  }
  return out;
}

Vec barrier_d2(const LpInstance& inst, const Vec& x) {
  Vec out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    if (!(x[i] > inst.lower[i] && x[i] < inst.upper[i]))
      throw OutOfDomain("iterate left the box at coordinate " + std::to_string(i));
    const double a = 1.0 / (inst.upper[i] - x[i]);
    const double b = 1.0 / (x[i] - inst.lower[i]);
    out[i] = a * a + b * b;
  }
  return out;
}

IpmParams IpmParams::make(Index m, Index n, double C, Mode mode, uint64_t seed) {
  if (m < n || n < 1) throw Error("IpmParams: need m >= n >= 1");
  if (!(C >= 2.0)) throw Error("IpmParams: need C >= 2");
  IpmParams p;
  p.C = C;
  p.mode = mode;
  p.seed = seed;
  p.m = m;
  p.n = n;
  p.alpha = 1.0 / (4.0 * std::log(4.0 * static_cast<double>(m) / n));
  p.p = 1.0 - p.alpha;
  // Centered points are defined for eps <= 1/80; cap the derived value.
  p.epsilon = std::min(p.alpha / C, 1.0 / 80.0);
  if (mode == Mode::Theory) {
    p.lambda = C * std::log(C * static_cast<double>(m) / (p.epsilon * p.epsilon)) / p.epsilon;
  } else {
    // Smallest lambda for which Psi <= m^2 still certifies eps-centering
    // (cosh(lambda eps) > m^2), with a 1.2 margin. The asymptotic formula
    // above is larger by a log factor and slows every practical step by
    // the same factor without changing what is enforced.
    p.lambda = 1.2 * std::max(std::log(2.0 * static_cast<double>(m) * m), 2.0) / p.epsilon;
  }
  p.gamma = p.epsilon / (C * p.lambda);
  p.c_norm = C / p.alpha;
  p.r = p.epsilon * p.gamma / (p.c_norm * std::sqrt(static_cast<double>(n)));
  p.c_start =
      std::max(2.0 * C, 2.0 * p.lambda * p.epsilon / std::log(std::max<double>(m, 3)));
  return p;
}

Vec default_regularizer(const SpMat& A) {
  const Index m = A.rows(), n = A.cols();
  Vec z(m);
  const double total = static_cast<double>(A.nonZeros());
  for (Index i = 0; i < m; ++i) {
    int nnz = 0;
    for (SpMat::InnerIterator it(A, i); it; ++it) ++nnz;
    z[i] = static_cast<double>(n) / m + static_cast<double>(n) * nnz / total;
  }
  return z;
}

PotentialResult potential(const LpInstance& inst, const Vec& x, const Vec& s, double mu,
                          const Vec& tau, double lambda) {
  if (!(mu > 0.0)) throw Error("potential: mu must be positive");
  PotentialResult out;
  const Index m = x.size();
  out.y.resize(m);
  Vec phi1 = barrier_d1(inst, x);
  Vec phi2 = barrier_d2(inst, x);
  for (Index i = 0; i < m; ++i) {
    if (!(tau[i] > 0.0)) throw Error("potential: tau must be positive");
    out.y[i] = (s[i] + mu * tau[i] * phi1[i]) / (mu * tau[i] * std::sqrt(phi2[i]));
  }
  const double worst = lambda * out.y.cwiseAbs().maxCoeff();
  if (worst <= 500.0) {
    double sum = 0.0;
    for (Index i = 0; i < m; ++i) sum += std::cosh(lambda * out.y[i]);
    out.value = sum;
    out.log_value = std::log(sum);
  } else {
    // log-space: log cosh(a) = |a| + log1p(e^{-2|a|}) - log 2, then logsumexp
    double mx = -std::numeric_limits<double>::infinity();
    Vec logs(m);
    for (Index i = 0; i < m; ++i) {
      double a = std::abs(lambda * out.y[i]);
      logs[i] = a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
      mx = std::max(mx, logs[i]);
    }
    double acc = 0.0;
    for (Index i = 0; i < m; ++i) acc += std::exp(logs[i] - mx);
    out.log_value = mx + std::log(acc);
    out.value = out.log_value > 709.0 ? std::numeric_limits<double>::infinity()
                                      : std::exp(out.log_value);
  }
  return out;
}

// ---------------------------------------------------------------------------
// flat operator

namespace {

struct FlatCandidate {
  double t = 0, nu = 0, obj = -1;
};

}  // namespace

Vec flat_operator(const Vec& g, const Vec& tau, double c_norm) {
  const Index m = g.size();
  if (tau.size() != m) throw Error("flat_operator: dimension mismatch");
  if (tau.minCoeff() <= 0.0) throw Error("flat_operator: tau must be positive");
  if (g.lpNorm<Eigen::Infinity>() == 0.0) return Vec::Zero(m);

  Vec a = g.cwiseAbs();
  std::vector<Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  // Ties break by coordinate order.
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) {
    return a[i] / tau[i] > a[j] / tau[j];
  });

  // Prefix sums over the sorted order: G_j, T_j over the capped prefix,
  // Q_j over the uncapped suffix.
  Vec key(m);
  Vec Gpre(m + 1), Tpre(m + 1), Qsuf(m + 1);
  Gpre[0] = Tpre[0] = 0.0;
  for (Index j = 0; j < m; ++j) {
    Index i = order[j];
    key[j] = a[i] / tau[i];
    Gpre[j + 1] = Gpre[j] + a[i];
    Tpre[j + 1] = Tpre[j] + tau[i];
  }
  Qsuf[m] = 0.0;
  for (Index j = m - 1; j >= 0; --j) {
    Index i = order[j];
    Qsuf[j] = Qsuf[j + 1] + a[i] * a[i] / tau[i];
  }

  const double beta = 1.0 / c_norm;
  const double beta2 = beta * beta;
  FlatCandidate best;

  auto consider = [&](double t, double nu, Index j) {
    if (!(t >= -1e-15 && t <= 1.0 + 1e-12) || !(nu >= -1e-15) || !std::isfinite(t) ||
        !std::isfinite(nu))
      return;
    t = std::clamp(t, 0.0, 1.0);
    nu = std::max(nu, 0.0);
    // Segment consistency: capped prefix of size j exactly.
    const double hi = j > 0 ? key[j - 1] : std::numeric_limits<double>::infinity();
    const double lo = j < m ? key[j] : 0.0;
    if (lo > 0.0 && nu * lo > t * (1 + 1e-9)) return;
    if (std::isfinite(hi) && nu * hi < t * (1 - 1e-9)) return;
    const double obj = t * Gpre[j] + nu * Qsuf[j];
    if (obj > best.obj) best = {t, nu, obj};
  };

  // Fully capped candidate.
  {
    const double t = 1.0 / (1.0 + c_norm * std::sqrt(Tpre[m]));
    consider(t, t / std::max(key[m - 1], 1e-300), m);
  }

  for (Index j = 0; j < m; ++j) {
    const double T = Tpre[j], G = Gpre[j], Q = Qsuf[j];
    if (Q <= 0.0) continue;
    // Boundary candidate: coordinate j+1 exactly at the cap.
    {
      const double k = key[j];
      if (k > 0.0) {
        const double M = T + Q / (k * k);
        const double t = beta / (std::sqrt(M) + beta);
        consider(t, t / k, j);
      }
    }
    if (G > 0.0) {
      // Interior stationary point of the segment: quadratic in t from the
      // Lagrange condition nu = (T t + beta^2 (1-t)) / G and the budget.
      const double QG = Q / (G * G);
      const double d = T - beta2;
      const double a2 = T + QG * d * d - beta2;
      const double a1 = 2.0 * QG * beta2 * d + 2.0 * beta2;
      const double a0 = QG * beta2 * beta2 - beta2;
      const double disc = a1 * a1 - 4.0 * a2 * a0;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        for (double t : {(-a1 + sq) / (2.0 * a2), (-a1 - sq) / (2.0 * a2)}) {
          if (!std::isfinite(t)) continue;
          const double nu = (T * t + beta2 * (1.0 - t)) / G;
          consider(t, nu, j);
        }
      }
    }
  }

  Vec h(m);
  for (Index i = 0; i < m; ++i) {
    const double mag = std::min(best.t, best.nu * a[i] / tau[i]);
    h[i] = g[i] >= 0.0 ? mag : -mag;
  }
  // Snap exactly onto the budget surface.
  double norm = h.lpNorm<Eigen::Infinity>();
  double tn = 0.0;
  for (Index i = 0; i < m; ++i) tn += tau[i] * h[i] * h[i];
  norm += c_norm * std::sqrt(tn);
  if (norm > 0.0) h /= norm;
  return h;
}

double dual_tau_inf_norm(const Vec& g, const Vec& tau, double c_norm) {
  return g.dot(flat_operator(g, tau, c_norm));
}

// ---------------------------------------------------------------------------
// tau backends

namespace {

class WarmTauBackend final : public TauBackend {
 public:
  WarmTauBackend(const SpMat& A, const Vec& z, double p, double tol)
      : A_(A), z_(z), p_(p), tol_(tol) {}

  const Vec& update(const Vec& gscale) override {
    g_ = gscale;
    if (w_.size() == 0) {
      w_ = scores::lewis_fixed_point(A_, g_, z_, p_, tol_);
      resid_ = scores::lewis_residual(A_, g_, z_, p_, w_);
      return w_;
    }
    double best = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 500; ++it) {
      Vec scale = w_.array().pow(0.5 - 1.0 / p_) * g_.array();
      Vec target = scores::leverage_scores(A_, scale) + z_;
      resid_ = (w_.array().log() - target.array().log()).abs().maxCoeff();
      best = std::min(best, resid_);
      if (resid_ <= tol_) return w_;
      w_ = (w_.array().pow(2.0 / p_ - 1.0) * target.array()).pow(p_ / 2.0);
    }
    throw Error("tau backend failed to reconverge: best residual " + std::to_string(best) +
                " vs tol " + std::to_string(tol_) + ", g range [" +
                std::to_string(g_.minCoeff()) + ", " + std::to_string(g_.maxCoeff()) + "]");
  }

  const Vec& weights() const override { return w_; }
  double residual() const override { return resid_; }
  const Vec& regularizer() const override { return z_; }
  std::unique_ptr<TauBackend> clone() const override {
    return std::make_unique<WarmTauBackend>(*this);
  }

 private:
  SpMat A_;
  Vec z_, g_, w_;
  double p_, tol_;
  double resid_ = std::numeric_limits<double>::infinity();
};

class MaintenanceTauBackend final : public TauBackend {
 public:
  MaintenanceTauBackend(const SpMat& A, const Vec& z, double p, double tol)
      : z_(z) {
    cfg_.p = p;
    cfg_.eps = tol;
    cfg_.delta = 2.0;
    cfg_.practical = true;
    pending_A_ = A;
  }

  const Vec& update(const Vec& gscale) override {
    if (!state_) {
      state_.emplace(pending_A_, gscale, z_, cfg_);
      g_ = gscale;
    } else {
      for (Index i = 0; i < gscale.size(); ++i)
        if (gscale[i] != g_[i]) state_->scale(i, gscale[i]);
      g_ = gscale;
    }
    auto q = state_->query();
    w_ = *q.weights;
    return w_;
  }

  const Vec& weights() const override { return w_; }
  double residual() const override { return state_ ? state_->residual() : 0.0; }
  const Vec& regularizer() const override { return z_; }
  std::unique_ptr<TauBackend> clone() const override {
    return std::make_unique<MaintenanceTauBackend>(*this);
  }

 private:
  SpMat pending_A_;
  Vec z_, g_, w_;
  scores::LewisState::Config cfg_;
  std::optional<scores::LewisState> state_;
};

}  // namespace

std::unique_ptr<TauBackend> make_tau_backend(const SpMat& A, const Vec& z, double p,
                                             double tol, TauBackendKind kind) {
  if (kind == TauBackendKind::WarmFixedPoint)
    return std::make_unique<WarmTauBackend>(A, z, p, tol);
  return std::make_unique<MaintenanceTauBackend>(A, z, p, tol);
}

Vec tau_weights(const LpInstance& inst, const Vec& x, double p, double tol, const Vec* z) {
  Vec phi2 = barrier_d2(inst, x);
  Vec g = phi2.cwiseSqrt().cwiseInverse();
  Vec zz = z ? *z : default_regularizer(inst.A);
  return scores::lewis_fixed_point(inst.A, g, zz, p, tol);
}

// ---------------------------------------------------------------------------
// triple, measurements

CenteredTriple CenteredTriple::from_exact(const LpInstance& inst, const Vec& x, const Vec& s,
                                          double mu) {
  CenteredTriple t;
  t.x = x;
  t.s = s;
  t.x_comp = Vec::Zero(x.size());
  t.mu = mu;
  t.x_bar = x;
  t.s_bar = s;
  t.mu_bar = mu;
  t.delta = linalg::residual_compensated(inst.A, t.x, t.x_comp, inst.b);
  return t;
}

namespace {

double dual_residual_rel(const LpInstance& inst, const Vec& s) {
  Vec d = s - inst.c;
  linalg::NormalOperator gram(inst.A, Vec::Ones(inst.rows()));
  Vec zvec = gram.solve(linalg::multiply_transpose(inst.A, d));
  Vec back(inst.rows());
  for (Index i = 0; i < inst.rows(); ++i) {
    double acc = 0.0;
    for (SpMat::InnerIterator it(inst.A, i); it; ++it) acc += it.value() * zvec[it.col()];
    back[i] = acc;
  }
  return (d - back).norm() / (1.0 + d.norm());
}

Vec row_product(const SpMat& A, const Vec& v) {  // A * v for n-vector v
  Vec out(A.rows());
  for (Index i = 0; i < A.rows(); ++i) {
    double acc = 0.0;
    for (SpMat::InnerIterator it(A, i); it; ++it) acc += it.value() * v[it.col()];
    out[i] = acc;
  }
  return out;
}

// Normalized gradient of Psi at y: proportional to sinh(lambda y), scaled by
// e^{-lambda ||y||_inf} so it never overflows. The flat operator is invariant
// to positive rescaling.
Vec grad_psi_direction(const Vec& y, double lambda) {
  const double mx = lambda * y.cwiseAbs().maxCoeff();
  Vec g(y.size());
  for (Index i = 0; i < y.size(); ++i) {
    const double aa = lambda * std::abs(y[i]);
    const double mag = std::exp(aa - mx) * 0.5 * (1.0 - std::exp(-2.0 * aa));
    g[i] = y[i] >= 0.0 ? mag : -mag;
  }
  return g;
}

}  // namespace

CenteringReport measure_centering(const LpInstance& inst, const Vec& x, const Vec& s,
                                  double mu, const Vec& tau, const IpmParams& params) {
  CenteringReport rep;
  PotentialResult pot = potential(inst, x, s, mu, tau, params.lambda);
  rep.yinf = pot.y.cwiseAbs().maxCoeff();
  Vec phi2 = barrier_d2(inst, x);
  Vec d = (tau.array() * phi2.array()).inverse();
  linalg::NormalOperator H(inst.A, d, 1e-12);
  Vec delta = linalg::multiply_transpose(inst.A, x) - inst.b;
  rep.feas = std::sqrt(std::max(0.0, H.quadform_inv(delta)));
  rep.dual_resid = dual_residual_rel(inst, s);
  return rep;
}

// ---------------------------------------------------------------------------
// backends bundle

Backends::Backends(const LpInstance& inst, const IpmParams& params)
    : rng_(params.seed, 0x5eed) {
  Vec z = default_regularizer(inst.A);
  tau_ = make_tau_backend(inst.A, z, params.p, params.tau_tol(), params.tau_backend);
  if (params.sampler == SamplerKind::Proportional) {
    tree_scaling_ = Vec::Ones(inst.rows());
    tree_ = std::make_unique<sketch::SketchTree>(inst.A, tree_scaling_, params.seed ^ 0x7ee);
  }
}

void Backends::refresh_tree_scaling(const Vec& gsample) {
  if (!tree_) return;
  for (Index i = 0; i < gsample.size(); ++i)
    if (gsample[i] != tree_scaling_[i]) tree_->scale(i, gsample[i]);
  tree_scaling_ = gsample;
}

// ---------------------------------------------------------------------------
// short step

namespace {

struct Candidate {
  bool valid = false;
  double beta = 0;
  Vec move;  // x displacement, committed with error-free accumulation
  Vec x, s;
  double yinf = 0, log_psi = 0, psi = 0;
  double y_certified = 0;  // rigorous bound accounting for the tau response
};

}  // namespace

StepRecord short_step(const LpInstance& inst, CenteredTriple& state, double mu_new,
                      const IpmParams& params, Backends& backends) {
  const Index m = inst.rows();
  if (!(mu_new > 0.0)) throw Error("short_step: mu_new must be positive");
  if (params.mode == Mode::Theory &&
      std::abs(mu_new - state.mu) > params.r * state.mu * (1.0 + 1e-9))
    throw Error("short_step: |mu_new - mu| exceeds r*mu in theory mode");

  if (!approx_eps(state.mu_bar, mu_new, params.gamma / 4096.0)) state.mu_bar = mu_new;

  Vec phi1_bar(m), phi2_bar(m);
  for (Index i = 0; i < m; ++i) {
    const double a = 1.0 / (inst.upper[i] - state.x_bar[i]);
    const double b = 1.0 / (state.x_bar[i] - inst.lower[i]);
    phi1_bar[i] = a - b;
    phi2_bar[i] = a * a + b * b;
  }
  Vec sq2 = phi2_bar.cwiseSqrt();
  Vec ybar(m);
  for (Index i = 0; i < m; ++i)
    ybar[i] = (state.s_bar[i] + state.mu_bar * state.tau_bar[i] * phi1_bar[i]) /
              (state.mu_bar * state.tau_bar[i] * sq2[i]);

  Vec gdir = grad_psi_direction(ybar, params.lambda);
  Vec fdir = gdir.lpNorm<Eigen::Infinity>() > 0.0
                 ? flat_operator(gdir, state.tau_bar, params.c_norm)
                 : Vec(Vec::Zero(m));

  // H ~ A^T Tbar^{-1} Phi''(x_bar)^{-1} A, cached and reused for both solves.
  Vec hweights = (state.tau_bar.array() * phi2_bar.array()).inverse();
  if (!params.exact_h) {
    const double keep =
        100.0 * std::log(std::max<double>(inst.cols(), 2)) / (params.gamma * params.gamma);
    RngStream hrng = backends.rng().fork(backends.rng().next_u64());
    for (Index i = 0; i < m; ++i) {
      double prob = std::min(1.0, keep * state.tau_bar[i]);
      if (hrng.next_double() < prob)
        hweights[i] /= prob;
      else
        hweights[i] = 0.0;
    }
  }
  linalg::NormalOperator H(inst.A, hweights, 1e-12);

  Vec w1 = linalg::multiply_transpose(inst.A, fdir.cwiseQuotient(sq2));
  Vec u1 = H.solve(w1);              // direction part of the solve
  Vec u2 = H.solve(state.delta);     // feasibility part
  Vec Au1 = row_product(inst.A, u1);

  Vec inv_tau_sq2 = (state.tau_bar.array() * sq2.array()).inverse();

  // The feasibility correction is gated on the measured weighted residual
  // and capped: infeasibility at the compensated floating-point floor can
  // have an enormous pullback through a near-singular endgame Gram matrix,
  // and chasing it would destroy centering for nothing.
  // The feasibility correction is gated on the compensated absolute
  // residual: with error-free accumulation the iterate stays on the affine
  // subspace to nearly machine precision, and chasing the weighted norm of
  // what remains through a near-singular endgame Gram matrix would be pure
  // centering tax.
  const double delta_gate = 1e-11 * (1.0 + inst.b.cwiseAbs().maxCoeff());
  Vec dr2 = row_product(inst.A, u2).cwiseProduct(inv_tau_sq2);
  double dr2_scale = 1.0;
  {
    if (state.delta.lpNorm<Eigen::Infinity>() <= delta_gate) {
      dr2_scale = 0.0;
    } else {
      const double cap = params.epsilon / 16.0;
      const double mx = dr2.lpNorm<Eigen::Infinity>();
      if (mx > cap) dr2_scale = cap / mx;
    }
    dr2 *= dr2_scale;
  }
  Vec dr1 = row_product(inst.A, u1).cwiseProduct(inv_tau_sq2);

  auto make_candidate = [&](double beta, RngStream crng) {
    Candidate cand;
    cand.beta = beta;
    Vec delta_r = dr2 - beta * dr1;
    sketch::SampleMatrix R;
    switch (params.sampler) {
      case SamplerKind::Identity:
        for (Index i = 0; i < m; ++i) R.entries.emplace_back(i, 1.0);
        break;
      case SamplerKind::Independent:
        R = sketch::sample_valid_independent(delta_r, state.tau_bar, params.gamma, 4.0, 4.0,
                                             crng);
        break;
      case SamplerKind::Proportional: {
        backends.refresh_tree_scaling(inv_tau_sq2);
        sketch::ProportionalOptions opts;
        Vec heff = dr2_scale * u2 - beta * u1;  // delta_r = G A heff
        if (params.mode == Mode::Theory) {
          R = sketch::sample_valid_proportional(*backends.tree(), heff, state.tau_bar,
                                                params.gamma, opts, crng);
        } else {
          try {
            R = sketch::sample_valid_proportional(*backends.tree(), heff, state.tau_bar,
                                                  params.gamma, opts, crng);
          } catch (const BudgetTooSmall&) {
            return cand;  // step too large for the sampler's contract; shrink
          }
        }
        break;
      }
    }
    Vec rdr = R.apply(delta_r);
    cand.move = (-beta * fdir - rdr).cwiseQuotient(sq2);
    cand.x = state.x + cand.move;
    for (Index i = 0; i < m; ++i)
      if (!(cand.x[i] > inst.lower[i] && cand.x[i] < inst.upper[i])) return cand;
    cand.s = state.s + (-beta * state.mu) * Au1;
    PotentialResult pot = potential(inst, cand.x, cand.s, mu_new, state.tau_bar, params.lambda);
    cand.yinf = pot.y.cwiseAbs().maxCoeff();
    cand.log_psi = pot.log_value;
    cand.psi = pot.value;
    // Central path weights respond to the move by at most four times the
    // log change of phi''^{-1/2}; certify the post-refresh centrality.
    double dxmove = 0.0;
    for (Index i = 0; i < m; ++i) {
      const double a = 1.0 / (inst.upper[i] - cand.x[i]);
      const double b = 1.0 / (cand.x[i] - inst.lower[i]);
      dxmove = std::max(dxmove, std::abs(0.5 * std::log((a * a + b * b) / phi2_bar[i])));
    }
    const double drift = std::expm1(4.0 * dxmove + 8.0 * params.tau_tol());
    cand.y_certified = cand.yinf + drift * (1.0 + cand.yinf);
    cand.valid = true;
    return cand;
  };

  const double m2 = static_cast<double>(m) * static_cast<double>(m);
  const double log_psi_cap = std::log(params.psi_accept_frac * m2);

  // Commits a candidate, refreshes the maintained approximations past their
  // thresholds, and measures the post-refresh record.
  auto commit_and_record = [&](const Candidate& accepted, double mu_acc) {
    for (Index i = 0; i < m; ++i)
      linalg::two_sum_accumulate(state.x[i], state.x_comp[i], accepted.move[i]);
    state.s = accepted.s;
    state.mu = mu_acc;
    state.mu_bar = mu_acc;
    state.delta = linalg::residual_compensated(inst.A, state.x, state.x_comp, inst.b);

    // Weighted restoration passes, gated and capped like the in-step
    // correction.
    for (int pass = 0; pass < 2; ++pass) {
      if (state.delta.lpNorm<Eigen::Infinity>() <= delta_gate) break;
      Vec corr = H.solve(state.delta);
      Vec move = -hweights.cwiseProduct(row_product(inst.A, corr));
      double metric = 0.0;
      for (Index i = 0; i < m; ++i)
        metric = std::max(metric, std::abs(std::sqrt(phi2_bar[i]) * move[i]));
      if (metric > params.epsilon / 16.0) move *= (params.epsilon / 16.0) / metric;
      Vec trial = state.x + move;
      bool interior = true;
      for (Index i = 0; i < m; ++i)
        if (!(trial[i] > inst.lower[i] && trial[i] < inst.upper[i])) interior = false;
      if (!interior) break;
      for (Index i = 0; i < m; ++i)
        linalg::two_sum_accumulate(state.x[i], state.x_comp[i], move[i]);
      state.delta = linalg::residual_compensated(inst.A, state.x, state.x_comp, inst.b);
    }

    const double x_thresh = params.gamma / 4096.0;
    const double tau_thresh = params.gamma / 1024.0;
    const double s_thresh = params.gamma / 1024.0;
    for (Index i = 0; i < m; ++i) {
      const double a = 1.0 / (inst.upper[i] - state.x[i]);
      const double b = 1.0 / (state.x[i] - inst.lower[i]);
      const double root = std::sqrt(a * a + b * b);
      if (std::abs(root * (state.x[i] - state.x_bar[i])) > x_thresh)
        state.x_bar[i] = state.x[i];
    }
    Vec phi2_new = barrier_d2(inst, state.x_bar);
    Vec gscale = phi2_new.cwiseSqrt().cwiseInverse();
    const Vec& w = backends.tau().update(gscale);
    for (Index i = 0; i < m; ++i)
      if (!approx_eps(w[i], state.tau_bar[i], tau_thresh)) state.tau_bar[i] = w[i];
    for (Index i = 0; i < m; ++i) {
      const double denom = state.mu_bar * state.tau_bar[i] * std::sqrt(phi2_new[i]);
      if (std::abs(state.s[i] - state.s_bar[i]) / denom > s_thresh) state.s_bar[i] = state.s[i];
    }

    StepRecord rec;
    rec.mu = state.mu;
    rec.beta = accepted.beta;
    PotentialResult pot =
        potential(inst, state.x, state.s, state.mu, state.tau_bar, params.lambda);
    rec.psi = pot.value;
    rec.log_psi = pot.log_value;
    rec.yinf = pot.y.cwiseAbs().maxCoeff();

    double tau_rel = 0.0;
    for (Index i = 0; i < m; ++i)
      tau_rel = std::max(tau_rel, std::abs(state.tau_bar[i] / w[i] - 1.0));
    const double wres = backends.tau().residual();
    rec.invar_tau = std::exp(wres) * tau_rel + std::expm1(wres);
    rec.yinf_certified = rec.yinf + rec.invar_tau * (1.0 + rec.yinf);

    Vec phi2_exact = barrier_d2(inst, state.x);
    double ix = 0.0;
    for (Index i = 0; i < m; ++i)
      ix = std::max(ix, std::sqrt(phi2_exact[i]) * std::abs(state.x_bar[i] - state.x[i]));
    rec.invar_x = ix;

    Vec dnew = (state.tau_bar.array() * phi2_new.array()).inverse();
    linalg::NormalOperator Hnew(inst.A, dnew, 1e-12);
    rec.feas = std::sqrt(std::max(0.0, Hnew.quadform_inv(state.delta)));
    rec.dual_resid = dual_residual_rel(inst, state.s);
    return rec;
  };

  if (params.mode == Mode::Theory) {
    Candidate accepted =
        make_candidate(params.gamma, backends.rng().fork(backends.rng().next_u64()));
    if (!accepted.valid) throw CenteringLost("theory step left the box");
    return commit_and_record(accepted, mu_new);
  }

  int backtracks = 0;
  double mu_target = mu_new;
  double beta_limit = params.beta_cap;
  double last_diag = -1.0;
  std::string gamma_diag;
  for (;; ++backtracks) {
    std::vector<double> betas;
    for (double bta = params.gamma; bta < beta_limit; bta *= 4.0) betas.push_back(bta);
    betas.push_back(beta_limit);
    Candidate best;
    for (double bta : betas) {
      Candidate cand = make_candidate(bta, backends.rng().fork(backends.rng().next_u64()));
      if (!cand.valid) continue;
      if (mu_target != mu_new) {
        // Re-measure at the backtracked mu target; the step vectors do not
        // depend on it.
        PotentialResult pot =
            potential(inst, cand.x, cand.s, mu_target, state.tau_bar, params.lambda);
        const double drift = cand.y_certified - cand.yinf;  // tau response term
        cand.yinf = pot.y.cwiseAbs().maxCoeff();
        cand.log_psi = pot.log_value;
        cand.psi = pot.value;
        cand.y_certified = cand.yinf + drift;
      }
      last_diag = std::max(last_diag, -1.0);
      if (bta == params.gamma) {
        last_diag = cand.yinf;
        gamma_diag = " gamma-cand: yinf=" + std::to_string(cand.yinf) +
                     " ycert=" + std::to_string(cand.y_certified) +
                     " logpsi=" + std::to_string(cand.log_psi) + "/" +
                     std::to_string(log_psi_cap);
      }
      if (cand.y_certified > params.epsilon || cand.log_psi > log_psi_cap) continue;
      if (!best.valid || cand.log_psi < best.log_psi) best = cand;
    }
    std::string why;
    if (best.valid) {
      // Trial commit: the exact post-refresh measurement has the final word.
      CenteredTriple saved = state;
      auto saved_tau = backends.snapshot_tau();
      StepRecord rec = commit_and_record(best, mu_target);
      const bool ok = rec.yinf_certified <= params.epsilon && rec.log_psi <= log_psi_cap &&
                      rec.invar_x <= params.epsilon && rec.invar_tau <= params.epsilon;
      if (ok) {
        rec.backtracks = backtracks;
        return rec;
      }
      why = " post-refresh yinf=" + std::to_string(rec.yinf_certified) +
            " log_psi=" + std::to_string(rec.log_psi) + "/" + std::to_string(log_psi_cap) +
            " invar_x=" + std::to_string(rec.invar_x) +
            " invar_tau=" + std::to_string(rec.invar_tau) +
            " best: beta=" + std::to_string(best.beta) +
            " yinf=" + std::to_string(best.yinf) +
            " ycert=" + std::to_string(best.y_certified) +
            " logpsi=" + std::to_string(best.log_psi);
      state = std::move(saved);
      backends.restore_tau(std::move(saved_tau));
      // The rejection came from the tau response of the move itself;
      // gentler gradient budgets shrink it toward the jitter-free regime.
      beta_limit = std::max(best.beta / 4.0, params.gamma);
    }
    if (backtracks >= params.max_backtracks) {
      PotentialResult st_pot =
          potential(inst, state.x, state.s, state.mu, state.tau_bar, params.lambda);
      throw CenteringLost(
          "short_step: backtracking exhausted, last ||y||_inf = " +
          std::to_string(last_diag) + why + gamma_diag +
          " state: logpsi=" + std::to_string(st_pot.log_value) +
          " |delta|=" + std::to_string(state.delta.lpNorm<Eigen::Infinity>()) +
          " dr2_scale=" + std::to_string(dr2_scale) +
          " mu=" + std::to_string(state.mu) + " mu_target=" + std::to_string(mu_target));
    }
    mu_target = state.mu - 0.5 * (state.mu - mu_target);  // halve the mu step
  }
}

CenteredTriple path_following(const LpInstance& inst, CenteredTriple state, double mu_final,
                              const IpmParams& params, Backends& backends,
                              const ProgressCallback& cb) {
  if (!(mu_final > 0.0)) throw Error("path_following: mu_final must be positive");
  if (state.tau_bar.size() == 0) {
    Vec phi2 = barrier_d2(inst, state.x_bar);
    state.tau_bar = backends.tau().update(phi2.cwiseSqrt().cwiseInverse());
  }
  const double frac = params.mode == Mode::Theory
                          ? params.r
                          : std::min(0.05, params.r * params.step_scale);
  // Corrector hysteresis band, relative to the acceptance cap on Psi.
  const double m2 = static_cast<double>(inst.rows()) * static_cast<double>(inst.rows());
  const double psi_cap = std::log(params.psi_accept_frac * m2);
  const double psi_high = psi_cap - std::log(2.0);
  const double psi_low = psi_cap - std::log(8.0);
  int t = 0;
  while (state.mu > mu_final * (1.0 + 1e-12)) {
    double mu_next = std::max(state.mu * (1.0 - frac), mu_final);
    StepRecord rec = short_step(inst, state, mu_next, params, backends);
    rec.t = t++;
    if (cb) cb(rec);
    if (params.mode == Mode::Practical && rec.log_psi > psi_high) {
      double last = rec.log_psi;
      for (int k = 0; k < 50 && last > psi_low; ++k) {
        StepRecord crec = short_step(inst, state, state.mu, params, backends);
        crec.t = t++;
        crec.corrector = true;
        if (cb) cb(crec);
        if (crec.log_psi > last - 0.005) break;  // stalled
        last = crec.log_psi;
      }
    }
  }
  return state;
}

std::pair<Vec, Vec> final_point(const LpInstance& inst, const CenteredTriple& state) {
  Vec phi2 = barrier_d2(inst, state.x);
  Vec d = (state.tau_bar.array() * phi2.array()).inverse();
  linalg::NormalOperator H(inst.A, d, 1e-12);
  Vec x_final = state.x;
  Vec x_comp = state.x_comp.size() ? state.x_comp : Vec(Vec::Zero(inst.rows()));
  for (int pass = 0; pass < 3; ++pass) {
    Vec resid = linalg::residual_compensated(inst.A, x_final, x_comp, inst.b);
    Vec move = -d.cwiseProduct(row_product(inst.A, H.solve(resid)));
    for (Index i = 0; i < inst.rows(); ++i)
      linalg::two_sum_accumulate(x_final[i], x_comp[i], move[i]);
  }
  for (Index i = 0; i < inst.rows(); ++i)
    if (!(x_final[i] > inst.lower[i] && x_final[i] < inst.upper[i]))
      throw CenteringLost("final point left the box");
  return {x_final, state.s};
}

}  // namespace boxip::ipm
