#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "boxip/common.hpp"
#include "boxip/linalg.hpp"
#include "boxip/rng.hpp"
#include "boxip/scores.hpp"
#include "boxip/sketchtree.hpp"

namespace boxip::ipm {

/// Two-sided box LP: min c^T x subject to A^T x = b, lower < x < upper.
struct LpInstance {
  SpMat A;  // m x n, m >= n, non-degenerate
  Vec b;    // n
  Vec c;    // m
  Vec lower, upper;  // m, lower < upper strictly

  Index rows() const { return A.rows(); }
  Index cols() const { return A.cols(); }
  void validate() const;
};

/// Scalar log barrier for the interval (lo, hi) and its derivatives.
struct BarrierDerivs {
  double value, d1, d2, d3, d4;
};
BarrierDerivs barrier_derivs(double x, double lo, double hi);

Vec barrier_d1(const LpInstance& inst, const Vec& x);
Vec barrier_d2(const LpInstance& inst, const Vec& x);

enum class Mode { Practical, Theory };
enum class SamplerKind { Identity, Independent, Proportional };
enum class TauBackendKind { WarmFixedPoint, Maintenance };

struct IpmParams {
  double C = 4.0;
  Mode mode = Mode::Practical;
  uint64_t seed = 0;

  // Practical-mode knobs.
  double step_scale = 1e9;  // mu step fraction = min(0.05, r * step_scale)
  int max_backtracks = 60;
  double beta_cap = 1.0;         // largest gradient budget tried by the line search
  double psi_accept_frac = 0.9;  // accept steps with Psi <= frac * m^2
  SamplerKind sampler = SamplerKind::Independent;
  TauBackendKind tau_backend = TauBackendKind::WarmFixedPoint;
  bool exact_h = true;  // false: leverage-score sparsified Gram matrix

  // Derived (recomputed from C, m, n).
  Index m = 0, n = 0;
  double alpha = 0, p = 0, epsilon = 0, lambda = 0, gamma = 0, c_norm = 0, r = 0;
  double c_start = 0;

  /// Accuracy of the maintained central path weights. Psi amplifies tau
  /// jitter by e^{lambda * jitter}, so this must stay at gamma scale.
  double tau_tol() const { return mode == Mode::Practical ? gamma / 4.0 : gamma / 65536.0; }

  static IpmParams make(Index m, Index n, double C = 4.0, Mode mode = Mode::Practical,
                        uint64_t seed = 0);
};

/// IPM iterate plus the maintained approximations.
struct CenteredTriple {
  Vec x, s;
  Vec x_comp;  // error-free accumulation term: the true iterate is x + x_comp
  double mu = 0;
  Vec x_bar, s_bar, tau_bar;
  double mu_bar = 0;
  Vec delta;  // A^T x - b, compensated

  static CenteredTriple from_exact(const LpInstance& inst, const Vec& x, const Vec& s,
                                   double mu);
};

/// Centrality potential Psi = sum cosh(lambda y_i) with the normalized
/// centrality vector y = (s + mu tau phi') / (mu tau sqrt(phi'')).
/// `value` saturates at huge magnitudes; `log_value` is always accurate.
struct PotentialResult {
  double value = 0;
  double log_value = 0;
  Vec y;
};
PotentialResult potential(const LpInstance& inst, const Vec& x, const Vec& s, double mu,
                          const Vec& tau, double lambda);

/// Maximizer of <g, h> over the unit ball of ||h||_inf + c_norm ||h||_tau.
/// g = 0 returns h = 0.
Vec flat_operator(const Vec& g, const Vec& tau, double c_norm);
/// Dual norm <g, g^flat>.
double dual_tau_inf_norm(const Vec& g, const Vec& tau, double c_norm);

/// Regularizer z_i = n/m + n * nnz(a_i) / nnz(A).
Vec default_regularizer(const SpMat& A);

/// Central path weights: regularized Lewis weights of diag(phi''(x)^{-1/2}) A.
class TauBackend {
 public:
  virtual ~TauBackend() = default;
  /// Recompute / refresh the maintained weights for row scaling gscale.
  virtual const Vec& update(const Vec& gscale) = 0;
  virtual const Vec& weights() const = 0;
  /// Log-scale fixed point residual of the maintained weights.
  virtual double residual() const = 0;
  virtual const Vec& regularizer() const = 0;
  /// Deep copy, used to roll back rejected trial steps.
  virtual std::unique_ptr<TauBackend> clone() const = 0;
};

std::unique_ptr<TauBackend> make_tau_backend(const SpMat& A, const Vec& z, double p,
                                             double tol, TauBackendKind kind);

/// One-shot central path weights (used for initial points and tests).
Vec tau_weights(const LpInstance& inst, const Vec& x, double p, double tol,
                const Vec* z = nullptr);

/// Per-step measurements delivered to the progress callback and asserted by
/// the invariant suite.
struct StepRecord {
  int t = 0;
  double mu = 0;
  double psi = 0;       // saturating value
  double log_psi = 0;
  double yinf = 0;            // measured with tau_bar
  double yinf_certified = 0;  // rigorous bound on the exact-tau centrality
  double feas = 0;            // || A^T x - b || in the inverse Gram norm
  double dual_resid = 0;      // relative range(A) residual of s - c
  double invar_x = 0;         // || Phi''(x)^{1/2} (x_bar - x) ||_inf
  double invar_tau = 0;       // certified bound on || T(x_bar)^{-1}(tau_bar - tau(x_bar)) ||_inf
  int backtracks = 0;
  double beta = 0;  // accepted gradient budget
  bool corrector = false;
};
using ProgressCallback = std::function<void(const StepRecord&)>;

/// Shared per-solve machinery: tau backend, samplers, RNG stream.
class Backends {
 public:
  Backends(const LpInstance& inst, const IpmParams& params);

  TauBackend& tau() { return *tau_; }
  const Vec& regularizer() const { return tau_->regularizer(); }
  RngStream& rng() { return rng_; }
  sketch::SketchTree* tree() { return tree_ ? tree_.get() : nullptr; }
  void refresh_tree_scaling(const Vec& gsample);
  std::unique_ptr<TauBackend> snapshot_tau() const { return tau_->clone(); }
  void restore_tau(std::unique_ptr<TauBackend> t) { tau_ = std::move(t); }

 private:
  std::unique_ptr<TauBackend> tau_;
  std::unique_ptr<sketch::SketchTree> tree_;
  Vec tree_scaling_;
  RngStream rng_;
};

/// One robust short step toward mu_new. Practical mode line-searches the
/// gradient budget and backtracks the mu step until the measured centering
/// invariant holds; theory mode takes the literal gamma step.
StepRecord short_step(const LpInstance& inst, CenteredTriple& state, double mu_new,
                      const IpmParams& params, Backends& backends);

/// Path following from state.mu down to mu_final.
CenteredTriple path_following(const LpInstance& inst, CenteredTriple state, double mu_final,
                              const IpmParams& params, Backends& backends,
                              const ProgressCallback& cb = nullptr);

/// Projects the iterate onto A^T x = b (single weighted least squares
/// solve); s is returned unchanged.
std::pair<Vec, Vec> final_point(const LpInstance& inst, const CenteredTriple& state);

/// Full centering measurement of Definition-style conditions.
struct CenteringReport {
  double yinf = 0;
  double feas = 0;
  double dual_resid = 0;
  bool pass(const IpmParams& params) const {
    return yinf <= params.epsilon && feas <= params.epsilon * params.gamma / params.c_norm &&
           dual_resid <= 1e-8;
  }
};
CenteringReport measure_centering(const LpInstance& inst, const Vec& x, const Vec& s,
                                  double mu, const Vec& tau, const IpmParams& params);

}  // namespace boxip::ipm
