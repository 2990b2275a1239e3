#include "boxip/scores.hpp"

#include <cmath>

namespace boxip::scores {

Vec leverage_scores(const SpMat& A, const Vec& g, const ScoreMode& mode) {
  const Index m = A.rows(), n = A.cols();
  if (g.size() != m) throw Error("leverage_scores: dimension mismatch");
  require_finite(g, "g");

  Vec g2 = g.cwiseProduct(g);
  Vec sigma(m);
  if (!mode.sketched) {
    // diag(GA (A^T G^2 A)^{-1} A^T G) computed as thin-Q row norms of GA;
    // algebraically identical and stable under widely spread row weights.
    Mat GA(m, n);
    GA.setZero();
    for (Index i = 0; i < m; ++i)
      for (SpMat::InnerIterator it(A, i); it; ++it) GA(i, it.col()) = g[i] * it.value();
    Eigen::ColPivHouseholderQR<Mat> qr(GA);
    if (qr.rank() < n) throw SingularSystem("A^T G^2 A is rank deficient");
    Mat thinQ = qr.householderQ() * Mat::Identity(m, n);
    for (Index i = 0; i < m; ++i) sigma[i] = thinQ.row(i).squaredNorm();
  } else {
    Mat M = linalg::normal_matrix_dense(A, g2);
    // Equilibrate: leverage scores are invariant to column scaling.
    Vec e(n);
    for (Index j = 0; j < n; ++j) e[j] = M(j, j) > 0.0 ? 1.0 / std::sqrt(M(j, j)) : 1.0;
    Mat Ms = e.asDiagonal() * M * e.asDiagonal();
    Eigen::LDLT<Mat> ldlt(Ms);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < 1e-14)
      throw SingularSystem("A^T G^2 A is rank deficient");
    RngStream rng(mode.seed);
    Mat J = linalg::jl_sketch(mode.eps, m, rng);
    const Index k = J.rows();
    // B = E A^T G J^T, column t at a time; sigma_i ~ ||g_i (E a_i)^T Ms^{-1} B||^2.
    Mat B(n, k);
    for (Index t = 0; t < k; ++t) {
      Vec gj = g.cwiseProduct(J.row(t).transpose());
      B.col(t) = e.asDiagonal() * linalg::multiply_transpose(A, gj);
    }
    Mat S = ldlt.solve(B);  // n x k
    for (Index i = 0; i < m; ++i) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(k);
      for (SpMat::InnerIterator it(A, i); it; ++it)
        row += it.value() * e[it.col()] * S.row(it.col());
      sigma[i] = g2[i] * row.squaredNorm();
    }
  }
  return sigma;
}

void validate_regularizer(const Vec& z, Index m, Index n) {
  if (z.size() != m) throw Error("regularizer has wrong length");
  const double floor = static_cast<double>(n) / static_cast<double>(m);
  if (z.minCoeff() < floor * (1.0 - 1e-12))
    throw Error("regularizer entries must be at least n/m");
  if (z.lpNorm<1>() > 4.0 * n * (1.0 + 1e-12))
    throw Error("regularizer l1 norm exceeds 4n");
}

namespace {

Vec scores_for(const SpMat& A, const Vec& g, const Vec& z, double p, const Vec& w,
               const ScoreMode& mode, uint64_t salt) {
  Vec scale = w.array().pow(0.5 - 1.0 / p) * g.array();
  ScoreMode m = mode;
  m.seed = mode.seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
  return leverage_scores(A, scale, m) + z;
}

}  // namespace

double lewis_residual(const SpMat& A, const Vec& g, const Vec& z, double p, const Vec& w) {
  Vec target = scores_for(A, g, z, p, w, ScoreMode::exact(), 0);
  return (w.array().log() - target.array().log()).abs().maxCoeff();
}

Vec lewis_fixed_point(const SpMat& A, const Vec& g, const Vec& z, double p, double tol,
                      const LewisOptions& opts) {
  const Index m = A.rows();
  if (!(p > 0.0 && p <= 2.0)) throw Error("lewis_fixed_point: p must be in (0,2]");
  validate_regularizer(z, m, A.cols());

  Vec w = Vec::Ones(m);
  if (p == 2.0) {
    // Fixed point immediately: the weight exponent vanishes.
    w = scores_for(A, g, z, p, w, opts.score_mode, 0);
    return w;
  }
  const double contraction = 1.0 - p / 2.0;
  int planned = static_cast<int>(std::ceil(std::log(std::log(std::max<double>(m, 3)) / tol) /
                                           std::log(1.0 / contraction))) +
                opts.safety_iters;
  planned = std::max(planned, 1);
  for (int it = 0; it < opts.max_iters; ++it) {
    Vec target = scores_for(A, g, z, p, w, opts.score_mode, it);
    Vec w_next = (w.array().pow(2.0 / p - 1.0) * target.array()).pow(p / 2.0);
    double step = (w_next.array().log() - w.array().log()).abs().maxCoeff();
    w = w_next;
    if (it + 1 >= planned) {
      // `step` upper-bounds the residual up to the contraction factor.
      if (step / std::max(1e-300, p / 2.0) <= tol && lewis_residual(A, g, z, p, w) <= tol)
        return w;
    }
  }
  throw Error("lewis_fixed_point: did not reach tolerance within max_iters");
}

LewisState::LewisState(const SpMat& A, const Vec& g, const Vec& z, const Config& cfg)
    : A_(A), g_(g), z_(z), cfg_(cfg) {
  if (!(cfg.p >= 0.5 && cfg.p < 2.0)) throw Error("LewisState: p must be in [1/2,2)");
  if (!(cfg.delta > 1.0)) throw Error("LewisState: delta must exceed 1");
  validate_regularizer(z_, A_.rows(), A_.cols());
  const int L =
      static_cast<int>(std::ceil(std::log(200.0 * cfg.delta) / std::log(4.0 / 3.0) + 1.0));
  Vec v1 = lewis_fixed_point(A_, g_, z_, cfg_.p, cfg_.eps / 2.0, cfg_.lewis);
  levels_.assign(L, v1);
  for (int j = 0; j + 1 < L; ++j) {
    Vec sigma = level_scores(levels_[j]);
    levels_[j + 1] =
        (levels_[j].array().pow(2.0 / cfg_.p - 1.0) * sigma.array()).pow(cfg_.p / 2.0);
  }
  g_last_query_ = g_;
}

Vec LewisState::level_scores(const Vec& v) const {
  Vec scale = v.array().pow(0.5 - 1.0 / cfg_.p) * g_.array();
  ScoreMode mode = cfg_.lewis.score_mode;
  if (mode.sketched) {
    // Sub-oracle accuracy eps/(40L); fresh sketch per level and per query.
    mode.eps = cfg_.eps / (40.0 * static_cast<double>(levels_.size()));
    mode.seed ^= 0x9e3779b97f4a7c15ULL * (query_count_ + 1);
  }
  return leverage_scores(A_, scale, mode) + z_;
}

void LewisState::scale(Index i, double b) {
  if (!(b >= 0.0) || !std::isfinite(b)) throw NonFiniteInput("scale value must be finite >= 0");
  g_[i] = b;
}

LewisState::QueryResult LewisState::query() {
  ++query_count_;
  const int L = static_cast<int>(levels_.size());
  if (!cfg_.practical) {
    // Theory-mode diagnostic: the per-query drift contract, with factor-2 slack.
    for (Index i = 0; i < g_.size(); ++i) {
      double lo = g_last_query_[i], cur = g_[i];
      if (lo > 0.0 && cur > 0.0 &&
          std::abs(std::log(cur / lo)) > 2.0 * cfg_.delta * cfg_.eps)
        throw DriftTooLarge("per-step scaling drift exceeds twice the contract");
    }
  }

  for (int j = 0; j + 1 < L; ++j) {
    Vec sigma = level_scores(levels_[j]);
    levels_[j + 1] =
        (levels_[j].array().pow(2.0 / cfg_.p - 1.0) * sigma.array()).pow(cfg_.p / 2.0);
  }

  QueryResult out;
  Vec& v1 = levels_.front();
  const Vec& vL = levels_.back();
  std::vector<bool> rewritten(v1.size(), false);
  for (Index i = 0; i < v1.size(); ++i) {
    if (std::abs(std::log(vL[i] / v1[i])) > cfg_.eps / 10.0) {
      v1[i] = vL[i];
      rewritten[i] = true;
    }
  }

  if (cfg_.practical && residual() > cfg_.eps) {
    // Reconverge and rewrite whatever moved.
    Vec fresh = lewis_fixed_point(A_, g_, z_, cfg_.p, cfg_.eps / 2.0, cfg_.lewis);
    for (Index i = 0; i < v1.size(); ++i) {
      if (std::abs(std::log(fresh[i] / v1[i])) > 1e-15) {
        v1[i] = fresh[i];
        rewritten[i] = true;
      }
    }
    for (int j = 1; j < L; ++j) levels_[j] = v1;
  }

  for (Index i = 0; i < v1.size(); ++i)
    if (rewritten[i]) out.changed.push_back(i);
  g_last_query_ = g_;
  out.weights = &levels_.front();
  return out;
}

double LewisState::residual() const {
  return lewis_residual(A_, g_, z_, cfg_.p, levels_.front());
}

}  // namespace boxip::scores
