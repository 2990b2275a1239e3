#pragma once

#include <optional>

#include "boxip/common.hpp"
#include "boxip/rng.hpp"

namespace boxip::linalg {

/// Result of a normal-equation solve. `residual_norm` is the verified
/// l2 norm of A^T D A x - rhs at exit.
struct SolveReport {
  Vec solution;
  double residual_norm = 0.0;
  int iterations = 0;
};

/// Checks the structural invariants of a row-compressed matrix: finite
/// values, no duplicate column index within a row, no empty rows.
void validate_matrix(const SpMat& A);

/// True if every row of A has at most `k` stored nonzeros.
bool max_row_nnz_at_most(const SpMat& A, int k);

/// Dense n x n Gram matrix A^T diag(d) A.
Mat normal_matrix_dense(const SpMat& A, const Vec& d);

/// Sparse n x n Gram matrix A^T diag(d) A.
Eigen::SparseMatrix<double> normal_matrix_sparse(const SpMat& A, const Vec& d);

/// Solves A^T diag(d) A x = rhs to relative accuracy rel_tol in the
/// A^T D A energy norm. Uses preconditioned conjugate gradient (Jacobi)
/// when A has at most two nonzeros per row and the Gram matrix is SDD;
/// a dense Cholesky factorization otherwise. PCG also handles singular
/// but consistent systems (rhs in the range).
SolveReport solve_normal_equations(const SpMat& A, const Vec& d, const Vec& rhs,
                                   double rel_tol);

/// Factored A^T diag(d) A, reusable for several solves with the same
/// right-hand sides family plus inverse-weighted quadratic forms. Factors
/// D^{1/2} A by column-pivoted QR, which tolerates the squared condition
/// number of the Gram form.
class NormalOperator {
 public:
  NormalOperator() = default;
  /// ridge_rel > 0 adds ridge_rel * max_j (A^T D A)_jj to the diagonal,
  /// factored stably through the stacked QR of [D^{1/2} A; sqrt(ridge) I].
  /// This bounds the amplification of near-null components, matching the
  /// approximate-inverse semantics the solver contract permits.
  NormalOperator(const SpMat& A, const Vec& d, double ridge_rel = 0.0);

  Vec solve(const Vec& rhs) const;
  /// v^T (A^T D A + ridge)^{-1} v.
  double quadform_inv(const Vec& v) const;
  bool valid() const { return n_ > 0; }

 private:
  Vec solve_once(const Vec& rhs) const;

  Index n_ = 0;
  Mat H_;
  Mat R_;  // upper-triangular factor of the (possibly ridged) stack
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> perm_;
};

/// Gaussian JL sketch: k x m matrix of iid N(0, 1/k) entries with
/// k = ceil(c_jl * eps^-2 * log(max(m,2))). Norm-preserving within
/// factor e^{+-eps} w.h.p. for any fixed vector.
Mat jl_sketch(double eps, Index m, RngStream& rng, double c_jl = 8.0);
Mat jl_sketch(double eps, Index m, uint64_t seed, double c_jl = 8.0);

/// diag(g) * A * h, exact, O(nnz(A)).
Vec apply_scaled(const SpMat& A, const Vec& g, const Vec& h);

/// A^T y for an m-vector y.
Vec multiply_transpose(const SpMat& A, const Vec& y);

/// A^T (x + x_comp) - b with compensated products and Neumaier summation.
/// Resolves residuals far below the naive cancellation floor, which is what
/// keeps near-null constraint directions clean at extreme path parameters.
Vec residual_compensated(const SpMat& A, const Vec& x, const Vec& x_comp, const Vec& b);

/// Error-free transform: adds inc to (value, comp) so that value + comp
/// tracks the exact sum.
inline void two_sum_accumulate(double& value, double& comp, double inc) {
  const double total = inc + comp;
  const double s = value + total;
  const double bb = s - value;
  comp = (value - (s - bb)) + (total - bb);
  value = s;
}

}  // namespace boxip::linalg
