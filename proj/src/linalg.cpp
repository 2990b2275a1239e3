#include "boxip/linalg.hpp"

#include <cmath>
#include <unordered_set>

namespace boxip::linalg {

void validate_matrix(const SpMat& A) {
  std::unordered_set<Index> seen;
  for (Index i = 0; i < A.rows(); ++i) {
    seen.clear();
    int nnz = 0;
    for (SpMat::InnerIterator it(A, i); it; ++it) {
      if (!std::isfinite(it.value())) throw NonFiniteInput("matrix entry not finite");
      if (!seen.insert(it.col()).second)
        throw Error("duplicate column index in row " + std::to_string(i));
      ++nnz;
    }
    if (nnz == 0) throw Error("empty row " + std::to_string(i));
  }
}

bool max_row_nnz_at_most(const SpMat& A, int k) {
  for (Index i = 0; i < A.rows(); ++i) {
    int nnz = 0;
    for (SpMat::InnerIterator it(A, i); it; ++it) ++nnz;
    if (nnz > k) return false;
  }
  return true;
}

Mat normal_matrix_dense(const SpMat& A, const Vec& d) {
  Mat H = Mat::Zero(A.cols(), A.cols());
  for (Index i = 0; i < A.rows(); ++i) {
    for (SpMat::InnerIterator it(A, i); it; ++it) {
      for (SpMat::InnerIterator jt(A, i); jt; ++jt) {
        H(it.col(), jt.col()) += d[i] * it.value() * jt.value();
      }
    }
  }
  return H;
}

Eigen::SparseMatrix<double> normal_matrix_sparse(const SpMat& A, const Vec& d) {
  std::vector<Eigen::Triplet<double>> trips;
  for (Index i = 0; i < A.rows(); ++i) {
    for (SpMat::InnerIterator it(A, i); it; ++it) {
      for (SpMat::InnerIterator jt(A, i); jt; ++jt) {
        trips.emplace_back(it.col(), jt.col(), d[i] * it.value() * jt.value());
      }
    }
  }
  Eigen::SparseMatrix<double> H(A.cols(), A.cols());
  H.setFromTriplets(trips.begin(), trips.end());
  return H;
}

namespace {

bool is_sdd(const Eigen::SparseMatrix<double>& H) {
  for (Index j = 0; j < H.outerSize(); ++j) {
    double diag = 0.0, off = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(H, j); it; ++it) {
      if (it.row() == j)
        diag = it.value();
      else
        off += std::abs(it.value());
    }
    if (diag + 1e-14 * (diag + off) < off) return false;
  }
  return true;
}

SolveReport pcg_solve(const Eigen::SparseMatrix<double>& H, const Vec& rhs, double rel_tol) {
  const Index n = H.rows();
  Vec jacobi(n);
  double trace = 0.0;
  for (Index j = 0; j < n; ++j) {
    double diag = H.coeff(j, j);
    trace += diag;
    jacobi[j] = diag > 0.0 ? 1.0 / diag : 0.0;
  }
  if (!(trace > 0.0)) throw SingularSystem("normal matrix has nonpositive trace");

  Vec x = Vec::Zero(n);
  Vec r = rhs;
  Vec z = jacobi.asDiagonal() * r;
  Vec p = z;
  double rz = r.dot(z);
  const double bnorm = rhs.norm();
  // Tight l2 target; the energy-norm contract is checked against oracles.
  const double target = std::max(rel_tol * 1e-4, 1e-14) * std::max(bnorm, 1e-300);
  const int max_iter = static_cast<int>(4 * n + 200);
  int it = 0;
  for (; it < max_iter && r.norm() > target; ++it) {
    Vec Hp = H * p;
    double pHp = p.dot(Hp);
    if (!(pHp > 1e-12 * trace * p.squaredNorm() / std::max<double>(n, 1)) && pHp <= 0.0)
      break;  // direction left the range; residual is reported below
    double alpha = rz / pHp;
    x += alpha * p;
    r -= alpha * Hp;
    z = jacobi.asDiagonal() * r;
    double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  SolveReport rep;
  rep.solution = x;
  rep.residual_norm = (H * x - rhs).norm();
  rep.iterations = it;
  return rep;
}

}  // namespace

SolveReport solve_normal_equations(const SpMat& A, const Vec& d, const Vec& rhs,
                                   double rel_tol) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw Error("rel_tol must be in (0,1)");
  require_finite(d, "d");
  require_finite(rhs, "rhs");
  if (d.minCoeff() < 0.0) throw Error("diagonal scaling must be nonnegative");
  if (A.rows() != d.size() || A.cols() != rhs.size()) throw Error("dimension mismatch");

  if (max_row_nnz_at_most(A, 2)) {
    auto H = normal_matrix_sparse(A, d);
    if (is_sdd(H)) return pcg_solve(H, rhs, rel_tol);
  }

  Mat H = normal_matrix_dense(A, d);
  // Column equilibration: weights spanning many orders of magnitude are
  // routine near the end of a central path.
  Vec e(H.rows());
  for (Index j = 0; j < H.rows(); ++j)
    e[j] = H(j, j) > 0.0 ? 1.0 / std::sqrt(H(j, j)) : 1.0;
  Mat Hs = e.asDiagonal() * H * e.asDiagonal();
  Eigen::LDLT<Mat> ldlt(Hs);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < 1e-12)
    throw SingularSystem("normal matrix is numerically singular");
  SolveReport rep;
  rep.solution = e.asDiagonal() * ldlt.solve(Vec(e.asDiagonal() * rhs));
  // One refinement pass, cheap with the factorization in hand.
  Vec r = rhs - H * rep.solution;
  rep.solution += e.asDiagonal() * ldlt.solve(Vec(e.asDiagonal() * r));
  rep.residual_norm = (H * rep.solution - rhs).norm();
  rep.iterations = 2;
  return rep;
}

NormalOperator::NormalOperator(const SpMat& A, const Vec& d, double ridge_rel)
    : n_(A.cols()) {
  const Index m = A.rows();
  H_ = normal_matrix_dense(A, d);
  double ridge = 0.0;
  if (ridge_rel > 0.0) {
    ridge = ridge_rel * H_.diagonal().maxCoeff();
    H_.diagonal().array() += ridge;
  }
  const Index rows = m + (ridge > 0.0 ? n_ : 0);
  Mat B = Mat::Zero(rows, n_);
  for (Index i = 0; i < m; ++i) {
    if (d[i] == 0.0) continue;
    const double s = std::sqrt(d[i]);
    for (SpMat::InnerIterator it(A, i); it; ++it) B(i, it.col()) = s * it.value();
  }
  if (ridge > 0.0)
    for (Index j = 0; j < n_; ++j) B(m + j, j) = std::sqrt(ridge);
  Eigen::ColPivHouseholderQR<Mat> qr(B);
  R_ = qr.matrixR().topLeftCorner(n_, n_).triangularView<Eigen::Upper>();
  perm_ = qr.colsPermutation();
  const double rmax = R_.diagonal().cwiseAbs().maxCoeff();
  if (!(rmax > 0.0) || R_.diagonal().cwiseAbs().minCoeff() < 1e-15 * rmax)
    throw SingularSystem("normal operator is numerically singular");
}

Vec NormalOperator::solve_once(const Vec& rhs) const {
  // H = P R^T R P^T.
  Vec y = perm_.transpose() * rhs;
  Vec z = R_.transpose().triangularView<Eigen::Lower>().solve(y);
  Vec x = R_.triangularView<Eigen::Upper>().solve(z);
  return perm_ * x;
}

Vec NormalOperator::solve(const Vec& rhs) const {
  Vec x = solve_once(rhs);
  x += solve_once(Vec(rhs - H_ * x));
  return x;
}

double NormalOperator::quadform_inv(const Vec& v) const {
  Vec y = perm_.transpose() * v;
  Vec z = R_.transpose().triangularView<Eigen::Lower>().solve(y);
  return z.squaredNorm();
}

Mat jl_sketch(double eps, Index m, RngStream& rng, double c_jl) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error("jl_sketch: eps must be in (0,1)");
  const Index k =
      static_cast<Index>(std::ceil(c_jl / (eps * eps) * std::log(std::max<double>(m, 2))));
  Mat J(k, m);
  const double s = 1.0 / std::sqrt(static_cast<double>(k));
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < m; ++j) J(i, j) = s * rng.next_gaussian();
  return J;
}

Mat jl_sketch(double eps, Index m, uint64_t seed, double c_jl) {
  RngStream rng(seed);
  return jl_sketch(eps, m, rng, c_jl);
}

Vec apply_scaled(const SpMat& A, const Vec& g, const Vec& h) {
  if (A.rows() != g.size() || A.cols() != h.size()) throw Error("dimension mismatch");
  Vec out(A.rows());
  for (Index i = 0; i < A.rows(); ++i) {
    double acc = 0.0;
    for (SpMat::InnerIterator it(A, i); it; ++it) acc += it.value() * h[it.col()];
    out[i] = g[i] * acc;
  }
  return out;
}

Vec multiply_transpose(const SpMat& A, const Vec& y) {
  Vec out = Vec::Zero(A.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (SpMat::InnerIterator it(A, i); it; ++it) out[it.col()] += it.value() * y[i];
  return out;
}

Vec residual_compensated(const SpMat& A, const Vec& x, const Vec& x_comp, const Vec& b) {
  const Index n = A.cols();
  Vec sum = Vec::Zero(n), comp = Vec::Zero(n);
  for (Index j = 0; j < n; ++j) {
    sum[j] = -b[j];
  }
  for (Index i = 0; i < A.rows(); ++i) {
    for (SpMat::InnerIterator it(A, i); it; ++it) {
      const Index j = it.col();
      const double a = it.value();
      const double prod = a * x[i];
      const double prod_err = std::fma(a, x[i], -prod);
      two_sum_accumulate(sum[j], comp[j], prod);
      comp[j] += prod_err + a * x_comp[i];
    }
  }
  return sum + comp;
}

}  // namespace boxip::linalg
