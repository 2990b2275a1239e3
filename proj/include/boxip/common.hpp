#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace boxip {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Base class for all solver errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct SingularSystem : Error {
  explicit SingularSystem(const std::string& what) : Error(what) {}
};
struct NonFiniteInput : Error {
  explicit NonFiniteInput(const std::string& what) : Error(what) {}
};
struct OutOfDomain : Error {
  explicit OutOfDomain(const std::string& what) : Error(what) {}
};
struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& what) : Error(what) {}
};
struct BudgetTooSmall : Error {
  explicit BudgetTooSmall(const std::string& what) : Error(what) {}
};
struct DriftTooLarge : Error {
  explicit DriftTooLarge(const std::string& what) : Error(what) {}
};
struct CenteringLost : Error {
  explicit CenteringLost(const std::string& what) : Error(what) {}
};
struct CenteringCheckFailed : Error {
  explicit CenteringCheckFailed(const std::string& what) : Error(what) {}
};
struct Infeasible : Error {
  explicit Infeasible(const std::string& what) : Error(what) {}
};
struct RetriesExhausted : Error {
  explicit RetriesExhausted(const std::string& what) : Error(what) {}
};
struct ParseError : Error {
  int line;
  ParseError(int line_, const std::string& what)
      : Error("line " + std::to_string(line_) + ": " + what), line(line_) {}
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void require_finite(const Vec& v, const char* name) {
  if (!v.allFinite()) throw NonFiniteInput(std::string(name) + " contains NaN/Inf");
}

/// u approx_eps v entrywise: exp(-eps) v <= u <= exp(eps) v, both strictly positive.
inline bool approx_eps(const Vec& u, const Vec& v, double eps) {
  if (u.size() != v.size()) return false;
  for (Index i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0) || !(v[i] > 0.0)) return false;
    double r = std::log(u[i] / v[i]);
    if (std::abs(r) > eps) return false;
  }
  return true;
}

inline bool approx_eps(double u, double v, double eps) {
  if (!(u > 0.0) || !(v > 0.0)) return false;
  return std::abs(std::log(u / v)) <= eps;
}

}  // namespace boxip
