#pragma once

#include <optional>
#include <vector>

#include "boxip/common.hpp"
#include "boxip/linalg.hpp"

namespace boxip::scores {

/// How leverage scores are computed: exact projection diagonal, or the
/// sketched row-norm estimate with accuracy eps.
struct ScoreMode {
  bool sketched = false;
  double eps = 0.25;
  uint64_t seed = 0;

  static ScoreMode exact() { return {}; }
  static ScoreMode sketch(double eps, uint64_t seed) { return {true, eps, seed}; }
};

/// Leverage scores of diag(g) A. Exact mode returns
/// diag(GA (A^T G^2 A)^{-1} A^T G); sketched mode estimates the row norms
/// of the projection through a JL sketch, within factor e^{+-eps} w.h.p.
Vec leverage_scores(const SpMat& A, const Vec& g, const ScoreMode& mode = ScoreMode::exact());

/// Regularizer vector invariants: z >= n/m entrywise and ||z||_1 <= 4n.
void validate_regularizer(const Vec& z, Index m, Index n);

struct LewisOptions {
  ScoreMode score_mode = ScoreMode::exact();
  int max_iters = 500;
  int safety_iters = 5;
};

/// Regularized lp Lewis weights of diag(g) A: the fixed point of
///   w = sigma(diag(w)^{1/2-1/p} G A) + z,
/// computed by the multiplicative contraction from w = 1. Converges to
/// log-scale residual <= tol; p in (0,2] (p = 2 is leverage scores + z,
/// reached in one step).
Vec lewis_fixed_point(const SpMat& A, const Vec& g, const Vec& z, double p, double tol,
                      const LewisOptions& opts = {});

/// Log-scale fixed point residual ||log w - log(sigma(W^{1/2-1/p} G A) + z)||_inf.
double lewis_residual(const SpMat& A, const Vec& g, const Vec& z, double p, const Vec& w);

/// Multi-level lazy maintenance of regularized Lewis weights under
/// row-scaling updates. Levels v^(1..L) follow the contraction recursion;
/// v^(1) is rewritten lazily, only when the converged level drifts past
/// e^{eps/10}.
class LewisState {
 public:
  struct Config {
    double p = 1.0;
    double eps = 1e-3;     // target accuracy of the maintained weights
    double delta = 2.0;    // per-query drift bound on g (log scale, delta*eps)
    bool practical = true; // verify residual after query, reconverge on failure
    LewisOptions lewis;
  };

  LewisState(const SpMat& A, const Vec& g, const Vec& z, const Config& cfg);

  void scale(Index i, double b);

  struct QueryResult {
    const Vec* weights;          // pointer to v^(1)
    std::vector<Index> changed;  // indices rewritten since the last query
  };
  QueryResult query();

  const Vec& weights() const { return levels_.front(); }
  int level_count() const { return static_cast<int>(levels_.size()); }
  double eps() const { return cfg_.eps; }
  /// Measured fixed-point residual of the maintained v^(1).
  double residual() const;

 private:
  Vec level_scores(const Vec& v) const;

  SpMat A_;
  Vec g_;
  Vec z_;
  Config cfg_;
  std::vector<Vec> levels_;  // v^(1) .. v^(L)
  Vec g_last_query_;
  uint64_t query_count_ = 0;
};

}  // namespace boxip::scores
