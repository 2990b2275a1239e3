#pragma once

#include <optional>
#include <vector>

#include "boxip/common.hpp"
#include "boxip/linalg.hpp"
#include "boxip/rng.hpp"

namespace boxip::sketch {

/// Sparse random diagonal matrix: entries not listed are zero.
struct SampleMatrix {
  std::vector<std::pair<Index, double>> entries;  // (index, weight > 0), unique indices

  Vec dense_diagonal(Index m) const {
    Vec d = Vec::Zero(m);
    for (auto& [i, w] : entries) d[i] += w;
    return d;
  }
  /// R * v for an m-vector v (zero outside the listed entries).
  Vec apply(const Vec& v) const {
    Vec out = Vec::Zero(v.size());
    for (auto& [i, w] : entries) out[i] += w * v[i];
    return out;
  }
};

/// Binary segment tree of JL sketches over the rows of diag(g) A. Rows are
/// padded to a power of two with zero rows. Every node (level l, slot j)
/// stores Q^{l,j} = J^{l,j} [G A]^{l,j}; Scale keeps the identity exact.
class SketchTree {
 public:
  SketchTree(const SpMat& A, const Vec& g, uint64_t seed, double c_jl = 8.0);

  /// Set g_i <- s, updating every touched sketch.
  void scale(Index i, double s);

  /// One l2-proportional draw: returns j with probability (G A h)_j^2 / U,
  /// nothing with the residual probability. Requires U >= e^4 ||G A h||_2^2;
  /// throws BudgetTooSmall when the leaf rejection ratio exceeds 1.
  std::optional<Index> sample(const Vec& h, double U, RngStream& rng) const;

  /// Exactly { i : |(G A h)_i| >= eps }. The sketches only prune subtrees;
  /// every surviving leaf is verified with an exact dot product.
  std::vector<Index> heavy_query(const Vec& h, double eps) const;

  /// Recomputes J^{l,j} [G A]^{l,j} from scratch and compares to the stored
  /// sketches; returns the worst absolute deviation (bookkeeping identity).
  double verify_sketches() const;

  /// Exact per-row return probability of sample(h, U), computed by walking
  /// every tree path and multiplying the branch/rejection probabilities.
  /// Throws BudgetTooSmall if any leaf rejection ratio exceeds 1.
  Vec enumerate_leaf_probabilities(const Vec& h, double U) const;

  Index rows() const { return m_; }
  Index padded_rows() const { return mp_; }
  const Vec& scaling() const { return g_; }
  double row_value(const Vec& h, Index i) const;  // exact (G A h)_i

 private:
  Index node_count_at(int level) const { return Index(1) << level; }
  Index rows_per_node(int level) const { return mp_ >> level; }

  SpMat A_;
  Vec g_;
  Index m_ = 0, mp_ = 0;
  int levels_ = 0;  // leaf level index; level 0 is the root
  double accuracy_ = 0.0;
  // sketches_[l][j]: J (k x rows_per_node) and Q (k x n)
  struct Node {
    Mat J;
    Mat Q;
  };
  std::vector<std::vector<Node>> nodes_;
};

/// Independent Bernoulli sampling: q_i = min(1, C_valid^2 |dr_i| / gamma
/// + C_sample sigma_i log(m) / gamma^2), R_ii = 1/q_i with probability q_i.
SampleMatrix sample_valid_independent(const Vec& delta_r, const Vec& sigma_bar, double gamma,
                                      double c_valid, double c_sample, RngStream& rng);

struct ProportionalOptions {
  double c_valid = 4.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 4.0;
  double c0_cap = 1e4;
  int64_t draw_limit = 20000000;
  /// Draw the iid categorical counts as a multinomial (exact same law,
  /// O(m) per sample instead of O(N) tree descents). The per-draw outcome
  /// probabilities are computed from exact row values rather than the
  /// sketch walk, which realizes the identical distribution.
  bool batched = false;
};

/// Mixture sampler: averages C0*S iid draws, each a balanced coin between
/// the l2-proportional tree draw and a uniform+tau draw, reweighted by the
/// mixture density q. E[R] = I by construction.
SampleMatrix sample_valid_proportional(const SketchTree& tree, const Vec& h,
                                       const Vec& tau_bar, double gamma,
                                       const ProportionalOptions& opts, RngStream& rng);

}  // namespace boxip::sketch
