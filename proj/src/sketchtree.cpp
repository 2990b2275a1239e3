#include "boxip/sketchtree.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace boxip::sketch {

namespace {

Index next_pow2(Index m) {
  Index p = 1;
  while (p < m) p <<= 1;
  return p;
}

}  // namespace

SketchTree::SketchTree(const SpMat& A, const Vec& g, uint64_t seed, double c_jl)
    : A_(A), g_(g) {
  if (A.rows() != g.size()) throw Error("SketchTree: dimension mismatch");
  if (g.minCoeff() < 0.0) throw Error("SketchTree: scaling must be nonnegative");
  m_ = A.rows();
  mp_ = next_pow2(std::max<Index>(m_, 1));
  levels_ = 0;
  while ((Index(1) << levels_) < mp_) ++levels_;
  accuracy_ = 1.0 / std::log(4.0 * std::max<double>(m_, 2));

  RngStream root(seed);
  nodes_.resize(levels_ + 1);
  const Index n = A_.cols();
  for (int l = 0; l <= levels_; ++l) {
    nodes_[l].resize(node_count_at(l));
    const Index span = rows_per_node(l);
    for (Index j = 0; j < node_count_at(l); ++j) {
      RngStream rs = root.fork(static_cast<uint64_t>(l) * (mp_ * 2) + j);
      Node& node = nodes_[l][j];
      node.J = linalg::jl_sketch(accuracy_, span, rs, c_jl);
      node.Q = Mat::Zero(node.J.rows(), n);
      const Index base = j * span;
      for (Index r = 0; r < span; ++r) {
        Index row = base + r;
        if (row >= m_ || g_[row] == 0.0) continue;
        for (SpMat::InnerIterator it(A_, row); it; ++it)
          node.Q.col(it.col()) += (g_[row] * it.value()) * node.J.col(r);
      }
    }
  }
}

void SketchTree::scale(Index i, double s) {
  if (i < 0 || i >= m_) throw Error("SketchTree::scale: index out of range");
  if (!(s >= 0.0) || !std::isfinite(s)) throw NonFiniteInput("scale value");
  const double diff = s - g_[i];
  if (diff != 0.0) {
    for (int l = 0; l <= levels_; ++l) {
      const Index span = rows_per_node(l);
      const Index j = i / span;
      const Index offset = i - j * span;
      Node& node = nodes_[l][j];
      for (SpMat::InnerIterator it(A_, i); it; ++it)
        node.Q.col(it.col()) += (diff * it.value()) * node.J.col(offset);
    }
  }
  g_[i] = s;
}

double SketchTree::row_value(const Vec& h, Index i) const {
  double acc = 0.0;
  for (SpMat::InnerIterator it(A_, i); it; ++it) acc += it.value() * h[it.col()];
  return g_[i] * acc;
}

std::optional<Index> SketchTree::sample(const Vec& h, double U, RngStream& rng) const {
  if (!(U > 0.0)) throw Error("SketchTree::sample: U must be positive");
  double z = 1.0;
  Index j = 0;
  for (int l = 0; l < levels_; ++l) {
    const Node& left = nodes_[l + 1][2 * j];
    const Node& right = nodes_[l + 1][2 * j + 1];
    const double r1 = (left.Q * h).squaredNorm();
    const double r2 = (right.Q * h).squaredNorm();
    const double tot = r1 + r2;
    if (!(tot > 0.0)) return std::nullopt;
    if (rng.next_double() < r1 / tot) {
      z *= r1 / tot;
      j = 2 * j;
    } else {
      z *= r2 / tot;
      j = 2 * j + 1;
    }
    if (z == 0.0) return std::nullopt;
  }
  if (j >= m_) return std::nullopt;  // padded zero row
  const double val = row_value(h, j);
  const double accept = val * val / (U * z);
  if (accept > 1.0 + 1e-9)
    throw BudgetTooSmall("sample: leaf rejection ratio exceeds 1; U below e^4 ||GAh||^2");
  if (rng.next_double() < accept) return j;
  return std::nullopt;
}

std::vector<Index> SketchTree::heavy_query(const Vec& h, double eps) const {
  if (!(eps > 0.0)) throw Error("heavy_query: eps must be positive");
  std::vector<Index> out;
  // Prune with a factor-2 safety margin on the sketched subtree norm;
  // surviving leaves are checked exactly, so no false positives survive.
  std::vector<std::pair<int, Index>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [l, j] = stack.back();
    stack.pop_back();
    const Node& node = nodes_[l][j];
    const double bound = 2.0 * (node.Q * h).norm();
    if (bound < eps) continue;
    if (l == levels_) {
      if (j < m_ && std::abs(row_value(h, j)) >= eps) out.push_back(j);
      continue;
    }
    stack.push_back({l + 1, 2 * j + 1});
    stack.push_back({l + 1, 2 * j});
  }
  std::sort(out.begin(), out.end());
  return out;
}

Vec SketchTree::enumerate_leaf_probabilities(const Vec& h, double U) const {
  Vec probs = Vec::Zero(m_);
  struct Frame {
    int l;
    Index j;
    double z;
  };
  std::vector<Frame> stack{{0, 0, 1.0}};
  while (!stack.empty()) {
    auto [l, j, z] = stack.back();
    stack.pop_back();
    if (z == 0.0) continue;
    if (l == levels_) {
      if (j >= m_) continue;
      const double val = row_value(h, j);
      const double accept = val * val / (U * z);
      if (accept > 1.0 + 1e-9)
        throw BudgetTooSmall("enumerate: leaf rejection ratio exceeds 1");
      probs[j] = z * std::min(accept, 1.0);
      continue;
    }
    const Node& left = nodes_[l + 1][2 * j];
    const Node& right = nodes_[l + 1][2 * j + 1];
    const double r1 = (left.Q * h).squaredNorm();
    const double r2 = (right.Q * h).squaredNorm();
    const double tot = r1 + r2;
    if (!(tot > 0.0)) continue;
    stack.push_back({l + 1, 2 * j, z * r1 / tot});
    stack.push_back({l + 1, 2 * j + 1, z * r2 / tot});
  }
  return probs;
}

double SketchTree::verify_sketches() const {
  double worst = 0.0;
  const Index n = A_.cols();
  for (int l = 0; l <= levels_; ++l) {
    const Index span = rows_per_node(l);
    for (Index j = 0; j < node_count_at(l); ++j) {
      const Node& node = nodes_[l][j];
      Mat Q = Mat::Zero(node.J.rows(), n);
      const Index base = j * span;
      for (Index r = 0; r < span; ++r) {
        Index row = base + r;
        if (row >= m_ || g_[row] == 0.0) continue;
        for (SpMat::InnerIterator it(A_, row); it; ++it)
          Q.col(it.col()) += (g_[row] * it.value()) * node.J.col(r);
      }
      worst = std::max(worst, (Q - node.Q).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

SampleMatrix sample_valid_independent(const Vec& delta_r, const Vec& sigma_bar, double gamma,
                                      double c_valid, double c_sample, RngStream& rng) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("independent sampler: gamma in (0,1)");
  require_finite(delta_r, "delta_r");
  require_finite(sigma_bar, "sigma_bar");
  const Index m = delta_r.size();
  const double logm = std::log(std::max<double>(m, 2));
  SampleMatrix R;
  for (Index i = 0; i < m; ++i) {
    double q = c_valid * c_valid * std::abs(delta_r[i]) / gamma +
               c_sample * sigma_bar[i] * logm / (gamma * gamma);
    q = std::min(q, 1.0);
    if (q <= 0.0) continue;
    if (q >= 1.0) {
      R.entries.emplace_back(i, 1.0);
    } else if (rng.next_double() < q) {
      R.entries.emplace_back(i, 1.0 / q);
    }
  }
  return R;
}

SampleMatrix sample_valid_proportional(const SketchTree& tree, const Vec& h,
                                       const Vec& tau_bar, double gamma,
                                       const ProportionalOptions& opts, RngStream& rng) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("proportional sampler: gamma in (0,1)");
  const Index m = tree.rows();
  const Index n = h.size();
  const double logm = std::log(std::max<double>(m, 2));
  const double sqn = std::sqrt(static_cast<double>(n));

  Vec dr(m);
  for (Index i = 0; i < m; ++i) dr[i] = tree.row_value(h, i);
  const double dr_norm2 = dr.squaredNorm();

  // Density q_i = C (sqrt(n) dr_i^2 + 1/(4 sqrt(n)) + 1.5 tau_i / 4) dominates
  // the mixture weights C1 sqrt(n) dr_i^2 + C2/sqrt(n) + C3 tau_i log(m)/gamma^2.
  const double C = std::max({opts.c1, 4.0 * opts.c2,
                             (8.0 / 3.0) * opts.c3 * logm / (gamma * gamma)});
  const double U = std::exp(4.0) * (static_cast<double>(m) / n + sqn);
  if (dr_norm2 > static_cast<double>(m) / n * (1 + 1e-9))
    throw BudgetTooSmall("proportional sampler: ||GAh||^2 exceeds m/n");
  const double S = 2.0 * C * U * sqn;
  const double c0 = std::min(100.0 * std::pow(opts.c_valid, 4.0) * logm / (gamma * gamma),
                             opts.c0_cap);
  const int64_t draws = static_cast<int64_t>(std::ceil(c0 * S));
  if (!opts.batched && draws > opts.draw_limit)
    throw Error("proportional sampler: draw count exceeds the configured limit");

  auto density = [&](Index i) {
    return C * (sqn * dr[i] * dr[i] + 0.25 / sqn + 1.5 * tau_bar[i] / 4.0);
  };

  // Uniform + tau channel: v_i = (1/4)(1/(U n) + 1.5 tau_i / (U sqrt(n))).
  Vec v(m);
  for (Index i = 0; i < m; ++i)
    v[i] = 0.25 * (1.0 / (U * n) + 1.5 * tau_bar[i] / (U * sqn));
  Vec vcdf(m);
  double acc = 0.0;
  for (Index i = 0; i < m; ++i) {
    acc += v[i];
    vcdf[i] = acc;
  }
  if (acc > 1.0) throw Error("proportional sampler: uniform channel mass exceeds 1");

  std::vector<double> weight(m, 0.0);
  const double per_draw = S / static_cast<double>(draws);
  if (opts.batched) {
    // One multinomial over the m+1 outcomes replaces the N categorical
    // draws exactly; counts come from sequential conditional binomials.
    std::mt19937_64 gen(rng.next_u64());
    int64_t remaining = draws;
    double prem = 1.0;
    for (Index i = 0; i < m && remaining > 0; ++i) {
      const double pi = 0.5 * (dr[i] * dr[i] / U + v[i]);
      const double cond = std::clamp(pi / prem, 0.0, 1.0);
      std::binomial_distribution<int64_t> bin(remaining, cond);
      const int64_t ci = bin(gen);
      weight[i] = static_cast<double>(ci) * per_draw / density(i);
      remaining -= ci;
      prem -= pi;
      if (prem <= 0.0) break;
    }
  } else {
    for (int64_t d = 0; d < draws; ++d) {
      std::optional<Index> pick;
      if (rng.next_double() < 0.5) {
        pick = tree.sample(h, U, rng);
      } else {
        double u = rng.next_double();
        if (u < acc) {
          auto it = std::lower_bound(vcdf.data(), vcdf.data() + m, u);
          pick = static_cast<Index>(it - vcdf.data());
        }
      }
      if (pick) weight[*pick] += per_draw / density(*pick);
    }
  }
  SampleMatrix R;
  for (Index i = 0; i < m; ++i)
    if (weight[i] > 0.0) R.entries.emplace_back(i, weight[i]);
  return R;
}

}  // namespace boxip::sketch
