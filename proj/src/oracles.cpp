#include "boxip/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/SVD>

namespace boxip::oracles {

namespace {

constexpr int64_t kInf64 = std::numeric_limits<int64_t>::max() / 4;

// Residual-arc representation shared by the flow oracles.
struct ResArc {
  int to;
  int64_t cap;
  int64_t cost;
  int rev;       // index of the reverse arc in adj[to]
  int edge_id;   // original edge, -1 for reverse arcs
};

struct ResGraph {
  std::vector<std::vector<ResArc>> adj;

  explicit ResGraph(int n) : adj(n) {}

  void add_edge(int u, int v, int64_t cap, int64_t cost, int id) {
    adj[u].push_back({v, cap, cost, static_cast<int>(adj[v].size()), id});
    adj[v].push_back({u, 0, -cost, static_cast<int>(adj[u].size()) - 1, -1});
  }
};

// Bellman-Ford from `src`; dist = nullptr entries stay at kInf64 when
// unreachable. Returns a vertex on a negative cycle (or -1).
int bellman_ford(const ResGraph& g, int src, std::vector<int64_t>& dist,
                 std::vector<std::pair<int, int>>& parent) {
  const int n = static_cast<int>(g.adj.size());
  dist.assign(n, kInf64);
  parent.assign(n, {-1, -1});
  if (src >= 0) dist[src] = 0;
  else dist.assign(n, 0);  // virtual super-source: detect any negative cycle
  int changed = -1;
  for (int round = 0; round < n; ++round) {
    changed = -1;
    for (int u = 0; u < n; ++u) {
      if (dist[u] >= kInf64) continue;
      for (int k = 0; k < static_cast<int>(g.adj[u].size()); ++k) {
        const ResArc& a = g.adj[u][k];
        if (a.cap <= 0) continue;
        if (dist[u] + a.cost < dist[a.to]) {
          dist[a.to] = dist[u] + a.cost;
          parent[a.to] = {u, k};
          changed = a.to;
        }
      }
    }
    if (changed < 0) break;
  }
  return changed;
}

void cancel_negative_cycles(ResGraph& g) {
  const int n = static_cast<int>(g.adj.size());
  std::vector<int64_t> dist;
  std::vector<std::pair<int, int>> parent;
  while (true) {
    int touched = bellman_ford(g, -1, dist, parent);
    if (touched < 0) return;
    // Walk back n steps to land inside the cycle.
    int v = touched;
    for (int i = 0; i < n; ++i) v = parent[v].first;
    // Collect the cycle and its bottleneck.
    std::vector<std::pair<int, int>> cyc;
    int64_t bottleneck = kInf64;
    int u = v;
    do {
      auto [pu, pk] = parent[u];
      cyc.push_back({pu, pk});
      bottleneck = std::min(bottleneck, g.adj[pu][pk].cap);
      u = pu;
    } while (u != v);
    for (auto [pu, pk] : cyc) {
      ResArc& a = g.adj[pu][pk];
      a.cap -= bottleneck;
      g.adj[a.to][a.rev].cap += bottleneck;
    }
  }
}

}  // namespace

OracleResult ssp_mincost(const OracleFlowProblem& p) {
  if (p.n > 50) throw Error("ssp_mincost: instance too large for the oracle");
  ResGraph g(p.n);
  for (int i = 0; i < static_cast<int>(p.edges.size()); ++i) {
    const auto& e = p.edges[i];
    if (e.cap < 0) throw Error("negative capacity");
    if (e.tail == e.head) continue;  // handled below via direct saturation
    g.add_edge(e.tail, e.head, e.cap, e.cost, i);
  }

  cancel_negative_cycles(g);

  int64_t routed = 0;
  std::vector<int64_t> dist;
  std::vector<std::pair<int, int>> parent;
  while (routed < p.flow_value) {
    bellman_ford(g, p.source, dist, parent);
    if (dist[p.sink] >= kInf64) throw Infeasible("no flow of the requested value exists");
    int64_t push = p.flow_value - routed;
    for (int v = p.sink; v != p.source;) {
      auto [u, k] = parent[v];
      push = std::min(push, g.adj[u][k].cap);
      v = u;
    }
    for (int v = p.sink; v != p.source;) {
      auto [u, k] = parent[v];
      ResArc& a = g.adj[u][k];
      a.cap -= push;
      g.adj[a.to][a.rev].cap += push;
      v = u;
    }
    routed += push;
  }
  // Cycles created by the augmentations can again be profitable.
  cancel_negative_cycles(g);

  Vec flows = Vec::Zero(p.edges.size());
  long double total = 0.0L;
  for (int u = 0; u < p.n; ++u) {
    for (const ResArc& a : g.adj[u]) {
      if (a.edge_id < 0) continue;
      int64_t f = p.edges[a.edge_id].cap - a.cap;
      flows[a.edge_id] = static_cast<double>(f);
      total += static_cast<long double>(f) * p.edges[a.edge_id].cost;
    }
  }
  for (int i = 0; i < static_cast<int>(p.edges.size()); ++i) {
    const auto& e = p.edges[i];
    if (e.tail == e.head && e.cost < 0) {
      flows[i] = static_cast<double>(e.cap);
      total += static_cast<long double>(e.cap) * e.cost;
    }
  }
  OracleResult r;
  r.value = static_cast<double>(total);
  r.witness = flows;
  r.method = OracleResult::Method::Ssp;
  return r;
}

OracleResult dinic_maxflow(const OracleFlowProblem& p) {
  if (p.n > 200) throw Error("dinic_maxflow: instance too large for the oracle");
  ResGraph g(p.n);
  for (int i = 0; i < static_cast<int>(p.edges.size()); ++i) {
    const auto& e = p.edges[i];
    if (e.tail == e.head) continue;
    g.add_edge(e.tail, e.head, e.cap, 0, i);
  }
  const int n = p.n;
  std::vector<int> level(n), ptr(n);

  auto bfs = [&]() {
    std::fill(level.begin(), level.end(), -1);
    std::vector<int> q{p.source};
    level[p.source] = 0;
    for (size_t qi = 0; qi < q.size(); ++qi) {
      int u = q[qi];
      for (const ResArc& a : g.adj[u]) {
        if (a.cap > 0 && level[a.to] < 0) {
          level[a.to] = level[u] + 1;
          q.push_back(a.to);
        }
      }
    }
    return level[p.sink] >= 0;
  };

  std::function<int64_t(int, int64_t)> dfs = [&](int u, int64_t f) -> int64_t {
    if (u == p.sink || f == 0) return f;
    for (int& k = ptr[u]; k < static_cast<int>(g.adj[u].size()); ++k) {
      ResArc& a = g.adj[u][k];
      if (a.cap > 0 && level[a.to] == level[u] + 1) {
        if (int64_t pushed = dfs(a.to, std::min(f, a.cap))) {
          a.cap -= pushed;
          g.adj[a.to][a.rev].cap += pushed;
          return pushed;
        }
      }
    }
    return 0;
  };

  int64_t flow = 0;
  if (p.source != p.sink) {
    while (bfs()) {
      std::fill(ptr.begin(), ptr.end(), 0);
      while (int64_t pushed = dfs(p.source, kInf64)) flow += pushed;
    }
  }
  Vec flows = Vec::Zero(p.edges.size());
  for (int u = 0; u < n; ++u)
    for (const ResArc& a : g.adj[u])
      if (a.edge_id >= 0) flows[a.edge_id] = static_cast<double>(p.edges[a.edge_id].cap - a.cap);
  OracleResult r;
  r.value = static_cast<double>(flow);
  r.witness = flows;
  r.method = OracleResult::Method::Dinic;
  return r;
}

OracleResult enumerate_lp(const OracleLp& lp) {
  const Index m = lp.A.rows(), n = lp.A.cols();
  if (m > 14) throw Error("enumerate_lp: m too large for the oracle");
  Mat Ad = Mat(lp.A);
  double best = std::numeric_limits<double>::infinity();
  Vec best_x;
  const double tol = 1e-9 * (1.0 + lp.upper.cwiseAbs().maxCoeff() + lp.lower.cwiseAbs().maxCoeff());

  std::vector<Index> freeset(n);
  // Choose n free coordinates, everything else pinned at a bound.
  std::function<void(Index, Index)> choose = [&](Index start, Index picked) {
    if (picked == n) {
      std::vector<Index> bound;
      for (Index i = 0, f = 0; i < m; ++i) {
        if (f < n && freeset[f] == i) ++f;
        else bound.push_back(i);
      }
      // Columns of M are the free rows of A; solve M x_F = b - contributions.
      Mat M(n, n);
      for (Index j = 0; j < n; ++j) M.col(j) = Ad.row(freeset[j]).transpose();
      Eigen::FullPivLU<Mat> lu(M);
      if (!lu.isInvertible()) return;
      const Index nb = static_cast<Index>(bound.size());
      for (uint64_t mask = 0; mask < (1ULL << nb); ++mask) {
        Vec x(m);
        Vec rhs = lp.b;
        for (Index t = 0; t < nb; ++t) {
          Index i = bound[t];
          double v = (mask >> t) & 1 ? lp.upper[i] : lp.lower[i];
          x[i] = v;
          rhs -= v * Ad.row(i).transpose();
        }
        Vec xf = lu.solve(rhs);
        bool ok = true;
        for (Index j = 0; j < n && ok; ++j) {
          Index i = freeset[j];
          if (xf[j] < lp.lower[i] - tol || xf[j] > lp.upper[i] + tol) ok = false;
          x[i] = xf[j];
        }
        if (!ok) continue;
        double obj = lp.c.dot(x);
        if (obj < best) {
          best = obj;
          best_x = x;
        }
      }
      return;
    }
    for (Index i = start; i < m; ++i) {
      freeset[picked] = i;
      choose(i + 1, picked + 1);
    }
  };
  choose(0, 0);

  if (!best_x.size()) throw Infeasible("no feasible vertex");
  // Re-verify witness feasibility before returning.
  if ((Ad.transpose() * best_x - lp.b).lpNorm<Eigen::Infinity>() > 1e-7)
    throw Error("enumerate_lp: witness fails the equality constraints");
  OracleResult r;
  r.value = best;
  r.witness = best_x;
  r.method = OracleResult::Method::EnumerateLp;
  return r;
}

OracleResult enumerate_l1(const SpMat& A, const Vec& c) {
  const Index m = A.rows(), n = A.cols();
  if (m > 20 || n > 4) throw Error("enumerate_l1: instance too large for the oracle");
  Mat Ad = Mat(A);
  double best = std::numeric_limits<double>::infinity();
  Vec best_z = Vec::Zero(n);
  std::vector<Index> rows(n);
  std::function<void(Index, Index)> choose = [&](Index start, Index picked) {
    if (picked == n) {
      Mat S(n, n);
      Vec rhs(n);
      for (Index j = 0; j < n; ++j) {
        S.row(j) = Ad.row(rows[j]);
        rhs[j] = -c[rows[j]];
      }
      Eigen::FullPivLU<Mat> lu(S);
      if (!lu.isInvertible()) return;
      Vec z = lu.solve(rhs);
      double val = (Ad * z + c).lpNorm<1>();
      if (val < best) {
        best = val;
        best_z = z;
      }
      return;
    }
    for (Index i = start; i < m; ++i) {
      rows[picked] = i;
      choose(i + 1, picked + 1);
    }
  };
  choose(0, 0);
  // z = 0 covers degenerate cases where no subset improves.
  double zero_val = c.lpNorm<1>();
  if (zero_val < best) {
    best = zero_val;
    best_z = Vec::Zero(n);
  }
  OracleResult r;
  r.value = best;
  r.witness = best_z;
  r.method = OracleResult::Method::EnumerateL1;
  return r;
}

OracleResult value_iteration(const OracleMdp& mdp, int iters) {
  Vec v = Vec::Zero(mdp.num_states);
  for (int t = 0; t < iters; ++t) {
    Vec next(mdp.num_states);
    for (int i = 0; i < mdp.num_states; ++i) {
      double bestq = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.num_actions; ++a) {
        double q = mdp.rewards[i][a] + mdp.discount * mdp.transitions[i][a].dot(v);
        bestq = std::max(bestq, q);
      }
      next[i] = bestq;
    }
    double change = (next - v).lpNorm<Eigen::Infinity>();
    v = next;
    if (change < 1e-14) break;
  }
  OracleResult r;
  r.value = v.size() ? v.maxCoeff() : 0.0;
  r.witness = v;
  r.method = OracleResult::Method::ValueIteration;
  return r;
}

Vec policy_value(const OracleMdp& mdp, const std::vector<int>& pi) {
  const int S = mdp.num_states;
  Mat M = Mat::Identity(S, S);
  Vec r(S);
  for (int i = 0; i < S; ++i) {
    M.row(i) -= mdp.discount * mdp.transitions[i][pi[i]].transpose();
    r[i] = mdp.rewards[i][pi[i]];
  }
  return M.fullPivLu().solve(r);
}

OracleResult dense_scores(const SpMat& A, const Vec& g) {
  Mat GA = g.asDiagonal() * Mat(A);
  Eigen::JacobiSVD<Mat> svd(GA, Eigen::ComputeThinU);
  const double cutoff =
      std::numeric_limits<double>::epsilon() * std::max(GA.rows(), GA.cols()) *
      svd.singularValues().cwiseAbs().maxCoeff();
  Index rank = 0;
  for (Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > cutoff) ++rank;
  Vec sigma(GA.rows());
  for (Index i = 0; i < GA.rows(); ++i) sigma[i] = svd.matrixU().row(i).head(rank).squaredNorm();
  OracleResult r;
  r.value = sigma.sum();
  r.witness = sigma;
  r.method = OracleResult::Method::Dense;
  return r;
}

OracleResult dense_lewis(const SpMat& A, const Vec& g, const Vec& z, double p) {
  const Index m = A.rows();
  Vec w = Vec::Ones(m);
  const double expo = 0.5 - 1.0 / p;
  for (int it = 0; it < 500; ++it) {
    Vec scale = w.array().pow(expo) * g.array();
    Vec sigma = dense_scores(A, scale).witness;
    Vec target = sigma + z;
    Vec w_next = (w.array().pow(2.0 / p - 1.0) * target.array()).pow(p / 2.0);
    double err = (w_next.array().log() - w.array().log()).abs().maxCoeff();
    w = w_next;
    if (err < 1e-14) break;
  }
  OracleResult r;
  r.value = w.sum();
  r.witness = w;
  r.method = OracleResult::Method::Dense;
  return r;
}

OracleResult maximize_tau_inf_ball(const Vec& g, const Vec& tau, double c_norm) {
  const Index m = g.size();
  Vec ga = g.cwiseAbs();

  // Inner problem for a fixed cap t: water-fill h_i = min(t, nu*|g_i|/tau_i)
  // with nu found by bisection so that ||h||_tau = (1-t)/c_norm.
  auto inner = [&](double t) -> std::pair<double, Vec> {
    const double rho = (1.0 - t) / c_norm;
    if (t < 0.0 || rho < 0.0) return {-1.0, Vec()};
    auto tau_norm_at = [&](double nu) {
      double s = 0.0;
      for (Index i = 0; i < m; ++i) {
        double hi = std::min(t, nu * ga[i] / tau[i]);
        s += tau[i] * hi * hi;
      }
      return std::sqrt(s);
    };
    Vec h(m);
    double full = tau_norm_at(std::numeric_limits<double>::infinity());
    double nu;
    if (full <= rho) {
      nu = std::numeric_limits<double>::infinity();
    } else {
      double lo = 0.0, hi = 1.0;
      while (tau_norm_at(hi) < rho) hi *= 2.0;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (tau_norm_at(mid) < rho ? lo : hi) = mid;
      }
      nu = 0.5 * (lo + hi);
    }
    double obj = 0.0;
    for (Index i = 0; i < m; ++i) {
      double hi = std::min(t, nu * ga[i] / tau[i]);
      h[i] = (g[i] >= 0 ? hi : -hi);
      obj += ga[i] * hi;
    }
    return {obj, h};
  };

  double best = -1.0, best_t = 0.0;
  const int grid = 800;
  for (int k = 0; k <= grid; ++k) {
    double t = static_cast<double>(k) / grid;
    double obj = inner(t).first;
    if (obj > best) {
      best = obj;
      best_t = t;
    }
  }
  // Golden-section refinement around the best grid point (objective is
  // concave in t).
  double a = std::max(0.0, best_t - 1.5 / grid), b = std::min(1.0, best_t + 1.5 / grid);
  const double gr = 0.6180339887498949;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = inner(x1).first, f2 = inner(x2).first;
  for (int it = 0; it < 120; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = inner(x2).first;
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = inner(x1).first;
    }
  }
  auto [obj, h] = inner(0.5 * (a + b));
  if (obj < best) {
    auto bi = inner(best_t);
    obj = bi.first;
    h = bi.second;
  }
  OracleResult r;
  r.value = obj;
  r.witness = h;
  r.method = OracleResult::Method::Dense;
  return r;
}

}  // namespace boxip::oracles
