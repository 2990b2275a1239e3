#include "boxip/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "boxip/rng.hpp"

namespace boxip::flow {

void FlowInstance::validate() const {
  if (n < 2) throw Error("flow instance needs at least two vertices");
  if (source < 0 || source >= n || sink < 0 || sink >= n || source == sink)
    throw Error("bad source/sink");
  if (flow_value < 0) throw Error("negative flow value");
  for (const auto& e : edges) {
    if (e.tail < 0 || e.tail >= n || e.head < 0 || e.head >= n)
      throw Error("edge endpoint out of range");
    if (e.cap < 0) throw Error("negative capacity");
  }
}

int64_t FlowInstance::max_capacity() const {
  int64_t w = 0;
  for (const auto& e : edges) w = std::max(w, e.cap);
  return w;
}

int64_t FlowInstance::max_abs_cost() const {
  int64_t w = 0;
  for (const auto& e : edges) w = std::max(w, std::abs(e.cost));
  return w;
}

int64_t FlowInstance::data_bound() const {
  return std::max<int64_t>({max_capacity(), max_abs_cost(), 1});
}

DemandReduction reduce_demands(int n, const std::vector<Edge>& edges,
                               const std::vector<int64_t>& demand) {
  if (static_cast<int>(demand.size()) != n) throw Error("demand vector has wrong length");
  int64_t supply = 0, deficit = 0;
  for (int64_t d : demand) {
    if (d > 0) supply += d;
    if (d < 0) deficit -= d;
  }
  if (supply != deficit) throw Infeasible("total supply does not match total demand");

  DemandReduction out;
  // Exactly one supplier and one consumer: keep the graph as-is.
  int pos = -1, neg = -1, npos = 0, nneg = 0;
  for (int v = 0; v < n; ++v) {
    if (demand[v] > 0) {
      pos = v;
      ++npos;
    } else if (demand[v] < 0) {
      neg = v;
      ++nneg;
    }
  }
  if (npos == 1 && nneg == 1) {
    out.instance = {n, edges, pos, neg, supply};
    out.extra_edges = 0;
    return out;
  }
  if (npos == 0 && nneg == 0) {
    // Circulation: pick arbitrary distinct endpoints with F = 0.
    out.instance = {n, edges, 0, std::min(1, n - 1), 0};
    out.extra_edges = 0;
    return out;
  }
  FlowInstance inst;
  inst.n = n + 2;
  inst.edges = edges;
  inst.source = n;
  inst.sink = n + 1;
  inst.flow_value = supply;
  for (int v = 0; v < n; ++v) {
    if (demand[v] > 0) inst.edges.push_back({n, v, demand[v], 0});
    if (demand[v] < 0) inst.edges.push_back({v, n + 1, -demand[v], 0});
  }
  out.extra_edges = static_cast<int>(inst.edges.size() - edges.size());
  out.instance = std::move(inst);
  return out;
}

AugmentedFlow augment_with_star(const FlowInstance& inst, const Vec* cost_override) {
  inst.validate();
  AugmentedFlow aug;
  const int n = inst.n;
  const int64_t W = inst.data_bound();
  aug.bound_w = W;

  double max_abs_cost = static_cast<double>(inst.max_abs_cost());
  if (cost_override) {
    if (cost_override->size() != static_cast<Index>(inst.edges.size()))
      throw Error("cost override has wrong length");
    max_abs_cost = cost_override->cwiseAbs().maxCoeff();
  }
  const double u_max = std::max<double>(static_cast<double>(inst.max_capacity()), 1.0);
  aug.star_cost = 50.0 * static_cast<double>(inst.edges.size() ? inst.edges.size() : 1) *
                  u_max * std::max(std::ceil(max_abs_cost), 1.0);

  for (int i = 0; i < static_cast<int>(inst.edges.size()); ++i) {
    if (inst.edges[i].cap > 0 && inst.edges[i].tail != inst.edges[i].head)
      aug.kept.push_back(i);
    else
      aug.dropped.push_back(i);
  }
  const Index mk = static_cast<Index>(aug.kept.size());
  const Index m_aug = mk + 2 * n;
  aug.star_begin = mk;

  // Demand vector: net inflow -F at the source, +F at the sink.
  Vec b = Vec::Zero(n);
  b[inst.source] -= static_cast<double>(inst.flow_value);
  b[inst.sink] += static_cast<double>(inst.flow_value);

  // Midpoint flow on the kept edges; its excess is routed through the star.
  Vec excess = -b;  // excess(v) = [A^T x - b]_v, seeded with -b
  aug.x_init.resize(m_aug);
  std::vector<Eigen::Triplet<double>> trips;
  Vec cost(m_aug), lower = Vec::Zero(m_aug), upper(m_aug);
  for (Index r = 0; r < mk; ++r) {
    const Edge& e = inst.edges[aug.kept[r]];
    trips.emplace_back(r, e.tail, -1.0);
    trips.emplace_back(r, e.head, 1.0);
    const double xr = static_cast<double>(e.cap) / 2.0;
    aug.x_init[r] = xr;
    excess[e.head] += xr;
    excess[e.tail] -= xr;
    upper[r] = static_cast<double>(e.cap);
    cost[r] = cost_override ? (*cost_override)[aug.kept[r]]
                            : static_cast<double>(e.cost);
  }
  // Star edges: (v, z) rows then (z, v) rows, hub column dropped.
  for (int v = 0; v < n; ++v) {
    const Index row_vz = mk + 2 * v;
    const Index row_zv = mk + 2 * v + 1;
    trips.emplace_back(row_vz, v, -1.0);
    trips.emplace_back(row_zv, v, 1.0);
    double x_vz = 1.0, x_zv = 1.0;
    if (excess[v] > 0)
      x_vz += excess[v];
    else
      x_zv -= excess[v];
    aug.x_init[row_vz] = x_vz;
    aug.x_init[row_zv] = x_zv;
    upper[row_vz] = 2.0 * x_vz;
    upper[row_zv] = 2.0 * x_zv;
    cost[row_vz] = aug.star_cost;
    cost[row_zv] = aug.star_cost;
  }

  SpMat A(m_aug, n);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  aug.lp = {std::move(A), std::move(b), std::move(cost), std::move(lower), std::move(upper)};
  aug.lp.validate();

  Vec feas = linalg::multiply_transpose(aug.lp.A, aug.x_init) - aug.lp.b;
  if (feas.lpNorm<Eigen::Infinity>() > 1e-9)
    throw Error("star augmentation is not exactly feasible");
  return aug;
}

ipm::CenteredTriple flow_initial_point(const AugmentedFlow& aug, double eps,
                                       const ipm::IpmParams& params) {
  const Index m_aug = aug.lp.rows();
  const double W = static_cast<double>(aug.bound_w);
  Vec tau = ipm::tau_weights(aug.lp, aug.x_init, params.p,
                             params.tau_tol());
  // mu from the closed formula; phi'(x_init) = 0 at the midpoints, so the
  // exact requirement is max_i |s_i| / (tau_i sqrt(phi''_i)) <= eps * mu.
  double needed = 0.0;
  Vec phi2 = ipm::barrier_d2(aug.lp, aug.x_init);
  for (Index i = 0; i < m_aug; ++i)
    needed = std::max(needed, std::abs(aug.lp.c[i]) / (tau[i] * std::sqrt(phi2[i])));
  const double mu0 = std::max(
      100.0 * static_cast<double>(m_aug) * static_cast<double>(m_aug) * W * W * W / eps,
      2.0 * needed / eps);
  auto triple = ipm::CenteredTriple::from_exact(aug.lp, aug.x_init, aug.lp.c, mu0);
  triple.tau_bar = std::move(tau);
  auto rep = ipm::measure_centering(aug.lp, triple.x, triple.s, triple.mu, triple.tau_bar,
                                    params);
  if (rep.yinf > eps || rep.dual_resid > 1e-8)
    throw CenteringCheckFailed("flow initial point is not eps-centered: ||y|| = " +
                               std::to_string(rep.yinf));
  return triple;
}

// ---------------------------------------------------------------------------

bool flow_is_feasible(const FlowInstance& inst, const std::vector<int64_t>& flows) {
  if (flows.size() != inst.edges.size()) return false;
  std::vector<int64_t> net(inst.n, 0);
  for (size_t i = 0; i < flows.size(); ++i) {
    const Edge& e = inst.edges[i];
    if (flows[i] < 0 || flows[i] > e.cap) return false;
    net[e.head] += flows[i];
    net[e.tail] -= flows[i];
  }
  for (int v = 0; v < inst.n; ++v) {
    int64_t want = 0;
    if (v == inst.source) want = -inst.flow_value;
    if (v == inst.sink) want = inst.flow_value;
    if (net[v] != want) return false;
  }
  return true;
}

bool flow_is_optimal(const FlowInstance& inst, const std::vector<int64_t>& flows) {
  // Bellman-Ford negative-cycle detection on the residual graph.
  struct Arc {
    int from, to;
    int64_t cost;
  };
  std::vector<Arc> arcs;
  for (size_t i = 0; i < flows.size(); ++i) {
    const Edge& e = inst.edges[i];
    if (flows[i] < e.cap) arcs.push_back({e.tail, e.head, e.cost});
    if (flows[i] > 0) arcs.push_back({e.head, e.tail, -e.cost});
  }
  std::vector<int64_t> dist(inst.n, 0);
  for (int round = 0; round < inst.n; ++round) {
    bool changed = false;
    for (const Arc& a : arcs) {
      if (dist[a.from] + a.cost < dist[a.to]) {
        dist[a.to] = dist[a.from] + a.cost;
        changed = true;
      }
    }
    if (!changed) return true;
  }
  return false;
}

namespace {

int64_t flow_cost(const FlowInstance& inst, const std::vector<int64_t>& flows) {
  int64_t total = 0;
  for (size_t i = 0; i < flows.size(); ++i) total += flows[i] * inst.edges[i].cost;
  return total;
}

}  // namespace

MincostResult solve_mincost_flow(const FlowInstance& inst, const SolveConfig& cfg) {
  inst.validate();
  const int m = static_cast<int>(inst.edges.size());
  if (m == 0) {
    if (inst.flow_value != 0) throw Infeasible("no edges but positive flow demanded");
    return {0, {}, 1};
  }
  const int64_t W = inst.data_bound();
  // Exact rational perturbation k_e / (4 m^2 W^2), k_e in {1, ..., 2 m W}.
  const double denom = 4.0 * static_cast<double>(m) * m * static_cast<double>(W) * W;
  const int64_t k_range = 2 * static_cast<int64_t>(m) * W;

  RngStream root(cfg.seed, 0xf10);
  for (int attempt = 0; attempt < std::max(cfg.retries, 1); ++attempt) {
    RngStream rng = root.fork(attempt);
    Vec pert_cost(m);
    for (int e = 0; e < m; ++e) {
      const int64_t k = 1 + static_cast<int64_t>(rng.next_below(k_range));
      pert_cost[e] = static_cast<double>(inst.edges[e].cost) + static_cast<double>(k) / denom;
    }
    AugmentedFlow aug = augment_with_star(inst, &pert_cost);
    auto params = ipm::IpmParams::make(aug.lp.rows(), aug.lp.cols(), cfg.C, cfg.mode,
                                       cfg.seed ^ (0x9e37 * (attempt + 1)));
    params.sampler = cfg.sampler;
    params.tau_backend = cfg.tau_backend;
    const double eps_start = params.epsilon / params.c_start;
    auto triple = flow_initial_point(aug, eps_start, params);
    const double mu_target =
        1.0 / (12.0 * static_cast<double>(m) * m * static_cast<double>(W) * W * W *
               static_cast<double>(aug.lp.cols()));

    ipm::Backends backends(aug.lp, params);
    ipm::CenteredTriple state;
    try {
      state = ipm::path_following(aug.lp, triple, mu_target, params, backends, cfg.progress);
    } catch (const CenteringLost&) {
      continue;  // fresh perturbation and seed
    }
    auto [xf, sf] = ipm::final_point(aug.lp, state);

    double star_max = 0.0;
    for (Index r = aug.star_begin; r < aug.lp.rows(); ++r)
      star_max = std::max(star_max, std::abs(xf[r]));
    if (star_max >= 0.1)
      throw Infeasible("no feasible flow of the requested value (star flow " +
                       std::to_string(star_max) + ")");

    std::vector<int64_t> flows(m, 0);
    for (Index r = 0; r < aug.star_begin; ++r)
      flows[aug.kept[r]] = std::llround(xf[r]);
    // Zero-capacity edges stay at zero; negative-cost self-loops saturate.
    for (int e : aug.dropped) {
      const Edge& ed = inst.edges[e];
      flows[e] = (ed.tail == ed.head && ed.cost < 0) ? ed.cap : 0;
    }

    if (flow_is_feasible(inst, flows) && flow_is_optimal(inst, flows))
      return {flow_cost(inst, flows), std::move(flows), attempt + 1};
  }
  throw RetriesExhausted("mincost flow: rounding failed verification in every attempt");
}

MaxflowResult solve_maxflow(const FlowInstance& inst, const SolveConfig& cfg) {
  FlowInstance base = inst;
  base.flow_value = 0;
  base.validate();
  const int m = static_cast<int>(base.edges.size());
  MaxflowResult out;
  out.flows.assign(m, 0);
  int64_t umax = base.max_capacity();
  if (umax == 0 || m == 0) return out;

  int64_t delta = 1;
  while (delta * 2 <= umax) delta *= 2;

  int scale_idx = 0;
  for (; delta >= 1; delta /= 2, ++scale_idx) {
    // Residual graph restricted to arcs with residual >= delta, capacities
    // capped at 2 m delta, plus the sink->source circulation arc.
    const int64_t cap_limit = 2 * static_cast<int64_t>(m) * delta;
    FlowInstance circ;
    circ.n = base.n;
    circ.source = base.source;
    circ.sink = base.sink;
    circ.flow_value = 0;
    struct Origin {
      int edge;
      bool forward;
    };
    std::vector<Origin> origin;
    for (int e = 0; e < m; ++e) {
      const Edge& ed = base.edges[e];
      if (ed.tail == ed.head) continue;
      const int64_t fwd = ed.cap - out.flows[e];
      if (fwd >= delta) {
        circ.edges.push_back({ed.tail, ed.head, std::min(fwd, cap_limit), 0});
        origin.push_back({e, true});
      }
      const int64_t bwd = out.flows[e];
      if (bwd >= delta) {
        circ.edges.push_back({ed.head, ed.tail, std::min(bwd, cap_limit), 0});
        origin.push_back({e, false});
      }
    }
    if (circ.edges.empty()) continue;
    circ.edges.push_back({base.sink, base.source, cap_limit, -1});
    origin.push_back({-1, true});

    SolveConfig inner = cfg;
    inner.seed = cfg.seed ^ (0xC0FFEEULL * (scale_idx + 1));
    MincostResult res = solve_mincost_flow(circ, inner);
    for (size_t i = 0; i + 1 < res.flows.size(); ++i) {
      if (res.flows[i] == 0) continue;
      if (origin[i].forward)
        out.flows[origin[i].edge] += res.flows[i];
      else
        out.flows[origin[i].edge] -= res.flows[i];
    }
  }
  out.scales = scale_idx;

  int64_t value = 0;
  for (int e = 0; e < m; ++e) {
    if (base.edges[e].tail == base.source) value += out.flows[e];
    if (base.edges[e].head == base.source) value -= out.flows[e];
  }
  out.value = value;
  return out;
}

}  // namespace boxip::flow
