#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "boxip/common.hpp"
#include "boxip/ipm.hpp"

namespace boxip::flow {

struct Edge {
  int tail = 0, head = 0;
  int64_t cap = 0;
  int64_t cost = 0;
};

/// Single source/sink min-cost flow instance with integral data.
struct FlowInstance {
  int n = 0;
  std::vector<Edge> edges;
  int source = 0, sink = 0;
  int64_t flow_value = 0;

  void validate() const;
  int64_t max_capacity() const;
  int64_t max_abs_cost() const;
  /// W = max(||u||_inf, ||c||_inf, 1).
  int64_t data_bound() const;
};

/// Node-demand form (positive = supply, negative = demand); reduced to a
/// single source/sink instance by a super source and sink.
struct DemandReduction {
  FlowInstance instance;   // possibly with two extra vertices and edges
  int extra_edges = 0;     // count of appended super edges
};
DemandReduction reduce_demands(int n, const std::vector<Edge>& edges, const std::vector<int64_t>& demand);

/// Star-augmented LP for the modified graph: a bidirectional star through a
/// new hub vertex routes the midpoint flow's excess, the hub column is
/// dropped so the incidence matrix has full column rank, and star edges get
/// a prohibitive cost.
struct AugmentedFlow {
  ipm::LpInstance lp;          // rows: kept original edges then 2n star edges
  std::vector<int> kept;       // original edge index per LP row (first block)
  std::vector<int> dropped;    // zero-capacity edges, fixed at zero flow
  Index star_begin = 0;        // first star row
  Vec x_init;                  // exactly feasible interior start (all midpoints)
  double star_cost = 0;
  int64_t bound_w = 0;         // data bound used for mu formulas
};

AugmentedFlow augment_with_star(const FlowInstance& inst, const Vec* cost_override = nullptr);

/// Midpoint/star initial point: s = costs, mu = 100 m^2 W^3 / eps. The
/// returned triple is verified eps-centered (throws CenteringCheckFailed).
ipm::CenteredTriple flow_initial_point(const AugmentedFlow& aug, double eps,
                                       const ipm::IpmParams& params);

struct SolveConfig {
  uint64_t seed = 0;
  int retries = 64;
  double C = 4.0;
  ipm::Mode mode = ipm::Mode::Practical;
  ipm::SamplerKind sampler = ipm::SamplerKind::Independent;
  ipm::TauBackendKind tau_backend = ipm::TauBackendKind::WarmFixedPoint;
  ipm::ProgressCallback progress;
};

struct MincostResult {
  int64_t cost = 0;
  std::vector<int64_t> flows;  // one per input edge
  int attempts = 1;
};

/// Exact integral min-cost flow: isolation-perturbed costs, path following,
/// rounding, and a duality certificate on the rounded flow. Retries with a
/// fresh perturbation when rounding fails the certificate.
MincostResult solve_mincost_flow(const FlowInstance& inst, const SolveConfig& cfg = {});

struct MaxflowResult {
  int64_t value = 0;
  std::vector<int64_t> flows;
  int scales = 0;
};

/// Capacity-scaling max flow; each scale solves one min-cost circulation
/// (t->s arc of cost -1) on the residual graph with capacities capped at
/// 2 m Delta.
MaxflowResult solve_maxflow(const FlowInstance& inst, const SolveConfig& cfg = {});

/// Integral verification helpers (exact arithmetic).
bool flow_is_feasible(const FlowInstance& inst, const std::vector<int64_t>& flows);
/// True iff the residual graph w.r.t. the original integral costs has no
/// negative cycle, i.e. the flow is min-cost among flows of its value.
bool flow_is_optimal(const FlowInstance& inst, const std::vector<int64_t>& flows);

}  // namespace boxip::flow
