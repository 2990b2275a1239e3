#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "boxip/common.hpp"

namespace boxip::oracles {

/// Brute-force reference result. `witness` holds the minimizer / flow /
/// value vector, re-verified for feasibility before returning.
struct OracleResult {
  double value = 0.0;
  Vec witness;
  enum class Method { Ssp, Dinic, EnumerateLp, EnumerateL1, ValueIteration, Dense } method;
};

struct OracleEdge {
  int tail, head;
  int64_t cap;
  int64_t cost;
};

struct OracleFlowProblem {
  int n = 0;
  std::vector<OracleEdge> edges;
  int source = 0, sink = 0;
  int64_t flow_value = 0;  // ignored by max-flow
};

/// Exact integral min-cost flow, n <= 50. Negative-cost cycles are
/// canceled first, then successive shortest paths with Bellman-Ford.
/// Throws Infeasible if no flow of the requested value exists.
OracleResult ssp_mincost(const OracleFlowProblem& p);

/// Exact max flow (Dinic), n <= 200. witness = per-edge flows, value = |f|.
OracleResult dinic_maxflow(const OracleFlowProblem& p);

struct OracleLp {
  SpMat A;  // m x n
  Vec b, c, lower, upper;
};

/// Vertex enumeration over coordinate at-bound patterns, m <= 14.
/// Throws Infeasible when no vertex is feasible.
OracleResult enumerate_lp(const OracleLp& lp);

/// n-subset residual-zeroing enumeration for min_z ||Az + c||_1,
/// m <= 20, n <= 4.
OracleResult enumerate_l1(const SpMat& A, const Vec& c);

struct OracleMdp {
  int num_states = 0;
  int num_actions = 0;
  std::vector<std::vector<Vec>> transitions;  // [state][action] -> distribution
  std::vector<Vec> rewards;                   // [state] -> per-action reward
  double discount = 0.0;
};

/// Value iteration to sup-norm fixed point; witness = value vector.
OracleResult value_iteration(const OracleMdp& mdp, int iters = 10000);

/// Exact value of the policy pi (one action index per state).
Vec policy_value(const OracleMdp& mdp, const std::vector<int>& pi);

/// Dense leverage scores of diag(g) A via thin SVD row norms.
OracleResult dense_scores(const SpMat& A, const Vec& g);

/// High-precision regularized Lewis weight fixed point (up to 500 dense
/// iterations, tolerance 1e-14).
OracleResult dense_lewis(const SpMat& A, const Vec& g, const Vec& z, double p);

/// Numerical maximizer of <g, h> over the ball ||h||_inf + c_norm ||h||_tau <= 1
/// (dense parametric search; independent of the closed-form implementation).
/// Returns the attained objective; witness = argmax.
OracleResult maximize_tau_inf_ball(const Vec& g, const Vec& tau, double c_norm);

}  // namespace boxip::oracles
