#pragma once

#include <vector>

#include "boxip/common.hpp"
#include "boxip/ipm.hpp"

namespace boxip::lpapps {

/// Identity-block augmentation of a general two-sided LP so the midpoint
/// becomes an exactly feasible, analytically centered start. Auxiliary
/// columns carry a prohibitive penalty cost; zero-excess auxiliaries are
/// dropped and column signs recorded for undoing.
struct AugmentedLp {
  ipm::LpInstance lp;        // rows: original m coordinates then the kept auxiliaries
  Vec x_init;                // exactly feasible interior start
  std::vector<Index> aux_cols;  // constraint index per auxiliary row
  std::vector<double> aux_sign; // recorded sign flip per auxiliary row
  double beta = 0;           // identity block scale
  double xi = 0;             // max_i (u_i - l_i)
  double penalty = 0;        // auxiliary cost
  double delta_prime = 0;
  Index original_rows = 0;
};

AugmentedLp augment_lp(const ipm::LpInstance& inst, double delta);

/// Initial point for the augmented LP: s = costs, mu = 8 m ||c||_1 Xi /
/// (eps delta'). Verified eps-centered (throws CenteringCheckFailed).
ipm::CenteredTriple lp_initial_point(const AugmentedLp& aug, double eps,
                                     const ipm::IpmParams& params);

struct SolveConfig {
  uint64_t seed = 0;
  double C = 4.0;
  ipm::Mode mode = ipm::Mode::Practical;
  ipm::SamplerKind sampler = ipm::SamplerKind::Independent;
  ipm::TauBackendKind tau_backend = ipm::TauBackendKind::WarmFixedPoint;
  ipm::ProgressCallback progress;
};

struct LpResult {
  Vec x;
  double objective = 0;
  double feas_inf = 0;   // || A^T x - b ||_inf
  bool aux_clean = true; // auxiliary coordinates vanished below delta' * Xi
};

/// delta-approximate solution of min c^T x, A^T x = b, l <= x <= u.
/// Throws Infeasible (heuristically) when the auxiliary block refuses to
/// vanish at the target path parameter.
LpResult solve_lp(const ipm::LpInstance& inst, double delta, const SolveConfig& cfg = {});

struct L1Result {
  Vec z;
  double value = 0;  // || A z + c ||_1
};

/// delta-approximate l1 regression min_z || A z + c ||_1 via the box dual
/// LP and dual extraction z = (A^T A)^{-1} A^T (s_final - c).
L1Result solve_l1_regression(const SpMat& A, const Vec& c, double delta,
                             const SolveConfig& cfg = {});

struct MdpInstance {
  int num_states = 0;
  int num_actions = 0;
  std::vector<std::vector<Vec>> transitions;  // [state][action] -> next-state distribution
  std::vector<Vec> rewards;                   // [state][action]
  double discount = 0.0;

  void validate() const;
};

struct MdpResult {
  std::vector<int> policy;  // greedy action per state (0-based)
  Vec values;               // exact value of the returned policy
  Vec lp_values;            // approximate LP solution the policy was read from
};

/// eps-optimal policy for a discounted MDP via the l1-regression reduction;
/// greedy extraction with lowest-action-index tie break.
MdpResult solve_mdp(const MdpInstance& mdp, double eps, const SolveConfig& cfg = {});

}  // namespace boxip::lpapps
