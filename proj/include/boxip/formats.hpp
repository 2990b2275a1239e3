#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "boxip/flow.hpp"
#include "boxip/ipm.hpp"
#include "boxip/lpapps.hpp"

namespace boxip::io {

/// DIMACS minimum-cost flow file: `p min`, `n id flow`, `a u v low cap cost`.
struct DimacsMin {
  int n = 0;
  std::vector<flow::Edge> edges;
  std::vector<int64_t> demand;  // positive supply, negative demand, per node
};
DimacsMin read_dimacs_min(std::istream& in);
void write_dimacs_min(std::ostream& out, const DimacsMin& d);

/// DIMACS maximum flow file: `p max`, `n id s|t`, `a u v cap`.
struct DimacsMax {
  int n = 0;
  std::vector<flow::Edge> edges;  // costs zero
  int source = -1, sink = -1;
};
DimacsMax read_dimacs_max(std::istream& in);
void write_dimacs_max(std::ostream& out, const DimacsMax& d);

/// General LP: Matrix Market file for A plus a JSON sidecar {b, c, l, u}.
ipm::LpInstance read_lp(const std::string& mtx_path, const std::string& json_path);
void write_lp_sidecar(const std::string& json_path, const ipm::LpInstance& inst);

/// l1 regression: Matrix Market for A plus JSON sidecar {c}.
std::pair<SpMat, Vec> read_l1(const std::string& mtx_path, const std::string& json_path);

/// MDP JSON: {gamma, rewards[s][a], transitions[s][a][s']}.
lpapps::MdpInstance read_mdp(const std::string& json_path);
void write_mdp(const std::string& json_path, const lpapps::MdpInstance& mdp);

/// JSON-lines step trace: {"t":..,"mu":..,"psi":..,"yinf":..,"feas":..}.
std::string trace_line(const ipm::StepRecord& rec);

}  // namespace boxip::io
