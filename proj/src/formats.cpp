#include "boxip/formats.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "boxip/mmio.hpp"

namespace boxip::io {

using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
  return j;
}

Vec to_vec(const json& arr, const char* name) {
  if (!arr.is_array()) throw Error(std::string(name) + " must be an array");
  Vec v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v[i] = arr[i].get<double>();
  return v;
}

json from_vec(const Vec& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

DimacsMin read_dimacs_min(std::istream& in) {
  DimacsMin d;
  std::string line;
  int lineno = 0;
  long marcs = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == 'c') continue;
    std::istringstream ls(line);
    char kind;
    ls >> kind;
    if (kind == 'p') {
      std::string prob;
      long nn;
      if (!(ls >> prob >> nn >> marcs) || prob != "min" || nn < 1)
        throw ParseError(lineno, "expected 'p min <nodes> <arcs>'");
      d.n = static_cast<int>(nn);
      d.demand.assign(d.n, 0);
    } else if (kind == 'n') {
      if (d.n == 0) throw ParseError(lineno, "'n' line before 'p'");
      long id;
      long long flow;
      if (!(ls >> id >> flow) || id < 1 || id > d.n)
        throw ParseError(lineno, "bad 'n' line");
      d.demand[id - 1] = flow;
    } else if (kind == 'a') {
      if (d.n == 0) throw ParseError(lineno, "'a' line before 'p'");
      long u, v;
      long long low, cap, cost;
      if (!(ls >> u >> v >> low >> cap >> cost) || u < 1 || u > d.n || v < 1 || v > d.n)
        throw ParseError(lineno, "bad 'a' line: expected 'a u v low cap cost'");
      if (low != 0) throw ParseError(lineno, "nonzero lower bounds are not supported");
      if (cap < 0) throw ParseError(lineno, "negative capacity");
      d.edges.push_back({static_cast<int>(u - 1), static_cast<int>(v - 1), cap, cost});
    } else {
      throw ParseError(lineno, std::string("unknown line kind '") + kind + "'");
    }
  }
  if (d.n == 0) throw ParseError(lineno, "missing 'p min' line");
  if (marcs >= 0 && static_cast<long>(d.edges.size()) != marcs)
    throw ParseError(lineno, "arc count does not match the 'p' line");
  return d;
}

void write_dimacs_min(std::ostream& out, const DimacsMin& d) {
  out << "p min " << d.n << " " << d.edges.size() << "\n";
  for (int v = 0; v < d.n; ++v)
    if (d.demand[v] != 0) out << "n " << (v + 1) << " " << d.demand[v] << "\n";
  for (const auto& e : d.edges)
    out << "a " << (e.tail + 1) << " " << (e.head + 1) << " 0 " << e.cap << " " << e.cost
        << "\n";
}

DimacsMax read_dimacs_max(std::istream& in) {
  DimacsMax d;
  std::string line;
  int lineno = 0;
  long marcs = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == 'c') continue;
    std::istringstream ls(line);
    char kind;
    ls >> kind;
    if (kind == 'p') {
      std::string prob;
      long nn;
      if (!(ls >> prob >> nn >> marcs) || prob != "max" || nn < 1)
        throw ParseError(lineno, "expected 'p max <nodes> <arcs>'");
      d.n = static_cast<int>(nn);
    } else if (kind == 'n') {
      long id;
      std::string which;
      if (!(ls >> id >> which) || id < 1 || id > d.n || (which != "s" && which != "t"))
        throw ParseError(lineno, "bad 'n' line: expected 'n id s|t'");
      (which == "s" ? d.source : d.sink) = static_cast<int>(id - 1);
    } else if (kind == 'a') {
      long u, v;
      long long cap;
      if (!(ls >> u >> v >> cap) || u < 1 || u > d.n || v < 1 || v > d.n)
        throw ParseError(lineno, "bad 'a' line: expected 'a u v cap'");
      if (cap < 0) throw ParseError(lineno, "negative capacity");
      d.edges.push_back({static_cast<int>(u - 1), static_cast<int>(v - 1), cap, 0});
    } else {
      throw ParseError(lineno, std::string("unknown line kind '") + kind + "'");
    }
  }
  if (d.n == 0) throw ParseError(lineno, "missing 'p max' line");
  if (d.source < 0 || d.sink < 0) throw ParseError(lineno, "missing source or sink line");
  if (marcs >= 0 && static_cast<long>(d.edges.size()) != marcs)
    throw ParseError(lineno, "arc count does not match the 'p' line");
  return d;
}

void write_dimacs_max(std::ostream& out, const DimacsMax& d) {
  out << "p max " << d.n << " " << d.edges.size() << "\n";
  out << "n " << (d.source + 1) << " s\n";
  out << "n " << (d.sink + 1) << " t\n";
  for (const auto& e : d.edges)
    out << "a " << (e.tail + 1) << " " << (e.head + 1) << " " << e.cap << "\n";
}

ipm::LpInstance read_lp(const std::string& mtx_path, const std::string& json_path) {
  ipm::LpInstance inst;
  inst.A = read_matrix_market_file(mtx_path);
  json j = load_json(json_path);
  inst.b = to_vec(j.at("b"), "b");
  inst.c = to_vec(j.at("c"), "c");
  inst.lower = to_vec(j.at("l"), "l");
  inst.upper = to_vec(j.at("u"), "u");
  inst.validate();
  return inst;
}

void write_lp_sidecar(const std::string& json_path, const ipm::LpInstance& inst) {
  json j;
  j["b"] = from_vec(inst.b);
  j["c"] = from_vec(inst.c);
  j["l"] = from_vec(inst.lower);
  j["u"] = from_vec(inst.upper);
  std::ofstream out(json_path);
  if (!out) throw Error("cannot open " + json_path + " for writing");
  out << j.dump(2) << "\n";
}

std::pair<SpMat, Vec> read_l1(const std::string& mtx_path, const std::string& json_path) {
  SpMat A = read_matrix_market_file(mtx_path);
  json j = load_json(json_path);
  Vec c = to_vec(j.at("c"), "c");
  if (c.size() != A.rows()) throw Error("l1 sidecar: c has wrong length");
  return {std::move(A), std::move(c)};
}

lpapps::MdpInstance read_mdp(const std::string& json_path) {
  json j = load_json(json_path);
  lpapps::MdpInstance mdp;
  mdp.discount = j.at("gamma").get<double>();
  const auto& rw = j.at("rewards");
  const auto& tr = j.at("transitions");
  mdp.num_states = static_cast<int>(rw.size());
  if (mdp.num_states < 1) throw Error("MDP JSON has no states");
  mdp.num_actions = static_cast<int>(rw[0].size());
  for (int i = 0; i < mdp.num_states; ++i) {
    mdp.rewards.push_back(to_vec(rw[i], "rewards row"));
    std::vector<Vec> row;
    for (int a = 0; a < mdp.num_actions; ++a)
      row.push_back(to_vec(tr.at(i).at(a), "transition row"));
    mdp.transitions.push_back(std::move(row));
  }
  mdp.validate();
  return mdp;
}

void write_mdp(const std::string& json_path, const lpapps::MdpInstance& mdp) {
  json j;
  j["gamma"] = mdp.discount;
  json rw = json::array(), tr = json::array();
  for (int i = 0; i < mdp.num_states; ++i) {
    rw.push_back(from_vec(mdp.rewards[i]));
    json row = json::array();
    for (int a = 0; a < mdp.num_actions; ++a) row.push_back(from_vec(mdp.transitions[i][a]));
    tr.push_back(row);
  }
  j["rewards"] = rw;
  j["transitions"] = tr;
  std::ofstream out(json_path);
  if (!out) throw Error("cannot open " + json_path + " for writing");
  out << j.dump(2) << "\n";
}

std::string trace_line(const ipm::StepRecord& rec) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"t\":%d,\"mu\":%.12g,\"psi\":%.12g,\"yinf\":%.12g,\"feas\":%.12g}", rec.t,
                rec.mu, rec.psi, rec.yinf, rec.feas);
  return buf;
}

}  // namespace boxip::io
