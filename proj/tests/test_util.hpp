#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "cctscreen/network.hpp"

inline std::string read_case(const std::string& name) {
  std::ifstream in(std::string(CCT_DATA_DIR) + "/" + name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline cctscreen::NetworkModel load_case(const std::string& name, cctscreen::ParseOptions po = {}) {
  return cctscreen::parse_network(read_case(name), po);
}

#include <Eigen/Dense>
#include <cmath>

// Net power leaving each state-carrying bus, written out line by line from
// the bus data: P_uv = V_u V_v (B sin(d_u - d_v) + G cos(d_u - d_v)).
inline Eigen::VectorXd oracle_outflow(const cctscreen::NetworkModel& m, const Eigen::VectorXd& angles) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.num_dynamic());
  auto angle = [&](int id) {
    const auto& b = m.bus(id);
    return b.has_state() ? angles(m.bus_index(id)) : 0.0;
  };
  for (const auto& l : m.lines()) {
    const double vv = m.bus(l.from).voltage * m.bus(l.to).voltage;
    const double d = angle(l.from) - angle(l.to);
    if (m.bus(l.from).has_state()) {
      out(m.bus_index(l.from)) += vv * (l.susceptance * std::sin(d) + l.conductance * std::cos(d));
    }
    if (m.bus(l.to).has_state()) {
      out(m.bus_index(l.to)) += vv * (l.susceptance * std::sin(-d) + l.conductance * std::cos(d));
    }
  }
  return out;
}

// Equilibrium by relaxing d' = P - outflow from flat angles, independent of
// the Newton solver.
inline Eigen::VectorXd oracle_equilibrium(const cctscreen::NetworkModel& m, bool pre_fault = false,
                                          double step = 0.01, double tol = 1e-13) {
  const int n = m.num_dynamic();
  Eigen::VectorXd p(n), d = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) p(k) = m.buses()[k].injection(pre_fault);
  for (int it = 0; it < 5000000; ++it) {
    const Eigen::VectorXd r = p - oracle_outflow(m, d);
    if (r.cwiseAbs().maxCoeff() < tol) break;
    d += step * r;
  }
  return d;
}

#include <numbers>
#include <optional>

#include "cctscreen/cct.hpp"

// Nominal lambda used with each bundled case.
inline std::optional<double> case_lambda(const std::string& name) {
  if (name == "case2.json" || name == "case3.json") return std::numbers::pi / 10;
  if (name == "case9.json") return std::numbers::pi / 8;
  return std::nullopt;
}

inline cctscreen::Study case_study(const std::string& name) {
  cctscreen::StudyOptions so;
  so.lambda = case_lambda(name);
  return cctscreen::make_study(load_case(name), so);
}

// Trace of the reference single-machine certificate.
constexpr double kTwoBusTrace = 0.0443 + 0.0879;
