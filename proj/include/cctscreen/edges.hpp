#pragma once

// Per-edge coupling data shared by the equilibrium solver, the compact-form
// matrices and the simulator.

#include <cmath>

#include "linalg.hpp"
#include "network.hpp"

namespace cctscreen {

/// Incidence and coupling of every line. The flow leaving the "from" side of
/// edge e is s_e * w_e * sin(delta_e + alpha_e) with delta_e = (E delta)_e
/// (infinite buses sit at angle 0).
struct EdgeData {
  MatrixXd E;      // |E| x n incidence over state-carrying buses
  VectorXd s;      // coupling magnitudes used in B
  VectorXd w;      // actual coupling / s (1 unless voltages fluctuate)
  VectorXd alpha;  // effective phase shift of each edge

  int num_edges() const { return static_cast<int>(s.size()); }

  VectorXd edge_angles(const VectorXd& bus_angles) const { return E * bus_angles; }

  /// Net flow leaving each state-carrying bus, E^T S W sin(E delta + alpha).
  VectorXd injections(const VectorXd& bus_angles, const VectorXd* mask = nullptr) const {
    VectorXd flow(num_edges());
    const VectorXd d = E * bus_angles;
    for (int e = 0; e < num_edges(); ++e) {
      flow(e) = s(e) * w(e) * std::sin(d(e) + alpha(e));
      if (mask) flow(e) *= (*mask)(e);
    }
    return E.transpose() * flow;
  }
};

inline EdgeData edge_data(const NetworkModel& model) {
  const int n = model.num_dynamic();
  const int ne = model.num_lines();
  EdgeData d;
  d.E = MatrixXd::Zero(ne, n);
  d.s.resize(ne);
  d.w.resize(ne);
  d.alpha = VectorXd::Zero(ne);
  const auto& fluct = model.fluctuation();
  for (int e = 0; e < ne; ++e) {
    const Line& l = model.lines()[e];
    const Bus& from = model.bus(l.from);
    const Bus& to = model.bus(l.to);
    if (from.has_state()) d.E(e, model.bus_index(l.from)) = 1.0;
    if (to.has_state()) d.E(e, model.bus_index(l.to)) = -1.0;
    const double vv = from.voltage * to.voltage;
    if (fluct) {
      const double top = std::pow((1.0 + fluct->ratio) * fluct->nominal_voltage, 2);
      d.s(e) = top * l.susceptance;
      d.w(e) = vv / top;
    } else {
      d.s(e) = vv * l.admittance();
      d.w(e) = 1.0;
    }
    if (l.lossy()) {
      // The flow out of the dynamic end is Y sin(theta + alpha); seen from a
      // "from" side that is the infinite bus, the sign of the shift flips.
      d.alpha(e) = from.has_state() ? l.loss_angle() : -l.loss_angle();
    }
  }
  return d;
}

}  // namespace cctscreen
