#pragma once

// Compact-form dynamics xdot = A x - B F(C x) around an equilibrium.

#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "edges.hpp"
#include "equilibrium.hpp"
#include "linalg.hpp"
#include "network.hpp"

namespace cctscreen {

struct SystemMatrices {
  int m = 0;   // generators
  int n = 0;   // generators + loads
  int ne = 0;  // lines

  MatrixXd E;  // ne x n
  MatrixXd C;  // ne x (n+m)
  MatrixXd A;  // (n+m) x (n+m)
  MatrixXd B;  // (n+m) x ne
  VectorXd s;  // diagonal of S
  VectorXd w;
  VectorXd alpha;
  VectorXd edge_star;  // delta*_kj at the anchoring equilibrium
  VectorXd bus_star;   // delta* per state-carrying bus
  VectorXd inertia;    // m_k of generators
  VectorXd damping;    // d_k of generators and loads

  /// Directions along which the dynamics are invariant (a uniform angle shift
  /// when no infinite bus fixes the reference). Orthonormal columns.
  MatrixXd shift_basis;

  int dim() const { return n + m; }
  MatrixXd S() const { return s.asDiagonal(); }
  MatrixXd M1() const { return inertia.asDiagonal(); }
  MatrixXd D1() const { return damping.head(m).asDiagonal(); }
  MatrixXd D() const { return damping.asDiagonal(); }

  /// Position in x of the angle of bus index k (generators then loads).
  int angle_index(int k) const { return k < m ? k : k + m; }
  int velocity_index(int g) const { return m + g; }

  VectorXd angles_of(const VectorXd& x) const {
    VectorXd a(n);
    a.head(m) = x.head(m);
    a.tail(n - m) = x.tail(n - m);
    return a;
  }
  VectorXd state_from(const VectorXd& angles, const VectorXd& velocities) const {
    VectorXd x(n + m);
    x.head(m) = angles.head(m);
    x.segment(m, m) = velocities;
    x.tail(n - m) = angles.tail(n - m);
    return x;
  }

  /// Absolute line angles delta_kj for a state x.
  VectorXd line_angles(const VectorXd& x) const { return edge_star + C * x; }

  /// F(Cx): w (sin(delta + alpha) - sin(delta* + alpha)) per edge.
  VectorXd flow_deviation(const VectorXd& x) const {
    const VectorXd d = line_angles(x);
    VectorXd f(ne);
    for (int e = 0; e < ne; ++e) f(e) = w(e) * (std::sin(d(e) + alpha(e)) - std::sin(edge_star(e) + alpha(e)));
    return f;
  }
  /// Full normalised flow w sin(delta + alpha); bounded by 1 in magnitude.
  VectorXd flow(const VectorXd& x) const {
    const VectorXd d = line_angles(x);
    VectorXd f(ne);
    for (int e = 0; e < ne; ++e) f(e) = w(e) * std::sin(d(e) + alpha(e));
    return f;
  }

  /// True when every |delta_kj| <= pi/2 (the polytope Q).
  bool in_polytope(const VectorXd& x, double slack = 0.0) const {
    const VectorXd d = line_angles(x);
    return d.size() == 0 || d.cwiseAbs().maxCoeff() <= std::numbers::pi / 2 + slack;
  }
};

inline SystemMatrices build_system_matrices(const NetworkModel& model, const Equilibrium& eq) {
  const int n = model.num_dynamic();
  const int m = model.num_generators();
  if (eq.angles.size() != n) throw ModelError("equilibrium does not match the network dimension");
  const EdgeData ed = edge_data(model);
  SystemMatrices sm;
  sm.m = m;
  sm.n = n;
  sm.ne = ed.num_edges();
  sm.E = ed.E;
  sm.s = ed.s;
  sm.w = ed.w;
  sm.alpha = ed.alpha;
  sm.edge_star = ed.E * eq.angles;
  sm.bus_star = eq.angles;
  sm.inertia.resize(m);
  sm.damping.resize(n);
  for (int k = 0; k < n; ++k) {
    const Bus& b = model.buses()[k];
    if (k < m) sm.inertia(k) = b.inertia;
    sm.damping(k) = b.damping;
  }

  const int N = n + m;
  sm.C = MatrixXd::Zero(sm.ne, N);
  sm.C.leftCols(m) = sm.E.leftCols(m);
  sm.C.rightCols(n - m) = sm.E.rightCols(n - m);

  sm.A = MatrixXd::Zero(N, N);
  sm.A.block(0, m, m, m) = MatrixXd::Identity(m, m);
  for (int g = 0; g < m; ++g) sm.A(m + g, m + g) = -sm.damping(g) / sm.inertia(g);

  const MatrixXd ES = sm.E.transpose() * sm.s.asDiagonal();  // n x ne
  sm.B = MatrixXd::Zero(N, sm.ne);
  for (int g = 0; g < m; ++g) sm.B.row(m + g) = ES.row(g) / sm.inertia(g);
  for (int l = m; l < n; ++l) sm.B.row(m + l) = ES.row(l) / sm.damping(l);

  MatrixXd stack(sm.ne + m, N);
  stack.topRows(sm.ne) = sm.C;
  stack.bottomRows(m) = MatrixXd::Zero(m, N);
  for (int g = 0; g < m; ++g) stack(sm.ne + g, m + g) = 1.0;
  sm.shift_basis = null_space(stack);
  return sm;
}

/// Selects the faulted line(s). A single line gives the unit vector D_uv; a
/// set gives the diagonal dominating matrix D.
struct LineSelector {
  std::vector<int> edges;  // ascending edge indices
  int ne = 0;
  bool robust = false;

  VectorXd vector() const {
    if (edges.size() != 1) throw ModelError("selector does not name a single line");
    VectorXd v = VectorXd::Zero(ne);
    v(edges.front()) = 1.0;
    return v;
  }
  MatrixXd matrix() const {
    MatrixXd D = MatrixXd::Zero(ne, ne);
    for (int e : edges) D(e, e) = 1.0;
    return D;
  }
  /// W with W W^T = D, one column per selected edge.
  MatrixXd factor() const {
    MatrixXd W = MatrixXd::Zero(ne, static_cast<int>(edges.size()));
    for (int c = 0; c < static_cast<int>(edges.size()); ++c) W(edges[c], c) = 1.0;
    return W;
  }
  int rank() const { return static_cast<int>(edges.size()); }
};

inline LineSelector line_selector(const NetworkModel& model, LinePair line) {
  LineSelector sel;
  sel.ne = model.num_lines();
  sel.edges = {model.line_index(line)};
  return sel;
}

inline LineSelector robust_selector(const NetworkModel& model, const std::vector<LinePair>& lines) {
  if (lines.empty()) throw ModelError("robust selector needs at least one line");
  std::set<int> idx;
  for (const auto& l : lines) idx.insert(model.line_index(l));
  LineSelector sel;
  sel.ne = model.num_lines();
  sel.edges.assign(idx.begin(), idx.end());
  sel.robust = true;
  return sel;
}

}  // namespace cctscreen
