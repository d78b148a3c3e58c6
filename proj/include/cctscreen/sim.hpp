#pragma once

// Time-domain reference: nonlinear swing and frequency-dependent-load
// dynamics, fixed-step RK4, stability classification and a bisection search
// for the true critical clearing time.

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "edges.hpp"
#include "equilibrium.hpp"
#include "linalg.hpp"
#include "network.hpp"

namespace cctscreen {

class SimulationError : public Error {
 public:
  using Error::Error;
};

/// Right-hand side in deviation coordinates x = [generator angles, speeds,
/// load angles] about `eq`, built directly from the bus equations. The
/// post-fault injections drive both phases.
class SwingDynamics {
 public:
  SwingDynamics(const NetworkModel& model, const Equilibrium& eq)
      : ed_(edge_data(model)), star_(eq.angles), m_(model.num_generators()), n_(model.num_dynamic()) {
    p_.resize(n_);
    inertia_.resize(m_);
    damping_.resize(n_);
    for (int k = 0; k < n_; ++k) {
      const Bus& b = model.buses()[k];
      p_(k) = b.power;
      damping_(k) = b.damping;
      if (k < m_) inertia_(k) = b.inertia;
    }
    ids_.reserve(n_);
    for (int k = 0; k < n_; ++k) ids_.push_back(model.buses()[k].id);
  }

  int dim() const { return n_ + m_; }
  int num_generators() const { return m_; }
  int num_dynamic() const { return n_; }
  const EdgeData& edges() const { return ed_; }
  const VectorXd& anchor() const { return star_; }
  const std::vector<int>& bus_ids() const { return ids_; }

  VectorXd bus_angles(const VectorXd& x) const {
    VectorXd d(n_);
    d.head(m_) = star_.head(m_) + x.head(m_);
    d.tail(n_ - m_) = star_.tail(n_ - m_) + x.tail(n_ - m_);
    return d;
  }

  /// `open_edge` < 0 means every line is in service.
  VectorXd operator()(const VectorXd& x, int open_edge = -1) const {
    const VectorXd delta = bus_angles(x);
    VectorXd mask;
    if (open_edge >= 0) {
      mask = VectorXd::Ones(ed_.num_edges());
      mask(open_edge) = 0.0;
    }
    const VectorXd out = ed_.injections(delta, open_edge >= 0 ? &mask : nullptr);
    VectorXd dx(n_ + m_);
    for (int g = 0; g < m_; ++g) {
      const double omega = x(m_ + g);
      dx(g) = omega;
      dx(m_ + g) = (p_(g) - damping_(g) * omega - out(g)) / inertia_(g);
    }
    for (int l = m_; l < n_; ++l) dx(m_ + l) = (p_(l) - out(l)) / damping_(l);
    return dx;
  }

 private:
  EdgeData ed_;
  VectorXd star_;
  VectorXd p_, inertia_, damping_;
  std::vector<int> ids_;
  int m_, n_;
};

inline VectorXd rhs_postfault(const NetworkModel& model, const Equilibrium& eq, const VectorXd& x) {
  return SwingDynamics(model, eq)(x);
}

inline VectorXd rhs_faulton(const NetworkModel& model, const Equilibrium& eq, LinePair line, const VectorXd& x) {
  return SwingDynamics(model, eq)(x, model.line_index(line));
}

struct Trajectory {
  std::vector<double> times;
  std::vector<VectorXd> states;
  std::vector<int> phase;  // 0 fault-on, 1 post-fault
  bool stopped_early = false;
};

using Rhs = std::function<VectorXd(const VectorXd&)>;
using StopFn = std::function<bool(const VectorXd&)>;

/// Classical fixed-step RK4 from t0 for `horizon`; the last step is shortened
/// to land on t0 + horizon exactly.
inline void integrate_into(Trajectory& traj, const Rhs& f, VectorXd x, double t0, double horizon, double dt,
                           int phase, const StopFn& stop = {}) {
  if (!(dt > 0)) throw SimulationError("time step must be positive");
  if (!(horizon >= 0)) throw SimulationError("horizon must be non-negative");
  const long steps = static_cast<long>(std::ceil(horizon / dt - 1e-9));
  if (traj.times.empty()) {
    traj.times.push_back(t0);
    traj.states.push_back(x);
    traj.phase.push_back(phase);
  }
  double t = t0;
  for (long i = 0; i < steps; ++i) {
    const double h = std::min(dt, t0 + horizon - t);
    if (h <= 0) break;
    const VectorXd k1 = f(x);
    const VectorXd k2 = f(x + 0.5 * h * k1);
    const VectorXd k3 = f(x + 0.5 * h * k2);
    const VectorXd k4 = f(x + h * k3);
    x += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
    t = (i + 1 == steps) ? t0 + horizon : t + h;
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "non-finite state at t = " << t;
      throw SimulationError(os.str());
    }
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.phase.push_back(phase);
    if (stop && stop(x)) {
      traj.stopped_early = true;
      return;
    }
  }
}

inline Trajectory integrate(const Rhs& f, const VectorXd& x0, double horizon, double dt) {
  if (!(horizon >= dt)) throw SimulationError("horizon must be at least one step");
  Trajectory traj;
  integrate_into(traj, f, x0, 0.0, horizon, dt, 1);
  return traj;
}

struct SimParams {
  double dt = 1e-3;
  double horizon = 20.0;  // post-fault
  double tol = 1e-3;
  double escape = std::numbers::pi;
  int extensions = 3;  // horizon doublings tried while the verdict is undetermined
};

/// Fault-on for `clearing_time` from the pre-fault equilibrium, then post-fault.
inline Trajectory simulate_clearing(const NetworkModel& model, const Equilibrium& eq_pre,
                                    const Equilibrium& eq_post, LinePair line, double clearing_time,
                                    const SimParams& sp = {}) {
  if (!(clearing_time >= 0)) throw SimulationError("clearing time must be non-negative");
  const SwingDynamics dyn(model, eq_post);
  const int open = model.line_index(line);
  const int m = model.num_generators();
  const VectorXd x0 = pre_fault_offset(eq_pre, eq_post, m);
  const EdgeData& ed = dyn.edges();
  auto escaped = [&](const VectorXd& x) {
    const VectorXd d = ed.E * dyn.bus_angles(x);
    return d.size() && d.cwiseAbs().maxCoeff() > sp.escape;
  };
  Trajectory traj;
  integrate_into(traj, [&](const VectorXd& x) { return dyn(x, open); }, x0, 0.0, clearing_time, sp.dt, 0, escaped);
  if (traj.stopped_early) return traj;
  integrate_into(traj, [&](const VectorXd& x) { return dyn(x); }, traj.states.back(), clearing_time, sp.horizon,
                 sp.dt, 1, escaped);
  return traj;
}

enum class StabilityKind { kStable, kUnstable, kUndetermined };

inline const char* to_string(StabilityKind k) {
  switch (k) {
    case StabilityKind::kStable: return "stable";
    case StabilityKind::kUnstable: return "unstable";
    case StabilityKind::kUndetermined: return "undetermined";
  }
  return "?";
}

struct StabilityVerdict {
  StabilityKind kind = StabilityKind::kUndetermined;
  double final_deviation = 0.0;
  bool escaped = false;
};

/// Deviation from the equilibrium measured on line angles and speeds, so a
/// common angle drift does not count.
inline double deviation(const SwingDynamics& dyn, const VectorXd& x) {
  const int m = dyn.num_generators();
  double dev = m ? x.segment(m, m).cwiseAbs().maxCoeff() : 0.0;
  const VectorXd d = dyn.edges().E * (dyn.bus_angles(x) - dyn.anchor());
  if (d.size()) dev = std::max(dev, d.cwiseAbs().maxCoeff());
  return dev;
}

inline StabilityVerdict classify(const Trajectory& traj, const SwingDynamics& dyn, const SimParams& sp = {}) {
  StabilityVerdict v;
  if (traj.states.empty()) return v;
  for (const auto& x : traj.states) {
    const VectorXd d = dyn.edges().E * dyn.bus_angles(x);
    if (d.size() && d.cwiseAbs().maxCoeff() > sp.escape) {
      v.escaped = true;
      break;
    }
  }
  v.final_deviation = deviation(dyn, traj.states.back());
  if (v.escaped) {
    v.kind = StabilityKind::kUnstable;
    return v;
  }
  const double t_end = traj.times.back();
  const double t_tail = t_end - 0.1 * (t_end - traj.times.front());
  double tail_max = 0.0;
  double at_tail_start = -1.0;
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    if (traj.times[i] < t_tail) continue;
    const double d = deviation(dyn, traj.states[i]);
    if (at_tail_start < 0) at_tail_start = d;
    tail_max = std::max(tail_max, d);
  }
  if (tail_max <= sp.tol) {
    v.kind = StabilityKind::kStable;
  } else if (v.final_deviation > at_tail_start && v.final_deviation > sp.tol) {
    v.kind = StabilityKind::kUnstable;
  }
  return v;
}

inline StabilityVerdict simulate_and_classify(const NetworkModel& model, const Equilibrium& eq_pre,
                                              const Equilibrium& eq_post, LinePair line, double clearing_time,
                                              const SimParams& sp = {}) {
  const SwingDynamics dyn(model, eq_post);
  SimParams p = sp;
  StabilityVerdict v;
  for (int k = 0; k <= sp.extensions; ++k, p.horizon *= 2) {
    v = classify(simulate_clearing(model, eq_pre, eq_post, line, clearing_time, p), dyn, p);
    if (v.kind != StabilityKind::kUndetermined) break;
  }
  return v;
}

struct TrueCctOptions {
  double start = 0.1;  // first probe, e.g. a certificate bound
  double tol = 1e-3;
  double cap = 8.0;
  SimParams sim;
};

struct TrueCctResult {
  double cct = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool capped = false;  // stable at the cap: the CCT is at least `lo`
  int probes = 0;
};

inline TrueCctResult true_cct(const NetworkModel& model, const Equilibrium& eq_pre, const Equilibrium& eq_post,
                              LinePair line, const TrueCctOptions& opt = {}) {
  if (!(opt.tol > 0) || !(opt.start > 0)) throw SimulationError("bad bisection settings");
  TrueCctResult res;
  auto stable = [&](double tau) {
    ++res.probes;
    return simulate_and_classify(model, eq_pre, eq_post, line, tau, opt.sim).kind == StabilityKind::kStable;
  };
  if (!stable(0.0)) throw SimulationError("the system is not stable even for an instantaneous clearing");
  double lo = 0.0, hi = opt.start;
  while (stable(hi)) {
    lo = hi;
    hi *= 2;
    if (hi > opt.cap) {
      res.capped = true;
      res.lo = lo;
      res.hi = std::numeric_limits<double>::infinity();
      res.cct = lo;
      return res;
    }
  }
  while (hi - lo > opt.tol) {
    const double mid = 0.5 * (lo + hi);
    (stable(mid) ? lo : hi) = mid;
  }
  // The bisection assumes longer faults stay unstable; check that once.
  if (hi * 1.5 <= opt.cap && stable(hi * 1.5)) {
    throw SimulationError("stability is not monotone in the clearing time for line " + line.str());
  }
  res.lo = lo;
  res.hi = hi;
  res.cct = 0.5 * (lo + hi);
  return res;
}

/// CSV with absolute angles and speeds: t,delta_<id>...,omega_<id>...
inline std::string trajectory_csv(const Trajectory& traj, const SwingDynamics& dyn) {
  std::ostringstream os;
  os.precision(17);
  os << "t";
  const int m = dyn.num_generators();
  for (int id : dyn.bus_ids()) os << ",delta_" << id;
  for (int g = 0; g < m; ++g) os << ",omega_" << dyn.bus_ids()[g];
  os << '\n';
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const VectorXd d = dyn.bus_angles(traj.states[i]);
    os << traj.times[i];
    for (int k = 0; k < d.size(); ++k) os << ',' << d(k);
    for (int g = 0; g < m; ++g) os << ',' << traj.states[i](m + g);
    os << '\n';
  }
  return os.str();
}

}  // namespace cctscreen
