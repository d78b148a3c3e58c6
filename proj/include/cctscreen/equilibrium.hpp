#pragma once

// Stable equilibrium of the power-flow equations and the sector slope beta.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "edges.hpp"
#include "linalg.hpp"
#include "network.hpp"

namespace cctscreen {

/// Newton failed, diverged, or left the region |delta_kj| < pi/2.
class EquilibriumError : public Error {
 public:
  using Error::Error;
};

enum class Injection { kPostFault, kPreFault };

struct Equilibrium {
  VectorXd angles;       // length n, bus order (generators, loads)
  VectorXd edge_angles;  // delta*_kj per line
  double gap = 0.0;      // max |delta*_kj|
  double residual = 0.0;
  int iterations = 0;
  Injection injection = Injection::kPostFault;
};

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 50;
};

/// Newton's method on the sine power-flow map. The reference is the infinite
/// bus when one exists, otherwise the highest-id bus, pinned at angle 0.
inline Equilibrium solve_sep(const NetworkModel& model, const VectorXd& guess,
                             NewtonOptions opt = {},
                             Injection which = Injection::kPostFault) {
  const int n = model.num_dynamic();
  if (guess.size() != n) throw EquilibriumError("initial guess has wrong dimension");
  const EdgeData ed = edge_data(model);
  const bool pre = which == Injection::kPreFault;

  VectorXd p(n);
  for (int k = 0; k < n; ++k) p(k) = model.buses()[k].injection(pre);

  int ref = -1;
  if (!model.has_infinite_bus()) {
    int best_id = 0;
    for (int k = 0; k < n; ++k) {
      if (ref < 0 || model.buses()[k].id > best_id) {
        ref = k;
        best_id = model.buses()[k].id;
      }
    }
  }
  std::vector<int> free;
  for (int k = 0; k < n; ++k) if (k != ref) free.push_back(k);
  const int nf = static_cast<int>(free.size());

  VectorXd delta = guess;
  if (ref >= 0) delta.array() -= guess(ref);

  auto residual_of = [&](const VectorXd& d) {
    VectorXd r = ed.injections(d) - p;
    if (ref >= 0) r(ref) = 0.0;  // implied by the others through balance
    return r;
  };

  Equilibrium eq;
  eq.injection = which;
  VectorXd r = residual_of(delta);
  int it = 0;
  for (; it <= opt.max_iter; ++it) {
    if (!r.allFinite()) throw EquilibriumError("Newton produced non-finite values");
    if (r.lpNorm<Eigen::Infinity>() <= opt.tol) break;
    if (it == opt.max_iter) {
      throw EquilibriumError("Newton did not converge in " + std::to_string(opt.max_iter) +
                             " iterations (residual " + std::to_string(r.lpNorm<Eigen::Infinity>()) + ")");
    }
    const VectorXd de = ed.E * delta;
    VectorXd c(ed.num_edges());
    for (int e = 0; e < ed.num_edges(); ++e) c(e) = ed.s(e) * ed.w(e) * std::cos(de(e) + ed.alpha(e));
    const MatrixXd J = ed.E.transpose() * c.asDiagonal() * ed.E;
    MatrixXd Jr(nf, nf);
    VectorXd rr(nf);
    for (int a = 0; a < nf; ++a) {
      rr(a) = r(free[a]);
      for (int b = 0; b < nf; ++b) Jr(a, b) = J(free[a], free[b]);
    }
    Eigen::FullPivLU<MatrixXd> lu(Jr);
    if (nf > 0 && !lu.isInvertible()) throw EquilibriumError("singular power-flow Jacobian");
    const VectorXd step = nf > 0 ? VectorXd(lu.solve(rr)) : VectorXd();
    for (int a = 0; a < nf; ++a) delta(free[a]) -= step(a);
    r = residual_of(delta);
  }

  eq.angles = delta;
  eq.edge_angles = ed.E * delta;
  eq.iterations = it;
  eq.residual = r.lpNorm<Eigen::Infinity>();
  eq.gap = eq.edge_angles.size() ? eq.edge_angles.cwiseAbs().maxCoeff() : 0.0;
  if (eq.gap >= std::numbers::pi / 2) {
    throw EquilibriumError("equilibrium leaves the region |delta_kj| < pi/2 (gap " +
                           std::to_string(eq.gap) + ")");
  }
  return eq;
}

inline Equilibrium solve_sep(const NetworkModel& model, Injection which = Injection::kPostFault) {
  return solve_sep(model, VectorXd::Zero(model.num_dynamic()), {}, which);
}

/// lambda = max |delta*_kj|, or the caller's nominal value when it is larger.
inline double angle_gap(const Equilibrium& eq, std::optional<double> nominal = std::nullopt) {
  if (!nominal) return eq.gap;
  if (*nominal + 1e-12 < eq.gap) {
    throw EquilibriumError("nominal lambda " + std::to_string(*nominal) +
                           " is below the equilibrium gap " + std::to_string(eq.gap));
  }
  return *nominal;
}

enum class SectorMode { kLossless, kLossy, kVoltageFluctuation };

inline const char* to_string(SectorMode m) {
  switch (m) {
    case SectorMode::kLossless: return "lossless";
    case SectorMode::kLossy: return "lossy";
    case SectorMode::kVoltageFluctuation: return "voltage-fluctuation";
  }
  return "?";
}

inline SectorMode sector_mode(const NetworkModel& model) {
  if (model.fluctuation()) return SectorMode::kVoltageFluctuation;
  return model.lossy() ? SectorMode::kLossy : SectorMode::kLossless;
}

struct SectorBound {
  double beta = 0.0;
  double lambda = 0.0;
  SectorMode mode = SectorMode::kLossless;
};

namespace detail {

// Smallest slope of the chord of sin(. + alpha) anchored at theta over
// [-pi/2, pi/2], for theta >= 0. The right chord is evaluated at lambda, which
// bounds it from below for every anchor in [0, lambda].
inline double min_chord_slope(double theta, double lambda, double alpha) {
  const double half_pi = std::numbers::pi / 2;
  const double right = (std::cos(alpha) - std::sin(lambda + alpha)) / (half_pi - lambda);
  const double left = (std::sin(theta + alpha) + std::cos(alpha)) / (theta + half_pi);
  const double tangent = std::cos(theta + alpha);
  return std::min({right, left, tangent});
}

}  // namespace detail

inline SectorBound compute_beta(const Equilibrium& eq, const NetworkModel& model, double lambda) {
  if (!(lambda < std::numbers::pi / 2)) throw EquilibriumError("lambda must be below pi/2");
  if (lambda < 0) throw EquilibriumError("lambda must be non-negative");
  SectorBound sb;
  sb.lambda = lambda;
  sb.mode = sector_mode(model);
  const EdgeData ed = edge_data(model);
  if (sb.mode == SectorMode::kLossy) {
    sb.beta = std::numeric_limits<double>::infinity();
    for (int e = 0; e < ed.num_edges(); ++e) {
      // Mirror negative anchors so the chord is always taken at theta >= 0.
      const double d = eq.edge_angles(e);
      const double a = d < 0 ? -ed.alpha(e) : ed.alpha(e);
      sb.beta = std::min(sb.beta, detail::min_chord_slope(std::abs(d), lambda, a));
    }
  } else {
    sb.beta = (1.0 - std::sin(lambda)) / (std::numbers::pi / 2 - lambda);
    if (sb.mode == SectorMode::kVoltageFluctuation) {
      const double r = model.fluctuation()->ratio;
      sb.beta *= (1 - r) * (1 - r) / ((1 + r) * (1 + r));
    }
  }
  if (!(sb.beta > 0)) throw EquilibriumError("sector slope is not positive");
  return sb;
}

/// Per-edge nonlinearity f_e(delta) = w_e (sin(delta + alpha_e) - sin(delta*_e + alpha_e)).
inline double edge_flow_deviation(const EdgeData& ed, const Equilibrium& eq, int e, double delta) {
  return ed.w(e) * (std::sin(delta + ed.alpha(e)) - std::sin(eq.edge_angles(e) + ed.alpha(e)));
}

/// g = (f - y)(f - beta y) with y = delta - delta*; nonpositive inside the sector.
inline double sector_gap(const EdgeData& ed, const Equilibrium& eq, double beta, int e, double delta) {
  const double y = delta - eq.edge_angles(e);
  const double f = edge_flow_deviation(ed, eq, e, delta);
  return (f - y) * (f - beta * y);
}

/// Fault-cleared starting point relative to the post-fault equilibrium, in
/// the state layout [generator angles, generator speeds, load angles].
inline VectorXd pre_fault_offset(const Equilibrium& eq_pre, const Equilibrium& eq_post, int num_generators) {
  if (eq_pre.angles.size() != eq_post.angles.size()) throw EquilibriumError("equilibria differ in dimension");
  const int n = static_cast<int>(eq_post.angles.size());
  const int m = num_generators;
  if (m < 0 || m > n) throw EquilibriumError("bad generator count");
  const VectorXd d = eq_pre.angles - eq_post.angles;
  VectorXd x = VectorXd::Zero(n + m);
  x.head(m) = d.head(m);
  x.tail(n - m) = d.tail(n - m);
  return x;
}

}  // namespace cctscreen
