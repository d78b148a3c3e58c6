#pragma once

// Small dense semidefinite programs solved by a primal log-barrier method.
//
//   maximise    c^T y
//   subject to  F0_j + sum_i y_i F_ij  >= 0   (PSD, one block per j)
//               G y + h                >= 0
//               Aeq y                   = beq
//
// Equalities are removed by a null-space parametrisation. A phase-I problem
// (minimise s such that every constraint plus s is feasible) supplies a
// strictly feasible start.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace cctscreen::sdp {

struct LmiBlock {
  MatrixXd F0;
  std::vector<MatrixXd> F;  // one per variable; an empty matrix means zero
};

struct Problem {
  int num_vars = 0;
  VectorXd c;
  std::vector<LmiBlock> lmis;
  MatrixXd G;
  VectorXd h;
  MatrixXd Aeq;
  VectorXd beq;
};

enum class Status { kOptimal, kFeasible, kInfeasible, kFailed };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::kOptimal: return "optimal";
    case Status::kFeasible: return "feasible";
    case Status::kInfeasible: return "infeasible";
    case Status::kFailed: return "solver-failure";
  }
  return "?";
}

struct Options {
  double mu = 20.0;
  double gap_abs = 1e-10;
  double gap_rel = 1e-9;
  double newton_tol = 1e-10;
  int max_newton = 600;
  /// Phase I declares infeasibility once the optimal slack is provably above
  /// this value, or is pinned within it of zero.
  double infeasible_tol = 1e-12;
};

struct Result {
  Status status = Status::kFailed;
  VectorXd y;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double gap = std::numeric_limits<double>::infinity();
  double phase1_slack = std::numeric_limits<double>::quiet_NaN();
  int newton_steps = 0;
  std::string message;
};

namespace detail {

struct Reduced {
  int dim = 0;
  std::vector<MatrixXd> F0;
  std::vector<std::vector<MatrixXd>> F;
  MatrixXd G;
  VectorXd h;
  VectorXd c;  // minimise c^T z
  double theta = 0;

  int barrier_size() const { return static_cast<int>(theta); }
};

struct Parametrisation {
  VectorXd y0;
  MatrixXd Z;
  bool consistent = true;
};

inline Parametrisation parametrise(const Problem& p) {
  Parametrisation par;
  const int nv = p.num_vars;
  if (p.Aeq.rows() == 0) {
    par.y0 = VectorXd::Zero(nv);
    par.Z = MatrixXd::Identity(nv, nv);
    return par;
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(p.Aeq);
  par.y0 = cod.solve(p.beq);
  const double scale = std::max(1.0, p.beq.cwiseAbs().maxCoeff());
  par.consistent = (p.Aeq * par.y0 - p.beq).cwiseAbs().maxCoeff() <= 1e-9 * scale;
  par.Z = null_space(p.Aeq, 1e-11);
  return par;
}

inline MatrixXd combine(const std::vector<MatrixXd>& F, const VectorXd& coef, int rows) {
  MatrixXd out = MatrixXd::Zero(rows, rows);
  for (int i = 0; i < coef.size(); ++i) {
    if (coef(i) != 0.0 && F[i].size() != 0) out.noalias() += coef(i) * F[i];
  }
  return out;
}

// Expresses the problem in u with y = y0 + Z u. When `slack` is set, an extra
// trailing variable s is added to every constraint and becomes the objective.
inline Reduced reduce(const Problem& p, const Parametrisation& par, bool slack) {
  Reduced r;
  const int du = static_cast<int>(par.Z.cols());
  r.dim = du + (slack ? 1 : 0);
  for (const auto& blk : p.lmis) {
    const int s = static_cast<int>(blk.F0.rows());
    r.F0.push_back(blk.F0 + combine(blk.F, par.y0, s));
    std::vector<MatrixXd> Fu;
    Fu.reserve(r.dim);
    for (int j = 0; j < du; ++j) Fu.push_back(combine(blk.F, par.Z.col(j), s));
    if (slack) Fu.push_back(MatrixXd::Identity(s, s));
    r.F.push_back(std::move(Fu));
    r.theta += s;
  }
  const int nl = static_cast<int>(p.G.rows());
  r.G = MatrixXd::Zero(nl + (slack ? 1 : 0), r.dim);
  r.h = VectorXd::Zero(nl + (slack ? 1 : 0));
  if (nl > 0) {
    r.G.topLeftCorner(nl, du) = p.G * par.Z;
    r.h.head(nl) = p.G * par.y0 + p.h;
    if (slack) r.G.col(du).head(nl).setOnes();
  }
  r.theta += nl;
  r.c = VectorXd::Zero(r.dim);
  if (slack) {
    r.c(du) = 1.0;
    r.G(nl, du) = 1.0;  // floor row, its offset is set by the caller
    r.theta += 1;
  } else if (p.c.size() == p.num_vars) {
    r.c = -(par.Z.transpose() * p.c);
  }
  return r;
}

struct Eval {
  double f = 0;
  VectorXd g;
  MatrixXd H;
};

// Barrier value t c^T z - sum log det F_j(z) - sum log(Gz + h)_k. Returns false
// when z is not strictly feasible.
inline bool evaluate(const Reduced& r, const VectorXd& z, double t, Eval* out, bool derivatives) {
  out->f = t * r.c.dot(z);
  if (derivatives) {
    out->g = t * r.c;
    out->H = MatrixXd::Zero(r.dim, r.dim);
  }
  for (std::size_t j = 0; j < r.F0.size(); ++j) {
    const int s = static_cast<int>(r.F0[j].rows());
    const MatrixXd Fz = r.F0[j] + combine(r.F[j], z, s);
    Eigen::LLT<MatrixXd> llt(Fz);
    if (llt.info() != Eigen::Success) return false;
    const MatrixXd L = llt.matrixL();
    double logdet = 0;
    for (int i = 0; i < s; ++i) {
      if (!(L(i, i) > 0)) return false;
      logdet += 2 * std::log(L(i, i));
    }
    out->f -= logdet;
    if (!derivatives) continue;
    const MatrixXd Linv = llt.matrixL().solve(MatrixXd::Identity(s, s));
    MatrixXd Gm(s * s, r.dim);
    for (int i = 0; i < r.dim; ++i) {
      if (r.F[j][i].size() == 0) {
        Gm.col(i).setZero();
        continue;
      }
      const MatrixXd Gi = Linv * r.F[j][i] * Linv.transpose();
      out->g(i) -= Gi.trace();
      Gm.col(i) = Eigen::Map<const VectorXd>(Gi.data(), s * s);
    }
    out->H.noalias() += Gm.transpose() * Gm;
  }
  if (r.G.rows() > 0) {
    const VectorXd sl = r.G * z + r.h;
    for (int k = 0; k < sl.size(); ++k) {
      if (!(sl(k) > 0)) return false;
      out->f -= std::log(sl(k));
    }
    if (derivatives) {
      const VectorXd inv = sl.cwiseInverse();
      out->g.noalias() -= r.G.transpose() * inv;
      out->H.noalias() += r.G.transpose() * inv.cwiseAbs2().asDiagonal() * r.G;
    }
  }
  return std::isfinite(out->f);
}

inline VectorXd newton_direction(const MatrixXd& H, const VectorXd& g) {
  // Jacobi scaling first; the barrier Hessian spans many orders of magnitude.
  VectorXd d = H.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  MatrixXd Hs = d.asDiagonal() * H * d.asDiagonal();
  Hs.diagonal().array() += 1e-14;
  Eigen::LDLT<MatrixXd> ldlt(Hs);
  return -(d.asDiagonal() * ldlt.solve(d.asDiagonal() * g));
}

enum class Stop { kContinue, kStop };

struct PathResult {
  bool ok = false;
  bool stopped = false;
  VectorXd z;
  double t = 0;
  int steps = 0;
  std::string message;
};

// Follows the central path from a strictly feasible z. `after_centering` may
// end the run early; otherwise it stops when theta / t meets the gap test.
template <class Hook>
PathResult follow_path(const Reduced& r, VectorXd z, const Options& opt, Hook after_centering) {
  PathResult pr;
  Eval ev;
  if (!evaluate(r, z, 0.0, &ev, true)) {
    pr.message = "start point is not strictly feasible";
    return pr;
  }
  double t = 1.0;
  if (r.dim > 0 && r.c.squaredNorm() > 0) {
    Eigen::LDLT<MatrixXd> ldlt(ev.H + 1e-14 * std::max(1.0, ev.H.diagonal().maxCoeff()) *
                                          MatrixXd::Identity(r.dim, r.dim));
    const double gg = ev.g.dot(ldlt.solve(ev.g));
    const double cc = r.c.dot(ldlt.solve(r.c));
    if (cc > 0 && gg > 0) t = std::clamp(std::sqrt(gg / cc), 1e-8, 1e12);
  }
  for (;;) {
    // Centering.
    for (;;) {
      if (pr.steps >= opt.max_newton) {
        pr.z = z;
        pr.t = t;
        pr.message = "Newton iteration limit reached";
        return pr;
      }
      evaluate(r, z, t, &ev, true);
      const VectorXd dz = newton_direction(ev.H, ev.g);
      const double lambda2 = -ev.g.dot(dz);
      if (!std::isfinite(lambda2)) {
        pr.z = z;
        pr.message = "non-finite Newton step";
        return pr;
      }
      if (lambda2 / 2 <= opt.newton_tol) break;
      double step = 1.0;
      Eval trial;
      int guard = 0;
      while (!evaluate(r, z + step * dz, t, &trial, false) ||
             trial.f > ev.f - 0.25 * step * lambda2) {
        step *= 0.5;
        if (++guard > 80) break;
      }
      ++pr.steps;
      if (guard > 80 || step < 1e-6) break;  // no progress possible at this precision
      z += step * dz;
      if (!z.allFinite() || z.cwiseAbs().maxCoeff() > 1e15) {
        pr.z = z;
        pr.message = "iterates diverged";
        return pr;
      }
    }
    if (after_centering(z, t) == Stop::kStop) {
      pr.ok = true;
      pr.stopped = true;
      pr.z = z;
      pr.t = t;
      return pr;
    }
    const double obj = r.c.dot(z);
    if (r.theta / t <= opt.gap_abs + opt.gap_rel * std::abs(obj) || r.c.squaredNorm() == 0) {
      pr.ok = true;
      pr.z = z;
      pr.t = t;
      return pr;
    }
    t *= opt.mu;
  }
}

inline double lmi_min_eigenvalue(const Reduced& r, const VectorXd& z) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < r.F0.size(); ++j) {
    const int s = static_cast<int>(r.F0[j].rows());
    worst = std::min(worst, min_eigenvalue(r.F0[j] + combine(r.F[j], z, s)));
  }
  if (r.G.rows() > 0) worst = std::min(worst, (r.G * z + r.h).minCoeff());
  return worst;
}

}  // namespace detail

/// Phase I: a strictly feasible point, or a proof (to tolerance) that none exists.
inline Result find_feasible(const Problem& p, const Options& opt = {}) {
  Result res;
  const auto par = detail::parametrise(p);
  if (!par.consistent) {
    res.status = Status::kInfeasible;
    res.message = "equality constraints are inconsistent";
    return res;
  }
  detail::Reduced r = detail::reduce(p, par, /*slack=*/true);
  const int du = r.dim - 1;
  VectorXd z = VectorXd::Zero(r.dim);
  // Drop the slack variable from the F terms to measure infeasibility at u = 0.
  double worst = std::numeric_limits<double>::infinity();
  double scale = 1.0;
  for (std::size_t j = 0; j < r.F0.size(); ++j) {
    worst = std::min(worst, min_eigenvalue(r.F0[j]));
    scale = std::max(scale, r.F0[j].cwiseAbs().maxCoeff());
  }
  const int nl = static_cast<int>(r.G.rows()) - 1;
  if (nl > 0) {
    worst = std::min(worst, r.h.head(nl).minCoeff());
    scale = std::max(scale, r.h.head(nl).cwiseAbs().maxCoeff());
  }
  if (!std::isfinite(worst)) worst = 0.0;
  const double s0 = std::max(0.0, -worst) + 0.1 * scale;
  z(du) = s0;
  r.h(nl) = 10.0 * s0 + scale;  // s >= -floor keeps phase I bounded
  auto hook = [&](const VectorXd& zz, double t) {
    const double s = zz(du);
    if (s < 0) return detail::Stop::kStop;
    if (s - r.theta / t > opt.infeasible_tol) return detail::Stop::kStop;
    return detail::Stop::kContinue;
  };
  Options o = opt;
  o.gap_abs = opt.infeasible_tol;
  o.gap_rel = 0.0;
  auto pr = detail::follow_path(r, z, o, hook);
  res.newton_steps = pr.steps;
  if (pr.z.size() == r.dim) res.phase1_slack = pr.z(du);
  if (pr.z.size() == r.dim && pr.z(du) < 0) {
    res.status = Status::kFeasible;
    res.y = par.y0 + par.Z * pr.z.head(du);
    return res;
  }
  if (!pr.ok) {
    res.status = Status::kFailed;
    res.message = "phase I: " + pr.message;
    return res;
  }
  res.status = Status::kInfeasible;
  res.message = "no strictly feasible point (phase-I slack " + std::to_string(pr.z(du)) + ")";
  return res;
}

/// Phase II from a strictly feasible `start` (or from phase I when absent).
inline Result maximize(const Problem& p, const Options& opt = {}, const VectorXd* start = nullptr) {
  Result res;
  const auto par = detail::parametrise(p);
  if (!par.consistent) {
    res.status = Status::kInfeasible;
    res.message = "equality constraints are inconsistent";
    return res;
  }
  VectorXd y;
  int steps = 0;
  const detail::Reduced r = detail::reduce(p, par, /*slack=*/false);
  detail::Eval ev;
  bool have_start = false;
  if (start) {
    const VectorXd u = par.Z.transpose() * (*start - par.y0);
    have_start = detail::evaluate(r, u, 0.0, &ev, false);
  }
  if (!have_start) {
    Result feas = find_feasible(p, opt);
    steps += feas.newton_steps;
    if (feas.status != Status::kFeasible) return feas;
    y = feas.y;
    res.phase1_slack = feas.phase1_slack;
  } else {
    y = *start;
  }
  const VectorXd u0 = par.Z.transpose() * (y - par.y0);
  auto pr = detail::follow_path(r, u0, opt, [](const VectorXd&, double) { return detail::Stop::kContinue; });
  res.newton_steps = steps + pr.steps;
  if (pr.z.size() == r.dim) {
    res.y = par.y0 + par.Z * pr.z;
    res.objective = p.c.size() ? p.c.dot(res.y) : 0.0;
    res.gap = pr.t > 0 ? r.theta / pr.t : std::numeric_limits<double>::infinity();
  }
  if (!pr.ok) {
    // A feasible iterate with a loose gap is still usable; report it as such.
    const bool usable = pr.z.size() == r.dim && detail::lmi_min_eigenvalue(r, pr.z) > 0;
    res.status = usable ? Status::kFeasible : Status::kFailed;
    res.message = pr.message;
    return res;
  }
  res.status = Status::kOptimal;
  return res;
}

}  // namespace cctscreen::sdp
