#pragma once

// The Lyapunov function of a certificate, its derivatives along the fault-on
// and post-fault dynamics, and its minimum over the boundary of the polytope
// |delta_kj| <= pi/2.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "linalg.hpp"
#include "lmi.hpp"
#include "system_matrices.hpp"

namespace cctscreen {

/// Per-edge potential -w (cos(delta + alpha) + delta sin(delta* + alpha)); V is
/// x^T Q x / 2 + K . potential, so V is linear in (Q, K).
inline VectorXd edge_potential(const SystemMatrices& sm, const VectorXd& x) {
  const VectorXd d = sm.line_angles(x);
  VectorXd p(sm.ne);
  for (int e = 0; e < sm.ne; ++e) {
    p(e) = -sm.w(e) * (std::cos(d(e) + sm.alpha(e)) + d(e) * std::sin(sm.edge_star(e) + sm.alpha(e)));
  }
  return p;
}

class LyapunovFunction {
 public:
  LyapunovFunction(SystemMatrices sm, CertificateMatrices cert) : sm_(std::move(sm)), cert_(std::move(cert)) {
    if (cert_.Q.rows() != sm_.dim() || cert_.K.size() != sm_.ne) {
      throw std::invalid_argument("certificate does not match the system");
    }
  }

  const SystemMatrices& system() const { return sm_; }
  const CertificateMatrices& certificate() const { return cert_; }

  double value(const VectorXd& x) const {
    return 0.5 * x.dot(cert_.Q * x) + cert_.K.dot(edge_potential(sm_, x));
  }

  VectorXd gradient(const VectorXd& x) const {
    return cert_.Q * x + sm_.C.transpose() * cert_.K.cwiseProduct(sm_.flow_deviation(x));
  }

  MatrixXd hessian(const VectorXd& x) const {
    const VectorXd d = sm_.line_angles(x);
    VectorXd c(sm_.ne);
    for (int e = 0; e < sm_.ne; ++e) c(e) = cert_.K(e) * sm_.w(e) * std::cos(d(e) + sm_.alpha(e));
    return cert_.Q + sm_.C.transpose() * c.asDiagonal() * sm_.C;
  }

  /// Compact-form right-hand side A x - B F(Cx).
  VectorXd postfault_rhs(const VectorXd& x) const { return sm_.A * x - sm_.B * sm_.flow_deviation(x); }

  /// Same with line `edge` open: its full flow is added back.
  VectorXd faulton_rhs(const VectorXd& x, int edge) const {
    VectorXd r = postfault_rhs(x);
    const double d = sm_.line_angles(x)(edge);
    r += sm_.B.col(edge) * (sm_.w(edge) * std::sin(d + sm_.alpha(edge)));
    return r;
  }

  double vdot_postfault(const VectorXd& x) const { return gradient(x).dot(postfault_rhs(x)); }
  double vdot_faulton(const VectorXd& x, int edge) const { return gradient(x).dot(faulton_rhs(x, edge)); }

 private:
  SystemMatrices sm_;
  CertificateMatrices cert_;
};

inline double eval_V(const LyapunovFunction& L, const VectorXd& x) { return L.value(x); }
inline double eval_Vdot_postfault(const LyapunovFunction& L, const VectorXd& x) { return L.vdot_postfault(x); }
/// For a line set, the worst case over its members.
inline double eval_Vdot_faulton(const LyapunovFunction& L, const VectorXd& x, const LineSelector& sel) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int e : sel.edges) worst = std::max(worst, L.vdot_faulton(x, e));
  return worst;
}

struct FaceMinimum {
  int edge = 0;
  int sign = 1;
  bool empty = false;
  double value = std::numeric_limits<double>::infinity();        // at the returned point
  double lower_bound = std::numeric_limits<double>::infinity();  // certified
  VectorXd x;
};

struct RegionEstimate {
  double vmin = std::numeric_limits<double>::infinity();
  VectorXd argmin;
  int edge = -1;
  int sign = 0;
  std::vector<FaceMinimum> faces;
  static constexpr double kBox = std::numbers::pi / 2;
};

struct VminOptions {
  double tol = 1e-11;
  int max_newton = 200;
};

namespace detail {

struct AngleReduction {
  std::vector<int> ai;  // angle positions in x, bus order
  std::vector<int> vi;  // velocity positions
  MatrixXd schur;       // Q_aa - Q_av Q_vv^-1 Q_va
  MatrixXd back;        // x_v = back * x_a
};

inline AngleReduction reduce_angles(const SystemMatrices& sm, const MatrixXd& Q) {
  AngleReduction r;
  for (int k = 0; k < sm.n; ++k) r.ai.push_back(sm.angle_index(k));
  for (int g = 0; g < sm.m; ++g) r.vi.push_back(sm.velocity_index(g));
  const int na = sm.n, nv = sm.m;
  MatrixXd Qaa(na, na), Qav(na, nv), Qvv(nv, nv);
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < na; ++j) Qaa(i, j) = Q(r.ai[i], r.ai[j]);
    for (int j = 0; j < nv; ++j) Qav(i, j) = Q(r.ai[i], r.vi[j]);
  }
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) Qvv(i, j) = Q(r.vi[i], r.vi[j]);
  if (nv > 0) {
    Eigen::LLT<MatrixXd> llt(Qvv);
    if (llt.info() != Eigen::Success) throw Error("velocity block of Q is not positive definite");
    r.back = -llt.solve(Qav.transpose());
    r.schur = Qaa + Qav * r.back;
  } else {
    r.back = MatrixXd::Zero(0, na);
    r.schur = Qaa;
  }
  r.schur = 0.5 * (r.schur + r.schur.transpose());
  return r;
}

// Harmonic angles for a unit injection across edge e, scaled so the edge sits
// at target. Every other edge difference is strictly smaller in magnitude.
inline VectorXd harmonic_point(const SystemMatrices& sm, int e, double target) {
  const MatrixXd Lap = sm.E.transpose() * sm.E;
  const VectorXd b = sm.E.row(e).transpose();
  const VectorXd theta = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(Lap).solve(b);
  const double across = sm.E.row(e).dot(theta);
  return theta * (target / across);
}

}  // namespace detail

/// Minimum of V over each face delta_e = +-pi/2, |delta_f| <= pi/2, with the
/// velocities eliminated in closed form and the angles found by a barrier
/// Newton method. The reported value is a certified lower bound.
inline RegionEstimate compute_vmin(const LyapunovFunction& L, const VminOptions& opt = {}) {
  const auto& sm = L.system();
  const auto& c = L.certificate();
  const auto red = detail::reduce_angles(sm, c.Q);
  const int n = sm.n;
  const double hp = std::numbers::pi / 2;

  auto f_of = [&](const VectorXd& a, VectorXd* grad, MatrixXd* hess) {
    const VectorXd d = sm.edge_star + sm.E * a;
    double val = 0.5 * a.dot(red.schur * a);
    VectorXd F(sm.ne), curv(sm.ne);
    for (int e = 0; e < sm.ne; ++e) {
      const double sa = std::sin(sm.edge_star(e) + sm.alpha(e));
      val -= c.K(e) * sm.w(e) * (std::cos(d(e) + sm.alpha(e)) + d(e) * sa);
      F(e) = c.K(e) * sm.w(e) * (std::sin(d(e) + sm.alpha(e)) - sa);
      curv(e) = c.K(e) * sm.w(e) * std::cos(d(e) + sm.alpha(e));
    }
    if (grad) *grad = red.schur * a + sm.E.transpose() * F;
    if (hess) *hess = red.schur + sm.E.transpose() * curv.asDiagonal() * sm.E;
    return val;
  };

  RegionEstimate R;
  for (int e = 0; e < sm.ne; ++e) {
    for (int sign : {1, -1}) {
      FaceMinimum fm;
      fm.edge = e;
      fm.sign = sign;
      const VectorXd row = sm.E.row(e).transpose();
      const VectorXd theta = detail::harmonic_point(sm, e, sign * hp);
      VectorXd a0 = theta - sm.bus_star;
      // pin the face exactly
      a0 += row * ((sign * hp - sm.edge_star(e) - row.dot(a0)) / row.squaredNorm());

      std::vector<int> active;
      for (int f = 0; f < sm.ne; ++f) {
        if (f == e) continue;
        const VectorXd rf = sm.E.row(f).transpose();
        const double cosang = rf.dot(row) / (rf.norm() * row.norm());
        if (std::abs(std::abs(cosang) - 1.0) < 1e-12) {
          if (std::abs(sm.edge_star(f) + rf.dot(a0)) > hp + 1e-12) fm.empty = true;
          continue;
        }
        active.push_back(f);
      }
      if (fm.empty) {
        R.faces.push_back(fm);
        continue;
      }
      const MatrixXd Nb = null_space(row.transpose());
      const int du = static_cast<int>(Nb.cols());
      const int ncon = 2 * static_cast<int>(active.size());
      MatrixXd Gc(ncon, n);
      VectorXd hc(ncon);
      for (int i = 0; i < static_cast<int>(active.size()); ++i) {
        const int f = active[i];
        Gc.row(2 * i) = -sm.E.row(f);
        hc(2 * i) = hp - sm.edge_star(f);
        Gc.row(2 * i + 1) = sm.E.row(f);
        hc(2 * i + 1) = hp + sm.edge_star(f);
      }
      auto slack = [&](const VectorXd& a) { return VectorXd(Gc * a + hc); };
      VectorXd u = VectorXd::Zero(du);
      VectorXd a = a0;
      if (ncon > 0 && slack(a).minCoeff() <= 0) {
        fm.empty = true;
        R.faces.push_back(fm);
        continue;
      }
      double fa = f_of(a, nullptr, nullptr);
      // Relative stopping keeps the result invariant under rescaling of V.
      const double scale = std::max(std::abs(fa), 1e-300);
      double tau = std::max(1, ncon) / scale;
      if (du > 0) {
        auto phi = [&](const VectorXd& uu, VectorXd* g, MatrixXd* H) {
          const VectorXd aa = a0 + Nb * uu;
          const VectorXd sl = slack(aa);
          if (ncon > 0 && sl.minCoeff() <= 0) return std::numeric_limits<double>::infinity();
          VectorXd gf;
          MatrixXd hf;
          double val = tau * f_of(aa, g ? &gf : nullptr, H ? &hf : nullptr);
          for (int i = 0; i < ncon; ++i) val -= std::log(sl(i));
          if (g) {
            VectorXd ga = tau * gf;
            if (ncon) ga -= Gc.transpose() * sl.cwiseInverse();
            *g = Nb.transpose() * ga;
          }
          if (H) {
            MatrixXd Ha = tau * hf;
            if (ncon) Ha += Gc.transpose() * sl.cwiseInverse().cwiseAbs2().asDiagonal() * Gc;
            *H = Nb.transpose() * Ha * Nb;
          }
          return val;
        };
        for (int outer = 0; outer < 60; ++outer) {
          for (int it = 0; it < opt.max_newton; ++it) {
            VectorXd g;
            MatrixXd H;
            const double v0 = phi(u, &g, &H);
            // Shift the Hessian if the shifted-sine terms make it indefinite.
            double shift = 0.0;
            VectorXd du_step;
            for (int tries = 0; tries < 30; ++tries) {
              Eigen::LLT<MatrixXd> llt(H + shift * MatrixXd::Identity(du, du));
              if (llt.info() == Eigen::Success) {
                du_step = -llt.solve(g);
                break;
              }
              shift = shift == 0.0 ? 1e-12 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : shift * 10;
            }
            if (du_step.size() == 0) break;
            const double dec = -g.dot(du_step);
            if (dec / 2 <= 1e-13 * std::max(1.0, std::abs(v0))) break;
            double step = 1.0;
            int guard = 0;
            while (phi(u + step * du_step, nullptr, nullptr) > v0 - 0.25 * step * dec) {
              step *= 0.5;
              if (++guard > 60) break;
            }
            if (guard > 60) break;
            u += step * du_step;
          }
          a = a0 + Nb * u;
          fa = f_of(a, nullptr, nullptr);
          if (ncon == 0 || ncon / tau <= opt.tol * std::max(std::abs(fa), 1e-3 * scale)) break;
          tau *= 10;
        }
      }
      fm.value = fa;
      fm.lower_bound = ncon > 0 && du > 0 ? fa - ncon / tau : fa;
      VectorXd xv = red.back * a;
      fm.x = sm.state_from(a, xv);
      if (fm.lower_bound < R.vmin) {
        R.vmin = fm.lower_bound;
        R.argmin = fm.x;
        R.edge = e;
        R.sign = sign;
      }
      R.faces.push_back(std::move(fm));
    }
  }
  if (!std::isfinite(R.vmin)) throw Error("no nonempty face of the polytope");
  return R;
}

/// Membership in the certified region {x in Q : V(x) < V_min}.
inline bool in_region(const LyapunovFunction& L, const RegionEstimate& R, const VectorXd& x) {
  return L.system().in_polytope(x) && L.value(x) < R.vmin;
}

}  // namespace cctscreen
