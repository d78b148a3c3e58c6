#include <gtest/gtest.h>

#include <random>

#include "cctscreen/lyapunov.hpp"
#include "cctscreen/sim.hpp"
#include "test_util.hpp"

using namespace cctscreen;

namespace {

struct Solved {
  Study st;
  LineSelector sel;
  CertificateMatrices cert;
};

Solved solved(const std::string& name, LinePair line, double gamma, std::optional<double> trace = std::nullopt) {
  Study st = case_study(name);
  LmiSolveConfig cfg;
  cfg.trace = trace;
  auto sel = line_selector(st.model, line);
  auto out = solve_certificate(st.sm, st.sector, gamma, sel, cfg);
  if (!out.cert) throw std::runtime_error("no certificate for " + name + ": " + out.message);
  return {std::move(st), sel, *out.cert};
}

// Uniform angles, rejected until every line angle sits in [-pi/2, pi/2].
VectorXd sample_in_polytope(const SystemMatrices& sm, std::mt19937_64& rng, double vel = 2.0) {
  std::uniform_real_distribution<double> a(-std::numbers::pi, std::numbers::pi), v(-vel, vel);
  for (;;) {
    VectorXd ang(sm.n), w(sm.m);
    for (int k = 0; k < sm.n; ++k) ang(k) = a(rng);
    for (int g = 0; g < sm.m; ++g) w(g) = v(rng);
    const VectorXd x = sm.state_from(ang - sm.bus_star, w);
    if (sm.in_polytope(x)) return x;
  }
}

std::vector<Solved> certificates() {
  std::vector<Solved> out;
  out.push_back(solved("case2.json", {1, 2}, 1.0, kTwoBusTrace));
  out.push_back(solved("case2.json", {1, 2}, 7.0, kTwoBusTrace));
  out.push_back(solved("case3.json", {1, 2}, 3.0));
  out.push_back(solved("case9.json", {4, 6}, 7e-6));
  out.push_back(solved("case9.json", {7, 8}, 1e-2));
  return out;
}

}  // namespace

TEST(Lyapunov, GradientAndHessianMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    for (int t = 0; t < 10; ++t) {
      const VectorXd x = sample_in_polytope(s.st.sm, rng);
      const VectorXd g = L.gradient(x);
      const MatrixXd H = L.hessian(x);
      const double h = 1e-6;
      for (int i = 0; i < x.size(); ++i) {
        VectorXd e = VectorXd::Zero(x.size());
        e(i) = h;
        const double fd = (L.value(x + e) - L.value(x - e)) / (2 * h);
        EXPECT_NEAR(g(i), fd, 1e-6 * (1 + std::abs(fd)));
        const VectorXd gd = (L.gradient(x + e) - L.gradient(x - e)) / (2 * h);
        EXPECT_LT((H.col(i) - gd).cwiseAbs().maxCoeff(), 1e-5 * (1 + gd.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST(Lyapunov, StationaryAtEquilibrium) {
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    EXPECT_LT(L.gradient(VectorXd::Zero(s.st.sm.dim())).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Lyapunov, HessianPositiveSemidefiniteOnPolytope) {
  std::mt19937_64 rng(4);
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    for (int t = 0; t < 200; ++t) {
      const VectorXd x = sample_in_polytope(s.st.sm, rng);
      EXPECT_GE(min_eigenvalue(L.hessian(x)), -1e-10);
    }
  }
}

TEST(Lyapunov, DerivativeBoundsOnPolytope) {
  std::mt19937_64 rng(5);
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    const double cap = 1.0 / (2 * s.cert.gamma) + 1e-8;
    double worst_post = -1e300, worst_fault = -1e300;
    for (int t = 0; t < 1000; ++t) {
      const VectorXd x = sample_in_polytope(s.st.sm, rng);
      worst_post = std::max(worst_post, eval_Vdot_postfault(L, x));
      worst_fault = std::max(worst_fault, eval_Vdot_faulton(L, x, s.sel));
    }
    EXPECT_LE(worst_post, 1e-8);
    EXPECT_LE(worst_fault, cap);
  }
}

TEST(Lyapunov, CompactFormMatchesBusEquations) {
  std::mt19937_64 rng(6);
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    SwingDynamics dyn(s.st.model, s.st.eq_post);
    const int e = s.sel.edges.front();
    for (int t = 0; t < 20; ++t) {
      const VectorXd x = sample_in_polytope(s.st.sm, rng);
      EXPECT_LT((L.postfault_rhs(x) - dyn(x)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((L.faulton_rhs(x, e) - dyn(x, e)).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Lyapunov, VminMatchesGridOnTwoBus) {
  for (double gamma : {1.0, 7.0}) {
    const auto s = solved("case2.json", {1, 2}, gamma, kTwoBusTrace);
    LyapunovFunction L(s.st.sm, s.cert);
    const auto R = compute_vmin(L);
    // faces are the two angle values at delta = +-pi/2; brute force the speed
    double grid = 1e300;
    for (int sign : {1, -1}) {
      const double a = sign * std::numbers::pi / 2 - s.st.sm.edge_star(0);
      for (int i = 0; i <= 200000; ++i) {
        const double w = -5.0 + 10.0 * i / 200000;
        grid = std::min(grid, L.value(s.st.sm.state_from(VectorXd::Constant(1, a), VectorXd::Constant(1, w))));
      }
    }
    EXPECT_NEAR(R.vmin, grid, 1e-3);
    EXPECT_LE(R.vmin, grid + 1e-12);
  }
}

TEST(Lyapunov, VminIsALowerBoundOnTheBoundary) {
  std::mt19937_64 rng(8);
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    const auto R = compute_vmin(L);
    const auto& sm = s.st.sm;
    // push random interior points out to the boundary along a ray from 0
    for (int t = 0; t < 300; ++t) {
      const VectorXd x = sample_in_polytope(sm, rng);
      double lo = 0, hi = 1;
      while (sm.in_polytope(hi * x)) hi *= 2;
      for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (sm.in_polytope(mid * x) ? lo : hi) = mid;
      }
      EXPECT_GE(L.value(lo * x), R.vmin - 1e-9);
    }
    // and the reported minimiser is on the boundary with a matching value
    EXPECT_NEAR(std::abs(sm.line_angles(R.argmin)(R.edge)), std::numbers::pi / 2, 1e-9);
    EXPECT_LE(R.vmin, L.value(R.argmin) + 1e-12);
    EXPECT_NEAR(R.vmin, L.value(R.argmin), 1e-6 * (1 + std::abs(R.vmin)));
    EXPECT_TRUE(in_region(L, R, VectorXd::Zero(sm.dim())));
  }
}

TEST(Lyapunov, BoundInvariantUnderRescaling) {
  for (const auto& s : certificates()) {
    LyapunovFunction L(s.st.sm, s.cert);
    const auto est = cct_bound(s.cert, compute_vmin(L).vmin, s.st.x_pre, L);
    for (double c : {0.01, 3.0, 250.0}) {
      const auto sc = s.cert.scaled(c);
      LyapunovFunction Ls(s.st.sm, sc);
      const auto est2 = cct_bound(sc, compute_vmin(Ls).vmin, s.st.x_pre, Ls);
      EXPECT_NEAR(est2.bound, est.bound, 1e-8 * std::max(1e-300, std::abs(est.bound)));
      // the rescaled certificate is still valid
      EXPECT_LE(psd_slack(assemble_bounding_lmi(s.st.sm, sc.sector.beta, sc.gamma, s.sel, sc.Q, sc.K, sc.H)),
                1e-8 * std::max(1.0, c));
    }
  }
}

TEST(Lyapunov, PreFaultPointOutsidePolytopeIsRejected) {
  const auto s = solved("case2.json", {1, 2}, 1.0, kTwoBusTrace);
  LyapunovFunction L(s.st.sm, s.cert);
  const double vmin = compute_vmin(L).vmin;
  const VectorXd far = VectorXd::Constant(2, 2.0);
  EXPECT_THROW(cct_bound(s.cert, vmin, far, L), Error);
}
