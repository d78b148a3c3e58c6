#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "cctscreen/equilibrium.hpp"
#include "test_util.hpp"

using namespace cctscreen;

TEST(Equilibrium, SingleMachineClosedForm) {
  const auto m = load_case("case2.json");
  const Line& l = m.lines().front();
  const double y = std::hypot(l.susceptance, l.conductance);
  const double a = std::atan(l.conductance / l.susceptance);
  const auto post = solve_sep(m, Injection::kPostFault);
  const auto pre = solve_sep(m, Injection::kPreFault);
  EXPECT_NEAR(post.angles(0), std::asin(0.06 / y) - a, 1e-9);
  EXPECT_NEAR(pre.angles(0), std::asin(0.05 / y) - a, 1e-9);
}

TEST(Equilibrium, SingleMachineReferenceAngles) {
  const auto m = load_case("case2.json");
  EXPECT_NEAR(solve_sep(m, Injection::kPostFault).angles(0), 0.2547, 1e-4);
  EXPECT_NEAR(solve_sep(m, Injection::kPreFault).angles(0), 0.2027, 1e-4);
}

TEST(Equilibrium, ThreeMachineReferenceAnglesUpToShift) {
  const auto m = load_case("case3.json");
  const auto eq = solve_sep(m);
  const Eigen::Vector3d reference(-0.6634, -0.5046, -0.5640);
  const Eigen::VectorXd diff = eq.angles - reference;
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(diff(k), diff(2), 1e-3) << "bus " << k + 1;
  EXPECT_LT(eq.gap, std::numbers::pi / 10);
}

TEST(Equilibrium, MatchesRelaxationOracle) {
  for (const char* name : {"case2.json", "case3.json", "case9.json"}) {
    const auto m = load_case(name);
    const auto eq = solve_sep(m);
    Eigen::VectorXd ref = oracle_equilibrium(m);
    Eigen::VectorXd got = eq.angles;
    if (!m.has_infinite_bus()) {
      // compare modulo the uniform shift
      ref.array() -= ref(ref.size() - 1);
      got.array() -= got(got.size() - 1);
    }
    EXPECT_LT((ref - got).cwiseAbs().maxCoeff(), 1e-9) << name;
    EXPECT_LT(eq.residual, 1e-10) << name;
  }
}

TEST(Equilibrium, ResidualFromIndependentFlows) {
  for (const char* name : {"case2.json", "case3.json", "case9.json"}) {
    const auto m = load_case(name);
    const auto eq = solve_sep(m);
    Eigen::VectorXd p(m.num_dynamic());
    for (int k = 0; k < p.size(); ++k) p(k) = m.buses()[k].power;
    EXPECT_LT((oracle_outflow(m, eq.angles) - p).cwiseAbs().maxCoeff(), 1e-9) << name;
  }
}

TEST(Equilibrium, PerturbedStartsConvergeToSamePoint) {
  const auto m = load_case("case9.json");
  const auto base = solve_sep(m);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd g(m.num_dynamic());
    for (int k = 0; k < g.size(); ++k) g(k) = base.angles(k) + u(rng);
    const auto eq = solve_sep(m, g);
    EXPECT_LT((eq.edge_angles - base.edge_angles).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Equilibrium, SectorSlopeLossless) {
  for (const char* name : {"case3.json", "case9.json"}) {
    const auto m = load_case(name);
    const auto eq = solve_sep(m);
    const auto sb = compute_beta(eq, m, angle_gap(eq));
    // Brute-force chord slope over anchors |theta| <= lambda and |delta| <= pi/2.
    double oracle = 1e9;
    const int N = 400;
    for (int i = 0; i <= N; ++i) {
      const double th = -sb.lambda + 2 * sb.lambda * i / N;
      for (int j = 0; j <= 2 * N; ++j) {
        const double d = -std::numbers::pi / 2 + std::numbers::pi * j / (2 * N);
        if (std::abs(d - th) < 1e-9) continue;
        oracle = std::min(oracle, (std::sin(d) - std::sin(th)) / (d - th));
      }
    }
    EXPECT_NEAR(sb.beta, oracle, 1e-6) << name;
    EXPECT_EQ(sb.mode, SectorMode::kLossless);
  }
}

TEST(Equilibrium, SectorSlopeLossyIsValidLowerEnvelope) {
  const auto m = load_case("case2.json");
  const auto eq = solve_sep(m);
  const auto sb = compute_beta(eq, m, angle_gap(eq));
  EXPECT_EQ(sb.mode, SectorMode::kLossy);
  const auto ed = edge_data(m);
  double tightest = 1e9;
  for (int j = 0; j <= 20000; ++j) {
    const double d = -std::numbers::pi / 2 + std::numbers::pi * j / 20000;
    const double y = d - eq.edge_angles(0);
    if (std::abs(y) < 1e-9) continue;
    EXPECT_LE(sector_gap(ed, eq, sb.beta, 0, d), 1e-12);
    tightest = std::min(tightest, edge_flow_deviation(ed, eq, 0, d) / y);
  }
  EXPECT_LE(sb.beta, tightest + 1e-12);
}

TEST(Equilibrium, ReferenceSectorSlopes) {
  const auto m2 = load_case("case2.json");
  const auto e2 = solve_sep(m2);
  EXPECT_NEAR(compute_beta(e2, m2, std::numbers::pi / 10).beta, 0.5114, 1e-4);
  const auto m9 = load_case("case9.json");
  const auto e9 = solve_sep(m9);
  EXPECT_NEAR(compute_beta(e9, m9, std::numbers::pi / 8).beta, 0.5240, 1e-4);
  const auto m3 = load_case("case3.json");
  const auto e3 = solve_sep(m3);
  EXPECT_NEAR(compute_beta(e3, m3, std::numbers::pi / 10).beta,
              (1 - std::sin(std::numbers::pi / 10)) / (std::numbers::pi / 2 - std::numbers::pi / 10), 1e-15);
}

TEST(Equilibrium, NominalLambdaBelowGapIsRejected) {
  const auto m = load_case("case9.json");
  const auto eq = solve_sep(m);
  EXPECT_THROW(angle_gap(eq, eq.gap * 0.5), EquilibriumError);
  EXPECT_DOUBLE_EQ(angle_gap(eq, 0.3), 0.3);
  EXPECT_THROW(compute_beta(eq, m, std::numbers::pi / 2), EquilibriumError);
}

TEST(Equilibrium, FluctuationScalesSlope) {
  const std::string doc = R"({"buses":[
    {"id":1,"kind":"generator","voltage":1.02,"inertia":0.1,"damping":0.2,"power":0.3},
    {"id":2,"kind":"generator","voltage":0.98,"inertia":0.1,"damping":0.2,"power":-0.3}],
    "lines":[{"from":1,"to":2,"susceptance":2.0}]})";
  ParseOptions po;
  po.fluctuation = VoltageFluctuation{0.1, 1.0};
  const auto m = parse_network(doc, po);
  const auto plain = parse_network(doc);
  const auto eq = solve_sep(m);
  EXPECT_LT((eq.angles - solve_sep(plain).angles).cwiseAbs().maxCoeff(), 1e-12);
  const double lam = angle_gap(eq);
  const double b0 = (1 - std::sin(lam)) / (std::numbers::pi / 2 - lam);
  EXPECT_NEAR(compute_beta(eq, m, lam).beta, b0 * 0.81 / 1.21, 1e-14);
}

TEST(Equilibrium, InfeasibleLoadingIsReported) {
  const std::string doc = R"({"buses":[
    {"id":1,"kind":"generator","voltage":1,"inertia":0.1,"damping":0.2,"power":1.5},
    {"id":2,"kind":"generator","voltage":1,"inertia":0.1,"damping":0.2,"power":-1.5}],
    "lines":[{"from":1,"to":2,"susceptance":1.0}]})";
  EXPECT_THROW(solve_sep(parse_network(doc)), EquilibriumError);
}
