#include <gtest/gtest.h>

#include "cctscreen/cct.hpp"
#include "cctscreen/sim.hpp"
#include "test_util.hpp"

using namespace cctscreen;

namespace {

LmiSolveConfig two_bus_config() {
  LmiSolveConfig cfg;
  cfg.trace = kTwoBusTrace;
  return cfg;
}

std::vector<double> log_grid(double lo, double hi, int count) {
  std::vector<double> g;
  for (int i = 0; i < count; ++i) g.push_back(lo * std::pow(hi / lo, count == 1 ? 0.0 : double(i) / (count - 1)));
  return g;
}

const Study& two_bus() {
  static const Study st = case_study("case2.json");
  return st;
}

const Study& three_machine() {
  static const Study st = case_study("case3.json");
  return st;
}

void expect_rederivable(const Study& st, const CctEstimate& est) {
  ASSERT_TRUE(est.feasible);
  ASSERT_TRUE(est.cert);
  EXPECT_DOUBLE_EQ(est.bound, 2 * est.gamma * (est.vmin - est.v_pre));
  const LyapunovFunction L(st.sm, *est.cert);
  EXPECT_NEAR(est.v_pre, L.value(st.x_pre), 1e-12 * std::max(1.0, std::abs(est.v_pre)));
  EXPECT_NEAR(est.vmin, compute_vmin(L).vmin, 1e-8 * std::max(1.0, std::abs(est.vmin)));
}

}  // namespace

TEST(Cct, BoundRejectsPointsOutsideThePolytope) {
  const auto& st = two_bus();
  const auto cfg = two_bus_config();
  const auto out = solve_certificate(st.sm, st.sector, 1.0, line_selector(st.model, {1, 2}), cfg);
  ASSERT_TRUE(out.cert);
  const LyapunovFunction L(st.sm, *out.cert);
  VectorXd far = st.x_pre;
  far(0) = 2.0;
  EXPECT_THROW(cct_bound(*out.cert, 1.0, far, L), Error);
  const auto est = cct_bound(*out.cert, L.value(st.x_pre) - 1.0, st.x_pre, L);
  EXPECT_FALSE(est.feasible);
  EXPECT_EQ(est.status, "nonpositive-gap");
  EXPECT_EQ(est.bound, 0.0);
}

TEST(Cct, ProcedureOneOnTwoBus) {
  const auto& st = two_bus();
  std::vector<double> grid;
  for (int g = 1; g <= 10; ++g) grid.push_back(g);
  const auto est = procedure1(st, line_selector(st.model, {1, 2}), grid, two_bus_config());
  expect_rederivable(st, est);
  ASSERT_EQ(est.history.size(), grid.size());
  // the bound rises and then falls along the feasible prefix
  std::vector<double> bounds;
  for (const auto& r : est.history)
    if (r.status == "ok") bounds.push_back(r.bound);
  ASSERT_GE(bounds.size(), 3u);
  const auto top = std::max_element(bounds.begin(), bounds.end()) - bounds.begin();
  EXPECT_GT(top, 0);
  EXPECT_LT(top, static_cast<long>(bounds.size()) - 1);
  EXPECT_DOUBLE_EQ(est.bound, bounds[top]);
  for (const auto& r : est.history) {
    if (r.status != "ok") continue;
    EXPECT_DOUBLE_EQ(r.bound, 2 * r.gamma * (r.vmin - r.v_pre));
    ASSERT_TRUE(r.cert);
    EXPECT_TRUE(verify_certificate(st.sm, line_selector(st.model, {1, 2}), *r.cert, two_bus_config()));
  }
}

TEST(Cct, InfeasibleGammaCloseTheSweep) {
  const auto& st = two_bus();
  const auto est = procedure1(st, line_selector(st.model, {1, 2}), {0.5, 1e3, 1e4, 1e5}, two_bus_config());
  ASSERT_EQ(est.history.size(), 4u);
  EXPECT_EQ(est.history[0].status, "ok");
  for (int i = 1; i < 4; ++i) EXPECT_EQ(est.history[i].status, "infeasible");
  EXPECT_DOUBLE_EQ(est.gamma, 0.5);
  const auto none = procedure1(st, line_selector(st.model, {1, 2}), {1e3, 1e4}, two_bus_config());
  EXPECT_FALSE(none.feasible);
  EXPECT_EQ(none.status, "infeasible");
}

TEST(Cct, GridOrderDoesNotMatter) {
  const auto& st = two_bus();
  const auto sel = line_selector(st.model, {1, 2});
  const auto a = procedure1(st, sel, {1, 3, 6}, two_bus_config());
  const auto b = procedure1(st, sel, {6, 1, 3}, two_bus_config());
  EXPECT_DOUBLE_EQ(a.bound, b.bound);
  EXPECT_DOUBLE_EQ(a.gamma, b.gamma);
}

TEST(Cct, ProcedureOneBoundIsSafeInSimulation) {
  for (const char* name : {"case2.json", "case3.json"}) {
    const auto& st = std::string(name) == "case2.json" ? two_bus() : three_machine();
    LmiSolveConfig cfg;
    if (std::string(name) == "case2.json") cfg = two_bus_config();
    const LinePair line{1, 2};
    const auto est = procedure1(st, line_selector(st.model, line), log_grid(1e-2, 10, 7), cfg);
    ASSERT_TRUE(est.feasible) << name;
    const auto v = simulate_and_classify(st.model, st.eq_pre, st.eq_post, line, 0.99 * est.bound);
    EXPECT_EQ(v.kind, StabilityKind::kStable) << name;
  }
}

TEST(Cct, ProcedureTwoIsDeterministic) {
  const auto& st = three_machine();
  const auto sel = line_selector(st.model, {1, 2});
  const auto grid = log_grid(1e-2, 10, 5);
  const auto a = procedure2(st, sel, 3, grid, 42);
  const auto b = procedure2(st, sel, 3, grid, 42);
  EXPECT_EQ(a.feasible, b.feasible);
  EXPECT_EQ(a.status, b.status);
  if (a.feasible) {
    EXPECT_DOUBLE_EQ(a.bound, b.bound);
    EXPECT_DOUBLE_EQ(a.gamma, b.gamma);
    expect_rederivable(st, a);
    EXPECT_TRUE(verify_certificate(st.sm, sel, *a.cert, {}));
  }
  EXPECT_THROW(procedure2(st, sel, 0, grid, 1), Error);
}

TEST(Cct, ScreenKeepsOrderAcrossWorkers) {
  const auto& st = three_machine();
  const std::vector<LinePair> lines{{2, 3}, {1, 2}, {1, 3}};
  ScreenOptions so;
  so.grid = log_grid(1e-2, 10, 4);
  so.jobs = 1;
  auto one = screen(st, lines, 0.05, so);
  so.jobs = 3;
  auto three = screen(st, lines, 0.05, so);
  ASSERT_EQ(one.records.size(), 3u);
  for (std::size_t i = 0; i < lines.size(); ++i) EXPECT_EQ(one.records[i].line, lines[i]);
  EXPECT_EQ(to_csv(one), to_csv(three));
  const auto csv = to_csv(one);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "line,verdict,gamma,vmin,v_pre,bound,status");
  for (const auto& r : one.records) {
    if (r.verdict == Verdict::kCertifiedStable) {
      EXPECT_LT(0.05, r.bound);
      EXPECT_DOUBLE_EQ(r.bound, 2 * r.gamma * (r.vmin - r.v_pre));
    }
  }
  const auto j = to_json(one);
  EXPECT_EQ(j["records"].size(), 3u);
  EXPECT_EQ(j["records"][0]["line"], "2-3");
}

TEST(Cct, VerdictIsStrict) {
  const auto& st = two_bus();
  ScreenOptions so;
  so.grid = {1.0, 6.0};
  const auto rep = screen(st, {{1, 2}}, 0.0, so, two_bus_config());
  ASSERT_EQ(rep.records[0].verdict, Verdict::kCertifiedStable);
  const double b = rep.records[0].bound;
  EXPECT_EQ(screen(st, {{1, 2}}, b, so, two_bus_config()).records[0].verdict, Verdict::kInconclusive);
  EXPECT_TRUE(screen(st, {{1, 2}}, 1e3, so, two_bus_config()).any_inconclusive());
}

TEST(Cct, UnknownLineBecomesAnErrorRecord) {
  const auto& st = two_bus();
  ScreenOptions so;
  so.grid = {1.0};
  const auto rep = screen(st, {{1, 7}}, 0.1, so, two_bus_config());
  EXPECT_EQ(rep.records[0].verdict, Verdict::kInconclusive);
  EXPECT_EQ(rep.records[0].status.rfind("error: ", 0), 0u);
}

TEST(Cct, RobustCertificateIsNoBetterThanEachMember) {
  const auto& st = three_machine();
  const std::vector<LinePair> lines{{1, 2}, {1, 3}};
  const auto grid = log_grid(1e-2, 10, 5);
  const auto rep = robust_screen(st, lines, 0.0, grid);
  ASSERT_EQ(rep.records.size(), 2u);
  EXPECT_DOUBLE_EQ(rep.records[0].bound, rep.records[1].bound);
  for (const auto& l : lines) {
    const auto single = procedure1(st, line_selector(st.model, l), grid);
    if (!rep.records[0].cert) continue;
    EXPECT_TRUE(verify_certificate(st.sm, line_selector(st.model, l), *rep.records[0].cert, {}));
    ASSERT_TRUE(single.feasible);
    EXPECT_LE(rep.records[0].bound, single.bound * (1 + 1e-2)) << l.str();
  }
}

TEST(Cct, DefaultGridSpansTenDecades) {
  const auto g = default_gamma_grid(2.0);
  EXPECT_EQ(g.size(), 51u);
  EXPECT_DOUBLE_EQ(g.front(), 2e-8);
  EXPECT_NEAR(g.back(), 2e2, 1e-9);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
  EXPECT_EQ(format_number(std::nan("")), "nan");
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
}
