#pragma once

// Critical-clearing-time bounds 2 gamma (V_min - V(x_pre)) and contingency
// screening built on them.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "equilibrium.hpp"
#include "lmi.hpp"
#include "lyapunov.hpp"
#include "network.hpp"
#include "system_matrices.hpp"

namespace cctscreen {

/// Everything a contingency analysis needs about one network.
struct Study {
  NetworkModel model;
  Equilibrium eq_post;
  Equilibrium eq_pre;
  SystemMatrices sm;
  SectorBound sector;
  VectorXd x_pre;
};

struct StudyOptions {
  std::optional<double> lambda;  // nominal lambda, rounded up to
  NewtonOptions newton;
};

inline Study make_study(const NetworkModel& model, const StudyOptions& opt = {}) {
  const VectorXd flat = VectorXd::Zero(model.num_dynamic());
  Equilibrium post = solve_sep(model, flat, opt.newton, Injection::kPostFault);
  Equilibrium pre = solve_sep(model, flat, opt.newton, Injection::kPreFault);
  SectorBound sb = compute_beta(post, model, angle_gap(post, opt.lambda));
  SystemMatrices sm = build_system_matrices(model, post);
  VectorXd x_pre = pre_fault_offset(pre, post, model.num_generators());
  return Study{model, std::move(post), std::move(pre), std::move(sm), sb, std::move(x_pre)};
}

enum class Procedure { kOne, kTwo, kRobust };

inline const char* to_string(Procedure p) {
  switch (p) {
    case Procedure::kOne: return "procedure-1";
    case Procedure::kTwo: return "procedure-2";
    case Procedure::kRobust: return "robust";
  }
  return "?";
}

struct GammaRecord {
  double gamma = 0.0;
  std::string status;
  double vmin = std::numeric_limits<double>::quiet_NaN();
  double v_pre = std::numeric_limits<double>::quiet_NaN();
  double bound = std::numeric_limits<double>::quiet_NaN();
  int rounds = 0;
  std::optional<CertificateMatrices> cert;
};

struct CctEstimate {
  std::vector<LinePair> lines;
  Procedure procedure = Procedure::kOne;
  bool feasible = false;  // a positive, re-verified bound exists
  std::string status = "inconclusive";
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double vmin = std::numeric_limits<double>::quiet_NaN();
  double v_pre = std::numeric_limits<double>::quiet_NaN();
  double vgap = std::numeric_limits<double>::quiet_NaN();
  double bound = 0.0;
  std::optional<CertificateMatrices> cert;
  std::vector<GammaRecord> history;
};

/// bound = 2 gamma (V_min - V(x_pre)), clamped at 0.
inline CctEstimate cct_bound(const CertificateMatrices& cert, double vmin, const VectorXd& x_pre,
                             const LyapunovFunction& L) {
  if (!L.system().in_polytope(x_pre)) throw Error("pre-fault state lies outside the polytope |delta_kj| <= pi/2");
  CctEstimate est;
  est.gamma = cert.gamma;
  est.vmin = vmin;
  est.v_pre = L.value(x_pre);
  est.vgap = est.vmin - est.v_pre;
  est.bound = 2.0 * est.gamma * est.vgap;
  est.cert = cert;
  if (est.vgap > 0) {
    est.feasible = true;
    est.status = "ok";
  } else {
    est.bound = 0.0;
    est.status = "nonpositive-gap";
  }
  return est;
}

/// Kelley cutting planes on the concave map (Q, K) -> V_min - V(anchor).
struct OptimizeOptions {
  int max_rounds = 40;
  double rel_tol = 1e-3;
  double abs_tol = 1e-12;
};

namespace detail {

// Coefficients of V(x) in the certificate decision vector.
inline VectorXd value_coefficients(const SystemMatrices& sm, const CertificateLayout& L, const VectorXd& x) {
  VectorXd c = VectorXd::Zero(L.size());
  int p = 0;
  for (int i = 0; i < L.N; ++i) {
    for (int j = i; j < L.N; ++j, ++p) c(p) = i == j ? 0.5 * x(i) * x(i) : x(i) * x(j);
  }
  c.segment(L.k_offset(), L.ne) = edge_potential(sm, x);
  return c;
}

inline void append_variable(sdp::Problem& P) {
  P.num_vars += 1;
  for (auto& b : P.lmis) b.F.emplace_back();
  P.G.conservativeResize(Eigen::NoChange, P.num_vars);
  P.G.col(P.num_vars - 1).setZero();
  P.Aeq.conservativeResize(Eigen::NoChange, P.num_vars);
  if (P.Aeq.rows()) P.Aeq.col(P.num_vars - 1).setZero();
  P.c = VectorXd::Zero(P.num_vars);
}

inline void append_row(sdp::Problem& P, const VectorXd& row, double h) {
  P.G.conservativeResize(P.G.rows() + 1, Eigen::NoChange);
  P.G.row(P.G.rows() - 1) = row.transpose();
  P.h.conservativeResize(P.h.size() + 1);
  P.h(P.h.size() - 1) = h;
}

}  // namespace detail

/// Best certificate at a fixed gamma for covering `anchor`, measured by
/// V_min - V(anchor). `cuts` carries face points between calls.
inline GammaRecord optimize_certificate(const Study& st, const LineSelector& sel, double gamma,
                                        const VectorXd& anchor, const LmiSolveConfig& cfg,
                                        const OptimizeOptions& opt, std::vector<VectorXd>* cuts) {
  GammaRecord rec;
  rec.gamma = gamma;
  std::vector<VectorXd> local;
  if (!cuts) cuts = &local;
  const auto& sm = st.sm;
  const CertificateProgram cp = make_certificate_program(sm, st.sector, gamma, sel, cfg);
  const auto feas = sdp::find_feasible(cp.problem, cfg.sdp);
  if (feas.status == sdp::Status::kInfeasible) {
    rec.status = "infeasible";
    return rec;
  }
  if (feas.status != sdp::Status::kFeasible) {
    rec.status = "solver-failure";
    return rec;
  }
  const VectorXd y_start = feas.y;
  auto evaluate_cert = [&](const CertificateMatrices& c, RegionEstimate* R) {
    LyapunovFunction L(sm, c);
    *R = compute_vmin(L);
    return R->vmin - L.value(anchor);
  };

  if (cuts->empty()) {
    RegionEstimate R;
    evaluate_cert(cp.certificate(y_start, gamma, st.sector), &R);
    for (const auto& f : R.faces) if (!f.empty) cuts->push_back(f.x);
  }

  sdp::Problem P = cp.problem;
  detail::append_variable(P);
  const int s_idx = P.num_vars - 1;
  P.c(s_idx) = 1.0;
  CertificateLayout lay = cp.layout;
  lay.extra = 1;
  const VectorXd anchor_coef = detail::value_coefficients(sm, lay, anchor);
  std::vector<VectorXd> rows;
  auto add_cut = [&](const VectorXd& x) {
    VectorXd row = detail::value_coefficients(sm, lay, x) - anchor_coef;
    row(s_idx) = -1.0;
    rows.push_back(row);
    detail::append_row(P, row, 0.0);
  };
  for (const auto& x : *cuts) add_cut(x);
  // Keep the epigraph bounded before enough cuts exist.
  {
    VectorXd cap = VectorXd::Zero(P.num_vars);
    cap(s_idx) = -1.0;
    detail::append_row(P, cap, 1e6 * std::max(1.0, cfg.trace_for(sm)));
  }

  // The cut model is itself approximate; a loose interior-point gap is enough.
  sdp::Options sdp_opt = cfg.sdp;
  sdp_opt.gap_rel = std::max(sdp_opt.gap_rel, 0.1 * opt.rel_tol);
  sdp_opt.gap_abs = std::max(sdp_opt.gap_abs, opt.abs_tol);

  double best = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  for (int round = 0; round < opt.max_rounds; ++round) {
    rec.rounds = round + 1;
    VectorXd y0(P.num_vars);
    y0.head(lay.size() - 1) = y_start;
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) lowest = std::min(lowest, r.head(lay.size() - 1).dot(y_start));
    y0(s_idx) = lowest - std::max(1e-9, 1e-3 * std::abs(lowest));
    const auto res = sdp::maximize(P, sdp_opt, &y0);
    if (res.status != sdp::Status::kOptimal && res.status != sdp::Status::kFeasible) {
      if (!rec.cert) rec.status = "solver-failure";
      break;
    }
    upper = res.y(s_idx) + res.gap;
    VectorXd yc = res.y.head(lay.size() - 1);
    CertificateMatrices c = cp.certificate(yc, gamma, st.sector);
    RegionEstimate R;
    const double gap = evaluate_cert(c, &R);
    if (verify_certificate(sm, sel, c, cfg) && gap > best) {
      best = gap;
      rec.cert = c;
      rec.vmin = R.vmin;
    }
    if (upper - best <= opt.rel_tol * std::abs(best) + opt.abs_tol) break;
    const double v_anchor = LyapunovFunction(sm, c).value(anchor);
    int added = 0;
    for (const auto& f : R.faces) {
      if (f.empty) continue;
      if (f.value - v_anchor < res.y(s_idx) - opt.abs_tol) {
        cuts->push_back(f.x);
        add_cut(f.x);
        ++added;
      }
    }
    if (added == 0) break;
  }
  if (!rec.cert) {
    if (rec.status.empty()) rec.status = "solver-failure";
    return rec;
  }
  rec.status = "ok";
  return rec;
}

namespace detail {

inline void finish_record(const Study& st, GammaRecord& rec) {
  if (!rec.cert) return;
  LyapunovFunction L(st.sm, *rec.cert);
  rec.v_pre = L.value(st.x_pre);
  rec.bound = 2.0 * rec.gamma * (rec.vmin - rec.v_pre);
  if (!(rec.bound > 0)) {
    rec.bound = 0.0;
    rec.status = "nonpositive-gap";
  }
}

inline void adopt(CctEstimate& est, const GammaRecord& rec) {
  est.feasible = true;
  est.status = "ok";
  est.gamma = rec.gamma;
  est.vmin = rec.vmin;
  est.v_pre = rec.v_pre;
  est.vgap = rec.vmin - rec.v_pre;
  est.bound = 2.0 * est.gamma * est.vgap;
  est.cert = rec.cert;
}

inline std::vector<LinePair> selector_lines(const Study& st, const LineSelector& sel) {
  std::vector<LinePair> out;
  for (int e : sel.edges) out.push_back(st.model.line_pair(e));
  return out;
}

}  // namespace detail

/// Procedure 1: sweep gamma, optimise a certificate at each value and keep
/// the largest bound (ties go to the smaller gamma).
inline CctEstimate procedure1(const Study& st, const LineSelector& sel, std::vector<double> grid,
                              const LmiSolveConfig& cfg = {}, const OptimizeOptions& opt = {}) {
  if (grid.empty()) throw Error("gamma grid is empty");
  for (double g : grid) if (!(g > 0)) throw Error("gamma values must be positive");
  CctEstimate est;
  est.lines = detail::selector_lines(st, sel);
  est.procedure = sel.robust ? Procedure::kRobust : Procedure::kOne;
  if (!st.sm.in_polytope(st.x_pre)) {
    est.status = "x_pre-outside-polytope";
    return est;
  }
  std::sort(grid.begin(), grid.end());
  std::vector<VectorXd> cuts;
  bool ceiling = false;
  for (double g : grid) {
    GammaRecord rec;
    if (ceiling) {
      rec.gamma = g;
      rec.status = "infeasible";  // feasible gammas form an interval from 0
    } else {
      rec = optimize_certificate(st, sel, g, st.x_pre, cfg, opt, &cuts);
      if (rec.status == "infeasible") ceiling = true;
      detail::finish_record(st, rec);
    }
    if (rec.cert && rec.status == "ok" && (!est.feasible || rec.bound > est.bound + 1e-12)) {
      detail::adopt(est, rec);
    }
    est.history.push_back(std::move(rec));
  }
  if (!est.feasible) {
    est.status = "inconclusive";
    for (const auto& r : est.history) {
      if (r.status == "nonpositive-gap") est.status = "nonpositive-gap";
    }
    bool all_infeasible = std::all_of(est.history.begin(), est.history.end(),
                                      [](const GammaRecord& r) { return r.status == "infeasible"; });
    if (all_infeasible) est.status = "infeasible";
  }
  return est;
}

/// Minimum distance, in angle coordinates, from the post-fault equilibrium
/// to the boundary of the polytope.
inline double polytope_radius(const SystemMatrices& sm) {
  double r = std::numeric_limits<double>::infinity();
  for (int e = 0; e < sm.ne; ++e) {
    r = std::min(r, (std::numbers::pi / 2 - std::abs(sm.edge_star(e))) / sm.E.row(e).norm());
  }
  return r;
}

/// Procedure 2: sample k points on the sphere of radius r around the
/// equilibrium (angles only), fit a certificate to each at the grid's middle
/// gamma, keep the ones whose region contains their sample, then raise gamma
/// as far as each certificate allows.
inline CctEstimate procedure2(const Study& st, const LineSelector& sel, int k, std::vector<double> grid,
                              std::uint64_t seed, const LmiSolveConfig& cfg = {},
                              const OptimizeOptions& opt = {}) {
  if (k < 1) throw Error("procedure 2 needs at least one sample");
  if (grid.empty()) throw Error("gamma grid is empty");
  std::sort(grid.begin(), grid.end());
  CctEstimate est;
  est.lines = detail::selector_lines(st, sel);
  est.procedure = Procedure::kTwo;
  if (!st.sm.in_polytope(st.x_pre)) {
    est.status = "x_pre-outside-polytope";
    return est;
  }
  const auto& sm = st.sm;
  const double r = polytope_radius(sm);
  const double g_mid = grid[grid.size() / 2];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<VectorXd> cuts;
  for (int i = 0; i < k; ++i) {
    VectorXd a(sm.n);
    for (int j = 0; j < sm.n; ++j) a(j) = normal(rng);
    a *= (a.norm() > 0 && r > 0) ? r / a.norm() : 0.0;
    const VectorXd xi = sm.state_from(a, VectorXd::Zero(sm.m));
    GammaRecord rec = optimize_certificate(st, sel, g_mid, xi, cfg, opt, &cuts);
    if (!rec.cert) {
      est.history.push_back(std::move(rec));
      continue;
    }
    LyapunovFunction L(sm, *rec.cert);
    RegionEstimate R;
    R.vmin = rec.vmin;
    if (!in_region(L, R, xi)) {
      rec.status = "sample-not-covered";
      est.history.push_back(std::move(rec));
      continue;
    }
    const auto gb = max_gamma(sm, st.sector, sel, rec.cert->Q, rec.cert->K, rec.cert->H, cfg);
    if (!gb.unbounded && gb.gamma > rec.gamma) {
      rec.gamma = gb.gamma;
      rec.cert->gamma = gb.gamma;
    }
    rec.status = "ok";
    detail::finish_record(st, rec);
    if (rec.status == "ok" && (!est.feasible || rec.bound > est.bound + 1e-12)) detail::adopt(est, rec);
    est.history.push_back(std::move(rec));
  }
  if (est.feasible) est.status = "ok:surrogate";
  return est;
}

enum class Verdict { kCertifiedStable, kInconclusive };

inline const char* to_string(Verdict v) {
  return v == Verdict::kCertifiedStable ? "certified-stable" : "inconclusive";
}

struct ScreeningRecord {
  LinePair line;
  Verdict verdict = Verdict::kInconclusive;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double vmin = std::numeric_limits<double>::quiet_NaN();
  double v_pre = std::numeric_limits<double>::quiet_NaN();
  double bound = std::numeric_limits<double>::quiet_NaN();
  std::string status;
  std::optional<CertificateMatrices> cert;
};

struct ScreenOptions {
  Procedure procedure = Procedure::kOne;
  std::vector<double> grid;
  int samples = 8;
  std::uint64_t seed = 1;
  int jobs = 1;
  OptimizeOptions optimize;
};

struct ScreeningReport {
  std::vector<ScreeningRecord> records;
  std::uint64_t network_hash = 0;
  double clearing_time = 0.0;
  nlohmann::json config;
  std::string timestamp;

  bool any_inconclusive() const {
    return std::any_of(records.begin(), records.end(),
                       [](const ScreeningRecord& r) { return r.verdict == Verdict::kInconclusive; });
  }
};

/// %.17g, or "nan".
inline std::string format_number(double v, int digits = 17) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string to_csv(const ScreeningReport& rep) {
  std::ostringstream os;
  os << "line,verdict,gamma,vmin,v_pre,bound,status\n";
  for (const auto& r : rep.records) {
    os << r.line.str() << ',' << to_string(r.verdict) << ',' << format_number(r.gamma) << ','
       << format_number(r.vmin) << ',' << format_number(r.v_pre) << ',' << format_number(r.bound) << ','
       << r.status << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const ScreeningReport& rep) {
  nlohmann::json j;
  j["network_hash"] = rep.network_hash;
  j["clearing_time"] = rep.clearing_time;
  j["config"] = rep.config;
  j["timestamp"] = rep.timestamp;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : rep.records) {
    nlohmann::json o;
    o["line"] = r.line.str();
    o["verdict"] = to_string(r.verdict);
    o["gamma"] = num(r.gamma);
    o["vmin"] = num(r.vmin);
    o["v_pre"] = num(r.v_pre);
    o["bound"] = num(r.bound);
    o["status"] = r.status;
    if (r.cert) o["certificate"] = to_json(*r.cert);
    recs.push_back(o);
  }
  j["records"] = recs;
  return j;
}

namespace detail {

inline ScreeningRecord record_from(const LinePair& line, const CctEstimate& est, double clearing_time) {
  ScreeningRecord r;
  r.line = line;
  r.status = est.status;
  if (est.feasible) {
    r.gamma = est.gamma;
    r.vmin = est.vmin;
    r.v_pre = est.v_pre;
    r.bound = est.bound;
    r.cert = est.cert;
    // Strict: the certificate covers clearing times below the bound.
    if (clearing_time < est.bound) r.verdict = Verdict::kCertifiedStable;
  }
  return r;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

}  // namespace detail

/// Five points per decade over [1e-8, 1e2] times the trace normalisation.
inline std::vector<double> default_gamma_grid(double trace) {
  std::vector<double> g;
  for (int i = 0; i <= 50; ++i) g.push_back(trace * std::pow(10.0, -8.0 + i / 5.0));
  return g;
}

/// Screens each contingency independently. Results keep the input order
/// whatever the number of workers.
inline ScreeningReport screen(const Study& st, const std::vector<LinePair>& contingencies, double clearing_time,
                              const ScreenOptions& so, const LmiSolveConfig& cfg = {}) {
  ScreeningReport rep;
  rep.clearing_time = clearing_time;
  rep.timestamp = detail::utc_timestamp();
  const auto grid = so.grid.empty() ? default_gamma_grid(cfg.trace_for(st.sm)) : so.grid;
  rep.config = {{"procedure", to_string(so.procedure)},
                {"gamma_grid", grid},
                {"samples", so.samples},
                {"seed", so.seed},
                {"lambda", st.sector.lambda},
                {"beta", st.sector.beta},
                {"trace", cfg.trace_for(st.sm)},
                {"eps_q", cfg.eps_q},
                {"eps_h", cfg.eps_h}};
  rep.records.resize(contingencies.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= contingencies.size()) return;
      const LinePair& line = contingencies[i];
      try {
        const auto sel = line_selector(st.model, line);
        CctEstimate est;
        if (so.procedure == Procedure::kTwo) {
          const std::uint64_t s = so.seed * 1000003ULL + static_cast<std::uint64_t>(sel.edges.front());
          est = procedure2(st, sel, so.samples, grid, s, cfg, so.optimize);
        } else {
          est = procedure1(st, sel, grid, cfg, so.optimize);
        }
        rep.records[i] = detail::record_from(line, est, clearing_time);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mu);
        ScreeningRecord r;
        r.line = line;
        r.status = std::string("error: ") + e.what();
        std::replace(r.status.begin(), r.status.end(), ',', ';');
        rep.records[i] = r;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(so.jobs, static_cast<int>(contingencies.size())));
  if (jobs <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return rep;
}

/// One certificate for the whole line set; if it clears the time, every
/// member is certified by it.
inline ScreeningReport robust_screen(const Study& st, const std::vector<LinePair>& lines, double clearing_time,
                                     std::vector<double> grid, const LmiSolveConfig& cfg = {},
                                     const OptimizeOptions& opt = {}) {
  if (lines.empty()) throw Error("robust screening needs at least one line");
  if (grid.empty()) grid = default_gamma_grid(cfg.trace_for(st.sm));
  const auto sel = robust_selector(st.model, lines);
  const CctEstimate est = procedure1(st, sel, grid, cfg, opt);
  ScreeningReport rep;
  rep.clearing_time = clearing_time;
  rep.timestamp = detail::utc_timestamp();
  rep.config = {{"procedure", to_string(Procedure::kRobust)}, {"gamma_grid", grid}};
  for (const auto& l : lines) rep.records.push_back(detail::record_from(l, est, clearing_time));
  return rep;
}

}  // namespace cctscreen
