#pragma once

// The stability, bounding and Schur-form matrix inequalities, and the
// semidefinite programs that search for certificates (Q, K, H).
//
// With z = [x; -F(Cx)] the post-fault derivative of
//   V(x) = x^T Q x / 2 - sum_e K_e w_e (cos(delta_e + alpha_e) + delta_e sin(delta*_e + alpha_e))
// satisfies Vdot = z^T M z / 2 + sum_e H_e g_e, where
//   M = [[A^T Q + Q A - 2 beta C^T H C,  R], [R^T, -2H - KCB - (KCB)^T]]
//   R = Q B - (1 + beta) C^T H - (K C A)^T.
// Loads make C B nonzero, so the KCB terms are kept throughout. While a line
// in the selector W is open the derivative gains h w^T z with
// w = [Q B W; -K C B W], which the bounding inequality M + gamma w w^T <= 0
// absorbs into a 1 / (2 gamma) growth rate.

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <json.hpp>

#include "equilibrium.hpp"
#include "linalg.hpp"
#include "sdp.hpp"
#include "system_matrices.hpp"

namespace cctscreen {

struct CertificateMatrices {
  MatrixXd Q;
  VectorXd K;  // diagonal
  VectorXd H;  // diagonal
  double gamma = 0.0;
  SectorBound sector;

  CertificateMatrices scaled(double c) const {
    CertificateMatrices out = *this;
    out.Q *= c;
    out.K *= c;
    out.H *= c;
    out.gamma /= c;
    return out;
  }
};

struct LmiSolveConfig {
  double eps_q = 1e-6;
  double eps_h = 1e-8;
  /// trace(Q); n + m when unset.
  std::optional<double> trace;
  double nsd_tol = 1e-8;
  double gamma_rel_tol = 1e-9;
  double gamma_cap = 1152921504606846976.0;  // 2^60
  sdp::Options sdp;

  double trace_for(const SystemMatrices& sm) const { return trace ? *trace : sm.dim(); }
};

namespace detail {

inline void check_dims(const SystemMatrices& sm, const MatrixXd& Q, const VectorXd& K, const VectorXd& H) {
  if (Q.rows() != sm.dim() || Q.cols() != sm.dim() || K.size() != sm.ne || H.size() != sm.ne) {
    throw std::invalid_argument("certificate dimensions do not match the system");
  }
}

struct Blocks {
  MatrixXd At;  // top-left
  MatrixXd R;   // cross
  MatrixXd Br;  // bottom-right
  MatrixXd Wq;  // Q B W
  MatrixXd Wk;  // -K C B W
};

inline Blocks blocks(const SystemMatrices& sm, double beta, const MatrixXd& W, const MatrixXd& Q,
                     const VectorXd& K, const VectorXd& H) {
  Blocks b;
  const auto Hd = H.asDiagonal();
  const auto Kd = K.asDiagonal();
  b.At = sm.A.transpose() * Q + Q * sm.A - 2 * beta * sm.C.transpose() * Hd * sm.C;
  b.R = Q * sm.B - (1 + beta) * sm.C.transpose() * Hd - (Kd * sm.C * sm.A).transpose();
  const MatrixXd KCB = Kd * sm.C * sm.B;
  b.Br = -2 * MatrixXd(Hd) - KCB - KCB.transpose();
  if (W.cols() > 0) {
    b.Wq = Q * sm.B * W;
    b.Wk = -KCB * W;
  }
  return b;
}

}  // namespace detail

/// Post-fault inequality; beta = 0 gives the plain sector form.
inline MatrixXd assemble_stability_lmi(const SystemMatrices& sm, double beta, const MatrixXd& Q,
                                       const VectorXd& K, const VectorXd& H) {
  detail::check_dims(sm, Q, K, H);
  const int N = sm.dim(), ne = sm.ne;
  const auto b = detail::blocks(sm, beta, MatrixXd(), Q, K, H);
  MatrixXd M(N + ne, N + ne);
  M << b.At, b.R, b.R.transpose(), b.Br;
  return 0.5 * (M + M.transpose());
}

/// Fault-on bounding inequality M + gamma w w^T.
inline MatrixXd assemble_bounding_lmi(const SystemMatrices& sm, double beta, double gamma,
                                      const LineSelector& sel, const MatrixXd& Q, const VectorXd& K,
                                      const VectorXd& H) {
  if (!(gamma >= 0)) throw std::invalid_argument("gamma must be non-negative");
  MatrixXd M = assemble_stability_lmi(sm, beta, Q, K, H);
  const auto b = detail::blocks(sm, beta, sel.factor(), Q, K, H);
  MatrixXd w(sm.dim() + sm.ne, sel.rank());
  w << b.Wq, b.Wk;
  M.noalias() += gamma * w * w.transpose();
  return M;
}

/// Schur-complement form, linear in (Q, K, H), ordered (x, g, F) where g has
/// one coordinate per selected line:
///   [[At,            sqrt(g) QBW,      R          ],
///    [sqrt(g) (QBW)^T, -I,             sqrt(g) Wk^T],
///    [R^T,           sqrt(g) Wk,      -2H - KCB - (KCB)^T]]
inline MatrixXd assemble_schur_lmi(const SystemMatrices& sm, double beta, double gamma,
                                   const LineSelector& sel, const MatrixXd& Q, const VectorXd& K,
                                   const VectorXd& H) {
  if (!(gamma >= 0)) throw std::invalid_argument("gamma must be non-negative");
  detail::check_dims(sm, Q, K, H);
  const int N = sm.dim(), ne = sm.ne, r = sel.rank();
  const auto b = detail::blocks(sm, beta, sel.factor(), Q, K, H);
  const double sg = std::sqrt(gamma);
  MatrixXd L = MatrixXd::Zero(N + r + ne, N + r + ne);
  L.topLeftCorner(N, N) = 0.5 * (b.At + b.At.transpose());
  L.block(0, N, N, r) = sg * b.Wq;
  L.block(N, 0, r, N) = sg * b.Wq.transpose();
  L.block(0, N + r, N, ne) = b.R;
  L.block(N + r, 0, ne, N) = b.R.transpose();
  L.block(N, N, r, r) = -MatrixXd::Identity(r, r);
  L.block(N, N + r, r, ne) = sg * b.Wk.transpose();
  L.block(N + r, N, ne, r) = sg * b.Wk;
  L.bottomRightCorner(ne, ne) = 0.5 * (b.Br + b.Br.transpose());
  return L;
}

/// Layout of the decision vector: upper triangle of Q (row-major), K, H and
/// optionally one trailing scalar.
struct CertificateLayout {
  int N = 0;
  int ne = 0;
  int extra = 0;

  int nq() const { return N * (N + 1) / 2; }
  int k_offset() const { return nq(); }
  int h_offset() const { return nq() + ne; }
  int extra_offset() const { return nq() + 2 * ne; }
  int size() const { return nq() + 2 * ne + extra; }

  void unpack(const VectorXd& y, MatrixXd* Q, VectorXd* K, VectorXd* H) const {
    Q->resize(N, N);
    int p = 0;
    for (int i = 0; i < N; ++i) {
      for (int j = i; j < N; ++j) (*Q)(i, j) = (*Q)(j, i) = y(p++);
    }
    *K = y.segment(k_offset(), ne);
    *H = y.segment(h_offset(), ne);
  }
  VectorXd pack(const MatrixXd& Q, const VectorXd& K, const VectorXd& H) const {
    VectorXd y = VectorXd::Zero(size());
    int p = 0;
    for (int i = 0; i < N; ++i) {
      for (int j = i; j < N; ++j) y(p++) = 0.5 * (Q(i, j) + Q(j, i));
    }
    y.segment(k_offset(), ne) = K;
    y.segment(h_offset(), ne) = H;
    return y;
  }
};

/// Semidefinite program whose feasible set is every certificate of the
/// bounding inequality at a fixed gamma, with trace(Q) = T, Q >= eps_Q I,
/// K >= 0, H >= eps_H. When the network has no infinite bus, the uniform
/// angle shift is an exact null direction of the inequality; it is enforced
/// as equalities and the inequality is restricted to its complement so the
/// remaining set has an interior.
struct CertificateProgram {
  CertificateLayout layout;
  sdp::Problem problem;

  CertificateMatrices certificate(const VectorXd& y, double gamma, const SectorBound& sb) const {
    CertificateMatrices c;
    layout.unpack(y, &c.Q, &c.K, &c.H);
    c.gamma = gamma;
    c.sector = sb;
    return c;
  }
};

inline CertificateProgram make_certificate_program(const SystemMatrices& sm, const SectorBound& sb, double gamma,
                                                   const LineSelector& sel, const LmiSolveConfig& cfg,
                                                   int extra_vars = 0) {
  CertificateProgram cp;
  auto& L = cp.layout;
  L.N = sm.dim();
  L.ne = sm.ne;
  L.extra = extra_vars;
  const int nv = L.size();
  auto& P = cp.problem;
  P.num_vars = nv;
  P.c = VectorXd::Zero(nv);

  auto schur_at = [&](const VectorXd& y) {
    MatrixXd Q;
    VectorXd K, H;
    L.unpack(y, &Q, &K, &H);
    return assemble_schur_lmi(sm, sb.beta, gamma, sel, Q, K, H);
  };

  const int dim = L.N + sel.rank() + sm.ne;
  MatrixXd proj = MatrixXd::Identity(dim, dim);
  const int nshift = static_cast<int>(sm.shift_basis.cols());
  if (nshift > 0) {
    MatrixXd V = MatrixXd::Zero(dim, nshift);
    V.topRows(L.N) = sm.shift_basis;
    proj = orthogonal_complement(V, dim);
  }

  // -P^T L(y) P >= 0
  sdp::LmiBlock schur;
  const VectorXd zero = VectorXd::Zero(nv);
  const MatrixXd L0 = schur_at(zero);
  schur.F0 = -proj.transpose() * L0 * proj;
  schur.F.resize(nv);
  for (int i = 0; i < L.nq() + 2 * sm.ne; ++i) {
    VectorXd e = zero;
    e(i) = 1.0;
    schur.F[i] = -proj.transpose() * (schur_at(e) - L0) * proj;
  }
  P.lmis.push_back(std::move(schur));

  // Q - eps_Q I >= 0
  sdp::LmiBlock qb;
  qb.F0 = -cfg.eps_q * MatrixXd::Identity(L.N, L.N);
  qb.F.resize(nv);
  {
    int p = 0;
    for (int i = 0; i < L.N; ++i) {
      for (int j = i; j < L.N; ++j) {
        MatrixXd Ei = MatrixXd::Zero(L.N, L.N);
        Ei(i, j) = Ei(j, i) = 1.0;
        qb.F[p++] = Ei;
      }
    }
  }
  P.lmis.push_back(std::move(qb));

  // K >= 0, H >= eps_H
  P.G = MatrixXd::Zero(2 * sm.ne, nv);
  P.h = VectorXd::Zero(2 * sm.ne);
  for (int e = 0; e < sm.ne; ++e) {
    P.G(e, L.k_offset() + e) = 1.0;
    P.G(sm.ne + e, L.h_offset() + e) = 1.0;
    P.h(sm.ne + e) = -cfg.eps_h;
  }

  // trace(Q) = T and, without a fixed reference, L(y) [v; 0; 0] = 0.
  std::vector<VectorXd> rows;
  std::vector<double> rhs;
  {
    VectorXd tr = VectorXd::Zero(nv);
    int p = 0;
    for (int i = 0; i < L.N; ++i) {
      for (int j = i; j < L.N; ++j, ++p) {
        if (i == j) tr(p) = 1.0;
      }
    }
    rows.push_back(tr);
    rhs.push_back(cfg.trace_for(sm));
  }
  for (int c = 0; c < nshift; ++c) {
    VectorXd v = VectorXd::Zero(dim);
    v.head(L.N) = sm.shift_basis.col(c);
    const VectorXd base = L0 * v;
    MatrixXd cols(dim, L.nq() + 2 * sm.ne);
    for (int i = 0; i < L.nq() + 2 * sm.ne; ++i) {
      VectorXd e = zero;
      e(i) = 1.0;
      cols.col(i) = (schur_at(e) - L0) * v;
    }
    for (int r = 0; r < dim; ++r) {
      VectorXd row = VectorXd::Zero(nv);
      row.head(L.nq() + 2 * sm.ne) = cols.row(r).transpose();
      if (row.cwiseAbs().maxCoeff() == 0.0) continue;
      rows.push_back(row);
      rhs.push_back(-base(r));
    }
  }
  P.Aeq.resize(static_cast<int>(rows.size()), nv);
  P.beq.resize(static_cast<int>(rows.size()));
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    P.Aeq.row(r) = rows[r].transpose();
    P.beq(r) = rhs[r];
  }
  return cp;
}

enum class SolveStatus { kFeasible, kInfeasible, kFailed };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kFeasible: return "ok";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kFailed: return "solver-failure";
  }
  return "?";
}

struct CertificateOutcome {
  SolveStatus status = SolveStatus::kFailed;
  std::optional<CertificateMatrices> cert;
  double slack = std::numeric_limits<double>::quiet_NaN();  // lambda_max of the bounding form
  std::string message;
};

/// Independent re-check of a certificate; the solver's output is never trusted.
inline bool verify_certificate(const SystemMatrices& sm, const LineSelector& sel, const CertificateMatrices& c,
                               const LmiSolveConfig& cfg, double* slack = nullptr, std::string* why = nullptr) {
  const double s = psd_slack(assemble_bounding_lmi(sm, c.sector.beta, c.gamma, sel, c.Q, c.K, c.H));
  if (slack) *slack = s;
  auto fail = [&](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (!(s <= cfg.nsd_tol)) return fail("bounding inequality is not negative semidefinite");
  if (min_eigenvalue(c.Q) < cfg.eps_q * (1 - 1e-6)) return fail("Q is below the PSD floor");
  if (c.K.size() && c.K.minCoeff() < 0) return fail("K has a negative entry");
  if (c.H.size() && c.H.minCoeff() < cfg.eps_h * (1 - 1e-6)) return fail("H is below its floor");
  return true;
}

/// Any certificate at a fixed gamma.
inline CertificateOutcome solve_certificate(const SystemMatrices& sm, const SectorBound& sb, double gamma,
                                            const LineSelector& sel, const LmiSolveConfig& cfg = {}) {
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be positive");
  CertificateOutcome out;
  const auto cp = make_certificate_program(sm, sb, gamma, sel, cfg);
  const auto res = sdp::find_feasible(cp.problem, cfg.sdp);
  if (res.status == sdp::Status::kInfeasible) {
    out.status = SolveStatus::kInfeasible;
    out.message = res.message;
    return out;
  }
  if (res.status != sdp::Status::kFeasible) {
    out.message = res.message;
    return out;
  }
  auto cert = cp.certificate(res.y, gamma, sb);
  std::string why;
  if (!verify_certificate(sm, sel, cert, cfg, &out.slack, &why)) {
    out.message = "re-verification failed: " + why;
    return out;
  }
  out.status = SolveStatus::kFeasible;
  out.cert = std::move(cert);
  return out;
}

struct GammaBound {
  double gamma = 0.0;
  bool unbounded = false;
};

/// Largest gamma for which the bounding inequality stays negative
/// semidefinite with (Q, K, H) held fixed. The gamma term is PSD and linear,
/// so the feasible gammas form an interval and bisection applies.
inline GammaBound max_gamma(const SystemMatrices& sm, const SectorBound& sb, const LineSelector& sel,
                            const MatrixXd& Q, const VectorXd& K, const VectorXd& H,
                            const LmiSolveConfig& cfg = {}) {
  auto ok = [&](double g) {
    return psd_slack(assemble_bounding_lmi(sm, sb.beta, g, sel, Q, K, H)) <= cfg.nsd_tol;
  };
  if (!ok(0.0)) throw Error("certificate violates the stability inequality at gamma = 0");
  GammaBound gb;
  const auto b = detail::blocks(sm, sb.beta, sel.factor(), Q, K, H);
  const double wnorm = std::max(b.Wq.cwiseAbs().maxCoeff(), b.Wk.cwiseAbs().maxCoeff());
  if (wnorm == 0.0) {
    gb.unbounded = true;
    gb.gamma = std::numeric_limits<double>::infinity();
    return gb;
  }
  double lo = 0.0, hi = 1.0;
  while (ok(hi)) {
    lo = hi;
    hi *= 2;
    if (hi > cfg.gamma_cap) {
      gb.unbounded = true;
      gb.gamma = std::numeric_limits<double>::infinity();
      return gb;
    }
  }
  while (hi - lo > cfg.gamma_rel_tol * hi) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  gb.gamma = lo;
  return gb;
}

inline nlohmann::json to_json(const CertificateMatrices& c) {
  nlohmann::json j;
  j["gamma"] = c.gamma;
  j["beta"] = c.sector.beta;
  j["lambda"] = c.sector.lambda;
  j["mode"] = to_string(c.sector.mode);
  nlohmann::json q = nlohmann::json::array();
  for (int i = 0; i < c.Q.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < c.Q.cols(); ++k) row.push_back(c.Q(i, k));
    q.push_back(row);
  }
  j["Q"] = q;
  j["K"] = std::vector<double>(c.K.data(), c.K.data() + c.K.size());
  j["H"] = std::vector<double>(c.H.data(), c.H.data() + c.H.size());
  return j;
}

inline CertificateMatrices certificate_from_json(const nlohmann::json& j) {
  CertificateMatrices c;
  c.gamma = j.at("gamma").get<double>();
  c.sector.beta = j.at("beta").get<double>();
  c.sector.lambda = j.at("lambda").get<double>();
  const auto mode = j.at("mode").get<std::string>();
  c.sector.mode = mode == "lossy" ? SectorMode::kLossy
                  : mode == "voltage-fluctuation" ? SectorMode::kVoltageFluctuation
                                                  : SectorMode::kLossless;
  const auto& q = j.at("Q");
  const int N = static_cast<int>(q.size());
  c.Q.resize(N, N);
  for (int i = 0; i < N; ++i) {
    if (static_cast<int>(q[i].size()) != N) throw Error("Q must be square");
    for (int k = 0; k < N; ++k) c.Q(i, k) = q[i][k].get<double>();
  }
  const auto K = j.at("K").get<std::vector<double>>();
  const auto H = j.at("H").get<std::vector<double>>();
  c.K = Eigen::Map<const VectorXd>(K.data(), static_cast<int>(K.size()));
  c.H = Eigen::Map<const VectorXd>(H.data(), static_cast<int>(H.size()));
  return c;
}

/// Row-major text dump with 17 significant digits.
inline std::string serialize_certificate(const CertificateMatrices& c) { return to_json(c).dump(1); }

}  // namespace cctscreen
