#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cctscreen/cctscreen.hpp"

namespace {

using namespace cctscreen;

struct Args {
  std::string network;
  std::string line;
  std::vector<std::string> robust;
  double gamma = 0.0;
  std::string gamma_grid;
  std::optional<double> lambda;
  std::optional<double> trace;
  std::optional<double> fluctuation;
  double clearing_time = -1.0;
  int procedure = 1;
  int samples = 8;
  std::uint64_t seed = 1;
  double dt = 1e-3;
  double horizon = 20.0;
  double tol = 1e-3;
  double cap = 8.0;
  double start = 0.1;
  std::string output;
  std::string json;
  std::string contingencies = "all";
  int jobs = 1;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed for " + path);
}

std::string num(double v) { return format_number(v, 6); }

std::vector<double> parse_grid(const std::string& spec) {
  double lo = 0, hi = 0;
  int count = 0;
  char extra = 0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%d%c", &lo, &hi, &count, &extra) != 3) {
    throw UsageError("--gamma-grid expects lo:hi:count, got '" + spec + "'");
  }
  if (!(lo > 0) || !(hi >= lo) || count < 1 || !std::isfinite(hi)) {
    throw UsageError("--gamma-grid needs 0 < lo <= hi and count >= 1");
  }
  std::vector<double> g;
  for (int i = 0; i < count; ++i) {
    g.push_back(count == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  }
  return g;
}

std::vector<LinePair> parse_lines(const std::string& list) {
  std::vector<LinePair> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(LinePair::parse(item));
  }
  if (out.empty()) throw UsageError("empty line list");
  return out;
}

NetworkModel load(const Args& a, std::string* text = nullptr) {
  const std::string doc = read_file(a.network);
  ParseOptions po;
  if (a.fluctuation) po.fluctuation = VoltageFluctuation{*a.fluctuation, 1.0};
  if (text) *text = doc;
  return parse_network(doc, po);
}

Study study(const NetworkModel& model, const Args& a) {
  StudyOptions so;
  so.lambda = a.lambda;
  return make_study(model, so);
}

LmiSolveConfig solve_config(const Args& a) {
  LmiSolveConfig cfg;
  if (a.trace) {
    if (!(*a.trace > 0)) throw UsageError("--trace must be positive");
    cfg.trace = a.trace;
  }
  return cfg;
}

LinePair required_line(const Args& a) {
  if (a.line.empty()) throw UsageError("--line is required");
  return LinePair::parse(a.line);
}

std::vector<double> grid_for(const Args& a, const Study& st, const LmiSolveConfig& cfg) {
  return a.gamma_grid.empty() ? default_gamma_grid(cfg.trace_for(st.sm)) : parse_grid(a.gamma_grid);
}

void print_vector(const char* label, const Eigen::VectorXd& v) {
  std::cout << label;
  for (int i = 0; i < v.size(); ++i) std::cout << (i ? " " : "") << num(v(i));
  std::cout << '\n';
}

int cmd_equilibrium(const Args& a) {
  const auto model = load(a);
  const Study st = study(model, a);
  std::cout << "buses";
  for (int k = 0; k < model.num_dynamic(); ++k) std::cout << ' ' << model.buses()[k].id;
  std::cout << '\n';
  print_vector("delta_post ", st.eq_post.angles);
  print_vector("delta_pre ", st.eq_pre.angles);
  std::cout << "gap " << num(st.eq_post.gap) << '\n'
            << "lambda " << num(st.sector.lambda) << '\n'
            << "beta " << num(st.sector.beta) << '\n'
            << "mode " << to_string(st.sector.mode) << '\n';
  return 0;
}

int cmd_certify(const Args& a) {
  if (!(a.gamma > 0)) throw UsageError("--gamma must be positive");
  const auto model = load(a);
  const Study st = study(model, a);
  const auto cfg = solve_config(a);
  const auto sel = line_selector(model, required_line(a));
  const auto out = solve_certificate(st.sm, st.sector, a.gamma, sel, cfg);
  std::cout << "status " << to_string(out.status) << '\n';
  if (!out.cert) {
    if (!out.message.empty()) std::cout << "message " << out.message << '\n';
    return 2;
  }
  const auto& c = *out.cert;
  const LyapunovFunction L(st.sm, c);
  const auto R = compute_vmin(L);
  const auto est = cct_bound(c, R.vmin, st.x_pre, L);
  const std::string doc = serialize_certificate(c);
  char digest[32];
  std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(document_hash(doc)));
  std::cout << "gamma " << num(c.gamma) << '\n'
            << "trace_q " << num(c.Q.trace()) << '\n'
            << "min_eig_q " << num(min_eigenvalue(c.Q)) << '\n';
  print_vector("K ", c.K);
  print_vector("H ", c.H);
  std::cout << "digest " << digest << '\n'
            << "lmax " << num(out.slack) << '\n'
            << "vmin " << num(est.vmin) << '\n'
            << "v_pre " << num(est.v_pre) << '\n'
            << "bound " << num(est.bound) << '\n';
  if (!a.output.empty()) write_file(a.output, doc + "\n");
  return est.feasible ? 0 : 2;
}

int cmd_cct(const Args& a) {
  const auto model = load(a);
  const Study st = study(model, a);
  const auto cfg = solve_config(a);
  const auto grid = grid_for(a, st, cfg);
  CctEstimate est;
  if (!a.robust.empty()) {
    std::vector<LinePair> lines;
    for (const auto& s : a.robust) lines.push_back(LinePair::parse(s));
    est = procedure1(st, robust_selector(model, lines), grid, cfg);
  } else if (a.procedure == 1) {
    est = procedure1(st, line_selector(model, required_line(a)), grid, cfg);
  } else if (a.procedure == 2) {
    est = procedure2(st, line_selector(model, required_line(a)), a.samples, grid, a.seed, cfg);
  } else {
    throw UsageError("--procedure must be 1 or 2");
  }
  std::cout << "procedure " << to_string(est.procedure) << '\n' << "status " << est.status << '\n';
  if (!est.feasible) return 2;
  std::cout << "gamma " << num(est.gamma) << '\n'
            << "vmin " << num(est.vmin) << '\n'
            << "v_pre " << num(est.v_pre) << '\n'
            << "bound " << num(est.bound) << '\n';
  if (!a.output.empty()) write_file(a.output, serialize_certificate(*est.cert) + "\n");
  return 0;
}

int cmd_screen(const Args& a) {
  if (!(a.clearing_time >= 0)) throw UsageError("--clearing-time is required and must be non-negative");
  std::string doc;
  const auto model = load(a, &doc);
  const Study st = study(model, a);
  const auto cfg = solve_config(a);
  std::vector<LinePair> lines;
  if (a.contingencies == "all") {
    for (int e = 0; e < model.num_lines(); ++e) lines.push_back(model.line_pair(e));
  } else {
    lines = parse_lines(a.contingencies);
  }
  ScreeningReport rep;
  if (a.procedure == 0) {
    rep = robust_screen(st, lines, a.clearing_time, grid_for(a, st, cfg), cfg);
  } else {
    if (a.procedure != 1 && a.procedure != 2) throw UsageError("--procedure must be 1 or 2");
    ScreenOptions so;
    so.procedure = a.procedure == 2 ? Procedure::kTwo : Procedure::kOne;
    so.grid = grid_for(a, st, cfg);
    so.samples = a.samples;
    so.seed = a.seed;
    so.jobs = a.jobs;
    rep = screen(st, lines, a.clearing_time, so, cfg);
  }
  rep.network_hash = document_hash(doc);
  const std::string csv = to_csv(rep);
  if (a.output.empty()) {
    std::cout << csv;
  } else {
    write_file(a.output, csv);
  }
  if (!a.json.empty()) write_file(a.json, to_json(rep).dump(2) + "\n");
  return rep.any_inconclusive() ? 2 : 0;
}

SimParams sim_params(const Args& a) {
  if (!(a.dt > 0) || !(a.horizon > 0)) throw UsageError("--dt and --horizon must be positive");
  SimParams sp;
  sp.dt = a.dt;
  sp.horizon = a.horizon;
  return sp;
}

int cmd_simulate(const Args& a) {
  if (!(a.clearing_time >= 0)) throw UsageError("--clearing-time is required and must be non-negative");
  const auto model = load(a);
  const Study st = study(model, a);
  const auto sp = sim_params(a);
  const LinePair line = required_line(a);
  const auto traj = simulate_clearing(model, st.eq_pre, st.eq_post, line, a.clearing_time, sp);
  const SwingDynamics dyn(model, st.eq_post);
  const std::string csv = trajectory_csv(traj, dyn);
  const auto verdict = classify(traj, dyn, sp);
  if (a.output.empty()) {
    std::cout << csv;
  } else {
    write_file(a.output, csv);
    std::cout << "verdict " << to_string(verdict.kind) << '\n'
              << "final_deviation " << num(verdict.final_deviation) << '\n';
  }
  return 0;
}

int cmd_true_cct(const Args& a) {
  const auto model = load(a);
  const Study st = study(model, a);
  TrueCctOptions opt;
  opt.sim = sim_params(a);
  opt.tol = a.tol;
  opt.cap = a.cap;
  opt.start = a.start;
  const auto res = true_cct(model, st.eq_pre, st.eq_post, required_line(a), opt);
  if (res.capped) {
    std::cout << "cct >= " << num(res.lo) << " (stable up to the cap " << num(opt.cap) << ")\n";
  } else {
    std::cout << "cct " << num(res.cct) << '\n' << "bracket " << num(res.lo) << ' ' << num(res.hi) << '\n';
  }
  std::cout << "probes " << res.probes << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lyapunov-certificate contingency screening for power grids"};
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--network", a.network, "network JSON document")->required();
    sub->add_option("--lambda", a.lambda, "nominal angle gap, rounded up to the actual one");
    sub->add_option("--fluctuation", a.fluctuation, "voltage fluctuation ratio rho");
  };
  auto certificate_opts = [&](CLI::App* sub) {
    sub->add_option("--trace", a.trace, "trace normalisation of Q (default n + m)");
  };
  auto sim_opts = [&](CLI::App* sub) {
    sub->add_option("--dt", a.dt, "integration step [s]");
    sub->add_option("--horizon", a.horizon, "post-fault horizon [s]");
  };

  auto* eq = app.add_subcommand("equilibrium", "solve the pre- and post-fault equilibria");
  common(eq);

  auto* cert = app.add_subcommand("certify", "solve the certificate at a fixed gamma");
  common(cert);
  certificate_opts(cert);
  cert->add_option("--line", a.line, "faulted line u-v")->required();
  cert->add_option("--gamma", a.gamma, "gamma")->required();
  cert->add_option("--output", a.output, "write the certificate as JSON");

  auto* cct = app.add_subcommand("cct", "critical clearing time bound");
  common(cct);
  certificate_opts(cct);
  cct->add_option("--line", a.line, "faulted line u-v");
  cct->add_option("--robust", a.robust, "one certificate for all listed lines")->expected(1, -1);
  cct->add_option("--procedure", a.procedure, "1 (gamma sweep) or 2 (sampling)");
  cct->add_option("--gamma-grid", a.gamma_grid, "lo:hi:count, log-spaced");
  cct->add_option("--samples", a.samples, "procedure 2 sample count");
  cct->add_option("--seed", a.seed, "procedure 2 seed");
  cct->add_option("--output", a.output, "write the best certificate as JSON");

  auto* scr = app.add_subcommand("screen", "screen contingencies against a clearing time");
  common(scr);
  certificate_opts(scr);
  scr->add_option("--contingencies", a.contingencies, "'all' or a comma-separated list of u-v");
  scr->add_option("--clearing-time", a.clearing_time, "clearing time [s]")->required();
  scr->add_option("--procedure", a.procedure, "1, 2, or 0 for one robust certificate");
  scr->add_option("--gamma-grid", a.gamma_grid, "lo:hi:count, log-spaced");
  scr->add_option("--samples", a.samples, "procedure 2 sample count");
  scr->add_option("--seed", a.seed, "procedure 2 seed");
  scr->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
  scr->add_option("--output", a.output, "CSV report path (default stdout)");
  scr->add_option("--json", a.json, "JSON report path");

  auto* sim = app.add_subcommand("simulate", "trajectory for a given clearing time");
  common(sim);
  sim_opts(sim);
  sim->add_option("--line", a.line, "faulted line u-v")->required();
  sim->add_option("--clearing-time", a.clearing_time, "clearing time [s]")->required();
  sim->add_option("--output", a.output, "CSV path (default stdout)");

  auto* tc = app.add_subcommand("true-cct", "critical clearing time by simulation");
  common(tc);
  sim_opts(tc);
  tc->add_option("--line", a.line, "faulted line u-v")->required();
  tc->add_option("--tol", a.tol, "bisection tolerance [s]");
  tc->add_option("--cap", a.cap, "largest clearing time probed [s]");
  tc->add_option("--start", a.start, "first probe [s]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*eq) return cmd_equilibrium(a);
    if (*cert) return cmd_certify(a);
    if (*cct) return cmd_cct(a);
    if (*scr) return cmd_screen(a);
    if (*sim) return cmd_simulate(a);
    if (*tc) return cmd_true_cct(a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
