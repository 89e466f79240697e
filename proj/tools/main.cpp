// cclab command-line front end.
//
// Exit status: 0 success, 1 a scientific check failed (or a solver missed its
// tolerance), 2 usage or parameter error, 3 unexpected internal error.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cclab/io.hpp"
#include "verify.hpp"

#ifndef CCLAB_VERSION
#define CCLAB_VERSION "unknown"
#endif

namespace {

using namespace cclab;

constexpr int kExitOk = 0;
constexpr int kExitCheck = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInternal = 3;
constexpr int kMinResolution = 9;

struct RunConfig {
  std::string command;

  std::string frame = "euclidean2";
  std::string frame_file;
  std::vector<double> box;
  std::vector<int> res{33};

  std::string f = "const:1";
  std::string g = "const:0";
  double p = 4.0;
  std::vector<double> p_list{4.0, 8.0, 16.0, 32.0};
  std::vector<double> lq{2.0, 4.0, 8.0};
  bool cold = false;

  double eps_final = -1.0;
  int max_iters = SolveConfig{}.max_iters;
  double grad_tol = 0.0;
  double grad_rel_tol = SolveConfig{}.grad_rel_tol;
  double step_tol = SolveConfig{}.step_tol;
  bool no_continuation = false;

  std::string source = "boundary";
  int refine = 1;
  std::string viscosity = "local";
  double eikonal_tol = EikonalConfig{}.tol;

  std::string u = "expr:x1";
  std::vector<double> point;
  std::vector<double> radii{0.4, 0.2, 0.1};
  std::string equation = "inf_laplace";
  std::string side = "both";
  int budget = ProbeConfig{}.budget;
  double radius = 0.0;
  double kappa = ProbeConfig{}.kappa;
  double probe_tol = -1.0;

  int samples = 200;
  std::string suite = "core";

  std::string out;
  bool deterministic = false;
  bool no_fields = false;
  std::uint64_t seed = 20240601;
  int workers = 1;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string out_dir(const RunConfig& cfg) {
  if (!cfg.out.empty()) return cfg.out;
  if (const char* env = std::getenv("CCLAB_OUT"); env && *env) return env;
  return "cclab_out";
}

// Reports and file names print p without trailing zeros: 4, 8, 2.5.
std::string fmt_p(double p) {
  std::ostringstream os;
  os << p;
  return os.str();
}

// Parses "x1,x2,...": exactly n numbers.
Point parse_point(const std::vector<double>& values, int n, const char* key) {
  if (static_cast<int>(values.size()) != n) {
    throw ParameterError(std::string(key) + ": expected " + std::to_string(n) + " coordinates, got " +
                         std::to_string(values.size()));
  }
  return values;
}

Frame make_frame(const RunConfig& cfg) {
  Frame frame = [&] {
    if (!cfg.frame_file.empty()) {
      try {
        return load_frame_file(cfg.frame_file);
      } catch (const std::exception& e) {
        throw ParameterError("--frame-file: " + std::string(e.what()));
      }
    }
    try {
      return frame_by_name(cfg.frame);
    } catch (const std::exception& e) {
      throw ParameterError("--frame: " + std::string(e.what()));
    }
  }();
  if (cfg.box.empty()) return frame;
  const int n = frame.n();
  Box box;
  if (cfg.box.size() == 2) {
    box = Box::cube(n, cfg.box[0], cfg.box[1]);
  } else if (static_cast<int>(cfg.box.size()) == 2 * n) {
    for (int i = 0; i < n; ++i) {
      box.lo.push_back(cfg.box[2 * i]);
      box.hi.push_back(cfg.box[2 * i + 1]);
    }
  } else {
    throw ParameterError("--box: expected 2 or " + std::to_string(2 * n) + " values (lo,hi per axis)");
  }
  for (int i = 0; i < n; ++i) {
    if (!(box.lo[i] < box.hi[i])) throw ParameterError("--box: lo must be below hi on every axis");
  }
  return frame.with_box(std::move(box));
}

Grid make_grid(const RunConfig& cfg) {
  Frame frame = make_frame(cfg);
  const int n = frame.n();
  std::vector<int> res = cfg.res;
  if (res.size() == 1) res.assign(static_cast<std::size_t>(n), res[0]);
  if (static_cast<int>(res.size()) != n) {
    throw ParameterError("--res: expected 1 or " + std::to_string(n) + " values");
  }
  for (int r : res) {
    if (r < kMinResolution) {
      throw ParameterError("--res: resolution must be >= " + std::to_string(kMinResolution) + " per axis");
    }
  }
  return Grid(std::move(frame), res);
}

SolveConfig solve_config(const RunConfig& cfg) {
  SolveConfig s;
  s.eps_final = cfg.eps_final;
  s.max_iters = cfg.max_iters;
  s.grad_tol = cfg.grad_tol;
  s.grad_rel_tol = cfg.grad_rel_tol;
  s.step_tol = cfg.step_tol;
  s.p_continuation = !cfg.no_continuation;
  return s;
}

EikonalConfig eikonal_config(const RunConfig& cfg) {
  EikonalConfig e;
  e.tol = cfg.eikonal_tol;
  e.refine = cfg.refine;
  e.viscosity = cfg.viscosity == "box" ? EikonalConfig::Viscosity::kBox : EikonalConfig::Viscosity::kLocal;
  return e;
}

Json solver_json(const Grid& grid, const SolveConfig& s) {
  const double eps = s.eps_final >= 0.0 ? s.eps_final : default_eps_final(grid);
  const std::vector<double> schedule = s.eps_schedule.empty() ? detail::default_eps_schedule(eps) : s.eps_schedule;
  return Json{{"eps_final", eps},
              {"eps_schedule", schedule},
              {"max_iters", s.max_iters},
              {"grad_tol", s.grad_tol > 0.0 ? Json(s.grad_tol) : Json("grad_rel_tol*(1+|E|)*h^n")},
              {"grad_rel_tol", s.grad_rel_tol},
              {"stage_rel_tol", s.stage_rel_tol},
              {"backtrack", s.backtrack},
              {"armijo", s.armijo},
              {"p_continuation", s.p_continuation},
              {"step_tol", s.step_tol}};
}

// Echo of the fully resolved configuration, written before any work starts.
Json manifest(const RunConfig& cfg, const Grid* grid) {
  Json m{{"cclab_version", CCLAB_VERSION},
         {"command", cfg.command},
         {"output", Json{{"dir", out_dir(cfg)}, {"deterministic", cfg.deterministic},
                         {"fields", !cfg.no_fields}}},
         {"seed", cfg.seed},
         {"workers", cfg.workers}};
  if (grid) {
    m["frame"] = Json{{"name", grid->frame().name()},
                      {"file", cfg.frame_file.empty() ? Json(nullptr) : Json(cfg.frame_file)}};
    m["grid"] = grid_json(*grid);
  }
  const std::string& c = cfg.command;
  if (c == "solve" || c == "sweep") {
    m["f"] = cfg.f;
    m["g"] = cfg.g;
    m["solver"] = solver_json(*grid, solve_config(cfg));
  }
  if (c == "solve") m["p"] = cfg.p;
  if (c == "sweep") {
    m["p_list"] = cfg.p_list;
    m["lq_exponents"] = cfg.lq;
    m["warm_start"] = !cfg.cold;
    m["eikonal"] = Json{{"tol", EikonalConfig{}.tol}, {"refine", SweepConfig{}.eikonal.refine},
                        {"viscosity", "local"}};
  }
  if (c == "distance") {
    m["source"] = cfg.source;
    m["eikonal"] = Json{{"tol", cfg.eikonal_tol}, {"refine", cfg.refine}, {"viscosity", cfg.viscosity},
                        {"max_sweeps", EikonalConfig{}.max_sweeps}};
  }
  if (c == "differential" || c == "probe") {
    m["u"] = cfg.u;
    m["point"] = cfg.point;
  }
  if (c == "differential") m["radii"] = cfg.radii;
  if (c == "probe") {
    m["equation"] = cfg.equation;
    m["side"] = cfg.side;
    m["p"] = cfg.p;
    m["f"] = cfg.f;
    m["probe"] = Json{{"budget", cfg.budget},
                      {"radius", cfg.radius > 0.0 ? Json(cfg.radius) : Json("8h")},
                      {"kappa", cfg.kappa},
                      {"tol", cfg.probe_tol >= 0.0 ? Json(cfg.probe_tol) : Json("10h")}};
  }
  if (c == "frames") m["samples"] = cfg.samples;
  if (c == "verify") m["suite"] = cfg.suite;
  return m;
}

void write_field(const OutputDir& out, const RunConfig& cfg, const Grid& grid, const std::string& file,
                 std::span<const double> u, const std::string& column) {
  if (!cfg.no_fields) write_scalar_csv(out.path(file).string(), grid, u, column);
}

Index node_at(const Grid& grid, const RunConfig& cfg) {
  if (cfg.point.empty()) {
    const Box& b = grid.frame().box();
    Point c(b.lo.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (b.lo[i] + b.hi[i]);
    return grid.nearest_node(c);
  }
  const Point x = parse_point(cfg.point, grid.dim(), "--point");
  if (!grid.frame().box().contains(x)) throw ParameterError("--point: outside the box");
  return grid.nearest_node(x);
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns kExitOk or kExitCheck.

int cmd_frames(const RunConfig& cfg, bool frame_given, const OutputDir& out) {
  std::vector<Frame> frames;
  if (frame_given) {
    frames.push_back(make_frame(cfg));
  } else {
    for (const std::string& name : builtin_frame_names()) frames.push_back(frame_by_name(name));
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Json list = Json::array();
  bool pass = true;
  for (const Frame& frame : frames) {
    const int n = frame.n();
    int lic = 0, inverted = 0;
    double min_sigma = std::numeric_limits<double>::infinity();
    double inverse_error = 0.0;
    for (int s = 0; s < cfg.samples; ++s) {
      Point x(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) x[i] = frame.box().lo[i] + unit(rng) * (frame.box().hi[i] - frame.box().lo[i]);
      const RankInfo info = lic_check(frame, x);
      min_sigma = std::min(min_sigma, info.smallest_singular_value);
      if (info.rank < frame.m()) continue;
      ++lic;
      // The identity is checked where C(x) is well conditioned; near a
      // degeneracy the error grows with the condition number.
      if (info.smallest_singular_value < 0.1 * info.largest_singular_value) continue;
      const Eigen::MatrixXd e = left_inverse(frame, x) * eval_coeff(frame, x).transpose() -
                                Eigen::MatrixXd::Identity(frame.m(), frame.m());
      inverse_error = std::max(inverse_error, e.cwiseAbs().maxCoeff());
      ++inverted;
    }
    Point centre(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) centre[i] = 0.5 * (frame.box().lo[i] + frame.box().hi[i]);
    const std::vector<int> ranks = hormander_probe(frame, centre, 3);
    const bool ok = inverse_error <= 1e-10;
    pass = pass && ok;
    list.push_back(Json{{"name", frame.name()},
                        {"n", n},
                        {"m", frame.m()},
                        {"box", to_json(frame.box())},
                        {"samples", cfg.samples},
                        {"lic_points", lic},
                        {"min_singular_value", detail::num(min_sigma)},
                        {"left_inverse_points", inverted},
                        {"left_inverse_error", inverse_error},
                        {"bracket_point", centre},
                        {"bracket_ranks", ranks},
                        {"pass", ok}});
    std::cout << frame.name() << ": n=" << n << " m=" << frame.m() << " lic=" << lic << "/" << cfg.samples
              << " left_inverse_error=" << inverse_error << "\n";
  }
  out.write_report("frames", Json{{"pass", pass}, {"frames", list}});
  return pass ? kExitOk : kExitCheck;
}

int cmd_solve(const RunConfig& cfg, const Grid& grid, const OutputDir& out) {
  const ScalarField f = field_from_spec(grid, cfg.f, "f");
  const ScalarField g = field_from_spec(grid, cfg.g, "g");
  const SolveReport r = solve_p_poisson(grid, cfg.p, f, g, solve_config(cfg));
  Json rep{{"grid", grid_json(grid)}, {"solve", to_json(r)}};
  bool pass = true;
  if (r.zero_boundary) {
    // The weak-form identity E_p = int f u needs zero boundary data.
    const EpIdentities ids = ep_identities(grid, r, f);
    const bool ok = ids.gap_weak <= 1e-6;
    rep["identities"] = to_json(ids);
    rep["identities"]["tol"] = 1e-6;
    rep["identities"]["pass"] = ok;
    pass = ok;
  }
  rep["pass"] = pass;
  out.write_report("solve", rep);
  write_field(out, cfg, grid, "u.csv", r.u, "u");
  std::cout << "solve: p=" << fmt_p(r.p) << " E_p=" << r.E_p << " iterations=" << r.iterations
            << (pass ? "" : " CHECK FAILED") << "\n";
  return pass ? kExitOk : kExitCheck;
}

int cmd_sweep(const RunConfig& cfg, const Grid& grid, const OutputDir& out) {
  const ScalarField f = field_from_spec(grid, cfg.f, "f");
  const ScalarField g = field_from_spec(grid, cfg.g, "g");
  SweepConfig sc;
  sc.solve = solve_config(cfg);
  sc.warm_start = !cfg.cold;
  sc.lq_exponents = cfg.lq;
  const SweepReport rep = p_sweep(grid, f, g, cfg.p_list, sc);
  Json j{{"grid", grid_json(grid)}, {"sweep", to_json(rep)}};
  bool pass = true;
  if (rep.mode == SweepMode::kNonHomogeneous) {
    const MonotonicityVerdict mono = monotonicity_check(rep);
    j["monotonicity"] = to_json(mono);
    pass = pass && mono.pass;
    if (rep.candidate == LimitCandidate::kEikonal) {
      const LimitComparison cmp = limit_compare(grid, rep, rep.limit);
      j["limit"] = to_json(cmp);
      pass = pass && cmp.bounds_hold;
    }
  }
  bool zero_f = true;
  for (double v : f) zero_f = zero_f && v == 0.0;
  if (rep.mode == SweepMode::kHomogeneous || zero_f) {
    const LipschitzVerdict lip = lipschitz_bound_check(grid, rep);
    j["lipschitz"] = to_json(lip);
    pass = pass && lip.pass;
  }
  j["pass"] = pass;
  out.write_report("sweep", j);
  for (const SweepEntry& e : rep.entries) write_field(out, cfg, grid, "u_p" + fmt_p(e.p) + ".csv", e.u, "u");
  write_field(out, cfg, grid, "limit.csv", rep.limit, to_string(rep.candidate));
  std::cout << "sweep: mode=" << to_string(rep.mode) << " N_p=";
  for (std::size_t k = 0; k < rep.entries.size(); ++k) std::cout << (k ? "," : "") << rep.entries[k].N_p;
  std::cout << (pass ? "" : " CHECK FAILED") << "\n";
  return pass ? kExitOk : kExitCheck;
}

int cmd_distance(const RunConfig& cfg, const Grid& grid, const OutputDir& out) {
  Source source;
  Point centre;
  if (cfg.source == "boundary") {
    source = Source::boundary();
  } else if (cfg.source.starts_with("point:")) {
    std::vector<double> xs;
    std::stringstream ss(cfg.source.substr(6));
    for (std::string item; std::getline(ss, item, ',');) {
      try {
        xs.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ParameterError("--source: bad coordinate '" + item + "'");
      }
    }
    centre = parse_point(xs, grid.dim(), "--source");
    if (!grid.frame().box().contains(centre)) throw ParameterError("--source: point outside the box");
    source = Source::at(centre);
  } else {
    throw ParameterError("--source: expected 'boundary' or 'point:x1,...,xn'");
  }
  const EikonalConfig ec = eikonal_config(cfg);
  const DistanceField d = solve_eikonal(grid, source, ec);
  const EikonalResidual res = eikonal_residual_check(grid, d);
  Json j{{"grid", grid_json(grid)}, {"source", cfg.source}, {"distance", to_json(d)}, {"residual", to_json(res)}};
  if (!centre.empty()) {
    // Pairs (source, node) feed the metric-equivalence fit.
    std::vector<DistancePair> pairs;
    const Point snapped = grid.point(grid.nearest_node(centre));
    for (Index k : grid.interior_nodes()) {
      const Point x = grid.point(k);
      double e = 0.0;
      for (int i = 0; i < grid.dim(); ++i) e += (x[i] - snapped[i]) * (x[i] - snapped[i]);
      if (d.reachable[k] && std::sqrt(e) > 2.0 * grid.max_spacing()) pairs.push_back({snapped, x, d.d[k]});
    }
    if (pairs.size() >= 50) {
      const MetricFit fit = metric_equivalence_probe(pairs);
      j["metric_fit"] = Json{{"c_lower", fit.c_lower}, {"c_upper", fit.c_upper}, {"r_fit", fit.r_fit},
                             {"slope", fit.slope}, {"pairs", fit.pairs}};
    }
  }
  const bool pass = d.last_update <= ec.tol;
  j["converged"] = pass;
  j["pass"] = pass;
  out.write_report("distance", j);
  write_field(out, cfg, grid, "d.csv", d.d, "d");
  std::cout << "distance: sweeps=" << d.sweeps << " sup=" << sup_norm(d.d) << " residual_sup=" << res.sup
            << (pass ? "" : " NOT CONVERGED") << "\n";
  return pass ? kExitOk : kExitCheck;
}

int cmd_differential(const RunConfig& cfg, const Grid& grid, const OutputDir& out) {
  const ScalarField u = field_from_spec(grid, cfg.u, "u");
  const Index node = node_at(grid, cfg);
  const RemainderProfile prof = remainder_profile(grid, u, node, cfg.radii);
  bool exact = true;
  for (const RemainderSample& s : prof.samples) exact = exact && !(s.worst_ratio > 1e-10);
  const bool pass = prof.decreasing || exact;
  Json j{{"grid", grid_json(grid)}, {"u", cfg.u}, {"profile", to_json(prof)}, {"exact", exact}, {"pass", pass}};
  out.write_report("differential", j);
  if (!cfg.no_fields) {
    std::ofstream os(out.path("remainder.csv"));
    prof.write_csv(os);
  }
  std::cout << "differential: log_slope=" << prof.log_slope << " decreasing=" << prof.decreasing
            << (pass ? "" : " CHECK FAILED") << "\n";
  return pass ? kExitOk : kExitCheck;
}

int cmd_probe(const RunConfig& cfg, const Grid& grid, const OutputDir& out) {
  const ScalarField u = field_from_spec(grid, cfg.u, "u");
  const Index node = node_at(grid, cfg);
  ProbeEquation eq;
  if (cfg.equation == "inf_laplace") {
    eq = ProbeEquation::inf_laplace();
  } else if (cfg.equation == "eikonal") {
    eq = ProbeEquation::eikonal();
  } else {
    const ScalarField f = field_from_spec(grid, cfg.f, "f");
    eq = ProbeEquation::p_poisson(cfg.p, f[node]);
  }
  std::vector<ProbeSide> sides;
  if (cfg.side != "super") sides.push_back(ProbeSide::kSub);
  if (cfg.side != "sub") sides.push_back(ProbeSide::kSuper);
  ProbeConfig pc;
  pc.budget = cfg.budget;
  pc.radius = cfg.radius;
  pc.kappa = cfg.kappa;
  pc.tol = cfg.probe_tol;
  Json verdicts = Json::array();
  bool pass = true;
  std::ostringstream csv;
  write_probe_csv_header(csv, grid.dim());
  for (ProbeSide side : sides) {
    const ProbeVerdict v = [&] {
      try {
        return probe_viscosity(grid, u, node, eq, side, pc);
      } catch (const ParameterError& e) {
        throw ParameterError("--point: " + std::string(e.what()));
      } catch (const DomainError& e) {
        throw ParameterError("--point: " + std::string(e.what()));
      }
    }();
    pass = pass && v.outcome != ProbeOutcome::kFail;
    verdicts.push_back(to_json(v));
    v.write_csv_row(csv);
    std::cout << "probe: side=" << to_string(side) << " outcome=" << to_string(v.outcome)
              << " admissible=" << v.admissible << " worst_violation=" << v.worst_violation << "\n";
  }
  out.write_report("probe", Json{{"grid", grid_json(grid)}, {"equation", cfg.equation}, {"verdicts", verdicts},
                                 {"pass", pass}});
  if (!cfg.no_fields) out.write_text("probe.csv", csv.str());
  return pass ? kExitOk : kExitCheck;
}

int cmd_verify(const RunConfig& cfg, const OutputDir& out) {
  const Json result = verify::run_suites(verify::core_suites(), cfg.seed, cfg.workers);
  for (const auto& [name, r] : result["suites"].items()) {
    std::cout << (r.value("pass", false) ? "PASS " : "FAIL ") << name << "\n";
  }
  out.write_report("verify", result);
  return result.value("pass", false) ? kExitOk : kExitCheck;
}

void add_grid_options(CLI::App* sub, RunConfig& cfg) {
  auto* fr = sub->add_option("--frame", cfg.frame, "built-in frame name")->capture_default_str();
  sub->add_option("--frame-file", cfg.frame_file, "custom frame definition file")->excludes(fr);
  sub->add_option("--box", cfg.box, "lo,hi (all axes) or lo1,hi1,...,lon,hin")->delimiter(',');
  sub->add_option("--res", cfg.res, "nodes per axis: one value or one per axis")
      ->delimiter(',')
      ->capture_default_str();
}

void add_solver_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--f", cfg.f, "source: const:c | expr:<expression> | file:<csv>")->capture_default_str();
  sub->add_option("--g", cfg.g, "boundary data, same grammar as --f")->capture_default_str();
  sub->add_option("--eps-final", cfg.eps_final, "final regularisation (negative: min(h, 1e-4))");
  sub->add_option("--max-iters", cfg.max_iters, "Newton iterations per stage")->capture_default_str();
  sub->add_option("--grad-tol", cfg.grad_tol, "absolute gradient tolerance (0: relative rule)");
  sub->add_option("--grad-rel-tol", cfg.grad_rel_tol)->capture_default_str();
  sub->add_option("--step-tol", cfg.step_tol, "relative Newton step that ends the final stage")
      ->capture_default_str();
  sub->add_flag("--no-continuation", cfg.no_continuation, "disable p-continuation on cold starts");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cclab: p-Poisson limits and eikonal problems for Carnot-Carathéodory frames"};
  app.set_version_flag("--version", CCLAB_VERSION);
  app.require_subcommand(1);
  RunConfig cfg;

  app.add_option("--out", cfg.out, "output directory (default: $CCLAB_OUT, else ./cclab_out)");
  app.add_flag("--deterministic", cfg.deterministic,
               "single worker; runtimes go to <report>.runtime.json so reports are reproducible");
  app.add_flag("--no-fields", cfg.no_fields, "skip CSV field output");
  app.add_option("--seed", cfg.seed, "seed for sampled checks")->capture_default_str();
  app.add_option("--workers", cfg.workers, "worker count")->check(CLI::PositiveNumber)->capture_default_str();

  auto* frames = app.add_subcommand("frames", "list frames with rank and left-inverse diagnostics");
  add_grid_options(frames, cfg);
  frames->add_option("--samples", cfg.samples, "random points per frame")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  auto* solve = app.add_subcommand("solve", "solve one p-Poisson problem");
  add_grid_options(solve, cfg);
  add_solver_options(solve, cfg);
  solve->add_option("--p", cfg.p, "exponent")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "solve over a list of p and compare with the limit");
  add_grid_options(sweep, cfg);
  add_solver_options(sweep, cfg);
  sweep->add_option("--p-list", cfg.p_list, "increasing exponents, each >= 4")
      ->delimiter(',')
      ->capture_default_str();
  sweep->add_option("--lq", cfg.lq, "L^q norms recorded per p")->delimiter(',')->capture_default_str();
  sweep->add_flag("--cold", cfg.cold, "solve every p from scratch");

  auto* distance = app.add_subcommand("distance", "solve the eikonal equation");
  add_grid_options(distance, cfg);
  distance->add_option("--source", cfg.source, "boundary | point:x1,...,xn")->capture_default_str();
  distance->add_option("--refine", cfg.refine, "solve on a grid refined by this factor")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  distance->add_option("--viscosity", cfg.viscosity, "Lax-Friedrichs viscosity")
      ->check(CLI::IsMember({"local", "box"}))
      ->capture_default_str();
  distance->add_option("--tol", cfg.eikonal_tol, "sweep convergence tolerance")->capture_default_str();

  auto* differential = app.add_subcommand("differential", "X-differential and remainder profile of a field");
  add_grid_options(differential, cfg);
  differential->add_option("--u", cfg.u, "field: const:c | expr:<expression> | file:<csv>")->capture_default_str();
  differential->add_option("--point", cfg.point, "x1,...,xn (default: box centre)")->delimiter(',');
  differential->add_option("--radii", cfg.radii, "decreasing radii")->delimiter(',')->capture_default_str();

  auto* probe = app.add_subcommand("probe", "viscosity test-function probe at one point");
  add_grid_options(probe, cfg);
  probe->add_option("--u", cfg.u, "field: const:c | expr:<expression> | file:<csv>")->capture_default_str();
  probe->add_option("--point", cfg.point, "x1,...,xn (default: box centre)")->delimiter(',');
  probe->add_option("--equation", cfg.equation)
      ->check(CLI::IsMember({"inf_laplace", "eikonal", "p_poisson"}))
      ->capture_default_str();
  probe->add_option("--side", cfg.side)->check(CLI::IsMember({"sub", "super", "both"}))->capture_default_str();
  probe->add_option("--p", cfg.p, "exponent for --equation p_poisson")->capture_default_str();
  probe->add_option("--f", cfg.f, "source for --equation p_poisson")->capture_default_str();
  probe->add_option("--budget", cfg.budget)->check(CLI::PositiveNumber)->capture_default_str();
  probe->add_option("--radius", cfg.radius, "test neighbourhood radius (0: 8h)");
  probe->add_option("--kappa", cfg.kappa)->capture_default_str();
  probe->add_option("--tol", cfg.probe_tol, "violation tolerance (negative: 10h)");

  auto* verify = app.add_subcommand("verify", "run the invariant suites of every module");
  verify->add_option("--suite", cfg.suite)->check(CLI::IsMember({"core"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "cclab: error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  cfg.command = sub->get_name();
  if (cfg.deterministic) cfg.workers = 1;

  try {
    const OutputDir out(out_dir(cfg), cfg.deterministic);
    if (cfg.command == "frames") {
      const bool given = sub->count("--frame") > 0 || sub->count("--frame-file") > 0;
      out.write_text("manifest.json", manifest(cfg, nullptr).dump(2) + "\n");
      return cmd_frames(cfg, given, out);
    }
    if (cfg.command == "verify") {
      out.write_text("manifest.json", manifest(cfg, nullptr).dump(2) + "\n");
      return cmd_verify(cfg, out);
    }
    const Grid grid = make_grid(cfg);
    out.write_text("manifest.json", manifest(cfg, &grid).dump(2) + "\n");
    if (cfg.command == "solve") return cmd_solve(cfg, grid, out);
    if (cfg.command == "sweep") return cmd_sweep(cfg, grid, out);
    if (cfg.command == "distance") return cmd_distance(cfg, grid, out);
    if (cfg.command == "differential") return cmd_differential(cfg, grid, out);
    if (cfg.command == "probe") return cmd_probe(cfg, grid, out);
  } catch (const ConvergenceError& e) {
    std::cerr << "cclab: check failed: " << one_line(e.what()) << "\n";
    return kExitCheck;
  } catch (const ParameterError& e) {
    std::cerr << "cclab: error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "cclab: error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    std::cerr << "cclab: error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "cclab: internal error: " << one_line(e.what()) << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
