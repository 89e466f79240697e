// Report serialisation, field specifiers and output-directory handling.
//
// Reports are JSON objects. In deterministic mode every "runtime_s" member is
// moved out of the report into a sidecar file <name>.runtime.json, so the
// report itself is bitwise reproducible.
#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cclab/differential.hpp"
#include "cclab/eikonal.hpp"
#include "cclab/errors.hpp"
#include "cclab/expr.hpp"
#include "cclab/grid.hpp"
#include "cclab/limits.hpp"
#include "cclab/ppoisson.hpp"
#include "cclab/viscosity.hpp"

namespace cclab {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Field specifiers: const:<c> | expr:<expression in x1..xn> | file:<csv>

inline ScalarField field_from_spec(const Grid& grid, std::string_view spec, std::string_view key) {
  const auto colon = spec.find(':');
  const std::string where = "--" + std::string(key) + " '" + std::string(spec) + "'";
  if (colon == std::string_view::npos) {
    throw ParameterError(where + ": expected const:<c>, expr:<expression> or file:<csv>");
  }
  const std::string_view kind = spec.substr(0, colon);
  const std::string body(spec.substr(colon + 1));
  if (kind == "const") {
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(body, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != body.size()) throw ParameterError(where + ": not a number");
    return grid.constant(c);
  }
  if (kind == "expr") {
    try {
      const Expression e = Expression::parse(body, grid.dim());
      return grid.sample([&](std::span<const double> x) { return e(x); });
    } catch (const ParseError& err) {
      throw ParseError(where + ": " + err.what());
    }
  }
  if (kind == "file") {
    try {
      return read_scalar_csv(body, grid);
    } catch (const std::exception& err) {
      throw ParameterError(where + ": " + err.what());
    }
  }
  throw ParameterError(where + ": unknown kind '" + std::string(kind) + "'");
}

// ---------------------------------------------------------------------------
// JSON builders

namespace detail {

// JSON has no NaN or infinity; such values become null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json nums(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

}  // namespace detail

inline Json to_json(const Box& b) { return Json{{"lo", b.lo}, {"hi", b.hi}}; }

inline Json grid_json(const Grid& grid) {
  return Json{{"frame", grid.frame().name()},
              {"n", grid.dim()},
              {"m", grid.m()},
              {"box", to_json(grid.frame().box())},
              {"resolution", grid.resolution()},
              {"spacing", grid.spacings()},
              {"interior_nodes", grid.interior_nodes().size()}};
}

inline Json to_json(const SolveReport& r) {
  return Json{{"frame", r.frame},
              {"resolution", r.resolution},
              {"p", r.p},
              {"eps_final", r.eps_final},
              {"E_p", detail::num(r.E_p)},
              {"duality_gap", detail::num(r.duality_gap)},
              {"iterations", r.iterations},
              {"final_grad_norm", detail::num(r.final_grad_norm)},
              {"grad_tol", detail::num(r.grad_tol)},
              {"zero_boundary", r.zero_boundary},
              {"energy_trace", detail::nums(r.energy_trace)},
              {"runtime_s", r.runtime_s}};
}

inline Json to_json(const EpIdentities& e) {
  return Json{{"gap_weak", detail::num(e.gap_weak)}, {"gap_thompson", detail::num(e.gap_thompson)}};
}

inline Json to_json(const LimitTolerances& t) {
  return Json{{"tol_mono_rel", t.mono_rel}, {"tol_limit", t.limit}, {"tol_lip", t.lip}, {"tol_amle", t.amle}};
}

inline Json to_json(const SweepReport& r) {
  std::vector<double> e, np, gap, rt;
  Json lq = Json::array(), ids = Json::array(), iters = Json::array();
  for (const SweepEntry& s : r.entries) {
    e.push_back(s.E_p);
    np.push_back(s.N_p);
    gap.push_back(s.sup_gap);
    rt.push_back(s.runtime_s);
    lq.push_back(detail::nums(s.lq));
    ids.push_back(to_json(s.identities));
    iters.push_back(s.iterations);
  }
  Json viol = Json::array();
  for (const MonotonicityViolation& v : r.monotonicity_violations) {
    viol.push_back(Json{{"p_prev", r.p_list[v.index]}, {"p_next", r.p_list[v.index + 1]},
                        {"N_prev", v.N_prev}, {"N_next", v.N_next}, {"excess", v.excess}});
  }
  return Json{{"frame", r.frame},
              {"resolution", r.resolution},
              {"mode", to_string(r.mode)},
              {"measure", r.measure},
              {"p", r.p_list},
              {"E_p", detail::nums(e)},
              {"N_p", detail::nums(np)},
              {"sup_gap", detail::nums(gap)},
              {"lq_exponents", r.lq_exponents},
              {"lq", lq},
              {"identities", ids},
              {"iterations", iters},
              {"limit_candidate", to_string(r.candidate)},
              {"E_last", detail::num(r.entries.empty() ? 0.0 : r.last().E_p)},
              {"tolerances", to_json(r.tol)},
              {"monotonicity_violations", viol},
              {"runtime_s", rt}};
}

inline Json to_json(const MonotonicityVerdict& v) {
  return Json{{"pass", v.pass}, {"tol_rel", v.tol_rel}, {"N_p", detail::nums(v.N_p)},
              {"violations", v.violations.size()}};
}

inline Json to_json(const LimitComparison& c) {
  return Json{{"sup_gaps", detail::nums(c.sup_gaps)}, {"gaps_decreasing", c.gaps_decreasing},
              {"einf_gap", detail::num(c.einf_gap)},  {"min_u", detail::num(c.min_u)},
              {"max_excess", detail::num(c.max_excess)}, {"tol_limit", c.tol_limit},
              {"tol_lower", c.tol_lower},             {"bounds_hold", c.bounds_hold}};
}

inline Json to_json(const LipschitzVerdict& v) {
  return Json{{"pass", v.pass},
              {"sup_xu", v.sup_xu},
              {"sup_xg", v.sup_xg},
              {"margin", v.margin},
              {"tol", v.tol},
              {"sup_ok", v.sup_ok},
              {"energy_ok", v.energy_ok},
              {"energy_u", detail::nums(v.energy_u)},
              {"energy_g", detail::nums(v.energy_g)}};
}

inline Json to_json(const AmleVerdict& v) {
  Json boxes = Json::array();
  for (const AmleBoxResult& b : v.boxes) {
    boxes.push_back(Json{{"box", to_json(b.box)}, {"sup_u", b.sup_u}, {"sup_v", b.sup_v},
                         {"margin", b.margin}, {"pass", b.pass}});
  }
  return Json{{"pass", v.pass}, {"p_check", v.p_check}, {"tol", v.tol}, {"boxes", boxes}};
}

inline Json to_json(const DistanceField& d) {
  std::size_t unreachable = 0;
  for (char r : d.reachable) unreachable += r ? 0 : 1;
  return Json{{"sweeps", d.sweeps},
              {"last_update", detail::num(d.last_update)},
              {"sup", sup_norm(d.d)},
              {"source_nodes", std::count(d.source_mask.begin(), d.source_mask.end(), 1)},
              {"unreachable_nodes", unreachable}};
}

inline Json to_json(const EikonalResidual& r) {
  return Json{{"sup", r.sup}, {"l1", r.l1}, {"checked", r.checked_count}, {"ridge", r.ridge_count}};
}

inline Json to_json(const RemainderProfile& p) {
  Json samples = Json::array();
  for (const RemainderSample& s : p.samples) {
    samples.push_back(Json{{"r", s.r},
                           {"worst_ratio", detail::num(s.worst_ratio)},
                           {"floor", s.floor},
                           {"status", to_string(s.status)},
                           {"count", s.count},
                           {"note", s.note}});
  }
  const XDifferential& L = p.differential;
  return Json{{"point", L.x},
              {"xu", std::vector<double>(L.xu.data(), L.xu.data() + L.xu.size())},
              {"L", std::vector<double>(L.L.data(), L.L.data() + L.L.size())},
              {"samples", samples},
              {"log_slope", detail::num(p.log_slope)},
              {"decreasing", p.decreasing}};
}

inline Json to_json(const ProbeVerdict& v) {
  return Json{{"point", v.point},
              {"side", to_string(v.side)},
              {"outcome", to_string(v.outcome)},
              {"tested", v.tested},
              {"admissible", v.admissible},
              {"worst_violation", v.worst_violation},
              {"violations", v.violations.size()},
              {"radius", v.radius},
              {"tol", v.tol}};
}

// ---------------------------------------------------------------------------
// Output

// Removes every "runtime_s" member (recursively) and returns them as an
// object keyed by JSON pointer.
inline Json extract_runtimes(Json& report) {
  Json sidecar = Json::object();
  auto walk = [&](auto&& self, Json& node, const std::string& path) -> void {
    if (node.is_object()) {
      if (auto it = node.find("runtime_s"); it != node.end()) {
        sidecar[path + "/runtime_s"] = *it;
        node.erase(it);
      }
      for (auto& [k, v] : node.items()) self(self, v, path + "/" + k);
    } else if (node.is_array()) {
      for (std::size_t i = 0; i < node.size(); ++i) self(self, node[i], path + "/" + std::to_string(i));
    }
  };
  walk(walk, report, "");
  return sidecar;
}

class OutputDir {
 public:
  OutputDir(std::filesystem::path root, bool deterministic)
      : root_(std::move(root)), deterministic_(deterministic) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw ParameterError("cannot create output directory '" + root_.string() + "': " + ec.message());
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path path(const std::string& name) const { return root_ / name; }

  // Writes <name>.json, plus <name>.runtime.json in deterministic mode.
  void write_report(const std::string& name, Json report) const {
    if (deterministic_) {
      Json sidecar = extract_runtimes(report);
      write_text(name + ".runtime.json", sidecar.dump(2) + "\n");
    }
    write_text(name + ".json", report.dump(2) + "\n");
  }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream os(path(name), std::ios::binary);
    if (!os) throw ParameterError("cannot write '" + path(name).string() + "'");
    os << text;
  }

 private:
  std::filesystem::path root_;
  bool deterministic_;
};

}  // namespace cclab
