// The p -> infinity harness: p-sweeps of the p-Poisson problem, normalised
// energy monotonicity, comparison with a limit candidate, the Lipschitz
// bound in the homogeneous case, AMLE spot checks and residuals of the
// limit system.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cclab/eikonal.hpp"
#include "cclab/errors.hpp"
#include "cclab/grid.hpp"
#include "cclab/ppoisson.hpp"
#include "cclab/viscosity.hpp"

namespace cclab {

enum class SweepMode { kNonHomogeneous, kHomogeneous };

inline const char* to_string(SweepMode m) {
  return m == SweepMode::kHomogeneous ? "homogeneous" : "non_homogeneous";
}

enum class LimitCandidate { kEikonal, kLargestP };

inline const char* to_string(LimitCandidate c) {
  return c == LimitCandidate::kEikonal ? "eikonal" : "largest_p";
}

struct LimitTolerances {
  double mono_rel = 1e-6;  // N_{k+1} <= N_k + mono_rel * (1 + N_k)
  double limit = 0.0;      // filled in by p_sweep: 3h + tail(p_max)
  double lip = 0.05;
  double amle = 0.05;
};

struct SweepConfig {
  SolveConfig solve;
  bool warm_start = true;
  std::vector<double> lq_exponents{2.0, 4.0, 8.0};
  // The eikonal candidate is solved on the nested 2x grid and restricted.
  EikonalConfig eikonal = [] {
    EikonalConfig c;
    c.refine = 2;
    return c;
  }();
  LimitTolerances tol;
};

struct SweepEntry {
  double p = 0.0;
  ScalarField u;
  double E_p = 0.0;
  double N_p = 0.0;
  double sup_gap = std::numeric_limits<double>::quiet_NaN();  // sup |u_p - candidate|
  std::vector<double> lq;                                      // ||Xu_p||_{L^q}, one per exponent
  EpIdentities identities;
  int iterations = 0;
  double runtime_s = 0.0;
};

struct MonotonicityViolation {
  std::size_t index = 0;  // entry k; the violation is between k and k + 1
  double N_prev = 0.0;
  double N_next = 0.0;
  double excess = 0.0;
};

struct SweepReport {
  SweepMode mode = SweepMode::kNonHomogeneous;
  std::string frame;
  std::vector<int> resolution;
  std::vector<double> p_list;
  std::vector<double> lq_exponents;
  std::vector<SweepEntry> entries;
  LimitCandidate candidate = LimitCandidate::kLargestP;
  ScalarField limit;  // the candidate field
  ScalarField f;
  ScalarField g;
  double measure = 0.0;
  LimitTolerances tol;
  std::vector<MonotonicityViolation> monotonicity_violations;
  double runtime_s = 0.0;

  const SweepEntry& last() const { return entries.back(); }
};

namespace detail {

inline void check_field(const Grid& grid, std::span<const double> v, const char* what) {
  if (v.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError(std::string(what) + " does not match the grid");
  }
}

inline void check_same_grid(const Grid& grid, const SweepReport& rep, const char* what) {
  if (rep.frame != grid.frame().name() || rep.resolution != grid.resolution() ||
      rep.limit.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError(std::string(what) + ": report was computed on a different grid");
  }
}

inline std::vector<MonotonicityViolation> monotonicity_violations(const std::vector<SweepEntry>& e,
                                                                  double rel) {
  std::vector<MonotonicityViolation> out;
  for (std::size_t k = 0; k + 1 < e.size(); ++k) {
    const double excess = e[k + 1].N_p - e[k].N_p - rel * (1.0 + e[k].N_p);
    if (excess > 0.0) out.push_back({k, e[k].N_p, e[k + 1].N_p, excess});
  }
  return out;
}

inline double sup_interior_gradient(const Grid& grid, std::span<const double> u) {
  std::vector<double> g(static_cast<std::size_t>(grid.m()));
  double s = 0.0;
  for (Index k : grid.interior_nodes()) {
    x_gradient_at(grid, u, k, g);
    double q = 0.0;
    for (double v : g) q += v * v;
    s = std::max(s, std::sqrt(q));
  }
  return s;
}

}  // namespace detail

// |Omega| for the normalised energy: the box volume, or the interior cell
// count times the cell volume when a predicate carves the domain.
inline double domain_measure(const Grid& grid) {
  if (grid.predicate()) return grid.measure();
  double v = 1.0;
  const Box& b = grid.frame().box();
  for (int k = 0; k < grid.dim(); ++k) v *= b.hi[k] - b.lo[k];
  return v;
}

// Slack for u_p <= target: three cells of discretisation plus a p-tail of
// log(1 + sup f * diam) / (p - 1).
inline double default_limit_tol(const Grid& grid, std::span<const double> f, double p_max) {
  double fmax = 0.0;
  for (Index k : grid.interior_nodes()) fmax = std::max(fmax, f[k]);
  return 3.0 * grid.max_spacing() + std::log1p(fmax * grid.frame().box().diameter()) / (p_max - 1.0);
}

// Solves the p-Poisson problem for each p in p_list, warm-starting from the
// previous p. Non-homogeneous mode: f >= 0 with zero boundary data.
// Homogeneous mode: f = 0 with boundary data g (g is also read on the
// interior by the Lipschitz check).
inline SweepReport p_sweep(const Grid& grid, std::span<const double> f, std::span<const double> g,
                           std::span<const double> p_list, const SweepConfig& cfg = {}) {
  const auto started = std::chrono::steady_clock::now();
  detail::check_field(grid, f, "p_sweep: f");
  detail::check_field(grid, g, "p_sweep: g");
  if (p_list.empty()) throw ParameterError("p_sweep: empty p_list");
  for (std::size_t k = 0; k < p_list.size(); ++k) {
    if (!std::isfinite(p_list[k]) || p_list[k] < 4.0) throw ParameterError("p_sweep: every p must be >= 4");
    if (k > 0 && !(p_list[k] > p_list[k - 1])) {
      throw ParameterError("p_sweep: p_list must be strictly increasing");
    }
  }
  if (!(grid.measure() > 0.0)) throw ParameterError("p_sweep: the domain has no interior nodes");

  bool g_zero = true, f_zero = true, f_positive = true;
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.is_boundary(k) && g[k] != 0.0) g_zero = false;
  }
  for (Index k : grid.interior_nodes()) {
    if (f[k] != 0.0) f_zero = false;
    if (!(f[k] > 0.0)) f_positive = false;
  }

  SweepReport rep;
  rep.mode = g_zero ? SweepMode::kNonHomogeneous : SweepMode::kHomogeneous;
  if (rep.mode == SweepMode::kHomogeneous && !f_zero) {
    throw ParameterError("p_sweep: nonzero boundary data requires f = 0 (homogeneous mode)");
  }
  if (rep.mode == SweepMode::kNonHomogeneous) {
    for (Index k : grid.interior_nodes()) {
      if (f[k] < 0.0) {
        throw ParameterError("p_sweep: f < 0 at " + format_point(grid.point(k)) +
                             "; the limit theorem for the non-homogeneous problem requires f >= 0");
      }
    }
  }
  rep.frame = grid.frame().name();
  rep.resolution = grid.resolution();
  rep.p_list.assign(p_list.begin(), p_list.end());
  rep.lq_exponents = cfg.lq_exponents;
  rep.f.assign(f.begin(), f.end());
  rep.g.assign(g.begin(), g.end());
  rep.measure = domain_measure(grid);
  rep.tol = cfg.tol;
  rep.tol.limit = cfg.tol.limit > 0.0 ? cfg.tol.limit : default_limit_tol(grid, f, p_list.back());

  std::optional<ScalarField> warm;
  for (double p : p_list) {
    SolveConfig sc = cfg.solve;
    if (cfg.warm_start && warm) sc.warm_start = warm;
    SolveReport sr = solve_p_poisson(grid, p, f, g, sc);
    SweepEntry e;
    e.p = p;
    e.E_p = sr.E_p;
    e.N_p = std::pow(sr.E_p / rep.measure, (p - 1.0) / p);
    e.identities = ep_identities(grid, sr, f);
    e.iterations = sr.iterations;
    e.runtime_s = sr.runtime_s;
    const HorizontalField xu = x_gradient(grid, sr.u);
    for (double q : cfg.lq_exponents) e.lq.push_back(lp_norm(grid, xu, q));
    e.u = std::move(sr.u);
    warm = e.u;
    rep.entries.push_back(std::move(e));
  }

  if (rep.mode == SweepMode::kNonHomogeneous && f_positive) {
    rep.candidate = LimitCandidate::kEikonal;
    rep.limit = solve_eikonal(grid, Source::boundary(), cfg.eikonal).d;
  } else {
    rep.candidate = LimitCandidate::kLargestP;
    rep.limit = rep.entries.back().u;
  }
  for (SweepEntry& e : rep.entries) {
    double s = 0.0;
    for (Index k = 0; k < grid.size(); ++k) s = std::max(s, std::abs(e.u[k] - rep.limit[k]));
    e.sup_gap = s;
  }
  if (rep.mode == SweepMode::kNonHomogeneous) {
    rep.monotonicity_violations = detail::monotonicity_violations(rep.entries, rep.tol.mono_rel);
  }
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rep;
}

// ---------------------------------------------------------------------------

struct MonotonicityVerdict {
  bool pass = true;
  double tol_rel = 0.0;
  std::vector<double> N_p;
  std::vector<MonotonicityViolation> violations;
};

inline MonotonicityVerdict monotonicity_check(const SweepReport& rep) {
  if (rep.mode != SweepMode::kNonHomogeneous) {
    throw ParameterError("monotonicity_check: needs a non-homogeneous sweep");
  }
  MonotonicityVerdict v;
  v.tol_rel = rep.tol.mono_rel;
  for (const SweepEntry& e : rep.entries) v.N_p.push_back(e.N_p);
  v.violations = detail::monotonicity_violations(rep.entries, rep.tol.mono_rel);
  v.pass = v.violations.empty();
  return v;
}

struct LimitComparison {
  std::vector<double> sup_gaps;  // per p
  bool gaps_decreasing = false;  // strictly
  double einf_gap = 0.0;         // |E_{p_max} - int f target|
  double min_u = 0.0;            // min over all p and nodes of u_p
  double max_excess = 0.0;       // max over nodes of u_{p_max} - target
  Index worst_excess_node = -1;
  double tol_limit = 0.0;
  double tol_lower = 0.0;
  bool bounds_hold = true;       // -tol_lower <= u_p and u_{p_max} <= target + tol_limit
};

// The two-sided bound 0 <= u_p, u_{p_max} <= target is only meaningful for
// non-homogeneous sweeps with a distance-like target.
inline LimitComparison limit_compare(const Grid& grid, const SweepReport& rep,
                                     std::span<const double> target) {
  detail::check_same_grid(grid, rep, "limit_compare");
  detail::check_field(grid, target, "limit_compare: target");
  LimitComparison out;
  out.tol_limit = rep.tol.limit;
  out.tol_lower = 1e-6;
  out.min_u = std::numeric_limits<double>::infinity();
  for (const SweepEntry& e : rep.entries) {
    double s = 0.0;
    for (Index k = 0; k < grid.size(); ++k) {
      s = std::max(s, std::abs(e.u[k] - target[k]));
      out.min_u = std::min(out.min_u, e.u[k]);
    }
    out.sup_gaps.push_back(s);
  }
  out.gaps_decreasing = true;
  for (std::size_t k = 1; k < out.sup_gaps.size(); ++k) {
    if (!(out.sup_gaps[k] < out.sup_gaps[k - 1])) out.gaps_decreasing = false;
  }
  const ScalarField& top = rep.last().u;
  out.max_excess = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < grid.size(); ++k) {
    if (top[k] - target[k] > out.max_excess) {
      out.max_excess = top[k] - target[k];
      out.worst_excess_node = k;
    }
  }
  out.einf_gap = std::abs(rep.last().E_p - detail::linear_term(grid, rep.f, target));
  out.bounds_hold = out.min_u >= -out.tol_lower && out.max_excess <= out.tol_limit;
  return out;
}

// ---------------------------------------------------------------------------

struct LipschitzVerdict {
  double sup_xu = 0.0;  // sup over interior of |X u_{p_max}|
  double sup_xg = 0.0;  // sup over interior of |X g|
  double margin = 0.0;  // sup_xg - sup_xu
  double tol = 0.0;
  bool sup_ok = false;
  std::vector<double> energy_u;  // int |X u_p|^p per p
  std::vector<double> energy_g;  // int |X g|^p per p
  bool energy_ok = false;
  bool pass = false;
};

inline LipschitzVerdict lipschitz_bound_check(const Grid& grid, const SweepReport& rep) {
  if (rep.mode != SweepMode::kHomogeneous) {
    // A constant g is a legitimate homogeneous problem that p_sweep files
    // as non-homogeneous with f = 0.
    bool f_zero = true;
    for (Index k : grid.interior_nodes()) f_zero = f_zero && rep.f[k] == 0.0;
    if (!f_zero) throw ParameterError("lipschitz_bound_check: needs a homogeneous sweep");
  }
  detail::check_same_grid(grid, rep, "lipschitz_bound_check");
  for (Index k : grid.interior_nodes()) {
    if (!std::isfinite(rep.g[k])) {
      throw ParameterError("lipschitz_bound_check: g is not given on the interior (" +
                           format_point(grid.point(k)) + ")");
    }
  }
  LipschitzVerdict v;
  v.tol = rep.tol.lip;
  v.sup_xu = detail::sup_interior_gradient(grid, rep.last().u);
  v.sup_xg = detail::sup_interior_gradient(grid, rep.g);
  v.margin = v.sup_xg - v.sup_xu;
  v.sup_ok = v.sup_xu <= v.sup_xg + v.tol;
  v.energy_ok = true;
  for (const SweepEntry& e : rep.entries) {
    const double eu = e.E_p;
    const double eg = dirichlet_energy(grid, rep.g, e.p);
    v.energy_u.push_back(eu);
    v.energy_g.push_back(eg);
    if (eu > eg + rep.tol.mono_rel * (1.0 + eg)) v.energy_ok = false;
  }
  v.pass = v.sup_ok && v.energy_ok;
  return v;
}

// ---------------------------------------------------------------------------

struct AmleBoxResult {
  Box box;              // snapped to grid nodes
  double sup_u = 0.0;   // sup over the sub-box interior of |X u_inf|
  double sup_v = 0.0;   // same for the competitor
  double margin = 0.0;  // sup_v + tol - sup_u
  bool pass = false;
};

struct AmleVerdict {
  double p_check = 0.0;
  double tol = 0.0;
  std::vector<AmleBoxResult> boxes;
  bool pass = false;
};

// For each sub-box V the competitor v solves the homogeneous p_check problem
// on V with v = u_inf on the surface of V; the check asserts
// sup_V |X u_inf| <= sup_V |X v| + tol.
inline AmleVerdict amle_spot_check(const Grid& grid, std::span<const double> u_inf,
                                   std::span<const Box> subdomains, double p_check = 32.0,
                                   double tol = 0.05, const SolveConfig& solve = {}) {
  detail::check_field(grid, u_inf, "amle_spot_check: u_inf");
  if (!(p_check >= 32.0)) throw ParameterError("amle_spot_check: p_check must be >= 32");
  const int n = grid.dim();
  struct Job {
    std::vector<Index> lo, hi;
  };
  std::vector<Job> jobs;
  for (const Box& b : subdomains) {
    if (b.dim() != n) throw ParameterError("amle_spot_check: sub-box dimension mismatch");
    Job j{std::vector<Index>(n), std::vector<Index>(n)};
    for (int k = 0; k < n; ++k) {
      const double h = grid.spacing(k), lo = grid.frame().box().lo[k];
      j.lo[k] = static_cast<Index>(std::llround((b.lo[k] - lo) / h));
      j.hi[k] = static_cast<Index>(std::llround((b.hi[k] - lo) / h));
      if (j.lo[k] < 1 || j.hi[k] > grid.resolution()[k] - 2) {
        throw ParameterError("amle_spot_check: sub-box " + format_point(b.lo) + "-" + format_point(b.hi) +
                             " touches the boundary of the domain");
      }
      if (j.hi[k] - j.lo[k] < 2) throw ParameterError("amle_spot_check: sub-box spans fewer than 3 nodes");
    }
    jobs.push_back(std::move(j));
  }

  auto run = [&](const Job& job) {
    const Grid sub = grid.sub_grid(job.lo, job.hi);
    std::vector<Index> coords(n);
    ScalarField g(static_cast<std::size_t>(sub.size()));
    for (Index s = 0; s < sub.size(); ++s) {
      for (int k = 0; k < n; ++k) coords[k] = sub.coordinate(s, k) + job.lo[k];
      g[s] = u_inf[grid.index_of(coords)];
    }
    const SolveReport v = solve_p_poisson(sub, p_check, sub.constant(0.0), g, solve);
    AmleBoxResult r;
    r.box = sub.frame().box();
    r.sup_u = detail::sup_interior_gradient(sub, g);
    r.sup_v = detail::sup_interior_gradient(sub, v.u);
    r.margin = r.sup_v + tol - r.sup_u;
    r.pass = r.margin >= 0.0;
    return r;
  };
  // The restriction g agrees with u_inf on every node of the sub-box, so the
  // centred differences of g at sub-box interior nodes are those of u_inf.
  std::vector<std::future<AmleBoxResult>> futures;
  for (const Job& j : jobs) futures.push_back(std::async(std::launch::async, run, std::cref(j)));
  AmleVerdict out;
  out.p_check = p_check;
  out.tol = tol;
  out.pass = true;
  for (auto& fu : futures) {
    out.boxes.push_back(fu.get());
    out.pass = out.pass && out.boxes.back().pass;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct LimitSystemResiduals {
  ScalarField inf_lap;          // NaN outside inf_mask or where the stencil does not fit
  ScalarField eik;              // |Xu| - 1, NaN outside eik_mask
  std::vector<char> inf_mask;   // interior, f = 0, more than 2 cells from {f > 0}
  std::vector<char> eik_mask;   // interior, f > 0
};

inline LimitSystemResiduals limit_system_residuals(const Grid& grid, std::span<const double> u,
                                                   std::span<const double> f) {
  detail::check_field(grid, u, "limit_system_residuals: u");
  detail::check_field(grid, f, "limit_system_residuals: f");
  const std::size_t total = static_cast<std::size_t>(grid.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  LimitSystemResiduals out;
  out.inf_mask.assign(total, 0);
  out.eik_mask.assign(total, 0);

  // Axis-step distance to the positive set.
  std::vector<int> dist(total, std::numeric_limits<int>::max());
  std::deque<Index> queue;
  for (Index k = 0; k < grid.size(); ++k) {
    if (f[k] > 0.0) {
      dist[k] = 0;
      queue.push_back(k);
    }
  }
  while (!queue.empty()) {
    const Index k = queue.front();
    queue.pop_front();
    for (int i = 0; i < grid.dim(); ++i) {
      for (int dir : {-1, 1}) {
        const Index nb = grid.neighbor(k, i, dir);
        if (nb >= 0 && dist[nb] > dist[k] + 1) {
          dist[nb] = dist[k] + 1;
          queue.push_back(nb);
        }
      }
    }
  }
  for (Index k : grid.interior_nodes()) {
    if (f[k] > 0.0) out.eik_mask[k] = 1;
    if (dist[k] > 2) out.inf_mask[k] = 1;
  }
  out.inf_lap = infinity_laplacian(grid, u);
  out.eik = eikonal_residual(grid, u);
  for (std::size_t k = 0; k < total; ++k) {
    if (!out.inf_mask[k]) out.inf_lap[k] = nan;
    if (!out.eik_mask[k]) out.eik[k] = nan;
  }
  return out;
}

}  // namespace cclab
