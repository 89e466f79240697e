// Carnot-Caratheodory distance fields.
//
// solve_eikonal: Lax-Friedrichs fast sweeping for |C(x) grad u| = 1 with
// u = 0 on a source set. graph_distance: Dijkstra over the graph whose edges
// follow horizontal control curves, an independent estimate used for
// cross-validation and for seeding point sources.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cclab/errors.hpp"
#include "cclab/grid.hpp"

namespace cclab {

struct Source {
  enum class Kind { kBoundary, kPoint, kNodes };
  Kind kind = Kind::kBoundary;
  Point point;               // kPoint: snapped to the nearest node
  std::vector<Index> nodes;  // kNodes

  static Source boundary() { return {}; }
  static Source at(Point p) { return {Kind::kPoint, std::move(p), {}}; }
  static Source node_set(std::vector<Index> nodes) { return {Kind::kNodes, {}, std::move(nodes)}; }
};

struct DistanceField {
  ScalarField d;
  Source source;
  std::vector<char> source_mask;  // 1 on nodes held at zero
  std::vector<char> fixed_mask;   // source plus seeded neighbourhood
  std::vector<char> reachable;    // 0 where d never dropped below the initial bound
  int sweeps = 0;
  double last_update = 0.0;
  std::vector<double> update_trace;  // sup-update per sweep
};

struct EikonalConfig {
  enum class Viscosity { kLocal, kBox };
  double tol = 1e-8;
  int max_sweeps = 10000;
  bool seed_point_sources = true;
  // kBox freezes sigma_i = max_x sum_j |c_{j,i}(x)|; kLocal uses the column
  // norm of C at the node being updated, which also bounds |dH/dp_i| there.
  Viscosity viscosity = Viscosity::kLocal;
  // Also take the semi-Lagrangian control step as a candidate.
  bool control_candidate = true;
  // Solve on the nested grid with (res - 1) * refine + 1 nodes per axis and
  // restrict to the input grid.
  int refine = 1;
};

namespace detail {

// sigma_i = max over grid nodes of sum_j |c_{j,i}(x)|.
inline std::vector<double> lf_viscosity(const Grid& grid) {
  const int n = grid.dim();
  const int m = grid.m();
  std::vector<double> sigma(n, 0.0);
  for (Index k = 0; k < grid.size(); ++k) {
    const std::span<const double> c = grid.coeff(k);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += std::abs(c[j * n + i]);
      sigma[i] = std::max(sigma[i], s);
    }
  }
  for (double& s : sigma) s = std::max(s, 1e-12);
  return sigma;
}

inline double initial_bound(const Grid& grid) { return 100.0 * grid.frame().box().diameter(); }

}  // namespace detail

// Upper-bound-flavoured CC distance by Dijkstra: edges integrate
// gamma' = C(gamma)^T a for time `step` with one RK4 step per edge and snap
// to the nearest node; every edge costs `step`.
struct ControlGraphConfig {
  std::vector<Eigen::VectorXd> controls;  // empty: 2m axis + 2m(m-1) diagonal unit controls
  double step = 0.0;                      // 0: min grid spacing
  int substeps = 1;
  // Charge tau * |snapped displacement| / |true displacement| instead of tau,
  // removing the systematic bias of snapping short diagonal moves.
  bool stretch_weights = false;
};

inline std::vector<Eigen::VectorXd> default_controls(int m) {
  std::vector<Eigen::VectorXd> out;
  for (int j = 0; j < m; ++j) {
    for (double s : {1.0, -1.0}) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
      a[j] = s;
      out.push_back(a);
    }
  }
  const double r = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      for (double si : {1.0, -1.0}) {
        for (double sj : {1.0, -1.0}) {
          Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
          a[i] = si * r;
          a[j] = sj * r;
          out.push_back(a);
        }
      }
    }
  }
  return out;
}

namespace detail {

// One horizontal control flow gamma' = C(gamma)^T a over time `tau`, RK4.
class ControlFlow {
 public:
  explicit ControlFlow(const Frame& frame)
      : frame_(frame), n_(frame.n()), m_(frame.m()), k1_(n_), k2_(n_), k3_(n_), k4_(n_),
        tmp_(n_), c_(static_cast<std::size_t>(n_ * m_)) {}

  void advance(std::vector<double>& y, const Eigen::VectorXd& a, double tau, int substeps) {
    const double dt = tau / substeps;
    for (int s = 0; s < substeps; ++s) {
      velocity(y, a, k1_);
      for (int i = 0; i < n_; ++i) tmp_[i] = y[i] + 0.5 * dt * k1_[i];
      velocity(tmp_, a, k2_);
      for (int i = 0; i < n_; ++i) tmp_[i] = y[i] + 0.5 * dt * k2_[i];
      velocity(tmp_, a, k3_);
      for (int i = 0; i < n_; ++i) tmp_[i] = y[i] + dt * k3_[i];
      velocity(tmp_, a, k4_);
      for (int i = 0; i < n_; ++i) {
        y[i] += dt / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
      }
    }
  }

 private:
  void velocity(std::span<const double> at, const Eigen::VectorXd& a, std::vector<double>& v) {
    frame_.coeff_raw(at, c_);
    for (int i = 0; i < n_; ++i) {
      double s = 0.0;
      for (int j = 0; j < m_; ++j) s += c_[j * n_ + i] * a[j];
      v[i] = s;
    }
  }

  const Frame& frame_;
  int n_, m_;
  std::vector<double> k1_, k2_, k3_, k4_, tmp_, c_;
};

inline std::vector<Index> source_nodes(const Grid& grid, const Source& src) {
  std::vector<Index> out;
  switch (src.kind) {
    case Source::Kind::kBoundary:
      for (Index k = 0; k < grid.size(); ++k) {
        if (grid.is_boundary(k)) out.push_back(k);
      }
      break;
    case Source::Kind::kPoint:
      if (static_cast<int>(src.point.size()) != grid.dim() ||
          !grid.frame().box().contains(src.point)) {
        throw ParameterError("source point " + format_point(src.point) + " outside the grid");
      }
      out.push_back(grid.nearest_node(src.point));
      break;
    case Source::Kind::kNodes:
      for (Index k : src.nodes) {
        if (k < 0 || k >= grid.size()) throw ParameterError("source node outside the grid");
        out.push_back(k);
      }
      break;
  }
  if (out.empty()) throw ParameterError("empty source set");
  return out;
}

}  // namespace detail

inline DistanceField graph_distance(const Grid& grid, const Source& source,
                                    const ControlGraphConfig& cfg = {}) {
  const int n = grid.dim();
  const int m = grid.m();
  const std::vector<Eigen::VectorXd> controls =
      cfg.controls.empty() ? default_controls(m) : cfg.controls;
  for (const Eigen::VectorXd& a : controls) {
    if (a.size() != m) throw ParameterError("graph_distance: control has wrong length");
  }
  const double tau = cfg.step > 0.0 ? cfg.step : grid.min_spacing();
  const int sub = std::max(1, cfg.substeps);
  const Frame& frame = grid.frame();

  DistanceField out;
  out.source = source;
  const std::vector<Index> src = detail::source_nodes(grid, source);
  const double inf = std::numeric_limits<double>::infinity();
  out.d.assign(static_cast<std::size_t>(grid.size()), inf);
  out.source_mask.assign(static_cast<std::size_t>(grid.size()), 0);
  using Item = std::pair<double, Index>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (Index k : src) {
    out.d[k] = 0.0;
    out.source_mask[k] = 1;
    heap.emplace(0.0, k);
  }
  std::vector<double> x(n), y(n);
  detail::ControlFlow flow(frame);
  std::vector<char> done(static_cast<std::size_t>(grid.size()), 0);
  while (!heap.empty()) {
    const auto [dist, k] = heap.top();
    heap.pop();
    if (done[k]) continue;
    done[k] = 1;
    grid.point_into(k, x);
    for (const Eigen::VectorXd& a : controls) {
      y = x;
      flow.advance(y, a, tau, sub);
      if (!frame.box().contains(y)) continue;
      const Index nb = grid.nearest_node(y);
      if (nb == k || done[nb]) continue;
      double cost = tau;
      if (cfg.stretch_weights) {
        double moved = 0.0, snapped = 0.0;
        for (int i = 0; i < n; ++i) {
          moved += (y[i] - x[i]) * (y[i] - x[i]);
          const double s = grid.coordinate(nb, i) * grid.spacing(i) + frame.box().lo[i] - x[i];
          snapped += s * s;
        }
        if (moved < 1e-28) continue;
        cost = tau * std::sqrt(snapped / moved);
      }
      const double cand = dist + cost;
      if (cand < out.d[nb]) {
        out.d[nb] = cand;
        heap.emplace(cand, nb);
      }
    }
  }
  out.reachable.assign(static_cast<std::size_t>(grid.size()), 1);
  for (Index k = 0; k < grid.size(); ++k) {
    if (!std::isfinite(out.d[k])) out.reachable[k] = 0;
  }
  out.fixed_mask = out.source_mask;
  return out;
}

namespace detail {

// Exact-as-possible distances on the 3^n neighbourhood of a point source,
// from a control graph on a locally refined grid.
inline std::vector<std::pair<Index, double>> seed_point_source(const Grid& grid, Index centre) {
  constexpr int kRefine = 8;
  constexpr int kHalfWidth = 2;  // cells of the coarse grid on each side
  const int n = grid.dim();
  const Point c = grid.point(centre);
  Box local;
  std::vector<int> res(n);
  for (int k = 0; k < n; ++k) {
    const double h = grid.spacing(k);
    const double lo = std::max(grid.frame().box().lo[k], c[k] - kHalfWidth * h);
    const double hi = std::min(grid.frame().box().hi[k], c[k] + kHalfWidth * h);
    local.lo.push_back(lo);
    local.hi.push_back(hi);
    res[k] = static_cast<int>(std::lround((hi - lo) / h)) * kRefine + 1;
  }
  const Grid fine(grid.frame().with_box(local), res);
  ControlGraphConfig gcfg;
  gcfg.stretch_weights = true;
  const DistanceField local_d = graph_distance(fine, Source::at(c), gcfg);
  std::vector<std::pair<Index, double>> out;
  std::vector<Index> coords(n);
  const int total = [&] {
    int t = 1;
    for (int k = 0; k < n; ++k) t *= 3;
    return t;
  }();
  for (int code = 0; code < total; ++code) {
    int rest = code;
    bool ok = true;
    for (int k = 0; k < n; ++k) {
      const int off = rest % 3 - 1;
      rest /= 3;
      coords[k] = grid.coordinate(centre, k) + off;
      if (coords[k] < 0 || coords[k] >= grid.resolution()[k]) ok = false;
    }
    if (!ok) continue;
    const Index node = grid.index_of(coords);
    const double v = local_d.d[fine.nearest_node(grid.point(node))];
    if (std::isfinite(v)) out.emplace_back(node, node == centre ? 0.0 : v);
  }
  return out;
}

}  // namespace detail

namespace detail {

// Semi-Lagrangian candidate tau + min_a u(x + flow_a(tau)), with the endpoint
// value multilinearly interpolated. Endpoints are precomputed per node.
class ControlStencil {
 public:
  ControlStencil(const Grid& grid, std::span<const char> skip)
      : grid_(grid), n_(grid.dim()), tau_(grid.min_spacing()) {
    const std::vector<Eigen::VectorXd> controls = default_controls(grid.m());
    ControlFlow flow(grid.frame());
    offset_.assign(static_cast<std::size_t>(grid.size()) + 1, 0);
    std::vector<double> x(n_), y(n_);
    for (Index k = 0; k < grid.size(); ++k) {
      offset_[k + 1] = offset_[k];
      if (skip[k]) continue;
      grid.point_into(k, x);
      for (const Eigen::VectorXd& a : controls) {
        y = x;
        flow.advance(y, a, tau_, 1);
        if (!grid.frame().box().contains(y)) continue;
        Index base = 0;
        for (int i = 0; i < n_; ++i) {
          const double t = (y[i] - grid.frame().box().lo[i]) / grid.spacing(i);
          Index c = std::clamp<Index>(static_cast<Index>(std::floor(t)), 0, grid.resolution()[i] - 2);
          base += c * grid.stride(i);
          frac_.push_back(static_cast<float>(std::clamp(t - static_cast<double>(c), 0.0, 1.0)));
        }
        base_.push_back(base);
        ++offset_[k + 1];
      }
    }
  }

  // Candidate at node k given the current field; infinity without endpoints.
  // Weight on u[k] itself is moved to the left-hand side.
  double candidate(Index k, std::span<const double> u) const {
    double best = std::numeric_limits<double>::infinity();
    const int corners = 1 << n_;
    for (Index e = offset_[k]; e < offset_[k + 1]; ++e) {
      const float* f = &frac_[static_cast<std::size_t>(e) * n_];
      double rest = 0.0, self = 0.0;
      for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        Index idx = base_[e];
        for (int i = 0; i < n_; ++i) {
          if ((c >> i) & 1) {
            w *= f[i];
            idx += grid_.stride(i);
          } else {
            w *= 1.0 - f[i];
          }
        }
        if (w == 0.0) continue;
        if (idx == k) {
          self += w;
        } else {
          rest += w * u[idx];
        }
      }
      if (self > 1.0 - 1e-12) continue;
      best = std::min(best, (tau_ + rest) / (1.0 - self));
    }
    return best;
  }

 private:
  const Grid& grid_;
  int n_;
  double tau_;
  std::vector<Index> offset_;
  std::vector<Index> base_;
  std::vector<float> frac_;
};

}  // namespace detail

inline DistanceField solve_eikonal(const Grid& grid, const Source& source,
                                   const EikonalConfig& cfg = {});

namespace detail {

inline DistanceField solve_eikonal_refined(const Grid& grid, const Source& source,
                                           const EikonalConfig& cfg) {
  const int n = grid.dim();
  const int r = cfg.refine;
  std::vector<int> fine_res(n);
  for (int k = 0; k < n; ++k) fine_res[k] = (grid.resolution()[k] - 1) * r + 1;
  const Grid fine(grid.frame(), fine_res, grid.predicate());
  std::vector<Index> coords(n);
  auto lift = [&](Index k) {
    for (int i = 0; i < n; ++i) coords[i] = grid.coordinate(k, i) * r;
    return fine.index_of(coords);
  };
  Source fine_source = source;
  if (source.kind == Source::Kind::kNodes) {
    fine_source.nodes.clear();
    for (Index k : source.nodes) fine_source.nodes.push_back(lift(k));
  } else if (source.kind == Source::Kind::kPoint) {
    fine_source.point = grid.point(grid.nearest_node(source.point));
  }
  EikonalConfig fine_cfg = cfg;
  fine_cfg.refine = 1;
  const DistanceField f = solve_eikonal(fine, fine_source, fine_cfg);
  DistanceField out;
  out.source = source;
  out.sweeps = f.sweeps;
  out.last_update = f.last_update;
  out.update_trace = f.update_trace;
  const std::size_t total = static_cast<std::size_t>(grid.size());
  out.d.resize(total);
  out.source_mask.resize(total);
  out.fixed_mask.resize(total);
  out.reachable.resize(total);
  for (Index k = 0; k < grid.size(); ++k) {
    const Index fk = lift(k);
    out.d[k] = f.d[fk];
    out.source_mask[k] = f.source_mask[fk];
    out.fixed_mask[k] = f.fixed_mask[fk];
    out.reachable[k] = f.reachable[fk];
  }
  return out;
}

}  // namespace detail

// Lax-Friedrichs sweeping for |C(x) grad u| - 1 = 0, u = 0 on the source.
// Updates are u <- min(u, candidate), so iterates decrease monotonically.
inline DistanceField solve_eikonal(const Grid& grid, const Source& source,
                                   const EikonalConfig& cfg) {
  if (cfg.refine < 1) throw ParameterError("solve_eikonal: refine must be >= 1");
  if (cfg.refine > 1) return detail::solve_eikonal_refined(grid, source, cfg);
  const int n = grid.dim();
  const int m = grid.m();
  const std::vector<double> sigma = detail::lf_viscosity(grid);
  const double big = detail::initial_bound(grid);

  DistanceField out;
  out.source = source;
  out.d.assign(static_cast<std::size_t>(grid.size()), big);
  out.source_mask.assign(static_cast<std::size_t>(grid.size()), 0);
  out.fixed_mask.assign(static_cast<std::size_t>(grid.size()), 0);
  for (Index k : detail::source_nodes(grid, source)) {
    out.d[k] = 0.0;
    out.source_mask[k] = 1;
    out.fixed_mask[k] = 1;
  }
  if (source.kind == Source::Kind::kPoint && cfg.seed_point_sources) {
    const Index centre = grid.nearest_node(source.point);
    for (const auto& [node, v] : detail::seed_point_source(grid, centre)) {
      out.d[node] = v;
      out.fixed_mask[node] = 1;
    }
  }

  std::optional<detail::ControlStencil> control;
  if (cfg.control_candidate) control.emplace(grid, out.fixed_mask);

  double denom_box = 0.0;
  for (int i = 0; i < n; ++i) denom_box += sigma[i] / grid.spacing(i);
  std::vector<double> q(n), sig(sigma);

  auto update_node = [&](Index k) -> double {
    // Box-face nodes: one-sided extrapolation along each missing axis.
    bool face = false;
    double extrap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const Index p = grid.neighbor(k, i, +1);
      const Index r = grid.neighbor(k, i, -1);
      if (p >= 0 && r >= 0) continue;
      face = true;
      const Index in1 = p >= 0 ? p : r;
      const Index in2 = grid.neighbor(in1, i, p >= 0 ? +1 : -1);
      const double u1 = out.d[in1];
      const double u2 = in2 >= 0 ? out.d[in2] : u1;
      extrap = std::min(extrap, std::max(2.0 * u1 - u2, u2));
    }
    if (face) return extrap;
    const std::span<const double> c = grid.coeff(k);
    double denom = denom_box;
    if (cfg.viscosity == EikonalConfig::Viscosity::kLocal) {
      denom = 0.0;
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += c[j * n + i] * c[j * n + i];
        sig[i] = std::max(std::sqrt(s), 1e-3 * sigma[i]);
        denom += sig[i] / grid.spacing(i);
      }
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double up = out.d[k + grid.stride(i)];
      const double um = out.d[k - grid.stride(i)];
      q[i] = (up - um) / (2.0 * grid.spacing(i));
      acc += sig[i] * (up + um) / (2.0 * grid.spacing(i));
    }
    double h2 = 0.0;
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += c[j * n + i] * q[i];
      h2 += s * s;
    }
    const double lf = (1.0 - std::sqrt(h2) + acc) / denom;
    return control ? std::min(lf, control->candidate(k, out.d)) : lf;
  };

  std::vector<Index> coords(n);
  const Index total = grid.size();
  const int orderings = 1 << n;
  int quiet = 0;
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    const int ord = sweep % orderings;
    double change = 0.0;
    for (Index c = 0; c < total; ++c) {
      Index rest = c;
      Index idx = 0;
      for (int k = n - 1; k >= 0; --k) {
        const Index len = grid.resolution()[k];
        Index coord = rest % len;
        rest /= len;
        if ((ord >> k) & 1) coord = len - 1 - coord;
        idx += coord * grid.stride(k);
      }
      if (out.fixed_mask[idx]) continue;
      const double cand = update_node(idx);
      if (cand < out.d[idx]) {
        change = std::max(change, out.d[idx] - cand);
        out.d[idx] = cand;
      }
    }
    out.sweeps = sweep + 1;
    out.last_update = change;
    out.update_trace.push_back(change);
    quiet = change < cfg.tol ? quiet + 1 : 0;
    if (quiet >= orderings) break;
  }
  if (quiet < orderings) {
    throw ConvergenceError("solve_eikonal: no convergence after " + std::to_string(out.sweeps) +
                               " sweeps (last update " + std::to_string(out.last_update) + ")",
                           out.update_trace);
  }
  out.reachable.assign(static_cast<std::size_t>(grid.size()), 1);
  for (Index k = 0; k < grid.size(); ++k) {
    if (out.d[k] > 0.5 * big) out.reachable[k] = 0;
  }
  return out;
}

// Nodes where the distance has a concave kink along some axis: the one-sided
// slopes drop by more than `jump` across the node, or the two best upwind
// neighbours lie on opposite sides of one axis within 2h of each other.
inline std::vector<char> ridge_mask(const Grid& grid, std::span<const double> d, double jump = 0.2) {
  const int n = grid.dim();
  std::vector<char> mask(static_cast<std::size_t>(grid.size()), 0);
  for (Index k = 0; k < grid.size(); ++k) {
    for (int i = 0; i < n && !mask[k]; ++i) {
      const Index p = grid.neighbor(k, i, +1);
      const Index r = grid.neighbor(k, i, -1);
      if (p < 0 || r < 0) continue;
      const double h = grid.spacing(i);
      const double back = (d[k] - d[r]) / h;
      const double fwd = (d[p] - d[k]) / h;
      const bool kink = back - fwd > jump;
      // Equal neighbours along a level direction are not upwind.
      const double drop = 0.05 * h;
      const bool opposed = d[r] < d[k] - drop && d[p] < d[k] - drop && std::abs(d[p] - d[r]) < 2.0 * h;
      if (kink || opposed) mask[k] = 1;
    }
  }
  return mask;
}

struct EikonalResidual {
  ScalarField residual;       // |X d| - 1 (centered), zero where not evaluated
  std::vector<char> checked;  // interior, >= 2 cells from source and boundary, off ridge
  std::vector<char> ridge;
  double sup = 0.0;           // sup over checked nodes of the absolute residual
  double l1 = 0.0;            // sum over checked nodes of |residual| * cell volume
  std::size_t checked_count = 0;
  std::size_t ridge_count = 0;
};

inline EikonalResidual eikonal_residual_check(const Grid& grid, const DistanceField& field,
                                              double jump = 0.2) {
  EikonalResidual out;
  out.ridge = ridge_mask(grid, field.d, jump);
  out.residual.assign(static_cast<std::size_t>(grid.size()), 0.0);
  out.checked.assign(static_cast<std::size_t>(grid.size()), 0);
  // Distance (axis steps) to the source set, to keep the check clear of it.
  std::vector<int> src_depth(static_cast<std::size_t>(grid.size()), std::numeric_limits<int>::max());
  std::vector<Index> queue;
  for (Index k = 0; k < grid.size(); ++k) {
    if (field.source_mask[k]) {
      src_depth[k] = 0;
      queue.push_back(k);
    }
  }
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const Index k = queue[head];
    for (int i = 0; i < grid.dim(); ++i) {
      for (int dir : {-1, 1}) {
        const Index nb = grid.neighbor(k, i, dir);
        if (nb >= 0 && src_depth[nb] > src_depth[k] + 1) {
          src_depth[nb] = src_depth[k] + 1;
          queue.push_back(nb);
        }
      }
    }
  }
  std::vector<double> g(grid.m());
  for (Index k : grid.interior_nodes()) {
    if (grid.depth(k) < 2 || src_depth[k] < 2) continue;
    if (out.ridge[k]) {
      ++out.ridge_count;
      continue;
    }
    x_gradient_at(grid, field.d, k, g);
    double s = 0.0;
    for (double v : g) s += v * v;
    out.residual[k] = std::sqrt(s) - 1.0;
    out.checked[k] = 1;
    ++out.checked_count;
    out.sup = std::max(out.sup, std::abs(out.residual[k]));
    out.l1 += std::abs(out.residual[k]) * grid.cell_volume();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric equivalence: fit d ~ c |x - y|^{1/r}.

struct DistancePair {
  Point a;
  Point b;
  double d = 0.0;
};

struct MetricFit {
  double c_lower = 0.0;  // largest c with d >= c |x - y| over the sample
  double c_upper = 0.0;  // smallest C with d <= C |x - y|^{1/r}
  double r_fit = 0.0;
  double slope = 0.0;    // 1/r
  std::size_t pairs = 0;
};

inline MetricFit metric_equivalence_probe(std::span<const DistancePair> pairs,
                                          std::size_t min_pairs = 50) {
  if (pairs.size() < min_pairs) {
    throw ParameterError("metric_equivalence_probe: need at least " + std::to_string(min_pairs) +
                         " pairs, got " + std::to_string(pairs.size()));
  }
  std::vector<double> lx, ly, eu;
  for (const DistancePair& pr : pairs) {
    double s = 0.0;
    for (std::size_t k = 0; k < pr.a.size(); ++k) s += (pr.a[k] - pr.b[k]) * (pr.a[k] - pr.b[k]);
    const double e = std::sqrt(s);
    if (!(e > 0.0) || !(pr.d > 0.0) || !std::isfinite(pr.d)) {
      throw ParameterError("metric_equivalence_probe: pairs need distinct points and finite d > 0");
    }
    eu.push_back(e);
    lx.push_back(std::log(e));
    ly.push_back(std::log(pr.d));
  }
  const double nn = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / nn;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / nn;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxx += (lx[k] - mx) * (lx[k] - mx);
    sxy += (lx[k] - mx) * (ly[k] - my);
  }
  if (!(sxx > 1e-12 * nn)) throw ParameterError("metric_equivalence_probe: all pairs have the same separation");
  MetricFit fit;
  fit.pairs = pairs.size();
  fit.slope = sxy / sxx;
  fit.r_fit = 1.0 / fit.slope;
  fit.c_lower = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < lx.size(); ++k) {
    fit.c_lower = std::min(fit.c_lower, pairs[k].d / eu[k]);
    fit.c_upper = std::max(fit.c_upper, pairs[k].d / std::pow(eu[k], fit.slope));
  }
  return fit;
}

}  // namespace cclab
