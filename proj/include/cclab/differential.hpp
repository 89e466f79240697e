// X-differential L = Xu(x) C~(x) and the first-order remainder profile
// |u(y) - u(x) - L(y - x)| / d(x, y) over sub-Riemannian annuli.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cclab/eikonal.hpp"
#include "cclab/errors.hpp"
#include "cclab/frames.hpp"
#include "cclab/grid.hpp"

namespace cclab {

struct XDifferential {
  Point x;
  Index node = -1;
  Eigen::RowVectorXd L;       // length n
  Eigen::RowVectorXd xu;      // length m
  Eigen::MatrixXd c_tilde;    // m x n

  double apply(std::span<const double> z) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < L.size(); ++i) s += L[i] * z[static_cast<std::size_t>(i)];
    return s;
  }
};

inline XDifferential x_differential(const Grid& grid, std::span<const double> u, Index node) {
  if (u.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError("x_differential: field size does not match the grid");
  }
  if (node < 0 || node >= grid.size()) throw ParameterError("x_differential: node out of range");
  if (!grid.is_interior(node)) {
    throw StencilError("x_differential: node " + format_point(grid.point(node)) + " is not interior");
  }
  XDifferential out;
  out.x = grid.point(node);
  out.node = node;
  out.c_tilde = left_inverse(grid.frame(), out.x);
  std::vector<double> g(static_cast<std::size_t>(grid.m()));
  x_gradient_at(grid, u, node, g);
  out.xu = Eigen::Map<const Eigen::RowVectorXd>(g.data(), grid.m());
  out.L = out.xu * out.c_tilde;
  return out;
}

enum class RemainderStatus { kOk, kFloorReached, kEmpty };

inline const char* to_string(RemainderStatus s) {
  switch (s) {
    case RemainderStatus::kOk: return "ok";
    case RemainderStatus::kFloorReached: return "floor_reached";
    case RemainderStatus::kEmpty: return "empty";
  }
  return "?";
}

struct RemainderSample {
  double r = 0.0;
  double worst_ratio = 0.0;  // NaN when the annulus holds no nodes
  double floor = 0.0;        // 3 h / r
  RemainderStatus status = RemainderStatus::kEmpty;
  std::size_t count = 0;
  Index worst_node = -1;
  std::string note;
};

struct RemainderProfile {
  XDifferential differential;
  std::vector<RemainderSample> samples;
  // Least-squares slope of log worst_ratio against log r. Empty samples and
  // samples where the expansion is exact to roundoff (ratio <= 1e-12) are left
  // out; NaN with fewer than two remaining samples.
  double log_slope = std::numeric_limits<double>::quiet_NaN();
  // worst_ratio strictly decreases from each radius to the next smaller one.
  bool decreasing = false;

  void write_csv(std::ostream& os) const {
    os << "r,worst_ratio,status\n";
    os.precision(17);
    for (const RemainderSample& s : samples) os << s.r << ',' << s.worst_ratio << ',' << to_string(s.status) << '\n';
  }
};

// `distance` must be the point-source field for `node` on the same grid.
inline RemainderProfile remainder_profile(const Grid& grid, std::span<const double> u, Index node,
                                          std::span<const double> radii, const DistanceField& distance) {
  if (radii.empty()) throw ParameterError("remainder_profile: no radii");
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (!(radii[k] > 0.0) || !std::isfinite(radii[k])) {
      throw ParameterError("remainder_profile: radii must be positive and finite");
    }
    if (k > 0 && !(radii[k] < radii[k - 1])) {
      throw ParameterError("remainder_profile: radii must be strictly decreasing");
    }
  }
  if (distance.d.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError("remainder_profile: distance field does not match the grid");
  }
  RemainderProfile out;
  out.differential = x_differential(grid, u, node);
  const XDifferential& L = out.differential;
  const int n = grid.dim();
  const double h = grid.max_spacing();
  std::vector<double> z(static_cast<std::size_t>(n));

  for (double r : radii) {
    RemainderSample s;
    s.r = r;
    s.floor = 3.0 * h / r;
    double worst = -1.0;
    for (Index k = 0; k < grid.size(); ++k) {
      const double d = distance.d[k];
      if (!(d >= r && d <= 2.0 * r)) continue;
      const Point y = grid.point(k);
      for (int i = 0; i < n; ++i) z[i] = y[i] - L.x[i];
      const double ratio = std::abs(u[k] - u[node] - L.apply(z)) / d;
      ++s.count;
      if (ratio > worst) {
        worst = ratio;
        s.worst_node = k;
      }
    }
    if (s.count == 0) {
      s.worst_ratio = std::numeric_limits<double>::quiet_NaN();
      s.status = RemainderStatus::kEmpty;
      s.note = "no nodes with d in [" + std::to_string(r) + ", " + std::to_string(2.0 * r) + "]; skipped";
    } else {
      s.worst_ratio = worst;
      s.status = worst < s.floor ? RemainderStatus::kFloorReached : RemainderStatus::kOk;
    }
    out.samples.push_back(std::move(s));
  }

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int used = 0;
  for (const RemainderSample& s : out.samples) {
    if (s.status == RemainderStatus::kEmpty || !(s.worst_ratio > 1e-12)) continue;
    const double lx = std::log(s.r), ly = std::log(s.worst_ratio);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++used;
  }
  if (used >= 2) {
    const double den = used * sxx - sx * sx;
    if (den > 0.0) out.log_slope = (used * sxy - sx * sy) / den;
  }
  out.decreasing = true;
  const RemainderSample* prev = nullptr;
  for (const RemainderSample& s : out.samples) {
    if (s.status == RemainderStatus::kEmpty) continue;
    if (prev && !(s.worst_ratio < prev->worst_ratio)) out.decreasing = false;
    prev = &s;
  }
  if (!prev) out.decreasing = false;
  return out;
}

inline RemainderProfile remainder_profile(const Grid& grid, std::span<const double> u, Index node,
                                          std::span<const double> radii) {
  return remainder_profile(grid, u, node, radii, solve_eikonal(grid, Source::node_set({node})));
}

}  // namespace cclab
