// Grid operators of the p-Poisson, infinity-Laplace and eikonal equations, and
// a pointwise viscosity probe with sampled quadratic test functions.
#pragma once

#include <Eigen/Dense>
#include <boost/random/sobol.hpp>
#include <boost/random/uniform_01.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cclab/errors.hpp"
#include "cclab/frames.hpp"
#include "cclab/grid.hpp"

namespace cclab {

// Operator fields hold NaN on nodes closer than two cells to the boundary.
inline double finite_sup_abs(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) {
    if (std::isfinite(x)) s = std::max(s, std::abs(x));
  }
  return s;
}

namespace detail {

template <class Fn>
ScalarField second_order_field(const Grid& grid, std::span<const double> u, Fn&& fn) {
  if (u.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError("operator: field size does not match the grid");
  }
  ScalarField out(static_cast<std::size_t>(grid.size()), std::numeric_limits<double>::quiet_NaN());
  const HorizontalField xu = x_gradient(grid, u);
  const int m = grid.m();
  Eigen::VectorXd g(m);
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.depth(k) < 2) continue;
    for (int j = 0; j < m; ++j) g[j] = xu(k, j);
    out[k] = fn(k, g, x_hessian_at(grid, xu, k));
  }
  return out;
}

}  // namespace detail

inline ScalarField infinity_laplacian(const Grid& grid, std::span<const double> u) {
  return detail::second_order_field(grid, u, [](Index, const Eigen::VectorXd& g, const Eigen::MatrixXd& hx) {
    return g.dot(hx * g);
  });
}

inline ScalarField x_laplacian(const Grid& grid, std::span<const double> u) {
  const Frame& frame = grid.frame();
  return detail::second_order_field(grid, u, [&](Index k, const Eigen::VectorXd& g, const Eigen::MatrixXd& hx) {
    return hx.trace() + div_correction(frame, grid.point(k)).dot(g);
  });
}

// -|Xu|^{p-2} Delta_X u - (p-2) |Xu|^{p-4} Delta_{X,inf} u - f.
inline ScalarField p_operator_residual(const Grid& grid, std::span<const double> u, double p,
                                       std::span<const double> f) {
  if (!(p >= 4.0)) {
    throw ParameterError("p_operator_residual: needs p >= 4 for the non-divergence operator to be "
                         "continuous where Xu = 0, got p = " + std::to_string(p));
  }
  if (f.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError("p_operator_residual: source size does not match the grid");
  }
  const Frame& frame = grid.frame();
  return detail::second_order_field(grid, u, [&](Index k, const Eigen::VectorXd& g, const Eigen::MatrixXd& hx) {
    const double lap = hx.trace() + div_correction(frame, grid.point(k)).dot(g);
    const double inf = g.dot(hx * g);
    const double a = g.norm();
    return -std::pow(a, p - 2.0) * lap - (p - 2.0) * std::pow(a, p - 4.0) * inf - f[k];
  });
}

// |Xu| - 1 on every node (one-sided differences on box faces).
inline ScalarField eikonal_residual(const Grid& grid, std::span<const double> u) {
  if (u.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError("eikonal_residual: field size does not match the grid");
  }
  const HorizontalField xu = x_gradient(grid, u);
  ScalarField out(static_cast<std::size_t>(grid.size()));
  for (Index k = 0; k < grid.size(); ++k) out[k] = xu.norm_at(k) - 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Viscosity probe

struct ProbeEquation {
  enum class Kind { kInfLaplace, kEikonal, kPPoisson };
  Kind kind = Kind::kInfLaplace;
  double p = 0.0;
  double f = 0.0;  // source value at the probed point (p-Poisson only)

  static ProbeEquation inf_laplace() { return {Kind::kInfLaplace, 0.0, 0.0}; }
  static ProbeEquation eikonal() { return {Kind::kEikonal, 0.0, 0.0}; }
  static ProbeEquation p_poisson(double p, double f) {
    if (!(p >= 4.0)) throw ParameterError("probe: p-Poisson operator needs p >= 4");
    return {Kind::kPPoisson, p, f};
  }

  // Written as F <= 0 for subsolutions and F >= 0 for supersolutions.
  double operator()(const Eigen::VectorXd& xphi, const Eigen::MatrixXd& x2phi, double lap) const {
    switch (kind) {
      case Kind::kInfLaplace: return -xphi.dot(x2phi * xphi);
      case Kind::kEikonal: return xphi.norm() - 1.0;
      case Kind::kPPoisson: {
        const double a = xphi.norm();
        return -std::pow(a, p - 2.0) * lap - (p - 2.0) * std::pow(a, p - 4.0) * xphi.dot(x2phi * xphi) - f;
      }
    }
    return 0.0;
  }
};

enum class ProbeSide { kSub, kSuper };
enum class ProbeOutcome { kPass, kFail, kInconclusive };

inline const char* to_string(ProbeSide s) { return s == ProbeSide::kSub ? "sub" : "super"; }
inline const char* to_string(ProbeOutcome o) {
  switch (o) {
    case ProbeOutcome::kPass: return "pass";
    case ProbeOutcome::kFail: return "fail";
    case ProbeOutcome::kInconclusive: return "inconclusive";
  }
  return "?";
}

struct ProbeConfig {
  int budget = 512;
  double radius = 0.0;  // 0 selects 8 h
  double kappa = 1.0;
  double tol = -1.0;    // negative selects 10 h
};

struct ProbeViolation {
  Eigen::VectorXd q;
  Eigen::MatrixXd M;
  double value = 0.0;  // amount by which the sign condition fails
};

struct ProbeVerdict {
  Point point;
  Index node = -1;
  ProbeSide side = ProbeSide::kSub;
  int tested = 0;
  int admissible = 0;
  double worst_violation = 0.0;
  std::vector<ProbeViolation> violations;  // those beyond tol
  ProbeOutcome outcome = ProbeOutcome::kInconclusive;
  double radius = 0.0;
  double tol = 0.0;

  void write_csv_row(std::ostream& os) const {
    for (double x : point) os << x << ',';
    os << to_string(side) << ',' << admissible << ',' << worst_violation << '\n';
  }
};

inline void write_probe_csv_header(std::ostream& os, int n) {
  for (int i = 0; i < n; ++i) os << 'x' << (i + 1) << ',';
  os << "side,admissible_count,worst_violation\n";
}

namespace detail {

// Maps w in [-1, 1] to a signed offset in [-1, 1] whose magnitude is close to
// log-uniform over about three decades, so that small offsets from the centre
// are sampled as densely as large ones.
inline double log_stretch(double w) {
  constexpr double kLambda = 8.0;
  const double a = std::expm1(kLambda * std::abs(w)) / std::expm1(kLambda);
  return w < 0.0 ? -a : a;
}

}  // namespace detail

// Samples phi(x) = u(x0) + q.(x - x0) + 1/2 (x - x0)^T M (x - x0) +/- kappa |x - x0|^4
// around the finite-difference gradient and Hessian of u at x0. The first
// sample is the centre; the rest follow a Sobol sequence, so a larger budget
// extends the sample set of a smaller one. Second-order terms are capped at
// the curvature (1 + |q|) / (2 r0) that the probe ball can resolve.
inline ProbeVerdict probe_viscosity(const Grid& grid, std::span<const double> u, Index x0,
                                    const ProbeEquation& eq, ProbeSide side, ProbeConfig cfg = {}) {
  if (u.size() != static_cast<std::size_t>(grid.size())) {
    throw ParameterError("probe: field size does not match the grid");
  }
  if (x0 < 0 || x0 >= grid.size()) throw ParameterError("probe: node out of range");
  if (cfg.budget < 1) throw ParameterError("probe: budget must be positive");
  const int n = grid.dim();
  const double h = grid.max_spacing();
  const double r0 = cfg.radius > 0.0 ? cfg.radius : 8.0 * h;
  const double tol = cfg.tol >= 0.0 ? cfg.tol : 10.0 * h;

  std::vector<int> reach(n);
  for (int i = 0; i < n; ++i) {
    reach[i] = static_cast<int>(std::floor(r0 / grid.spacing(i) + 1e-9));
    if (reach[i] < 1) throw ParameterError("probe: radius is smaller than one cell");
    const Index c = grid.coordinate(x0, i);
    if (c - reach[i] < 0 || c + reach[i] >= grid.resolution()[i]) {
      throw ParameterError("probe: " + format_point(grid.point(x0)) + " is closer than the probe radius " +
                           std::to_string(r0) + " to the boundary");
    }
  }

  ProbeVerdict out;
  out.point = grid.point(x0);
  out.node = x0;
  out.side = side;
  out.radius = r0;
  out.tol = tol;

  // Ball nodes as (offset z, u(x) - u(x0)).
  std::vector<Eigen::VectorXd> zs;
  std::vector<double> du;
  {
    std::vector<int> off(n);
    for (int i = 0; i < n; ++i) off[i] = -reach[i];
    for (;;) {
      Index k = x0;
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) {
        k += off[i] * grid.stride(i);
        z[i] = off[i] * grid.spacing(i);
      }
      if (k != x0 && z.norm() <= r0 * (1.0 + 1e-12)) {
        zs.push_back(z);
        du.push_back(u[k] - u[x0]);
      }
      int i = 0;
      for (; i < n; ++i) {
        if (++off[i] <= reach[i]) break;
        off[i] = -reach[i];
      }
      if (i == n) break;
    }
  }

  // Centre of the sample box.
  Eigen::VectorXd qc(n);
  Eigen::MatrixXd mc(n, n);
  double spread = 0.0;
  for (int i = 0; i < n; ++i) {
    const double hi = grid.spacing(i);
    const Index p = x0 + grid.stride(i), q = x0 - grid.stride(i);
    qc[i] = (u[p] - u[q]) / (2.0 * hi);
    spread = std::max(spread, std::abs((u[p] - u[x0]) - (u[x0] - u[q])) / hi);
    mc(i, i) = (u[p] - 2.0 * u[x0] + u[q]) / (hi * hi);
    for (int j = 0; j < i; ++j) {
      const double hj = grid.spacing(j);
      const Index si = grid.stride(i), sj = grid.stride(j);
      mc(i, j) = mc(j, i) = (u[x0 + si + sj] - u[x0 + si - sj] - u[x0 - si + sj] + u[x0 - si - sj]) / (4.0 * hi * hj);
    }
  }
  const double rq = 0.5 * spread + 0.5 * (1.0 + qc.norm());
  const double rm = (1.0 + qc.norm()) / (2.0 * r0);
  mc = mc.cwiseMax(-rm).cwiseMin(rm);

  const double sign = side == ProbeSide::kSub ? 1.0 : -1.0;
  const Eigen::MatrixXd c = eval_coeff(grid.frame(), out.point);
  const std::vector<double> dc = coeff_deriv(grid.frame(), out.point);  // d c_{j,l} / d x_k
  const Eigen::VectorXd corr = div_correction(grid.frame(), out.point);
  const int m = grid.m();

  const int dims = n + n * (n + 1) / 2 + 1;
  boost::random::sobol qrng(static_cast<std::size_t>(dims));
  boost::random::uniform_01<double> unit;
  std::vector<double> xi(static_cast<std::size_t>(dims));

  Eigen::VectorXd q(n);
  Eigen::MatrixXd M(n, n);
  for (int s = 0; s < cfg.budget; ++s) {
    if (s == 0) {
      std::fill(xi.begin(), xi.end(), 0.5);
      xi.back() = 0.0;
    } else {
      for (double& v : xi) v = unit(qrng);
    }
    int a = 0;
    for (int i = 0; i < n; ++i) q[i] = qc[i] + rq * detail::log_stretch(2.0 * xi[a++] - 1.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) M(i, j) = M(j, i) = mc(i, j) + rm * detail::log_stretch(2.0 * xi[a++] - 1.0);
    }
    const double margin = 2.0 * rm * detail::log_stretch(xi[a]);
    M.diagonal().array() += sign * margin;
    ++out.tested;

    // Sub: u - phi <= 0 on the ball. Super: u - phi >= 0.
    bool ok = true;
    for (std::size_t t = 0; t < zs.size() && ok; ++t) {
      const Eigen::VectorXd& z = zs[t];
      const double r2 = z.squaredNorm();
      const double phi = q.dot(z) + 0.5 * z.dot(M * z) + sign * cfg.kappa * r2 * r2;
      ok = sign * (du[t] - phi) <= 0.0;
    }
    if (!ok) continue;
    ++out.admissible;

    const Eigen::VectorXd xphi = c * q;
    Eigen::MatrixXd x2(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        double acc = c.row(i).dot(M * c.row(j).transpose());
        for (int k = 0; k < n; ++k) {
          for (int l = 0; l < n; ++l) acc += c(i, k) * dc[(j * n + l) * n + k] * q[l];
        }
        x2(i, j) = acc;
      }
    }
    x2 = 0.5 * (x2 + x2.transpose());
    const double lap = x2.trace() + corr.dot(xphi);
    const double value = sign * eq(xphi, x2, lap);
    if (value > out.worst_violation) out.worst_violation = value;
    if (value > tol) out.violations.push_back({q, M, value});
  }
  if (out.admissible == 0) out.outcome = ProbeOutcome::kInconclusive;
  else out.outcome = out.violations.empty() ? ProbeOutcome::kPass : ProbeOutcome::kFail;
  return out;
}

}  // namespace cclab
