// Discrete p-Poisson Dirichlet problem
//
//   minimise  I_p(u) = (1/p) sum_t w (|g_t(u)|^2 + eps^2)^{p/2} - h^n sum_k f_k u_k
//
// over node fields matching the boundary data. Each term t pairs an interior
// node with one forward/backward choice per axis, g_t = C(x) D^sigma u, and
// w = h^n / 2^n, so every interior node carries the average of |Xu|^p over
// its 2^n one-sided stencils. The stationarity condition of this energy is
// the discrete weak form of -div_X(|Xu|^{p-2} Xu) = f.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#ifdef CCLAB_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include "cclab/errors.hpp"
#include "cclab/grid.hpp"

namespace cclab {

// The one-sided difference operators behind the energy. Term t reads the
// nodes (k, k +- e_1, ..., k +- e_n) and maps them to g_t = A_t u_local with
// A_t an m x (n+1) matrix.
class StencilFamily {
 public:
  explicit StencilFamily(const Grid& grid)
      : n_(grid.dim()), m_(grid.m()), width_(grid.dim() + 1) {
    const int combos = 1 << n_;
    weight_ = grid.cell_volume() / combos;
    const std::size_t count = grid.interior_nodes().size() * static_cast<std::size_t>(combos);
    nodes_.reserve(count * width_);
    ops_.reserve(count * m_ * width_);
    gram_.reserve(count * width_ * width_);
    std::vector<double> a(static_cast<std::size_t>(m_ * width_));
    std::vector<Index> nb(static_cast<std::size_t>(width_));
    // Boundary nodes carry the one-sided stencils that stay in the box, so every
    // edge next to an unknown is charged by the same number of stencils and
    // affine data is an exact discrete critical point in a constant frame.
    // Stencils that touch no unknown are constants and are left out.
    for (Index k = 0; k < grid.size(); ++k) {
      const std::span<const double> c = grid.coeff(k);
      for (int sigma = 0; sigma < combos; ++sigma) {
        nb[0] = k;
        bool inside = true;
        bool touches = grid.is_interior(k);
        for (int i = 0; i < n_ && inside; ++i) {
          nb[1 + i] = grid.neighbor(k, i, ((sigma >> i) & 1) ? +1 : -1);
          inside = nb[1 + i] >= 0;
          if (inside) touches = touches || grid.is_interior(nb[1 + i]);
        }
        if (!inside || !touches) continue;
        nodes_.insert(nodes_.end(), nb.begin(), nb.end());
        std::fill(a.begin(), a.end(), 0.0);
        for (int i = 0; i < n_; ++i) {
          const double s = (((sigma >> i) & 1) ? 1.0 : -1.0) / grid.spacing(i);
          for (int j = 0; j < m_; ++j) {
            a[j * width_ + 1 + i] = c[j * n_ + i] * s;
            a[j * width_] -= c[j * n_ + i] * s;
          }
        }
        ops_.insert(ops_.end(), a.begin(), a.end());
        for (int r = 0; r < width_; ++r) {
          for (int q = 0; q < width_; ++q) {
            double acc = 0.0;
            for (int j = 0; j < m_; ++j) acc += a[j * width_ + r] * a[j * width_ + q];
            gram_.push_back(acc);
          }
        }
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size() / width_; }
  int width() const noexcept { return width_; }
  int m() const noexcept { return m_; }
  double weight() const noexcept { return weight_; }

  std::span<const Index> nodes(std::size_t t) const {
    return {nodes_.data() + t * width_, static_cast<std::size_t>(width_)};
  }
  std::span<const double> op(std::size_t t) const {
    return {ops_.data() + t * m_ * width_, static_cast<std::size_t>(m_ * width_)};
  }
  // A_t^T A_t, row-major (n+1) x (n+1).
  std::span<const double> gram(std::size_t t) const {
    return {gram_.data() + t * width_ * width_, static_cast<std::size_t>(width_ * width_)};
  }

  // g = A_t u_local; returns |g|^2.
  double eval(std::size_t t, std::span<const double> u, std::span<double> g) const {
    const std::span<const Index> nd = nodes(t);
    const std::span<const double> a = op(t);
    double sq = 0.0;
    for (int j = 0; j < m_; ++j) {
      double acc = 0.0;
      for (int r = 0; r < width_; ++r) acc += a[j * width_ + r] * u[nd[r]];
      g[j] = acc;
      sq += acc * acc;
    }
    return sq;
  }

 private:
  int n_, m_, width_;
  double weight_ = 0.0;
  std::vector<Index> nodes_;
  std::vector<double> ops_;
  std::vector<double> gram_;
};

namespace detail {

// sum_t w (|g_t|^2 + eps^2)^{p/2}, scaled through logarithms for large p so
// the partial sums stay in range. Returns +inf on overflow.
inline double power_sum(const StencilFamily& fam, std::span<const double> u, double p, double eps) {
  double g[16];
  const double e2 = eps * eps;
  if (p < 128.0) {
    double s = 0.0;
    for (std::size_t t = 0; t < fam.size(); ++t) {
      const double sq = fam.eval(t, u, g) + e2;
      s += std::pow(sq, 0.5 * p);
    }
    return s * fam.weight();
  }
  std::vector<double> logs(fam.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < fam.size(); ++t) {
    const double sq = fam.eval(t, u, g) + e2;
    logs[t] = sq > 0.0 ? 0.5 * p * std::log(sq) : -std::numeric_limits<double>::infinity();
    top = std::max(top, logs[t]);
  }
  if (!std::isfinite(top)) return 0.0;
  double s = 0.0;
  for (double l : logs) s += std::exp(l - top);
  const double log_total = top + std::log(s * fam.weight());
  return log_total > 709.0 ? std::numeric_limits<double>::infinity() : std::exp(log_total);
}

inline double linear_term(const Grid& grid, std::span<const double> f, std::span<const double> u) {
  double s = 0.0;
  for (Index k : grid.interior_nodes()) s += f[k] * u[k];
  return s * grid.cell_volume();
}

}  // namespace detail

// Regularised discrete I_p.
inline double energy(const Grid& grid, std::span<const double> u, double p,
                     std::span<const double> f, double eps) {
  if (!(p > 1.0)) throw ParameterError("energy: p must exceed 1");
  if (eps < 0.0) throw ParameterError("energy: eps must be non-negative");
  const StencilFamily fam(grid);
  return detail::power_sum(fam, u, p, eps) / p - detail::linear_term(grid, f, u);
}

// E = sum_t w |g_t|^p, the discrete integral of |Xu|^p.
inline double dirichlet_energy(const Grid& grid, std::span<const double> u, double p) {
  const StencilFamily fam(grid);
  return detail::power_sum(fam, u, p, 0.0);
}

struct SolveConfig {
  std::vector<double> eps_schedule;  // decreasing; empty selects 1e-1, 1e-2, ..., eps_final
  double eps_final = -1.0;           // negative selects min(h, 1e-4)
  int max_iters = 400;               // Newton iterations per regularisation stage
  double grad_tol = 0.0;             // absolute sup-norm tolerance; 0 selects rel * (1 + |E|) h^n
  double grad_rel_tol = 1e-8;
  double stage_rel_tol = 1e-5;       // looser tolerance for intermediate stages
  double backtrack = 0.5;
  double armijo = 1e-4;
  std::optional<ScalarField> warm_start;
  bool p_continuation = true;        // cold starts ramp p through 2, 4, 8, ...
  double step_tol = 1e-9;            // relative Newton-step size that ends the final stage
};

struct SolveReport {
  std::string frame;
  std::vector<int> resolution;
  double p = 0.0;
  double eps_final = 0.0;
  ScalarField u;
  double E_p = 0.0;
  double duality_gap = 0.0;
  int iterations = 0;
  double final_grad_norm = 0.0;
  double grad_tol = 0.0;
  bool zero_boundary = false;
  std::vector<double> energy_trace;
  double runtime_s = 0.0;
};

namespace detail {

class SpdFactor {
 public:
  using SpMat = Eigen::SparseMatrix<double>;

#ifdef CCLAB_HAVE_CHOLMOD
  // Indefinite matrices are expected and handled by the caller.
  SpdFactor() { solver_.cholmod().print = 0; }
#endif

  bool factorize(const SpMat& h) {
    if (!analyzed_) {
      solver_.analyzePattern(h);
      analyzed_ = true;
    }
    solver_.factorize(h);
    return solver_.info() == Eigen::Success;
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return solver_.solve(b); }

 private:
#ifdef CCLAB_HAVE_CHOLMOD
  Eigen::CholmodSupernodalLLT<SpMat, Eigen::Lower> solver_;
#else
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> solver_;
#endif
  bool analyzed_ = false;
};

// Newton iteration for one (p, eps) pair on a fixed grid.
class NewtonCore {
 public:
  NewtonCore(const Grid& grid, const StencilFamily& fam, std::span<const double> f)
      : grid_(grid), fam_(fam), f_(f.begin(), f.end()) {
    const std::vector<Index>& interior = grid.interior_nodes();
    unknown_of_.assign(static_cast<std::size_t>(grid.size()), -1);
    for (std::size_t q = 0; q < interior.size(); ++q) unknown_of_[interior[q]] = static_cast<Index>(q);
    build_pattern();
  }

  struct StageResult {
    int iterations = 0;
    double grad_norm = 0.0;
    double tol = 0.0;
    bool converged = false;
  };

  // With step_tol > 0, meeting the gradient tolerance starts a polishing
  // phase of (at most 50) Newton steps that ends once the step is below
  // step_tol.
  // At large p the gradient entries at low-slope nodes are far below any
  // usable tolerance, while the Newton step is scale-free and still sees them.
  StageResult run(ScalarField& u, double p, double eps, double abs_tol, double rel_tol,
                  int max_iters, double backtrack, double armijo, std::vector<double>* trace,
                  double step_tol = 0.0) {
    const std::size_t nu = grid_.interior_nodes().size();
    StageResult res;
    Eigen::VectorXd grad(static_cast<Eigen::Index>(nu));
    Eigen::VectorXd prev_grad, prev_dir;
    ScalarField trial(u.size());
    double value = objective(u, p, eps);
    if (trace) trace->push_back(value);
    bool use_descent = false;
    constexpr int kMaxPolish = 50;
    int polish_steps = 0;
    for (int it = 0; it <= max_iters; ++it) {
      gradient(u, p, eps, grad);
      res.grad_norm = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;
      const double e_now = power_sum(fam_, u, p, 0.0);
      res.tol = abs_tol > 0.0 ? abs_tol : rel_tol * (1.0 + std::abs(e_now)) * grid_.cell_volume();
      res.iterations = it;
      if (res.grad_norm <= res.tol) {
        res.converged = true;
        if (step_tol <= 0.0 || it == max_iters || polish_steps == kMaxPolish) return res;
        ++polish_steps;
        assemble_hessian(u, p, eps);
        if (!factorize_with_shift()) return res;
        const Eigen::VectorXd step = factor_.solve(-grad);
        if (!step.allFinite() || step.lpNorm<Eigen::Infinity>() <= step_tol) return res;
        // The objective cannot resolve these steps, so only an increase
        // beyond roundoff is rejected.
        const double slack = 1e-13 * (1.0 + std::abs(value));
        bool moved = false;
        for (double t = 1.0; t > 1e-6 && !moved; t *= backtrack) {
          apply_step(u, step, t, trial);
          const double v = objective(trial, p, eps);
          if (std::isfinite(v) && v <= value + slack) {
            u.swap(trial);
            value = std::min(value, v);
            moved = true;
          }
        }
        if (!moved) return res;
        if (trace) trace->push_back(value);
        continue;
      }
      res.converged = false;
      if (it == max_iters) break;

      Eigen::VectorXd dir;
      if (!use_descent) {
        assemble_hessian(u, p, eps);
        if (factorize_with_shift()) dir = factor_.solve(-grad);
      }
      double slope = dir.size() ? grad.dot(dir) : 0.0;
      if (!dir.size() || !std::isfinite(slope) || slope >= 0.0) {
        // Jacobi-preconditioned nonlinear CG (Polak-Ribiere+) fallback.
        assemble_hessian(u, p, eps);
        Eigen::VectorXd diag(static_cast<Eigen::Index>(nu));
        for (std::size_t q = 0; q < nu; ++q) diag[q] = std::max(hess_.valuePtr()[diag_pos_[q]], 1e-300);
        const Eigen::VectorXd pg = grad.cwiseQuotient(diag);
        dir = -pg;
        if (prev_grad.size() == grad.size() && prev_dir.size() == grad.size()) {
          const Eigen::VectorXd pgo = prev_grad.cwiseQuotient(diag);
          const double beta =
              std::max(0.0, grad.dot(pg - pgo) / std::max(prev_grad.dot(pgo), 1e-300));
          dir += beta * prev_dir;
          if (grad.dot(dir) >= 0.0) dir = -pg;
        }
        slope = grad.dot(dir);
        prev_grad = grad;
        prev_dir = dir;
        use_descent = false;
      } else {
        prev_grad.resize(0);
        prev_dir.resize(0);
      }

      // Backtracking line search on the objective.
      double t = 1.0;
      bool accepted = false;
      const double roundoff = 1e-13 * (1.0 + std::abs(value));
      for (int ls = 0; ls < 60; ++ls) {
        apply_step(u, dir, t, trial);
        const double v = objective(trial, p, eps);
        if (std::isfinite(v) && v <= value + armijo * t * slope) {
          u.swap(trial);
          value = v;
          accepted = true;
          break;
        }
        if (t == 1.0 && -slope < roundoff && std::isfinite(v)) {
          // Predicted decrease is below the resolution of the objective:
          // judge the full step by the gradient instead.
          Eigen::VectorXd g2(grad.size());
          gradient(trial, p, eps, g2);
          if (g2.lpNorm<Eigen::Infinity>() < res.grad_norm) {
            u.swap(trial);
            value = std::min(value, v);
            accepted = true;
            break;
          }
        }
        t *= backtrack;
      }
      if (!accepted) {
        if (use_descent) break;
        use_descent = true;  // retry this iterate with the CG direction
        continue;
      }
      if (trace) trace->push_back(value);
    }
    return res;
  }

  double objective(std::span<const double> u, double p, double eps) const {
    return power_sum(fam_, u, p, eps) / p - linear_term(grid_, f_, u);
  }

  void gradient(std::span<const double> u, double p, double eps, Eigen::VectorXd& out) const {
    out.setZero();
    const int w = fam_.width();
    const int m = fam_.m();
    double g[16];
    const double e2 = eps * eps;
    for (std::size_t t = 0; t < fam_.size(); ++t) {
      const double s = fam_.eval(t, u, g) + e2;
      const double rho = fam_.weight() * std::pow(s, 0.5 * (p - 2.0));
      const std::span<const Index> nd = fam_.nodes(t);
      const std::span<const double> a = fam_.op(t);
      for (int r = 0; r < w; ++r) {
        const Index q = unknown_of_[nd[r]];
        if (q < 0) continue;
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += a[j * w + r] * g[j];
        out[q] += rho * acc;
      }
    }
    const double vol = grid_.cell_volume();
    const std::vector<Index>& interior = grid_.interior_nodes();
    for (std::size_t q = 0; q < interior.size(); ++q) out[static_cast<Eigen::Index>(q)] -= vol * f_[interior[q]];
  }

 private:
  void build_pattern() {
    const std::size_t nu = grid_.interior_nodes().size();
    const int w = fam_.width();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(fam_.size() * w * w / 2 + nu);
    for (std::size_t q = 0; q < nu; ++q) trip.emplace_back(q, q, 0.0);
    for (std::size_t t = 0; t < fam_.size(); ++t) {
      const std::span<const Index> nd = fam_.nodes(t);
      for (int r = 0; r < w; ++r) {
        const Index qr = unknown_of_[nd[r]];
        if (qr < 0) continue;
        for (int c = 0; c < w; ++c) {
          const Index qc = unknown_of_[nd[c]];
          if (qc < 0 || qr < qc) continue;
          trip.emplace_back(qr, qc, 0.0);
        }
      }
    }
    hess_.resize(static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(nu));
    hess_.setFromTriplets(trip.begin(), trip.end());
    hess_.makeCompressed();
    auto find = [&](Index row, Index col) -> std::int32_t {
      const int* inner = hess_.innerIndexPtr();
      const int* begin = inner + hess_.outerIndexPtr()[col];
      const int* end = inner + hess_.outerIndexPtr()[col + 1];
      const int* it = std::lower_bound(begin, end, static_cast<int>(row));
      return static_cast<std::int32_t>(it - inner);
    };
    diag_pos_.resize(nu);
    for (std::size_t q = 0; q < nu; ++q) diag_pos_[q] = find(static_cast<Index>(q), static_cast<Index>(q));
    pos_.assign(fam_.size() * w * w, -1);
    for (std::size_t t = 0; t < fam_.size(); ++t) {
      const std::span<const Index> nd = fam_.nodes(t);
      for (int r = 0; r < w; ++r) {
        const Index qr = unknown_of_[nd[r]];
        if (qr < 0) continue;
        for (int c = 0; c < w; ++c) {
          const Index qc = unknown_of_[nd[c]];
          if (qc < 0 || qr < qc) continue;
          pos_[t * w * w + r * w + c] = find(qr, qc);
        }
      }
    }
  }

  void assemble_hessian(std::span<const double> u, double p, double eps) {
    double* val = hess_.valuePtr();
    std::fill(val, val + hess_.nonZeros(), 0.0);
    const int w = fam_.width();
    const int m = fam_.m();
    double g[16], a_g[16];
    const double e2 = eps * eps;
    for (std::size_t t = 0; t < fam_.size(); ++t) {
      const double s = fam_.eval(t, u, g) + e2;
      const double rho = fam_.weight() * std::pow(s, 0.5 * (p - 2.0));
      const double kappa = fam_.weight() * (p - 2.0) * std::pow(s, 0.5 * (p - 4.0));
      const std::span<const double> a = fam_.op(t);
      const std::span<const double> gram = fam_.gram(t);
      for (int r = 0; r < w; ++r) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += a[j * w + r] * g[j];
        a_g[r] = acc;
      }
      const std::int32_t* pos = pos_.data() + t * w * w;
      for (int r = 0; r < w; ++r) {
        for (int c = 0; c < w; ++c) {
          const std::int32_t at = pos[r * w + c];
          if (at < 0) continue;
          val[at] += rho * gram[r * w + c] + kappa * a_g[r] * a_g[c];
        }
      }
    }
  }

  bool factorize_with_shift() {
    if (factor_.factorize(hess_)) return true;
    double max_diag = 0.0;
    for (std::int32_t d : diag_pos_) max_diag = std::max(max_diag, std::abs(hess_.valuePtr()[d]));
    double shift = 1e-14 * std::max(max_diag, 1e-300);
    for (int attempt = 0; attempt < 12; ++attempt) {
      for (std::int32_t d : diag_pos_) hess_.valuePtr()[d] += shift;
      if (factor_.factorize(hess_)) return true;
      shift *= 10.0;
    }
    return false;
  }

  void apply_step(std::span<const double> u, const Eigen::VectorXd& dir, double t,
                  ScalarField& out) const {
    std::copy(u.begin(), u.end(), out.begin());
    const std::vector<Index>& interior = grid_.interior_nodes();
    for (std::size_t q = 0; q < interior.size(); ++q) out[interior[q]] += t * dir[static_cast<Eigen::Index>(q)];
  }

  const Grid& grid_;
  const StencilFamily& fam_;
  ScalarField f_;
  std::vector<Index> unknown_of_;
  Eigen::SparseMatrix<double> hess_;
  std::vector<std::int32_t> diag_pos_;
  std::vector<std::int32_t> pos_;
  SpdFactor factor_;
};

inline std::vector<double> default_eps_schedule(double eps_final) {
  std::vector<double> s;
  for (double e = 1e-1; e > eps_final * (1.0 + 1e-12); e *= 0.1) s.push_back(e);
  s.push_back(eps_final);
  return s;
}

}  // namespace detail

inline double default_eps_final(const Grid& grid) { return std::min(grid.min_spacing(), 1e-4); }

// Minimiser of the eps_final-regularised discrete I_p with u = g on the
// boundary. Throws ParameterError for p <= 1 and ConvergenceError when a
// stage exhausts max_iters.
inline SolveReport solve_p_poisson(const Grid& grid, double p, std::span<const double> f,
                                   std::span<const double> g, const SolveConfig& cfg = {}) {
  const auto started = std::chrono::steady_clock::now();
  if (!(p > 1.0) || !std::isfinite(p)) throw ParameterError("solve_p_poisson: p must exceed 1");
  const std::size_t nodes = static_cast<std::size_t>(grid.size());
  if (f.size() != nodes || g.size() != nodes) {
    throw ParameterError("solve_p_poisson: f and g need one value per node");
  }
  for (Index k : grid.interior_nodes()) {
    if (!std::isfinite(f[k])) throw ParameterError("solve_p_poisson: f is not finite");
  }
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.is_boundary(k) && !std::isfinite(g[k])) {
      throw ParameterError("solve_p_poisson: boundary data is not finite");
    }
  }
  std::vector<double> schedule = cfg.eps_schedule;
  double eps_final = cfg.eps_final >= 0.0 ? cfg.eps_final : default_eps_final(grid);
  if (schedule.empty()) {
    schedule = detail::default_eps_schedule(eps_final);
  } else {
    for (std::size_t k = 1; k < schedule.size(); ++k) {
      if (!(schedule[k] < schedule[k - 1])) {
        throw ParameterError("solve_p_poisson: eps_schedule must be decreasing");
      }
    }
    if (schedule.back() < 0.0) throw ParameterError("solve_p_poisson: eps must be >= 0");
    eps_final = schedule.back();
  }
  if (!(cfg.backtrack > 0.0 && cfg.backtrack < 1.0) || !(cfg.armijo > 0.0 && cfg.armijo < 0.5)) {
    throw ParameterError("solve_p_poisson: invalid line-search parameters");
  }

  ScalarField u(nodes, 0.0);
  const bool warm = cfg.warm_start.has_value();
  if (warm) {
    if (cfg.warm_start->size() != nodes) throw ParameterError("solve_p_poisson: warm start size");
    u = *cfg.warm_start;
  }
  bool zero_boundary = true;
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.is_boundary(k)) {
      u[k] = g[k];
      if (g[k] != 0.0) zero_boundary = false;
    }
  }

  const StencilFamily fam(grid);
  detail::NewtonCore core(grid, fam, f);
  SolveReport rep;
  rep.frame = grid.frame().name();
  rep.resolution = grid.resolution();
  rep.p = p;
  rep.eps_final = eps_final;
  rep.zero_boundary = zero_boundary;

  int total = 0;
  const bool continuation = !warm && cfg.p_continuation && p > 2.0;
  double q0 = 2.0;
  if (continuation) {
    total += core.run(u, 2.0, 1e-1, 0.0, cfg.stage_rel_tol, cfg.max_iters, cfg.backtrack, cfg.armijo,
                      nullptr).iterations;
    q0 = 4.0;
  }

  // With f = 0 the problem is invariant under u -> lambda u while energies
  // and gradients scale like |Xu|^p, so a solution with slopes well below
  // one meets any gradient tolerance at the starting guess. Solve instead
  // for u / lambda, with lambda the largest stencil slope of the current
  // iterate, and scale back. Constant data is left alone.
  bool f_zero = true;
  for (Index k : grid.interior_nodes()) f_zero = f_zero && f[k] == 0.0;
  double lambda = 1.0;
  double g_lo = std::numeric_limits<double>::infinity(), g_hi = -g_lo;
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.is_boundary(k)) {
      g_lo = std::min(g_lo, g[k]);
      g_hi = std::max(g_hi, g[k]);
    }
  }
  if (f_zero && g_hi > g_lo) {
    double g2[16], top = 0.0;
    for (std::size_t t = 0; t < fam.size(); ++t) top = std::max(top, fam.eval(t, u, g2));
    if (top > 0.0) lambda = std::sqrt(top);
  }
  if (lambda != 1.0) {
    for (double& v : u) v /= lambda;
  }
  const double grad_scale = std::pow(lambda, p - 1.0);
  const double abs_tol = cfg.grad_tol / grad_scale;
  auto scaled_trace = [&] {
    std::vector<double> t = rep.energy_trace;
    for (double& v : t) v *= std::pow(lambda, p);
    return t;
  };

  if (continuation) {
    for (double q = q0; q < p * (1.0 - 1e-12); q *= 2.0) {
      total += core.run(u, q, 1e-1, 0.0, cfg.stage_rel_tol, cfg.max_iters, cfg.backtrack, cfg.armijo,
                        nullptr).iterations;
    }
  }
  detail::NewtonCore::StageResult last;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const bool final_stage = s + 1 == schedule.size();
    last = core.run(u, p, schedule[s], final_stage ? abs_tol : 0.0,
                    final_stage ? cfg.grad_rel_tol : cfg.stage_rel_tol, cfg.max_iters,
                    cfg.backtrack, cfg.armijo, &rep.energy_trace,
                    final_stage ? cfg.step_tol * (1.0 + sup_norm(u)) : 0.0);
    total += last.iterations;
    if (final_stage && !last.converged) {
      throw ConvergenceError("solve_p_poisson: no convergence at p=" + std::to_string(p) +
                                 " eps=" + std::to_string(schedule[s]) + " after " +
                                 std::to_string(last.iterations) + " iterations (|grad|=" +
                                 std::to_string(last.grad_norm) + ", tol=" +
                                 std::to_string(last.tol) + ")",
                             scaled_trace());
    }
  }
  if (lambda != 1.0) {
    for (double& v : u) v *= lambda;
    for (Index k = 0; k < grid.size(); ++k) {
      if (grid.is_boundary(k)) u[k] = g[k];
    }
    rep.energy_trace = scaled_trace();
  }
  rep.u = std::move(u);
  rep.iterations = total;
  rep.final_grad_norm = last.grad_norm * grad_scale;
  rep.grad_tol = last.tol * grad_scale;
  rep.E_p = detail::power_sum(fam, rep.u, p, 0.0);
  rep.duality_gap = std::abs(rep.E_p - detail::linear_term(grid, f, rep.u));
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Variational identities at the discrete minimiser

struct EpIdentities {
  double gap_weak = 0.0;      // |E - int f u| / (1 + E)
  double gap_thompson = 0.0;  // E - (int f u / ||Xu||_p)^{p/(p-1)}
};

inline EpIdentities ep_identities(const Grid& grid, const SolveReport& rep, std::span<const double> f) {
  EpIdentities out;
  const double e = rep.E_p;
  const double fu = detail::linear_term(grid, f, rep.u);
  out.gap_weak = std::abs(e - fu) / (1.0 + e);
  if (e > 0.0) {
    const double norm = std::pow(e, 1.0 / rep.p);
    const double ratio = fu / norm;
    out.gap_thompson = e - std::copysign(std::pow(std::abs(ratio), rep.p / (rep.p - 1.0)), ratio);
  }
  return out;
}

struct FluxCheck {
  double flux_residual = 0.0;    // sup |(-div_X V) - f| on nodes >= 2 cells inside
  double flux_energy_gap = 0.0;  // |int |V|^{p'} - E| / (1 + E)
  ScalarField neg_div;           // -div_X V per node (zero on the boundary)
};

// Builds V = |Xu|^{p-2} Xu on every stencil term and applies the adjoint of
// the stencil family, so -div_X V is exactly the energy gradient scaled by
// the cell volume.
inline FluxCheck dirichlet_flux_check(const Grid& grid, const SolveReport& rep,
                                      std::span<const double> f) {
  const double p = rep.p;
  const StencilFamily fam(grid);
  FluxCheck out;
  out.neg_div.assign(static_cast<std::size_t>(grid.size()), 0.0);
  const int w = fam.width();
  const int m = fam.m();
  double g[16];
  double flux_power = 0.0;
  const double pp = p / (p - 1.0);
  for (std::size_t t = 0; t < fam.size(); ++t) {
    const double sq = fam.eval(t, rep.u, g);
    const double mag = std::sqrt(sq);
    const double scale = mag > 0.0 ? std::pow(mag, p - 2.0) : 0.0;
    flux_power += fam.weight() * std::pow(scale * mag, pp);
    const std::span<const Index> nd = fam.nodes(t);
    const std::span<const double> a = fam.op(t);
    for (int r = 0; r < w; ++r) {
      if (!grid.is_interior(nd[r])) continue;
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += a[j * w + r] * g[j] * scale;
      out.neg_div[nd[r]] += fam.weight() * acc;
    }
  }
  for (Index k : grid.interior_nodes()) {
    out.neg_div[k] /= grid.cell_volume();
    if (grid.depth(k) >= 2) {
      out.flux_residual = std::max(out.flux_residual, std::abs(out.neg_div[k] - f[k]));
    }
  }
  out.flux_energy_gap = std::abs(flux_power - rep.E_p) / (1.0 + rep.E_p);
  return out;
}

struct ComparisonVerdict {
  bool pass = true;
  double worst_violation = 0.0;  // max(u - v) - max_boundary(u - v), clipped below at 0
  double max_diff = 0.0;         // max over nodes of u - v
  double boundary_max_diff = 0.0;
  Index worst_node = -1;
  double tol = 0.0;
};

inline double default_comparison_tol(const Grid& grid) { return 1e-6 + 10.0 * grid.max_spacing(); }

// Checks max(u - v) <= max_boundary(u - v) + tol for two solves on one grid.
inline ComparisonVerdict comparison_check(const Grid& grid, const SolveReport& ru,
                                          const SolveReport& rv, double tol = -1.0) {
  if (ru.resolution != grid.resolution() || rv.resolution != grid.resolution() ||
      ru.frame != grid.frame().name() || rv.frame != grid.frame().name() ||
      ru.u.size() != static_cast<std::size_t>(grid.size()) || rv.u.size() != ru.u.size()) {
    throw ParameterError("comparison_check: solves were computed on different grids");
  }
  if (ru.p != rv.p) throw ParameterError("comparison_check: solves use different p");
  ComparisonVerdict v;
  v.tol = tol >= 0.0 ? tol : default_comparison_tol(grid);
  v.max_diff = -std::numeric_limits<double>::infinity();
  v.boundary_max_diff = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < grid.size(); ++k) {
    const double d = ru.u[k] - rv.u[k];
    if (d > v.max_diff) {
      v.max_diff = d;
      v.worst_node = k;
    }
    if (grid.is_boundary(k)) v.boundary_max_diff = std::max(v.boundary_max_diff, d);
  }
  v.worst_violation = std::max(0.0, v.max_diff - v.boundary_max_diff);
  v.pass = v.worst_violation <= v.tol;
  return v;
}

}  // namespace cclab
