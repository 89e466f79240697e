// Horizontal frames X_1..X_m on a box in R^n, described by their m x n
// coefficient matrix C(x): row j holds the components of X_j.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cclab/errors.hpp"
#include "cclab/expr.hpp"

namespace cclab {

using Point = std::vector<double>;

inline std::string format_point(std::span<const double> x) {
  std::ostringstream os;
  os.precision(6);
  os << '(';
  for (std::size_t k = 0; k < x.size(); ++k) os << (k ? ", " : "") << x[k];
  os << ')';
  return os.str();
}

// Axis-aligned box [lo_k, hi_k].
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  static Box cube(int n, double a, double b) {
    return Box{std::vector<double>(n, a), std::vector<double>(n, b)};
  }

  int dim() const noexcept { return static_cast<int>(lo.size()); }

  double diameter() const noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < lo.size(); ++k) s += (hi[k] - lo[k]) * (hi[k] - lo[k]);
    return std::sqrt(s);
  }

  bool contains(std::span<const double> x, double margin = 0.0) const noexcept {
    const double slack = 1e-12 * diameter();
    for (std::size_t k = 0; k < lo.size(); ++k) {
      if (x[k] < lo[k] + margin - slack || x[k] > hi[k] - margin + slack) return false;
    }
    return true;
  }
};

class Frame {
 public:
  // Writes C(x) row-major into `out` (size m*n).
  using CoeffFn = std::function<void(std::span<const double> x, std::span<double> out)>;
  // Writes dc_{j,i}/dx_k into out[(j*n + i)*n + k] (size m*n*n).
  using DerivFn = std::function<void(std::span<const double> x, std::span<double> out)>;

  Frame(std::string name, int n, int m, Box box, CoeffFn coeff, DerivFn deriv = {})
      : name_(std::move(name)), n_(n), m_(m), box_(std::move(box)),
        coeff_(std::move(coeff)), deriv_(std::move(deriv)) {
    if (n_ < 1 || m_ < 1 || m_ > n_) {
      throw ParameterError("frame '" + name_ + "': need 1 <= m <= n");
    }
    if (box_.dim() != n_) throw ParameterError("frame '" + name_ + "': box dimension != n");
    for (int k = 0; k < n_; ++k) {
      if (!(box_.hi[k] > box_.lo[k])) {
        throw ParameterError("frame '" + name_ + "': empty box along axis " + std::to_string(k + 1));
      }
    }
  }

  const std::string& name() const noexcept { return name_; }
  int n() const noexcept { return n_; }
  int m() const noexcept { return m_; }
  const Box& box() const noexcept { return box_; }
  bool has_analytic_deriv() const noexcept { return static_cast<bool>(deriv_); }

  Frame with_box(Box box) const {
    Frame f = *this;
    if (box.dim() != n_) throw ParameterError("frame '" + name_ + "': box dimension != n");
    f.box_ = std::move(box);
    return f;
  }

  // Unchecked evaluation; also valid slightly outside the box, which the
  // difference stencils rely on.
  void coeff_raw(std::span<const double> x, std::span<double> out) const { coeff_(x, out); }

  Eigen::MatrixXd coeff_matrix_raw(std::span<const double> x) const {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c(m_, n_);
    coeff_(x, std::span<double>(c.data(), static_cast<std::size_t>(m_ * n_)));
    return c;
  }

  // Step used for finite-difference derivatives of custom frames.
  double fd_step() const noexcept { return 1e-5 * box_.diameter(); }

  void deriv_raw(std::span<const double> x, std::span<double> out) const {
    if (deriv_) {
      deriv_(x, out);
      return;
    }
    fd_deriv(x, out, fd_step());
  }

  // Central-difference derivative of C, independent of any analytic formula.
  void fd_deriv(std::span<const double> x, std::span<double> out, double step) const {
    const std::size_t mn = static_cast<std::size_t>(m_ * n_);
    std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
    std::vector<double> cp(mn), cm(mn);
    for (int k = 0; k < n_; ++k) {
      xp[k] = x[k] + step;
      xm[k] = x[k] - step;
      coeff_(xp, cp);
      coeff_(xm, cm);
      for (std::size_t e = 0; e < mn; ++e) out[e * n_ + k] = (cp[e] - cm[e]) / (2.0 * step);
      xp[k] = x[k];
      xm[k] = x[k];
    }
  }

 private:
  std::string name_;
  int n_;
  int m_;
  Box box_;
  CoeffFn coeff_;
  DerivFn deriv_;
};

// ---------------------------------------------------------------------------
// Built-in frames

inline Frame euclidean_frame(int n, Box box = {}) {
  if (box.lo.empty()) box = Box::cube(n, 0.0, 1.0);
  auto coeff = [n](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int j = 0; j < n; ++j) out[j * n + j] = 1.0;
  };
  auto deriv = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  return Frame("euclidean" + std::to_string(n), n, n, std::move(box), coeff, deriv);
}

// X = d/dx - y d/dt, Y = d/dy + x d/dt on coordinates (x, y, t).
inline Frame heisenberg_frame(Box box = {}) {
  if (box.lo.empty()) box = Box::cube(3, -1.0, 1.0);
  auto coeff = [](std::span<const double> x, std::span<double> c) {
    c[0] = 1.0; c[1] = 0.0; c[2] = -x[1];
    c[3] = 0.0; c[4] = 1.0; c[5] = x[0];
  };
  auto deriv = [](std::span<const double>, std::span<double> d) {
    std::fill(d.begin(), d.end(), 0.0);
    // c_{0,2} = -y, c_{1,2} = x
    d[(0 * 3 + 2) * 3 + 1] = -1.0;
    d[(1 * 3 + 2) * 3 + 0] = 1.0;
  };
  return Frame("heisenberg1", 3, 2, std::move(box), coeff, deriv);
}

// X = d/dx, Y = x d/dy.
inline Frame grushin_frame(Box box = {}) {
  if (box.lo.empty()) box = Box::cube(2, -1.0, 1.0);
  auto coeff = [](std::span<const double> x, std::span<double> c) {
    c[0] = 1.0; c[1] = 0.0;
    c[2] = 0.0; c[3] = x[0];
  };
  auto deriv = [](std::span<const double>, std::span<double> d) {
    std::fill(d.begin(), d.end(), 0.0);
    d[(1 * 2 + 1) * 2 + 0] = 1.0;
  };
  return Frame("grushin", 2, 2, std::move(box), coeff, deriv);
}

namespace detail {
inline double flat_psi(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }
inline double flat_psi_prime(double x) { return x > 0.0 ? std::exp(-1.0 / x) / (x * x) : 0.0; }
}  // namespace detail

// phi(x) = psi(x) + psi(-x) with psi(x) = exp(-1/x) for x > 0: all
// derivatives of phi vanish at x = 0.
inline double flat_phi(double x) { return detail::flat_psi(x) + detail::flat_psi(-x); }

// X = d/dx, Y = d/dy + phi(x) d/dz.
inline Frame flat_phi_frame(Box box = {}) {
  if (box.lo.empty()) box = Box::cube(3, -1.0, 1.0);
  auto coeff = [](std::span<const double> x, std::span<double> c) {
    c[0] = 1.0; c[1] = 0.0; c[2] = 0.0;
    c[3] = 0.0; c[4] = 1.0; c[5] = flat_phi(x[0]);
  };
  auto deriv = [](std::span<const double> x, std::span<double> d) {
    std::fill(d.begin(), d.end(), 0.0);
    d[(1 * 3 + 2) * 3 + 0] = detail::flat_psi_prime(x[0]) - detail::flat_psi_prime(-x[0]);
  };
  return Frame("flat_phi", 3, 2, std::move(box), coeff, deriv);
}

inline std::vector<std::string> builtin_frame_names() {
  return {"euclidean1", "euclidean2", "euclidean3", "heisenberg1", "grushin", "flat_phi"};
}

// Looks up a built-in frame. An empty box selects the frame's default box.
inline Frame frame_by_name(std::string_view name, Box box = {}) {
  if (name.starts_with("euclidean")) {
    const std::string_view digits = name.substr(9);
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string_view::npos) {
      const int n = std::stoi(std::string(digits));
      if (n >= 1 && n <= 6) return euclidean_frame(n, std::move(box));
    }
  }
  if (name == "heisenberg1") return heisenberg_frame(std::move(box));
  if (name == "grushin") return grushin_frame(std::move(box));
  if (name == "flat_phi") return flat_phi_frame(std::move(box));
  throw ParameterError("unknown frame '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Custom frames from a text definition:
//
//   # comment
//   name = myframe
//   n = 3
//   m = 2
//   box = -1 1 -1 1 -1 1
//   c 1 1 = 1
//   c 1 3 = -x2
//   c 2 2 = 1
//   c 2 3 = x1
//
// Entries c j i (1-based) default to zero. Derivatives are taken by central
// differences.

inline Frame parse_frame_definition(std::string_view text) {
  std::string name = "custom";
  int n = 0, m = 0;
  std::vector<double> box_values;
  struct Entry {
    int j, i;
    std::string expr;
    int line;
  };
  std::vector<Entry> entries;

  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("frame definition line " + std::to_string(line_no) + ": missing '='");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream ks(key);
    std::string head;
    ks >> head;
    try {
      if (head == "name") {
        name = value;
      } else if (head == "n") {
        n = std::stoi(value);
      } else if (head == "m") {
        m = std::stoi(value);
      } else if (head == "box") {
        std::istringstream vs(value);
        double v;
        while (vs >> v) box_values.push_back(v);
      } else if (head == "c") {
        Entry e{0, 0, value, line_no};
        if (!(ks >> e.j >> e.i)) throw ParseError("bad entry index");
        entries.push_back(std::move(e));
      } else {
        throw ParseError("unknown key '" + head + "'");
      }
    } catch (const ParseError& err) {
      throw ParseError("frame definition line " + std::to_string(line_no) + ": " + err.what());
    } catch (const std::exception&) {
      throw ParseError("frame definition line " + std::to_string(line_no) + ": bad value for '" +
                       head + "'");
    }
  }
  if (n < 1 || m < 1 || m > n) throw ParseError("frame definition: need 1 <= m <= n");
  Box box = Box::cube(n, -1.0, 1.0);
  if (!box_values.empty()) {
    if (box_values.size() != static_cast<std::size_t>(2 * n)) {
      throw ParseError("frame definition: box needs 2*n numbers");
    }
    for (int k = 0; k < n; ++k) {
      box.lo[k] = box_values[2 * k];
      box.hi[k] = box_values[2 * k + 1];
    }
  }
  auto table = std::make_shared<std::vector<Expression>>(static_cast<std::size_t>(m * n));
  auto present = std::make_shared<std::vector<char>>(static_cast<std::size_t>(m * n), 0);
  for (const Entry& e : entries) {
    if (e.j < 1 || e.j > m || e.i < 1 || e.i > n) {
      throw ParseError("frame definition line " + std::to_string(e.line) + ": index out of range");
    }
    const std::size_t slot = static_cast<std::size_t>((e.j - 1) * n + (e.i - 1));
    (*table)[slot] = Expression::parse(e.expr, n);
    (*present)[slot] = 1;
  }
  auto coeff = [table, present](std::span<const double> x, std::span<double> out) {
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = (*present)[s] ? (*table)[s](x) : 0.0;
  };
  return Frame(name, n, m, std::move(box), coeff);
}

inline Frame load_frame_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read frame file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_frame_definition(ss.str());
}

// ---------------------------------------------------------------------------
// Pointwise operations

inline constexpr double kRankThreshold = 1e-8;

inline void require_in_box(const Frame& frame, std::span<const double> x, double margin = 0.0) {
  if (static_cast<int>(x.size()) != frame.n()) {
    throw DomainError("point dimension " + std::to_string(x.size()) + " != frame dimension " +
                      std::to_string(frame.n()));
  }
  if (!frame.box().contains(x, margin)) {
    throw DomainError("point " + format_point(x) + " outside the box of frame '" + frame.name() +
                      "'");
  }
}

inline Eigen::MatrixXd eval_coeff(const Frame& frame, std::span<const double> x) {
  require_in_box(frame, x);
  return frame.coeff_matrix_raw(x);
}

// Full derivative array dc_{j,i}/dx_k, layout [(j*n + i)*n + k].
inline std::vector<double> coeff_deriv(const Frame& frame, std::span<const double> x) {
  require_in_box(frame, x);
  std::vector<double> d(static_cast<std::size_t>(frame.m() * frame.n() * frame.n()));
  frame.deriv_raw(x, d);
  return d;
}

// (sum_i dc_{j,i}/dx_i)_j: the zeroth-order part of div_X.
inline Eigen::VectorXd div_correction(const Frame& frame, std::span<const double> x) {
  const std::vector<double> d = coeff_deriv(frame, x);
  const int n = frame.n();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(frame.m());
  for (int j = 0; j < frame.m(); ++j) {
    for (int i = 0; i < n; ++i) out[j] += d[(j * n + i) * n + i];
  }
  return out;
}

struct RankInfo {
  int rank = 0;
  double smallest_singular_value = 0.0;
  double largest_singular_value = 0.0;
};

inline RankInfo numerical_rank(const Eigen::MatrixXd& a) {
  RankInfo info;
  if (a.size() == 0) return info;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const Eigen::VectorXd& s = svd.singularValues();
  info.largest_singular_value = s.size() ? s[0] : 0.0;
  info.smallest_singular_value = s.size() ? s[s.size() - 1] : 0.0;
  const double cutoff = kRankThreshold * info.largest_singular_value;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s[k] > cutoff) ++info.rank;
  }
  return info;
}

inline RankInfo lic_check(const Frame& frame, std::span<const double> x) {
  return numerical_rank(eval_coeff(frame, x));
}

// C~(x) = (C C^T)^{-1} C, a left inverse of C^T.
inline Eigen::MatrixXd left_inverse(const Frame& frame, std::span<const double> x) {
  const Eigen::MatrixXd c = eval_coeff(frame, x);
  const RankInfo info = numerical_rank(c);
  if (info.rank < frame.m()) {
    throw SingularFrameError("frame '" + frame.name() + "' is rank deficient (rank " +
                             std::to_string(info.rank) + " < " + std::to_string(frame.m()) +
                             ") at x=" + format_point(x));
  }
  const Eigen::MatrixXd gram = c * c.transpose();
  return gram.ldlt().solve(c);
}

// Ranks of span{X_j} plus all left-normed brackets up to length k+1, for
// k = 0..max_depth-1. Brackets [X,Y] = (DY)X - (DX)Y are formed by central
// differences on a small tensor stencil around x.
inline std::vector<int> hormander_probe(const Frame& frame, std::span<const double> x,
                                        int max_depth) {
  constexpr int kMaxDepth = 6;
  if (max_depth < 1 || max_depth > kMaxDepth) {
    throw ParameterError("hormander_probe: max_depth must be in [1, 6]");
  }
  const int n = frame.n();
  const int m = frame.m();
  const int radius = max_depth - 1;  // every bracket level consumes one stencil layer
  const double step = 5e-4 * frame.box().diameter();
  require_in_box(frame, x, radius * step);

  const int width = 2 * radius + 1;
  std::size_t npts = 1;
  for (int k = 0; k < n; ++k) npts *= static_cast<std::size_t>(width);
  std::vector<int> stride(n);
  {
    int s = 1;
    for (int k = n - 1; k >= 0; --k) {
      stride[k] = s;
      s *= width;
    }
  }
  auto offset_of = [&](std::size_t idx, int axis) {
    return static_cast<int>((idx / stride[axis]) % width) - radius;
  };

  // A vector field sampled on the stencil: npts * n values.
  using Sampled = std::vector<double>;
  std::vector<Sampled> base(m, Sampled(npts * n, 0.0));
  {
    std::vector<double> p(n), c(static_cast<std::size_t>(m * n));
    for (std::size_t idx = 0; idx < npts; ++idx) {
      for (int k = 0; k < n; ++k) p[k] = x[k] + step * offset_of(idx, k);
      frame.coeff_raw(p, c);
      for (int j = 0; j < m; ++j) {
        for (int k = 0; k < n; ++k) base[j][idx * n + k] = c[j * n + k];
      }
    }
  }
  const std::size_t center = npts / 2;

  Eigen::MatrixXd span_vectors(n, 0);
  auto append = [&](const Sampled& field) {
    span_vectors.conservativeResize(n, span_vectors.cols() + 1);
    for (int k = 0; k < n; ++k) span_vectors(k, span_vectors.cols() - 1) = field[center * n + k];
  };
  for (const Sampled& f : base) append(f);

  std::vector<int> ranks;
  ranks.push_back(numerical_rank(span_vectors).rank);

  std::vector<Sampled> level = base;
  for (int depth = 1; depth < max_depth; ++depth) {
    const int valid = radius - depth;  // nodes with |offset| <= valid get values
    std::vector<Sampled> next;
    next.reserve(level.size() * m);
    for (int j = 0; j < m; ++j) {
      for (const Sampled& y : level) {
        const Sampled& xf = base[j];
        Sampled out(npts * n, 0.0);
        for (std::size_t idx = 0; idx < npts; ++idx) {
          bool inside = true;
          for (int k = 0; k < n && inside; ++k) inside = std::abs(offset_of(idx, k)) <= valid;
          if (!inside) continue;
          for (int a = 0; a < n; ++a) {
            double acc = 0.0;
            for (int b = 0; b < n; ++b) {
              const std::size_t ip = idx + stride[b];
              const std::size_t im = idx - stride[b];
              const double dy = (y[ip * n + a] - y[im * n + a]) / (2.0 * step);
              const double dx = (xf[ip * n + a] - xf[im * n + a]) / (2.0 * step);
              acc += dy * xf[idx * n + b] - dx * y[idx * n + b];
            }
            out[idx * n + a] = acc;
          }
        }
        next.push_back(std::move(out));
      }
    }
    for (const Sampled& f : next) append(f);
    ranks.push_back(numerical_rank(span_vectors).rank);
    level = std::move(next);
  }
  return ranks;
}

}  // namespace cclab
