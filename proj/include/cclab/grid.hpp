// Uniform tensor grids over a frame's box, node fields, and the discrete
// horizontal operators built from centered differences.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cclab/errors.hpp"
#include "cclab/frames.hpp"

namespace cclab {

using Index = std::int64_t;
using ScalarField = std::vector<double>;

// m components per node, node-major.
class HorizontalField {
 public:
  HorizontalField() = default;
  HorizontalField(std::size_t nodes, int m) : m_(m), data_(nodes * static_cast<std::size_t>(m), 0.0) {}

  int m() const noexcept { return m_; }
  std::size_t nodes() const noexcept { return m_ ? data_.size() / m_ : 0; }

  double& operator()(Index node, int j) { return data_[static_cast<std::size_t>(node) * m_ + j]; }
  double operator()(Index node, int j) const {
    return data_[static_cast<std::size_t>(node) * m_ + j];
  }
  std::span<double> at(Index node) {
    return {data_.data() + static_cast<std::size_t>(node) * m_, static_cast<std::size_t>(m_)};
  }
  std::span<const double> at(Index node) const {
    return {data_.data() + static_cast<std::size_t>(node) * m_, static_cast<std::size_t>(m_)};
  }
  double norm_at(Index node) const {
    double s = 0.0;
    for (double v : at(node)) s += v * v;
    return std::sqrt(s);
  }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

 private:
  int m_ = 0;
  std::vector<double> data_;
};

// One symmetric m x m matrix per node; `valid` marks nodes where the stencil
// fit inside the grid.
struct MatrixField {
  int m = 0;
  std::vector<double> data;
  std::vector<char> valid;

  Eigen::Map<const Eigen::MatrixXd> at(Index node) const {
    return Eigen::Map<const Eigen::MatrixXd>(data.data() + static_cast<std::size_t>(node) * m * m, m, m);
  }
};

class Grid {
 public:
  // Optional predicate carving the domain out of the box: nodes where it is
  // false are treated as boundary (Dirichlet) nodes.
  using DomainPredicate = std::function<bool(std::span<const double>)>;

  Grid(Frame frame, std::vector<int> resolution, DomainPredicate inside = {})
      : frame_(std::make_shared<const Frame>(std::move(frame))),
        res_(std::move(resolution)),
        inside_(std::move(inside)) {
    const int n = frame_->n();
    if (static_cast<int>(res_.size()) == 1 && n > 1) res_.assign(n, res_[0]);
    if (static_cast<int>(res_.size()) != n) {
      throw ParameterError("grid: resolution needs one entry per axis");
    }
    h_.resize(n);
    stride_.resize(n);
    size_ = 1;
    for (int k = n - 1; k >= 0; --k) {
      if (res_[k] < 3) throw ParameterError("grid: need at least 3 nodes per axis");
      stride_[k] = size_;
      size_ *= res_[k];
      h_[k] = (frame_->box().hi[k] - frame_->box().lo[k]) / (res_[k] - 1);
    }
    cell_volume_ = 1.0;
    for (double h : h_) cell_volume_ *= h;

    const int m = frame_->m();
    coeff_.resize(static_cast<std::size_t>(size_) * m * n);
    interior_.assign(static_cast<std::size_t>(size_), 0);
    std::vector<double> x(n);
    for (Index idx = 0; idx < size_; ++idx) {
      point_into(idx, x);
      frame_->coeff_raw(x, std::span<double>(coeff_.data() + static_cast<std::size_t>(idx) * m * n,
                                             static_cast<std::size_t>(m * n)));
      bool in = true;
      for (int k = 0; k < n && in; ++k) {
        const Index c = coordinate(idx, k);
        in = c > 0 && c < res_[k] - 1;
      }
      if (in && inside_) in = inside_(x);
      interior_[idx] = in ? 1 : 0;
    }
    for (Index idx = 0; idx < size_; ++idx) {
      if (interior_[idx]) interior_nodes_.push_back(idx);
    }
    compute_depth();
  }

  const Frame& frame() const noexcept { return *frame_; }
  const DomainPredicate& predicate() const noexcept { return inside_; }
  int dim() const noexcept { return frame_->n(); }
  int m() const noexcept { return frame_->m(); }
  Index size() const noexcept { return size_; }
  const std::vector<int>& resolution() const noexcept { return res_; }
  double spacing(int axis) const { return h_[axis]; }
  const std::vector<double>& spacings() const noexcept { return h_; }
  double min_spacing() const { return *std::min_element(h_.begin(), h_.end()); }
  double max_spacing() const { return *std::max_element(h_.begin(), h_.end()); }
  Index stride(int axis) const { return stride_[axis]; }
  double cell_volume() const noexcept { return cell_volume_; }

  // Lebesgue measure of the discrete domain: cell volume times interior count.
  double measure() const noexcept { return cell_volume_ * static_cast<double>(interior_nodes_.size()); }

  Index coordinate(Index idx, int axis) const { return (idx / stride_[axis]) % res_[axis]; }

  Index index_of(std::span<const Index> coords) const {
    Index idx = 0;
    for (int k = 0; k < dim(); ++k) idx += coords[k] * stride_[k];
    return idx;
  }

  void point_into(Index idx, std::span<double> x) const {
    for (int k = 0; k < dim(); ++k) {
      x[k] = frame_->box().lo[k] + h_[k] * static_cast<double>(coordinate(idx, k));
    }
  }
  Point point(Index idx) const {
    Point x(dim());
    point_into(idx, x);
    return x;
  }

  // Node closest to x (clamped to the box).
  Index nearest_node(std::span<const double> x) const {
    Index idx = 0;
    for (int k = 0; k < dim(); ++k) {
      const double t = (x[k] - frame_->box().lo[k]) / h_[k];
      const Index c = std::clamp<Index>(static_cast<Index>(std::llround(t)), 0, res_[k] - 1);
      idx += c * stride_[k];
    }
    return idx;
  }
  Index nearest_node(std::initializer_list<double> x) const {
    return nearest_node(std::span<const double>(x.begin(), x.size()));
  }

  // Neighbour along `axis` in direction dir = +1/-1, or -1 when it would
  // leave the box.
  Index neighbor(Index idx, int axis, int dir) const {
    const Index c = coordinate(idx, axis) + dir;
    if (c < 0 || c >= res_[axis]) return -1;
    return idx + dir * stride_[axis];
  }

  bool is_interior(Index idx) const { return interior_[idx] != 0; }
  bool is_boundary(Index idx) const { return interior_[idx] == 0; }
  const std::vector<char>& interior_mask() const noexcept { return interior_; }
  const std::vector<Index>& interior_nodes() const noexcept { return interior_nodes_; }

  // Graph distance (axis steps) to the nearest boundary node; 0 on the boundary.
  int depth(Index idx) const { return depth_[idx]; }

  // Row-major m x n block C(x_idx).
  std::span<const double> coeff(Index idx) const {
    const std::size_t mn = static_cast<std::size_t>(m() * dim());
    return {coeff_.data() + static_cast<std::size_t>(idx) * mn, mn};
  }
  double coeff(Index idx, int j, int i) const {
    return coeff_[(static_cast<std::size_t>(idx) * m() + j) * dim() + i];
  }

  // Samples a function of position on every node.
  ScalarField sample(const std::function<double(std::span<const double>)>& fn) const {
    ScalarField out(static_cast<std::size_t>(size_));
    std::vector<double> x(dim());
    for (Index idx = 0; idx < size_; ++idx) {
      point_into(idx, x);
      out[idx] = fn(x);
    }
    return out;
  }

  ScalarField constant(double c) const { return ScalarField(static_cast<std::size_t>(size_), c); }

  bool same_layout(const Grid& other) const {
    if (res_ != other.res_ || interior_ != other.interior_ || frame_->n() != other.frame_->n()) {
      return false;
    }
    for (int k = 0; k < dim(); ++k) {
      if (frame_->box().lo[k] != other.frame_->box().lo[k] ||
          frame_->box().hi[k] != other.frame_->box().hi[k]) {
        return false;
      }
    }
    return frame_->name() == other.frame_->name();
  }

  // Sub-grid over the node index range [lo_k, hi_k] per axis, sharing the
  // frame and spacing. Its boundary layer is the sub-box surface.
  Grid sub_grid(std::span<const Index> lo, std::span<const Index> hi) const {
    Box box;
    std::vector<int> res(dim());
    for (int k = 0; k < dim(); ++k) {
      if (lo[k] < 0 || hi[k] >= res_[k] || hi[k] - lo[k] < 2) {
        throw ParameterError("sub_grid: invalid index range on axis " + std::to_string(k + 1));
      }
      box.lo.push_back(frame_->box().lo[k] + h_[k] * static_cast<double>(lo[k]));
      box.hi.push_back(frame_->box().lo[k] + h_[k] * static_cast<double>(hi[k]));
      res[k] = static_cast<int>(hi[k] - lo[k] + 1);
    }
    return Grid(frame_->with_box(std::move(box)), std::move(res));
  }

 private:
  void compute_depth() {
    depth_.assign(static_cast<std::size_t>(size_), std::numeric_limits<int>::max());
    std::deque<Index> queue;
    for (Index idx = 0; idx < size_; ++idx) {
      if (!interior_[idx]) {
        depth_[idx] = 0;
        queue.push_back(idx);
      }
    }
    while (!queue.empty()) {
      const Index idx = queue.front();
      queue.pop_front();
      for (int k = 0; k < dim(); ++k) {
        for (int dir : {-1, 1}) {
          const Index nb = neighbor(idx, k, dir);
          if (nb >= 0 && depth_[nb] > depth_[idx] + 1) {
            depth_[nb] = depth_[idx] + 1;
            queue.push_back(nb);
          }
        }
      }
    }
  }

  std::shared_ptr<const Frame> frame_;
  std::vector<int> res_;
  DomainPredicate inside_;
  std::vector<double> h_;
  std::vector<Index> stride_;
  Index size_ = 0;
  double cell_volume_ = 1.0;
  std::vector<double> coeff_;
  std::vector<char> interior_;
  std::vector<Index> interior_nodes_;
  std::vector<int> depth_;
};

// ---------------------------------------------------------------------------
// Differences

// D_i u at a node: centered where both neighbours exist, one-sided at the
// faces of the box.
inline double axis_difference(const Grid& grid, std::span<const double> u, Index idx, int axis) {
  const Index p = grid.neighbor(idx, axis, +1);
  const Index q = grid.neighbor(idx, axis, -1);
  const double h = grid.spacing(axis);
  if (p >= 0 && q >= 0) return (u[p] - u[q]) / (2.0 * h);
  if (p >= 0) return (u[p] - u[idx]) / h;
  return (u[idx] - u[q]) / h;
}

inline void x_gradient_at(const Grid& grid, std::span<const double> u, Index idx,
                          std::span<double> out) {
  const int n = grid.dim();
  const int m = grid.m();
  double d[8];
  std::vector<double> dbig;
  double* du = d;
  if (n > 8) {
    dbig.resize(n);
    du = dbig.data();
  }
  for (int i = 0; i < n; ++i) du[i] = axis_difference(grid, u, idx, i);
  const std::span<const double> c = grid.coeff(idx);
  for (int j = 0; j < m; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += c[j * n + i] * du[i];
    out[j] = acc;
  }
}

// (Xu)_j = sum_i c_{j,i} D_i u on every node (one-sided on box faces).
inline HorizontalField x_gradient(const Grid& grid, std::span<const double> u) {
  HorizontalField g(static_cast<std::size_t>(grid.size()), grid.m());
  for (Index idx = 0; idx < grid.size(); ++idx) x_gradient_at(grid, u, idx, g.at(idx));
  return g;
}

// Negative adjoint of the interior x_gradient under <u,v> = h^n sum_interior
// u v, with u extended by zero on the boundary. Writes zero on boundary nodes.
inline ScalarField x_divergence(const Grid& grid, const HorizontalField& field) {
  const int n = grid.dim();
  const int m = grid.m();
  // W_i = (F . C)_i on interior nodes, zero elsewhere.
  std::vector<double> w(static_cast<std::size_t>(grid.size()) * n, 0.0);
  for (Index idx : grid.interior_nodes()) {
    const std::span<const double> c = grid.coeff(idx);
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += field(idx, j) * c[j * n + i];
      w[static_cast<std::size_t>(idx) * n + i] = acc;
    }
  }
  ScalarField div(static_cast<std::size_t>(grid.size()), 0.0);
  for (Index idx : grid.interior_nodes()) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const Index p = grid.neighbor(idx, i, +1);
      const Index q = grid.neighbor(idx, i, -1);
      acc += (w[static_cast<std::size_t>(p) * n + i] - w[static_cast<std::size_t>(q) * n + i]) /
             (2.0 * grid.spacing(i));
    }
    div[idx] = acc;
  }
  return div;
}

// Symmetrised X_i X_j u at one node, composing x_gradient twice. Needs the
// node at least two cells away from the boundary.
inline Eigen::MatrixXd x_hessian_at(const Grid& grid, const HorizontalField& xu, Index idx) {
  if (grid.depth(idx) < 2) {
    throw StencilError("x_hessian: node " + std::to_string(idx) +
                       " is closer than two cells to the boundary");
  }
  const int n = grid.dim();
  const int m = grid.m();
  Eigen::MatrixXd d(m, n);  // d(j, k) = D_k (Xu)_j
  for (int k = 0; k < n; ++k) {
    const Index p = grid.neighbor(idx, k, +1);
    const Index q = grid.neighbor(idx, k, -1);
    for (int j = 0; j < m; ++j) d(j, k) = (xu(p, j) - xu(q, j)) / (2.0 * grid.spacing(k));
  }
  Eigen::MatrixXd xx(m, m);  // xx(i, j) = X_i X_j u
  const std::span<const double> c = grid.coeff(idx);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += c[i * n + k] * d(j, k);
      xx(i, j) = acc;
    }
  }
  return 0.5 * (xx + xx.transpose());
}

inline Eigen::MatrixXd x_hessian_at(const Grid& grid, std::span<const double> u, Index idx) {
  return x_hessian_at(grid, x_gradient(grid, u), idx);
}

inline MatrixField x_hessian(const Grid& grid, std::span<const double> u) {
  const int m = grid.m();
  MatrixField out;
  out.m = m;
  out.data.assign(static_cast<std::size_t>(grid.size()) * m * m, 0.0);
  out.valid.assign(static_cast<std::size_t>(grid.size()), 0);
  const HorizontalField xu = x_gradient(grid, u);
  for (Index idx = 0; idx < grid.size(); ++idx) {
    if (grid.depth(idx) < 2) continue;
    const Eigen::MatrixXd hmat = x_hessian_at(grid, xu, idx);
    std::copy(hmat.data(), hmat.data() + m * m, out.data.begin() + static_cast<std::ptrdiff_t>(idx) * m * m);
    out.valid[idx] = 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature and norms (interior sums weighted by the cell volume)

inline double integrate(const Grid& grid, std::span<const double> u) {
  double s = 0.0;
  for (Index idx : grid.interior_nodes()) s += u[idx];
  return s * grid.cell_volume();
}

inline double lp_norm(const Grid& grid, std::span<const double> u, double p) {
  if (!(p >= 1.0) || std::isinf(p)) throw ParameterError("lp_norm: p must lie in [1, inf)");
  double scale = 0.0;
  for (Index idx : grid.interior_nodes()) scale = std::max(scale, std::abs(u[idx]));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (Index idx : grid.interior_nodes()) s += std::pow(std::abs(u[idx]) / scale, p);
  return scale * std::pow(s * grid.cell_volume(), 1.0 / p);
}

inline double lp_norm(const Grid& grid, const HorizontalField& field, double p) {
  ScalarField mag(static_cast<std::size_t>(grid.size()), 0.0);
  for (Index idx : grid.interior_nodes()) mag[idx] = field.norm_at(idx);
  return lp_norm(grid, mag, p);
}

inline double sup_norm(std::span<const double> u) {
  double s = 0.0;
  for (double v : u) s = std::max(s, std::abs(v));
  return s;
}

// sup over interior nodes of |F|.
inline double sup_norm(const Grid& grid, const HorizontalField& field) {
  double s = 0.0;
  for (Index idx : grid.interior_nodes()) s = std::max(s, field.norm_at(idx));
  return s;
}

// ---------------------------------------------------------------------------
// CSV export/import. Header x1..xn followed by value columns; one row per
// node in index order; 17 significant digits.

struct CsvColumn {
  std::string name;
  std::span<const double> values;  // one per node
};

inline void write_csv(std::ostream& os, const Grid& grid, std::span<const CsvColumn> columns) {
  const int n = grid.dim();
  for (int k = 0; k < n; ++k) os << (k ? "," : "") << 'x' << (k + 1);
  for (const CsvColumn& c : columns) os << ',' << c.name;
  os << '\n';
  os << std::setprecision(17);
  std::vector<double> x(n);
  for (Index idx = 0; idx < grid.size(); ++idx) {
    grid.point_into(idx, x);
    for (int k = 0; k < n; ++k) os << (k ? "," : "") << x[k];
    for (const CsvColumn& c : columns) os << ',' << c.values[idx];
    os << '\n';
  }
}

inline void write_scalar_csv(const std::string& path, const Grid& grid, std::span<const double> u,
                             const std::string& name = "value") {
  std::ofstream os(path);
  if (!os) throw ParameterError("cannot write '" + path + "'");
  const CsvColumn col{name, u};
  write_csv(os, grid, std::span<const CsvColumn>(&col, 1));
}

inline void write_horizontal_csv(const std::string& path, const Grid& grid,
                                 const HorizontalField& field) {
  std::ofstream os(path);
  if (!os) throw ParameterError("cannot write '" + path + "'");
  std::vector<ScalarField> comps(field.m(), ScalarField(static_cast<std::size_t>(grid.size())));
  for (Index idx = 0; idx < grid.size(); ++idx) {
    for (int j = 0; j < field.m(); ++j) comps[j][idx] = field(idx, j);
  }
  std::vector<CsvColumn> cols;
  for (int j = 0; j < field.m(); ++j) cols.push_back({"v" + std::to_string(j + 1), comps[j]});
  write_csv(os, grid, cols);
}

// Reads the last column of a grid CSV written in node order.
inline ScalarField read_scalar_csv(const std::string& path, const Grid& grid) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read field file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("field file '" + path + "' is empty");
  ScalarField out;
  out.reserve(static_cast<std::size_t>(grid.size()));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find_last_of(',');
    const std::string cell = comma == std::string::npos ? line : line.substr(comma + 1);
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ParseError("field file '" + path + "': bad value '" + cell + "'");
    }
  }
  if (static_cast<Index>(out.size()) != grid.size()) {
    throw ParseError("field file '" + path + "' has " + std::to_string(out.size()) +
                     " rows, grid has " + std::to_string(grid.size()) + " nodes");
  }
  return out;
}

}  // namespace cclab
