#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "cclab/grid.hpp"

namespace cclab {
namespace {

TEST(Grid, LayoutAndMasks) {
  const Grid grid(euclidean_frame(2), {5, 9});
  EXPECT_EQ(grid.size(), 45);
  EXPECT_DOUBLE_EQ(grid.spacing(0), 0.25);
  EXPECT_DOUBLE_EQ(grid.spacing(1), 0.125);
  EXPECT_EQ(grid.interior_nodes().size(), 3u * 7u);
  for (Index k = 0; k < grid.size(); ++k) EXPECT_NE(grid.is_interior(k), grid.is_boundary(k));
  // Last axis runs fastest.
  const Point p = grid.point(1);
  EXPECT_DOUBLE_EQ(p[0], 0.0);
  EXPECT_DOUBLE_EQ(p[1], 0.125);
  EXPECT_EQ(grid.nearest_node(std::vector<double>{0.26, 0.13}), 1 * 9 + 1);
  EXPECT_DOUBLE_EQ(grid.measure(), 21 * 0.25 * 0.125);
}

TEST(Grid, MaskedDomainBoundaryCoversHole) {
  auto outside_disc = [](std::span<const double> x) {
    return std::hypot(x[0] - 0.5, x[1] - 0.5) > 0.2;
  };
  const Grid grid(euclidean_frame(2), {33}, outside_disc);
  const Index centre = grid.nearest_node(std::vector<double>{0.5, 0.5});
  EXPECT_TRUE(grid.is_boundary(centre));
  EXPECT_EQ(grid.depth(centre), 0);
  const Index corner = grid.nearest_node(std::vector<double>{0.0, 0.0});
  EXPECT_TRUE(grid.is_boundary(corner));
  const Index inner = grid.nearest_node(std::vector<double>{0.1, 0.1});
  EXPECT_TRUE(grid.is_interior(inner));
  EXPECT_GE(grid.depth(inner), 2);
}

TEST(Grid, RejectsBadResolution) {
  EXPECT_THROW(Grid(euclidean_frame(2), {2, 5}), ParameterError);
  EXPECT_THROW(Grid(euclidean_frame(2), {5, 5, 5}), ParameterError);
}

TEST(XGradient, ExactOnAffineEuclidean) {
  const Grid grid(euclidean_frame(2), {17});
  const ScalarField u = grid.sample([](auto x) { return x[0]; });
  const HorizontalField g = x_gradient(grid, u);
  for (Index k = 0; k < grid.size(); ++k) {
    EXPECT_NEAR(g(k, 0), 1.0, 1e-13);
    EXPECT_NEAR(g(k, 1), 0.0, 1e-13);
  }
}

TEST(XGradient, HeisenbergVerticalCoordinate) {
  const Grid grid(heisenberg_frame(), {9});
  const ScalarField u = grid.sample([](auto x) { return x[2]; });
  const HorizontalField g = x_gradient(grid, u);
  for (Index k = 0; k < grid.size(); ++k) {
    const Point x = grid.point(k);
    EXPECT_NEAR(g(k, 0), -x[1], 1e-13);
    EXPECT_NEAR(g(k, 1), x[0], 1e-13);
  }
}

TEST(XGradient, GrushinVertical) {
  const Grid grid(grushin_frame(), {17});
  const ScalarField u = grid.sample([](auto x) { return x[1]; });
  const HorizontalField g = x_gradient(grid, u);
  const Index k = grid.nearest_node(std::vector<double>{0.5, 0.25});
  EXPECT_NEAR(g(k, 0), 0.0, 1e-14);
  EXPECT_NEAR(g(k, 1), 0.5, 1e-14);
}

TEST(XGradient, ExactOnAffineForEveryFrame) {
  for (const std::string& name : builtin_frame_names()) {
    const Grid grid(frame_by_name(name), {7});
    const int n = grid.dim();
    std::vector<double> a(n);
    for (int k = 0; k < n; ++k) a[k] = 0.3 * (k + 1) - 0.5;
    const ScalarField u = grid.sample([&](auto x) {
      double s = 0.25;
      for (int k = 0; k < n; ++k) s += a[k] * x[k];
      return s;
    });
    const HorizontalField g = x_gradient(grid, u);
    for (Index idx = 0; idx < grid.size(); ++idx) {
      for (int j = 0; j < grid.m(); ++j) {
        double expect = 0.0;
        for (int i = 0; i < n; ++i) expect += grid.coeff(idx, j, i) * a[i];
        ASSERT_NEAR(g(idx, j), expect, 1e-12) << name;
      }
    }
  }
}

double gradient_error(int res) {
  const Grid grid(heisenberg_frame(), {res});
  auto fn = [](auto x) { return std::sin(x[0] + 0.5 * x[2]) * std::cos(x[1]); };
  const ScalarField u = grid.sample(fn);
  const HorizontalField g = x_gradient(grid, u);
  double err = 0.0;
  for (Index k : grid.interior_nodes()) {
    const Point x = grid.point(k);
    if (std::abs(x[0]) > 0.5 || std::abs(x[1]) > 0.5 || std::abs(x[2]) > 0.5) continue;
    const double ux = std::cos(x[0] + 0.5 * x[2]) * std::cos(x[1]);
    const double uy = -std::sin(x[0] + 0.5 * x[2]) * std::sin(x[1]);
    const double ut = 0.5 * ux;
    err = std::max(err, std::abs(g(k, 0) - (ux - x[1] * ut)));
    err = std::max(err, std::abs(g(k, 1) - (uy + x[0] * ut)));
  }
  return err;
}

TEST(XGradient, SecondOrderUnderRefinement) {
  const double coarse = gradient_error(17);
  const double fine = gradient_error(33);
  EXPECT_GE(std::log2(coarse / fine), 1.9);
}

TEST(XDivergence, ZeroField) {
  const Grid grid(heisenberg_frame(), {7});
  const HorizontalField f(static_cast<std::size_t>(grid.size()), 2);
  for (double v : x_divergence(grid, f)) EXPECT_EQ(v, 0.0);
}

TEST(XDivergence, HandComputedOneDimensional) {
  const Grid grid(euclidean_frame(1), {5});
  HorizontalField f(5, 1);
  for (Index k : grid.interior_nodes()) f(k, 0) = grid.point(k)[0];
  const ScalarField div = x_divergence(grid, f);
  EXPECT_DOUBLE_EQ(div[1], 1.0);
  EXPECT_DOUBLE_EQ(div[2], 1.0);
  EXPECT_DOUBLE_EQ(div[3], -1.0);
  EXPECT_EQ(div[0], 0.0);
  EXPECT_EQ(div[4], 0.0);
}

TEST(XDivergence, SummationByPartsOnRandomPairs) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  auto outside_disc = [](std::span<const double> x) { return std::hypot(x[0], x[1]) > 0.3; };
  const std::vector<Grid> grids = {Grid(heisenberg_frame(), {9, 11, 7}),
                                   Grid(grushin_frame(), {15}, outside_disc),
                                   Grid(flat_phi_frame(), {7})};
  for (const Grid& grid : grids) {
    for (int trial = 0; trial < 50; ++trial) {
      ScalarField u(static_cast<std::size_t>(grid.size()), 0.0);
      for (Index k : grid.interior_nodes()) u[k] = normal(rng);
      HorizontalField f(static_cast<std::size_t>(grid.size()), grid.m());
      for (double& v : f.data()) v = normal(rng);
      const HorizontalField gu = x_gradient(grid, u);
      const ScalarField div = x_divergence(grid, f);
      double lhs = 0.0, rhs = 0.0, scale = 0.0;
      for (Index k : grid.interior_nodes()) {
        for (int j = 0; j < grid.m(); ++j) {
          lhs += gu(k, j) * f(k, j);
          scale += std::abs(gu(k, j) * f(k, j));
        }
        rhs -= u[k] * div[k];
      }
      ASSERT_LE(std::abs(lhs - rhs), 1e-12 * scale) << grid.frame().name();
    }
  }
}

TEST(XHessian, EuclideanQuadratic) {
  const Grid grid(euclidean_frame(2), {17});
  const ScalarField u = grid.sample([](auto x) { return x[0] * x[0]; });
  const MatrixField h = x_hessian(grid, u);
  for (Index k = 0; k < grid.size(); ++k) {
    if (!h.valid[k]) continue;
    EXPECT_NEAR(h.at(k)(0, 0), 2.0, 1e-10);
    EXPECT_NEAR(h.at(k)(0, 1), 0.0, 1e-10);
    EXPECT_NEAR(h.at(k)(1, 1), 0.0, 1e-10);
  }
}

TEST(XHessian, HeisenbergVerticalCoordinateSymmetrisesToZero) {
  const Grid grid(heisenberg_frame(), {9});
  const ScalarField u = grid.sample([](auto x) { return x[2]; });
  const MatrixField h = x_hessian(grid, u);
  int checked = 0;
  for (Index k = 0; k < grid.size(); ++k) {
    if (!h.valid[k]) continue;
    EXPECT_LE(h.at(k).cwiseAbs().maxCoeff(), 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(XHessian, AffineIsZeroAndNearBoundaryThrows) {
  const Grid grid(heisenberg_frame(), {11});
  const ScalarField u =
      grid.sample([](auto x) { return 0.3 * x[0] - 2.0 * x[1] + 0.7 * x[2] + 1.0; });
  const MatrixField h = x_hessian(grid, u);
  int checked = 0;
  for (Index k = 0; k < grid.size(); ++k) {
    if (!h.valid[k]) continue;
    EXPECT_LE(h.at(k).cwiseAbs().maxCoeff(), 1e-10);
    ++checked;
  }
  EXPECT_GT(checked, 0);
  const Index near = grid.nearest_node(std::vector<double>{-1.0 + grid.spacing(0), 0.0, 0.0});
  EXPECT_THROW(x_hessian_at(grid, u, near), StencilError);
}

// Grushin, u = 0.3x - 2y: Xu = (0.3, -2x), so X1 X2 u = -2, X2 X1 u = 0 and the
// symmetrized off-diagonal entry is -1.
TEST(XHessian, GrushinAffineHasMixedTerm) {
  const Grid grid(grushin_frame(), {13});
  const ScalarField u = grid.sample([](auto x) { return 0.3 * x[0] - 2.0 * x[1] + 1.0; });
  const MatrixField h = x_hessian(grid, u);
  for (Index k = 0; k < grid.size(); ++k) {
    if (!h.valid[k]) continue;
    const Eigen::MatrixXd m = h.at(k);
    EXPECT_NEAR(m(0, 0), 0.0, 1e-10);
    EXPECT_NEAR(m(1, 1), 0.0, 1e-10);
    EXPECT_NEAR(m(0, 1), -1.0, 1e-10);
    EXPECT_NEAR(m(1, 0), -1.0, 1e-10);
  }
}

TEST(Quadrature, ConstantOnUnitSquare) {
  const Grid grid(euclidean_frame(2), {65});
  const ScalarField one = grid.constant(1.0);
  EXPECT_NEAR(integrate(grid, one), 1.0, 2.0 * grid.spacing(0));
}

TEST(Quadrature, LinearOnUnitInterval) {
  const Grid grid(euclidean_frame(1), {257});
  const ScalarField u = grid.sample([](auto x) { return x[0]; });
  EXPECT_NEAR(integrate(grid, u), 0.5, grid.spacing(0));
}

TEST(Quadrature, Norms) {
  const Grid grid(euclidean_frame(2), {9});
  const HorizontalField zero(static_cast<std::size_t>(grid.size()), 2);
  EXPECT_EQ(lp_norm(grid, zero, 3.0), 0.0);
  const ScalarField u = grid.constant(2.0);
  EXPECT_NEAR(lp_norm(grid, u, 2.0), 2.0 * std::sqrt(grid.measure()), 1e-14);
  EXPECT_EQ(sup_norm(u), 2.0);
  EXPECT_THROW(lp_norm(grid, u, 0.5), ParameterError);
  // Large exponents stay finite.
  const ScalarField big = grid.constant(50.0);
  EXPECT_NEAR(lp_norm(grid, big, 400.0), 50.0 * std::pow(grid.measure(), 1.0 / 400.0), 1e-10);
}

TEST(Csv, HeaderOrderAndPrecision) {
  const Grid grid(euclidean_frame(2), {3});
  const ScalarField u = grid.sample([](auto x) { return x[0] + 1.0 / 3.0; });
  std::ostringstream os;
  const CsvColumn col{"value", u};
  write_csv(os, grid, std::span<const CsvColumn>(&col, 1));
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x1,x2,value");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0,0.33333333333333331");
  std::getline(in, line);
  EXPECT_EQ(line, "0,0.5,0.33333333333333331");
}

TEST(Csv, ScalarRoundTripIsExact) {
  const Grid grid(heisenberg_frame(), {5});
  std::mt19937_64 rng(3);
  ScalarField u(static_cast<std::size_t>(grid.size()));
  for (double& v : u) v = std::uniform_real_distribution<double>(-1e3, 1e3)(rng);
  const std::string path = ::testing::TempDir() + "/cclab_roundtrip.csv";
  write_scalar_csv(path, grid, u);
  EXPECT_EQ(read_scalar_csv(path, grid), u);
  const Grid other(heisenberg_frame(), {6});
  EXPECT_THROW(read_scalar_csv(path, other), ParseError);
}

TEST(SubGrid, SharesSpacingAndFrame) {
  const Grid grid(heisenberg_frame(), {17});
  const std::vector<Index> lo{4, 5, 6}, hi{10, 12, 9};
  const Grid sub = grid.sub_grid(lo, hi);
  EXPECT_EQ(sub.resolution(), (std::vector<int>{7, 8, 4}));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(sub.spacing(k), grid.spacing(k), 1e-15);
  const Point corner = sub.point(0);
  EXPECT_NEAR(corner[0], grid.point(grid.index_of(lo))[0], 1e-15);
  EXPECT_NEAR(sub.coeff(0, 0, 2), grid.coeff(grid.index_of(lo), 0, 2), 1e-15);
}

}  // namespace
}  // namespace cclab
