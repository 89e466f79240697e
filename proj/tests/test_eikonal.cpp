#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cclab/eikonal.hpp"
#include "heisenberg_oracle.hpp"

using namespace cclab;

namespace {

// Pairs along the axis `axis` through each of the given source points.
std::vector<DistancePair> axis_pairs(const Grid& grid, const std::vector<Point>& sources, int axis) {
  std::vector<DistancePair> out;
  for (const Point& s : sources) {
    const DistanceField f = solve_eikonal(grid, Source::at(s));
    const Index c = grid.nearest_node(s);
    const Index base = c - grid.coordinate(c, axis) * grid.stride(axis);
    for (Index j = 0; j < grid.resolution()[axis]; ++j) {
      const Index k = base + j * grid.stride(axis);
      const double sep = std::abs(grid.point(k)[axis] - grid.point(c)[axis]);
      if (sep < 0.099 || sep > 0.801) continue;
      out.push_back({grid.point(c), grid.point(k), f.d[k]});
    }
  }
  return out;
}

double observed_order(double coarse, double fine) { return std::log2(coarse / fine); }

}  // namespace

TEST(SolveEikonal, EuclideanSquareCentre) {
  for (int res : {17, 33, 65}) {
    const Grid grid(euclidean_frame(2), {res});
    const DistanceField f = solve_eikonal(grid, Source::boundary());
    EXPECT_NEAR(f.d[grid.nearest_node({0.5, 0.5})], 0.5, 2.0 * grid.spacing(0)) << res;
    EXPECT_LE(f.last_update, 1e-8);
  }
}

TEST(SolveEikonal, GrushinPointSource) {
  const Grid grid(grushin_frame(), {33});
  const DistanceField f = solve_eikonal(grid, Source::at({-0.5, 0.0}));
  EXPECT_NEAR(f.d[grid.nearest_node({0.5, 0.0})], 1.0, 3.0 * grid.spacing(0));
}

TEST(SolveEikonal, HeisenbergPointSourceAlongXAxis) {
  const Grid grid(heisenberg_frame(), {33});
  const DistanceField f = solve_eikonal(grid, Source::at({0.0, 0.0, 0.0}));
  for (double a : {0.25, 0.5}) {
    EXPECT_NEAR(f.d[grid.nearest_node({a, 0.0, 0.0})], a, 3.0 * grid.spacing(0));
    EXPECT_NEAR(f.d[grid.nearest_node({-a, 0.0, 0.0})], a, 3.0 * grid.spacing(0));
    EXPECT_NEAR(f.d[grid.nearest_node({0.0, a, 0.0})], a, 3.0 * grid.spacing(0));
  }
}

TEST(SolveEikonal, NonNegativeAndZeroExactlyOnSource) {
  const Grid grid(grushin_frame(), {25});
  for (const Source& src : {Source::boundary(), Source::at({0.25, -0.5})}) {
    const DistanceField f = solve_eikonal(grid, src);
    for (Index k = 0; k < grid.size(); ++k) {
      EXPECT_GE(f.d[k], 0.0);
      if (f.source_mask[k]) {
        EXPECT_EQ(f.d[k], 0.0);
      } else {
        EXPECT_GT(f.d[k], 0.0);
      }
    }
  }
}

TEST(SolveEikonal, BoundarySourceIsZeroOnBoundary) {
  const Grid grid(heisenberg_frame(), {9});
  const DistanceField f = solve_eikonal(grid, Source::boundary());
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.is_boundary(k)) {
      EXPECT_EQ(f.d[k], 0.0);
    }
  }
}

TEST(SolveEikonal, InvalidSourcesRejected) {
  const Grid grid(euclidean_frame(2), {9});
  EXPECT_THROW(solve_eikonal(grid, Source::at({2.0, 0.5})), ParameterError);
  EXPECT_THROW(solve_eikonal(grid, Source::node_set({})), ParameterError);
  EXPECT_THROW(solve_eikonal(grid, Source::node_set({grid.size()})), ParameterError);
  EikonalConfig cfg;
  cfg.refine = 0;
  EXPECT_THROW(solve_eikonal(grid, Source::boundary(), cfg), ParameterError);
}

TEST(SolveEikonal, SweepLimitRaises) {
  const Grid grid(heisenberg_frame(), {9});
  EikonalConfig cfg;
  cfg.max_sweeps = 2;
  EXPECT_THROW(solve_eikonal(grid, Source::boundary(), cfg), ConvergenceError);
}

TEST(SolveEikonal, UpdatesDecreaseMonotonically) {
  const Grid grid(grushin_frame(), {33});
  const DistanceField f = solve_eikonal(grid, Source::boundary());
  ASSERT_FALSE(f.update_trace.empty());
  EXPECT_LE(f.update_trace.back(), 1e-8);
}

TEST(SolveEikonal, MatchesHeisenbergBoxDistance) {
  double prev = 0.0;
  for (int res : {17, 33}) {
    const Grid grid(heisenberg_frame(), {res});
    const DistanceField f = solve_eikonal(grid, Source::boundary());
    double err = 0.0;
    for (Index k = 0; k < grid.size(); ++k) {
      const Point x = grid.point(k);
      err = std::max(err, std::abs(f.d[k] - cclab_test::heisenberg_box_distance(x[0], x[1], x[2])));
    }
    EXPECT_LE(err, 0.3) << res;
    if (prev > 0.0) {
      EXPECT_LT(err, prev);
    }
    prev = err;
  }
}

TEST(SolveEikonal, HeisenbergTAxisAgainstClosedForm) {
  const Grid grid(heisenberg_frame(), {33});
  const DistanceField f = solve_eikonal(grid, Source::at({0.0, 0.0, 0.0}));
  for (double s : {0.25, 0.5}) {
    const double exact = cclab_test::heisenberg_t_axis_distance(s);
    EXPECT_NEAR(f.d[grid.nearest_node({0.0, 0.0, s})], exact, 0.2 * exact) << s;
  }
}

TEST(SolveEikonal, TriangleInequality) {
  const Grid grid(grushin_frame(), {33});
  std::mt19937 rng(3);
  std::uniform_int_distribution<Index> pick(0, grid.size() - 1);
  std::vector<Index> anchors;
  std::vector<DistanceField> fields;
  for (int i = 0; i < 8; ++i) {
    const Index a = pick(rng);
    anchors.push_back(a);
    fields.push_back(solve_eikonal(grid, Source::node_set({a})));
  }
  const double slack = 5.0 * grid.spacing(0);
  for (int trial = 0; trial < 100; ++trial) {
    const int ia = static_cast<int>(rng() % anchors.size());
    int ib = static_cast<int>(rng() % anchors.size());
    if (ib == ia) ib = (ib + 1) % static_cast<int>(anchors.size());
    const Index c = pick(rng);
    const double dac = fields[ia].d[c];
    const double dab = fields[ia].d[anchors[ib]];
    const double dbc = fields[ib].d[c];
    EXPECT_LE(dac, dab + dbc + slack) << "trial " << trial;
  }
}

TEST(SolveEikonal, TriangleInequalityHeisenberg) {
  const Grid grid(heisenberg_frame(), {17});
  std::mt19937 rng(5);
  std::uniform_int_distribution<Index> pick(0, grid.size() - 1);
  std::vector<Index> anchors;
  std::vector<DistanceField> fields;
  for (int i = 0; i < 5; ++i) {
    Index a = pick(rng);
    while (!grid.is_interior(a)) a = pick(rng);
    anchors.push_back(a);
    fields.push_back(solve_eikonal(grid, Source::node_set({a})));
  }
  const double slack = 5.0 * grid.spacing(0);
  for (int trial = 0; trial < 100; ++trial) {
    const int ia = static_cast<int>(rng() % anchors.size());
    const int ib = static_cast<int>((ia + 1 + rng() % (anchors.size() - 1)) % anchors.size());
    const Index c = pick(rng);
    EXPECT_LE(fields[ia].d[c], fields[ia].d[anchors[ib]] + fields[ib].d[c] + slack) << trial;
  }
}

TEST(SolveEikonal, RefinementOrderOnAnalyticValues) {
  // Euclidean centre: the only analytic value with a nonzero discretisation error.
  double errs[2];
  for (int i = 0; i < 2; ++i) {
    const Grid grid(euclidean_frame(2), {i == 0 ? 33 : 65});
    errs[i] = std::abs(solve_eikonal(grid, Source::boundary()).d[grid.nearest_node({0.5, 0.5})] - 0.5);
  }
  EXPECT_GE(observed_order(errs[0], errs[1]), 0.8);

  // The horizontal-line values are reproduced exactly at every resolution.
  for (int res : {17, 33}) {
    const Grid gg(grushin_frame(), {res});
    EXPECT_NEAR(solve_eikonal(gg, Source::at({-0.5, 0.0})).d[gg.nearest_node({0.5, 0.0})], 1.0, 1e-9);
    const Grid hg(heisenberg_frame(), {res});
    const DistanceField hf = solve_eikonal(hg, Source::at({0.0, 0.0, 0.0}));
    EXPECT_NEAR(hf.d[hg.nearest_node({0.25, 0.0, 0.0})], 0.25, 1e-9);
    EXPECT_NEAR(hf.d[hg.nearest_node({0.5, 0.0, 0.0})], 0.5, 1e-9);
  }
}

TEST(SolveEikonal, RefineOptionRestrictsNestedSolve) {
  const Grid coarse(euclidean_frame(2), {17});
  const Grid fine(euclidean_frame(2), {33});
  EikonalConfig cfg;
  cfg.refine = 2;
  const DistanceField a = solve_eikonal(coarse, Source::boundary(), cfg);
  const DistanceField b = solve_eikonal(fine, Source::boundary());
  for (Index k = 0; k < coarse.size(); ++k) {
    EXPECT_DOUBLE_EQ(a.d[k], b.d[fine.nearest_node(coarse.point(k))]);
  }
}

TEST(Residual, EuclideanSquareOffRidge) {
  double prev_l1 = 1e300;
  for (int res : {33, 65}) {
    const Grid grid(euclidean_frame(2), {res});
    const DistanceField f = solve_eikonal(grid, Source::boundary());
    const EikonalResidual r = eikonal_residual_check(grid, f);
    EXPECT_LE(r.sup, 0.15) << res;
    EXPECT_GT(r.checked_count, 0);
    EXPECT_GT(r.ridge_count, 0);
    EXPECT_LT(r.l1, prev_l1);
    prev_l1 = r.l1;
    // The diagonals of the square are the ridge of the distance function.
    EXPECT_TRUE(r.ridge[grid.nearest_node({0.25, 0.25})]);
    EXPECT_FALSE(r.ridge[grid.nearest_node({0.5, 0.2})]);
  }
}

TEST(GraphDistance, AxisControlsOverestimate) {
  const Grid grid(euclidean_frame(2), {33});
  ControlGraphConfig axis;
  for (int j = 0; j < 2; ++j) {
    for (double s : {1.0, -1.0}) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
      a[j] = s;
      axis.controls.push_back(a);
    }
  }
  const Index src = grid.nearest_node({0.25, 0.25});
  const DistanceField f = graph_distance(grid, Source::node_set({src}), axis);
  const Point c = grid.point(src);
  for (Index k = 0; k < grid.size(); ++k) {
    const Point x = grid.point(k);
    EXPECT_GE(f.d[k], std::hypot(x[0] - c[0], x[1] - c[1]) - 1e-12);
  }
  const Index far = grid.nearest_node({0.75, 0.75});
  EXPECT_NEAR(f.d[far], 1.0, 1e-9);
}

TEST(GraphDistance, DiagonalControlsFromBoundary) {
  const Grid grid(euclidean_frame(2), {33});
  const DistanceField f = graph_distance(grid, Source::boundary());
  EXPECT_NEAR(f.d[grid.nearest_node({0.5, 0.5})], 0.5, 0.075);
  for (Index k = 0; k < grid.size(); ++k) {
    if (grid.is_boundary(k)) {
      EXPECT_EQ(f.d[k], 0.0);
    }
  }
}

TEST(GraphDistance, AgreesWithSweepingOnHeisenbergAxis) {
  const Grid grid(heisenberg_frame(), {33});
  const DistanceField g = graph_distance(grid, Source::at({0.0, 0.0, 0.0}));
  const DistanceField e = solve_eikonal(grid, Source::at({0.0, 0.0, 0.0}));
  for (double a : {0.25, 0.5}) {
    const Index k = grid.nearest_node({a, 0.0, 0.0});
    EXPECT_NEAR(g.d[k], e.d[k], 0.1 * e.d[k]);
  }
}

TEST(GraphDistance, RejectsSourceOutsideGrid) {
  const Grid grid(heisenberg_frame(), {9});
  EXPECT_THROW(graph_distance(grid, Source::at({0.0, 0.0, 3.0})), ParameterError);
}

TEST(MetricEquivalence, EuclideanIsLinear) {
  const Grid grid(euclidean_frame(2), {33});
  std::vector<DistancePair> pairs;
  for (double y0 : {0.3, 0.5}) {
    const DistanceField f = solve_eikonal(grid, Source::at({0.5, y0}));
    const Index c = grid.nearest_node({0.5, y0});
    for (Index k = 0; k < grid.size(); k += 7) {
      const double sep = std::hypot(grid.point(k)[0] - grid.point(c)[0], grid.point(k)[1] - grid.point(c)[1]);
      if (sep < 0.099 || sep > 0.801) continue;
      pairs.push_back({grid.point(c), grid.point(k), f.d[k]});
    }
  }
  const MetricFit fit = metric_equivalence_probe(pairs);
  EXPECT_GE(fit.r_fit, 0.95);
  EXPECT_LE(fit.r_fit, 1.05);
  EXPECT_LE(fit.c_lower, fit.c_upper);
}

TEST(MetricEquivalence, HeisenbergTAxis) {
  const Grid grid(heisenberg_frame(), {33});
  const std::vector<DistancePair> pairs = axis_pairs(grid, {{0, 0, -0.2}, {0, 0, 0}, {0, 0, 0.2}}, 2);
  ASSERT_GE(pairs.size(), 50u);
  const MetricFit fit = metric_equivalence_probe(pairs);
  EXPECT_GE(fit.r_fit, 1.7);
  EXPECT_LE(fit.r_fit, 2.3);
}

TEST(MetricEquivalence, GrushinYAxis) {
  const Grid grid(grushin_frame(), {33});
  const std::vector<DistancePair> pairs = axis_pairs(grid, {{0, -0.2}, {0, 0}, {0, 0.2}}, 1);
  ASSERT_GE(pairs.size(), 50u);
  const MetricFit fit = metric_equivalence_probe(pairs);
  EXPECT_GE(fit.r_fit, 1.7);
  EXPECT_LE(fit.r_fit, 2.3);
}

TEST(MetricEquivalence, ExactPowerLawRecovered) {
  std::vector<DistancePair> pairs;
  for (int i = 1; i <= 60; ++i) {
    const double s = 0.01 * i;
    pairs.push_back({{0.0, 0.0}, {s, 0.0}, 3.0 * std::pow(s, 1.0 / 3.0)});
  }
  const MetricFit fit = metric_equivalence_probe(pairs);
  EXPECT_NEAR(fit.r_fit, 3.0, 1e-9);
  EXPECT_EQ(fit.pairs, 60u);
}

TEST(MetricEquivalence, TooFewPairsRejected) {
  std::vector<DistancePair> pairs;
  for (int i = 1; i <= 49; ++i) pairs.push_back({{0.0}, {0.01 * i}, 0.01 * i});
  EXPECT_THROW(metric_equivalence_probe(pairs), ParameterError);
  pairs.assign(60, DistancePair{{0.0}, {0.5}, 0.5});
  EXPECT_THROW(metric_equivalence_probe(pairs), ParameterError);
}
