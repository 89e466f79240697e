#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cclab/limits.hpp"

using namespace cclab;

namespace {

const std::vector<double> kPList{4, 8, 16, 32, 64};

double square_distance(std::span<const double> x) { return std::min({x[0], 1 - x[0], x[1], 1 - x[1]}); }

double smoothed_cone(std::span<const double> x) {
  return std::sqrt((x[0] - 0.5) * (x[0] - 0.5) + (x[1] - 0.5) * (x[1] - 0.5) + 0.0025);
}

// 1-D torsion problem -(|u'|^{p-2}u')' = 1 on (0,1): |u'| = |x - 1/2|^{1/(p-1)}.
double torsion_1d(double x, double p) {
  const double a = p / (p - 1.0);
  return (1.0 / a) * (std::pow(0.5, a) - std::pow(std::abs(x - 0.5), a));
}
double torsion_energy_1d(double p) { return std::pow(0.5, p / (p - 1.0)) * (p - 1.0) / (2.0 * p - 1.0); }
double torsion_lq_1d(double p, double q) {
  const double b = q / (p - 1.0);
  return std::pow(2.0 * std::pow(0.5, b + 1.0) / (b + 1.0), 1.0 / q);
}

const SweepReport& square_sweep() {
  static const SweepReport rep = [] {
    const Grid grid(euclidean_frame(2), {65});
    return p_sweep(grid, grid.constant(1.0), grid.constant(0.0), kPList);
  }();
  return rep;
}

const SweepReport& cone_sweep() {
  static const SweepReport rep = [] {
    const Grid grid(euclidean_frame(2), {65});
    return p_sweep(grid, grid.constant(0.0), grid.sample(smoothed_cone), kPList);
  }();
  return rep;
}

}  // namespace

TEST(PSweep, OneDimensionalClosedForm) {
  const Grid grid(euclidean_frame(1), {257});
  const SweepReport rep = p_sweep(grid, grid.constant(1.0), grid.constant(0.0), kPList);
  EXPECT_EQ(rep.mode, SweepMode::kNonHomogeneous);
  EXPECT_EQ(rep.candidate, LimitCandidate::kEikonal);
  ASSERT_EQ(rep.entries.size(), kPList.size());
  for (const SweepEntry& e : rep.entries) {
    double err = 0.0;
    for (Index k = 0; k < grid.size(); ++k) err = std::max(err, std::abs(e.u[k] - torsion_1d(grid.point(k)[0], e.p)));
    EXPECT_LE(err, 1e-3) << "p=" << e.p;
    const double n_exact = std::pow(torsion_energy_1d(e.p), (e.p - 1.0) / e.p);
    EXPECT_NEAR(e.N_p, n_exact, 1e-4) << "p=" << e.p;
    ASSERT_EQ(e.lq.size(), 3u);
    for (std::size_t i = 0; i < rep.lq_exponents.size(); ++i) {
      EXPECT_NEAR(e.lq[i], torsion_lq_1d(e.p, rep.lq_exponents[i]), 1e-2) << "p=" << e.p;
    }
  }
  // The 1-D distance is piecewise linear, so the eikonal candidate is exact
  // and the gap at p = 4 is 1/2 - u_4(1/2).
  EXPECT_NEAR(rep.entries[0].sup_gap, 0.5 - torsion_1d(0.5, 4.0), 1e-3);
  EXPECT_NEAR(rep.entries[0].sup_gap, 0.2024, 1e-3);
  EXPECT_TRUE(monotonicity_check(rep).pass);
}

TEST(PSweep, RejectsBadInput) {
  const Grid grid(euclidean_frame(2), {9});
  const ScalarField one = grid.constant(1.0), zero = grid.constant(0.0);
  EXPECT_THROW(p_sweep(grid, one, zero, std::vector<double>{}), ParameterError);
  EXPECT_THROW(p_sweep(grid, one, zero, std::vector<double>{8, 4}), ParameterError);
  EXPECT_THROW(p_sweep(grid, one, zero, std::vector<double>{4, 4}), ParameterError);
  EXPECT_THROW(p_sweep(grid, one, zero, std::vector<double>{2, 8}), ParameterError);
  const ScalarField neg = grid.sample([](auto x) { return x[0] - 0.5; });
  try {
    p_sweep(grid, neg, zero, std::vector<double>{4});
    FAIL() << "negative f accepted";
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("f >= 0"), std::string::npos);
  }
  const ScalarField g = grid.sample([](auto x) { return x[0]; });
  EXPECT_THROW(p_sweep(grid, one, g, std::vector<double>{4}), ParameterError);
  EXPECT_THROW(p_sweep(grid, ScalarField(3, 1.0), zero, std::vector<double>{4}), ParameterError);
}

TEST(PSweep, ZeroSourceIsTrivial) {
  const Grid grid(euclidean_frame(2), {17});
  const SweepReport rep = p_sweep(grid, grid.constant(0.0), grid.constant(0.0), kPList);
  EXPECT_EQ(rep.candidate, LimitCandidate::kLargestP);
  for (const SweepEntry& e : rep.entries) {
    EXPECT_EQ(e.E_p, 0.0);
    EXPECT_EQ(e.N_p, 0.0);
    for (double v : e.u) EXPECT_EQ(v, 0.0);
  }
  EXPECT_TRUE(monotonicity_check(rep).pass);
  const ScalarField d = grid.sample(square_distance);
  const LimitComparison c = limit_compare(grid, rep, d);
  for (double gap : c.sup_gaps) EXPECT_DOUBLE_EQ(gap, sup_norm(d));
}

TEST(PSweep, AffineBoundaryDataIsReproduced) {
  const Grid grid(heisenberg_frame(), {9});
  const ScalarField g = grid.sample([](auto x) { return 0.2 + x[0] - 0.5 * x[1]; });
  const SweepReport rep = p_sweep(grid, grid.constant(0.0), g, kPList);
  EXPECT_EQ(rep.mode, SweepMode::kHomogeneous);
  for (const SweepEntry& e : rep.entries) {
    for (Index k = 0; k < grid.size(); ++k) EXPECT_NEAR(e.u[k], g[k], 1e-8);
    EXPECT_NEAR(e.sup_gap, 0.0, 1e-8);
  }
  const LipschitzVerdict lip = lipschitz_bound_check(grid, rep);
  EXPECT_TRUE(lip.pass);
  EXPECT_NEAR(lip.margin, 0.0, 1e-8);
  for (std::size_t k = 0; k < lip.energy_u.size(); ++k) {
    EXPECT_NEAR(lip.energy_u[k], lip.energy_g[k], 1e-8 * (1.0 + lip.energy_g[k]));
  }
}

TEST(PSweep, EuclideanSquareConvergesToDistance) {
  const Grid grid(euclidean_frame(2), {65});
  const SweepReport& rep = square_sweep();
  EXPECT_EQ(rep.candidate, LimitCandidate::kEikonal);
  const LimitComparison c = limit_compare(grid, rep, grid.sample(square_distance));
  EXPECT_TRUE(c.gaps_decreasing);
  EXPECT_LE(c.sup_gaps.back(), 0.05);
  EXPECT_TRUE(c.bounds_hold) << "min u " << c.min_u << " excess " << c.max_excess;
  EXPECT_GE(c.min_u, 0.0);
  EXPECT_DOUBLE_EQ(c.tol_limit, rep.tol.limit);
  // E_inf = int f u_inf; the last E_p is within the p-tail of it.
  EXPECT_LE(c.einf_gap, 0.02);
  for (std::size_t k = 1; k < rep.entries.size(); ++k) {
    EXPECT_LT(rep.entries[k].sup_gap, rep.entries[k - 1].sup_gap);
  }
  for (const SweepEntry& e : rep.entries) {
    EXPECT_LE(e.identities.gap_weak, 1e-6);
    EXPECT_LE(std::abs(e.identities.gap_thompson), 1e-6 * (1.0 + e.E_p));
  }
}

TEST(PSweep, WarmAndColdStartsAgree) {
  const Grid grid(euclidean_frame(2), {33});
  const ScalarField f = grid.sample([](auto x) { return 1.0 + x[0] * x[1]; });
  const ScalarField zero = grid.constant(0.0);
  const SweepReport rep = p_sweep(grid, f, zero, kPList);
  for (const SweepEntry& e : rep.entries) {
    const SolveReport cold = solve_p_poisson(grid, e.p, f, zero);
    double diff = 0.0;
    for (Index k = 0; k < grid.size(); ++k) diff = std::max(diff, std::abs(cold.u[k] - e.u[k]));
    EXPECT_LE(diff, 1e-6) << "p=" << e.p;
  }
}

TEST(PSweep, HeisenbergRecordsEverything) {
  const Grid grid(heisenberg_frame(), {9});
  SweepConfig cfg;
  cfg.lq_exponents = {2.0};
  const SweepReport rep = p_sweep(grid, grid.constant(1.0), grid.constant(0.0), std::vector<double>{4, 8}, cfg);
  EXPECT_EQ(rep.frame, "heisenberg1");
  EXPECT_DOUBLE_EQ(rep.measure, 8.0);
  EXPECT_GT(rep.tol.limit, 3.0 * grid.max_spacing());
  for (const SweepEntry& e : rep.entries) {
    EXPECT_GT(e.E_p, 0.0);
    EXPECT_EQ(e.lq.size(), 1u);
    EXPECT_GE(e.runtime_s, 0.0);
    EXPECT_TRUE(std::isfinite(e.sup_gap));
  }
  EXPECT_EQ(rep.limit.size(), static_cast<std::size_t>(grid.size()));
}

TEST(Monotonicity, SquareSweepIsMonotone) {
  const MonotonicityVerdict v = monotonicity_check(square_sweep());
  EXPECT_TRUE(v.pass);
  EXPECT_TRUE(v.violations.empty());
  ASSERT_EQ(v.N_p.size(), kPList.size());
  for (std::size_t k = 1; k < v.N_p.size(); ++k) EXPECT_LE(v.N_p[k], v.N_p[k - 1] + 1e-6 * (1.0 + v.N_p[k - 1]));
}

TEST(Monotonicity, ReportsViolations) {
  SweepReport rep = square_sweep();
  rep.entries[2].N_p = rep.entries[1].N_p + 0.01;
  const MonotonicityVerdict v = monotonicity_check(rep);
  EXPECT_FALSE(v.pass);
  ASSERT_EQ(v.violations.size(), 1u);
  EXPECT_EQ(v.violations[0].index, 1u);
  EXPECT_NEAR(v.violations[0].excess, 0.01 - 1e-6 * (1.0 + rep.entries[1].N_p), 1e-12);
  EXPECT_THROW(monotonicity_check(cone_sweep()), ParameterError);
}

TEST(LimitCompare, GridMismatchThrows) {
  const Grid other(euclidean_frame(2), {33});
  EXPECT_THROW(limit_compare(other, square_sweep(), other.constant(0.0)), ParameterError);
  const Grid grid(euclidean_frame(2), {65});
  EXPECT_THROW(limit_compare(grid, square_sweep(), other.constant(0.0)), ParameterError);
}

TEST(Lipschitz, SmoothedConeBoundHolds) {
  const Grid grid(euclidean_frame(2), {65});
  const SweepReport& rep = cone_sweep();
  EXPECT_EQ(rep.mode, SweepMode::kHomogeneous);
  EXPECT_EQ(rep.candidate, LimitCandidate::kLargestP);
  const LipschitzVerdict v = lipschitz_bound_check(grid, rep);
  EXPECT_TRUE(v.sup_ok);
  EXPECT_TRUE(v.energy_ok);
  EXPECT_TRUE(v.pass);
  EXPECT_GT(v.margin, 0.0);
  EXPECT_DOUBLE_EQ(v.tol, 0.05);
  for (std::size_t k = 0; k < v.energy_u.size(); ++k) EXPECT_LE(v.energy_u[k], v.energy_g[k]);
}

TEST(Lipschitz, ConstantDataBothSidesZero) {
  const Grid grid(euclidean_frame(2), {17});
  const SweepReport rep = p_sweep(grid, grid.constant(0.0), grid.constant(1.5), kPList);
  const LipschitzVerdict v = lipschitz_bound_check(grid, rep);
  EXPECT_NEAR(v.sup_xu, 0.0, 1e-12);
  EXPECT_EQ(v.sup_xg, 0.0);
  EXPECT_TRUE(v.pass);
}

TEST(Lipschitz, NeedsInteriorDataAndHomogeneousMode) {
  const Grid grid(euclidean_frame(2), {65});
  SweepReport rep = cone_sweep();
  rep.g[grid.interior_nodes()[10]] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(lipschitz_bound_check(grid, rep), ParameterError);
  EXPECT_THROW(lipschitz_bound_check(grid, square_sweep()), ParameterError);
}

TEST(Amle, AffineCompetitorCoincides) {
  const Grid grid(euclidean_frame(2), {33});
  const ScalarField u = grid.sample([](auto x) { return 0.3 + x[0] - 2.0 * x[1]; });
  const std::vector<Box> boxes{Box{{0.25, 0.25}, {0.5, 0.75}}};
  const AmleVerdict v = amle_spot_check(grid, u, boxes);
  ASSERT_EQ(v.boxes.size(), 1u);
  EXPECT_NEAR(v.boxes[0].margin - v.tol, 0.0, 1e-8);
  EXPECT_TRUE(v.pass);
}

TEST(Amle, SweepLimitPassesAndBumpFails) {
  const Grid grid(euclidean_frame(2), {65});
  const ScalarField& u = cone_sweep().last().u;
  const std::vector<Box> boxes{Box{{0.2, 0.3}, {0.45, 0.6}}, Box{{0.55, 0.1}, {0.9, 0.4}},
                               Box{{0.3, 0.6}, {0.7, 0.85}}};
  const AmleVerdict v = amle_spot_check(grid, u, boxes);
  EXPECT_TRUE(v.pass);
  for (const AmleBoxResult& b : v.boxes) EXPECT_GE(b.margin, 0.0);

  ScalarField bumped = u;
  for (Index k = 0; k < grid.size(); ++k) {
    const Point x = grid.point(k);
    const double r2 = (x[0] - 0.33) * (x[0] - 0.33) + (x[1] - 0.45) * (x[1] - 0.45);
    bumped[k] += 0.05 * std::exp(-r2 / 0.002);
  }
  const AmleVerdict w = amle_spot_check(grid, bumped, boxes);
  EXPECT_FALSE(w.pass);
  EXPECT_FALSE(w.boxes[0].pass);
}

TEST(Amle, RejectsBadBoxesAndExponent) {
  const Grid grid(euclidean_frame(2), {17});
  const ScalarField u = grid.constant(0.0);
  EXPECT_THROW(amle_spot_check(grid, u, std::vector<Box>{Box{{0.0, 0.25}, {0.5, 0.75}}}), ParameterError);
  EXPECT_THROW(amle_spot_check(grid, u, std::vector<Box>{Box{{0.25, 0.25}, {0.5, 1.0}}}), ParameterError);
  EXPECT_THROW(amle_spot_check(grid, u, std::vector<Box>{Box{{0.25, 0.25}, {0.5, 0.75}}}, 16.0),
               ParameterError);
}

TEST(LimitSystem, DistanceWithPositiveSource) {
  const Grid grid(euclidean_frame(2), {65});
  const ScalarField d = grid.sample(square_distance);
  const LimitSystemResiduals r = limit_system_residuals(grid, d, grid.constant(1.0));
  EXPECT_EQ(std::count(r.inf_mask.begin(), r.inf_mask.end(), 1), 0);
  const std::vector<char> ridge = ridge_mask(grid, d);
  double worst = 0.0;
  for (Index k : grid.interior_nodes()) {
    EXPECT_TRUE(r.eik_mask[k]);
    if (!ridge[k]) worst = std::max(worst, std::abs(r.eik[k]));
  }
  EXPECT_LE(worst, std::sqrt(grid.max_spacing()));
}

TEST(LimitSystem, AffineWithZeroSource) {
  const Grid grid(euclidean_frame(2), {17});
  const ScalarField u = grid.sample([](auto x) { return x[0] - x[1]; });
  const LimitSystemResiduals r = limit_system_residuals(grid, u, grid.constant(0.0));
  EXPECT_EQ(std::count(r.eik_mask.begin(), r.eik_mask.end(), 1), 0);
  EXPECT_LE(finite_sup_abs(r.inf_lap), 1e-10);
  for (Index k : grid.interior_nodes()) EXPECT_TRUE(r.inf_mask[k]);
}

TEST(LimitSystem, HalfSourceMasksAreDisjoint) {
  const Grid grid(euclidean_frame(2), {33});
  const ScalarField f = grid.sample([](auto x) { return x[0] < 0.5 ? 1.0 : 0.0; });
  const LimitSystemResiduals r = limit_system_residuals(grid, grid.constant(0.0), f);
  std::size_t inf = 0, eik = 0;
  for (Index k = 0; k < grid.size(); ++k) {
    EXPECT_FALSE(r.inf_mask[k] && r.eik_mask[k]);
    inf += r.inf_mask[k];
    eik += r.eik_mask[k];
    // The last positive column is x = 0.5 - h; the buffer adds two more.
    if (r.inf_mask[k]) {
      EXPECT_GE(grid.point(k)[0], 0.5 + 2.0 * grid.spacing(0) - 1e-12);
    }
  }
  EXPECT_GT(inf, 0u);
  EXPECT_GT(eik, 0u);
}
