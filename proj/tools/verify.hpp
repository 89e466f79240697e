// Invariant suites behind `cclab verify --suite core`. Each suite is a short
// run on a small grid with a known answer and returns a JSON verdict with a
// boolean "pass".
#pragma once

#include <cmath>
#include <functional>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "cclab/io.hpp"

namespace cclab::verify {

struct Suite {
  std::string name;
  std::function<Json(std::uint64_t seed)> run;
};

namespace detail {

inline Json frames_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Json frames = Json::array();
  bool pass = true;
  for (const std::string& name : builtin_frame_names()) {
    const Frame frame = frame_by_name(name);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    int tested = 0;
    while (tested < 200) {
      Point x(static_cast<std::size_t>(frame.n()));
      for (int i = 0; i < frame.n(); ++i) {
        x[i] = frame.box().lo[i] + unit(rng) * (frame.box().hi[i] - frame.box().lo[i]);
      }
      if (name == "grushin" && std::abs(x[0]) <= 0.1) continue;
      const Eigen::MatrixXd ct = left_inverse(frame, x);
      const Eigen::MatrixXd c = eval_coeff(frame, x);
      const Eigen::MatrixXd e = ct * c.transpose() - Eigen::MatrixXd::Identity(frame.m(), frame.m());
      worst = std::max(worst, e.cwiseAbs().maxCoeff());
      ++tested;
    }
    const bool ok = worst <= 1e-10;
    pass = pass && ok;
    frames.push_back(Json{{"frame", name}, {"points", tested}, {"left_inverse_error", worst}, {"pass", ok}});
  }
  const Point origin{0.0, 0.0, 0.0};
  const std::vector<int> ranks = hormander_probe(heisenberg_frame(), origin, 2);
  const bool bracket = !ranks.empty() && ranks.back() == 3;
  return Json{{"pass", pass && bracket}, {"frames", frames}, {"heisenberg_bracket_ranks", ranks}};
}

inline Json grid_suite(std::uint64_t) {
  // Centered differences are exact on affine data in any frame.
  const Grid grid(heisenberg_frame(), {9});
  const ScalarField u = grid.sample([](std::span<const double> x) { return 0.5 + x[0] - 2.0 * x[1]; });
  const HorizontalField xu = x_gradient(grid, u);
  double worst = 0.0;
  for (Index k : grid.interior_nodes()) {
    worst = std::max(worst, std::abs(xu(k, 0) - 1.0));
    worst = std::max(worst, std::abs(xu(k, 1) + 2.0));
  }
  return Json{{"pass", worst <= 1e-12}, {"affine_gradient_error", worst}};
}

inline Json ppoisson_suite(std::uint64_t seed) {
  // 1D torsion problem with closed form, p = 4.
  const Grid line(euclidean_frame(1), {257});
  const ScalarField one = line.constant(1.0), zero = line.constant(0.0);
  const SolveReport r = solve_p_poisson(line, 4.0, one, zero);
  double err = 0.0;
  for (Index k = 0; k < line.size(); ++k) {
    const double x = line.point(k)[0];
    const double exact = 0.75 * (std::pow(0.5, 4.0 / 3.0) - std::pow(std::abs(x - 0.5), 4.0 / 3.0));
    err = std::max(err, std::abs(r.u[k] - exact));
  }
  const EpIdentities ids = ep_identities(line, r, one);

  // Affine boundary data is p-harmonic.
  const Grid sq(euclidean_frame(2), {17});
  const ScalarField g = sq.sample([](std::span<const double> x) { return x[0]; });
  const SolveReport ra = solve_p_poisson(sq, 4.0, sq.constant(0.0), g);
  double affine = 0.0;
  for (Index k = 0; k < sq.size(); ++k) affine = std::max(affine, std::abs(ra.u[k] - g[k]));

  // Ordered sources give ordered solutions.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ScalarField fu(static_cast<std::size_t>(sq.size())), fv(fu.size());
  for (std::size_t k = 0; k < fu.size(); ++k) {
    fu[k] = unit(rng);
    fv[k] = fu[k] + unit(rng);
  }
  const SolveReport su = solve_p_poisson(sq, 4.0, fu, sq.constant(0.0));
  const SolveReport sv = solve_p_poisson(sq, 4.0, fv, sq.constant(0.0));
  const ComparisonVerdict cmp = comparison_check(sq, su, sv);

  const bool pass = err <= 1e-3 && ids.gap_weak <= 1e-6 && affine <= 1e-8 && cmp.pass;
  return Json{{"pass", pass},
              {"closed_form_error", err},
              {"gap_weak", ids.gap_weak},
              {"affine_error", affine},
              {"comparison_violation", cmp.worst_violation}};
}

inline Json eikonal_suite(std::uint64_t) {
  const Grid grid(euclidean_frame(2), {65});
  const DistanceField d = solve_eikonal(grid, Source::boundary());
  const double centre = d.d[grid.nearest_node(Point{0.5, 0.5})];
  const EikonalResidual res = eikonal_residual_check(grid, d);
  const bool pass = std::abs(centre - 0.5) <= 2.0 * grid.max_spacing() && res.sup <= 0.15;
  return Json{{"pass", pass}, {"centre_value", centre}, {"residual_sup", res.sup}};
}

inline Json differential_suite(std::uint64_t) {
  const Grid grid(euclidean_frame(2), {33});
  const ScalarField u = grid.sample([](std::span<const double> x) { return 1.0 + 2.0 * x[0] - 3.0 * x[1]; });
  const std::vector<double> radii{0.2, 0.1};
  const RemainderProfile prof = remainder_profile(grid, u, grid.nearest_node(Point{0.5, 0.5}), radii);
  double worst = 0.0;
  for (const RemainderSample& s : prof.samples) {
    if (std::isfinite(s.worst_ratio)) worst = std::max(worst, s.worst_ratio);
  }
  return Json{{"pass", worst <= 1e-10}, {"affine_remainder", worst}};
}

inline Json viscosity_suite(std::uint64_t) {
  const Grid grid(euclidean_frame(2, Box::cube(2, 0.5, 1.0)), {65});
  const ScalarField u = grid.sample([](std::span<const double> x) {
    return std::pow(x[0], 4.0 / 3.0) - std::pow(x[1], 4.0 / 3.0);
  });
  const double sup = finite_sup_abs(infinity_laplacian(grid, u));
  const ProbeVerdict v =
      probe_viscosity(grid, u, grid.nearest_node(Point{0.7, 0.6}), ProbeEquation::inf_laplace(), ProbeSide::kSub);
  const bool pass = sup <= 1e-2 && v.outcome == ProbeOutcome::kPass;
  return Json{{"pass", pass}, {"aronsson_residual", sup}, {"probe", to_string(v.outcome)}};
}

inline Json limits_suite(std::uint64_t) {
  const Grid grid(euclidean_frame(2), {33});
  const std::vector<double> p_list{4.0, 8.0, 16.0};
  const SweepReport rep = p_sweep(grid, grid.constant(1.0), grid.constant(0.0), p_list);
  const MonotonicityVerdict mono = monotonicity_check(rep);
  const ScalarField exact = grid.sample([](std::span<const double> x) {
    return std::min({x[0], 1.0 - x[0], x[1], 1.0 - x[1]});
  });
  const LimitComparison cmp = limit_compare(grid, rep, exact);
  const bool pass = mono.pass && cmp.gaps_decreasing;
  return Json{{"pass", pass}, {"monotone", mono.pass}, {"sup_gaps", cmp.sup_gaps}};
}

}  // namespace detail

inline std::vector<Suite> core_suites() {
  return {{"frames", detail::frames_suite},         {"grid", detail::grid_suite},
          {"ppoisson", detail::ppoisson_suite},     {"eikonal", detail::eikonal_suite},
          {"differential", detail::differential_suite}, {"viscosity", detail::viscosity_suite},
          {"limits", detail::limits_suite}};
}

// Runs the suites with at most `workers` in flight. Results keep suite order.
// An exception inside a suite is a failure of that suite, not of the run.
inline Json run_suites(const std::vector<Suite>& suites, std::uint64_t seed, int workers) {
  auto guarded = [seed](const Suite& s) {
    try {
      return s.run(seed);
    } catch (const std::exception& e) {
      return Json{{"pass", false}, {"error", e.what()}};
    }
  };
  std::vector<Json> results(suites.size());
  const std::size_t width = static_cast<std::size_t>(std::max(1, workers));
  for (std::size_t first = 0; first < suites.size(); first += width) {
    std::vector<std::future<Json>> batch;
    const std::size_t last = std::min(suites.size(), first + width);
    for (std::size_t k = first; k < last; ++k) {
      batch.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred, guarded,
                                 std::cref(suites[k])));
    }
    for (std::size_t k = first; k < last; ++k) results[k] = batch[k - first].get();
  }
  Json out = Json::object();
  bool pass = true;
  for (std::size_t k = 0; k < suites.size(); ++k) {
    pass = pass && results[k].value("pass", false);
    out[suites[k].name] = results[k];
  }
  return Json{{"pass", pass}, {"suites", out}};
}

}  // namespace cclab::verify
