#include "doctest.h"

#include "vblab/sources.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace vblab;

namespace {

FamilySpec basic_spec(int id, std::vector<int> arc, int members, std::uint64_t seed) {
  FamilySpec spec;
  spec.id = id;
  spec.arc_nodes = std::move(arc);
  spec.t_lo = rational_of(-1, 2);
  spec.t_hi = rational_of(-1, 4);
  spec.member_count = members;
  spec.seed = seed;
  spec.sobolev_order = 1;
  spec.kl_rank = 200;
  spec.time_points = 9;
  return spec;
}

}  // namespace

TEST_CASE("member_count must be positive") {
  GridBundle b = testing::trivial_bundle(16, 1);
  FamilySpec spec = basic_spec(0, {0, 1, 2}, 0, 5);
  CHECK_THROWS_WITH_AS(BasicFamily(b, spec), doctest::Contains("InvalidCount"), Error);
}

TEST_CASE("members are reproducible bit for bit and supported in the box") {
  GridBundle b = testing::trivial_bundle(16, 1);
  FamilySpec spec = basic_spec(0, {2, 3, 4}, 5, 99);
  BasicFamily fam(b, spec);
  SourceFunction again = fam.sample(3);
  CHECK(fam.member(3).samples == again.samples);

  for (int k = 0; k < 5; ++k) {
    const SourceFunction& f = fam.member(k);
    for (int node = 0; node < 16; ++node) {
      bool in_arc = (node >= 2 && node <= 4);
      if (!in_arc) {
        CHECK(f.samples.row(node).cwiseAbs().maxCoeff() == 0.0);
      }
    }
    CHECK(f.t_begin() == doctest::Approx(-0.5));
    CHECK(f.t_end() == doctest::Approx(-0.25));
  }

  CHECK_THROWS_WITH_AS(fam.member(7), doctest::Contains("UnknownMember"), Error);
}

TEST_CASE("covariance diagnostics report positive retained weights") {
  GridBundle b = testing::trivial_bundle(16, 2, Vec({{1.0, 4.0}}));
  FamilySpec spec = basic_spec(0, {0, 1}, 3, 17);
  BasicFamily fam(b, spec);
  const auto& diag = fam.diagnostics();
  CHECK(diag.retained_rank > 0);
  CHECK(diag.min_retained_weight > 0.0);
  CHECK(diag.retained_trace <= diag.full_trace * (1.0 + 1e-12));
}

TEST_CASE("sample mean obeys the Monte Carlo bound") {
  GridBundle b = testing::trivial_bundle(16, 1);
  FamilySpec spec = basic_spec(0, {5}, 500, 123);
  BasicFamily fam(b, spec);
  // Fixed grid point: node 5, middle knot.
  int row = 5;
  int col = 4;
  double mean = 0.0, var = 0.0;
  for (int k = 0; k < 500; ++k) {
    double v = fam.member(k).samples(row, col);
    mean += v;
    var += v * v;
  }
  mean /= 500.0;
  var = var / 500.0 - mean * mean;
  CHECK(std::abs(mean) <= 4.0 * std::sqrt(var / 500.0));
}

TEST_CASE("density residuals: membership, zero target, monotonicity, bump decay") {
  GridBundle b = testing::trivial_bundle(32, 1);
  FamilySpec spec = basic_spec(0, [&] {
        std::vector<int> all(32);
        for (int i = 0; i < 32; ++i) all[i] = i;
        return all;
      }(),
      200, 7);
  spec.kl_rank = 200;
  spec.time_points = 9;
  spec.smoothness_scale = 4.0;
  BasicFamily fam(b, spec);

  SUBCASE("a member projects to zero residual") {
    std::vector<double> r = density_residuals(b, fam, fam.member(0), {1, 3});
    CHECK(r[0] < 1e-10 * std::sqrt(source_l2_inner(b, fam.member(0), fam.member(0))));
    CHECK(r[1] <= r[0] + 1e-14);
  }

  SUBCASE("zero target has zero residual") {
    SourceFunction zero = fam.member(0);
    zero.samples.setZero();
    std::vector<double> r = density_residuals(b, fam, zero, {0, 5});
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
  }

  SUBCASE("smooth bump target: monotone decay below 0.1 of its norm") {
    SourceFunction target = fam.member(0);
    for (int node = 0; node < 32; ++node) {
      double x = b.grid().positions[node];
      double bump = std::exp(-4.0 * (1.0 - std::cos(x - 1.0)));
      for (std::size_t k = 0; k < target.knots.size(); ++k) {
        double t = target.knots[k];
        double t0 = target.knots.front(), t1 = target.knots.back();
        target.samples(node, k) = bump * 4.0 * (t - t0) * (t1 - t) / ((t1 - t0) * (t1 - t0));
      }
    }
    double norm = std::sqrt(source_l2_inner(b, target, target));
    std::vector<int> grid = {0, 25, 50, 100, 150, 200};
    std::vector<double> r = density_residuals(b, fam, target, grid);
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] <= r[i - 1] + 1e-12 * norm);
    CHECK(r.back() < 0.1 * norm);
  }
}
