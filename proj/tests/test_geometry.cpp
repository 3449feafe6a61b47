#include "doctest.h"

#include "vblab/geometry.hpp"

#include "helpers.hpp"

using namespace vblab;

TEST_CASE("trivial line bundle accepted") {
  GridBundle b = testing::trivial_bundle(16, 1);
  CHECK(b.rank() == 1);
  CHECK(b.loop_determinant_sign() == 1);
  CHECK(b.grid().total_measure() == doctest::Approx(kTwoPi).epsilon(1e-14));
}

TEST_CASE("mobius bundle accepted with loop determinant -1") {
  GridBundle b = testing::mobius_bundle(16);
  CHECK(b.loop_determinant_sign() == -1);
}

TEST_CASE("cocycle violation rejected with location") {
  int n = 16;
  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas = testing::two_chart_atlas(n, 1);
  // Break t_ab t_ba = Id on one overlap node: set both directions to 2.
  Mat two = 2.0 * Mat::Identity(1, 1);
  atlas.set_transition(0, 1, n / 2, two);
  atlas.set_transition(1, 0, n / 2, two);
  FiberMetric metric;
  metric.h.assign(n, Mat::Identity(1, 1));
  CHECK_THROWS_WITH_AS(build_bundle(grid, atlas, metric), doctest::Contains("t_ab t_ba"),
                       Error);
}

TEST_CASE("non positive metric rejected") {
  int n = 16;
  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas = testing::single_chart_atlas(n, 1);
  FiberMetric metric;
  metric.h.assign(n, Mat::Identity(1, 1));
  metric.h[3](0, 0) = -0.5;
  CHECK_THROWS_AS(build_bundle(grid, atlas, metric), Error);
}

TEST_CASE("inner product: constants and diagonal metric") {
  // d = 1, h = 1, phi = psi = 1 -> total measure.
  GridBundle b1 = testing::trivial_bundle(32, 1);
  Vec ones = Vec::Ones(32);
  CHECK(b1.inner_product(ones, ones) == doctest::Approx(kTwoPi).epsilon(1e-13));

  Vec zero = Vec::Zero(32);
  CHECK(b1.inner_product(zero, zero) == 0.0);

  // d = 2, h = diag(1,4), phi = psi = (0,1) -> 4 * 2 pi.
  GridBundle b2 = testing::trivial_bundle(32, 2, Vec({{1.0, 4.0}}));
  Vec e2 = Vec::Zero(64);
  for (int i = 0; i < 32; ++i) e2[2 * i + 1] = 1.0;
  CHECK(b2.inner_product(e2, e2) == doctest::Approx(4.0 * kTwoPi).epsilon(1e-13));
}

TEST_CASE("chart conversion round trip is identity") {
  GridBundle b = testing::mobius_bundle(16);
  GaussianStream g(7);
  // Section over the overlap nodes, where both charts are defined.
  Section s0;
  s0.chart = 0;
  for (int node : {8, 9, 15, 0, 1}) {
    s0.nodes.push_back(node);
    s0.values.push_back(Vec::Constant(1, g.next()));
  }
  Section s1 = b.convert(s0, 1);
  Section s0b = b.convert(s1, 0);
  for (std::size_t k = 0; k < s0.nodes.size(); ++k) {
    CHECK(s0b.values[k].isApprox(s0.values[k], 1e-12));
  }
  // Conversion to a chart missing the node fails loudly.
  Section wide = b.to_chart(b.from_chart(s0), 0);
  CHECK_THROWS_WITH_AS(b.convert(wide, 1), doctest::Contains("ChartMismatch"), Error);
}

TEST_CASE("inner product invariant under chart representation") {
  GridBundle b = testing::mobius_bundle(16);
  // Sections supported on the chart-0/chart-1 overlap region, so both
  // charts can represent them fully.
  Vec v = Vec::Zero(b.dof());
  Vec w = Vec::Zero(b.dof());
  GaussianStream g(3);
  for (int node : {8, 9, 15, 0, 1}) {
    v[node] = g.next();
    w[node] = g.next();
  }
  double in_chart0 = b.inner_product(b.from_chart(b.to_chart(v, 0)),
                                     b.from_chart(b.to_chart(w, 0)));
  double in_chart1 = b.inner_product(b.from_chart(b.to_chart(v, 1)),
                                     b.from_chart(b.to_chart(w, 1)));
  CHECK(std::abs(in_chart0 - in_chart1) < 1e-10);
  CHECK(vblab::rel_diff(in_chart0, b.inner_product(v, w)) < 1e-12);
}

TEST_CASE("metric chart-change consistency") {
  GridBundle b = testing::rank2_rotating_bundle(16);
  const auto& atlas = b.atlas();
  for (int node : atlas.charts[1].nodes(16)) {
    if (!atlas.charts[0].contains(node, 16)) continue;
    Mat h0 = b.metric_in_chart(node, 0);
    Mat h1 = b.metric_in_chart(node, 1);
    const Mat& t01 = atlas.transition(0, 1, node);
    CHECK((t01.transpose() * h0 * t01 - h1).cwiseAbs().maxCoeff() < 1e-12);
  }
}
