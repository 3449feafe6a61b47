#pragma once

#include "vblab/scenario.hpp"

namespace vblab::testing {

inline ChartAtlas single_chart_atlas(int n, int d) {
  ChartAtlas atlas;
  atlas.rank = d;
  atlas.charts = {Chart{0, n}};
  return atlas;
}

inline ChartAtlas two_chart_atlas(int n, int d) {
  HiddenConfig h;
  h.nodes = n;
  h.rank = d;
  h.atlas = "two_chart";
  return make_atlas(h);
}

inline GridBundle trivial_bundle(int n, int d, const Vec& diag = Vec()) {
  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas = single_chart_atlas(n, d);
  FiberMetric metric;
  Mat h = Mat::Identity(d, d);
  if (diag.size() == d) h = diag.asDiagonal();
  metric.h.assign(n, h);
  return build_bundle(grid, atlas, metric);
}

inline GridBundle mobius_bundle(int n) {
  HiddenConfig h;
  h.nodes = n;
  h.rank = 1;
  h.transitions = "mobius";
  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas = make_atlas(h);
  FiberMetric metric;
  metric.h.assign(n, Mat::Identity(1, 1));
  return build_bundle(grid, atlas, metric);
}

inline GridBundle rank2_rotating_bundle(int n) {
  HiddenConfig h;
  h.nodes = n;
  h.rank = 2;
  h.metric = "rotating";
  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas = make_atlas(h);
  return build_bundle(grid, atlas, make_metric(h, grid, atlas));
}

inline EllipticOperatorSpec laplace_plus_one(int n, int d) {
  EllipticOperatorSpec spec;
  spec.a2.assign(n, -Mat::Identity(d, d));
  spec.a1.assign(n, Mat::Zero(d, d));
  spec.a0.assign(n, Mat::Identity(d, d));
  return spec;
}

inline Vec random_vec(int size, std::uint64_t seed) {
  GaussianStream g(seed);
  Vec v(size);
  for (int i = 0; i < size; ++i) v[i] = g.next();
  return v;
}

/// Single-mode rectangular source F(x, s) = amp * phi_l(x) on [a, b]
/// (sampled representation; exact for the piecewise-linear profile).
inline SourceFunction mode_source(const SpectralModel& model, int mode, double a, double b,
                                  double amp = 1.0, int knots = 2) {
  SourceFunction f;
  f.knots.resize(knots);
  for (int k = 0; k < knots; ++k) f.knots[k] = a + (b - a) * k / (knots - 1);
  Vec phi = model.basis().col(mode);
  f.samples = amp * phi * Eigen::RowVectorXd::Ones(knots);
  return f;
}

}  // namespace vblab::testing
