#pragma once

#include "vblab/common.hpp"

#include <map>
#include <tuple>
#include <vector>

namespace vblab {

/// Uniformly discretized circle: nodes x_i in [0, 2*pi), quadrature weights
/// w_i > 0 summing to the total measure. This is the part of the model that
/// stays public during reconstruction.
struct GridManifold {
  int node_count = 0;
  std::vector<double> positions;
  std::vector<double> weights;

  static GridManifold circle(int n);

  double total_measure() const;
  double spacing() const { return kTwoPi / node_count; }
  int next(int i) const { return (i + 1) % node_count; }
  int prev(int i) const { return (i + node_count - 1) % node_count; }

  void validate() const;
};

/// A chart is an arc of consecutive nodes (wrapping allowed).
struct Chart {
  int first = 0;
  int length = 0;

  bool contains(int node, int n_total) const;
  std::vector<int> nodes(int n_total) const;
};

/// Chart cover plus the per-node transition matrices t(alpha,beta)(x):
/// coordinates in chart beta -> coordinates in chart alpha at overlap node x.
struct ChartAtlas {
  int rank = 1;  // fiber dimension d
  std::vector<Chart> charts;
  std::map<std::tuple<int, int, int>, Mat> transitions;  // (alpha, beta, node)
  std::vector<int> canonical;  // optional per-node canonical chart override

  bool has_transition(int alpha, int beta, int node) const;
  const Mat& transition(int alpha, int beta, int node) const;
  void set_transition(int alpha, int beta, int node, const Mat& t);

  /// Canonical chart of a node: the override when set, else the
  /// lowest-index chart containing the node.
  int canonical_chart(int node, int n_total) const;

  /// Verifies the three cocycle identities at every overlap node and a
  /// discrete smoothness bound on the transition entries.
  void validate(const GridManifold& grid, double tol = 1e-12) const;
};

/// SPD fiber inner product, stored per node in that node's canonical chart.
struct FiberMetric {
  std::vector<Mat> h;  // d x d per node

  void validate(const GridManifold& grid, const ChartAtlas& atlas,
                double smoothness_bound) const;
};

/// Chart-local section values: a d-vector per node of the chart.
struct Section {
  int chart = 0;
  std::vector<int> nodes;
  std::vector<Vec> values;
};

/// The hidden ground truth geometry: base circle, cocycle, fiber metric.
/// Immutable after construction; derived transports cache the chart changes
/// used by finite-difference stencils.
class GridBundle {
 public:
  GridBundle(GridManifold grid, ChartAtlas atlas, FiberMetric metric,
             double transition_smoothness_bound = 1e6);

  const GridManifold& grid() const { return grid_; }
  const ChartAtlas& atlas() const { return atlas_; }
  const FiberMetric& metric() const { return metric_; }
  int rank() const { return atlas_.rank; }
  int dof() const { return grid_.node_count * atlas_.rank; }

  int canonical_chart(int node) const { return canonical_[node]; }

  /// Coordinates of a vector at node i+1 mapped into chart(c(i)) resp. the
  /// backward analogue; identity when both nodes share a canonical chart.
  const Mat& forward_transport(int node) const { return fwd_[node]; }
  const Mat& backward_transport(int node) const { return bwd_[node]; }

  /// Stacked block-diagonal inner product matrix H = diag(w_i h_i).
  const Mat& mass_matrix() const { return mass_; }

  /// L2(M,V) pairing of stacked canonical coefficient vectors.
  double inner_product(const Vec& a, const Vec& b) const;

  /// Sign of the loop product of transition determinants (the w1-type
  /// class invariant over the circle).
  int loop_determinant_sign() const;

  /// Chart-local view of a stacked canonical vector, and back.
  Section to_chart(const Vec& stacked, int chart) const;
  Vec from_chart(const Section& section) const;

  /// Chart-change of a chart-local section (exact linear map).
  Section convert(const Section& section, int target_chart) const;

  /// L2 inner product of two chart-local sections (spec operation).
  double section_inner_product(const Section& a, const Section& b) const;

  /// Metric matrix at `node` expressed in chart `chart` coordinates.
  Mat metric_in_chart(int node, int chart) const;

 private:
  GridManifold grid_;
  ChartAtlas atlas_;
  FiberMetric metric_;
  std::vector<int> canonical_;
  std::vector<Mat> fwd_, bwd_;
  Mat mass_;
};

/// Scenario-facing constructor: validates the cocycle and the metric and
/// returns the assembled bundle.
GridBundle build_bundle(GridManifold grid, ChartAtlas atlas, FiberMetric metric,
                        double transition_smoothness_bound = 1e6);

}  // namespace vblab
