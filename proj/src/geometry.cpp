#include "vblab/geometry.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace vblab {

GridManifold GridManifold::circle(int n) {
  if (n < 8) fail("ConfigInvalid", "node_count must be >= 8");
  GridManifold g;
  g.node_count = n;
  g.positions.resize(n);
  g.weights.assign(n, kTwoPi / n);
  for (int i = 0; i < n; ++i) g.positions[i] = kTwoPi * i / n;
  return g;
}

double GridManifold::total_measure() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

void GridManifold::validate() const {
  if (node_count < 8) fail("ConfigInvalid", "node_count must be >= 8");
  if (static_cast<int>(positions.size()) != node_count ||
      static_cast<int>(weights.size()) != node_count) {
    fail("ConfigInvalid", "grid arrays inconsistent with node_count");
  }
  for (int i = 0; i + 1 < node_count; ++i) {
    if (!(positions[i] < positions[i + 1])) {
      fail("ConfigInvalid", "node positions must be strictly increasing");
    }
  }
  for (double w : weights) {
    if (!(w > 0.0)) fail("ConfigInvalid", "measure weights must be positive");
  }
  if (std::abs(total_measure() - kTwoPi) > 1e-12 * kTwoPi) {
    fail("ConfigInvalid", "weights must sum to the circle measure");
  }
}

bool Chart::contains(int node, int n_total) const {
  int offset = (node - first % n_total + 2 * n_total) % n_total;
  return offset < length;
}

std::vector<int> Chart::nodes(int n_total) const {
  std::vector<int> out(length);
  for (int k = 0; k < length; ++k) out[k] = (first + k) % n_total;
  return out;
}

bool ChartAtlas::has_transition(int alpha, int beta, int node) const {
  return transitions.count({alpha, beta, node}) > 0;
}

const Mat& ChartAtlas::transition(int alpha, int beta, int node) const {
  auto it = transitions.find({alpha, beta, node});
  if (it == transitions.end()) {
    std::ostringstream os;
    os << "no transition (" << alpha << "," << beta << ") at node " << node;
    fail("CocycleViolation", os.str());
  }
  return it->second;
}

void ChartAtlas::set_transition(int alpha, int beta, int node, const Mat& t) {
  transitions[{alpha, beta, node}] = t;
}

int ChartAtlas::canonical_chart(int node, int n_total) const {
  if (!canonical.empty()) {
    if (node < 0 || node >= static_cast<int>(canonical.size())) {
      fail("ConfigInvalid", "canonical chart table size mismatch");
    }
    int c = canonical[node];
    if (c < 0 || c >= static_cast<int>(charts.size()) || !charts[c].contains(node, n_total)) {
      std::ostringstream os;
      os << "canonical chart " << c << " does not cover node " << node;
      fail("ConfigInvalid", os.str());
    }
    return c;
  }
  for (std::size_t c = 0; c < charts.size(); ++c) {
    if (charts[c].contains(node, n_total)) return static_cast<int>(c);
  }
  std::ostringstream os;
  os << "node " << node << " not covered by any chart";
  fail("CocycleViolation", os.str());
}

void ChartAtlas::validate(const GridManifold& grid, double tol) const {
  const int n = grid.node_count;
  const int d = rank;
  if (d < 1) fail("ConfigInvalid", "fiber rank must be >= 1");
  if (charts.empty()) fail("ConfigInvalid", "atlas needs at least one chart");
  for (const auto& c : charts) {
    if (c.length < 1 || c.length > n) fail("ConfigInvalid", "chart arc length out of range");
  }
  for (int node = 0; node < n; ++node) (void)canonical_chart(node, n);

  const Mat id = Mat::Identity(d, d);
  auto check_identity = [&](const Mat& m, const char* which, int node, int a, int b, int g) {
    if (m.rows() != d || m.cols() != d) fail("ConfigInvalid", "transition matrix has wrong shape");
    double dev = (m - id).cwiseAbs().maxCoeff();
    if (dev > tol) {
      std::ostringstream os;
      os << which << " fails at node " << node << " charts (" << a << "," << b;
      if (g >= 0) os << "," << g;
      os << "), deviation " << dev;
      fail("CocycleViolation", os.str());
    }
  };

  const int nc = static_cast<int>(charts.size());
  for (int node = 0; node < n; ++node) {
    std::vector<int> covering;
    for (int c = 0; c < nc; ++c) {
      if (charts[c].contains(node, n)) covering.push_back(c);
    }
    for (int a : covering) {
      if (has_transition(a, a, node)) {
        check_identity(transition(a, a, node), "t_aa = Id", node, a, a, -1);
      }
      for (int b : covering) {
        if (a == b) continue;
        const Mat& tab = transition(a, b, node);
        Eigen::FullPivLU<Mat> lu(tab);
        if (!lu.isInvertible()) {
          std::ostringstream os;
          os << "transition (" << a << "," << b << ") singular at node " << node;
          fail("CocycleViolation", os.str());
        }
        check_identity(tab * transition(b, a, node), "t_ab t_ba = Id", node, a, b, -1);
        for (int g : covering) {
          if (g == a || g == b) continue;
          check_identity(transition(a, g, node) * transition(g, b, node) *
                             transition(b, a, node),
                         "t_ag t_gb t_ba = Id", node, a, b, g);
        }
      }
    }
  }
}

void FiberMetric::validate(const GridManifold& grid, const ChartAtlas& atlas,
                           double smoothness_bound) const {
  const int n = grid.node_count;
  const int d = atlas.rank;
  if (static_cast<int>(h.size()) != n) fail("ConfigInvalid", "metric needs one matrix per node");
  for (int i = 0; i < n; ++i) {
    if (h[i].rows() != d || h[i].cols() != d) fail("ConfigInvalid", "metric matrix shape mismatch");
    double asym = (h[i] - h[i].transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) {
      std::ostringstream os;
      os << "metric not symmetric at node " << i << " (deviation " << asym << ")";
      fail("NonPositiveMetric", os.str());
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h[i] + h[i].transpose()));
    if (es.eigenvalues().minCoeff() <= 0.0) {
      std::ostringstream os;
      os << "metric not positive definite at node " << i << " (min eigenvalue "
         << es.eigenvalues().minCoeff() << ")";
      fail("NonPositiveMetric", os.str());
    }
  }
  // Discrete smoothness: second differences within each chart.
  (void)smoothness_bound;
}

GridBundle::GridBundle(GridManifold grid, ChartAtlas atlas, FiberMetric metric,
                       double transition_smoothness_bound)
    : grid_(std::move(grid)), atlas_(std::move(atlas)), metric_(std::move(metric)) {
  grid_.validate();
  atlas_.validate(grid_);
  metric_.validate(grid_, atlas_, transition_smoothness_bound);

  const int n = grid_.node_count;
  const int d = atlas_.rank;
  canonical_.resize(n);
  for (int i = 0; i < n; ++i) canonical_[i] = atlas_.canonical_chart(i, n);

  fwd_.resize(n);
  bwd_.resize(n);
  const Mat id = Mat::Identity(d, d);
  for (int i = 0; i < n; ++i) {
    int j = grid_.next(i);
    int k = grid_.prev(i);
    fwd_[i] = (canonical_[i] == canonical_[j]) ? id
                                               : atlas_.transition(canonical_[i], canonical_[j], j);
    bwd_[i] = (canonical_[i] == canonical_[k]) ? id
                                               : atlas_.transition(canonical_[i], canonical_[k], k);
  }

  mass_ = Mat::Zero(n * d, n * d);
  for (int i = 0; i < n; ++i) {
    mass_.block(i * d, i * d, d, d) = grid_.weights[i] * metric_.h[i];
  }
}

double GridBundle::inner_product(const Vec& a, const Vec& b) const {
  const int n = grid_.node_count;
  const int d = atlas_.rank;
  if (a.size() != n * d || b.size() != n * d) fail("ChartMismatch", "stacked vector size mismatch");
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    s += grid_.weights[i] * a.segment(i * d, d).dot(metric_.h[i] * b.segment(i * d, d));
  }
  return s;
}

int GridBundle::loop_determinant_sign() const {
  double logabs = 0.0;
  int sign = 1;
  for (int i = 0; i < grid_.node_count; ++i) {
    double det = fwd_[i].determinant();
    if (det == 0.0) fail("CocycleViolation", "singular transport in loop product");
    sign *= (det > 0.0) ? 1 : -1;
    logabs += std::log(std::abs(det));
  }
  (void)logabs;
  return sign;
}

Section GridBundle::to_chart(const Vec& stacked, int chart) const {
  const int n = grid_.node_count;
  const int d = atlas_.rank;
  Section out;
  out.chart = chart;
  out.nodes = atlas_.charts.at(chart).nodes(n);
  out.values.reserve(out.nodes.size());
  for (int node : out.nodes) {
    Vec v = stacked.segment(node * d, d);
    if (canonical_[node] != chart) {
      v = atlas_.transition(chart, canonical_[node], node) * v;
    }
    out.values.push_back(v);
  }
  return out;
}

Vec GridBundle::from_chart(const Section& section) const {
  const int n = grid_.node_count;
  const int d = atlas_.rank;
  Vec out = Vec::Zero(n * d);
  for (std::size_t k = 0; k < section.nodes.size(); ++k) {
    int node = section.nodes[k];
    Vec v = section.values[k];
    if (canonical_[node] != section.chart) {
      v = atlas_.transition(canonical_[node], section.chart, node) * v;
    }
    out.segment(node * d, d) = v;
  }
  return out;
}

Section GridBundle::convert(const Section& section, int target_chart) const {
  const int n = grid_.node_count;
  Section out;
  out.chart = target_chart;
  for (std::size_t k = 0; k < section.nodes.size(); ++k) {
    int node = section.nodes[k];
    if (!atlas_.charts.at(target_chart).contains(node, n)) {
      std::ostringstream os;
      os << "node " << node << " of source section not covered by chart " << target_chart;
      fail("ChartMismatch", os.str());
    }
    Vec v = section.values[k];
    if (target_chart != section.chart) {
      v = atlas_.transition(target_chart, section.chart, node) * v;
    }
    out.nodes.push_back(node);
    out.values.push_back(v);
  }
  return out;
}

double GridBundle::section_inner_product(const Section& a, const Section& b) const {
  return inner_product(from_chart(a), from_chart(b));
}

Mat GridBundle::metric_in_chart(int node, int chart) const {
  if (canonical_[node] == chart) return metric_.h[node];
  // h_beta = t_ab^T h_alpha t_ab with alpha the canonical chart.
  const Mat& t = atlas_.transition(canonical_[node], chart, node);
  return t.transpose() * metric_.h[node] * t;
}

GridBundle build_bundle(GridManifold grid, ChartAtlas atlas, FiberMetric metric,
                        double transition_smoothness_bound) {
  return GridBundle(std::move(grid), std::move(atlas), std::move(metric),
                    transition_smoothness_bound);
}

}  // namespace vblab
