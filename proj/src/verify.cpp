#include "vblab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace vblab {

RebuiltModel assemble_recovered(const RecoveredModel& rm) {
  const int n = rm.nodes;
  const int d = rm.rank;
  if (n < 8 || d < 1) fail("RebuiltModelInvalid", "recovered model is empty");
  if (rm.metric.size() != static_cast<std::size_t>(n) ||
      rm.a2.size() != static_cast<std::size_t>(n)) {
    fail("RebuiltModelInvalid", "recovered model is incomplete");
  }
  if (rm.metric_min_eigenvalue <= 0.0) {
    fail("RebuiltModelInvalid", "recovered metric is not positive definite");
  }

  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas;
  atlas.rank = d;
  atlas.charts = rm.frame.charts;
  atlas.canonical = rm.frame.canonical;
  for (const auto& [key, t] : rm.transitions) {
    atlas.transitions[key] = t;
  }
  // Exact inverse pairs for the bundle validation; the independent-solve
  // defect is reported by the reconstruction.
  for (auto& [key, t] : atlas.transitions) {
    auto [a, b, node] = key;
    if (a == 0 && b == 1) atlas.transitions[{1, 0, node}] = t.inverse();
  }

  FiberMetric metric;
  metric.h.resize(n);
  for (int i = 0; i < n; ++i) metric.h[i] = 0.5 * (rm.metric[i] + rm.metric[i].transpose());

  RebuiltModel out;
  out.bundle = std::make_unique<GridBundle>(build_bundle(grid, atlas, metric));
  EllipticOperatorSpec spec{rm.a2, rm.a1, rm.a0};
  try {
    out.model = std::make_unique<SpectralModel>(*out.bundle, spec);
  } catch (const Error& e) {
    fail("RebuiltModelInvalid", std::string("recovered operator rejected: ") + e.what());
  }
  return out;
}

std::vector<Mat> frame_map(const Scenario& hidden, const RecoveredModel& rm) {
  const int n = rm.nodes;
  const int d = rm.rank;
  std::vector<Mat> map(n);
  for (int x = 0; x < n; ++x) {
    int chart = rm.frame.canonical[x];
    const NodeFrame* frame = nullptr;
    for (const NodeFrame& nf : rm.frame.per_chart[chart]) {
      if (nf.node == x) {
        frame = &nf;
        break;
      }
    }
    if (frame == nullptr) fail("RebuiltModelInvalid", "frame recipe misses a node");
    // Candidate covector rows in hidden canonical coordinates: the
    // volume-normalized pairing of a one-node slice is
    // (w/vol) * slice^T h(x) = slice^T h(x).
    Mat rows(d, d);
    for (int r = 0; r < d; ++r) {
      const DeltaCandidate& cand = frame->candidates[r];
      const SourceFunction& f = hidden.member(cand.family, cand.member);
      Vec slice = f.value_at(to_double(cand.slice_time)).segment(x * d, d);
      double w = hidden.bundle->grid().weights[x];
      rows.row(r) = (w / cand.volume) * (hidden.bundle->metric().h[x] * slice).transpose();
    }
    map[x] = frame->z * rows;
  }
  return map;
}

EquivalenceResult measurement_equivalence(const Scenario& hidden, const RebuiltModel& rebuilt,
                                          const std::vector<Mat>& map, int query_count,
                                          std::uint64_t seed) {
  const int n = hidden.config.hidden.nodes;
  const int d = hidden.config.hidden.rank;
  if (static_cast<int>(map.size()) != n) fail("RebuiltModelInvalid", "frame map size mismatch");

  // Transformed copies of every family member are prepared lazily.
  std::map<std::pair<int, int>, ModalSource> rebuilt_modal;
  std::map<std::pair<int, int>, ModalSource> hidden_modal;
  auto modal_for = [&](int family, int member, bool transformed) -> const ModalSource& {
    auto key = std::make_pair(family, member);
    auto& cache = transformed ? rebuilt_modal : hidden_modal;
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const SourceFunction& f = hidden.member(family, member);
    if (!transformed) {
      return cache.emplace(key, hidden.model->prepare(f)).first->second;
    }
    SourceFunction g = f;
    for (int node = 0; node < n; ++node) {
      g.samples.middleRows(node * d, d) = map[node] * f.samples.middleRows(node * d, d);
      if (g.dsamples.size() > 0) {
        g.dsamples.middleRows(node * d, d) = map[node] * f.dsamples.middleRows(node * d, d);
      }
    }
    return cache.emplace(key, rebuilt.model->prepare(g)).first->second;
  };

  std::mt19937_64 rng(seed);
  const auto& families = hidden.families;
  std::vector<double> errors;
  errors.reserve(query_count);
  for (int q = 0; q < query_count; ++q) {
    int item_count = 2 + static_cast<int>(rng() % 3);
    std::vector<SourceItem> hidden_items, rebuilt_items;
    for (int j = 0; j < item_count; ++j) {
      int family = static_cast<int>(rng() % families.size());
      int member = static_cast<int>(rng() % families[family].member_count());
      // Slot the item into its own time slot left of the origin.
      double hi = families[family].spec().t_hi_d();
      double shift = hi + 1.0 + static_cast<double>(j) + static_cast<double>(rng() % 128) / 1024.0;
      hidden_items.push_back({&modal_for(family, member, false), shift, 1.0});
      rebuilt_items.push_back({&modal_for(family, member, true), shift, 1.0});
    }
    double t = 2.0 + static_cast<double>(rng() % 256) / 256.0;
    double e_hidden = hidden.model->energy(hidden_items, t);
    double e_rebuilt = rebuilt.model->energy(rebuilt_items, t);
    errors.push_back(rel_diff(e_rebuilt, e_hidden));
  }
  std::sort(errors.begin(), errors.end());
  EquivalenceResult out;
  out.query_count = query_count;
  out.max_rel = errors.empty() ? 0.0 : errors.back();
  out.median_rel = errors.empty() ? 0.0 : errors[errors.size() / 2];
  return out;
}

double spectrum_compare(const SpectralModel& a, const SpectralModel& b, int count) {
  int m = std::min({count, a.modes(), b.modes()});
  double worst = 0.0;
  for (int l = 0; l < m; ++l) {
    worst = std::max(worst, rel_diff(a.eigenvalues()[l], b.eigenvalues()[l]));
  }
  return worst;
}

int class_invariant(const GridBundle& bundle) { return bundle.loop_determinant_sign(); }

int class_invariant(const RecoveredModel& rm) { return rm.loop_sign; }

GaugeFit gauge_fit(const Scenario& hidden, const RebuiltModel& rebuilt,
                   const std::vector<Mat>& phi) {
  const int n = hidden.config.hidden.nodes;
  if (class_invariant(*hidden.bundle) != class_invariant(*rebuilt.bundle)) {
    fail("ClassMismatch", "bundle class invariants differ; no global gauge exists");
  }
  GaugeFit out;
  out.phi = phi;

  const auto& h = hidden.bundle->metric().h;
  const auto& hh = rebuilt.bundle->metric().h;
  for (int x = 0; x < n; ++x) {
    Mat pulled = phi[x].transpose() * hh[x] * phi[x];
    out.metric_defect = std::max(
        out.metric_defect, (pulled - h[x]).norm() / std::max(h[x].norm(), 1e-300));
  }

  const OperatorStencil& sa = hidden.model->stencil();
  const OperatorStencil& sb = rebuilt.model->stencil();
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < n; ++i) {
    int im = (i + n - 1) % n;
    int ip = (i + 1) % n;
    num += (phi[i] * sa.lower[i] * phi[im].inverse() - sb.lower[i]).squaredNorm();
    num += (phi[i] * sa.diag[i] * phi[i].inverse() - sb.diag[i]).squaredNorm();
    num += (phi[i] * sa.upper[i] * phi[ip].inverse() - sb.upper[i]).squaredNorm();
    den += sb.lower[i].squaredNorm() + sb.diag[i].squaredNorm() + sb.upper[i].squaredNorm();
  }
  out.conjugation_residual = std::sqrt(num / std::max(den, 1e-300));
  return out;
}

}  // namespace vblab
