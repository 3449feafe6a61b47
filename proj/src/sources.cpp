#include "vblab/sources.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vblab {

namespace {

// Dirichlet-energy Laplacian of the arc (path graph when the arc is proper,
// twisted cycle when it covers the whole circle), assembled as B^T B so it
// is symmetric PSD by construction. Coordinates are canonical per node.
// Full-circle families use the canonical angle metric; proper arcs are
// arc-normalized (like the window-normalized time axis) so that their
// covariance keeps every arc mode representable.
Mat arc_laplacian(const GridBundle& bundle, const std::vector<int>& arc) {
  const int d = bundle.rank();
  const int m = static_cast<int>(arc.size());
  const int n = bundle.grid().node_count;
  const bool full_circle = (m == n);
  const double spacing = full_circle ? bundle.grid().spacing() : 1.0 / std::max(m - 1, 1);
  Mat l = Mat::Zero(m * d, m * d);
  const int edges = full_circle ? m : m - 1;
  for (int e = 0; e < edges; ++e) {
    int i = arc[e];
    int jpos = (e + 1) % m;
    if (bundle.grid().next(i) != arc[jpos]) {
      fail("ConfigInvalid", "family arc nodes must be consecutive");
    }
    // Edge energy |fwd u_{i+1} - u_i|^2 / spacing^2.
    const Mat& t = bundle.forward_transport(i);
    Mat tt = t.transpose() * t;
    double w = 1.0 / (spacing * spacing);
    l.block(e * d, e * d, d, d) += w * Mat::Identity(d, d);
    l.block(jpos * d, jpos * d, d, d) += w * tt;
    l.block(e * d, jpos * d, d, d) -= w * t;
    l.block(jpos * d, e * d, d, d) -= w * t.transpose();
  }
  return l;
}

// Neumann second-difference matrix in window-normalized time (the window
// mapped to [0, 1]); absolute time enters only through the potential.
// Window normalization keeps exp(-L) representable in double precision on
// short windows.
Mat temporal_operator(const std::vector<double>& knots, bool harmonic_potential,
                      double smoothness_scale) {
  const int k = static_cast<int>(knots.size());
  const double ds = 1.0 / (k - 1);
  Mat t = Mat::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    double diag = 2.0 / (ds * ds);
    if (i == 0 || i == k - 1) diag = 1.0 / (ds * ds);
    t(i, i) = diag / smoothness_scale + (harmonic_potential ? knots[i] * knots[i] : 1.0);
    if (i + 1 < k) {
      t(i, i + 1) = -1.0 / (ds * ds) / smoothness_scale;
      t(i + 1, i) = -1.0 / (ds * ds) / smoothness_scale;
    }
  }
  return t;
}

}  // namespace

BasicFamily::BasicFamily(const GridBundle& bundle, FamilySpec spec)
    : bundle_(&bundle), spec_(std::move(spec)) {
  if (spec_.member_count < 1) fail("InvalidCount", "family needs member_count >= 1");
  if (spec_.arc_nodes.empty()) fail("ConfigInvalid", "family arc is empty");
  if (!(spec_.t_lo < spec_.t_hi)) fail("ConfigInvalid", "family interval is empty");
  if (spec_.time_points < 2) fail("ConfigInvalid", "family needs >= 2 time points");
  if (spec_.sobolev_order < 0) fail("ConfigInvalid", "sobolev order must be >= 0");
  if (spec_.kl_rank < 1) fail("ConfigInvalid", "KL rank must be >= 1");

  const int d = bundle.rank();
  const int m = static_cast<int>(spec_.arc_nodes.size());
  const int tp = spec_.time_points;
  const double lo = spec_.t_lo_d();
  const double hi = spec_.t_hi_d();
  knots_.resize(tp);
  for (int j = 0; j < tp; ++j) knots_[j] = lo + (hi - lo) * j / (tp - 1);

  if (!(spec_.smoothness_scale > 0.0)) {
    fail("ConfigInvalid", "smoothness_scale must be positive");
  }
  Eigen::SelfAdjointEigenSolver<Mat> spatial(arc_laplacian(bundle, spec_.arc_nodes) /
                                             spec_.smoothness_scale);
  Vec mu = spatial.eigenvalues().cwiseMax(0.0);
  const Mat& vx = spatial.eigenvectors();

  const Mat t_l = temporal_operator(knots_, /*harmonic_potential=*/true, spec_.smoothness_scale);
  const Mat t_k = temporal_operator(knots_, /*harmonic_potential=*/false, spec_.smoothness_scale);
  const int s = spec_.sobolev_order;

  struct Mode {
    double weight;
    int a, b;
  };
  std::vector<Mode> all;
  Mat time_fields(tp, m * d * tp);  // eigenvectors g_{ab}, column index a*tp+b
  all.reserve(m * d * tp);
  diag_.full_trace = 0.0;
  for (int a = 0; a < m * d; ++a) {
    Mat l_a = t_l + mu[a] * Mat::Identity(tp, tp);
    Mat k_a = t_k + mu[a] * Mat::Identity(tp, tp);
    Eigen::SelfAdjointEigenSolver<Mat> el(l_a);
    Eigen::SelfAdjointEigenSolver<Mat> ek(k_a);
    Mat exp_l = el.eigenvectors() *
                (-el.eigenvalues().array()).exp().matrix().asDiagonal() *
                el.eigenvectors().transpose();
    Mat c_a = exp_l;
    if (s > 0) {
      Mat k_half = ek.eigenvectors() *
                   ek.eigenvalues().array().pow(-0.5 * s).matrix().asDiagonal() *
                   ek.eigenvectors().transpose();
      c_a = k_half * exp_l * k_half;
    }
    Eigen::SelfAdjointEigenSolver<Mat> ec(0.5 * (c_a + c_a.transpose()));
    for (int b = 0; b < tp; ++b) {
      double w = ec.eigenvalues()[b];
      diag_.full_trace += std::max(w, 0.0);
      all.push_back({w, a, b});
      time_fields.col(a * tp + b) = ec.eigenvectors().col(b);
    }
  }

  std::sort(all.begin(), all.end(), [](const Mode& x, const Mode& y) {
    if (x.weight != y.weight) return x.weight > y.weight;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  const double floor_weight = all.front().weight * 1e-28;
  int keep = 0;
  while (keep < static_cast<int>(all.size()) && keep < spec_.kl_rank &&
         all[keep].weight > floor_weight) {
    ++keep;
  }
  if (keep == 0 || all[0].weight <= 0.0) {
    fail("DegenerateCovariance", "no positive KL weight retained");
  }
  diag_.retained_rank = keep;
  diag_.min_retained_weight = all[keep - 1].weight;
  diag_.retained_trace = 0.0;

  kl_fields_.resize(m * d * tp, keep);
  for (int j = 0; j < keep; ++j) {
    const Mode& mode = all[j];
    diag_.retained_trace += mode.weight;
    // Product field sqrt(weight) * v_a (x) g_ab, laid out space-major.
    const Vec vx_col = vx.col(mode.a);
    const Vec g = time_fields.col(mode.a * tp + mode.b);
    double scale = std::sqrt(mode.weight);
    for (int r = 0; r < m * d; ++r) {
      for (int q = 0; q < tp; ++q) {
        kl_fields_(r * tp + q, j) = scale * vx_col[r] * g[q];
      }
    }
  }

  members_.reserve(spec_.member_count);
  for (int k = 0; k < spec_.member_count; ++k) members_.push_back(sample(k));
}

SourceFunction BasicFamily::sample(int k) const {
  if (k < 0) fail("UnknownMember", "member index must be >= 0");
  const int d = bundle_->rank();
  const int m = static_cast<int>(spec_.arc_nodes.size());
  const int tp = spec_.time_points;
  const int keep = static_cast<int>(kl_fields_.cols());

  GaussianStream gauss(GaussianStream::derive_seed(spec_.seed, static_cast<std::uint64_t>(k)));
  Vec xi(keep);
  for (int j = 0; j < keep; ++j) xi[j] = gauss.next();
  Vec flat = kl_fields_ * xi;  // (m*d*tp)

  SourceFunction f;
  f.knots = knots_;
  f.samples = Mat::Zero(bundle_->dof(), tp);
  for (int r = 0; r < m; ++r) {
    int node = spec_.arc_nodes[r];
    for (int c = 0; c < d; ++c) {
      for (int q = 0; q < tp; ++q) {
        f.samples(node * d + c, q) = flat[(r * d + c) * tp + q];
      }
    }
  }
  return f;
}

void BasicFamily::apply_gauge(const std::vector<Mat>& g) {
  const int d = bundle_->rank();
  const int tp = spec_.time_points;
  for (SourceFunction& f : members_) {
    for (int node = 0; node < static_cast<int>(g.size()); ++node) {
      f.samples.middleRows(node * d, d) = g[node] * f.samples.middleRows(node * d, d);
    }
  }
  for (int r = 0; r < static_cast<int>(spec_.arc_nodes.size()); ++r) {
    int node = spec_.arc_nodes[r];
    for (int q = 0; q < tp; ++q) {
      for (int col = 0; col < static_cast<int>(kl_fields_.cols()); ++col) {
        Vec v(d);
        for (int c = 0; c < d; ++c) v[c] = kl_fields_((r * d + c) * tp + q, col);
        v = g[node] * v;
        for (int c = 0; c < d; ++c) kl_fields_((r * d + c) * tp + q, col) = v[c];
      }
    }
  }
}

const SourceFunction& BasicFamily::member(int k) const {
  if (k < 0 || k >= spec_.member_count) {
    std::ostringstream os;
    os << "member " << k << " outside family of " << spec_.member_count;
    fail("UnknownMember", os.str());
  }
  return members_[k];
}

double source_l2_inner(const GridBundle& bundle, const SourceFunction& a,
                       const SourceFunction& b) {
  if (a.knots.size() != b.knots.size()) fail("ConfigInvalid", "sources on different knot grids");
  for (std::size_t k = 0; k < a.knots.size(); ++k) {
    if (a.knots[k] != b.knots[k]) fail("ConfigInvalid", "sources on different knot grids");
  }
  const Mat& h = bundle.mass_matrix();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < a.knots.size(); ++k) {
    double len = a.knots[k + 1] - a.knots[k];
    Vec ha0 = h * a.samples.col(k);
    Vec ha1 = h * a.samples.col(k + 1);
    double f00 = ha0.dot(b.samples.col(k));
    double f01 = ha0.dot(b.samples.col(k + 1));
    double f10 = ha1.dot(b.samples.col(k));
    double f11 = ha1.dot(b.samples.col(k + 1));
    acc += len / 6.0 * (2.0 * f00 + f01 + f10 + 2.0 * f11);
  }
  return acc;
}

std::vector<double> density_residuals(const GridBundle& bundle, const BasicFamily& family,
                                      const SourceFunction& target,
                                      const std::vector<int>& n_grid) {
  // Flatten to plain euclidean vectors: x = H^{1/2} S R^T with W_time = R^T R,
  // so Frobenius dots reproduce the L2(U x I) inner product.
  const SourceFunction& first = family.member(0);
  const int kk = static_cast<int>(first.knots.size());
  Mat w_time = Mat::Zero(kk, kk);
  for (int k = 0; k + 1 < kk; ++k) {
    double len = first.knots[k + 1] - first.knots[k];
    w_time(k, k) += len / 3.0;
    w_time(k + 1, k + 1) += len / 3.0;
    w_time(k, k + 1) += len / 6.0;
    w_time(k + 1, k) += len / 6.0;
  }
  Eigen::LLT<Mat> wllt(w_time);
  Mat r_t = Mat(wllt.matrixL()).transpose();

  Eigen::LLT<Mat> hllt(bundle.mass_matrix());
  Mat h_half = Mat(hllt.matrixL()).transpose();

  auto flatten = [&](const SourceFunction& f) {
    Mat x = h_half * f.samples * r_t.transpose();
    return Vec(Eigen::Map<const Vec>(x.data(), x.size()));
  };

  Vec resid = flatten(target);
  std::vector<Vec> basis;
  std::vector<double> out;
  out.reserve(n_grid.size());
  int built = 0;
  for (int n : n_grid) {
    if (n < 0 || n > family.member_count()) fail("InvalidCount", "n outside family size");
    for (; built < n; ++built) {
      Vec v = flatten(family.member(built));
      double norm0 = v.norm();
      for (int pass = 0; pass < 2; ++pass) {
        for (const Vec& q : basis) v -= q.dot(v) * q;
      }
      if (v.norm() > 1e-12 * std::max(norm0, 1e-300)) {
        v.normalize();
        basis.push_back(v);
        resid -= basis.back().dot(resid) * basis.back();
      }
    }
    out.push_back(resid.norm());
  }
  return out;
}

}  // namespace vblab
