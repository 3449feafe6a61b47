#include "vblab/forward.hpp"

#include <cmath>
#include <sstream>

namespace vblab {

namespace {

// 10-point Gauss-Legendre rule on [-1, 1].
constexpr int kGl = 10;
constexpr double kGlNode[kGl] = {
    -0.9739065285171717, -0.8650633666889845, -0.6794095682990244,
    -0.4333953941292472, -0.1488743389816312, 0.1488743389816312,
    0.4333953941292472,  0.6794095682990244,  0.8650633666889845,
    0.9739065285171717};
constexpr double kGlWeight[kGl] = {
    0.0666713443086881, 0.1494513491505806, 0.2190863625159820,
    0.2692667193099963, 0.2955242247147529, 0.2955242247147529,
    0.2692667193099963, 0.2190863625159820, 0.1494513491505806,
    0.0666713443086881};

// Hermite-cubic evaluation on a knot interval of length len at local
// coordinate theta in [0,1]; falls back to linear interpolation when no
// derivative data is present.
inline double piece_value(double y0, double y1, double d0, double d1, bool hermite,
                          double len, double theta) {
  if (!hermite) return y0 + (y1 - y0) * theta;
  double t2 = theta * theta;
  double t3 = t2 * theta;
  double h00 = 2 * t3 - 3 * t2 + 1;
  double h10 = t3 - 2 * t2 + theta;
  double h01 = -2 * t3 + 3 * t2;
  double h11 = t3 - t2;
  return y0 * h00 + d0 * len * h10 + y1 * h01 + d1 * len * h11;
}

}  // namespace

Vec SourceFunction::value_at(double t) const {
  Vec out = Vec::Zero(samples.rows());
  if (knots.empty() || t < knots.front() || t > knots.back()) return out;
  auto hi = std::upper_bound(knots.begin(), knots.end(), t);
  std::size_t k1 = std::min<std::size_t>(hi - knots.begin(), knots.size() - 1);
  std::size_t k0 = k1 - (k1 > 0 ? 1 : 0);
  if (k0 == k1) return samples.col(k0);
  double len = knots[k1] - knots[k0];
  double theta = (t - knots[k0]) / len;
  if (!hermite()) return samples.col(k0) + theta * (samples.col(k1) - samples.col(k0));
  Vec out2(samples.rows());
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    out2[r] = piece_value(samples(r, k0), samples(r, k1), dsamples(r, k0),
                          dsamples(r, k1), true, len, theta);
  }
  return out2;
}

void SourceFunction::validate() const {
  if (knots.size() < 2) fail("ConfigInvalid", "source needs at least two knots");
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    if (!(knots[k] < knots[k + 1])) fail("ConfigInvalid", "source knots must increase");
  }
  if (samples.cols() != static_cast<Eigen::Index>(knots.size())) {
    fail("ConfigInvalid", "source samples inconsistent with knots");
  }
  if (dsamples.size() > 0 &&
      (dsamples.rows() != samples.rows() || dsamples.cols() != samples.cols())) {
    fail("ConfigInvalid", "source derivative samples shape mismatch");
  }
  if (!samples.allFinite() || (dsamples.size() > 0 && !dsamples.allFinite())) {
    fail("QuadratureFailure", "source samples not finite");
  }
}

std::pair<Vec, Vec> ModalSource::partial_moments(double tau) const {
  {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->entries.find(tau);
    if (it != cache_->entries.end()) return it->second;
  }

  const Vec& omega = *omega_;
  const int modes = static_cast<int>(values_.rows());
  const int pieces = static_cast<int>(knots_.size()) - 1;
  const bool herm = dvalues_.size() > 0;
  Vec c = Vec::Zero(modes);
  Vec s = Vec::Zero(modes);
  for (int l = 0; l < modes; ++l) {
    double w = omega[l];
    double cl = 0.0, sl = 0.0;
    for (int k = 0; k < pieces; ++k) {
      double a = knots_[k];
      double b = std::min(knots_[k + 1], tau);
      if (b <= a) break;
      double full_len = knots_[k + 1] - knots_[k];
      int panels = static_cast<int>(std::ceil((b - a) * std::max(w, 1.0) / 1.5));
      panels = std::max(panels, 1);
      double plen = (b - a) / panels;
      double y0 = values_(l, k), y1 = values_(l, k + 1);
      double d0 = herm ? dvalues_(l, k) : 0.0;
      double d1 = herm ? dvalues_(l, k + 1) : 0.0;
      for (int p = 0; p < panels; ++p) {
        double lo = a + p * plen;
        double half = 0.5 * plen;
        double mid = lo + half;
        for (int g = 0; g < kGl; ++g) {
          double sg = mid + half * kGlNode[g];
          double theta = (sg - knots_[k]) / full_len;
          double f = piece_value(y0, y1, d0, d1, herm, full_len, theta);
          double wq = kGlWeight[g] * half;
          cl += wq * f * std::cos(w * sg);
          sl += wq * f * std::sin(w * sg);
        }
      }
      if (knots_[k + 1] >= tau) break;
    }
    c[l] = cl;
    s[l] = sl;
    if (!std::isfinite(cl) || !std::isfinite(sl)) {
      fail("QuadratureFailure", "non-finite mode integral");
    }
  }
  {
    std::lock_guard<std::mutex> lock(cache_->mutex);
    cache_->entries.emplace(tau, std::make_pair(c, s));
  }
  return {c, s};
}

void ModalSource::accumulate_state(double tau, double coeff, Vec& p, Vec& v) const {
  if (tau <= t_begin()) return;
  const Vec& omega = *omega_;
  Vec c, s;
  if (tau >= t_end()) {
    c = cos_sig_;
    s = sin_sig_;
  } else {
    auto cs = partial_moments(tau);
    c = std::move(cs.first);
    s = std::move(cs.second);
  }
  Eigen::ArrayXd phase = omega.array() * tau;
  Eigen::ArrayXd sn = phase.sin();
  Eigen::ArrayXd cn = phase.cos();
  p.array() += coeff * (sn * c.array() - cn * s.array());
  v.array() += coeff * (cn * c.array() + sn * s.array());
}

double ModalSource::squared_l2_hs_time_norm(int s) const {
  const int modes = static_cast<int>(values_.rows());
  const int pieces = static_cast<int>(knots_.size()) - 1;
  const bool herm = dvalues_.size() > 0;
  double total = 0.0;
  for (int l = 0; l < modes; ++l) {
    double weight = 1.0 + std::pow((*lambda_)[l], s);
    double acc = 0.0;
    for (int k = 0; k < pieces; ++k) {
      double len = knots_[k + 1] - knots_[k];
      double y0 = values_(l, k), y1 = values_(l, k + 1);
      double d0 = herm ? dvalues_(l, k) : 0.0;
      double d1 = herm ? dvalues_(l, k + 1) : 0.0;
      double half = 0.5 * len;
      for (int g = 0; g < kGl; ++g) {
        double theta = 0.5 * (1.0 + kGlNode[g]);
        double f = piece_value(y0, y1, d0, d1, herm, len, theta);
        acc += kGlWeight[g] * half * f * f;
      }
    }
    total += weight * acc;
  }
  return total;
}

OperatorStencil discretize(const GridBundle& bundle, const EllipticOperatorSpec& spec) {
  const int n = bundle.grid().node_count;
  const int d = bundle.rank();
  if (static_cast<int>(spec.a2.size()) != n || static_cast<int>(spec.a1.size()) != n ||
      static_cast<int>(spec.a0.size()) != n) {
    fail("ConfigInvalid", "operator coefficients need one matrix per node");
  }
  const double dx = bundle.grid().spacing();
  OperatorStencil st;
  st.lower.resize(n);
  st.diag.resize(n);
  st.upper.resize(n);
  for (int i = 0; i < n; ++i) {
    if (spec.a2[i].rows() != d || spec.a1[i].rows() != d || spec.a0[i].rows() != d) {
      fail("ConfigInvalid", "operator coefficient shape mismatch");
    }
    st.upper[i] = (spec.a2[i] / (dx * dx) + spec.a1[i] / (2.0 * dx)) * bundle.forward_transport(i);
    st.lower[i] = (spec.a2[i] / (dx * dx) - spec.a1[i] / (2.0 * dx)) * bundle.backward_transport(i);
    st.diag[i] = spec.a0[i] - 2.0 * spec.a2[i] / (dx * dx);
  }
  return st;
}

EllipticOperatorSpec coefficients_from_stencil(const GridBundle& bundle,
                                               const OperatorStencil& stencil) {
  const int n = bundle.grid().node_count;
  const double dx = bundle.grid().spacing();
  EllipticOperatorSpec spec;
  spec.a2.resize(n);
  spec.a1.resize(n);
  spec.a0.resize(n);
  for (int i = 0; i < n; ++i) {
    Mat plus = stencil.upper[i] * bundle.forward_transport(i).inverse();
    Mat minus = stencil.lower[i] * bundle.backward_transport(i).inverse();
    spec.a2[i] = 0.5 * dx * dx * (plus + minus);
    spec.a1[i] = dx * (plus - minus);
    spec.a0[i] = stencil.diag[i] + 2.0 * spec.a2[i] / (dx * dx);
  }
  return spec;
}

SpectralModel::SpectralModel(const GridBundle& bundle, const EllipticOperatorSpec& spec,
                             double max_raw_asymmetry)
    : SpectralModel(bundle, discretize(bundle, spec), max_raw_asymmetry) {}

SpectralModel::SpectralModel(const GridBundle& bundle, const OperatorStencil& stencil,
                             double max_raw_asymmetry)
    : bundle_(&bundle), stencil_(stencil) {
  decompose(max_raw_asymmetry);
}

void SpectralModel::decompose(double max_raw_asymmetry) {
  const GridBundle& bundle = *bundle_;
  const int n = bundle.grid().node_count;
  const int d = bundle.rank();
  const int dof = n * d;

  Mat a = Mat::Zero(dof, dof);
  for (int i = 0; i < n; ++i) {
    int ip = bundle.grid().next(i);
    int im = bundle.grid().prev(i);
    a.block(i * d, im * d, d, d) += stencil_.lower[i];
    a.block(i * d, i * d, d, d) += stencil_.diag[i];
    a.block(i * d, ip * d, d, d) += stencil_.upper[i];
  }

  const Mat& mass = bundle.mass_matrix();
  Mat ha = mass * a;
  double scale = ha.cwiseAbs().maxCoeff();
  raw_asymmetry_ = (ha - ha.transpose()).cwiseAbs().maxCoeff() / std::max(scale, 1e-300);
  if (raw_asymmetry_ > max_raw_asymmetry) {
    std::ostringstream os;
    os << "operator asymmetry " << raw_asymmetry_ << " exceeds cap " << max_raw_asymmetry;
    fail("NotSelfAdjoint", os.str());
  }
  Mat sym = 0.5 * (ha + ha.transpose());

  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(sym, mass);
  if (es.info() != Eigen::Success) fail("NotSelfAdjoint", "eigendecomposition failed");
  lambda_ = es.eigenvalues();
  basis_ = es.eigenvectors();
  if (lambda_.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "operator not positive, min eigenvalue " << lambda_.minCoeff();
    fail("NotPositive", os.str());
  }

  // Self-adjoint realization (the hidden truth) and exact coefficient form.
  Eigen::LLT<Mat> llt(mass);
  assembled_ = llt.solve(sym);
  for (int i = 0; i < n; ++i) {
    int ip = bundle.grid().next(i);
    int im = bundle.grid().prev(i);
    stencil_.lower[i] = assembled_.block(i * d, im * d, d, d);
    stencil_.diag[i] = assembled_.block(i * d, i * d, d, d);
    stencil_.upper[i] = assembled_.block(i * d, ip * d, d, d);
  }
  coefficients_ = coefficients_from_stencil(bundle, stencil_);

  omega_ = std::make_shared<Vec>(lambda_.array().sqrt().matrix());
  lambda_shared_ = std::make_shared<Vec>(lambda_);

  Mat residual = assembled_ * basis_ - basis_ * lambda_.asDiagonal();
  max_residual_ = 0.0;
  for (int l = 0; l < dof; ++l) {
    max_residual_ = std::max(max_residual_, residual.col(l).norm() / basis_.col(l).norm());
  }
}

Vec SpectralModel::project(const Vec& stacked) const {
  return basis_.transpose() * (bundle_->mass_matrix() * stacked);
}

Vec SpectralModel::synthesize_modes(const Vec& modal) const { return basis_ * modal; }

double SpectralModel::sobolev_norm(const Vec& stacked, int s) const {
  if (s < 0) fail("ConfigInvalid", "Sobolev order must be >= 0");
  Vec modal = project(stacked);
  double acc = 0.0;
  for (int l = 0; l < modes(); ++l) {
    acc += (1.0 + std::pow(lambda_[l], s)) * modal[l] * modal[l];
  }
  return std::sqrt(acc);
}

ModalSource SpectralModel::prepare(const SourceFunction& f) const {
  f.validate();
  if (f.samples.rows() != bundle_->dof()) {
    fail("ChartMismatch", "source field size does not match bundle dof");
  }
  ModalSource m;
  m.knots_ = f.knots;
  Mat proj = basis_.transpose() * bundle_->mass_matrix();
  m.values_ = proj * f.samples;
  if (f.hermite()) m.dvalues_ = proj * f.dsamples;
  m.omega_ = omega_;
  m.lambda_ = lambda_shared_;
  m.cache_ = std::make_shared<ModalSource::MomentCache>();
  auto sig = m.partial_moments(m.t_end());
  m.cos_sig_ = std::move(sig.first);
  m.sin_sig_ = std::move(sig.second);
  return m;
}

void SpectralModel::evolve_modal(std::span<const SourceItem> items, double t, Vec& p,
                                 Vec& v) const {
  p = Vec::Zero(modes());
  v = Vec::Zero(modes());
  for (const auto& item : items) {
    item.source->accumulate_state(t + item.shift, item.coeff, p, v);
  }
}

CauchyState SpectralModel::evolve(std::span<const SourceItem> items, double t) const {
  Vec p, v;
  evolve_modal(items, t, p, v);
  CauchyState st;
  st.t = t;
  st.u = basis_ * (p.array() / omega_->array()).matrix();
  st.ut = basis_ * v;
  return st;
}

double SpectralModel::energy(std::span<const SourceItem> items, double t) const {
  Vec p, v;
  evolve_modal(items, t, p, v);
  return 0.5 * (p.squaredNorm() + v.squaredNorm());
}

CauchyState SpectralModel::evolve(const ModalSource& f, double t) const {
  SourceItem item{&f, 0.0, 1.0};
  return evolve(std::span<const SourceItem>(&item, 1), t);
}

double SpectralModel::energy(const ModalSource& f, double t) const {
  SourceItem item{&f, 0.0, 1.0};
  return energy(std::span<const SourceItem>(&item, 1), t);
}

SourceFunction source_for_cauchy_data(const SpectralModel& model, const Vec& a, const Vec& b,
                                      double t_lo, double t_hi, int knot_count) {
  if (!(t_lo < t_hi)) fail("ConfigInvalid", "cutoff interval must be nonempty");
  const Vec am = model.project(a);
  const Vec bm = model.project(b);
  const Vec& omega = model.frequencies();
  const Vec& lambda = model.eigenvalues();
  const int modes = model.modes();
  const double len = t_hi - t_lo;
  const double tau0 = t_hi;

  SourceFunction f;
  f.knots.resize(knot_count);
  Mat modal(modes, knot_count);
  Mat dmodal(modes, knot_count);
  for (int k = 0; k < knot_count; ++k) {
    double t = t_lo + len * k / (knot_count - 1);
    f.knots[k] = t;
    double x = (t - t_lo) / len;
    double psi1 = 30.0 * x * x * (1.0 - x) * (1.0 - x) / len;
    double psi2 = 60.0 * x * (1.0 - 3.0 * x + 2.0 * x * x) / (len * len);
    double psi3 = 60.0 * (1.0 - 6.0 * x + 6.0 * x * x) / (len * len * len);
    for (int l = 0; l < modes; ++l) {
      double w = omega[l];
      double ph = w * (t - tau0);
      double vl = am[l] * std::cos(ph) + (bm[l] / w) * std::sin(ph);
      double vld = -am[l] * w * std::sin(ph) + bm[l] * std::cos(ph);
      double vldd = -lambda[l] * vl;
      modal(l, k) = psi2 * vl + 2.0 * psi1 * vld;
      dmodal(l, k) = psi3 * vl + 3.0 * psi2 * vld + 2.0 * psi1 * vldd;
    }
  }
  f.samples = model.basis() * modal;
  f.dsamples = model.basis() * dmodal;
  return f;
}

}  // namespace vblab
