#pragma once

#include "vblab/geometry.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace vblab {

/// Per-node coefficient matrices of A u = a2 u'' + a1 u' + a0 u in each
/// node's canonical chart.
struct EllipticOperatorSpec {
  std::vector<Mat> a2, a1, a0;
};

/// Three-point stencil blocks in stacked canonical coordinates:
/// (A u)_i = lower_i u_{i-1} + diag_i u_i + upper_i u_{i+1}.
struct OperatorStencil {
  std::vector<Mat> lower, diag, upper;
};

/// Space-time source: spatial fields sampled on a time grid, cubic Hermite
/// in time when derivative samples are present, piecewise linear otherwise.
/// Zero continuation outside [knots.front(), knots.back()].
struct SourceFunction {
  std::vector<double> knots;
  Mat samples;   // dof x K
  Mat dsamples;  // dof x K, may be empty

  double t_begin() const { return knots.front(); }
  double t_end() const { return knots.back(); }
  bool hermite() const { return dsamples.size() > 0; }
  Vec value_at(double t) const;

  void validate() const;
};

/// A source prepared against one spectral basis: modal knot values plus the
/// full-support oscillatory moments. Partial moments are memoized per
/// request time; evaluation itself is pure.
class ModalSource {
 public:
  ModalSource() = default;

  double t_begin() const { return knots_.front(); }
  double t_end() const { return knots_.back(); }

  /// Scaled-position / velocity contribution of the mode expansion at
  /// absolute time tau (the caller folds time shifts into tau):
  /// p_l += coeff * omega_l u_l(tau), v_l += coeff * d/dt u_l(tau).
  void accumulate_state(double tau, double coeff, Vec& p, Vec& v) const;

  /// Time integral of the squared H^s norm of the profile over its support.
  double squared_l2_hs_time_norm(int s) const;

 private:
  friend class SpectralModel;

  struct MomentCache {
    std::mutex mutex;
    std::map<double, std::pair<Vec, Vec>> entries;
  };

  std::vector<double> knots_;
  Mat values_;    // modes x K
  Mat dvalues_;   // modes x K or empty
  Vec cos_sig_, sin_sig_;
  std::shared_ptr<const Vec> omega_;
  std::shared_ptr<const Vec> lambda_;
  std::shared_ptr<MomentCache> cache_;

  std::pair<Vec, Vec> partial_moments(double tau) const;
};

/// One summand of a combined experiment: a prepared source, time shift T
/// (the wave satisfies u^{shifted}(t) = u^{original}(t + T)) and a real
/// coefficient.
struct SourceItem {
  const ModalSource* source = nullptr;
  double shift = 0.0;
  double coeff = 1.0;
};

struct CauchyState {
  double t = 0.0;
  Vec u;
  Vec ut;
};

/// Eigen decomposition of the assembled self-adjoint positive operator with
/// spectral Duhamel evolution. Immutable; evaluation methods are const and
/// safe for concurrent use.
class SpectralModel {
 public:
  SpectralModel(const GridBundle& bundle, const EllipticOperatorSpec& spec,
                double max_raw_asymmetry = 1.0);
  SpectralModel(const GridBundle& bundle, const OperatorStencil& stencil,
                double max_raw_asymmetry = 1.0);

  const GridBundle& bundle() const { return *bundle_; }
  const EllipticOperatorSpec& coefficients() const { return coefficients_; }
  const OperatorStencil& stencil() const { return stencil_; }

  int modes() const { return static_cast<int>(lambda_.size()); }
  const Vec& eigenvalues() const { return lambda_; }
  const Vec& frequencies() const { return *omega_; }
  /// Columns are H-orthonormal eigensections (stacked canonical coords).
  const Mat& basis() const { return basis_; }
  double raw_asymmetry() const { return raw_asymmetry_; }
  double max_residual() const { return max_residual_; }
  const Mat& operator_matrix() const { return assembled_; }

  Vec project(const Vec& stacked) const;         // Phi^T H v
  Vec synthesize_modes(const Vec& modal) const;  // Phi modal

  double sobolev_norm(const Vec& stacked, int s) const;

  ModalSource prepare(const SourceFunction& f) const;

  /// Modal state of a sum of shifted sources at time t.
  void evolve_modal(std::span<const SourceItem> items, double t, Vec& p, Vec& v) const;
  CauchyState evolve(std::span<const SourceItem> items, double t) const;
  double energy(std::span<const SourceItem> items, double t) const;

  CauchyState evolve(const ModalSource& f, double t) const;
  double energy(const ModalSource& f, double t) const;

 private:
  void decompose(double max_raw_asymmetry);

  const GridBundle* bundle_;
  EllipticOperatorSpec coefficients_;
  OperatorStencil stencil_;
  Mat assembled_;  // symmetrized in the metric inner product
  Vec lambda_;
  std::shared_ptr<Vec> omega_;
  std::shared_ptr<Vec> lambda_shared_;
  Mat basis_;
  double raw_asymmetry_ = 0.0;
  double max_residual_ = 0.0;
};

/// Stencil blocks of the standard second-order twisted discretization.
OperatorStencil discretize(const GridBundle& bundle, const EllipticOperatorSpec& spec);

/// Exact inverse of `discretize`: coefficient fields from stencil blocks.
EllipticOperatorSpec coefficients_from_stencil(const GridBundle& bundle,
                                               const OperatorStencil& stencil);

/// Test-harness helper: a smooth source supported in [t_lo, t_hi] whose wave
/// reaches Cauchy data (a, b) at tau0 = t_hi (cutoff construction; past the
/// support the wave is the free wave through that data).
SourceFunction source_for_cauchy_data(const SpectralModel& model, const Vec& a,
                                      const Vec& b, double t_lo, double t_hi,
                                      int knot_count = 257);

}  // namespace vblab
