#pragma once

#include "vblab/forward.hpp"
#include "vblab/geometry.hpp"

#include <cstdint>
#include <vector>

namespace vblab {

/// Public description of a basic-experiment family: the space-time box, the
/// member count and the sampling knobs. This is the only family information
/// the reconstruction side may see.
struct FamilySpec {
  int id = 0;
  std::vector<int> arc_nodes;  // consecutive nodes (wrapping allowed)
  Rational t_lo, t_hi;
  int member_count = 0;
  std::uint64_t seed = 0;
  int sobolev_order = 0;          // s in the covariance weight
  int kl_rank = 400;              // truncation rank R
  int time_points = 9;            // knots across the window, ends included
  double smoothness_scale = 1.0;  // divides -Delta - D_t^2 in the covariance

  double t_lo_d() const { return to_double(t_lo); }
  double t_hi_d() const { return to_double(t_hi); }
};

struct CovarianceDiagnostics {
  double full_trace = 0.0;
  double retained_trace = 0.0;
  int retained_rank = 0;
  double min_retained_weight = 0.0;
};

/// Seeded Gaussian family supported on the closed box U x I. The covariance
/// is the windowed surrogate of exp(-L) K^{-s} with L = -Delta - D_t^2 + t^2
/// and K = -Delta - D_t^2 + 1, realized symmetrically as
/// K^{-s/2} exp(-L) K^{-s/2} over the product grid of the box. Members are
/// reproducible bit-for-bit from (seed, k).
class BasicFamily {
 public:
  BasicFamily(const GridBundle& bundle, FamilySpec spec);

  const FamilySpec& spec() const { return spec_; }
  const CovarianceDiagnostics& diagnostics() const { return diag_; }
  int member_count() const { return spec_.member_count; }
  const SourceFunction& member(int k) const;

  /// Arbitrary-index sampling (used by determinism tests; member(k) for
  /// k < member_count returns the same function).
  SourceFunction sample(int k) const;

  /// Re-expresses every member (and the KL fields) in a gauge-transformed
  /// trivialization: values at node i become g[i] * values.
  void apply_gauge(const std::vector<Mat>& g);

 private:
  const GridBundle* bundle_;
  FamilySpec spec_;
  CovarianceDiagnostics diag_;

  std::vector<double> knots_;
  Mat kl_fields_;   // (arc_dof * time_points) x retained_rank, scaled by sqrt(weight)
  std::vector<SourceFunction> members_;
};

/// Projection residuals of `target` onto span{member_1..member_n} in
/// L2(U x I) for each n in n_grid. Residuals are non-increasing in n by
/// construction (in-place Gram-Schmidt deflation of the target).
std::vector<double> density_residuals(const GridBundle& bundle, const BasicFamily& family,
                                      const SourceFunction& target,
                                      const std::vector<int>& n_grid);

/// L2(U x I) inner product of two sources sharing a knot grid (piecewise
/// linear in time; exact piece integrals).
double source_l2_inner(const GridBundle& bundle, const SourceFunction& a,
                       const SourceFunction& b);

}  // namespace vblab
