#pragma once

#include "vblab/reconstruct.hpp"
#include "vblab/scenario.hpp"

#include <memory>
#include <vector>

namespace vblab {

/// A runnable model assembled from reconstruction output.
struct RebuiltModel {
  std::unique_ptr<GridBundle> bundle;
  std::unique_ptr<SpectralModel> model;
};

/// Validates the recovered data (SPD metric, positive operator) and builds
/// the simulatable model on the recovered bundle.
RebuiltModel assemble_recovered(const RecoveredModel& rm);

/// The recovered frame covectors expressed in the hidden trivialization:
/// coordinates of a hidden section v at node x are M(x) * v. Test-harness
/// only: uses hidden member functions.
std::vector<Mat> frame_map(const Scenario& hidden, const RecoveredModel& rm);

struct EquivalenceResult {
  double max_rel = 0.0;
  double median_rel = 0.0;
  int query_count = 0;
};

/// Held-out admissible queries evaluated on the hidden model and on the
/// rebuilt model driven by the same sources expressed in recovered
/// coordinates through the frame map.
EquivalenceResult measurement_equivalence(const Scenario& hidden, const RebuiltModel& rebuilt,
                                          const std::vector<Mat>& map, int query_count,
                                          std::uint64_t seed);

/// Max relative deviation of the first `count` sorted eigenvalues.
double spectrum_compare(const SpectralModel& a, const SpectralModel& b, int count);

/// Sign of the loop product of transition determinants.
int class_invariant(const GridBundle& bundle);
int class_invariant(const RecoveredModel& rm);

struct GaugeFit {
  std::vector<Mat> phi;          // per node, hidden -> rebuilt coordinates
  double conjugation_residual = 0.0;  // stencil conjugation defect, relative
  double metric_defect = 0.0;         // max_x |Phi^T h-hat Phi - h| / |h|
};

/// Validates Theorem-level gauge equivalence for a known candidate map
/// (identity, an explicit conjugation gauge, or the recovered frame map).
GaugeFit gauge_fit(const Scenario& hidden, const RebuiltModel& rebuilt,
                   const std::vector<Mat>& phi);

}  // namespace vblab
