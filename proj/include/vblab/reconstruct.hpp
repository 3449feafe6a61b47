#pragma once

#include "vblab/geometry.hpp"
#include "vblab/oracle.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace vblab {

/// Knobs of the inverse engine. Everything here is public information:
/// layout times are rational, tolerances and seeds are artifact parameters.
struct ReconstructConfig {
  Rational slice_time;       // canonical probe slice time (documentation/validation)
  Rational t0;               // wave evaluation time T0 (> probe window)
  Rational lag;              // admissible lag h for wave-level shift differences
  Rational fd_step;          // finite-difference step for measured energy series
  Rational slot_pitch;       // dictionary slot spacing
  int slots_per_member = 2;  // dictionary slots per family member
  double ridge_rel = 1e-10;
  int probe_count = 14;      // generalized-source probes
  int probe_support = 24;    // atoms per probe combination
  std::uint64_t probe_seed = 99;
  double cand_defect_tol = 0.9;   // delta-selection Cauchy defect gate
  double rank_tol = 1e-2;         // relative singular value cut for rank discovery
  double frame_rank_tol = 1e-7;
  double overlap_cond_tol = 1e10;
  double cocycle_tol = 1e-3;
  double fit_residual_tol = 0.25;
};

struct AtomRef {
  int family = 0;
  int member = 0;
  Rational shift;
};

/// Dictionary of pairwise-disjoint shifted atoms; every unordered pair is an
/// admissible two-item query.
struct AtomDictionary {
  std::vector<AtomRef> atoms;
  Rational tau0;  // evaluation time of the Gram (entries are conserved there)
};

/// Cross-energy data: g = 2B(S_i, S_j) at tau0 (symmetric PSD), g_lag the
/// advanced pairings 2B(S_i(t + 2h), S_j(t)) feeding shift-difference algebra.
struct CrossGram {
  Mat g;
  Mat g_lag;
  double ridge = 0.0;
  int rank_estimate = 0;
  double cond_estimate = 0.0;
};

/// Real-coefficient combination of dictionary atoms.
struct VirtualSource {
  Vec coeff;
};

struct SynthesisResult {
  VirtualSource combination;
  double residual_energy = 0.0;
  bool residual_above_tolerance = false;
};

/// One delta candidate: a member of a shrinking-arc family sliced at a
/// rational time, volume-normalized.
struct DeltaCandidate {
  int family = -1;
  int member = 0;
  Rational slice_time;
  double volume = 0.0;
};

struct DeltaSequence {
  int node = 0;
  std::vector<DeltaCandidate> per_level;  // coarse -> fine
  double cauchy_defect = 0.0;
  Vec probe_pairings;  // finest-level normalized position pairings vs probes
};

/// Frame of d delta functionals at one node, stored as the combination
/// matrix z over the selected candidates (dual to the reference probes).
struct NodeFrame {
  int node = 0;
  std::vector<DeltaCandidate> candidates;  // size d
  Mat z;                                   // d x d
};

struct RecoveredFrame {
  std::vector<Chart> charts;
  std::vector<int> canonical;                     // per node
  std::vector<std::vector<NodeFrame>> per_chart;  // frames along each chart
  std::vector<std::vector<int>> ref_probes;       // per chart: d probe columns
  double smoothness_defect = 0.0;
};

struct RecoveredModel {
  int nodes = 0;
  int rank = 0;
  RecoveredFrame frame;
  std::map<std::tuple<int, int, int>, Mat> transitions;  // (alpha, beta, node)
  std::vector<Mat> metric;         // per node, frame coordinates
  std::vector<Mat> metric_coarse;  // 3-node-ball polarization diagnostic
  std::vector<Mat> a2, a1, a0;     // per node, frame coordinates
  int loop_sign = 0;
  double max_cocycle_defect = 0.0;
  double max_fit_residual = 0.0;
  double metric_min_eigenvalue = 0.0;
  double richardson_max_shift = 0.0;
};

struct ReconstructionDiagnostics {
  std::uint64_t queries_gram = 0;
  std::uint64_t queries_pairing = 0;
  std::uint64_t queries_total = 0;
  double gram_cond = 0.0;
  double max_cauchy_defect = 0.0;
  double frame_min_sigma = 0.0;
  double smoothness_defect = 0.0;
  double kernel_rank_margin = 0.0;
};

/// The inverse engine. Sees the oracle, the base manifold with its measure,
/// and the public family descriptors; never the hidden bundle, metric or
/// operator.
class Reconstructor {
 public:
  Reconstructor(const Oracle& oracle, GridManifold grid, ReconstructConfig config);

  /// Stage 1: staggered dictionary, cross-Gram and lag Gram.
  void build_dictionary();
  const AtomDictionary& dictionary() const { return dictionary_; }
  const CrossGram& gram() const { return gram_; }

  /// E(sum_j c_j atom_j, t), reduced to Gram entries (conserved past the
  /// dictionary slots, hence t-independent once admissible).
  double combination_energy(const VirtualSource& c, const Rational& t) const;

  /// Quadratic synthesis against the dictionary (atoms of the target's
  /// member are excluded from the search set). Modes: "negate" (wave of
  /// -target), "copy", "derivative" (wave of d/dt target via a shift
  /// difference at the given lag).
  SynthesisResult synthesize_atom(const AtomRef& target, const std::string& mode,
                                  std::optional<Rational> derivative_lag = std::nullopt);
  /// Same for a virtual-source target (negate/copy).
  SynthesisResult synthesize(const VirtualSource& target, const std::string& mode);

  /// Semi-norm sqrt(E(d^s/dt^s combination, tau0)) via the admissible
  /// shift-difference ladder at the configured lag.
  double seminorm(const VirtualSource& c, int s);

  /// Oracle-only pairing <F2(tau), d^s/dt^s u^{c}(T0)>, s in {0, 1, 2}.
  double pairing(int probe_family, int probe_member, const Rational& tau,
                 const VirtualSource& c, int derivative_order);

  /// Stage 2: probes, delta candidates, frames, overlap cocycle.
  void build_frames();
  const RecoveredFrame& frame() const { return recovered_.frame; }
  const std::vector<DeltaSequence>& delta_sequences() const { return deltas_; }

  /// Stages 3 and 4: fiber metric and operator coefficients (frame coords).
  void recover_metric();
  void recover_operator();

  const RecoveredModel& recovered() const { return recovered_; }
  const ReconstructionDiagnostics& diagnostics() const { return diag_; }
  int probe_count() const { return static_cast<int>(probe_coeff_.cols()); }
  const Mat& probe_coefficients() const { return probe_coeff_; }

  /// All stages in order; returns the recovered model.
  const RecoveredModel& run();

 private:
  struct PairingRows {
    Mat rows;  // 3 x n, advance shifts (T0 - tau) + {-2h, 0, +2h}
  };

  struct CandidateData {
    DeltaCandidate ref;
    int node = 0;
    int level = 0;  // 0 = coarse arc, 1 = finest arc
    PairingRows rows;
    Vec probe_p0;  // volume-normalized position pairings vs probes
  };

  struct ChartFrameData {
    std::vector<int> nodes;
    std::map<int, int> pos;  // node -> index in `nodes`
    std::vector<NodeFrame> frames;
    Mat r0, r1, r2;  // (|nodes| * d) x n frame-functional pairing rows
    Mat y0;          // (|nodes| * d) x P probe position coordinates
  };

  double measure_energy(const std::vector<QueryItem>& items, const Rational& t) const;
  double atom_energy(const AtomRef& a) const;
  double cross_pair(const AtomRef& a, const AtomRef& b, const Rational& t) const;
  Vec cross_vector(const AtomRef& target, const Rational& extra_shift) const;

  PairingRows measure_rows(int family, int member, const Rational& tau);
  Vec p0_row(const PairingRows& rows) const;  // antiderivative contraction row

  void select_probes();
  void collect_candidates();
  void discover_rank();
  void build_chart_frames();
  void solve_transitions();

  const Oracle* oracle_;
  GridManifold grid_;
  ReconstructConfig cfg_;

  AtomDictionary dictionary_;
  CrossGram gram_;
  Eigen::LDLT<Mat> gram_solver_;
  Eigen::LDLT<Mat> anti_solver_;
  Mat gamma_;  // antiderivative operator: coefficients of F-hat -> coefficients of G-hat
  bool have_gram_ = false;

  Mat probe_coeff_;  // n x P

  std::vector<CandidateData> candidates_;
  std::map<int, std::vector<int>> candidates_by_node_;
  std::vector<DeltaSequence> deltas_;

  std::array<ChartFrameData, 2> chart_data_;
  Mat r0_can_, r1_can_;  // (N d) x n rows in each node's canonical frame
  bool have_frames_ = false;

  RecoveredModel recovered_;
  ReconstructionDiagnostics diag_;

  mutable std::map<std::string, double> energy_cache_;
};

}  // namespace vblab
