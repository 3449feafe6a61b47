#pragma once

#include "vblab/forward.hpp"
#include "vblab/geometry.hpp"
#include "vblab/oracle.hpp"
#include "vblab/reconstruct.hpp"
#include "vblab/sources.hpp"

#include <memory>
#include <string>
#include <vector>

namespace vblab {

struct HiddenConfig {
  int nodes = 64;
  int rank = 1;
  std::string atlas = "two_chart";        // "single" | "two_chart"
  std::string transitions = "identity";   // "identity" | "mobius" | "neg_block"
  std::string metric = "identity";        // "identity" | "diag" | "rotating"
  std::vector<double> metric_diag = {1.0, 4.0};
  double metric_angle = 0.7;              // rotation amplitude for "rotating"
  std::string op = "laplace_plus_one";    // "laplace_plus_one" | "variable_a0"
  double a0_base = 1.0;
  double a0_amplitude = 0.5;
};

struct FamilyLayoutConfig {
  int global_members = 40;
  int arc_width = 2;
  int arc_stride = 2;
  int arc_members = 2;
  Rational dict_window = rational_of(1, 1024);
  Rational dict_t_hi = rational_of(-1, 8);
  int dict_time_points = 3;
  Rational probe_t_lo = rational_of(1, 16);
  Rational probe_t_hi = rational_of(9, 16);
  int probe_time_points = 17;
  int delta_members = 3;
  int probe_family_width = 8;
  int probe_family_members = 4;
  int sobolev_order = 1;
  int kl_rank = 400;
  std::uint64_t seed = 2024;
};

struct VerifyConfig {
  int heldout_queries = 100;
  int spectrum_count = 10;
  std::uint64_t seed = 4242;
};

struct OracleLimits {
  Rational t_min = Rational(0);
  Rational tau_origin = Rational(400);
  std::int64_t max_queries = -1;
  bool log_queries = false;
};

struct ScenarioConfig {
  int schema_version = 1;
  std::string name = "custom";
  HiddenConfig hidden;
  FamilyLayoutConfig families;
  OracleLimits oracle;
  ReconstructConfig reconstruct;
  VerifyConfig verify;
};

/// A fully instantiated hidden world plus its measurement firewall.
struct Scenario {
  ScenarioConfig config;
  std::unique_ptr<GridBundle> bundle;
  std::unique_ptr<SpectralModel> model;
  std::vector<BasicFamily> families;
  std::unique_ptr<Oracle> oracle;

  const SourceFunction& member(int family, int k) const { return families[family].member(k); }
};

/// Bundled scenario presets: "trivial_line", "mobius_line", "trivial_rank2",
/// "bridge_n32".
ScenarioConfig scenario_preset(const std::string& name);

/// Hidden-model builders (shared by scenarios and tests).
ChartAtlas make_atlas(const HiddenConfig& hidden);
FiberMetric make_metric(const HiddenConfig& hidden, const GridManifold& grid,
                        const ChartAtlas& atlas);
EllipticOperatorSpec make_operator(const HiddenConfig& hidden, const GridManifold& grid,
                                   int rank);

/// Builds bundle, spectral model, families and oracle from a config.
Scenario instantiate(const ScenarioConfig& config, const std::string& oracle_log_path = "");

/// Gauge-conjugated copy: metric, cocycle, operator stencil and family
/// members are transformed coherently by a smooth invertible G(x), leaving
/// every admissible measurement unchanged up to round-off.
Scenario conjugated_copy(const Scenario& base, std::uint64_t gauge_seed, double amplitude = 0.4);

/// The per-node gauge fields used by conjugated_copy (for gauge_fit tests).
std::vector<Mat> gauge_fields(int nodes, int rank, std::uint64_t seed, double amplitude);

}  // namespace vblab
