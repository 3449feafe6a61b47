#include "doctest.h"

#include "vblab/verify.hpp"

#include "helpers.hpp"

using namespace vblab;

TEST_CASE("spectrum_compare identity and gauge invariance") {
  ScenarioConfig cfg = scenario_preset("bridge_n32");
  cfg.families.global_members = 4;
  cfg.families.delta_members = 1;
  Scenario s = instantiate(cfg);
  CHECK(spectrum_compare(*s.model, *s.model, 10) == 0.0);

  Scenario conj = conjugated_copy(s, 5);
  CHECK(spectrum_compare(*s.model, *conj.model, 10) < 1e-9);
}

TEST_CASE("class invariants of the presets") {
  GridBundle trivial = testing::trivial_bundle(16, 1);
  CHECK(class_invariant(trivial) == 1);
  GridBundle mob = testing::mobius_bundle(16);
  CHECK(class_invariant(mob) == -1);

  // Rank-2 with one -Id transition: determinant (+1)^2, orientable.
  HiddenConfig h;
  h.nodes = 16;
  h.rank = 2;
  h.transitions = "neg_block";
  GridManifold grid = GridManifold::circle(16);
  ChartAtlas atlas = make_atlas(h);
  FiberMetric metric;
  metric.h.assign(16, Mat::Identity(2, 2));
  GridBundle rank2 = build_bundle(grid, atlas, metric);
  CHECK(class_invariant(rank2) == 1);
}

TEST_CASE("mobius and trivial spectra differ in the lowest mode") {
  const int n = 64;
  GridBundle trivial = testing::trivial_bundle(n, 1);
  GridBundle mob = testing::mobius_bundle(n);
  SpectralModel mt(trivial, testing::laplace_plus_one(n, 1));
  SpectralModel mm(mob, testing::laplace_plus_one(n, 1));
  CHECK(spectrum_compare(mt, mm, 1) > 0.1);
}

TEST_CASE("gauge_fit: identity, explicit gauge, class mismatch") {
  ScenarioConfig cfg = scenario_preset("bridge_n32");
  cfg.families.global_members = 4;
  cfg.families.delta_members = 1;
  Scenario s = instantiate(cfg);
  const int n = cfg.hidden.nodes;

  SUBCASE("identity test") {
    RebuiltModel same;
    same.bundle = std::make_unique<GridBundle>(*s.bundle);
    same.model = std::make_unique<SpectralModel>(*same.bundle, s.model->stencil());
    std::vector<Mat> id(n, Mat::Identity(1, 1));
    GaugeFit fit = gauge_fit(s, same, id);
    CHECK(fit.metric_defect < 1e-12);
    CHECK(fit.conjugation_residual < 1e-12);
  }

  SUBCASE("explicit conjugation gauge") {
    Scenario conj = conjugated_copy(s, 21);
    RebuiltModel rebuilt;
    rebuilt.bundle = std::make_unique<GridBundle>(*conj.bundle);
    rebuilt.model = std::make_unique<SpectralModel>(*rebuilt.bundle, conj.model->stencil());
    std::vector<Mat> g = gauge_fields(n, 1, 21, 0.4);
    GaugeFit fit = gauge_fit(s, rebuilt, g);
    CHECK(fit.metric_defect < 1e-8);
    CHECK(fit.conjugation_residual < 1e-8);
  }

  SUBCASE("class mismatch detected") {
    ScenarioConfig mcfg = cfg;
    mcfg.hidden.transitions = "mobius";
    mcfg.hidden.atlas = "two_chart";
    Scenario mob = instantiate(mcfg);
    RebuiltModel rebuilt;
    rebuilt.bundle = std::make_unique<GridBundle>(*mob.bundle);
    rebuilt.model = std::make_unique<SpectralModel>(*rebuilt.bundle, mob.model->stencil());
    std::vector<Mat> id(n, Mat::Identity(1, 1));
    CHECK_THROWS_WITH_AS(gauge_fit(s, rebuilt, id), doctest::Contains("ClassMismatch"), Error);
  }
}

TEST_CASE("measurement equivalence of the hidden model with itself") {
  ScenarioConfig cfg = scenario_preset("bridge_n32");
  cfg.families.global_members = 4;
  cfg.families.delta_members = 1;
  cfg.families.probe_family_members = 2;
  Scenario s = instantiate(cfg);
  RebuiltModel same;
  same.bundle = std::make_unique<GridBundle>(*s.bundle);
  same.model = std::make_unique<SpectralModel>(*same.bundle, s.model->stencil());
  std::vector<Mat> id(cfg.hidden.nodes, Mat::Identity(1, 1));
  EquivalenceResult eq = measurement_equivalence(s, same, id, 25, 7);
  CHECK(eq.max_rel < 1e-12);

  // Conjugated hidden model: same energies to round-off.
  Scenario conj = conjugated_copy(s, 3);
  RebuiltModel rebuilt;
  rebuilt.bundle = std::make_unique<GridBundle>(*conj.bundle);
  rebuilt.model = std::make_unique<SpectralModel>(*rebuilt.bundle, conj.model->stencil());
  std::vector<Mat> g = gauge_fields(cfg.hidden.nodes, 1, 3, 0.4);
  EquivalenceResult eq2 = measurement_equivalence(s, rebuilt, g, 25, 7);
  CHECK(eq2.max_rel < 1e-9);
}
