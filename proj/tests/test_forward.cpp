#include "doctest.h"

#include "vblab/forward.hpp"

#include "helpers.hpp"

#include <cmath>

using namespace vblab;

namespace {

double closed_form_eigen(int n, int k, double shift) {
  double dx = kTwoPi / n;
  return 2.0 * (1.0 - std::cos(kTwoPi * k / n)) / (dx * dx) + shift;
}

double closed_form_antiperiodic(int n, int k) {
  double dx = kTwoPi / n;
  return 2.0 * (1.0 - std::cos((2.0 * k + 1.0) * kTwoPi / (2.0 * n))) / (dx * dx) + 1.0;
}

}  // namespace

TEST_CASE("laplace plus one spectrum matches the discrete closed form") {
  const int n = 64;
  GridBundle b = testing::trivial_bundle(n, 1);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));
  CHECK(model.eigenvalues()[0] == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> expected;
  expected.push_back(closed_form_eigen(n, 0, 1.0));
  for (int k = 1; k <= n / 2; ++k) {
    expected.push_back(closed_form_eigen(n, k, 1.0));
    if (k < n - k) expected.push_back(closed_form_eigen(n, k, 1.0));
  }
  std::sort(expected.begin(), expected.end());
  for (int l = 0; l < n; ++l) {
    CHECK(model.eigenvalues()[l] == doctest::Approx(expected[l]).epsilon(1e-9));
  }
  CHECK(model.max_residual() < 1e-8);
}

TEST_CASE("zero-order-free operator is rejected as non positive") {
  const int n = 16;
  GridBundle b = testing::trivial_bundle(n, 1);
  EllipticOperatorSpec spec = testing::laplace_plus_one(n, 1);
  spec.a0.assign(n, Mat::Zero(1, 1));
  CHECK_THROWS_WITH_AS(SpectralModel(b, spec), doctest::Contains("NotPositive"), Error);
}

TEST_CASE("mobius spectrum is antiperiodic with no constant mode") {
  const int n = 64;
  GridBundle b = testing::mobius_bundle(n);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));
  CHECK(model.eigenvalues()[0] > 1.0);
  std::vector<double> expected;
  for (int k = 0; k < n / 2; ++k) {
    expected.push_back(closed_form_antiperiodic(n, k));
    expected.push_back(closed_form_antiperiodic(n, k));
  }
  std::sort(expected.begin(), expected.end());
  expected.resize(n);
  for (int l = 0; l < n; ++l) {
    CHECK(model.eigenvalues()[l] == doctest::Approx(expected[l]).epsilon(1e-9));
  }
}

TEST_CASE("single-mode Duhamel state matches the sine integrals") {
  const int n = 64;
  GridBundle b = testing::trivial_bundle(n, 1);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));
  // F = phi_0 on [0, pi], lambda_0 = 1: at t = pi, u = 2 phi_0, u_t = 0.
  SourceFunction f = testing::mode_source(model, 0, 0.0, M_PI);
  ModalSource modal = model.prepare(f);
  CauchyState st = model.evolve(modal, M_PI);
  Vec expected = 2.0 * model.basis().col(0);
  CHECK((st.u - expected).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(st.ut.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(model.energy(modal, M_PI) == doctest::Approx(2.0).epsilon(1e-10));

  SUBCASE("zero source evolves to zero") {
    SourceFunction z = testing::mode_source(model, 0, 0.0, 1.0, 0.0);
    ModalSource zm = model.prepare(z);
    CHECK(model.energy(zm, 2.0) == 0.0);
    CauchyState zst = model.evolve(zm, 2.0);
    CHECK(zst.u.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("time shift identity and conservation") {
  const int n = 32;
  GridBundle b = testing::trivial_bundle(n, 1);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));
  SourceFunction f = testing::mode_source(model, 3, -1.0, -0.25);
  ModalSource modal = model.prepare(f);

  double shift = 0.375;
  SourceItem unshifted{&modal, 0.0, 1.0};
  SourceItem shifted{&modal, shift, 1.0};
  for (double t : {0.5, 1.25, 3.0}) {
    CauchyState a = model.evolve(std::span<const SourceItem>(&shifted, 1), t);
    CauchyState bst = model.evolve(std::span<const SourceItem>(&unshifted, 1), t + shift);
    CHECK((a.u - bst.u).cwiseAbs().maxCoeff() < 1e-10 * bst.u.cwiseAbs().maxCoeff());
    CHECK((a.ut - bst.ut).cwiseAbs().maxCoeff() < 1e-10);
  }

  double e0 = model.energy(modal, 0.0);
  for (int k = 1; k <= 10; ++k) {
    double t = 0.1 + 0.7 * k;
    CHECK(rel_diff(model.energy(modal, t), e0) < 1e-10);
  }
}

TEST_CASE("duhamel linearity") {
  const int n = 32;
  GridBundle b = testing::trivial_bundle(n, 2, Vec({{1.0, 4.0}}));
  HiddenConfig h;
  h.nodes = n;
  h.rank = 2;
  h.op = "variable_a0";
  SpectralModel model(b, make_operator(h, b.grid(), 2));
  SourceFunction f = testing::mode_source(model, 2, -1.0, -0.5);
  SourceFunction g = testing::mode_source(model, 7, -0.25, -0.125);
  ModalSource fm = model.prepare(f);
  ModalSource gm = model.prepare(g);
  std::vector<SourceItem> sum = {{&fm, 0.0, 1.0}, {&gm, 0.0, 1.0}};
  for (double t : {0.3, 1.7}) {
    CauchyState st_sum = model.evolve(sum, t);
    CauchyState st_f = model.evolve(fm, t);
    CauchyState st_g = model.evolve(gm, t);
    double scale = st_sum.u.norm() + st_sum.ut.norm();
    CHECK((st_sum.u - st_f.u - st_g.u).norm() < 1e-10 * scale);
    CHECK((st_sum.ut - st_f.ut - st_g.ut).norm() < 1e-10 * scale);
  }
}

TEST_CASE("sobolev norms use the 1 + lambda^s weights") {
  const int n = 32;
  GridBundle b = testing::trivial_bundle(n, 1);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));
  Vec zero = Vec::Zero(n);
  CHECK(model.sobolev_norm(zero, 3) == 0.0);

  // lambda_0 = 1: every order gives sqrt(2).
  Vec phi0 = model.basis().col(0);
  for (int s : {0, 1, 2, 5}) {
    CHECK(model.sobolev_norm(phi0, s) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }

  // Single mode with lambda: norm^2 = 1 + lambda^s.
  int mode = 9;
  double lambda = model.eigenvalues()[mode];
  Vec phi = model.basis().col(mode);
  CHECK(model.sobolev_norm(phi, 2) ==
        doctest::Approx(std::sqrt(1.0 + lambda * lambda)).epsilon(1e-11));

  // Monotone in s (all eigenvalues >= 1 here).
  Vec v = testing::random_vec(n, 11);
  double prev = model.sobolev_norm(v, 0);
  for (int s = 1; s <= 4; ++s) {
    double cur = model.sobolev_norm(v, s);
    CHECK(cur >= prev * (1.0 - 1e-12));
    prev = cur;
  }
}

TEST_CASE("a priori bound: homogeneity and a measured constant") {
  const int n = 32;
  GridBundle b = testing::trivial_bundle(n, 1);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));
  SourceFunction f = testing::mode_source(model, 5, -1.0, -0.5, 0.7, 9);
  ModalSource fm = model.prepare(f);
  const int s = 1;
  double t0 = 1.0;
  CauchyState st = model.evolve(fm, t0);
  double lhs = model.sobolev_norm(st.u, s + 1);
  double rhs = std::sqrt(fm.squared_l2_hs_time_norm(s + 1));
  double constant = lhs / rhs;
  CHECK(constant < 10.0);

  // Exact degree-1 homogeneity under source rescaling.
  SourceFunction f2 = f;
  f2.samples *= 3.5;
  ModalSource fm2 = model.prepare(f2);
  CauchyState st2 = model.evolve(fm2, t0);
  double lhs2 = model.sobolev_norm(st2.u, s + 1);
  double rhs2 = std::sqrt(fm2.squared_l2_hs_time_norm(s + 1));
  CHECK(rel_diff(lhs2 / rhs2, constant) < 1e-10);
}

TEST_CASE("source_for_cauchy_data round trip") {
  const int n = 32;
  GridBundle b = testing::trivial_bundle(n, 1);
  SpectralModel model(b, testing::laplace_plus_one(n, 1));

  SUBCASE("zero data -> zero source works") {
    Vec zero = Vec::Zero(n);
    SourceFunction f = source_for_cauchy_data(model, zero, zero, -2.0, -1.0);
    ModalSource fm = model.prepare(f);
    CHECK(model.energy(fm, 0.0) < 1e-20);
  }

  SUBCASE("hits (phi_0, 0) and (0, phi_1)") {
    Vec a = model.basis().col(0);
    Vec zero = Vec::Zero(n);
    SourceFunction f = source_for_cauchy_data(model, a, zero, -2.0, -1.0);
    ModalSource fm = model.prepare(f);
    CauchyState st = model.evolve(fm, -1.0);
    CHECK((st.u - a).norm() < 1e-8 * a.norm());
    CHECK(st.ut.norm() < 1e-8 * a.norm());

    Vec bvec = model.basis().col(1);
    SourceFunction g = source_for_cauchy_data(model, zero, bvec, -2.0, -1.0);
    ModalSource gm = model.prepare(g);
    CauchyState st2 = model.evolve(gm, -1.0);
    CHECK(st2.u.norm() < 1e-8 * bvec.norm());
    CHECK((st2.ut - bvec).norm() < 1e-8 * bvec.norm());
  }
}

TEST_CASE("gauge conjugation leaves energies invariant") {
  const int n = 32;
  ScenarioConfig cfg = scenario_preset("trivial_line");
  cfg.hidden.nodes = n;
  cfg.families.global_members = 6;
  cfg.families.delta_members = 1;
  cfg.families.probe_family_members = 2;
  Scenario s = instantiate(cfg);
  Scenario conj = conjugated_copy(s, 77);

  for (int fam : {0, static_cast<int>(s.families.size()) - 1}) {
    for (int k = 0; k < std::min(2, s.families[fam].member_count()); ++k) {
      ModalSource m0 = s.model->prepare(s.member(fam, k));
      ModalSource m1 = conj.model->prepare(conj.member(fam, k));
      for (double t : {0.3, 1.0, 2.5}) {
        CHECK(rel_diff(s.model->energy(m0, t), conj.model->energy(m1, t)) < 1e-9);
      }
    }
  }
}
