// Scratch driver for pipeline bring-up (not part of the test suite).
#include "vblab/verify.hpp"

#include <chrono>
#include <iostream>

using namespace vblab;

int main(int argc, char** argv) {
  std::string preset = argc > 1 ? argv[1] : "pairing_n32";
  auto t0 = std::chrono::steady_clock::now();
  auto lap = [&](const char* what) {
    auto t1 = std::chrono::steady_clock::now();
    std::cout << what << ": " << std::chrono::duration<double>(t1 - t0).count() << " s\n";
    t0 = t1;
  };
  try {
    Scenario s = instantiate(scenario_preset(preset));
    lap("instantiate");
    Reconstructor rec(*s.oracle, s.bundle->grid(), s.config.reconstruct);
    rec.build_dictionary();
    std::cout << "atoms: " << rec.dictionary().atoms.size()
              << " rank: " << rec.gram().rank_estimate
              << " cond: " << rec.gram().cond_estimate
              << " queries: " << s.oracle->query_count() << "\n";
    lap("gram");
    rec.build_frames();
    std::cout << "rank discovered: " << rec.recovered().rank
              << " cauchy defect: " << rec.diagnostics().max_cauchy_defect
              << " frame sigma: " << rec.diagnostics().frame_min_sigma
              << " smoothness: " << rec.diagnostics().smoothness_defect
              << " cocycle defect: " << rec.recovered().max_cocycle_defect
              << " loop sign: " << rec.recovered().loop_sign
              << " queries: " << s.oracle->query_count() << "\n";
    lap("frames");
    rec.recover_metric();
    std::cout << "metric min eig: " << rec.recovered().metric_min_eigenvalue
              << " richardson shift: " << rec.recovered().richardson_max_shift << "\n";
    std::cout << "h(0): " << rec.recovered().metric[0] << "  h(5): " << rec.recovered().metric[5]
              << "  h(17): " << rec.recovered().metric[17] << "\n";
    lap("metric");
    rec.recover_operator();
    std::cout << "fit residual: " << rec.recovered().max_fit_residual << "\n";
    std::cout << "a2(3): " << rec.recovered().a2[3] << " a1(3): " << rec.recovered().a1[3]
              << " a0(3): " << rec.recovered().a0[3] << "\n";
    lap("operator");

    RebuiltModel rebuilt = assemble_recovered(rec.recovered());
    std::vector<Mat> map = frame_map(s, rec.recovered());
    double spec_dev = spectrum_compare(*s.model, *rebuilt.model, 10);
    EquivalenceResult eq = measurement_equivalence(s, rebuilt, map, 60, 99);
    GaugeFit fit = gauge_fit(s, rebuilt, map);
    std::cout << "spectrum dev: " << spec_dev << "\n"
              << "equivalence median: " << eq.median_rel << " max: " << eq.max_rel << "\n"
              << "gauge metric defect: " << fit.metric_defect
              << " conj residual: " << fit.conjugation_residual << "\n"
              << "class hidden " << class_invariant(*s.bundle) << " recovered "
              << class_invariant(rec.recovered()) << "\n";
    lap("verify");
    std::cout << "total queries: " << s.oracle->query_count() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "FAILED: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
