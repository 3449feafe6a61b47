#include <CLI11.hpp>

#include "vblab/report.hpp"
#include "vblab/verify.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using vblab::Json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string preset;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

Json parse_override_value(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  try {
    std::size_t pos = 0;
    if (text.find_first_of(".eE") == std::string::npos) {
      long long v = std::stoll(text, &pos);
      if (pos == text.size()) return v;
    } else {
      double v = std::stod(text, &pos);
      if (pos == text.size()) return v;
    }
  } catch (...) {
  }
  return text;
}

vblab::ScenarioConfig load_config(const CommonArgs& args) {
  Json j;
  if (!args.config_path.empty()) {
    j = vblab::read_json(args.config_path);
  } else if (!args.preset.empty()) {
    j = Json{{"preset", args.preset}};
  } else {
    vblab::fail("ConfigInvalid", "pass --config <path> or --preset <name>");
  }
  for (const std::string& kv : args.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      vblab::fail("ConfigInvalid", "--set expects key=value, got " + kv);
    }
    std::string key = kv.substr(0, eq);
    Json* node = &j;
    std::size_t start = 0;
    while (true) {
      auto dot = key.find('.', start);
      std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = parse_override_value(kv.substr(eq + 1));
        break;
      }
      node = &((*node)[part]);
      start = dot + 1;
    }
  }
  vblab::ScenarioConfig cfg = vblab::config_from_json(j);
  if (args.seed) cfg.families.seed = *args.seed;
  return cfg;
}

bool stage_is_current(const fs::path& artifact, const std::string& hash, bool force) {
  if (force || !fs::exists(artifact)) return false;
  try {
    Json j = vblab::read_json(artifact.string());
    return j.contains("input_hash") && j.at("input_hash").get<std::string>() == hash;
  } catch (...) {
    return false;
  }
}

void write_csv(const fs::path& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
  std::string text = header + "\n";
  char buf[64];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.12g", row[i]);
      text += buf;
      text += (i + 1 < row.size()) ? "," : "";
    }
    text += "\n";
  }
  vblab::write_text(path.string(), text);
}

int run_simulate(const CommonArgs& args) {
  vblab::ScenarioConfig cfg = load_config(args);
  Json cfg_json = vblab::config_to_json(cfg);
  std::string hash = vblab::content_hash(cfg_json);
  fs::create_directories(args.out_dir);
  fs::path model_path = fs::path(args.out_dir) / "model.json";
  if (stage_is_current(model_path, hash, args.force)) {
    std::cout << "simulate: up to date (" << model_path.string() << ")\n";
    return 0;
  }
  vblab::Scenario s = vblab::instantiate(cfg);

  Json out;
  out["input_hash"] = hash;
  out["config"] = cfg_json;
  out["nodes"] = cfg.hidden.nodes;
  out["rank"] = cfg.hidden.rank;
  out["loop_sign"] = s.bundle->loop_determinant_sign();
  out["raw_asymmetry"] = vblab::fixed_precision(s.model->raw_asymmetry());
  out["eigen_residual"] = vblab::fixed_precision(s.model->max_residual());
  Json eigs = Json::array();
  for (int l = 0; l < s.model->modes(); ++l) {
    eigs.push_back(vblab::fixed_precision(s.model->eigenvalues()[l]));
  }
  out["eigenvalues"] = std::move(eigs);
  Json fams = Json::array();
  for (const auto& fam : s.families) {
    fams.push_back({{"id", fam.spec().id},
                    {"members", fam.member_count()},
                    {"arc_width", fam.spec().arc_nodes.size()},
                    {"retained_rank", fam.diagnostics().retained_rank},
                    {"retained_trace", vblab::fixed_precision(fam.diagnostics().retained_trace)}});
  }
  out["families"] = std::move(fams);
  vblab::write_json(model_path.string(), out);

  // Sample energy curves of the last (wide probe) family's first member.
  int probe_family = static_cast<int>(s.families.size()) - 1;
  vblab::ModalSource modal = s.model->prepare(s.member(probe_family, 0));
  std::vector<std::vector<double>> rows;
  double t_lo = s.families[probe_family].spec().t_lo_d();
  double t_hi = s.families[probe_family].spec().t_hi_d();
  for (int k = 0; k <= 200; ++k) {
    double t = t_lo - 0.1 + (t_hi + 0.5 - t_lo + 0.1) * k / 200.0;
    rows.push_back({t, s.model->energy(modal, t)});
  }
  write_csv(fs::path(args.out_dir) / "energies.csv", "t,energy", rows);
  std::cout << "simulate: wrote " << model_path.string() << "\n";
  return 0;
}

int run_reconstruct(const CommonArgs& args) {
  vblab::ScenarioConfig cfg = load_config(args);
  Json cfg_json = vblab::config_to_json(cfg);
  std::string hash = vblab::content_hash(cfg_json);
  fs::create_directories(args.out_dir);
  fs::path model_path = fs::path(args.out_dir) / "recovered_model.json";
  if (stage_is_current(model_path, hash, args.force)) {
    std::cout << "reconstruct: up to date (" << model_path.string() << ")\n";
    return 0;
  }
  std::string log_path;
  if (cfg.oracle.log_queries) log_path = (fs::path(args.out_dir) / "queries.jsonl").string();
  vblab::Scenario s = vblab::instantiate(cfg, log_path);

  vblab::Reconstructor rec(*s.oracle, s.bundle->grid(), cfg.reconstruct);
  const vblab::RecoveredModel& rm = rec.run();

  Json gram = vblab::gram_to_json(rec.dictionary(), rec.gram());
  gram["input_hash"] = hash;
  vblab::write_json((fs::path(args.out_dir) / "gram.json").string(), gram);

  Json frames;
  frames["input_hash"] = hash;
  frames["smoothness_defect"] = vblab::fixed_precision(rm.frame.smoothness_defect);
  Json deltas = Json::array();
  for (const auto& seq : rec.delta_sequences()) {
    deltas.push_back({{"node", seq.node},
                      {"cauchy_defect", vblab::fixed_precision(seq.cauchy_defect)}});
  }
  frames["delta_sequences"] = std::move(deltas);
  vblab::write_json((fs::path(args.out_dir) / "frames.json").string(), frames);

  Json recovered = vblab::recovered_to_json(rm);
  recovered["input_hash"] = hash;
  recovered["queries_total"] = rec.diagnostics().queries_total;
  recovered["queries_gram"] = rec.diagnostics().queries_gram;
  recovered["queries_pairing"] = rec.diagnostics().queries_pairing;
  vblab::write_json(model_path.string(), recovered);
  std::cout << "reconstruct: wrote " << model_path.string() << " ("
            << rec.diagnostics().queries_total << " oracle queries)\n";
  return 0;
}

int run_verify(const CommonArgs& args) {
  vblab::ScenarioConfig cfg = load_config(args);
  Json cfg_json = vblab::config_to_json(cfg);
  std::string hash = vblab::content_hash(cfg_json);
  fs::path model_path = fs::path(args.out_dir) / "recovered_model.json";
  if (!fs::exists(model_path)) {
    vblab::fail("StageInputMissing",
                "no recovered_model.json in " + args.out_dir + "; run `reconstruct` first");
  }
  Json recovered_json = vblab::read_json(model_path.string());
  if (recovered_json.at("input_hash").get<std::string>() != hash) {
    vblab::fail("StageInputMissing",
                "recovered_model.json was built from a different config; rerun `reconstruct`");
  }
  vblab::RecoveredModel rm = vblab::recovered_from_json(recovered_json);
  vblab::Scenario s = vblab::instantiate(cfg);
  vblab::RebuiltModel rebuilt = vblab::assemble_recovered(rm);
  std::vector<vblab::Mat> map = vblab::frame_map(s, rm);

  vblab::EquivalenceResult eq = vblab::measurement_equivalence(
      s, rebuilt, map, cfg.verify.heldout_queries, cfg.verify.seed);
  double spec_dev = vblab::spectrum_compare(*s.model, *rebuilt.model, cfg.verify.spectrum_count);
  int hidden_sign = vblab::class_invariant(*s.bundle);
  int recovered_sign = vblab::class_invariant(rm);
  vblab::GaugeFit fit = vblab::gauge_fit(s, rebuilt, map);

  Json report;
  report["input_hash"] = hash;
  report["scenario"] = cfg.name;
  report["class_hidden"] = hidden_sign;
  report["class_recovered"] = recovered_sign;
  report["class_match"] = (hidden_sign == recovered_sign);
  report["spectrum_max_rel"] = vblab::fixed_precision(spec_dev);
  report["equivalence_median_rel"] = vblab::fixed_precision(eq.median_rel);
  report["equivalence_max_rel"] = vblab::fixed_precision(eq.max_rel);
  report["gauge_metric_defect"] = vblab::fixed_precision(fit.metric_defect);
  report["gauge_conjugation_residual"] = vblab::fixed_precision(fit.conjugation_residual);
  report["metric_min_eigenvalue"] = vblab::fixed_precision(rm.metric_min_eigenvalue);
  report["max_cocycle_defect"] = vblab::fixed_precision(rm.max_cocycle_defect);
  report["max_fit_residual"] = vblab::fixed_precision(rm.max_fit_residual);
  vblab::write_json((fs::path(args.out_dir) / "report.json").string(), report);

  std::vector<std::vector<double>> eig_rows;
  for (int l = 0; l < cfg.verify.spectrum_count && l < s.model->modes(); ++l) {
    eig_rows.push_back({static_cast<double>(l), s.model->eigenvalues()[l],
                        rebuilt.model->eigenvalues()[l]});
  }
  write_csv(fs::path(args.out_dir) / "eigenvalues.csv", "mode,hidden,rebuilt", eig_rows);
  std::cout << "verify: spectrum max rel " << spec_dev << ", equivalence median "
            << eq.median_rel << " max " << eq.max_rel << ", class "
            << (hidden_sign == recovered_sign ? "match" : "MISMATCH") << "\n";
  return 0;
}

int run_report(const CommonArgs& args) {
  vblab::ScenarioConfig cfg = load_config(args);
  fs::path report_path = fs::path(args.out_dir) / "report.json";
  if (!fs::exists(report_path)) {
    vblab::fail("StageInputMissing",
                "no report.json in " + args.out_dir + "; run `verify` first");
  }
  Json report = vblab::read_json(report_path.string());

  // Density diagnostic curve for the plot data.
  vblab::Scenario s = vblab::instantiate(cfg);
  int family = 0;
  const auto& fam = s.families[family];
  vblab::SourceFunction target = fam.member(0);
  // Smooth bump target supported inside the family box.
  const int dpf = s.bundle->rank();
  for (int node = 0; node < cfg.hidden.nodes; ++node) {
    double x = s.bundle->grid().positions[node];
    double bump = std::exp(-4.0 * (1.0 - std::cos(x)));
    for (int c = 0; c < dpf; ++c) {
      for (int k = 0; k < static_cast<int>(target.knots.size()); ++k) {
        double t = target.knots[k];
        double t0 = target.knots.front();
        double t1 = target.knots.back();
        double tb = (t - t0) * (t1 - t) / ((t1 - t0) * (t1 - t0)) * 4.0;
        target.samples(node * dpf + c, k) = bump * tb;
      }
    }
  }
  std::vector<int> grid_n;
  for (int n = 0; n <= fam.member_count(); n += std::max(fam.member_count() / 10, 1)) {
    grid_n.push_back(n);
  }
  std::vector<double> residuals = vblab::density_residuals(*s.bundle, fam, target, grid_n);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < grid_n.size(); ++i) {
    rows.push_back({static_cast<double>(grid_n[i]), residuals[i]});
  }
  write_csv(fs::path(args.out_dir) / "density.csv", "n,residual", rows);

  std::ostringstream os;
  os << "scenario: " << report.at("scenario").get<std::string>() << "\n"
     << "bundle class: hidden " << report.at("class_hidden").get<int>() << ", recovered "
     << report.at("class_recovered").get<int>() << "\n"
     << "spectrum max relative deviation: " << report.at("spectrum_max_rel").get<double>()
     << "\n"
     << "measurement equivalence: median " << report.at("equivalence_median_rel").get<double>()
     << ", max " << report.at("equivalence_max_rel").get<double>() << "\n"
     << "gauge metric defect: " << report.at("gauge_metric_defect").get<double>() << "\n"
     << "recovered metric min eigenvalue: "
     << report.at("metric_min_eigenvalue").get<double>() << "\n"
     << "cocycle defect: " << report.at("max_cocycle_defect").get<double>() << "\n";
  vblab::write_text((fs::path(args.out_dir) / "summary.txt").string(), os.str());
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vblab: hidden-bundle wave lab with energy-only reconstruction"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "scenario config JSON path");
    sub->add_option("--preset", args.preset,
                    "bundled scenario: trivial_line | mobius_line | trivial_rank2 | bridge_n32");
    sub->add_option("--out", args.out_dir, "artifact directory");
    sub->add_option("--set", args.overrides, "override config keys, e.g. hidden.nodes=32");
    sub->add_option("--seed", args.seed, "override the family sampling seed");
    sub->add_flag("--force", args.force, "ignore stage hashes and recompute");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "assemble the hidden model");
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "run the inverse pipeline");
  CLI::App* verify = app.add_subcommand("verify", "judge the reconstruction");
  CLI::App* report = app.add_subcommand("report", "human-readable summary and plot data");
  for (CLI::App* sub : {simulate, reconstruct, verify, report}) add_common(sub);

  CLI11_PARSE(app, argc, argv);
  try {
    if (simulate->parsed()) return run_simulate(args);
    if (reconstruct->parsed()) return run_reconstruct(args);
    if (verify->parsed()) return run_verify(args);
    if (report->parsed()) return run_report(args);
  } catch (const vblab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
