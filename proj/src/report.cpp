#include "vblab/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vblab {

double fixed_precision(double v) {
  if (!std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}

Json matrix_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(fixed_precision(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) return Mat();
  int rows = static_cast<int>(j.size());
  int cols = static_cast<int>(j[0].size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Json rational_to_json(const Rational& r) { return vblab::to_string(r); }

Rational rational_from_json(const Json& j) {
  if (j.is_number_integer()) return Rational(j.get<long long>());
  return parse_rational(j.get<std::string>());
}

namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      fail("ConfigInvalid", "unknown config key " + path + "." + it.key());
    }
  }
}

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_rational(const Json& j, const char* key, Rational& out) {
  if (j.contains(key)) out = rational_from_json(j.at(key));
}

}  // namespace

Json config_to_json(const ScenarioConfig& cfg) {
  Json j;
  j["schema_version"] = cfg.schema_version;
  j["name"] = cfg.name;
  Json h;
  h["nodes"] = cfg.hidden.nodes;
  h["rank"] = cfg.hidden.rank;
  h["atlas"] = cfg.hidden.atlas;
  h["transitions"] = cfg.hidden.transitions;
  h["metric"] = cfg.hidden.metric;
  h["metric_diag"] = cfg.hidden.metric_diag;
  h["metric_angle"] = cfg.hidden.metric_angle;
  h["operator"] = cfg.hidden.op;
  h["a0_base"] = cfg.hidden.a0_base;
  h["a0_amplitude"] = cfg.hidden.a0_amplitude;
  j["hidden"] = std::move(h);
  Json f;
  f["global_members"] = cfg.families.global_members;
  f["arc_width"] = cfg.families.arc_width;
  f["arc_stride"] = cfg.families.arc_stride;
  f["arc_members"] = cfg.families.arc_members;
  f["dict_window"] = rational_to_json(cfg.families.dict_window);
  f["dict_t_hi"] = rational_to_json(cfg.families.dict_t_hi);
  f["dict_time_points"] = cfg.families.dict_time_points;
  f["probe_t_lo"] = rational_to_json(cfg.families.probe_t_lo);
  f["probe_t_hi"] = rational_to_json(cfg.families.probe_t_hi);
  f["probe_time_points"] = cfg.families.probe_time_points;
  f["delta_members"] = cfg.families.delta_members;
  f["probe_family_width"] = cfg.families.probe_family_width;
  f["probe_family_members"] = cfg.families.probe_family_members;
  f["sobolev_order"] = cfg.families.sobolev_order;
  f["kl_rank"] = cfg.families.kl_rank;
  f["seed"] = cfg.families.seed;
  j["families"] = std::move(f);
  Json o;
  o["t_min"] = rational_to_json(cfg.oracle.t_min);
  o["tau_origin"] = rational_to_json(cfg.oracle.tau_origin);
  o["max_queries"] = cfg.oracle.max_queries;
  o["log_queries"] = cfg.oracle.log_queries;
  j["oracle"] = std::move(o);
  Json r;
  r["slice_time"] = rational_to_json(cfg.reconstruct.slice_time);
  r["t0"] = rational_to_json(cfg.reconstruct.t0);
  r["lag"] = rational_to_json(cfg.reconstruct.lag);
  r["fd_step"] = rational_to_json(cfg.reconstruct.fd_step);
  r["slot_pitch"] = rational_to_json(cfg.reconstruct.slot_pitch);
  r["slots_per_member"] = cfg.reconstruct.slots_per_member;
  r["ridge_rel"] = cfg.reconstruct.ridge_rel;
  r["probe_count"] = cfg.reconstruct.probe_count;
  r["probe_support"] = cfg.reconstruct.probe_support;
  r["probe_seed"] = cfg.reconstruct.probe_seed;
  r["cand_defect_tol"] = cfg.reconstruct.cand_defect_tol;
  r["rank_tol"] = cfg.reconstruct.rank_tol;
  r["frame_rank_tol"] = cfg.reconstruct.frame_rank_tol;
  r["overlap_cond_tol"] = cfg.reconstruct.overlap_cond_tol;
  r["cocycle_tol"] = cfg.reconstruct.cocycle_tol;
  r["fit_residual_tol"] = cfg.reconstruct.fit_residual_tol;
  j["reconstruct"] = std::move(r);
  Json v;
  v["heldout_queries"] = cfg.verify.heldout_queries;
  v["spectrum_count"] = cfg.verify.spectrum_count;
  v["seed"] = cfg.verify.seed;
  j["verify"] = std::move(v);
  return j;
}

ScenarioConfig config_from_json(const Json& j) {
  check_keys(j, {"schema_version", "name", "preset", "hidden", "families", "oracle",
                 "reconstruct", "verify"},
             "");
  ScenarioConfig cfg;
  if (j.contains("preset")) cfg = scenario_preset(j.at("preset").get<std::string>());
  maybe(j, "schema_version", cfg.schema_version);
  if (cfg.schema_version != 1) fail("ConfigInvalid", "unsupported schema_version");
  maybe(j, "name", cfg.name);
  if (j.contains("hidden")) {
    const Json& h = j.at("hidden");
    check_keys(h,
               {"nodes", "rank", "atlas", "transitions", "metric", "metric_diag",
                "metric_angle", "operator", "a0_base", "a0_amplitude"},
               "hidden");
    maybe(h, "nodes", cfg.hidden.nodes);
    maybe(h, "rank", cfg.hidden.rank);
    maybe(h, "atlas", cfg.hidden.atlas);
    maybe(h, "transitions", cfg.hidden.transitions);
    maybe(h, "metric", cfg.hidden.metric);
    maybe(h, "metric_diag", cfg.hidden.metric_diag);
    maybe(h, "metric_angle", cfg.hidden.metric_angle);
    if (h.contains("operator")) cfg.hidden.op = h.at("operator").get<std::string>();
    maybe(h, "a0_base", cfg.hidden.a0_base);
    maybe(h, "a0_amplitude", cfg.hidden.a0_amplitude);
  }
  if (j.contains("families")) {
    const Json& f = j.at("families");
    check_keys(f,
               {"global_members", "arc_width", "arc_stride", "arc_members", "dict_window",
                "dict_t_hi", "dict_time_points", "probe_t_lo", "probe_t_hi",
                "probe_time_points", "delta_members", "probe_family_width",
                "probe_family_members", "sobolev_order", "kl_rank", "seed"},
               "families");
    maybe(f, "global_members", cfg.families.global_members);
    maybe(f, "arc_width", cfg.families.arc_width);
    maybe(f, "arc_stride", cfg.families.arc_stride);
    maybe(f, "arc_members", cfg.families.arc_members);
    maybe_rational(f, "dict_window", cfg.families.dict_window);
    maybe_rational(f, "dict_t_hi", cfg.families.dict_t_hi);
    maybe(f, "dict_time_points", cfg.families.dict_time_points);
    maybe_rational(f, "probe_t_lo", cfg.families.probe_t_lo);
    maybe_rational(f, "probe_t_hi", cfg.families.probe_t_hi);
    maybe(f, "probe_time_points", cfg.families.probe_time_points);
    maybe(f, "delta_members", cfg.families.delta_members);
    maybe(f, "probe_family_width", cfg.families.probe_family_width);
    maybe(f, "probe_family_members", cfg.families.probe_family_members);
    maybe(f, "sobolev_order", cfg.families.sobolev_order);
    maybe(f, "kl_rank", cfg.families.kl_rank);
    maybe(f, "seed", cfg.families.seed);
  }
  if (j.contains("oracle")) {
    const Json& o = j.at("oracle");
    check_keys(o, {"t_min", "tau_origin", "max_queries", "log_queries"}, "oracle");
    maybe_rational(o, "t_min", cfg.oracle.t_min);
    maybe_rational(o, "tau_origin", cfg.oracle.tau_origin);
    maybe(o, "max_queries", cfg.oracle.max_queries);
    maybe(o, "log_queries", cfg.oracle.log_queries);
  }
  if (j.contains("reconstruct")) {
    const Json& r = j.at("reconstruct");
    check_keys(r,
               {"slice_time", "t0", "lag", "fd_step", "slot_pitch", "slots_per_member",
                "ridge_rel", "probe_count", "probe_support", "probe_seed",
                "cand_defect_tol", "rank_tol", "frame_rank_tol", "overlap_cond_tol",
                "cocycle_tol", "fit_residual_tol"},
               "reconstruct");
    maybe_rational(r, "slice_time", cfg.reconstruct.slice_time);
    maybe_rational(r, "t0", cfg.reconstruct.t0);
    maybe_rational(r, "lag", cfg.reconstruct.lag);
    maybe_rational(r, "fd_step", cfg.reconstruct.fd_step);
    maybe_rational(r, "slot_pitch", cfg.reconstruct.slot_pitch);
    maybe(r, "slots_per_member", cfg.reconstruct.slots_per_member);
    maybe(r, "ridge_rel", cfg.reconstruct.ridge_rel);
    maybe(r, "probe_count", cfg.reconstruct.probe_count);
    maybe(r, "probe_support", cfg.reconstruct.probe_support);
    maybe(r, "probe_seed", cfg.reconstruct.probe_seed);
    maybe(r, "cand_defect_tol", cfg.reconstruct.cand_defect_tol);
    maybe(r, "rank_tol", cfg.reconstruct.rank_tol);
    maybe(r, "frame_rank_tol", cfg.reconstruct.frame_rank_tol);
    maybe(r, "overlap_cond_tol", cfg.reconstruct.overlap_cond_tol);
    maybe(r, "cocycle_tol", cfg.reconstruct.cocycle_tol);
    maybe(r, "fit_residual_tol", cfg.reconstruct.fit_residual_tol);
  }
  if (j.contains("verify")) {
    const Json& v = j.at("verify");
    check_keys(v, {"heldout_queries", "spectrum_count", "seed"}, "verify");
    maybe(v, "heldout_queries", cfg.verify.heldout_queries);
    maybe(v, "spectrum_count", cfg.verify.spectrum_count);
    maybe(v, "seed", cfg.verify.seed);
  }
  return cfg;
}

Json recovered_to_json(const RecoveredModel& rm) {
  Json j;
  j["nodes"] = rm.nodes;
  j["rank"] = rm.rank;
  Json charts = Json::array();
  for (const Chart& c : rm.frame.charts) charts.push_back({{"first", c.first}, {"length", c.length}});
  j["charts"] = charts;
  j["canonical"] = rm.frame.canonical;
  Json frames = Json::array();
  for (std::size_t c = 0; c < rm.frame.per_chart.size(); ++c) {
    Json chart_frames = Json::array();
    for (const NodeFrame& nf : rm.frame.per_chart[c]) {
      Json cand = Json::array();
      for (const DeltaCandidate& dc : nf.candidates) {
        cand.push_back({{"family", dc.family},
                        {"member", dc.member},
                        {"slice_time", rational_to_json(dc.slice_time)},
                        {"volume", fixed_precision(dc.volume)}});
      }
      chart_frames.push_back({{"node", nf.node}, {"z", matrix_to_json(nf.z)},
                              {"candidates", std::move(cand)}});
    }
    frames.push_back(std::move(chart_frames));
  }
  j["frames"] = std::move(frames);
  j["ref_probes"] = rm.frame.ref_probes;
  Json trans = Json::array();
  for (const auto& [key, t] : rm.transitions) {
    auto [a, b, node] = key;
    trans.push_back({{"alpha", a}, {"beta", b}, {"node", node}, {"matrix", matrix_to_json(t)}});
  }
  j["transitions"] = std::move(trans);
  auto mats = [&](const std::vector<Mat>& v) {
    Json arr = Json::array();
    for (const Mat& m : v) arr.push_back(matrix_to_json(m));
    return arr;
  };
  j["metric"] = mats(rm.metric);
  j["metric_coarse"] = mats(rm.metric_coarse);
  j["a2"] = mats(rm.a2);
  j["a1"] = mats(rm.a1);
  j["a0"] = mats(rm.a0);
  j["loop_sign"] = rm.loop_sign;
  j["max_cocycle_defect"] = fixed_precision(rm.max_cocycle_defect);
  j["max_fit_residual"] = fixed_precision(rm.max_fit_residual);
  j["metric_min_eigenvalue"] = fixed_precision(rm.metric_min_eigenvalue);
  j["richardson_max_shift"] = fixed_precision(rm.richardson_max_shift);
  j["smoothness_defect"] = fixed_precision(rm.frame.smoothness_defect);
  return j;
}

RecoveredModel recovered_from_json(const Json& j) {
  RecoveredModel rm;
  rm.nodes = j.at("nodes").get<int>();
  rm.rank = j.at("rank").get<int>();
  for (const Json& c : j.at("charts")) {
    rm.frame.charts.push_back({c.at("first").get<int>(), c.at("length").get<int>()});
  }
  rm.frame.canonical = j.at("canonical").get<std::vector<int>>();
  for (const Json& chart_frames : j.at("frames")) {
    std::vector<NodeFrame> frames;
    for (const Json& nf : chart_frames) {
      NodeFrame frame;
      frame.node = nf.at("node").get<int>();
      frame.z = matrix_from_json(nf.at("z"));
      for (const Json& dc : nf.at("candidates")) {
        frame.candidates.push_back({dc.at("family").get<int>(), dc.at("member").get<int>(),
                                    rational_from_json(dc.at("slice_time")),
                                    dc.at("volume").get<double>()});
      }
      frames.push_back(std::move(frame));
    }
    rm.frame.per_chart.push_back(std::move(frames));
  }
  rm.frame.ref_probes = j.at("ref_probes").get<std::vector<std::vector<int>>>();
  for (const Json& t : j.at("transitions")) {
    rm.transitions[{t.at("alpha").get<int>(), t.at("beta").get<int>(),
                    t.at("node").get<int>()}] = matrix_from_json(t.at("matrix"));
  }
  auto mats = [&](const char* key) {
    std::vector<Mat> v;
    for (const Json& m : j.at(key)) v.push_back(matrix_from_json(m));
    return v;
  };
  rm.metric = mats("metric");
  rm.metric_coarse = mats("metric_coarse");
  rm.a2 = mats("a2");
  rm.a1 = mats("a1");
  rm.a0 = mats("a0");
  rm.loop_sign = j.at("loop_sign").get<int>();
  rm.max_cocycle_defect = j.at("max_cocycle_defect").get<double>();
  rm.max_fit_residual = j.at("max_fit_residual").get<double>();
  rm.metric_min_eigenvalue = j.at("metric_min_eigenvalue").get<double>();
  rm.richardson_max_shift = j.at("richardson_max_shift").get<double>();
  rm.frame.smoothness_defect = j.at("smoothness_defect").get<double>();
  return rm;
}

Json gram_to_json(const AtomDictionary& dict, const CrossGram& gram) {
  Json j;
  Json atoms = Json::array();
  for (const AtomRef& a : dict.atoms) {
    atoms.push_back({{"family", a.family}, {"member", a.member},
                     {"shift", rational_to_json(a.shift)}});
  }
  j["atoms"] = std::move(atoms);
  j["tau0"] = rational_to_json(dict.tau0);
  j["g"] = matrix_to_json(gram.g);
  j["g_lag"] = matrix_to_json(gram.g_lag);
  j["ridge"] = fixed_precision(gram.ridge);
  j["rank_estimate"] = gram.rank_estimate;
  j["cond_estimate"] = fixed_precision(gram.cond_estimate);
  return j;
}

std::string content_hash(const Json& j) {
  std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) fail("ConfigInvalid", "cannot write " + path);
  out << j.dump(2) << "\n";
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("StageInputMissing", "cannot read " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("ConfigInvalid", std::string("bad JSON in ") + path + ": " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail("ConfigInvalid", "cannot write " + path);
  out << text;
}

}  // namespace vblab
