#include "vblab/scenario.hpp"

#include <cmath>
#include <sstream>

namespace vblab {

namespace {

Mat rotation(double angle) {
  Mat r(2, 2);
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

}  // namespace

ChartAtlas make_atlas(const HiddenConfig& hidden) {
  const int n = hidden.nodes;
  const int d = hidden.rank;
  ChartAtlas atlas;
  atlas.rank = d;
  if (hidden.atlas == "single") {
    atlas.charts = {Chart{0, n}};
    if (hidden.transitions != "identity") {
      fail("ConfigInvalid", "a single-chart atlas admits only identity transitions");
    }
    return atlas;
  }
  if (hidden.atlas != "two_chart") {
    fail("ConfigInvalid", "unknown atlas preset " + hidden.atlas);
  }
  // Two arcs whose overlaps are {n/2, n/2+1} and {n-1, 0, 1}; canonical
  // charts switch strictly inside the overlaps so every stencil stays in
  // one chart.
  atlas.charts = {Chart{n - 1, n / 2 + 3}, Chart{n / 2, n / 2 + 2}};
  atlas.canonical.resize(n);
  for (int x = 0; x < n; ++x) atlas.canonical[x] = (x <= n / 2) ? 0 : 1;

  const Mat id = Mat::Identity(d, d);
  auto set_pair = [&](int node, const Mat& t01) {
    atlas.set_transition(0, 1, node, t01);
    atlas.set_transition(1, 0, node, t01.inverse());
  };
  for (int node : {n / 2, n / 2 + 1}) set_pair(node, id);
  Mat t_seam = id;
  if (hidden.transitions == "mobius") {
    if (d != 1) fail("ConfigInvalid", "mobius preset is a line-bundle preset");
    t_seam = -id;
  } else if (hidden.transitions == "neg_block") {
    t_seam = -id;  // determinant (+1)^d sign pattern, orientable for even d
  } else if (hidden.transitions != "identity") {
    fail("ConfigInvalid", "unknown transitions preset " + hidden.transitions);
  }
  for (int node : {n - 1, 0, 1}) set_pair(node, t_seam);
  return atlas;
}

FiberMetric make_metric(const HiddenConfig& hidden, const GridManifold& grid,
                        const ChartAtlas& atlas) {
  const int n = grid.node_count;
  const int d = atlas.rank;
  FiberMetric metric;
  metric.h.resize(n);
  for (int i = 0; i < n; ++i) {
    if (hidden.metric == "identity") {
      metric.h[i] = Mat::Identity(d, d);
    } else if (hidden.metric == "diag") {
      if (static_cast<int>(hidden.metric_diag.size()) < d) {
        fail("ConfigInvalid", "metric_diag needs one entry per fiber dimension");
      }
      metric.h[i] = Mat::Zero(d, d);
      for (int r = 0; r < d; ++r) metric.h[i](r, r) = hidden.metric_diag[r];
    } else if (hidden.metric == "rotating") {
      if (d != 2) fail("ConfigInvalid", "rotating metric preset needs rank 2");
      Mat base = Mat::Zero(2, 2);
      base(0, 0) = hidden.metric_diag[0];
      base(1, 1) = hidden.metric_diag[1];
      Mat r = rotation(hidden.metric_angle * std::sin(grid.positions[i]));
      metric.h[i] = r * base * r.transpose();
    } else {
      fail("ConfigInvalid", "unknown metric preset " + hidden.metric);
    }
  }
  return metric;
}

EllipticOperatorSpec make_operator(const HiddenConfig& hidden, const GridManifold& grid,
                                   int rank) {
  const int n = grid.node_count;
  EllipticOperatorSpec spec;
  spec.a2.assign(n, -Mat::Identity(rank, rank));
  spec.a1.assign(n, Mat::Zero(rank, rank));
  spec.a0.resize(n);
  for (int i = 0; i < n; ++i) {
    if (hidden.op == "laplace_plus_one") {
      spec.a0[i] = Mat::Identity(rank, rank);
    } else if (hidden.op == "variable_a0") {
      double v = hidden.a0_base + hidden.a0_amplitude * std::cos(grid.positions[i]);
      if (v <= 0.0) fail("ConfigInvalid", "variable_a0 preset must stay positive");
      spec.a0[i] = v * Mat::Identity(rank, rank);
    } else {
      fail("ConfigInvalid", "unknown operator preset " + hidden.op);
    }
  }
  return spec;
}

ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig cfg;
  cfg.name = name;
  cfg.reconstruct.slice_time = rational_of(19, 64);
  cfg.reconstruct.t0 = Rational(1);
  cfg.reconstruct.lag = rational_of(1, 512);
  cfg.reconstruct.fd_step = rational_of(1, 1000);
  cfg.reconstruct.slot_pitch = rational_of(1, 8);

  // Arc dictionary families contribute one effective field per fiber
  // dimension (the covariance keeps only the arc-constant spatial mode), so
  // full phase-space rank needs arcs at stride 1 with d members each.
  if (name == "trivial_line") {
    cfg.hidden.nodes = 64;
    cfg.hidden.rank = 1;
    cfg.hidden.op = "variable_a0";
    cfg.families.arc_stride = 1;
    cfg.families.arc_members = 1;
    cfg.reconstruct.slots_per_member = 3;
  } else if (name == "mobius_line") {
    cfg.hidden.nodes = 64;
    cfg.hidden.rank = 1;
    cfg.hidden.transitions = "mobius";
    cfg.families.arc_stride = 1;
    cfg.families.arc_members = 1;
    cfg.reconstruct.slots_per_member = 3;
  } else if (name == "trivial_rank2") {
    cfg.hidden.nodes = 64;
    cfg.hidden.rank = 2;
    cfg.hidden.metric = "diag";
    cfg.families.arc_stride = 1;
    cfg.families.arc_members = 2;
    cfg.families.delta_members = 4;
    cfg.families.global_members = 48;
    cfg.reconstruct.probe_count = 16;
    cfg.reconstruct.slots_per_member = 3;
  } else if (name == "bridge_n32") {
    // 16 x 2 + 16 x 1 x 2 = 64 dictionary atoms.
    cfg.hidden.nodes = 32;
    cfg.hidden.rank = 1;
    cfg.families.global_members = 16;
    cfg.families.arc_members = 1;
    cfg.families.arc_width = 2;
    cfg.families.arc_stride = 2;
  } else if (name == "pairing_n32") {
    cfg.hidden.nodes = 32;
    cfg.hidden.rank = 1;
    cfg.families.global_members = 16;
    cfg.families.arc_members = 1;
    cfg.families.arc_width = 2;
    cfg.families.arc_stride = 1;
    cfg.reconstruct.slots_per_member = 3;
  } else {
    fail("ConfigInvalid", "unknown scenario preset " + name);
  }
  return cfg;
}

Scenario instantiate(const ScenarioConfig& config, const std::string& oracle_log_path) {
  Scenario s;
  s.config = config;
  const int n = config.hidden.nodes;
  const int d = config.hidden.rank;

  GridManifold grid = GridManifold::circle(n);
  ChartAtlas atlas = make_atlas(config.hidden);
  FiberMetric metric = make_metric(config.hidden, grid, atlas);
  s.bundle = std::make_unique<GridBundle>(build_bundle(grid, atlas, metric));
  s.model = std::make_unique<SpectralModel>(*s.bundle, make_operator(config.hidden, grid, d));

  const FamilyLayoutConfig& fam = config.families;
  Rational dict_t_lo = fam.dict_t_hi - fam.dict_window;
  int id = 0;
  auto add_family = [&](std::vector<int> arc, const Rational& lo, const Rational& hi,
                        int members, int time_points) {
    FamilySpec spec;
    spec.id = id;
    spec.arc_nodes = std::move(arc);
    spec.t_lo = lo;
    spec.t_hi = hi;
    spec.member_count = members;
    spec.seed = GaussianStream::derive_seed(fam.seed, static_cast<std::uint64_t>(id));
    spec.sobolev_order = fam.sobolev_order;
    spec.kl_rank = fam.kl_rank;
    spec.time_points = time_points;
    s.families.emplace_back(*s.bundle, spec);
    ++id;
  };

  // Dictionary families: one global family plus short arcs around the circle.
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  add_family(all, dict_t_lo, fam.dict_t_hi, fam.global_members, fam.dict_time_points);
  for (int start = 0; start < n; start += fam.arc_stride) {
    std::vector<int> arc(fam.arc_width);
    for (int k = 0; k < fam.arc_width; ++k) arc[k] = (start + k) % n;
    add_family(std::move(arc), dict_t_lo, fam.dict_t_hi, fam.arc_members,
               fam.dict_time_points);
  }

  // Delta families: per node, a one-node arc and a three-node arc over the
  // probe window.
  for (int x = 0; x < n; ++x) {
    add_family({x}, fam.probe_t_lo, fam.probe_t_hi, fam.delta_members,
               fam.probe_time_points);
    add_family({(x + n - 1) % n, x, (x + 1) % n}, fam.probe_t_lo, fam.probe_t_hi,
               fam.delta_members, fam.probe_time_points);
  }

  // A wider probe family for pairing tests and held-out checks.
  {
    std::vector<int> arc(fam.probe_family_width);
    for (int k = 0; k < fam.probe_family_width; ++k) arc[k] = k;
    add_family(std::move(arc), fam.probe_t_lo, fam.probe_t_hi, fam.probe_family_members,
               fam.probe_time_points);
  }

  OracleConfig ocfg;
  ocfg.t_min = config.oracle.t_min;
  ocfg.tau_origin = config.oracle.tau_origin;
  ocfg.max_queries = config.oracle.max_queries;
  if (config.oracle.log_queries && !oracle_log_path.empty()) ocfg.log_path = oracle_log_path;
  s.oracle = std::make_unique<Oracle>(*s.model, &s.families, ocfg);
  return s;
}

std::vector<Mat> gauge_fields(int nodes, int rank, std::uint64_t seed, double amplitude) {
  std::vector<Mat> g(nodes);
  GaussianStream gauss(seed);
  // Smooth low-frequency fields keep the gauge well conditioned.
  std::vector<double> c1(rank * rank), s1(rank * rank), c2(rank * rank);
  for (auto& v : c1) v = gauss.next();
  for (auto& v : s1) v = gauss.next();
  for (auto& v : c2) v = gauss.next();
  for (int i = 0; i < nodes; ++i) {
    double x = kTwoPi * i / nodes;
    Mat m = Mat::Identity(rank, rank);
    for (int r = 0; r < rank; ++r) {
      for (int c = 0; c < rank; ++c) {
        double wobble = c1[r * rank + c] * std::cos(x) + s1[r * rank + c] * std::sin(x) +
                        c2[r * rank + c] * std::cos(2.0 * x);
        m(r, c) += amplitude * wobble / 3.0;
      }
    }
    Eigen::FullPivLU<Mat> lu(m);
    if (!lu.isInvertible()) fail("ConfigInvalid", "gauge field not invertible; reseed");
    g[i] = m;
  }
  return g;
}

Scenario conjugated_copy(const Scenario& base, std::uint64_t gauge_seed, double amplitude) {
  const int n = base.config.hidden.nodes;
  const int d = base.config.hidden.rank;
  std::vector<Mat> g = gauge_fields(n, d, gauge_seed, amplitude);

  Scenario s;
  s.config = base.config;
  s.config.name = base.config.name + "_conjugated";

  const GridBundle& bundle = *base.bundle;
  GridManifold grid = bundle.grid();
  ChartAtlas atlas = bundle.atlas();
  for (auto& [key, t] : atlas.transitions) {
    int node = std::get<2>(key);
    t = g[node] * t * g[node].inverse();
  }
  FiberMetric metric;
  metric.h.resize(n);
  for (int i = 0; i < n; ++i) {
    Mat gi = g[i].inverse();
    metric.h[i] = gi.transpose() * bundle.metric().h[i] * gi;
    metric.h[i] = 0.5 * (metric.h[i] + metric.h[i].transpose());
  }
  s.bundle = std::make_unique<GridBundle>(build_bundle(grid, atlas, metric));

  // Exact stencil conjugation (the coefficient fields follow from it).
  const OperatorStencil& st = base.model->stencil();
  OperatorStencil conj;
  conj.lower.resize(n);
  conj.diag.resize(n);
  conj.upper.resize(n);
  for (int i = 0; i < n; ++i) {
    int im = (i + n - 1) % n;
    int ip = (i + 1) % n;
    conj.lower[i] = g[i] * st.lower[i] * g[im].inverse();
    conj.diag[i] = g[i] * st.diag[i] * g[i].inverse();
    conj.upper[i] = g[i] * st.upper[i] * g[ip].inverse();
  }
  s.model = std::make_unique<SpectralModel>(*s.bundle, conj);

  // The same physical experiments expressed in the conjugated trivialization.
  s.families.reserve(base.families.size());
  for (const BasicFamily& fam : base.families) {
    BasicFamily copy = fam;  // members are value structs
    s.families.push_back(std::move(copy));
  }
  for (BasicFamily& fam : s.families) fam.apply_gauge(g);

  OracleConfig ocfg;
  ocfg.t_min = s.config.oracle.t_min;
  ocfg.tau_origin = s.config.oracle.tau_origin;
  ocfg.max_queries = s.config.oracle.max_queries;
  s.oracle = std::make_unique<Oracle>(*s.model, &s.families, ocfg);
  return s;
}

}  // namespace vblab
