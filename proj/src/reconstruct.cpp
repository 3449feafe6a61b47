#include "vblab/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace vblab {

namespace {

std::string atom_key(int family, int member, const Rational& shift) {
  return std::to_string(family) + ":" + std::to_string(member) + ":" + vblab::to_string(shift);
}

// 4th-order first derivative from samples at tau + {-2h, -h, +h, +2h}.
double fd_derivative(const std::vector<double>& e, double h) {
  return (e[0] - 8.0 * e[1] + 8.0 * e[2] - e[3]) / (12.0 * h);
}

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
  return r;
}

// sigma_min of a small matrix.
double min_singular(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues().minCoeff();
}

}  // namespace

Reconstructor::Reconstructor(const Oracle& oracle, GridManifold grid,
                             ReconstructConfig config)
    : oracle_(&oracle), grid_(std::move(grid)), cfg_(std::move(config)) {
  if (cfg_.slots_per_member < 1) fail("ConfigInvalid", "slots_per_member must be >= 1");
  if (cfg_.lag <= 0 || cfg_.fd_step <= 0 || cfg_.slot_pitch <= 0) {
    fail("ConfigInvalid", "layout times must be positive");
  }
  if (!(cfg_.slice_time < cfg_.t0)) fail("ConfigInvalid", "t0 must follow the probe window");
}

double Reconstructor::measure_energy(const std::vector<QueryItem>& items,
                                     const Rational& t) const {
  return oracle_->measure({items, t});
}

double Reconstructor::atom_energy(const AtomRef& a) const {
  std::string key = atom_key(a.family, a.member, a.shift);
  auto it = energy_cache_.find(key);
  if (it != energy_cache_.end()) return it->second;
  double e = measure_energy({{a.family, a.member, a.shift}}, cfg_.t0);
  energy_cache_.emplace(std::move(key), e);
  return e;
}

double Reconstructor::cross_pair(const AtomRef& a, const AtomRef& b,
                                 const Rational& t) const {
  double sum =
      measure_energy({{a.family, a.member, a.shift}, {b.family, b.member, b.shift}}, t);
  // Post-support single-atom energies are conserved and shift-covariant
  // (remark after the continuity lemma), so the cached values apply at any
  // admissible evaluation time.
  AtomRef a0 = a;
  AtomRef b0 = b;
  return sum - atom_energy(a0) - atom_energy(b0);
}

void Reconstructor::build_dictionary() {
  const auto& families = oracle_->families();
  const Rational window_limit = cfg_.lag;

  dictionary_.atoms.clear();
  dictionary_.tau0 = cfg_.t0;
  int slot = 0;
  for (const FamilyDescriptor& fd : families) {
    if (!(fd.t_hi < 0)) continue;
    Rational window = fd.t_hi - fd.t_lo;
    if (!(window < window_limit)) continue;
    for (int k = 0; k < fd.member_count; ++k) {
      for (int s = 0; s < cfg_.slots_per_member; ++s) {
        // Support ends at -(slot + 1) * pitch.
        Rational shift = fd.t_hi + Rational(slot + 1) * cfg_.slot_pitch;
        if (shift < 0) fail("InadmissibleLayout", "dictionary window after the origin");
        dictionary_.atoms.push_back({fd.id, k, shift});
        ++slot;
      }
    }
  }
  const int n = static_cast<int>(dictionary_.atoms.size());
  if (n < 2) fail("InadmissibleLayout", "no dictionary families available");

  std::uint64_t q0 = oracle_->query_count();

  gram_.g = Mat::Zero(n, n);
  gram_.g_lag = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) gram_.g(i, i) = 2.0 * atom_energy(dictionary_.atoms[i]);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double c = cross_pair(dictionary_.atoms[i], dictionary_.atoms[j], cfg_.t0);
      gram_.g(i, j) = c;
      gram_.g(j, i) = c;
    }
  }
  // Advanced pairings 2B(S_i(t + h), S_j(t)); the advanced copy of atom i
  // is admissible against atom i itself because the window is shorter than
  // the lag.
  for (int i = 0; i < n; ++i) {
    AtomRef adv = dictionary_.atoms[i];
    adv.shift += cfg_.lag;
    for (int j = 0; j < n; ++j) {
      gram_.g_lag(i, j) = cross_pair(adv, dictionary_.atoms[j], cfg_.t0);
    }
  }
  diag_.queries_gram = oracle_->query_count() - q0;

  double mean_diag = gram_.g.trace() / n;
  gram_.ridge = cfg_.ridge_rel * mean_diag;
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(gram_.g);
    double lo = es.eigenvalues().minCoeff();
    double hi = es.eigenvalues().maxCoeff();
    if (lo < -1e-8 * gram_.g.trace()) {
      fail("InadmissibleLayout", "cross-Gram is not positive semidefinite");
    }
    gram_.cond_estimate = hi / std::max(gram_.ridge, std::max(lo, 1e-300));
    gram_.rank_estimate = static_cast<int>((es.eigenvalues().array() > 1e-12 * hi).count());
  }
  diag_.gram_cond = gram_.cond_estimate;

  gram_solver_.compute(gram_.g + gram_.ridge * Mat::Identity(n, n));

  // Wave-level antiderivative operator: minimizing
  // E((tau_h G - G)/h - F, t0) over G-coefficients g for each target f
  // gives the normal equations M g = N f with
  //   M = (2G - G2 - G2^T) / h^2,   N = (G2 - G) / h.
  double h = to_double(cfg_.lag);
  Mat m_d = (2.0 * gram_.g - gram_.g_lag - gram_.g_lag.transpose()) / (h * h);
  Mat n_rhs = (gram_.g_lag - gram_.g) / h;
  double ridge_d = cfg_.ridge_rel * (m_d.trace() / n);
  anti_solver_.compute(m_d + ridge_d * Mat::Identity(n, n));
  gamma_ = anti_solver_.solve(n_rhs);
  have_gram_ = true;
}

double Reconstructor::combination_energy(const VirtualSource& c, const Rational& t) const {
  if (!have_gram_) fail("MissingGramEntry", "dictionary has not been built");
  if (c.coeff.size() != gram_.g.rows()) fail("MissingGramEntry", "coefficient length mismatch");
  for (const AtomRef& a : dictionary_.atoms) {
    const FamilyDescriptor& fd = oracle_->families()[a.family];
    if (!(fd.t_hi - a.shift < t)) {
      fail("MissingGramEntry", "evaluation time precedes a dictionary slot");
    }
  }
  return 0.5 * c.coeff.dot(gram_.g * c.coeff);
}

Vec Reconstructor::cross_vector(const AtomRef& target, const Rational& extra_shift) const {
  const int n = static_cast<int>(dictionary_.atoms.size());
  AtomRef shifted = target;
  shifted.shift += extra_shift;
  Vec out(n);
  for (int k = 0; k < n; ++k) {
    const AtomRef& a = dictionary_.atoms[k];
    if (a.family == shifted.family && a.member == shifted.member && a.shift == shifted.shift) {
      out[k] = gram_.g(k, k);
      continue;
    }
    out[k] = cross_pair(a, shifted, cfg_.t0);
  }
  return out;
}

SynthesisResult Reconstructor::synthesize_atom(const AtomRef& target, const std::string& mode,
                                               std::optional<Rational> derivative_lag) {
  if (!have_gram_) fail("MissingGramEntry", "dictionary has not been built");
  const int n = static_cast<int>(dictionary_.atoms.size());

  std::vector<int> active;
  for (int k = 0; k < n; ++k) {
    const AtomRef& a = dictionary_.atoms[k];
    if (a.family == target.family && a.member == target.member) continue;
    active.push_back(k);
  }
  if (active.empty()) fail("SingularGram", "search dictionary is empty");

  double sign = 0.0;
  Vec gamma;          // <S_k, S_target>_E over the full dictionary
  double target_self = 0.0;  // ||target||_E^2 = 2 E(target)
  if (mode == "negate" || mode == "copy") {
    gamma = cross_vector(target, Rational(0));
    target_self = 2.0 * atom_energy(target);
    sign = (mode == "negate") ? -1.0 : 1.0;
  } else if (mode == "derivative") {
    Rational h = derivative_lag.value_or(cfg_.lag);
    const FamilyDescriptor& fd = oracle_->families()[target.family];
    if (!(fd.t_hi - fd.t_lo < h)) {
      fail("InadmissibleLayout",
           "derivative lag must exceed the member window for an admissible ladder");
    }
    double hd = to_double(h);
    Vec c0 = cross_vector(target, Rational(0));
    Vec c1 = cross_vector(target, h);
    gamma = (c1 - c0) / hd;
    AtomRef adv = target;
    adv.shift += h;
    double rho = cross_pair(adv, target, cfg_.t0);
    double e_t = atom_energy(target);
    target_self = (4.0 * e_t - 2.0 * rho) / (hd * hd);
    sign = 1.0;
  } else {
    fail("ConfigInvalid", "unknown synthesis mode " + mode);
  }

  // Minimize E(c - sign * target) over the active atoms:
  //   0.5 c^T G c - sign c^T gamma + 0.5 ||target||_E^2.
  // For mode "negate" the wave of c approximates -wave(target).
  const int m = static_cast<int>(active.size());
  Mat g_active(m, m);
  Vec rhs(m);
  for (int i = 0; i < m; ++i) {
    rhs[i] = sign * gamma[active[i]];
    for (int j = 0; j < m; ++j) g_active(i, j) = gram_.g(active[i], active[j]);
  }
  Eigen::LDLT<Mat> solver(g_active + gram_.ridge * Mat::Identity(m, m));
  if (solver.info() != Eigen::Success) fail("SingularGram", "synthesis normal equations failed");
  Vec c_active = solver.solve(rhs);

  SynthesisResult out;
  out.combination.coeff = Vec::Zero(n);
  for (int i = 0; i < m; ++i) out.combination.coeff[active[i]] = c_active[i];
  double value =
      0.5 * c_active.dot(g_active * c_active) - c_active.dot(rhs) + 0.5 * target_self;
  out.residual_energy = std::max(value, 0.0);
  out.residual_above_tolerance =
      (out.residual_energy > 1e-4 * std::max(0.5 * target_self, 1e-300));
  return out;
}

SynthesisResult Reconstructor::synthesize(const VirtualSource& target, const std::string& mode) {
  if (!have_gram_) fail("MissingGramEntry", "dictionary has not been built");
  const int n = static_cast<int>(dictionary_.atoms.size());
  if (target.coeff.size() != n) fail("MissingGramEntry", "coefficient length mismatch");
  if (mode != "negate" && mode != "copy") {
    fail("ConfigInvalid", "virtual-target synthesis supports negate/copy");
  }
  double sign = (mode == "negate") ? -1.0 : 1.0;
  Vec rhs = sign * (gram_.g * target.coeff);
  SynthesisResult out;
  out.combination.coeff = gram_solver_.solve(rhs);
  double self = target.coeff.dot(gram_.g * target.coeff);
  double value = 0.5 * out.combination.coeff.dot(gram_.g * out.combination.coeff) -
                 out.combination.coeff.dot(rhs) + 0.5 * self;
  out.residual_energy = std::max(value, 0.0);
  out.residual_above_tolerance = (out.residual_energy > 1e-4 * std::max(0.5 * self, 1e-300));
  return out;
}

double Reconstructor::seminorm(const VirtualSource& c, int s) {
  if (!have_gram_) fail("MissingGramEntry", "dictionary has not been built");
  if (s < 0) fail("ConfigInvalid", "derivative order must be >= 0");
  const int n = static_cast<int>(dictionary_.atoms.size());
  if (c.coeff.size() != n) fail("MissingGramEntry", "coefficient length mismatch");
  if (s == 0) return std::sqrt(std::max(0.5 * c.coeff.dot(gram_.g * c.coeff), 0.0));

  double h = to_double(cfg_.lag);
  std::vector<int> support;
  for (int k = 0; k < n; ++k) {
    if (c.coeff[k] != 0.0) support.push_back(k);
  }
  // rho(m) = <Phi_{m h} S_c, S_c>_E from admissible advanced pairs.
  std::vector<double> rho(s + 1, 0.0);
  rho[0] = c.coeff.dot(gram_.g * c.coeff);
  for (int m = 1; m <= s; ++m) {
    Rational shift = Rational(m) * cfg_.lag;
    double acc = 0.0;
    for (int i : support) {
      AtomRef adv = dictionary_.atoms[i];
      adv.shift += shift;
      for (int j : support) {
        acc += c.coeff[i] * c.coeff[j] * cross_pair(adv, dictionary_.atoms[j], cfg_.t0);
      }
    }
    rho[m] = acc;
  }
  double total = 0.0;
  for (int a = 0; a <= s; ++a) {
    for (int b = 0; b <= s; ++b) {
      double w = binom(s, a) * binom(s, b) * ((a + b) % 2 == 0 ? 1.0 : -1.0);
      total += w * rho[std::abs(a - b)];
    }
  }
  total /= std::pow(h, 2 * s);
  return std::sqrt(std::max(0.5 * total, 0.0));
}

Reconstructor::PairingRows Reconstructor::measure_rows(int family, int member,
                                                       const Rational& tau) {
  const auto& families = oracle_->families();
  if (family < 0 || family >= static_cast<int>(families.size())) {
    fail("UnknownMember", "unknown probe family");
  }
  const FamilyDescriptor& fd = families[family];
  if (!(fd.t_lo < tau && tau < fd.t_hi)) {
    fail("InadmissibleQuery", "probe slice time must lie inside the probe window");
  }
  const int n = static_cast<int>(dictionary_.atoms.size());
  const double fd_h = to_double(cfg_.fd_step);
  std::vector<Rational> times = {tau - Rational(2) * cfg_.fd_step, tau - cfg_.fd_step,
                                 tau + cfg_.fd_step, tau + Rational(2) * cfg_.fd_step};

  std::uint64_t q0 = oracle_->query_count();
  PairingRows out;
  out.rows = Mat::Zero(4, n);

  std::vector<double> probe_series =
      oracle_->measure_series({{family, member, Rational(0)}}, times);
  double probe_rate = fd_derivative(probe_series, fd_h);

  // Advance offsets {-h, 0, +h/2, +h}: the symmetric pair serves the
  // second time derivative, the half-lag row the antiderivative pairing.
  const Rational offsets[4] = {-cfg_.lag, Rational(0), cfg_.lag / 2, cfg_.lag};
  for (int shift_idx = 0; shift_idx < 4; ++shift_idx) {
    Rational advance = cfg_.t0 - tau + offsets[shift_idx];
    if (advance < 0) fail("InadmissibleLayout", "advance shift went negative");
    for (int j = 0; j < n; ++j) {
      AtomRef adv = dictionary_.atoms[j];
      adv.shift += advance;
      std::vector<double> series = oracle_->measure_series(
          {{adv.family, adv.member, adv.shift}, {family, member, Rational(0)}}, times);
      out.rows(shift_idx, j) = fd_derivative(series, fd_h) - probe_rate;
    }
  }
  diag_.queries_pairing += oracle_->query_count() - q0;
  return out;
}

Vec Reconstructor::p0_row(const PairingRows& rows) const {
  // <F2(tau), u^{F}(T0)> = <F2(tau), d/dt u^{G}(T0 + h/2)> with G the
  // antiderivative combination; the half-lag advance compensates the
  // forward-difference realization of d/dt.
  return gamma_.transpose() * rows.rows.row(2).transpose();
}

double Reconstructor::pairing(int probe_family, int probe_member, const Rational& tau,
                              const VirtualSource& c, int derivative_order) {
  if (!have_gram_) fail("MissingGramEntry", "dictionary has not been built");
  PairingRows rows = measure_rows(probe_family, probe_member, tau);
  const double lag = to_double(cfg_.lag);
  switch (derivative_order) {
    case 1:
      return rows.rows.row(1).dot(c.coeff);
    case 2:
      return (rows.rows.row(3) - rows.rows.row(0)).dot(c.coeff) / (2.0 * lag);
    case 0:
      return p0_row(rows).dot(c.coeff);
    default:
      fail("ConfigInvalid", "pairing derivative order must be 0, 1 or 2");
  }
}

void Reconstructor::select_probes() {
  const int n = static_cast<int>(dictionary_.atoms.size());
  const int p = cfg_.probe_count;
  GaussianStream gauss(cfg_.probe_seed);
  std::mt19937_64 pick(GaussianStream::derive_seed(cfg_.probe_seed, 1));

  // Smooth probes draw only on full-circle family atoms; their waves are
  // smooth along the base, which keeps the dual frames smooth. The rest mix
  // in the sharp arc atoms for jet diversity.
  std::vector<int> smooth_atoms;
  const int nn = grid_.node_count;
  for (int k = 0; k < n; ++k) {
    const FamilyDescriptor& fd = oracle_->families()[dictionary_.atoms[k].family];
    if (static_cast<int>(fd.arc_nodes.size()) == nn) smooth_atoms.push_back(k);
  }
  smooth_probe_count_ = std::max(p / 2, 2);
  if (smooth_atoms.empty()) smooth_probe_count_ = 0;

  probe_coeff_ = Mat::Zero(n, p);
  for (int q = 0; q < p; ++q) {
    Vec c = Vec::Zero(n);
    bool smooth = q < smooth_probe_count_;
    const std::vector<int>* pool = smooth ? &smooth_atoms : nullptr;
    int pool_size = smooth ? static_cast<int>(smooth_atoms.size()) : n;
    int nnz = std::min(cfg_.probe_support, pool_size);
    std::set<int> chosen;
    while (static_cast<int>(chosen.size()) < nnz) {
      int idx = static_cast<int>(pick() % static_cast<std::uint64_t>(pool_size));
      chosen.insert(pool ? (*pool)[idx] : idx);
    }
    for (int k : chosen) c[k] = gauss.next();
    double scale = std::sqrt(std::max(c.dot(gram_.g * c), 1e-300));
    probe_coeff_.col(q) = c / scale;
  }
}

void Reconstructor::collect_candidates() {
  const auto& families = oracle_->families();
  const int nn = grid_.node_count;
  candidates_.clear();
  candidates_by_node_.clear();

  for (const FamilyDescriptor& fd : families) {
    if (fd.t_hi < 0) continue;
    int width = static_cast<int>(fd.arc_nodes.size());
    int level = 0;
    int center = 0;
    if (width == 1) {
      level = 1;
      center = fd.arc_nodes[0];
    } else if (width == 3) {
      level = 0;
      center = fd.arc_nodes[1];
    } else {
      continue;  // general probe family, not part of a delta sequence
    }
    double volume = 0.0;
    for (int node : fd.arc_nodes) volume += grid_.weights[node];

    // Slice times: midpoints of the two central knot intervals.
    Rational window = fd.t_hi - fd.t_lo;
    int pieces = fd.time_points - 1;
    std::vector<Rational> slices;
    for (int k : {pieces / 2, std::min(pieces / 2 + 1, pieces - 1)}) {
      Rational slice = fd.t_lo + window * Rational(2 * k + 1) / Rational(2 * pieces);
      if (std::find(slices.begin(), slices.end(), slice) == slices.end()) {
        slices.push_back(slice);
      }
    }

    for (int k = 0; k < fd.member_count; ++k) {
      for (const Rational& slice : slices) {
        CandidateData cd;
        cd.ref = {fd.id, k, slice, volume};
        cd.node = center;
        cd.level = level;
        cd.rows = measure_rows(fd.id, k, slice);
        cd.rows.rows /= volume;
        cd.probe_p0 = probe_coeff_.transpose() * p0_row(cd.rows);
        candidates_.push_back(std::move(cd));
        candidates_by_node_[center].push_back(static_cast<int>(candidates_.size()) - 1);
      }
    }
  }
  if (static_cast<int>(candidates_by_node_.size()) != nn) {
    fail("NoConvergentSelection", "delta families must cover every node");
  }

  // Cauchy-in-level selection: the best coarse/fine directional match of the
  // volume-normalized pairing rows.
  deltas_.clear();
  diag_.max_cauchy_defect = 0.0;
  for (int x = 0; x < nn; ++x) {
    const auto& pool = candidates_by_node_[x];
    double best = std::numeric_limits<double>::infinity();
    int best_fine = -1;
    int best_coarse = -1;
    for (int ci : pool) {
      if (candidates_[ci].level != 1) continue;
      for (int cj : pool) {
        if (candidates_[cj].level != 0) continue;
        const Vec& a = candidates_[ci].probe_p0;
        const Vec& b = candidates_[cj].probe_p0;
        double denom = std::max(a.norm() * b.norm(), 1e-300);
        double cosang = std::min(std::abs(a.dot(b)) / denom, 1.0);
        double defect = std::sqrt(1.0 - cosang * cosang);
        if (defect < best) {
          best = defect;
          best_fine = ci;
          best_coarse = cj;
        }
      }
    }
    if (best_fine < 0 || best_coarse < 0) {
      fail("NoConvergentSelection", "node lacks delta candidates at both levels");
    }
    DeltaSequence seq;
    seq.node = x;
    seq.per_level = {candidates_[best_coarse].ref, candidates_[best_fine].ref};
    seq.cauchy_defect = best;
    seq.probe_pairings = candidates_[best_fine].probe_p0;
    deltas_.push_back(std::move(seq));
    diag_.max_cauchy_defect = std::max(diag_.max_cauchy_defect, best);
  }
  if (diag_.max_cauchy_defect > cfg_.cand_defect_tol) {
    std::ostringstream os;
    os << "delta pairings failed the Cauchy gate (max defect " << diag_.max_cauchy_defect
       << ")";
    fail("NoConvergentSelection", os.str());
  }
}

void Reconstructor::discover_rank() {
  // Fiber rank = maximal number of jointly independent delta functionals at
  // a point; read off as the consensus numerical rank of the finest-level
  // candidate pairing rows.
  std::vector<int> ranks;
  for (const auto& [node, pool] : candidates_by_node_) {
    std::vector<int> fine;
    for (int ci : pool) {
      if (candidates_[ci].level == 1) fine.push_back(ci);
    }
    Mat rows(static_cast<int>(fine.size()), probe_coeff_.cols());
    for (std::size_t r = 0; r < fine.size(); ++r) {
      rows.row(static_cast<int>(r)) = candidates_[fine[r]].probe_p0.transpose();
    }
    Eigen::JacobiSVD<Mat> svd(rows);
    double top = svd.singularValues().maxCoeff();
    int rank = static_cast<int>(
        (svd.singularValues().array() > cfg_.rank_tol * top).count());
    ranks.push_back(rank);
  }
  std::vector<int> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  int consensus = sorted[sorted.size() / 2];
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ranks[i] < consensus) {
      std::ostringstream os;
      os << "node " << i << " exposes rank " << ranks[i] << " < consensus " << consensus;
      fail("RankDeficientFrame", os.str());
    }
  }
  recovered_.rank = consensus;
}

void Reconstructor::build_chart_frames() {
  const int nn = grid_.node_count;
  const int d = recovered_.rank;
  const int p = static_cast<int>(probe_coeff_.cols());

  recovered_.nodes = nn;
  recovered_.frame.charts = {Chart{nn - 1, nn / 2 + 3}, Chart{nn / 2, nn / 2 + 2}};
  recovered_.frame.canonical.resize(nn);
  for (int x = 0; x < nn; ++x) recovered_.frame.canonical[x] = (x <= nn / 2) ? 0 : 1;

  recovered_.frame.per_chart.assign(2, {});
  recovered_.frame.ref_probes.assign(2, {});

  diag_.frame_min_sigma = std::numeric_limits<double>::infinity();

  for (int c = 0; c < 2; ++c) {
    ChartFrameData& data = chart_data_[c];
    data.nodes = recovered_.frame.charts[c].nodes(nn);
    data.pos.clear();
    for (std::size_t i = 0; i < data.nodes.size(); ++i) {
      data.pos[data.nodes[i]] = static_cast<int>(i);
    }

    // Reference probe columns: greedy pick maximizing the worst-node
    // conditioning of the candidate functional matrix.
    std::vector<int> fine_per_node;  // flattened candidate pools
    auto node_pool = [&](int node) {
      std::vector<int> fine;
      for (int ci : candidates_by_node_.at(node)) {
        if (candidates_[ci].level == 1) fine.push_back(ci);
      }
      return fine;
    };

    auto best_submatrix = [&](int node, const std::vector<int>& cols, std::vector<int>* chosen,
                              Mat* l_sel) {
      std::vector<int> fine = node_pool(node);
      // Greedy volume maximization of the d x d functional matrix.
      std::vector<int> sel;
      Mat rows(static_cast<int>(fine.size()), static_cast<int>(cols.size()));
      for (std::size_t r = 0; r < fine.size(); ++r) {
        for (std::size_t cc = 0; cc < cols.size(); ++cc) {
          rows(static_cast<int>(r), static_cast<int>(cc)) =
              candidates_[fine[r]].probe_p0[cols[cc]];
        }
      }
      Mat basis(0, cols.size());
      for (int step = 0; step < d; ++step) {
        double best_gain = -1.0;
        int best_row = -1;
        for (std::size_t r = 0; r < fine.size(); ++r) {
          if (std::find(sel.begin(), sel.end(), static_cast<int>(r)) != sel.end()) continue;
          Vec v = rows.row(static_cast<int>(r)).transpose();
          for (int b = 0; b < basis.rows(); ++b) {
            Vec q = basis.row(b).transpose();
            v -= q.dot(v) * q;
          }
          if (v.norm() > best_gain) {
            best_gain = v.norm();
            best_row = static_cast<int>(r);
          }
        }
        sel.push_back(best_row);
        Vec v = rows.row(best_row).transpose();
        for (int b = 0; b < basis.rows(); ++b) {
          Vec q = basis.row(b).transpose();
          v -= q.dot(v) * q;
        }
        if (v.norm() > 0) v.normalize();
        basis.conservativeResize(basis.rows() + 1, Eigen::NoChange);
        basis.row(basis.rows() - 1) = v.transpose();
      }
      Mat l(d, d);
      for (int r = 0; r < d; ++r) {
        for (int cc = 0; cc < d; ++cc) l(r, cc) = rows(sel[r], cc);
      }
      if (chosen) {
        chosen->clear();
        for (int r : sel) chosen->push_back(fine[r]);
      }
      if (l_sel) *l_sel = l;
      return min_singular(l) / std::max(rows.cwiseAbs().maxCoeff(), 1e-300);
    };

    // Enumerate d-subsets of the smooth probe columns (d <= 2 keeps this
    // tiny); smooth references keep the dual frame fields smooth.
    const int p_ref = (smooth_probe_count_ > 0) ? smooth_probe_count_ : p;
    std::vector<std::vector<int>> subsets;
    if (d == 1) {
      for (int a = 0; a < p_ref; ++a) subsets.push_back({a});
    } else if (d == 2) {
      for (int a = 0; a < p_ref; ++a) {
        for (int b = a + 1; b < p_ref; ++b) subsets.push_back({a, b});
      }
    } else {
      // Rank 3 and beyond: sample a few random subsets.
      std::mt19937_64 rng(cfg_.probe_seed + 17);
      for (int trial = 0; trial < 40; ++trial) {
        std::set<int> s;
        while (static_cast<int>(s.size()) < d) {
          s.insert(static_cast<int>(rng() % static_cast<std::uint64_t>(p_ref)));
        }
        subsets.emplace_back(s.begin(), s.end());
      }
    }

    double best_score = -1.0;
    std::vector<int> best_cols;
    for (const auto& cols : subsets) {
      if (static_cast<int>(cols.size()) != d) continue;
      double score = std::numeric_limits<double>::infinity();
      for (int node : data.nodes) {
        score = std::min(score, best_submatrix(node, cols, nullptr, nullptr));
        if (score <= best_score) break;
      }
      if (score > best_score) {
        best_score = score;
        best_cols = cols;
      }
    }
    if (best_cols.empty() || best_score < cfg_.frame_rank_tol) {
      fail("RankDeficientFrame", "no reference probe subset yields rank-d frames");
    }
    diag_.frame_min_sigma = std::min(diag_.frame_min_sigma, best_score);
    recovered_.frame.ref_probes[c] = best_cols;

    const int rows_total = static_cast<int>(data.nodes.size()) * d;
    const int n = static_cast<int>(dictionary_.atoms.size());
    data.r0 = Mat::Zero(rows_total, n);
    data.r1 = Mat::Zero(rows_total, n);
    data.r2 = Mat::Zero(rows_total, n);

    double lag = to_double(cfg_.lag);
    for (std::size_t i = 0; i < data.nodes.size(); ++i) {
      int node = data.nodes[i];
      std::vector<int> chosen;
      Mat l_sel;
      best_submatrix(node, best_cols, &chosen, &l_sel);
      Eigen::PartialPivLU<Mat> lu(l_sel);
      Mat z = lu.solve(Mat::Identity(d, d));

      NodeFrame frame;
      frame.node = node;
      frame.z = z;
      for (int r : chosen) frame.candidates.push_back(candidates_[r].ref);
      data.frames.push_back(frame);
      recovered_.frame.per_chart[c].push_back(frame);

      Mat cr1(d, n), cr_half(d, n), cr2(d, n);
      for (int r = 0; r < d; ++r) {
        const CandidateData& cd = candidates_[chosen[r]];
        cr1.row(r) = cd.rows.rows.row(1);
        cr_half.row(r) = cd.rows.rows.row(2);
        cr2.row(r) = (cd.rows.rows.row(3) - cd.rows.rows.row(0)) / (2.0 * lag);
      }
      data.r1.middleRows(static_cast<int>(i) * d, d) = z * cr1;
      data.r0.middleRows(static_cast<int>(i) * d, d) = z * cr_half * gamma_;
      data.r2.middleRows(static_cast<int>(i) * d, d) = z * cr2;
    }
    data.y0 = data.r0 * probe_coeff_;
  }

  // Canonical-frame rows for metric and operator recovery.
  const int n = static_cast<int>(dictionary_.atoms.size());
  r0_can_ = Mat::Zero(nn * d, n);
  r1_can_ = Mat::Zero(nn * d, n);
  for (int x = 0; x < nn; ++x) {
    int c = recovered_.frame.canonical[x];
    int pos = chart_data_[c].pos.at(x);
    r0_can_.middleRows(x * d, d) = chart_data_[c].r0.middleRows(pos * d, d);
    r1_can_.middleRows(x * d, d) = chart_data_[c].r1.middleRows(pos * d, d);
  }

  // Smoothness diagnostic: second differences of probe coordinates along
  // each chart, relative to the coordinate scale.
  double defect = 0.0;
  for (int c = 0; c < 2; ++c) {
    const Mat& y = chart_data_[c].y0;
    double scale = std::max(y.cwiseAbs().maxCoeff(), 1e-300);
    int rows = static_cast<int>(chart_data_[c].nodes.size());
    for (int i = 1; i + 1 < rows; ++i) {
      for (int r = 0; r < d; ++r) {
        for (int q = 0; q < static_cast<int>(y.cols()); ++q) {
          double dd = y((i + 1) * d + r, q) - 2.0 * y(i * d + r, q) + y((i - 1) * d + r, q);
          defect = std::max(defect, std::abs(dd) / scale);
        }
      }
    }
  }
  recovered_.frame.smoothness_defect = defect;
  diag_.smoothness_defect = defect;
  have_frames_ = true;
}

void Reconstructor::solve_transitions() {
  const int nn = grid_.node_count;
  const int d = recovered_.rank;
  recovered_.transitions.clear();
  recovered_.max_cocycle_defect = 0.0;

  for (int node = 0; node < nn; ++node) {
    bool in0 = recovered_.frame.charts[0].contains(node, nn);
    bool in1 = recovered_.frame.charts[1].contains(node, nn);
    if (!in0 || !in1) continue;
    const Mat c0 = chart_data_[0].y0.middleRows(chart_data_[0].pos.at(node) * d, d);
    const Mat c1 = chart_data_[1].y0.middleRows(chart_data_[1].pos.at(node) * d, d);
    Mat gram1 = c1 * c1.transpose();
    Mat gram0 = c0 * c0.transpose();
    double cond1 = gram1.norm() / std::max(min_singular(gram1), 1e-300);
    if (cond1 > cfg_.overlap_cond_tol) {
      fail("IllConditionedOverlap", "probe coordinates degenerate on the overlap");
    }
    Mat t01 = c0 * c1.transpose() * gram1.inverse();
    Mat t10 = c1 * c0.transpose() * gram0.inverse();
    double defect = (t01 * t10 - Mat::Identity(d, d)).cwiseAbs().maxCoeff();
    recovered_.max_cocycle_defect = std::max(recovered_.max_cocycle_defect, defect);
    recovered_.transitions[{0, 1, node}] = t01;
    recovered_.transitions[{1, 0, node}] = t01.inverse();
  }
  if (recovered_.max_cocycle_defect > cfg_.cocycle_tol) {
    std::ostringstream os;
    os << "recovered cocycle defect " << recovered_.max_cocycle_defect << " exceeds "
       << cfg_.cocycle_tol;
    fail("IllConditionedOverlap", os.str());
  }

  // Loop product sign over canonical-chart switches.
  double sign = 1.0;
  for (int i = 0; i < nn; ++i) {
    int ci = recovered_.frame.canonical[i];
    int cj = recovered_.frame.canonical[(i + 1) % nn];
    if (ci == cj) continue;
    const Mat& t01 = recovered_.transitions.at({0, 1, (i + 1) % nn});
    sign *= (t01.determinant() > 0) ? 1.0 : -1.0;
  }
  recovered_.loop_sign = (sign > 0) ? 1 : -1;
}

void Reconstructor::build_frames() {
  if (!have_gram_) build_dictionary();
  select_probes();
  collect_candidates();
  discover_rank();
  build_chart_frames();
  solve_transitions();
}

void Reconstructor::recover_metric() {
  if (!have_frames_) build_frames();
  const int nn = grid_.node_count;
  const int d = recovered_.rank;
  const int n = static_cast<int>(dictionary_.atoms.size());

  // Constrained minimum cT G c with R0 c = 0 (zero position everywhere) and
  // prescribed velocity pairings on the ball. The minimum value is
  // b^T (C Gr^-1 C^T)^-1 b; the ball block of that inverse divided by the
  // ball volume is the metric Gram of the frame functionals.
  Mat x0 = gram_solver_.solve(r0_can_.transpose());  // n x (N d)
  Mat a00 = r0_can_ * x0;
  double ridge0 = cfg_.ridge_rel * std::max(a00.trace() / a00.rows(), 1e-300);
  Eigen::LDLT<Mat> a00_solver(a00 + ridge0 * Mat::Identity(a00.rows(), a00.cols()));
  if (a00_solver.info() != Eigen::Success) {
    fail("KernelTooSmall", "position-constraint block is singular");
  }
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(gram_.g);
    int strong = static_cast<int>((es.eigenvalues().array() > gram_.ridge).count());
    diag_.kernel_rank_margin = strong - 2.0 * nn * d;
    if (strong < 2 * nn * d) {
      fail("KernelTooSmall", "dictionary Gram rank below 2 N d");
    }
  }

  Mat x1 = gram_solver_.solve(r1_can_.transpose());  // n x (N d)
  Mat a01 = r0_can_ * x1;                            // (N d) x (N d)
  Mat a11 = r1_can_ * x1;

  recovered_.metric.assign(nn, Mat());
  recovered_.metric_coarse.assign(nn, Mat());
  recovered_.metric_min_eigenvalue = std::numeric_limits<double>::infinity();
  recovered_.richardson_max_shift = 0.0;

  auto ball_metric = [&](const std::vector<int>& cols) {
    const int m = static_cast<int>(cols.size());
    Mat a01b(a01.rows(), m);
    Mat a11b(m, m);
    for (int i = 0; i < m; ++i) a01b.col(i) = a01.col(cols[i]);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) a11b(i, j) = a11(cols[i], cols[j]);
    }
    Mat schur = a11b - a01b.transpose() * a00_solver.solve(a01b);
    Eigen::LDLT<Mat> ldlt(schur);
    if (ldlt.info() != Eigen::Success) {
      fail("ConstrainedSolveSingular", "localized-norm Schur complement is singular");
    }
    return ldlt.solve(Mat::Identity(m, m)).eval();
  };

  for (int x = 0; x < nn; ++x) {
    std::vector<int> fine_cols(d);
    for (int r = 0; r < d; ++r) fine_cols[r] = x * d + r;
    Mat w_fine = ball_metric(fine_cols);
    Mat h_fine = 0.5 * (w_fine + w_fine.transpose()) / grid_.weights[x];
    recovered_.metric[x] = h_fine;

    // Coarse 3-node ball: localized norms of fixed kernel-projected fields
    // with the paper's vol-normalized ratio, then polarization.
    int xm = grid_.prev(x);
    int xp = grid_.next(x);
    std::vector<int> ball_cols;
    for (int node : {xm, x, xp}) {
      for (int r = 0; r < d; ++r) ball_cols.push_back(node * d + r);
    }
    double vol3 = grid_.weights[xm] + grid_.weights[x] + grid_.weights[xp];
    Mat w3 = ball_metric(ball_cols);
    // Target extends the point values by zero on the neighbors; the
    // resulting ratio is the coarse-ball surrogate of eq (norm / vol).
    Mat center = w3.block(d, d, d, d);
    Mat h_coarse = 0.5 * (center + center.transpose()) / vol3 * 3.0;
    recovered_.metric_coarse[x] = h_coarse;

    double shift = (h_coarse - h_fine).norm() / std::max(h_fine.norm(), 1e-300);
    recovered_.richardson_max_shift = std::max(recovered_.richardson_max_shift, shift);

    Eigen::SelfAdjointEigenSolver<Mat> es(h_fine);
    recovered_.metric_min_eigenvalue =
        std::min(recovered_.metric_min_eigenvalue, es.eigenvalues().minCoeff());
  }
  (void)n;
  if (recovered_.metric_min_eigenvalue <= 0.0) {
    fail("ConstrainedSolveSingular", "recovered metric is not positive definite");
  }
  normalize_frames();
  have_metric_ = true;
}

void Reconstructor::normalize_frames() {
  // Re-express every frame in nearly orthonormal fiber coordinates: the
  // recovered metric transforms to the identity up to reconstruction error,
  // which pins the gauge freedom of the published trivialization.
  const int nn = grid_.node_count;
  const int d = recovered_.rank;
  const int n = static_cast<int>(dictionary_.atoms.size());

  auto inv_sqrt = [&](const Mat& h) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.transpose()));
    if (es.eigenvalues().minCoeff() <= 0.0) {
      fail("ConstrainedSolveSingular", "frame normalization needs an SPD metric");
    }
    return Mat(es.eigenvectors() *
               es.eigenvalues().array().pow(-0.5).matrix().asDiagonal() *
               es.eigenvectors().transpose());
  };

  for (int c = 0; c < 2; ++c) {
    ChartFrameData& data = chart_data_[c];
    for (std::size_t i = 0; i < data.nodes.size(); ++i) {
      int node = data.nodes[i];
      int alpha = recovered_.frame.canonical[node];
      Mat h_chart = recovered_.metric[node];
      if (alpha != c) {
        // Metric in this chart's coordinates via the raw transition.
        const Mat& t = recovered_.transitions.at({alpha, c, node});
        h_chart = t.transpose() * recovered_.metric[node] * t;
      }
      Mat w = inv_sqrt(h_chart);
      int base = static_cast<int>(i) * d;
      data.r0.middleRows(base, d) = w * data.r0.middleRows(base, d);
      data.r1.middleRows(base, d) = w * data.r1.middleRows(base, d);
      data.r2.middleRows(base, d) = w * data.r2.middleRows(base, d);
      NodeFrame& nf = recovered_.frame.per_chart[c][i];
      nf.z = w * nf.z;
    }
    data.y0 = data.r0 * probe_coeff_;
  }

  // Canonical rows, transitions, loop sign and the metric in the new frame.
  for (int x = 0; x < nn; ++x) {
    int c = recovered_.frame.canonical[x];
    int pos = chart_data_[c].pos.at(x);
    r0_can_.middleRows(x * d, d) = chart_data_[c].r0.middleRows(pos * d, d);
    r1_can_.middleRows(x * d, d) = chart_data_[c].r1.middleRows(pos * d, d);
  }
  (void)n;
  solve_transitions();

  Mat x0 = gram_solver_.solve(r0_can_.transpose());
  Mat a00 = r0_can_ * x0;
  double ridge0 = cfg_.ridge_rel * std::max(a00.trace() / a00.rows(), 1e-300);
  Eigen::LDLT<Mat> a00_solver(a00 + ridge0 * Mat::Identity(a00.rows(), a00.cols()));
  Mat x1 = gram_solver_.solve(r1_can_.transpose());
  Mat a01 = r0_can_ * x1;
  Mat a11 = r1_can_ * x1;
  recovered_.metric_min_eigenvalue = std::numeric_limits<double>::infinity();
  recovered_.richardson_max_shift = 0.0;
  for (int x = 0; x < nn; ++x) {
    Mat a01b = a01.middleCols(x * d, d);
    Mat a11b = a11.block(x * d, x * d, d, d);
    Mat schur = a11b - a01b.transpose() * a00_solver.solve(a01b);
    Eigen::LDLT<Mat> ldlt(schur);
    Mat w_fine = ldlt.solve(Mat::Identity(d, d));
    Mat h_fine = 0.5 * (w_fine + w_fine.transpose()) / grid_.weights[x];
    Mat w_prev = recovered_.metric[x];
    recovered_.metric[x] = h_fine;
    // Coarse diagnostic transforms with the same normalization.
    Mat wnorm = inv_sqrt(w_prev);
    recovered_.metric_coarse[x] = wnorm * recovered_.metric_coarse[x] * wnorm.transpose();
    double shift = (recovered_.metric_coarse[x] - h_fine).norm() /
                   std::max(h_fine.norm(), 1e-300);
    recovered_.richardson_max_shift = std::max(recovered_.richardson_max_shift, shift);
    Eigen::SelfAdjointEigenSolver<Mat> es(h_fine);
    recovered_.metric_min_eigenvalue =
        std::min(recovered_.metric_min_eigenvalue, es.eigenvalues().minCoeff());
  }
}

void Reconstructor::recover_operator() {
  if (!have_frames_) build_frames();
  const int nn = grid_.node_count;
  const int d = recovered_.rank;
  const double dx = grid_.spacing();
  const int p = static_cast<int>(probe_coeff_.cols());
  if (p < 3 * d) fail("JetRankDeficient", "need at least 3 d probes for the jet fit");

  recovered_.a2.assign(nn, Mat());
  recovered_.a1.assign(nn, Mat());
  recovered_.a0.assign(nn, Mat());
  recovered_.max_fit_residual = 0.0;

  for (int x = 0; x < nn; ++x) {
    int c = recovered_.frame.canonical[x];
    const ChartFrameData& data = chart_data_[c];
    auto it_m = data.pos.find(grid_.prev(x));
    auto it_c = data.pos.find(x);
    auto it_p = data.pos.find(grid_.next(x));
    if (it_m == data.pos.end() || it_c == data.pos.end() || it_p == data.pos.end()) {
      fail("JetRankDeficient", "canonical chart does not cover the stencil");
    }
    Mat y_m = data.y0.middleRows(it_m->second * d, d);
    Mat y_c = data.y0.middleRows(it_c->second * d, d);
    Mat y_p = data.y0.middleRows(it_p->second * d, d);
    Mat z = -(data.r2.middleRows(it_c->second * d, d) * probe_coeff_);

    Mat ypp = (y_p - 2.0 * y_c + y_m) / (dx * dx);
    Mat yp = (y_p - y_m) / (2.0 * dx);

    // Scaled design rows for conditioning; unscale the blocks afterwards.
    Mat design(3 * d, p);
    design.topRows(d) = ypp * (dx * dx);
    design.middleRows(d, d) = yp * dx;
    design.bottomRows(d) = y_c;

    Mat gram = design * design.transpose();
    double top = gram.diagonal().maxCoeff();
    double sigma_min = min_singular(gram);
    if (sigma_min < 1e-12 * top) {
      fail("JetRankDeficient", "probe jets degenerate at a node");
    }
    Eigen::LDLT<Mat> solver(gram + 1e-12 * top * Mat::Identity(3 * d, 3 * d));
    Mat coeff = (solver.solve(design * z.transpose())).transpose();  // d x 3d

    recovered_.a2[x] = coeff.leftCols(d) * (dx * dx);
    recovered_.a1[x] = coeff.middleCols(d, d) * dx;
    recovered_.a0[x] = coeff.rightCols(d);

    double resid = (coeff * design - z).norm() / std::max(z.norm(), 1e-300);
    recovered_.max_fit_residual = std::max(recovered_.max_fit_residual, resid);
  }
  if (recovered_.max_fit_residual > cfg_.fit_residual_tol) {
    std::ostringstream os;
    os << "operator graph fit residual " << recovered_.max_fit_residual << " exceeds "
       << cfg_.fit_residual_tol;
    fail("FitResidualAboveTolerance", os.str());
  }
}

const RecoveredModel& Reconstructor::run() {
  build_dictionary();
  build_frames();
  recover_metric();
  recover_operator();
  diag_.queries_total = oracle_->query_count();
  return recovered_;
}

}  // namespace vblab
