#include "vblab/oracle.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace vblab {

Oracle::Oracle(const SpectralModel& model, const std::vector<BasicFamily>* families,
               OracleConfig config)
    : model_(&model),
      families_(families),
      config_(std::move(config)),
      log_file_(nullptr, &std::fclose) {
  if (families_ == nullptr) fail("ConfigInvalid", "oracle needs a family table");
  descriptors_.reserve(families_->size());
  modal_.reserve(families_->size());
  for (const BasicFamily& fam : *families_) {
    FamilyDescriptor d;
    d.id = fam.spec().id;
    d.arc_nodes = fam.spec().arc_nodes;
    d.t_lo = fam.spec().t_lo;
    d.t_hi = fam.spec().t_hi;
    d.member_count = fam.spec().member_count;
    d.time_points = fam.spec().time_points;
    descriptors_.push_back(std::move(d));

    std::vector<ModalSource> prepared;
    prepared.reserve(fam.member_count());
    for (int k = 0; k < fam.member_count(); ++k) {
      prepared.push_back(model_->prepare(fam.member(k)));
    }
    modal_.push_back(std::move(prepared));
  }
  for (std::size_t i = 0; i < descriptors_.size(); ++i) {
    if (descriptors_[i].id != static_cast<int>(i)) {
      fail("ConfigInvalid", "family ids must be dense and ordered");
    }
  }
  if (!config_.log_path.empty()) {
    log_file_.reset(std::fopen(config_.log_path.c_str(), "w"));
    if (!log_file_) fail("ConfigInvalid", "cannot open oracle log " + config_.log_path);
  }
}

Oracle::~Oracle() = default;

void Oracle::validate(const AdmissibleQuery& q) const {
  if (q.t < config_.t_min) {
    fail("InadmissibleQuery", "evaluation time " + vblab::to_string(q.t) +
                                  " is below t_min " + vblab::to_string(config_.t_min));
  }
  struct Span {
    Rational lo, hi;
    std::size_t item;
  };
  std::vector<Span> spans;
  spans.reserve(q.items.size());
  for (std::size_t j = 0; j < q.items.size(); ++j) {
    const QueryItem& it = q.items[j];
    if (it.family < 0 || it.family >= static_cast<int>(descriptors_.size())) {
      fail("UnknownMember", "unknown family id " + std::to_string(it.family));
    }
    const FamilyDescriptor& fd = descriptors_[it.family];
    if (it.member < 0 || it.member >= fd.member_count) {
      std::ostringstream os;
      os << "family " << it.family << " has no member " << it.member;
      fail("UnknownMember", os.str());
    }
    if (it.shift < 0) {
      fail("InadmissibleQuery", "negative time shift " + vblab::to_string(it.shift));
    }
    Span s{fd.t_lo - it.shift, fd.t_hi - it.shift, j};
    if (s.lo <= -config_.tau_origin) {
      fail("InadmissibleQuery",
           "shifted support starts at or before the global origin -tau");
    }
    spans.push_back(std::move(s));
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return a.lo < b.lo;
  });
  for (std::size_t j = 0; j + 1 < spans.size(); ++j) {
    // Closed intervals: touching endpoints are rejected.
    if (!(spans[j].hi < spans[j + 1].lo)) {
      const QueryItem& a = q.items[spans[j].item];
      const QueryItem& b = q.items[spans[j + 1].item];
      std::ostringstream os;
      os << "shifted supports overlap: item (family " << a.family << ", member " << a.member
         << ", shift " << vblab::to_string(a.shift) << ") and item (family " << b.family
         << ", member " << b.member << ", shift " << vblab::to_string(b.shift) << ")";
      fail("InadmissibleQuery", os.str());
    }
  }
}

double Oracle::evaluate(const AdmissibleQuery& q) const {
  std::vector<SourceItem> items;
  items.reserve(q.items.size());
  for (const QueryItem& it : q.items) {
    items.push_back({&modal_[it.family][it.member], to_double(it.shift), 1.0});
  }
  return model_->energy(items, to_double(q.t));
}

void Oracle::record(const AdmissibleQuery& q, double energy) const {
  std::uint64_t count = log_.count_.fetch_add(1) + 1;
  if (config_.max_queries >= 0 && count > static_cast<std::uint64_t>(config_.max_queries)) {
    fail("QueryBudgetExceeded",
         "oracle budget of " + std::to_string(config_.max_queries) + " queries exhausted");
  }
  if (!config_.keep_records && !log_file_) return;
  std::lock_guard<std::mutex> lock(io_mutex_);
  if (config_.keep_records) log_.records_.push_back({q, energy});
  if (log_file_) {
    std::string line = "{\"items\":[";
    for (std::size_t j = 0; j < q.items.size(); ++j) {
      if (j) line += ",";
      line += "{\"family\":" + std::to_string(q.items[j].family) +
              ",\"member\":" + std::to_string(q.items[j].member) + ",\"shift\":\"" +
              vblab::to_string(q.items[j].shift) + "\"}";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12e", energy);
    line += "],\"t\":\"" + vblab::to_string(q.t) + "\",\"energy\":" + buf + "}\n";
    std::fputs(line.c_str(), log_file_.get());
  }
}

double Oracle::measure(const AdmissibleQuery& q) const {
  validate(q);
  double energy = evaluate(q);
  record(q, energy);
  return energy;
}

std::vector<double> Oracle::measure_series(const std::vector<QueryItem>& items,
                                           const std::vector<Rational>& times) const {
  std::vector<double> out;
  out.reserve(times.size());
  for (const Rational& t : times) {
    AdmissibleQuery q{items, t};
    validate(q);
    double energy = evaluate(q);
    record(q, energy);
    out.push_back(energy);
  }
  return out;
}

}  // namespace vblab
