#pragma once

#include "vblab/forward.hpp"
#include "vblab/sources.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace vblab {

/// One summand of an admissible measurement: family member shifted by T >= 0
/// (the shifted source is F(x, t + T), supported on [t_lo - T, t_hi - T]).
struct QueryItem {
  int family = 0;
  int member = 0;
  Rational shift;
};

/// Multiset of shifted members plus the evaluation time. Valid when the
/// closed shifted supports are pairwise strictly disjoint, start after the
/// global origin -tau, and t >= t_min.
struct AdmissibleQuery {
  std::vector<QueryItem> items;
  Rational t;
};

struct OracleConfig {
  Rational t_min = Rational(0);
  Rational tau_origin = Rational(400);  // supports must start after -tau
  std::int64_t max_queries = -1;        // negative: unlimited
  std::string log_path;                 // optional JSON-lines query log
  bool keep_records = false;
};

struct QueryRecord {
  AdmissibleQuery query;
  double energy = 0.0;
};

class QueryLog {
 public:
  std::uint64_t count() const { return count_.load(); }
  const std::vector<QueryRecord>& records() const { return records_; }

 private:
  friend class Oracle;
  std::atomic<std::uint64_t> count_{0};
  std::vector<QueryRecord> records_;
};

/// Public family metadata: everything the reconstruction side is allowed to
/// know about a basic-experiment family (its box and its size, not its
/// member functions).
struct FamilyDescriptor {
  int id = 0;
  std::vector<int> arc_nodes;
  Rational t_lo, t_hi;
  int member_count = 0;
  int time_points = 0;
};

/// The measurement firewall. Owns the hidden spectral model and the sampled
/// family members; exposes exactly the admissible energy measurements.
class Oracle {
 public:
  Oracle(const SpectralModel& model, const std::vector<BasicFamily>* families,
         OracleConfig config = {});
  ~Oracle();

  Oracle(const Oracle&) = delete;
  Oracle& operator=(const Oracle&) = delete;

  const std::vector<FamilyDescriptor>& families() const { return descriptors_; }
  const OracleConfig& config() const { return config_; }

  /// Energy of the summed shifted sources at time t (validated, logged).
  double measure(const AdmissibleQuery& q) const;

  /// Energies of one item template across several evaluation times.
  std::vector<double> measure_series(const std::vector<QueryItem>& items,
                                     const std::vector<Rational>& times) const;

  /// Admissibility validation without evaluation (order independent).
  void validate(const AdmissibleQuery& q) const;

  std::uint64_t query_count() const { return log_.count(); }
  const QueryLog& log() const { return log_; }

 private:
  double evaluate(const AdmissibleQuery& q) const;
  void record(const AdmissibleQuery& q, double energy) const;

  const SpectralModel* model_;
  const std::vector<BasicFamily>* families_;
  OracleConfig config_;
  std::vector<FamilyDescriptor> descriptors_;
  std::vector<std::vector<ModalSource>> modal_;  // per family, per member
  mutable QueryLog log_;
  mutable std::mutex io_mutex_;
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> log_file_;
};

}  // namespace vblab
