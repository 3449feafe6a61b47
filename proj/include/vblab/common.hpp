#pragma once

#include <Eigen/Dense>

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vblab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Error category used across the library; `code` carries the short
/// machine-readable name (e.g. "CocycleViolation").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
  throw Error(code, msg);
}

/// Exact rational time arithmetic for the query schema. Shifts and
/// evaluation times are validated on rationals and only converted to
/// double at the evaluation boundary.
using Rational = boost::multiprecision::cpp_rational;

inline Rational rational_of(std::int64_t num, std::int64_t den = 1) {
  Rational r(num);
  r /= Rational(den);
  return r;
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

std::string to_string(const Rational& r);
Rational parse_rational(const std::string& text);

/// Deterministic normal sampler (explicit Box-Muller on mt19937_64 so the
/// stream does not depend on the standard library's distribution choices).
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double next();

  /// Stable per-member seed derivation (splitmix64 over seed and index).
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Relative difference |a-b| / max(|a|,|b|,floor).
inline double rel_diff(double a, double b, double floor = 1e-300) {
  double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

}  // namespace vblab
