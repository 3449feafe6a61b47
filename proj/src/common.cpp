#include "vblab/common.hpp"

namespace vblab {

std::string to_string(const Rational& r) {
  std::string s = boost::multiprecision::numerator(r).str();
  if (boost::multiprecision::denominator(r) != 1) {
    s += "/" + boost::multiprecision::denominator(r).str();
  }
  return s;
}

Rational parse_rational(const std::string& text) {
  auto slash = text.find('/');
  try {
    if (slash == std::string::npos) {
      // Accept plain integers and decimal literals with exact scaling.
      auto dot = text.find('.');
      if (dot == std::string::npos) {
        return Rational(boost::multiprecision::cpp_int(text));
      }
      std::string digits = text.substr(0, dot) + text.substr(dot + 1);
      bool neg = !digits.empty() && digits[0] == '-';
      if (neg) digits.erase(digits.begin());
      // Strip leading zeros so cpp_int does not read the digits as octal.
      std::size_t first = digits.find_first_not_of('0');
      digits = (first == std::string::npos) ? "0" : digits.substr(first);
      boost::multiprecision::cpp_int num(digits);
      if (neg) num = -num;
      boost::multiprecision::cpp_int den = 1;
      for (std::size_t i = 0; i < text.size() - dot - 1; ++i) den *= 10;
      Rational r(num);
      r /= Rational(den);
      return r;
    }
    boost::multiprecision::cpp_int num(text.substr(0, slash));
    boost::multiprecision::cpp_int den(text.substr(slash + 1));
    if (den == 0) fail("ConfigInvalid", "rational with zero denominator: " + text);
    Rational r(num);
    r /= Rational(den);
    return r;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail("ConfigInvalid", "cannot parse rational: " + text);
  }
}

double GaussianStream::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 strictly positive to keep log finite.
  double u1 = 0.0;
  do {
    u1 = (static_cast<double>(engine_()) + 1.0) /
         (static_cast<double>(engine_.max()) + 2.0);
  } while (u1 <= 0.0);
  double u2 = static_cast<double>(engine_()) / (static_cast<double>(engine_.max()) + 1.0);
  double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(kTwoPi * u2);
  have_spare_ = true;
  return mag * std::cos(kTwoPi * u2);
}

std::uint64_t GaussianStream::derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace vblab
