#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "mde/common.hpp"

namespace mde {

// Deterministic random source. Draw helpers are implemented over the raw
// 64-bit stream (not std distributions) so that sequences are identical
// across standard libraries and serialize/restore is bit-exact.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Inclusive on both ends.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    MDE_CHECK(lo <= hi, ParameterError, "uniform_int: empty range [", lo, ",", hi, "]");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(eng_() % span);
  }

  // Box-Muller; stateless per call so serialization stays a pure engine dump.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  [[nodiscard]] static Rng deserialize(const std::string& text) {
    Rng r;
    std::istringstream is(text);
    is >> r.eng_;
    MDE_CHECK(!is.fail(), ParseError, "malformed rng state");
    return r;
  }

  bool operator==(const Rng& o) const { return eng_ == o.eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace mde
