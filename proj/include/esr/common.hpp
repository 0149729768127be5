#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace esr {

// Error categories; mirrored by the C API status codes.
enum class ErrorCode {
  invalid_argument,
  io,
  parse,
  validation,
  numeric,
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

// Deterministic, platform-independent RNG (splitmix64-seeded xoshiro256**).
// std::uniform_*_distribution is implementation-defined, so all sampling in
// the toolkit goes through this.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  uint64_t u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform integer in [0, bound) by rejection.
  uint64_t below(uint64_t bound) {
    if (bound == 0) fail(ErrorCode::invalid_argument, "Rng::below: bound 0");
    const uint64_t threshold = (~bound + 1) % bound;
    for (;;) {
      const uint64_t r = u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform in [0, 1) with 53 bits.
  double real() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * real() - 1.0;
      v = 2.0 * real() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Standard Gumbel(0,1) perturbation.
  double gumbel() {
    double u = real();
    if (u <= 0.0) u = 1e-300;
    return -std::log(-std::log(u));
  }

  // Draws an index from an unnormalized nonnegative weight vector.
  size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0)
      fail(ErrorCode::numeric, "Rng::categorical: nonpositive total weight");
    double r = real() * total;
    for (size_t i = 0; i + 1 < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return i;
    }
    return weights.size() - 1;
  }

  // Derives an independent stream, e.g. one per bootstrap replicate.
  Rng fork(uint64_t stream) {
    Rng r;
    r.state_[0] = state_[0] ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    r.state_[1] = state_[1] + 0xbf58476d1ce4e5b9ULL * (stream + 2);
    r.state_[2] = state_[2] ^ rotl(stream + 0x94d049bb133111ebULL, 23);
    r.state_[3] = state_[3] + rotl(stream, 41) + 1;
    r.u64();
    r.u64();
    return r;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Formats a double with enough digits to round-trip IEEE 754 exactly.
std::string format_g17(double v);

std::vector<std::string> split(const std::string& s, char sep);
std::vector<std::string> split_ws(const std::string& s);
std::string trim(const std::string& s);
std::string lowercased(const std::string& s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

// FNV-1a, used to stamp configs into run logs.
uint64_t fnv1a(const std::string& s);

}  // namespace esr
