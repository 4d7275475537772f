#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fmbench {

enum class ErrorKind {
  format,
  data,
  shape,
  empty_mask,
  empty_region,
  label,
  no_event,
  undefined_pairs,
  degenerate,
  divergence,
  insufficient_overlap,
  protocol,
  alignment,
  class_error,
  coverage,
  split_leakage,
  support,
  restriction,
  config,
  io,
};

std::string_view error_kind_name(ErrorKind kind);

// Every failure in the library surfaces as this exception; kind() lets callers
// and tests discriminate without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// SplitMix64. Platform-independent; all seeded randomness in the project
// flows through this generator so results are reproducible across machines.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Standard normal via Box-Muller (no cached second value).
  double normal();

 private:
  std::uint64_t state_;
};

// Order-sensitive mixing of seeds and indices into a child seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);
std::uint64_t hash_string(std::string_view s);

}  // namespace fmbench
