#include "fmbench/common.hpp"

#include <cmath>
#include <numbers>

namespace fmbench {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::data: return "data";
    case ErrorKind::shape: return "shape";
    case ErrorKind::empty_mask: return "empty-mask";
    case ErrorKind::empty_region: return "empty-region";
    case ErrorKind::label: return "label";
    case ErrorKind::no_event: return "no-event";
    case ErrorKind::undefined_pairs: return "undefined-pairs";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::divergence: return "optimization-divergence";
    case ErrorKind::insufficient_overlap: return "insufficient-overlap";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::class_error: return "class";
    case ErrorKind::coverage: return "coverage";
    case ErrorKind::split_leakage: return "split-leakage";
    case ErrorKind::support: return "support";
    case ErrorKind::restriction: return "restriction";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::uint64_t SplitMix64::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::config, "SplitMix64::below called with n = 0");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next();
  while (x >= limit) x = next();
  return x % n;
}

double SplitMix64::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  SplitMix64 g(a ^ (b * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
  g.next();
  return g.next();
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

std::uint64_t hash_string(std::string_view s) {
  // FNV-1a 64
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace fmbench
