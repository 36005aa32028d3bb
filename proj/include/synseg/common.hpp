#ifndef SYNSEG_COMMON_HPP
#define SYNSEG_COMMON_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace synseg {

using Vec3i = std::array<int, 3>;
using Vec3d = std::array<double, 3>;

inline std::int64_t volume_of(const Vec3i& s) {
  return static_cast<std::int64_t>(s[0]) * s[1] * s[2];
}

inline std::string shape_str(const Vec3i& s) {
  return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

// --- error types -----------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SYNSEG_DEFINE_ERROR(NAME)                                   \
  struct NAME : Error {                                             \
    explicit NAME(const std::string& msg = #NAME) : Error(msg) {}   \
  }

SYNSEG_DEFINE_ERROR(UnreadableFile);
SYNSEG_DEFINE_ERROR(ShapeMismatch);
SYNSEG_DEFINE_ERROR(NonBinaryLabels);
SYNSEG_DEFINE_ERROR(TooFewCases);
SYNSEG_DEFINE_ERROR(DegenerateGrid);
SYNSEG_DEFINE_ERROR(IOFailure);
SYNSEG_DEFINE_ERROR(NoTrainingCases);
SYNSEG_DEFINE_ERROR(NoForegroundVoxels);
SYNSEG_DEFINE_ERROR(BudgetInfeasible);
SYNSEG_DEFINE_ERROR(ShapeIncompatible);
SYNSEG_DEFINE_ERROR(DimensionMismatch);
SYNSEG_DEFINE_ERROR(NonFiniteLoss);
SYNSEG_DEFINE_ERROR(EmptySurface);
SYNSEG_DEFINE_ERROR(MissingPrediction);
SYNSEG_DEFINE_ERROR(InvalidArgument);

#undef SYNSEG_DEFINE_ERROR

// --- small numeric helpers -------------------------------------------------

// Percentile with linear interpolation between order statistics,
// q in [0,1]. Input need not be sorted.
inline double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of empty set");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// FNV-1a 64-bit, used for artifact provenance hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace synseg

#endif
