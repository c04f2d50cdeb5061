#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfm {

enum class ErrorCode {
  ZeroPatch,
  ShapeMismatch,
  AntipodalPatch,
  NotTangent,
  OutOfRange,
  NonFinite,
  EmptyBatch,
  EmptyDataset,
  UnknownClass,
  BaseMismatch,
  TooFewSamples,
  Config,
  Io,
  FormatVersionMismatch,
  ChecksumMismatch,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

/// Dense row-major matrix of doubles. Rows are patches, columns latent dims.
struct Array2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Array2D() = default;
  Array2D(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
  double& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
  size_t size() const { return v.size(); }

  bool same_shape(const Array2D& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Array2D& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

// SplitMix64. Used to derive per-worker and per-sample seeds from a base seed;
// the derivation is part of the reproducibility contract (see README).
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr uint64_t mix_seed(uint64_t seed, uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x9E3779B97F4A7C15ull));
}

/// Deterministic random stream: mt19937_64 plus fixed-form transforms.
/// std::*_distribution is avoided on purpose; its output is implementation
/// defined, while this class produces the same stream for the same seed on
/// any conforming platform. State round-trips exactly through serialize().
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) {
    // Rejection to kill modulo bias; deterministic given the stream.
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= lim);
    return x % n;
  }

  /// Standard normal via Box-Muller (cosine branch only, so the stream
  /// advances by exactly two uniforms per call).
  double normal();

  void fill_normal(double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = normal();
  }

  std::string serialize() const;
  [[nodiscard]] static Rng deserialize(const std::string& s);

 private:
  std::mt19937_64 eng_;
};

/// Runs fn(begin, end) over a static contiguous partition of [0, n).
/// Results must go to disjoint slots; the partition depends only on n and
/// workers, never on scheduling.
void parallel_for(int64_t n, int workers, const std::function<void(int64_t, int64_t)>& fn);

int resolve_threads(int requested);  // 0 -> bounded hardware_concurrency

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const std::string& s);

/// 17-significant-digit formatting; round-trips doubles exactly through
/// strtod and is byte-stable for identical values.
std::string format_double(double x);
double parse_double(const std::string& s);

bool all_finite(const double* x, size_t n);

}  // namespace sfm
