// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gvr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec3i = Eigen::Vector3i;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Speed of light in m/ns. Internal times are nanoseconds, distances meters.
inline constexpr double kSpeedOfLight = 0.299792458;

// Error taxonomy; the CLI maps these to distinct exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Axis-aligned box
// ---------------------------------------------------------------------------

/// Row-major float image, row 0 at the top.
struct Image {
  int width = 0, height = 0;
  std::vector<float> px;

  void resize(int w, int h, float v = 0.f) {
    width = w;
    height = h;
    px.assign(size_t(w) * h, v);
  }
  float& at(int x, int y) { return px[size_t(y) * width + x]; }
  float at(int x, int y) const { return px[size_t(y) * width + x]; }
};

struct Aabb {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return (hi - lo).norm(); }

  /// Clips the parametric segment [t0,t1] of origin + t*dir against the box.
  /// Returns false when the segment misses entirely.
  bool clipSegment(const Vec3& origin, const Vec3& dir, double& t0, double& t1) const {
    for (int a = 0; a < 3; ++a) {
      const double d = dir[a];
      if (std::abs(d) < 1e-300) {
        if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
        continue;
      }
      double ta = (lo[a] - origin[a]) / d;
      double tb = (hi[a] - origin[a]) / d;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Counter-based RNG
//
// All stochastic choices in the engine are keyed by (seed, stream, indices)
// so that results do not depend on thread scheduling or evaluation order.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hashCombine(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2) + splitmix64(b)));
}

/// Hierarchical RNG key. Cheap to copy; sub() derives an independent stream.
struct RngKey {
  uint64_t state = 0;

  RngKey(uint64_t seed = 0) : state(splitmix64(seed ^ 0x51a2b3c4d5e6f708ULL)) {}  // NOLINT
  RngKey sub(uint64_t id) const {
    RngKey k;
    k.state = hashCombine(state, id);
    return k;
  }
  /// Uniform in [0,1) for counter i, never exactly 1.
  double uniform(uint64_t i) const {
    return double(hashCombine(state, i) >> 11) * 0x1.0p-53;
  }
  /// Standard normal via Box-Muller on counters (2i, 2i+1).
  double normal(uint64_t i) const {
    const double u1 = std::max(uniform(2 * i), 0x1.0p-60);
    const double u2 = uniform(2 * i + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  uint64_t bits(uint64_t i) const { return hashCombine(state, i); }
};

// ---------------------------------------------------------------------------
// Deterministic accumulation
//
// Gradient and loss sums accumulate in 64-bit fixed point. Integer addition
// commutes, so the reduction is bit-exact for any thread count or schedule.
// Resolution is 2^-34 with range +-5.4e8 per slot.
// ---------------------------------------------------------------------------

class FixedAccum {
 public:
  static constexpr double kScale = 17179869184.0;  // 2^34

  FixedAccum() = default;
  explicit FixedAccum(size_t n) { resize(n); }

  void resize(size_t n) {
    size_ = n;
    slots_ = std::make_unique<std::atomic<int64_t>[]>(n);
    zero();
  }
  void zero() {
    for (size_t i = 0; i < size_; ++i) slots_[i].store(0, std::memory_order_relaxed);
  }
  void add(size_t i, double v) {
    const double scaled = v * kScale;
    if (!(std::abs(scaled) < 9.2e18)) {
      overflow_.store(true, std::memory_order_relaxed);
      return;
    }
    slots_[i].fetch_add(llround(scaled), std::memory_order_relaxed);
  }
  double read(size_t i) const {
    return double(slots_[i].load(std::memory_order_relaxed)) / kScale;
  }
  size_t size() const { return size_; }
  bool overflowed() const { return overflow_.load(std::memory_order_relaxed); }

 private:
  static int64_t llround(double v) { return static_cast<int64_t>(std::llround(v)); }
  size_t size_ = 0;
  std::unique_ptr<std::atomic<int64_t>[]> slots_;
  std::atomic<bool> overflow_{false};
};

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0,n). Work is split into chunks whose boundaries do
/// not depend on the thread count, and all shared accumulation in this code
/// base is order-independent, so results match across thread counts.
void parallelFor(size_t n, int threads, const std::function<void(size_t)>& fn);

/// Resolves a requested thread count (0 = hardware concurrency).
int resolveThreads(int requested);

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

/// Rodrigues' formula: axis-angle (3-vector, radians) to rotation matrix.
Mat3 axisAngleToMatrix(const Vec3& r);

/// d(R(r) v)/dr_i as a matrix column triple: out[i] = dR/dr_i * v.
/// Uses the closed-form derivative of the exponential map with a stable
/// small-angle branch.
void rotateVectorJacobian(const Vec3& r, const Vec3& v, Mat3& jac);

// ---------------------------------------------------------------------------
// Small math helpers
// ---------------------------------------------------------------------------

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0))); }
inline double softplusGrad(double x) { return 1.0 / (1.0 + std::exp(-x)); }
/// Inverse of softplus; input must be > 0.
inline double softplusInv(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(std::max(y, 1e-300)));
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace gvr
