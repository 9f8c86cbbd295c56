// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/core.hpp"

#include <algorithm>
#include <thread>

namespace gvr {

int resolveThreads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

void parallelFor(size_t n, int threads, const std::function<void(size_t)>& fn) {
  threads = resolveThreads(threads);
  if (n == 0) return;
  if (threads <= 1 || n == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  // Chunk boundaries depend only on n, never on the thread count.
  const size_t chunk = std::max<size_t>(1, (n + 255) / 256);
  const size_t num_chunks = (n + chunk - 1) / chunk;
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= num_chunks) return;
      const size_t begin = c * chunk;
      const size_t end = std::min(n, begin + chunk);
      for (size_t i = begin; i < end; ++i) fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(size_t(threads) - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

Mat3 axisAngleToMatrix(const Vec3& r) {
  const double theta = r.norm();
  if (theta < 1e-12) {
    Mat3 skew;
    skew << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
    return Mat3::Identity() + skew;
  }
  return Eigen::AngleAxisd(theta, r / theta).toRotationMatrix();
}

void rotateVectorJacobian(const Vec3& r, const Vec3& v, Mat3& jac) {
  // Gallego & Yezzi closed form:
  //   dR/dr_i = (r_i [r]x + [r x (I - R) e_i]x) / |r|^2 * R
  const Mat3 R = axisAngleToMatrix(r);
  const double theta2 = r.squaredNorm();
  auto skew = [](const Vec3& w) {
    Mat3 s;
    s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return s;
  };
  if (theta2 < 1e-16) {
    // lim dR/dr_i = [e_i]x
    for (int i = 0; i < 3; ++i) {
      Vec3 e = Vec3::Zero();
      e[i] = 1.0;
      jac.col(i) = e.cross(v);
    }
    return;
  }
  const Mat3 rx = skew(r);
  const Mat3 ImR = Mat3::Identity() - R;
  const Vec3 Rv = R * v;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = 1.0;
    const Mat3 dR = (r[i] * rx + skew(r.cross(ImR * e))) / theta2;
    jac.col(i) = dR * Rv;
  }
}

}  // namespace gvr
