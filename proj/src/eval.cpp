// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/eval.hpp"

#include <algorithm>

namespace gvr {

DepthMetrics depthMetrics(const Image& pred, const Image& gt, const Image& mask) {
  if (pred.width != gt.width || pred.height != gt.height || pred.width != mask.width ||
      pred.height != mask.height)
    throw DataError("depth metrics: image shapes differ");
  DepthMetrics m;
  double se = 0, ae = 0, rd = 0;
  int d1 = 0, d2 = 0, d3 = 0;
  const size_t n = pred.px.size();
  for (size_t i = 0; i < n; ++i) {
    if (mask.px[i] <= 0.f) continue;
    const double p = pred.px[i];
    const double g = gt.px[i];
    ++m.count;
    const double e = p - g;
    se += e * e;
    ae += std::abs(e);
    rd += std::abs(e) / g;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) ++d1;
    if (ratio < 1.25 * 1.25) ++d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3;
  }
  if (m.count == 0) throw DataError("depth metrics: empty mask");
  m.rmse = std::sqrt(se / m.count);
  m.mae = ae / m.count;
  m.ard = rd / m.count;
  m.delta1 = double(d1) / m.count;
  m.delta2 = double(d2) / m.count;
  m.delta3 = double(d3) / m.count;
  return m;
}

OccupancyMetrics occupancyMetrics(const SceneGrid& pred, const SceneGrid& gt,
                                  double sigma_threshold, double voxel_m) {
  Aabb common;
  common.lo = pred.bounds.lo.cwiseMax(gt.bounds.lo);
  common.hi = pred.bounds.hi.cwiseMin(gt.bounds.hi);
  if ((common.extent().array() <= 0.0).any())
    throw DataError("occupancy metrics: grids have disjoint bounds");

  const Vec3 ext = common.extent();
  const Vec3i n(std::max(1, int(std::ceil(ext.x() / voxel_m))),
                std::max(1, int(std::ceil(ext.y() / voxel_m))),
                std::max(1, int(std::ceil(ext.z() / voxel_m))));

  // Max density over a fixed 3^3 sub-lattice per voxel, resolution-agnostic.
  auto occupied = [&](const SceneGrid& g, int ix, int iy, int iz) {
    const Vec3 lo = common.lo + Vec3(ix * voxel_m, iy * voxel_m, iz * voxel_m);
    double peak = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          const Vec3 p = lo + Vec3((a + 0.5) / 3.0, (b + 0.5) / 3.0, (c + 0.5) / 3.0) * voxel_m;
          peak = std::max(peak, g.densityAt(p));
          if (peak > sigma_threshold) return true;
        }
    return false;
  };

  long long inter = 0, p_only = 0, g_only = 0;
  for (int iz = 0; iz < n.z(); ++iz)
    for (int iy = 0; iy < n.y(); ++iy)
      for (int ix = 0; ix < n.x(); ++ix) {
        const bool op = occupied(pred, ix, iy, iz);
        const bool og = occupied(gt, ix, iy, iz);
        if (op && og)
          ++inter;
        else if (op)
          ++p_only;
        else if (og)
          ++g_only;
      }
  OccupancyMetrics out;
  const long long p_tot = inter + p_only, g_tot = inter + g_only;
  const long long uni = inter + p_only + g_only;
  out.precision = p_tot > 0 ? double(inter) / p_tot : 0.0;
  out.recall = g_tot > 0 ? double(inter) / g_tot : 0.0;
  out.iou = uni > 0 ? double(inter) / uni : 0.0;
  return out;
}

double psnr(const Image& pred, const Image& gt, double peak) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw DataError("psnr: image shapes differ");
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be > 0");
  double se = 0.0;
  for (size_t i = 0; i < pred.px.size(); ++i) {
    const double e = double(pred.px[i]) - double(gt.px[i]);
    se += e * e;
  }
  const double mse = se / double(pred.px.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw DataError("ssim: image shapes differ");
  constexpr int kHalf = 5;  // 11x11 window
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  double kernel[2 * kHalf + 1];
  double ksum = 0.0;
  for (int i = -kHalf; i <= kHalf; ++i) {
    kernel[i + kHalf] = std::exp(-0.5 * i * i / (kSigma * kSigma));
    ksum += kernel[i + kHalf];
  }
  for (double& k : kernel) k /= ksum;

  const int w = pred.width, h = pred.height;
  if (w < 2 * kHalf + 1 || h < 2 * kHalf + 1)
    throw DataError("ssim: image smaller than the filter window");

  // Separable Gaussian of the five moment maps, valid region only.
  auto blur = [&](const std::vector<double>& src, std::vector<double>& dst) {
    std::vector<double> tmp(size_t(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = kHalf; x < w - kHalf; ++x) {
        double acc = 0.0;
        for (int i = -kHalf; i <= kHalf; ++i) acc += kernel[i + kHalf] * src[size_t(y) * w + x + i];
        tmp[size_t(y) * w + x] = acc;
      }
    dst.assign(size_t(w) * h, 0.0);
    for (int y = kHalf; y < h - kHalf; ++y)
      for (int x = kHalf; x < w - kHalf; ++x) {
        double acc = 0.0;
        for (int i = -kHalf; i <= kHalf; ++i) acc += kernel[i + kHalf] * tmp[size_t(y + i) * w + x];
        dst[size_t(y) * w + x] = acc;
      }
  };

  const size_t n = size_t(w) * h;
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = pred.px[i];
    b[i] = gt.px[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab;
  blur(a, mu_a);
  blur(b, mu_b);
  blur(aa, m_aa);
  blur(bb, m_bb);
  blur(ab, m_ab);

  double acc = 0.0;
  long long cnt = 0;
  for (int y = kHalf; y < h - kHalf; ++y)
    for (int x = kHalf; x < w - kHalf; ++x) {
      const size_t i = size_t(y) * w + x;
      const double va = m_aa[i] - mu_a[i] * mu_a[i];
      const double vb = m_bb[i] - mu_b[i] * mu_b[i];
      const double cov = m_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2 * mu_a[i] * mu_b[i] + kC1) * (2 * cov + kC2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
      acc += num / den;
      ++cnt;
    }
  return acc / double(cnt);
}

}  // namespace gvr
