// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/illum.hpp"

namespace gvr {

double coneIntensity(const IlluminatorModel& m, const Vec2& gamma) {
  double expo = 0.0;
  for (int a = 0; a < 2; ++a) {
    const double d = gamma[a] - m.mean[a];
    const double q = d * d / (2.0 * m.sigma[a] * m.sigma[a]);
    expo += std::pow(q, m.order[a]);
  }
  return m.eta * std::exp(-expo);
}

ConeEval coneIntensityGrad(const IlluminatorModel& m, const Vec2& gamma) {
  ConeEval out;
  double expo = 0.0;
  double dq[2], q[2], qp[2];  // q, q^Theta, d(q^Theta)/dq
  for (int a = 0; a < 2; ++a) {
    const double d = gamma[a] - m.mean[a];
    q[a] = d * d / (2.0 * m.sigma[a] * m.sigma[a]);
    dq[a] = d / (m.sigma[a] * m.sigma[a]);  // dq/dgamma = -dq/dXi
    const double th = m.order[a];
    qp[a] = q[a] > 0.0 ? th * std::pow(q[a], th - 1.0) : (th == 1.0 ? 1.0 : 0.0);
    expo += std::pow(q[a], th);
  }
  const double e = std::exp(-expo);
  out.iota = m.eta * e;
  out.d_eta = e;
  for (int a = 0; a < 2; ++a) {
    const double common = -out.iota * qp[a];
    out.d_gamma[a] = common * dq[a];
    out.d_mean[a] = -common * dq[a];
    out.d_sigma[a] = common * (-2.0 * q[a] / m.sigma[a]);
    // d(q^Theta)/dTheta = q^Theta ln q, with the q->0 limit taken as 0.
    const double qt = std::pow(q[a], m.order[a]);
    out.d_order[a] = q[a] > 0.0 ? -out.iota * qt * std::log(q[a]) : 0.0;
  }
  return out;
}

Vec3 illuminatorOrigin(const IlluminatorModel& m, const CameraPose& pose) {
  return pose.origin + pose.rot * m.trans;
}

Mat3 illuminatorFrame(const IlluminatorModel& m, const CameraPose& pose) {
  return pose.rot * axisAngleToMatrix(m.rot);
}

IllumRay illuminatorRay(const IlluminatorModel& m, const CameraPose& pose, const Vec3& x) {
  IllumRay r;
  r.origin = illuminatorOrigin(m, pose);
  const Vec3 e = x - r.origin;
  r.dist = e.norm();
  if (r.dist < 1e-12)
    throw NumericError("illuminator ray: target point coincides with the emitter");
  r.dir = e / r.dist;
  const Vec3 local = illuminatorFrame(m, pose).transpose() * r.dir;
  r.gamma = Vec2(std::atan2(local.x(), local.z()), std::atan2(local.y(), local.z()));
  return r;
}

IllumRay illuminatorRay(const IlluminatorModel& m, const Vec3& camera_origin,
                        const Vec3& x) {
  CameraPose pose;
  pose.origin = camera_origin;
  return illuminatorRay(m, pose, x);
}

ShadowNodes shadowNodeLayout(const SceneGrid& grid, const ShadowConfig& cfg,
                             double segment_len) {
  ShadowNodes out;
  out.usable = segment_len - cfg.bias;
  if (out.usable <= 0.0) return out;
  double step = cfg.step;
  if (step <= 0.0) {
    const Vec3 cell = grid.bounds.extent().cwiseQuotient(
        (grid.density_dims - Vec3i::Ones()).cast<double>());
    step = cell.minCoeff();
  }
  int n = int(std::ceil(out.usable / step));
  out.n = std::max(cfg.min_samples, std::min(cfg.max_samples, n));
  out.dl = out.usable / out.n;
  return out;
}

double shadowTransmittance(const SceneGrid& grid, const Vec3& o_i, const Vec3& x,
                           const ShadowConfig& cfg) {
  const Vec3 e = x - o_i;
  const double len = e.norm();
  const ShadowNodes nodes = shadowNodeLayout(grid, cfg, len);
  if (nodes.n == 0) return 1.0;
  const Vec3 dir = e / len;
  double tau = 0.0;
  for (int i = 0; i < nodes.n; ++i) {
    const double l = nodes.dl * (i + 0.5);
    tau += grid.densityAt(o_i + l * dir) * nodes.dl;
    if (tau > cfg.tau_cutoff) return 0.0;
  }
  return std::exp(-tau);
}

double shadowTransmittanceSampled(const SceneGrid& grid, const Vec3& o_i, const Vec3& x,
                                  int n_samples, const RngKey& key) {
  if (n_samples < 1) throw ConfigError("shadow transmittance: n_samples must be >= 1");
  const Vec3 e = x - o_i;
  const double len = e.norm();
  if (len <= 0.0) return 1.0;
  const Vec3 dir = e / len;
  const double dl = len / n_samples;
  double tau = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const double l = dl * (i + key.uniform(uint64_t(i)));
    tau += grid.densityAt(o_i + l * dir) * dl;
  }
  return std::exp(-tau);
}

}  // namespace gvr
