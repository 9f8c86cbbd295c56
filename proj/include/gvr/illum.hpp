// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gvr/core.hpp"
#include "gvr/field.hpp"

namespace gvr {

/// Camera-to-world pose.
struct CameraPose {
  Mat3 rot = Mat3::Identity();
  Vec3 origin = Vec3::Zero();
};

/// Flood illuminator: super-Gaussian cone, rigidly mounted on the camera.
/// rot/trans are the camera-frame mounting transform; the emitter sits at
/// o_i = o_c + R_cw * trans and its optical axis is R_cw * R(rot) * +z.
struct IlluminatorModel {
  double eta = 1.0;                  // peak intensity scale
  Vec2 mean = Vec2::Zero();          // Xi, rad
  Vec2 sigma = Vec2(0.3, 0.3);       // Omega, rad, > 0
  Vec2 order = Vec2(1.0, 1.0);       // Theta, >= 1
  Vec3 rot = Vec3::Zero();           // axis-angle mounting rotation
  Vec3 trans = Vec3::Zero();         // mounting offset, m

  void validate() const {
    if (!(eta >= 0.0)) throw ConfigError("illuminator: eta must be >= 0");
    if (!(sigma.x() > 0.0) || !(sigma.y() > 0.0))
      throw ConfigError("illuminator: sigma components must be > 0");
    if (order.x() < 1.0 || order.y() < 1.0)
      throw ConfigError("illuminator: order components must be >= 1");
  }
};

/// iota = eta * exp(-sum_a ((gamma_a - Xi_a)^2 / (2 Omega_a^2))^Theta_a).
double coneIntensity(const IlluminatorModel& m, const Vec2& gamma);

struct ConeEval {
  double iota = 0.0;
  double d_eta = 0.0;
  Vec2 d_gamma = Vec2::Zero();
  Vec2 d_mean = Vec2::Zero();
  Vec2 d_sigma = Vec2::Zero();
  Vec2 d_order = Vec2::Zero();
};

ConeEval coneIntensityGrad(const IlluminatorModel& m, const Vec2& gamma);

struct IllumRay {
  Vec3 origin = Vec3::Zero();  // o_i
  Vec3 dir = Vec3::Zero();     // omega, unit, from illuminator toward x
  double dist = 0.0;           // l_i
  Vec2 gamma = Vec2::Zero();   // per-axis angular displacement from the axis
};

Vec3 illuminatorOrigin(const IlluminatorModel& m, const CameraPose& pose);
/// World rotation of the illuminator frame (+z = optical axis).
Mat3 illuminatorFrame(const IlluminatorModel& m, const CameraPose& pose);

/// Geometry from the emitter to scene point x. gamma decomposes the
/// direction in the illuminator frame as (atan2(vx,vz), atan2(vy,vz)).
/// Throws NumericError when x coincides with the emitter.
IllumRay illuminatorRay(const IlluminatorModel& m, const CameraPose& pose, const Vec3& x);

/// Convenience overload for an identity camera pose (collocated checks).
IllumRay illuminatorRay(const IlluminatorModel& m, const Vec3& camera_origin,
                        const Vec3& x);

// ---------------------------------------------------------------------------
// Shadow transmittance
// ---------------------------------------------------------------------------

struct ShadowConfig {
  /// Node spacing along the segment, meters; <= 0 derives it from the grid
  /// (one minimum voxel edge).
  double step = 0.0;
  int min_samples = 32;
  int max_samples = 2048;
  /// Endpoint clip, meters: the segment stops this far before x so surface
  /// samples are not occluded by their own density shell.
  double bias = 0.25;
  /// Optical depth at which marching stops (transmittance below 2e-16).
  double tau_cutoff = 36.0;
};

/// Node layout shared by the forward march and its adjoint.
struct ShadowNodes {
  int n = 0;
  double dl = 0.0;
  double usable = 0.0;  // segment length after the endpoint clip
};
ShadowNodes shadowNodeLayout(const SceneGrid& grid, const ShadowConfig& cfg,
                             double segment_len);

/// psi = exp(-sum sigma_m dl) with deterministic midpoint nodes on the
/// segment from o_i to x (clipped by bias). 1 when unobstructed.
double shadowTransmittance(const SceneGrid& grid, const Vec3& o_i, const Vec3& x,
                           const ShadowConfig& cfg);

/// Contract variant with n stratified nodes on the unclipped segment; jitter
/// comes from the RNG key (one uniform per stratum). Used by tests and by
/// callers that want the stochastic estimator.
double shadowTransmittanceSampled(const SceneGrid& grid, const Vec3& o_i, const Vec3& x,
                                  int n_samples, const RngKey& key);

}  // namespace gvr
