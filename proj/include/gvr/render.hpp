// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "gvr/field.hpp"
#include "gvr/gating.hpp"
#include "gvr/illum.hpp"

namespace gvr {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit
  double near = 1e-4;
  double far = 1e9;
};

/// Returned when a ray carries too little opacity to define a surface.
inline constexpr double kNoSurfaceDepth = -1.0;

struct RenderConfig {
  int n_samples = 64;        // quadrature samples per camera ray
  int n_proposal_bins = 64;  // piecewise-constant PDF resolution
  double pdf_floor = 0.1;    // uniform mass mixed into the proposal PDF
  ShadowConfig shadow;
  AttenuationModel attenuation;
  bool use_shadow = true;    // ablation switch: off renders with psi = 1
  double normal_eps = 1e-8;  // degenerate-gradient threshold
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Quadrature points along a ray. Positions are strictly increasing;
/// delta uses forward differences with the last spacing repeated.
struct SampleSet {
  std::vector<double> l;      // camera distances
  std::vector<double> delta;  // spacings
  RaySegment segment;
  bool empty() const { return l.empty(); }
};

/// Stratified inverse-CDF draws from the proposal PDF. One uniform jitter
/// per stratum comes from the key, so the set is reproducible and
/// schedule-independent.
SampleSet sampleCameraRay(const ProposalGrid& proposal, const Ray& ray, int n_samples,
                          int n_bins, double pdf_floor, const RngKey& key);

/// Discrete transmittance weights:
///   w_j = exp(-sum_{q<j} sigma_q delta_q) * (1 - exp(-sigma_j delta_j)).
/// trans gets N+1 entries; trans[N] is the leftover transmittance.
void quadratureWeights(const std::vector<double>& sigmas, const std::vector<double>& deltas,
                       std::vector<double>& weights, std::vector<double>& trans);

// ---------------------------------------------------------------------------
// Forward rendering
// ---------------------------------------------------------------------------

struct SceneContext {
  const SceneGrid& grid;
  const ProposalGrid& proposal;
  const GatingParams& gating;
  const IlluminatorModel& illum;
  const RenderConfig& config;
};

/// Per-sample intermediates retained for the adjoint pass.
struct SampleRec {
  double l = 0, delta = 0;
  Vec3 x = Vec3::Zero();
  TriStencil sten_density;
  TriStencil sten_app;
  double raw = 0, sigma = 0, sp = 0;  // sp = d(sigma)/d(raw)
  double w = 0, trans = 0, trans_step = 1.0;  // trans_step = exp(-sigma*delta)
  // Illuminator geometry
  double l_i = 0;
  Vec3 omega = Vec3::Zero();
  Vec3 v_loc = Vec3::Zero();
  Vec2 gamma = Vec2::Zero();
  ConeEval cone;
  // Surface response
  Vec3 g = Vec3::Zero();
  double g_norm = 0;
  bool degenerate = true;
  bool normal_valid = false;  // normal path evaluated at all
  double cos_term = 1.0;
  double n_dot_d = 0.0;  // density-gradient normal dotted with the view dir
  double alpha = 0, alpha_logit = 0;
  bool alpha_valid = false;
  double lambda = 0, amb_pre = 0;
  bool amb_inside = false;
  // Gating
  double z_total = 0;
  std::array<ProfileEval, GatingParams::kSlices> prof;
  double beta = 1.0, dbeta_dz = 0.0;
  bool any_support = false;
  // Shadow
  double psi = 1.0, tau = 0.0;
  bool psi_computed = false;
};

/// Everything the backward pass and the loss layer need about one ray.
struct RayRecord {
  Ray ray;
  CameraPose pose;
  RngKey sample_key;
  std::vector<SampleRec> samples;
  double trans_end = 1.0;
  double weight_sum = 0.0;
  Vec3 illum_origin = Vec3::Zero();
  Mat3 illum_frame = Mat3::Identity();
  bool hit_bounds = false;
  // Non-smoothness proximity flags for the finite-difference suite.
  bool kink = false;
  uint32_t kink_reasons = 0;
  double yd[kShCount] = {0};  // view-direction basis, shared by all samples
};

enum KinkReason : uint32_t {
  kKinkProfile = 1u << 0,
  kKinkCosine = 1u << 1,
  kKinkNormalDegen = 1u << 2,
  kKinkAttenClamp = 1u << 3,
  kKinkBehindEmitter = 1u << 4,
  kKinkLossAbs = 1u << 5,
  kKinkWeightClamp = 1u << 6,
  kKinkShadowNodes = 1u << 7,
};

struct RayOptions {
  RngKey sample_key;
  bool need_psi_all = false;     // shadow loss wants psi at every sample
  bool need_normals_all = false; // normal loss wants normals at every sample
  bool need_alpha_all = false;   // reflectance regularizer
  double kink_margin_ns = 5e-3;  // profile-boundary proximity, ns
};

struct RayOutputs {
  std::array<double, GatingParams::kSlices> intensity{};  // gated slices
  double passive = 0.0;
  std::array<double, GatingParams::kSlices> active_sum{};
  double passive_sum = 0.0;  // shared by all slices, includes background
  double depth = kNoSurfaceDepth;
  double weight_sum = 0.0;
  double expected_shadow = 0.0;  // sum_j w_j psi_j
  double trans_end = 1.0;
};

/// Renders all three gated slices plus the passive slice for one ray.
/// Identities guaranteed exactly: intensity[k] = active_sum[k] + passive_sum
/// + dark_k and passive = passive_sum + dark_passive.
RayOutputs renderRay(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                     const RayOptions& opts, RayRecord* rec = nullptr);

// Spec-facing wrappers.
double renderGated(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                   int k, const RngKey& key);
double renderPassive(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                     const RngKey& key);
double renderDepth(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                   const RngKey& key);

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

struct PinholeCamera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
};

/// World ray through pixel center (px + 0.5, py + 0.5); +z forward.
Ray pixelRay(const PinholeCamera& cam, const CameraPose& pose, int px, int py,
             double near = 1e-4, double far = 1e9);

}  // namespace gvr
