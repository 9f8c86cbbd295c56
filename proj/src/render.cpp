// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/render.hpp"

namespace gvr {

SampleSet sampleCameraRay(const ProposalGrid& proposal, const Ray& ray, int n_samples,
                          int n_bins, double pdf_floor, const RngKey& key) {
  SampleSet out;
  if (n_samples < 2) throw ConfigError("sampleCameraRay: n_samples must be >= 2");
  const ProposalWeights pw =
      proposalWeights(proposal, ray.origin, ray.dir, ray.near, ray.far, n_bins, pdf_floor);
  if (!pw.segment.valid) return out;
  out.segment = pw.segment;

  const double t0 = pw.segment.t0, t1 = pw.segment.t1;
  const double bin_w = (t1 - t0) / n_bins;
  out.l.resize(n_samples);
  out.delta.resize(n_samples);

  // Stratified inverse CDF; u is strictly increasing so positions are too
  // (the PDF floor keeps the CDF strictly monotone).
  int bin = 0;
  double cum = 0.0;  // CDF at the left edge of `bin`
  for (int j = 0; j < n_samples; ++j) {
    const double u = (j + key.uniform(uint64_t(j))) / n_samples;
    while (bin < n_bins - 1 && cum + pw.pdf[bin] < u) cum += pw.pdf[bin++];
    const double frac = pw.pdf[bin] > 0.0 ? (u - cum) / pw.pdf[bin] : 0.5;
    out.l[j] = t0 + bin_w * (bin + std::min(std::max(frac, 0.0), 1.0));
  }
  for (int j = 0; j + 1 < n_samples; ++j) {
    out.l[j + 1] = std::max(out.l[j + 1], std::nextafter(out.l[j], 1e300));
    out.delta[j] = out.l[j + 1] - out.l[j];
  }
  out.delta[n_samples - 1] = n_samples >= 2 ? out.delta[n_samples - 2] : (t1 - t0);
  return out;
}

void quadratureWeights(const std::vector<double>& sigmas, const std::vector<double>& deltas,
                       std::vector<double>& weights, std::vector<double>& trans) {
  const size_t n = sigmas.size();
  weights.resize(n);
  trans.resize(n + 1);
  double tau = 0.0;
  for (size_t j = 0; j < n; ++j) {
    trans[j] = std::exp(-tau);
    const double local = sigmas[j] * deltas[j];
    weights[j] = trans[j] * (-std::expm1(-local));
    tau += local;
  }
  trans[n] = std::exp(-tau);
}

Ray pixelRay(const PinholeCamera& cam, const CameraPose& pose, int px, int py,
             double near, double far) {
  const Vec3 cam_dir((px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0);
  Ray r;
  r.origin = pose.origin;
  r.dir = (pose.rot * cam_dir).normalized();
  r.near = near;
  r.far = far;
  return r;
}

RayOutputs renderRay(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                     const RayOptions& opts, RayRecord* rec) {
  const SceneGrid& grid = ctx.grid;
  const GatingParams& gp = ctx.gating;
  const RenderConfig& cfg = ctx.config;
  constexpr int K = GatingParams::kSlices;

  RayOutputs out;
  RayRecord local;
  RayRecord& R = rec ? *rec : local;
  R = RayRecord{};
  R.ray = ray;
  R.pose = pose;
  R.sample_key = opts.sample_key;
  shBasis9(ray.dir, R.yd);

  const SampleSet set = sampleCameraRay(ctx.proposal, ray, cfg.n_samples,
                                        cfg.n_proposal_bins, cfg.pdf_floor, opts.sample_key);
  const double bg = grid.background_ambient;
  if (set.empty()) {
    out.passive_sum = bg;
    for (int k = 0; k < K; ++k) out.intensity[k] = out.passive_sum + gp.dark[k];
    out.passive = out.passive_sum + gp.dark_passive;
    return out;
  }
  R.hit_bounds = true;
  R.illum_origin = illuminatorOrigin(ctx.illum, pose);
  R.illum_frame = illuminatorFrame(ctx.illum, pose);

  const int n = int(set.l.size());
  R.samples.resize(n);

  // Density sweep + running transmittance.
  double tau = 0.0;
  for (int j = 0; j < n; ++j) {
    SampleRec& s = R.samples[j];
    s.l = set.l[j];
    s.delta = set.delta[j];
    s.x = ray.origin + s.l * ray.dir;
    s.sten_density = triStencil(grid.bounds, grid.density_dims, s.x);
    if (s.sten_density.inside) {
      double v = 0.0;
      for (int c = 0; c < 8; ++c) v += s.sten_density.w[c] * grid.density_raw[s.sten_density.corner[c]];
      s.raw = v;
      s.sigma = softplus(v);
      s.sp = softplusGrad(v);
    } else {
      s.raw = -1e30;
      s.sigma = 0.0;
      s.sp = 0.0;
    }
    s.trans = std::exp(-tau);
    const double local_tau = s.sigma * s.delta;
    s.trans_step = std::exp(-local_tau);
    s.w = s.trans * (-std::expm1(-local_tau));
    tau += local_tau;
  }
  R.trans_end = std::exp(-tau);
  out.trans_end = R.trans_end;

  double active[K] = {0, 0, 0};
  double passive_sum = 0.0;
  double wl = 0.0, wsum = 0.0, wpsi = 0.0;

  for (int j = 0; j < n; ++j) {
    SampleRec& s = R.samples[j];
    // Illuminator geometry.
    const Vec3 e = s.x - R.illum_origin;
    s.l_i = e.norm();
    if (s.l_i < 1e-12) throw NumericError("render: sample coincides with the emitter");
    s.omega = e / s.l_i;
    s.v_loc = R.illum_frame.transpose() * s.omega;
    if (s.v_loc.z() < 1e-6) R.kink_reasons |= kKinkBehindEmitter;
    s.gamma = Vec2(std::atan2(s.v_loc.x(), s.v_loc.z()),
                   std::atan2(s.v_loc.y(), s.v_loc.z()));
    s.z_total = s.l + s.l_i;

    s.any_support = false;
    for (int k = 0; k < K; ++k) {
      s.prof[k] = gateProfileGrad(gp, k, s.z_total);
      if (s.prof[k].value > 0.0) s.any_support = true;
      if (s.prof[k].kink_dist < opts.kink_margin_ns) R.kink_reasons |= kKinkProfile;
    }
    s.beta = cfg.attenuation(s.z_total);
    s.dbeta_dz = cfg.attenuation.ddz(s.z_total);
    if (cfg.attenuation.kind == AttenuationModel::Kind::kInverseSquare &&
        std::abs(s.z_total - cfg.attenuation.z_min) < 1e-4)
      R.kink_reasons |= kKinkAttenClamp;

    // Ambient is present in every slice.
    s.sten_app = triStencil(grid.bounds, grid.app_dims, s.x);
    s.amb_inside = s.sten_app.inside;
    if (s.amb_inside) {
      double pre = 0.0;
      for (int c = 0; c < 8; ++c) {
        const double* ac = &grid.ambient[size_t(s.sten_app.corner[c]) * kAmbCoeffs];
        double dotv = 0.0;
        for (int i = 0; i < kAmbCoeffs; ++i) dotv += ac[i] * R.yd[i];
        pre += s.sten_app.w[c] * dotv;
      }
      s.amb_pre = pre;
      s.lambda = softplus(pre);
    } else {
      s.lambda = bg;
    }

    const bool want_active = s.any_support;
    if (want_active || opts.need_normals_all) {
      // Density-gradient normal.
      if (s.sten_density.inside) {
        Vec3 h = Vec3::Zero();
        for (int c = 0; c < 8; ++c)
          h += s.sten_density.dw[c] * grid.density_raw[s.sten_density.corner[c]];
        s.g = s.sp * h;
        s.g_norm = s.g.norm();
        s.degenerate = s.g_norm <= cfg.normal_eps;
        s.normal_valid = true;
        if (!s.degenerate) {
          const double q = s.g.dot(s.omega);
          s.cos_term = std::abs(q) / s.g_norm;
          s.n_dot_d = -s.g.dot(ray.dir) / s.g_norm;
          if (s.cos_term < 1e-4) R.kink_reasons |= kKinkCosine;
          if (s.g_norm < 1e-4) R.kink_reasons |= kKinkNormalDegen;
        } else {
          s.cos_term = 1.0;
          s.n_dot_d = 0.0;
          R.kink_reasons |= kKinkNormalDegen;
        }
      }
    }
    if (want_active || opts.need_alpha_all) {
      if (s.sten_app.inside) {
        double cx[kReflCoeffs] = {0};
        for (int c = 0; c < 8; ++c) {
          const double w = s.sten_app.w[c];
          const double* rc = &grid.refl[size_t(s.sten_app.corner[c]) * kReflCoeffs];
          for (int i = 0; i < kReflCoeffs; ++i) cx[i] += w * rc[i];
        }
        double t = 0.0;
        for (int i = 0; i < kShCount; ++i) t += cx[i] * R.yd[i];
        double yo[kShCount];
        shBasis9(s.omega, yo);
        for (int a = 0; a < 3; ++a) t += cx[kShCount + a] * yo[1 + a];
        s.alpha_logit = t;
        s.alpha = sigmoid(t);
        s.alpha_valid = true;
      }
    }
    if (want_active) {
      s.cone = coneIntensityGrad(ctx.illum, s.gamma);
    }

    // Shadow transmittance toward the emitter.
    const bool want_psi =
        cfg.use_shadow && (want_active || opts.need_psi_all) && s.trans > 1e-12;
    if (want_psi) {
      s.psi = shadowTransmittance(grid, R.illum_origin, s.x, cfg.shadow);
      s.tau = s.psi > 0.0 ? -std::log(s.psi) : cfg.shadow.tau_cutoff;
      s.psi_computed = true;
      // Node-count and clip boundaries are non-smooth in the extrinsics.
      const double usable = s.l_i - cfg.shadow.bias;
      if (std::abs(usable) < 1e-4) R.kink_reasons |= kKinkShadowNodes;
      if (usable > 0.0) {
        double step = cfg.shadow.step;
        if (step <= 0.0)
          step = grid.bounds.extent()
                     .cwiseQuotient((grid.density_dims - Vec3i::Ones()).cast<double>())
                     .minCoeff();
        const double q = usable / step;
        const int nodes = int(std::ceil(q));
        if (nodes > cfg.shadow.min_samples && nodes < cfg.shadow.max_samples &&
            std::abs(q - std::round(q)) < 1e-3)
          R.kink_reasons |= kKinkShadowNodes;
      }
    } else {
      s.psi = 1.0;
    }

    if (want_active) {
      const double common = s.alpha * s.beta * s.psi * s.cos_term * s.cone.iota;
      for (int k = 0; k < K; ++k)
        if (s.prof[k].value > 0.0) active[k] += s.w * gp.gain[k] * s.prof[k].value * common;
    }
    passive_sum += s.w * s.lambda;
    wl += s.w * s.l;
    wsum += s.w;
    wpsi += s.w * s.psi;
  }

  passive_sum += R.trans_end * bg;
  R.weight_sum = wsum;

  for (int k = 0; k < K; ++k) {
    out.active_sum[k] = active[k];
    out.intensity[k] = active[k] + passive_sum + gp.dark[k];
  }
  out.passive_sum = passive_sum;
  out.passive = passive_sum + gp.dark_passive;
  out.weight_sum = wsum;
  out.expected_shadow = wpsi;
  out.depth = wsum > 0.5 ? wl / wsum : kNoSurfaceDepth;
  R.kink = R.kink_reasons != 0;
  return out;
}

double renderGated(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                   int k, const RngKey& key) {
  RayOptions opts;
  opts.sample_key = key;
  return renderRay(ctx, ray, pose, opts).intensity[size_t(k)];
}

double renderPassive(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                     const RngKey& key) {
  RayOptions opts;
  opts.sample_key = key;
  return renderRay(ctx, ray, pose, opts).passive;
}

double renderDepth(const SceneContext& ctx, const Ray& ray, const CameraPose& pose,
                   const RngKey& key) {
  RayOptions opts;
  opts.sample_key = key;
  return renderRay(ctx, ray, pose, opts).depth;
}

}  // namespace gvr
