// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gvr/eval.hpp"
#include "gvr/synthio.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gvr {

namespace {
constexpr double kY0 = 0.28209479177387814;
constexpr double kY1 = 0.4886025119029199;
}  // namespace

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || lambda5 < 0)
    throw ConfigError("loss weights must be >= 0");
  if (!(s > 0)) throw ConfigError("depth-loss bandwidth s must be > 0");
  if (!(eps_i > 0)) throw ConfigError("eps_i must be > 0");
  if (!(eps_d_decay > 0) || eps_d_decay > 1.0)
    throw ConfigError("eps_d_decay must lie in (0, 1]");
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_rays < 1) throw ConfigError("batch_rays must be >= 1");
  if (!(lr_fields > 0) || !(lr_extrinsics > 0) || !(lr_gating > 0))
    throw ConfigError("learning rates must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
}

// ---------------------------------------------------------------------------
// ParamRegistry
// ---------------------------------------------------------------------------

ParamRegistry::ParamRegistry(Parameters& p) : p_(&p) {
  n_density_ = p.grid.densityCount();
  n_refl_ = p.grid.appCount() * kReflCoeffs;
  n_amb_ = p.grid.appCount() * kAmbCoeffs;
  scalar_base_ = n_density_ + n_refl_ + n_amb_;
  total_ = scalar_base_ + kScalarSlotCount;
}

namespace {

double* scalarRef(Parameters& p, int slot) {
  GatingParams& g = p.gating;
  IlluminatorModel& m = p.illum;
  switch (slot) {
    case kSlotXi0: case kSlotXi1: case kSlotXi2:
      return &g.gate_delay[size_t(slot - kSlotXi0)];
    case kSlotTl0: case kSlotTl1: case kSlotTl2:
      return &g.pulse_width[size_t(slot - kSlotTl0)];
    case kSlotTg0: case kSlotTg1: case kSlotTg2:
      return &g.gate_width[size_t(slot - kSlotTg0)];
    case kSlotGain0: case kSlotGain1: case kSlotGain2:
      return &g.gain[size_t(slot - kSlotGain0)];
    case kSlotDark0: case kSlotDark1: case kSlotDark2:
      return &g.dark[size_t(slot - kSlotDark0)];
    case kSlotDarkP: return &g.dark_passive;
    case kSlotD0: return &g.distance_offset;
    case kSlotEta: return &m.eta;
    case kSlotMean0: return &m.mean.x();
    case kSlotMean1: return &m.mean.y();
    case kSlotSigma0: return &m.sigma.x();
    case kSlotSigma1: return &m.sigma.y();
    case kSlotOrder0: return &m.order.x();
    case kSlotOrder1: return &m.order.y();
    case kSlotRot0: return &m.rot.x();
    case kSlotRot1: return &m.rot.y();
    case kSlotRot2: return &m.rot.z();
    case kSlotTrans0: return &m.trans.x();
    case kSlotTrans1: return &m.trans.y();
    case kSlotTrans2: return &m.trans.z();
    default: throw NumericError("bad scalar slot");
  }
}

const char* scalarName(int slot) {
  static const char* names[kScalarSlotCount] = {
      "xi0", "xi1", "xi2", "t_l0", "t_l1", "t_l2", "t_g0", "t_g1", "t_g2",
      "gain0", "gain1", "gain2", "dark0", "dark1", "dark2", "dark_passive", "d0",
      "eta", "mean0", "mean1", "sigma0", "sigma1", "order0", "order1",
      "rot0", "rot1", "rot2", "trans0", "trans1", "trans2"};
  return names[slot];
}

}  // namespace

double ParamRegistry::get(size_t i) const {
  if (i < n_density_) return p_->grid.density_raw[i];
  i -= n_density_;
  if (i < n_refl_) return p_->grid.refl[i];
  i -= n_refl_;
  if (i < n_amb_) return p_->grid.ambient[i];
  return *scalarRef(*p_, int(i - n_amb_));
}

void ParamRegistry::set(size_t i, double v) {
  if (i < n_density_) {
    p_->grid.density_raw[i] = v;
    return;
  }
  i -= n_density_;
  if (i < n_refl_) {
    p_->grid.refl[i] = v;
    return;
  }
  i -= n_refl_;
  if (i < n_amb_) {
    p_->grid.ambient[i] = v;
    return;
  }
  *scalarRef(*p_, int(i - n_amb_)) = v;
}

double ParamRegistry::gradOf(const GradSink& g, size_t i) const {
  if (i < n_density_) return g.density.read(i);
  i -= n_density_;
  if (i < n_refl_) return g.refl.read(i);
  i -= n_refl_;
  if (i < n_amb_) return g.ambient.read(i);
  return g.scalars.read(i - n_amb_);
}

int ParamRegistry::groupOf(size_t i) const {
  if (i < scalar_base_) return 0;
  const int slot = int(i - scalar_base_);
  if (slot >= kSlotRot0 && slot <= kSlotTrans2) return 2;
  return 1;  // gating + laser profile
}

bool ParamRegistry::learnable(size_t i, const TrainConfig& cfg) const {
  if (i < scalar_base_) return cfg.learn_fields;
  const int slot = int(i - scalar_base_);
  if (slot == kSlotD0) return cfg.learn_d0;
  if (slot >= kSlotXi0 && slot <= kSlotDarkP) return cfg.learn_gating;
  if (slot >= kSlotEta && slot <= kSlotOrder1) return cfg.learn_illum_profile;
  return cfg.learn_extrinsics;
}

bool ParamRegistry::logSpace(size_t i) const {
  if (i < scalar_base_) return false;
  const int slot = int(i - scalar_base_);
  return (slot >= kSlotTl0 && slot <= kSlotTg2);
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

double photometricRay(const double pred[4], const double target[4], double* signs_out) {
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double r = pred[k] - target[k];
    acc += std::abs(r);
    if (signs_out) signs_out[k] = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
  }
  return acc;
}

double depthLossRay(std::span<const double> w, std::span<const double> l,
                    std::span<const double> delta, double dhat, double s, double eps_w,
                    std::span<double> dw_out) {
  double acc = 0.0;
  const double inv2s2 = 1.0 / (2.0 * s * s);
  for (size_t j = 0; j < w.size(); ++j) {
    const double d = l[j] - dhat;
    const double gauss = std::exp(-d * d * inv2s2);
    const double wl = w[j] + eps_w;
    if (wl < 1.0) {
      acc -= std::log(wl) * gauss * delta[j];
      if (!dw_out.empty()) dw_out[j] += -gauss * delta[j] / wl;
    }
  }
  return acc;
}

double shadowLossRay(std::span<const double> w, std::span<const double> psi,
                     std::span<double> dw_out, std::span<double> dpsi_out) {
  double s = 0.0;
  for (size_t j = 0; j < w.size(); ++j) s += w[j] * psi[j];
  const double r = 1.0 - s;
  const double sgn = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
  if (!dw_out.empty())
    for (size_t j = 0; j < w.size(); ++j) {
      dw_out[j] += -sgn * psi[j];
      dpsi_out[j] += -sgn * w[j];
    }
  return std::abs(r);
}

double lossTotal(const LossTerms& t, const LossWeights& w) {
  return w.lambda1 * t.photometric + w.lambda2 * t.depth + w.lambda3 * t.shadow +
         w.lambda4 * t.normal + w.lambda5 * t.refl;
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

namespace {

/// Scatters d(tau)/d(density vertices) and accumulates d(tau)/d(o_i) for one
/// shadow march. Re-walks the same node layout as the forward march.
void shadowBackward(const SceneGrid& grid, const ShadowConfig& shadow_cfg,
                    const Vec3& o_i, const SampleRec& s, double d_tau, GradSink& sink,
                    Vec3& d_oi) {
  const ShadowNodes nodes = shadowNodeLayout(grid, shadow_cfg, s.l_i);
  if (nodes.n == 0) return;
  const Vec3 dir = s.omega;
  double sum_sigma = 0.0;
  Vec3 geom = Vec3::Zero();
  const double ur = nodes.usable / s.l_i;
  for (int m = 0; m < nodes.n; ++m) {
    const double lm = nodes.dl * (m + 0.5);
    const Vec3 p = o_i + lm * dir;
    const TriStencil st = triStencil(grid.bounds, grid.density_dims, p);
    if (!st.inside) continue;
    double v = 0.0;
    Vec3 h = Vec3::Zero();
    for (int c = 0; c < 8; ++c) {
      const double raw = grid.density_raw[st.corner[c]];
      v += st.w[c] * raw;
      h += st.dw[c] * raw;
    }
    const double sg = softplusGrad(v);
    sum_sigma += softplus(v);
    const double coef = d_tau * nodes.dl * sg;
    for (int c = 0; c < 8; ++c) sink.density.add(size_t(st.corner[c]), coef * st.w[c]);
    // Node motion: p_m = o_i + kappa * usable * dir.
    const Vec3 grad_sigma = sg * h;
    const double kappa = (m + 0.5) / nodes.n;
    const double gdotdir = grad_sigma.dot(dir);
    geom += grad_sigma + kappa * (-dir * gdotdir + ur * (dir * gdotdir - grad_sigma));
  }
  d_oi += d_tau * (nodes.dl * geom - (sum_sigma / nodes.n) * dir);
}

/// d(alpha)/d(reflectance coefficients) plus the omega chain of the light
/// basis terms.
void alphaBackwardAt(const SceneGrid& grid, const SampleRec& s, const double yd[kShCount],
                     double d_alpha, GradSink& sink, Vec3& d_omega) {
  const double dlogit = d_alpha * s.alpha * (1.0 - s.alpha);
  double yo[kShCount];
  shBasis9(s.omega, yo);
  double cx_light[3] = {0, 0, 0};
  for (int c = 0; c < 8; ++c) {
    const double wc = dlogit * s.sten_app.w[c];
    const double* rc = &grid.refl[size_t(s.sten_app.corner[c]) * kReflCoeffs];
    const size_t base = size_t(s.sten_app.corner[c]) * kReflCoeffs;
    for (int i = 0; i < kShCount; ++i) sink.refl.add(base + i, wc * yd[i]);
    for (int a = 0; a < 3; ++a) {
      sink.refl.add(base + kShCount + a, wc * yo[1 + a]);
      cx_light[a] += s.sten_app.w[c] * rc[kShCount + a];
    }
  }
  // yo[1] = kY1*wy, yo[2] = kY1*wz, yo[3] = kY1*wx
  d_omega += dlogit * kY1 * Vec3(cx_light[2], cx_light[0], cx_light[1]);
}

/// d(quantity)/d(g) chain through g = softplus'(v) * grad(v).
void densityGradBackward(const SceneGrid& grid, const SampleRec& s, const Vec3& d_g,
                         GradSink& sink) {
  Vec3 h = Vec3::Zero();
  for (int c = 0; c < 8; ++c)
    h += s.sten_density.dw[c] * grid.density_raw[s.sten_density.corner[c]];
  const double spp = s.sp * (1.0 - s.sp);  // d(softplus')/d(raw)
  for (int c = 0; c < 8; ++c) {
    const double dv =
        d_g.dot(spp * s.sten_density.w[c] * h + s.sp * s.sten_density.dw[c]);
    sink.density.add(size_t(s.sten_density.corner[c]), dv);
  }
}

}  // namespace

void rayBackward(const SceneContext& ctx, const RayRecord& rec, const RayAdjoint& adj,
                 GradSink& sink) {
  constexpr int K = GatingParams::kSlices;
  const SceneGrid& grid = ctx.grid;
  const GatingParams& gp = ctx.gating;

  const double g0 = adj.dI[0], g1 = adj.dI[1], g2 = adj.dI[2], gP = adj.dI[3];
  const double gbar[K] = {g0, g1, g2};
  const double gLambda = g0 + g1 + g2 + gP;

  for (int k = 0; k < K; ++k)
    if (gbar[k] != 0.0) sink.scalars.add(kSlotDark0 + k, gbar[k]);
  if (gP != 0.0) sink.scalars.add(kSlotDarkP, gP);
  if (!rec.hit_bounds) return;

  const int n = int(rec.samples.size());
  const Vec3 d = rec.ray.dir;
  std::vector<double> c_w(size_t(n), 0.0);

  double d_xi[K] = {0, 0, 0}, d_tl[K] = {0, 0, 0}, d_tg[K] = {0, 0, 0},
         d_gain[K] = {0, 0, 0};
  double d_d0 = 0, d_eta = 0;
  Vec2 d_mean = Vec2::Zero(), d_sigma = Vec2::Zero(), d_order = Vec2::Zero();
  Vec3 d_oi = Vec3::Zero(), d_rot = Vec3::Zero();

  for (int j = 0; j < n; ++j) {
    const SampleRec& s = rec.samples[size_t(j)];
    const double dw_extra = adj.dw.empty() ? 0.0 : adj.dw[size_t(j)];
    const double dpsi_extra = adj.dpsi.empty() ? 0.0 : adj.dpsi[size_t(j)];
    const double dalpha_extra = adj.dalpha.empty() ? 0.0 : adj.dalpha[size_t(j)];
    const double dnd_extra = adj.dnd.empty() ? 0.0 : adj.dnd[size_t(j)];
    Vec3 d_omega = adj.domega.empty() ? Vec3::Zero() : adj.domega[size_t(j)];
    double d_li = 0.0;

    // Upstream coefficients of the active product per factor.
    double d_alpha_total = dalpha_extra;
    double d_psi_total = dpsi_extra;
    double d_cos = 0.0, d_iota = 0.0;
    double SS = 0.0;  // sum_k gbar_k gain_k C_k over in-support slices
    if (s.any_support) {
      const double P = s.alpha * s.beta * s.psi * s.cos_term * s.cone.iota;
      for (int k = 0; k < K; ++k) {
        const double C = s.prof[size_t(k)].value;
        if (C <= 0.0) continue;
        SS += gbar[k] * gp.gain[size_t(k)] * C;
        if (gbar[k] != 0.0) {
          const double dC = gbar[k] * s.w * gp.gain[size_t(k)] * P;
          d_xi[k] += dC * s.prof[size_t(k)].d_xi;
          d_tl[k] += dC * s.prof[size_t(k)].d_tl;
          d_tg[k] += dC * s.prof[size_t(k)].d_tg;
          const double dz = dC * s.prof[size_t(k)].d_z;
          d_d0 += dz;
          d_li += dz;
          d_gain[k] += gbar[k] * s.w * C * P;
        }
      }
      c_w[size_t(j)] += SS * P;
      if (SS != 0.0) {
        const double wSS = s.w * SS;
        const double a = s.alpha, b = s.beta, ps = s.psi, co = s.cos_term,
                     io = s.cone.iota;
        d_alpha_total += wSS * b * ps * co * io;
        d_psi_total += wSS * a * b * co * io;
        d_cos = wSS * a * b * ps * io;
        d_iota = wSS * a * b * ps * co;
        d_li += wSS * a * ps * co * io * s.dbeta_dz;  // beta(z), z = l + l_i
      }
    }
    c_w[size_t(j)] += gLambda * s.lambda + dw_extra;

    // Cone model chain into (eta, Xi, Omega, Theta) and the geometry.
    if (d_iota != 0.0) {
      d_eta += d_iota * s.cone.d_eta;
      d_mean += d_iota * s.cone.d_mean;
      d_sigma += d_iota * s.cone.d_sigma;
      d_order += d_iota * s.cone.d_order;
      const Vec2 d_gamma = d_iota * s.cone.d_gamma;
      // gamma = (atan2(vx, vz), atan2(vy, vz))
      const double vx = s.v_loc.x(), vy = s.v_loc.y(), vz = s.v_loc.z();
      const double rx = vx * vx + vz * vz, ry = vy * vy + vz * vz;
      const Vec3 d_vloc(d_gamma.x() * vz / rx, d_gamma.y() * vz / ry,
                        -d_gamma.x() * vx / rx - d_gamma.y() * vy / ry);
      d_omega += rec.illum_frame * d_vloc;
      // v_loc = R(rot)^T u, u = pose_rot^T omega; R(rot)^T = R(-rot).
      const Vec3 u = rec.pose.rot.transpose() * s.omega;
      Mat3 jac;
      rotateVectorJacobian(-ctx.illum.rot, u, jac);
      d_rot -= jac.transpose() * d_vloc;
    }

    if (d_psi_total != 0.0 && s.psi_computed && s.psi > 0.0)
      shadowBackward(grid, ctx.config.shadow, rec.illum_origin, s, -s.psi * d_psi_total,
                     sink, d_oi);

    if (d_cos != 0.0 && s.normal_valid && !s.degenerate) {
      const double q = s.g.dot(s.omega);
      const double sq = q >= 0 ? 1.0 : -1.0;
      const double r = s.g_norm;
      densityGradBackward(grid, s,
                          d_cos * (sq * s.omega / r - std::abs(q) * s.g / (r * r * r)),
                          sink);
      d_omega += d_cos * sq * s.g / r;
    }

    if (dnd_extra != 0.0 && s.normal_valid && !s.degenerate) {
      // n_hat . d with n_hat = -g/|g|
      const double r = s.g_norm;
      const double gd = s.g.dot(d);
      densityGradBackward(grid, s, dnd_extra * (-d / r + gd * s.g / (r * r * r)), sink);
    }

    if (d_alpha_total != 0.0 && s.alpha_valid)
      alphaBackwardAt(grid, s, rec.yd, d_alpha_total, sink, d_omega);

    const double d_lambda = gLambda * s.w;
    if (d_lambda != 0.0 && s.amb_inside) {
      const double dpre = d_lambda * softplusGrad(s.amb_pre);
      for (int c = 0; c < 8; ++c) {
        const double wc = dpre * s.sten_app.w[c];
        const size_t base = size_t(s.sten_app.corner[c]) * kAmbCoeffs;
        for (int i = 0; i < kAmbCoeffs; ++i) sink.ambient.add(base + i, wc * rec.yd[i]);
      }
    }

    // omega / l_i back to the emitter position (x_j is fixed).
    if (d_omega != Vec3::Zero() || d_li != 0.0) {
      const Vec3 de =
          (d_omega - s.omega * s.omega.dot(d_omega)) / s.l_i + d_li * s.omega;
      d_oi -= de;
    }
  }

  // Quadrature adjoint: the weight-dependent part of L is
  //   sum_j c_w[j] w_j + c_T T_end.
  const double c_T = gLambda * grid.background_ambient;
  double suffix = c_T * rec.trans_end;
  for (int p = n - 1; p >= 0; --p) {
    const SampleRec& s = rec.samples[size_t(p)];
    const double dt = c_w[size_t(p)] * s.trans * s.trans_step - suffix;
    suffix += c_w[size_t(p)] * s.w;
    if (dt != 0.0 && s.sten_density.inside) {
      const double dv = dt * s.delta * s.sp;
      for (int c = 0; c < 8; ++c)
        sink.density.add(size_t(s.sten_density.corner[c]), dv * s.sten_density.w[c]);
    }
  }

  for (int k = 0; k < K; ++k) {
    if (d_xi[k] != 0.0) sink.scalars.add(kSlotXi0 + k, d_xi[k]);
    if (d_tl[k] != 0.0) sink.scalars.add(kSlotTl0 + k, d_tl[k]);
    if (d_tg[k] != 0.0) sink.scalars.add(kSlotTg0 + k, d_tg[k]);
    if (d_gain[k] != 0.0) sink.scalars.add(kSlotGain0 + k, d_gain[k]);
  }
  if (d_d0 != 0.0) sink.scalars.add(kSlotD0, d_d0);
  if (d_eta != 0.0) sink.scalars.add(kSlotEta, d_eta);
  for (int a = 0; a < 2; ++a) {
    if (d_mean[a] != 0.0) sink.scalars.add(kSlotMean0 + a, d_mean[a]);
    if (d_sigma[a] != 0.0) sink.scalars.add(kSlotSigma0 + a, d_sigma[a]);
    if (d_order[a] != 0.0) sink.scalars.add(kSlotOrder0 + a, d_order[a]);
  }
  if (d_rot != Vec3::Zero())
    for (int a = 0; a < 3; ++a) sink.scalars.add(kSlotRot0 + a, d_rot[a]);
  if (d_oi != Vec3::Zero()) {
    const Vec3 d_trans = rec.pose.rot.transpose() * d_oi;
    for (int a = 0; a < 3; ++a) sink.scalars.add(kSlotTrans0 + a, d_trans[a]);
  }
}

// ---------------------------------------------------------------------------
// Per-ray training evaluation
// ---------------------------------------------------------------------------

namespace {

struct AlphaQuery {
  TriStencil sten;
  double yd[kShCount];
  double yo[kShCount];
  double alpha = 0.5;
  bool inside = false;
};

AlphaQuery alphaQueryFwd(const SceneGrid& grid, const Vec3& x, const Vec3& d,
                         const Vec3& omega) {
  AlphaQuery q;
  q.sten = triStencil(grid.bounds, grid.app_dims, x);
  if (!q.sten.inside) return q;
  q.inside = true;
  shBasis9(d, q.yd);
  shBasis9(omega, q.yo);
  double t = 0.0;
  for (int c = 0; c < 8; ++c) {
    const double w = q.sten.w[c];
    const double* rc = &grid.refl[size_t(q.sten.corner[c]) * kReflCoeffs];
    for (int i = 0; i < kShCount; ++i) t += w * rc[i] * q.yd[i];
    for (int a = 0; a < 3; ++a) t += w * rc[kShCount + a] * q.yo[1 + a];
  }
  q.alpha = sigmoid(t);
  return q;
}

void alphaQueryBwd(const AlphaQuery& q, double dalpha, GradSink& sink) {
  if (!q.inside || dalpha == 0.0) return;
  const double dlogit = dalpha * q.alpha * (1.0 - q.alpha);
  for (int c = 0; c < 8; ++c) {
    const double wc = dlogit * q.sten.w[c];
    const size_t base = size_t(q.sten.corner[c]) * kReflCoeffs;
    for (int i = 0; i < kShCount; ++i) sink.refl.add(base + i, wc * q.yd[i]);
    for (int a = 0; a < 3; ++a) sink.refl.add(base + kShCount + a, wc * q.yo[1 + a]);
  }
}

}  // namespace

LossTerms evalTrainRay(const SceneContext& ctx, const TrainRay& tr,
                       const LossWeights& lw, double eps_d, double eps_x,
                       GradSink* sink, bool* kink_out) {
  RayOptions opts;
  opts.sample_key = tr.sample_key;
  opts.need_psi_all = lw.lambda3 > 0.0 && tr.target.visible;
  opts.need_normals_all = lw.lambda4 > 0.0;
  opts.need_alpha_all = lw.lambda5 > 0.0;

  RayRecord rec;
  const RayOutputs ro = renderRay(ctx, tr.ray, tr.pose, opts, &rec);
  const int n = int(rec.samples.size());
  bool kink = rec.kink;

  LossTerms lt;
  RayAdjoint adj;
  const bool want_grad = sink != nullptr;
  if (want_grad && n > 0) {
    adj.dw.assign(size_t(n), 0.0);
    adj.dpsi.assign(size_t(n), 0.0);
    adj.dalpha.assign(size_t(n), 0.0);
    adj.dnd.assign(size_t(n), 0.0);
  }

  // Photometric
  const double pred[4] = {ro.intensity[0], ro.intensity[1], ro.intensity[2], ro.passive};
  double signs[4];
  lt.photometric = photometricRay(pred, tr.target.slices, signs);
  for (int k = 0; k < 4; ++k) {
    if (std::abs(pred[k] - tr.target.slices[k]) < 1e-9) kink = true;
    adj.dI[k] = lw.lambda1 * signs[k];
  }

  if (n > 0) {
    std::vector<double> w(size_t(n), 0.0), l(size_t(n), 0.0), delta(size_t(n), 0.0),
        psi(size_t(n), 0.0);
    for (int j = 0; j < n; ++j) {
      const SampleRec& s = rec.samples[size_t(j)];
      w[size_t(j)] = s.w;
      l[size_t(j)] = s.l;
      delta[size_t(j)] = s.delta;
      psi[size_t(j)] = s.psi;
      if (s.w + lw.eps_w > 1.0 - 1e-7) kink = true;
    }

    // Depth regularizer
    if (lw.lambda2 > 0.0 && tr.target.depth_valid) {
      std::vector<double> dw_tmp;
      std::span<double> dw_span;
      if (want_grad) {
        dw_tmp.assign(size_t(n), 0.0);
        dw_span = dw_tmp;
      }
      lt.depth = depthLossRay(w, l, delta, tr.target.depth_gt, lw.s, lw.eps_w, dw_span);
      if (want_grad)
        for (int j = 0; j < n; ++j) adj.dw[size_t(j)] += lw.lambda2 * dw_tmp[size_t(j)];
    }

    // Shadow supervision on rays visible from the emitter
    if (lw.lambda3 > 0.0 && tr.target.visible) {
      std::vector<double> dw_tmp, dpsi_tmp;
      std::span<double> dws, dps;
      if (want_grad) {
        dw_tmp.assign(size_t(n), 0.0);
        dpsi_tmp.assign(size_t(n), 0.0);
        dws = dw_tmp;
        dps = dpsi_tmp;
      }
      lt.shadow = shadowLossRay(w, psi, dws, dps);
      if (lt.shadow < 1e-9) kink = true;  // |1 - S| at the abs kink
      if (want_grad)
        for (int j = 0; j < n; ++j) {
          adj.dw[size_t(j)] += lw.lambda3 * dw_tmp[size_t(j)];
          adj.dpsi[size_t(j)] += lw.lambda3 * dpsi_tmp[size_t(j)];
        }
    }

    // Normal consistency: back-facing penalty on the derived normal
    if (lw.lambda4 > 0.0) {
      for (int j = 0; j < n; ++j) {
        const SampleRec& s = rec.samples[size_t(j)];
        if (!s.normal_valid || s.degenerate) continue;
        const double m = std::max(0.0, s.n_dot_d);
        lt.normal += s.w * m * m;
        if (want_grad) {
          adj.dw[size_t(j)] += lw.lambda4 * m * m;
          adj.dnd[size_t(j)] += lw.lambda4 * s.w * 2.0 * m;
        }
      }
    }

    // Reflectance spatial/angular consistency
    if (lw.lambda5 > 0.0) {
      const double kink_eps = 1e-9;
      for (int j = 0; j < n; ++j) {
        const SampleRec& s = rec.samples[size_t(j)];
        if (!s.alpha_valid) continue;
        const RngKey jk = tr.jitter_key.sub(uint64_t(j));
        const Vec3 xj = s.x + eps_x * Vec3(jk.normal(0), jk.normal(1), jk.normal(2));
        Vec3 dj = tr.ray.dir + eps_d * Vec3(jk.normal(3), jk.normal(4), jk.normal(5));
        dj.normalize();
        const AlphaQuery q = alphaQueryFwd(ctx.grid, xj, dj, s.omega);
        const double diff = s.alpha - q.alpha;
        lt.refl += s.w * std::abs(diff);
        if (std::abs(diff) < kink_eps) kink = true;
        if (want_grad) {
          const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
          adj.dw[size_t(j)] += lw.lambda5 * std::abs(diff);
          adj.dalpha[size_t(j)] += lw.lambda5 * sgn * s.w;
          alphaQueryBwd(q, -lw.lambda5 * sgn * s.w, *sink);
        }
      }
    }
  }

  lt.total = lossTotal(lt, lw);
  if (want_grad) rayBackward(ctx, rec, adj, *sink);
  if (kink_out) *kink_out = kink;
  return lt;
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

namespace {

LossTerms batchRun(const SceneContext& ctx, std::span<const TrainRay> batch,
                   const LossWeights& lw, double eps_d, double eps_x, int threads,
                   GradSink* sink, std::vector<char>* kink_mask,
                   const std::vector<char>* skip_mask) {
  const size_t n = batch.size();
  std::vector<LossTerms> per_ray(n);
  std::vector<char> kinks(n, 0);
  parallelFor(n, threads, [&](size_t i) {
    if (skip_mask && (*skip_mask)[i]) return;
    bool kink = false;
    per_ray[i] = evalTrainRay(ctx, batch[i], lw, eps_d, eps_x, sink, &kink);
    kinks[i] = kink ? 1 : 0;
  });
  LossTerms total;
  for (size_t i = 0; i < n; ++i) total += per_ray[i];
  if (kink_mask) *kink_mask = std::move(kinks);
  return total;
}

}  // namespace

LossTerms batchLoss(const SceneContext& ctx, std::span<const TrainRay> batch,
                    const LossWeights& lw, double eps_d, double eps_x, int threads,
                    const std::vector<char>* skip_mask) {
  return batchRun(ctx, batch, lw, eps_d, eps_x, threads, nullptr, nullptr, skip_mask);
}

LossTerms batchGrad(const SceneContext& ctx, std::span<const TrainRay> batch,
                    const LossWeights& lw, double eps_d, double eps_x, int threads,
                    GradSink& sink, std::vector<char>* kink_mask) {
  return batchRun(ctx, batch, lw, eps_d, eps_x, threads, &sink, kink_mask, nullptr);
}

std::vector<TrainRay> makeBatch(const Dataset& data, const LossWeights& lw,
                                const TrainConfig& cfg, int step) {
  if (data.train_idx.empty()) throw DataError("dataset has no training frames");
  const PinholeCamera& cam = data.manifest.camera;
  const RngKey sel = RngKey(cfg.seed).sub(0xBA7C).sub(uint64_t(step));
  const RngKey smp = RngKey(cfg.seed).sub(0x5A30).sub(uint64_t(step));
  const RngKey jit = RngKey(cfg.seed).sub(0x1170).sub(uint64_t(step));

  std::vector<TrainRay> batch(size_t(cfg.batch_rays));
  for (int r = 0; r < cfg.batch_rays; ++r) {
    const int fi = data.train_idx[sel.bits(3 * uint64_t(r)) % data.train_idx.size()];
    const int px = int(sel.bits(3 * uint64_t(r) + 1) % uint64_t(cam.width));
    const int py = int(sel.bits(3 * uint64_t(r) + 2) % uint64_t(cam.height));
    const Frame& f = data.frames[size_t(fi)];
    TrainRay& tr = batch[size_t(r)];
    tr.ray = pixelRay(cam, f.pose, px, py);
    tr.pose = f.pose;
    const size_t pix = size_t(py) * cam.width + px;
    for (int k = 0; k < 4; ++k) tr.target.slices[k] = f.slices[k].px[pix];
    const double dgt = f.depth.px[pix];
    tr.target.depth_gt = dgt;
    tr.target.depth_valid = dgt > 0.0;
    tr.target.visible = true;
    for (int k = 0; k < 3; ++k)
      tr.target.visible =
          tr.target.visible && (tr.target.slices[k] - tr.target.slices[3] > lw.eps_i);
    tr.sample_key = smp.sub(uint64_t(r));
    tr.jitter_key = jit.sub(uint64_t(r));
  }
  return batch;
}

GradAllResult gradAll(Parameters& params, std::span<const TrainRay> batch,
                      const LossWeights& lw, double eps_d, const TrainConfig& cfg) {
  params.gating.validate();
  params.illum.validate();
  GradSink sink;
  sink.allocate(params.grid);
  const SceneContext ctx{params.grid, params.proposal, params.gating, params.illum,
                         cfg.render};
  const double eps_x = lw.eps_x > 0.0
                           ? lw.eps_x
                           : 0.5 * params.grid.bounds.extent()
                                       .cwiseQuotient((params.grid.density_dims -
                                                       Vec3i::Ones()).cast<double>())
                                       .minCoeff();
  GradAllResult out;
  out.loss = batchGrad(ctx, batch, lw, eps_d, eps_x, cfg.threads, sink, &out.kink_mask);
  for (char k : out.kink_mask) out.kinks_excluded += k ? 1 : 0;

  ParamRegistry reg(params);
  out.grad.resize(reg.size());
  for (size_t i = 0; i < reg.size(); ++i) {
    out.grad[i] = reg.gradOf(sink, i);
    if (!std::isfinite(out.grad[i])) {
      std::string what = "non-finite gradient at flat index " + std::to_string(i);
      if (i >= reg.scalarBase()) what += std::string(" (") + scalarName(int(i - reg.scalarBase())) + ")";
      throw NumericError(what);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void AdamW::init(size_t n) {
  m_.assign(n, 0.0);
  v_.assign(n, 0.0);
  t_ = 0;
}

void AdamW::step(ParamRegistry& reg, const std::vector<double>& grad,
                 const TrainConfig& cfg) {
  ++t_;
  const double lr_scale = std::pow(cfg.lr_decay, double(t_ - 1));
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t_));
  const double lrs[3] = {cfg.lr_fields * lr_scale, cfg.lr_gating * lr_scale,
                         cfg.lr_extrinsics * lr_scale};
  for (size_t i = 0; i < reg.size(); ++i) {
    if (!reg.learnable(i, cfg)) continue;
    const double lr = lrs[reg.groupOf(i)];
    double g = grad[i];
    if (reg.logSpace(i)) {
      const double theta = reg.get(i);
      const double rho = std::log(std::max(theta, 1e-12));
      g *= theta;  // chain into log space
      m_[i] = cfg.beta1 * m_[i] + (1 - cfg.beta1) * g;
      v_[i] = cfg.beta2 * v_[i] + (1 - cfg.beta2) * g * g;
      const double mh = m_[i] / bc1, vh = v_[i] / bc2;
      const double rho_new =
          rho - lr * (mh / (std::sqrt(vh) + cfg.adam_eps) + cfg.weight_decay * rho);
      reg.set(i, std::exp(rho_new));
    } else {
      const double theta = reg.get(i);
      m_[i] = cfg.beta1 * m_[i] + (1 - cfg.beta1) * g;
      v_[i] = cfg.beta2 * v_[i] + (1 - cfg.beta2) * g * g;
      const double mh = m_[i] / bc1, vh = v_[i] / bc2;
      reg.set(i, theta - lr * (mh / (std::sqrt(vh) + cfg.adam_eps) +
                               cfg.weight_decay * theta));
    }
  }
}

void projectParams(Parameters& p) {
  for (int k = 0; k < GatingParams::kSlices; ++k) {
    p.gating.pulse_width[size_t(k)] = std::max(p.gating.pulse_width[size_t(k)], 1e-6);
    p.gating.gate_width[size_t(k)] =
        std::max(p.gating.gate_width[size_t(k)], p.gating.pulse_width[size_t(k)]);
    p.gating.gate_delay[size_t(k)] =
        std::max(p.gating.gate_delay[size_t(k)], p.gating.pulse_width[size_t(k)]);
    p.gating.gain[size_t(k)] = std::max(p.gating.gain[size_t(k)], 1e-6);
    p.gating.dark[size_t(k)] = std::max(p.gating.dark[size_t(k)], 0.0);
  }
  p.gating.dark_passive = std::max(p.gating.dark_passive, 0.0);
  p.illum.eta = std::max(p.illum.eta, 0.0);
  for (int a = 0; a < 2; ++a) {
    p.illum.sigma[a] = std::max(p.illum.sigma[a], 1e-4);
    p.illum.order[a] = std::max(p.illum.order[a], 1.0);
  }
}

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

Parameters initParameters(const Aabb& bounds, const TrainConfig& cfg, double background) {
  Parameters p;
  p.grid.allocate(bounds, cfg.density_dims, cfg.app_dims);
  p.grid.background_ambient = background;
  std::fill(p.grid.density_raw.begin(), p.grid.density_raw.end(), cfg.init_density_raw);
  for (size_t v = 0; v < p.grid.appCount(); ++v)
    p.grid.ambient[v * kAmbCoeffs] = cfg.init_ambient_dc;
  p.proposal.allocate(bounds, cfg.proposal_dims);
  p.proposal.distillFrom(p.grid);
  return p;
}

namespace {

struct ValMetrics {
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double depth_mae = std::numeric_limits<double>::quiet_NaN();
};

ValMetrics validate(const Parameters& p, const Dataset& data, const TrainConfig& cfg) {
  ValMetrics out;
  if (data.val_idx.empty()) return out;
  const int stride = 2;
  const Frame& f = data.frames[size_t(data.val_idx[0])];
  const FrameRender fr = renderFrame(p, cfg.render, data.manifest.camera, f.pose,
                                     cfg.seed ^ 0xA11DA7EULL, cfg.threads, stride);
  // Strided ground truth
  const int w = fr.passive.width, h = fr.passive.height;
  Image gt_s, mask;
  double psnr_acc = 0.0;
  int psnr_n = 0;
  for (int k = 0; k < 4; ++k) {
    gt_s.resize(w, h);
    const Image& src = f.slices[k];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gt_s.at(x, y) = src.at(x * stride, y * stride);
    psnr_acc += psnr(k < 3 ? fr.slices[k] : fr.passive, gt_s, 1.0);
    ++psnr_n;
  }
  out.psnr = psnr_acc / psnr_n;

  Image gt_d, pred_d;
  gt_d.resize(w, h);
  mask.resize(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float g = f.depth.at(x * stride, y * stride);
      gt_d.at(x, y) = g;
      mask.at(x, y) = (g > 0.f && fr.depth.at(x, y) > 0.f) ? 1.f : 0.f;
    }
  bool any = false;
  for (float m : mask.px) any = any || m > 0.f;
  if (any) out.depth_mae = depthMetrics(fr.depth, gt_d, mask).mae;
  return out;
}

}  // namespace

FrameRender renderFrame(const Parameters& p, const RenderConfig& cfg,
                        const PinholeCamera& cam, const CameraPose& pose, uint64_t seed,
                        int threads, int stride) {
  FrameRender out;
  const int w = cam.width / stride, h = cam.height / stride;
  for (Image* im : {&out.passive, &out.depth, &out.passive_sum, &out.shadow})
    im->resize(w, h);
  for (int k = 0; k < 3; ++k) {
    out.slices[k].resize(w, h);
    out.active[k].resize(w, h);
  }
  const SceneContext ctx{p.grid, p.proposal, p.gating, p.illum, cfg};
  const RngKey key = RngKey(seed).sub(0xF7A);
  parallelFor(size_t(w) * h, threads, [&](size_t i) {
    const int x = int(i % w), y = int(i / w);
    const Ray ray = pixelRay(cam, pose, x * stride, y * stride);
    RayOptions opts;
    opts.sample_key = key.sub(i);
    const RayOutputs ro = renderRay(ctx, ray, pose, opts);
    for (int k = 0; k < 3; ++k) {
      out.slices[k].px[i] = float(ro.intensity[size_t(k)]);
      out.active[k].px[i] = float(ro.active_sum[size_t(k)]);
    }
    out.passive.px[i] = float(ro.passive);
    out.passive_sum.px[i] = float(ro.passive_sum);
    out.depth.px[i] = float(ro.depth);
    out.shadow.px[i] = float(ro.expected_shadow);
  });
  return out;
}

FitResult fit(const Dataset& data, Parameters init, const TrainConfig& cfg,
              const LossWeights& lw, const std::string& out_dir) {
  cfg.validate();
  lw.validate();
  init.gating.validate();
  init.illum.validate();
  if (data.train_idx.size() < 2) throw DataError("fit needs at least 2 training views");

  FitResult res;
  res.params = std::move(init);
  Parameters& p = res.params;
  Parameters last_good = p;

  ParamRegistry reg(p);
  AdamW opt;
  opt.init(reg.size());
  GradSink sink;
  sink.allocate(p.grid);
  std::vector<double> grad(reg.size());

  const double eps_x = lw.eps_x > 0.0
                           ? lw.eps_x
                           : 0.5 * p.grid.bounds.extent()
                                       .cwiseQuotient((p.grid.density_dims - Vec3i::Ones())
                                                          .cast<double>())
                                       .minCoeff();
  std::ofstream history;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    history.open(fs::path(out_dir) / "history.csv");
    history << "step,total,photometric,depth,shadow,normal,refl,psnr,depth_mae\n";
  }
  auto writeRow = [&](const HistoryRow& row) {
    res.history.push_back(row);
    if (!history.is_open()) return;
    history << row.step << "," << row.loss.total << "," << row.loss.photometric << ","
            << row.loss.depth << "," << row.loss.shadow << "," << row.loss.normal << ","
            << row.loss.refl << ",";
    if (std::isfinite(row.psnr)) history << row.psnr;
    history << ",";
    if (std::isfinite(row.depth_mae)) history << row.depth_mae;
    history << "\n";
    history.flush();
  };

  for (int step = 0; step < cfg.steps; ++step) {
    if (cfg.distill_interval > 0 && step % cfg.distill_interval == 0)
      p.proposal.distillFrom(p.grid);

    const std::vector<TrainRay> batch = makeBatch(data, lw, cfg, step);
    const SceneContext ctx{p.grid, p.proposal, p.gating, p.illum, cfg.render};
    sink.zero();
    const LossTerms lt =
        batchGrad(ctx, batch, lw, lw.epsD(step), eps_x, cfg.threads, sink, nullptr);

    if (!std::isfinite(lt.total) || sink.density.overflowed()) {
      res.diverged = true;
      p = last_good;
      break;
    }
    for (size_t i = 0; i < reg.size(); ++i) grad[i] = reg.gradOf(sink, i);
    opt.step(reg, grad, cfg);
    projectParams(p);
    res.steps_run = step + 1;

    if (step % 50 == 0) last_good = p;

    const bool do_val = cfg.val_interval > 0 && (step + 1) % cfg.val_interval == 0;
    if (step % cfg.history_interval == 0 || do_val || step + 1 == cfg.steps) {
      HistoryRow row;
      row.step = step;
      row.loss = lt;
      if (do_val) {
        const ValMetrics vm = validate(p, data, cfg);
        row.psnr = vm.psnr;
        row.depth_mae = vm.depth_mae;
      }
      writeRow(row);
    }
    if (!out_dir.empty() && cfg.ckpt_interval > 0 && (step + 1) % cfg.ckpt_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06d", step + 1);
      saveCheckpoint((fs::path(out_dir) / name).string(), p, step + 1);
    }
  }
  if (!out_dir.empty())
    saveCheckpoint((fs::path(out_dir) / "ckpt_final").string(), p, res.steps_run);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void saveCheckpoint(const std::string& prefix, const Parameters& p, int step) {
  saveGridCheckpoint(prefix + ".gfgrid", p.grid, p.proposal);
  json j{{"step", step},
         {"gating",
          {{"gate_delay", p.gating.gate_delay},
           {"pulse_width", p.gating.pulse_width},
           {"gate_width", p.gating.gate_width},
           {"gain", p.gating.gain},
           {"dark", p.gating.dark},
           {"dark_passive", p.gating.dark_passive},
           {"distance_offset", p.gating.distance_offset}}},
         {"illuminator",
          {{"eta", p.illum.eta},
           {"mean", {p.illum.mean.x(), p.illum.mean.y()}},
           {"sigma", {p.illum.sigma.x(), p.illum.sigma.y()}},
           {"order", {p.illum.order.x(), p.illum.order.y()}},
           {"rot", {p.illum.rot.x(), p.illum.rot.y(), p.illum.rot.z()}},
           {"trans", {p.illum.trans.x(), p.illum.trans.y(), p.illum.trans.z()}}}}};
  std::ofstream os(prefix + ".json");
  if (!os) throw DataError("cannot write checkpoint sidecar: " + prefix + ".json");
  os << j.dump(2) << "\n";
}

Parameters loadCheckpoint(const std::string& prefix) {
  Parameters p;
  loadGridCheckpoint(prefix + ".gfgrid", p.grid, p.proposal);
  std::ifstream is(prefix + ".json");
  if (!is) throw DataError("cannot open checkpoint sidecar: " + prefix + ".json");
  json j;
  try {
    is >> j;
    const auto& g = j.at("gating");
    for (int k = 0; k < 3; ++k) {
      p.gating.gate_delay[size_t(k)] = g.at("gate_delay").at(k);
      p.gating.pulse_width[size_t(k)] = g.at("pulse_width").at(k);
      p.gating.gate_width[size_t(k)] = g.at("gate_width").at(k);
      p.gating.gain[size_t(k)] = g.at("gain").at(k);
      p.gating.dark[size_t(k)] = g.at("dark").at(k);
    }
    p.gating.dark_passive = g.at("dark_passive");
    p.gating.distance_offset = g.value("distance_offset", 0.0);
    const auto& m = j.at("illuminator");
    p.illum.eta = m.at("eta");
    p.illum.mean = Vec2(m.at("mean").at(0), m.at("mean").at(1));
    p.illum.sigma = Vec2(m.at("sigma").at(0), m.at("sigma").at(1));
    p.illum.order = Vec2(m.at("order").at(0), m.at("order").at(1));
    p.illum.rot = Vec3(m.at("rot").at(0), m.at("rot").at(1), m.at("rot").at(2));
    p.illum.trans = Vec3(m.at("trans").at(0), m.at("trans").at(1), m.at("trans").at(2));
  } catch (const json::exception& e) {
    throw DataError("checkpoint sidecar " + prefix + ".json: " + e.what());
  }
  return p;
}

}  // namespace gvr
