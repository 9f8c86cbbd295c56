// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>

#include "gvr/render.hpp"

namespace gvr {

struct LossWeights {
  double lambda1 = 1.0;    // photometric
  double lambda2 = 0.1;    // depth
  double lambda3 = 0.01;   // shadow
  double lambda4 = 1e-3;   // normal consistency
  double lambda5 = 1e-3;   // reflectance regularizer
  double s = 0.5;          // depth-loss bandwidth, m
  double eps_i = 0.05;     // active-intensity visibility threshold
  double eps_x = 0.0;      // spatial jitter std, m; <= 0 -> half a voxel
  double eps_d_init = 0.5; // initial angular jitter std, rad
  double eps_d_decay = 0.999;  // per-step multiplier
  double eps_w = 1e-8;     // log guard in the depth loss

  double epsD(int step) const { return eps_d_init * std::pow(eps_d_decay, step); }
  void validate() const;
};

struct TrainConfig {
  int steps = 35000;
  int batch_rays = 4096;
  double lr_fields = 1e-2;
  double lr_extrinsics = 1e-4;
  double lr_gating = 1e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double lr_decay = 1.0;  // exponential per-step factor on all rates
  uint64_t seed = 0;
  bool deterministic = true;
  int threads = 0;
  int val_interval = 500;
  int ckpt_interval = 5000;
  int distill_interval = 500;
  int history_interval = 25;
  bool learn_fields = true;
  bool learn_gating = true;
  bool learn_d0 = false;
  bool learn_extrinsics = true;
  bool learn_illum_profile = true;
  Vec3i density_dims = Vec3i(64, 64, 64);
  Vec3i app_dims = Vec3i(32, 32, 32);
  Vec3i proposal_dims = Vec3i(16, 16, 16);
  double init_density_raw = -5.0;
  double init_ambient_dc = -2.0;
  RenderConfig render;

  void validate() const;
};

/// Learnable state: the scene grids plus sensor calibration.
struct Parameters {
  SceneGrid grid;
  ProposalGrid proposal;
  GatingParams gating;
  IlluminatorModel illum;
};

// ---------------------------------------------------------------------------
// Gradient accumulation
// ---------------------------------------------------------------------------

/// Scalar slots after the grid blocks. Order matters: it defines the flat
/// parameter indexing shared by the optimizer and the FD harness.
enum ScalarSlot : int {
  kSlotXi0 = 0, kSlotXi1, kSlotXi2,
  kSlotTl0, kSlotTl1, kSlotTl2,
  kSlotTg0, kSlotTg1, kSlotTg2,
  kSlotGain0, kSlotGain1, kSlotGain2,
  kSlotDark0, kSlotDark1, kSlotDark2,
  kSlotDarkP, kSlotD0,
  kSlotEta, kSlotMean0, kSlotMean1, kSlotSigma0, kSlotSigma1,
  kSlotOrder0, kSlotOrder1,
  kSlotRot0, kSlotRot1, kSlotRot2,
  kSlotTrans0, kSlotTrans1, kSlotTrans2,
  kScalarSlotCount
};

/// Fixed-point gradient buffers; additions commute, so accumulation is
/// bit-exact for any thread schedule.
struct GradSink {
  FixedAccum density, refl, ambient, scalars;

  void allocate(const SceneGrid& grid) {
    density.resize(grid.densityCount());
    refl.resize(grid.appCount() * kReflCoeffs);
    ambient.resize(grid.appCount() * kAmbCoeffs);
    scalars.resize(kScalarSlotCount);
  }
  void zero() {
    density.zero();
    refl.zero();
    ambient.zero();
    scalars.zero();
  }
};

/// Flat view over all natural parameters:
/// [density | refl | ambient | 30 scalars]. get/set address parameters,
/// gradOf reads the matching GradSink slot.
struct ParamRegistry {
  explicit ParamRegistry(Parameters& p);
  size_t size() const { return total_; }
  double get(size_t i) const;
  void set(size_t i, double v);
  double gradOf(const GradSink& g, size_t i) const;
  /// 0 = fields, 1 = gating + laser profile, 2 = extrinsics
  int groupOf(size_t i) const;
  bool learnable(size_t i, const TrainConfig& cfg) const;
  /// Pulse and gate widths step in log space for positivity.
  bool logSpace(size_t i) const;
  size_t scalarBase() const { return scalar_base_; }

 private:
  Parameters* p_;
  size_t n_density_, n_refl_, n_amb_, scalar_base_, total_;
};

// ---------------------------------------------------------------------------
// Per-ray losses (free functions; the train loop and the tests share them)
// ---------------------------------------------------------------------------

/// Sum over slices of |pred - target| (per-ray L2 norms of scalar
/// residuals). signs_out, when given, receives the residual signs.
double photometricRay(const double pred[4], const double target[4],
                      double* signs_out = nullptr);

/// -sum_j log(min(w_j + eps_w, 1)) exp(-(l_j - dhat)^2 / (2 s^2)) delta_j.
double depthLossRay(std::span<const double> w, std::span<const double> l,
                    std::span<const double> delta, double dhat, double s, double eps_w,
                    std::span<double> dw_out = {});

/// |1 - sum_j w_j psi_j| for a ray in the visible set.
double shadowLossRay(std::span<const double> w, std::span<const double> psi,
                     std::span<double> dw_out = {}, std::span<double> dpsi_out = {});

struct LossTerms {
  double total = 0, photometric = 0, depth = 0, shadow = 0, normal = 0, refl = 0;
  LossTerms& operator+=(const LossTerms& o) {
    total += o.total;
    photometric += o.photometric;
    depth += o.depth;
    shadow += o.shadow;
    normal += o.normal;
    refl += o.refl;
    return *this;
  }
};

/// lambda1 Lc + lambda2 Ld + lambda3 Ls + lambda4 Lnc + lambda5 La.
double lossTotal(const LossTerms& t, const LossWeights& w);

// ---------------------------------------------------------------------------
// Ray-level training evaluation
// ---------------------------------------------------------------------------

struct RayTarget {
  double slices[4] = {0, 0, 0, 0};  // three active + passive
  double depth_gt = kNoSurfaceDepth;
  bool depth_valid = false;
  bool visible = false;  // active intensity above eps_i in all slices
};

struct TrainRay {
  Ray ray;
  CameraPose pose;
  RayTarget target;
  RngKey sample_key;
  RngKey jitter_key;
};

/// Upstream derivatives flowing into one ray's adjoint sweep. All entries
/// are d(weighted total loss)/d(quantity); empty vectors mean zero.
struct RayAdjoint {
  double dI[4] = {0, 0, 0, 0};  // gated slices + passive
  std::vector<double> dw;       // per-sample d/dw_j beyond the intensity path
  std::vector<double> dpsi;     // per-sample d/dpsi_j
  std::vector<double> dalpha;   // per-sample d/dalpha_j
  std::vector<double> dnd;      // per-sample d/d(n_hat . d)
  std::vector<Vec3> domega;     // per-sample extra d/d(omega_j)
};

/// Reverse sweep over a recorded ray: scatters parameter gradients for the
/// grids, gating, illuminator profile and extrinsics into the sink.
void rayBackward(const SceneContext& ctx, const RayRecord& rec, const RayAdjoint& adj,
                 GradSink& sink);

/// Unweighted loss terms for one ray; when sink is non-null also scatters
/// d(lossTotal)/d(params) into it. kink_out reports non-smoothness
/// proximity (used by the FD suite to exclude rays).
LossTerms evalTrainRay(const SceneContext& ctx, const TrainRay& tr,
                       const LossWeights& lw, double eps_d, double eps_x,
                       GradSink* sink, bool* kink_out = nullptr);

/// Batch loss with deterministic ordered reduction. Rays flagged in
/// skip_mask are excluded (the FD suite drops kink-flagged rays from both
/// the analytic and the finite-difference side).
LossTerms batchLoss(const SceneContext& ctx, std::span<const TrainRay> batch,
                    const LossWeights& lw, double eps_d, double eps_x, int threads,
                    const std::vector<char>* skip_mask = nullptr);

/// Analytic gradient of lossTotal over the batch w.r.t. all parameters.
LossTerms batchGrad(const SceneContext& ctx, std::span<const TrainRay> batch,
                    const LossWeights& lw, double eps_d, double eps_x, int threads,
                    GradSink& sink, std::vector<char>* kink_mask = nullptr);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Decoupled-weight-decay adaptive moments with per-group learning rates and
/// log-space stepping for positivity-constrained slots.
class AdamW {
 public:
  void init(size_t n);
  void step(ParamRegistry& reg, const std::vector<double>& grad, const TrainConfig& cfg);
  int64_t t() const { return t_; }

 private:
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

/// Clamps parameters back into their invariant domain after a step.
void projectParams(Parameters& p);

// ---------------------------------------------------------------------------
// Fit loop
// ---------------------------------------------------------------------------

struct Dataset;  // synthio

struct HistoryRow {
  int step = 0;
  LossTerms loss;
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double depth_mae = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  Parameters params;
  std::vector<HistoryRow> history;
  int steps_run = 0;
  bool diverged = false;
};

Parameters initParameters(const Aabb& bounds, const TrainConfig& cfg, double background);

/// Deterministic batch assembly: frame/pixel selection and per-ray RNG keys
/// derive from (seed, step) only.
std::vector<TrainRay> makeBatch(const Dataset& data, const LossWeights& lw,
                                const TrainConfig& cfg, int step);

struct GradAllResult {
  std::vector<double> grad;  // natural-parameter gradient, registry indexing
  LossTerms loss;
  std::vector<char> kink_mask;  // rays near non-smooth points
  int kinks_excluded = 0;
};

/// Full analytic gradient over a batch. Throws NumericError (naming the
/// parameter) on non-finite entries.
GradAllResult gradAll(Parameters& params, std::span<const TrainRay> batch,
                      const LossWeights& lw, double eps_d, const TrainConfig& cfg);

/// One rendered view (all slices, depth, decomposition).
struct FrameRender {
  Image slices[3];
  Image passive;
  Image depth;
  Image active[3];
  Image passive_sum;
  Image shadow;  // expected shadow, sum_j w_j psi_j
};

FrameRender renderFrame(const Parameters& p, const RenderConfig& cfg,
                        const PinholeCamera& cam, const CameraPose& pose, uint64_t seed,
                        int threads, int stride = 1);

/// Runs the optimization. When out_dir is non-empty, writes history.csv and
/// periodic checkpoints there. Divergence (non-finite loss) aborts and the
/// result carries the last finite state.
FitResult fit(const Dataset& data, Parameters init, const TrainConfig& cfg,
              const LossWeights& lw, const std::string& out_dir);

void saveCheckpoint(const std::string& prefix, const Parameters& p, int step);
Parameters loadCheckpoint(const std::string& prefix);

// Train config + loss weights JSON round-trip (CLI config files).
void loadTrainConfigJson(const std::string& path, TrainConfig& cfg, LossWeights& lw);
void saveTrainConfigJson(const std::string& path, const TrainConfig& cfg,
                         const LossWeights& lw);

}  // namespace gvr
