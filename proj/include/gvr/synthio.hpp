// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "gvr/render.hpp"

namespace gvr {

// ---------------------------------------------------------------------------
// PFM I/O
// ---------------------------------------------------------------------------

/// Grayscale PFM ("Pf"), scale -1.0 (little endian), rows bottom-up on disk.
void writePfm(const std::string& path, const Image& img);
/// Rejects color PFMs, malformed headers and big-endian scales.
Image readPfm(const std::string& path);

// ---------------------------------------------------------------------------
// Scene specification
// ---------------------------------------------------------------------------

struct Primitive {
  enum class Type { kPlane, kSphere, kBox };
  Type type = Type::kSphere;
  // plane
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();
  // sphere
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  // box (axis-aligned)
  Vec3 half = Vec3::Ones();
  // appearance
  double albedo = 0.5;
  double ambient = 0.0;
  double view_lobe = 0.0;  // optional coefficient on the z-linear view basis

  /// Signed distance, positive outside.
  double sdf(const Vec3& x) const;
  /// Nearest forward intersection with the exact surface; false on miss.
  bool intersect(const Vec3& o, const Vec3& d, double t_min, double& t) const;
};

struct SplitCounts {
  int train = 20, val = 5, test = 5;
};

struct SceneSpec {
  Aabb bounds;
  double background_ambient = 0.0;
  std::vector<Primitive> primitives;
  PinholeCamera camera;
  std::vector<Mat4> poses;  // cam-to-world, row-major in JSON
  SplitCounts splits;
  GatingParams gating;
  bool auto_gain = true;  // rescale gains so active peaks sit near 1
  IlluminatorModel illuminator;
  RenderConfig render;
  Vec3i bake_dims = Vec3i(128, 128, 128);
  double shell_sigma = 0.0;    // m; <= 0 -> one bake voxel (max dimension)
  double surface_inset = 1.81; // shell center depth, in units of shell_sigma
  double noise_sigma = 0.0;

  void validate() const;
};

SceneSpec loadSceneSpec(const std::string& path);
void saveSceneSpec(const std::string& path, const SceneSpec& spec);

/// Camera poses on a horizontal arc looking at a target. Helper for config
/// generation ("pose_arc" sugar in the scene JSON).
std::vector<Mat4> makeArcPoses(int count, const Vec3& target, double radius,
                               double height, double span_deg);

/// The built-in three-primitive scene used by docs and tests: ground plane,
/// sphere and box under an offset illuminator, automotive gate schedule.
SceneSpec makeDefaultScene();

// ---------------------------------------------------------------------------
// Baking and capture simulation
// ---------------------------------------------------------------------------

/// Rasterizes primitives into density/reflectance/ambient grids. Surfaces
/// become Gaussian density shells (optical depth ~20 along the entering
/// normal) whose center sits `surface_inset * shell_sigma` inside the exact
/// surface, so rendered ray termination lands on the analytic surface.
void bakeScene(const SceneSpec& spec, SceneGrid& grid, ProposalGrid& proposal);

/// Analytic ray-primitive depth (distance along each pixel ray);
/// kNoSurfaceDepth where no primitive is hit.
Image analyticDepth(const SceneSpec& spec, const CameraPose& pose,
                    const PinholeCamera& cam);

struct GatedStack {
  Image slices[3];
  Image passive;
  Image depth;        // analytic ground truth
  Image shadow_mask;  // 1 = lit at the first surface, 0 = shadowed
};

/// Renders a full gated stack from the baked grid, plus ground-truth depth
/// and shadow mask. Additive Gaussian pixel noise with std noise_sigma.
GatedStack simulateCapture(const SceneSpec& spec, const SceneGrid& grid,
                           const ProposalGrid& proposal, const CameraPose& pose,
                           uint64_t seed, uint64_t frame_id, int threads);

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

struct FrameEntry {
  Mat4 pose = Mat4::Identity();
  std::string slice_paths[4];  // three active + passive
  std::string depth_path;
  std::string shadow_path;
  std::string split = "train";
};

struct Manifest {
  int width = 0, height = 0;
  PinholeCamera camera;
  Aabb bounds;
  double background_ambient = 0.0;
  GatingParams gating_gt;
  IlluminatorModel illum_gt;
  RenderConfig render;
  std::string gt_grid_path;
  std::vector<FrameEntry> frames;
};

void writeManifest(const std::string& path, const Manifest& m);
/// Parses and validates: every referenced file exists and all images share
/// the manifest dimensions. Errors name the offending path.
Manifest readManifest(const std::string& path, bool check_files = true);

/// In-memory dataset: manifest plus decoded images.
struct Frame {
  CameraPose pose;
  Image slices[4];
  Image depth;
  Image shadow;
  int split = 0;  // 0 train, 1 val, 2 test
};

struct Dataset {
  Manifest manifest;
  std::string dir;
  std::vector<Frame> frames;
  std::vector<int> train_idx, val_idx, test_idx;
};

Dataset loadDataset(const std::string& manifest_path);

/// Bakes, simulates every pose and writes the dataset directory (frames/,
/// gt_grid.ckpt, manifest.json). Returns the manifest path.
std::string generateDataset(const SceneSpec& spec, const std::string& out_dir,
                            uint64_t seed, int threads);

}  // namespace gvr
