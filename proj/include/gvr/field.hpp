// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "gvr/core.hpp"

namespace gvr {

// ---------------------------------------------------------------------------
// Directional basis: real spherical harmonics, order 2 (9 functions).
// Ambient uses all 9 in the view direction; reflectance uses all 9 in the
// view direction plus the 3 linear terms in the incident light direction
// (the constant slot is shared).
// ---------------------------------------------------------------------------

inline constexpr int kShCount = 9;
inline constexpr int kReflCoeffs = 12;  // 9 (view) + 3 (light, linear only)
inline constexpr int kAmbCoeffs = 9;

void shBasis9(const Vec3& d, double out[kShCount]);
/// Basis values plus d(basis_i)/d(d) rows; d treated as a free 3-vector.
void shBasis9Jac(const Vec3& d, double out[kShCount], Vec3 jac[kShCount]);

// ---------------------------------------------------------------------------
// Trilinear stencil shared by value, spatial-gradient and adjoint paths.
// ---------------------------------------------------------------------------

struct TriStencil {
  bool inside = false;
  int corner[8] = {0};   // flat vertex indices
  double w[8] = {0};     // interpolation weights, sum 1
  Vec3 dw[8];            // d(w_c)/dx in world units
};

/// Vertex-lattice stencil for point x on a dims-vertex grid over bounds.
/// Points outside bounds yield inside=false.
TriStencil triStencil(const Aabb& bounds, const Vec3i& dims, const Vec3& x);

// ---------------------------------------------------------------------------
// Scene grids
// ---------------------------------------------------------------------------

/// Explicit voxel scene: density plus directional-basis appearance fields.
/// Raw density maps through softplus; reflectance logit through sigmoid;
/// ambient through softplus. Out-of-bounds queries see zero density and the
/// background ambient constant.
struct SceneGrid {
  Aabb bounds;
  Vec3i density_dims = Vec3i(0, 0, 0);  // vertices per axis
  Vec3i app_dims = Vec3i(0, 0, 0);
  std::vector<double> density_raw;      // nx*ny*nz
  std::vector<double> refl;             // ax*ay*az * kReflCoeffs, vertex-major
  std::vector<double> ambient;          // ax*ay*az * kAmbCoeffs, vertex-major
  double background_ambient = 0.0;

  void allocate(const Aabb& b, const Vec3i& density, const Vec3i& appearance);
  size_t densityCount() const {
    return size_t(density_dims.x()) * density_dims.y() * density_dims.z();
  }
  size_t appCount() const { return size_t(app_dims.x()) * app_dims.y() * app_dims.z(); }

  double rawDensityAt(const Vec3& x) const;  // trilinear raw value, 0 outside
  double densityAt(const Vec3& x) const { return softplus(rawDensityAt(x)); }
};

struct DensitySample {
  double raw = 0.0;
  double sigma = 0.0;
  /// Interpolated appearance coefficient vector at x (the spatial embedding):
  /// reflectance coefficients followed by ambient coefficients.
  double embedding[kReflCoeffs + kAmbCoeffs] = {0};
  bool inside = false;
};

DensitySample queryDensity(const SceneGrid& grid, const Vec3& x);

struct NormalEval {
  Vec3 n = Vec3::Zero();       // -grad(sigma)/|grad(sigma)|
  Vec3 grad = Vec3::Zero();    // grad(sigma) in world units
  double grad_norm = 0.0;
  bool degenerate = true;
};

/// Density-gradient normal from the trilinear interpolant. Degenerate when
/// |grad sigma| <= eps (flagged; excluded from normal-dependent losses).
NormalEval queryNormal(const SceneGrid& grid, const Vec3& x, double eps = 1e-8);

/// sigmoid(c0*Y0(d) + sum_i c_i Y_i(d) + sum_a c'_a Y_a(omega)), in [0,1].
double queryReflectance(const SceneGrid& grid, const Vec3& x, const Vec3& d,
                        const Vec3& omega);
/// The pre-sigmoid logit of queryReflectance.
double reflectanceLogit(const SceneGrid& grid, const Vec3& x, const Vec3& d,
                        const Vec3& omega);

/// softplus(sum_i a_i(x) Y_i(d)); background constant outside bounds.
double queryAmbient(const SceneGrid& grid, const Vec3& x, const Vec3& d);

// ---------------------------------------------------------------------------
// Proposal grid
// ---------------------------------------------------------------------------

/// Coarse non-negative density grid steering quadrature sample placement.
/// Refreshed from the scene density by periodic max-pooling distillation.
struct ProposalGrid {
  Aabb bounds;
  Vec3i dims = Vec3i(0, 0, 0);
  std::vector<double> density;

  void allocate(const Aabb& b, const Vec3i& d);
  double at(const Vec3& x) const;  // trilinear, 0 outside
  /// density[v] = max over scene vertices mapping to v of softplus(raw).
  void distillFrom(const SceneGrid& scene);
};

struct RaySegment {
  double t0 = 0.0;
  double t1 = 0.0;
  bool valid = false;
};

/// Per-bin sampling PDF over the ray segment inside the grid bounds:
/// local-opacity bin masses from the coarse densities, mixed with a uniform
/// floor. Empty when the ray misses the bounds. pdf sums to 1.
struct ProposalWeights {
  RaySegment segment;
  std::vector<double> pdf;  // n_bins entries
};

ProposalWeights proposalWeights(const ProposalGrid& grid, const Vec3& origin,
                                const Vec3& dir, double near, double far, int n_bins,
                                double floor_frac = 0.1);

// ---------------------------------------------------------------------------
// Grid checkpoint file: magic "GFGRID1", little-endian float32 payloads.
// ---------------------------------------------------------------------------

void saveGridCheckpoint(const std::string& path, const SceneGrid& grid,
                        const ProposalGrid& proposal);
void loadGridCheckpoint(const std::string& path, SceneGrid& grid, ProposalGrid& proposal);

}  // namespace gvr
