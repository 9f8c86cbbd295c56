// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>

#include "gvr/core.hpp"

namespace gvr {

/// Per-slice gate timing and gain. Times in nanoseconds. The round-trip
/// variable everywhere is the total optical path length z (camera -> point ->
/// illuminator) in meters; the profile evaluates at u = (z + d0) / c.
struct GatingParams {
  static constexpr int kSlices = 3;

  std::array<double, kSlices> gate_delay{};    // xi_k, ns
  std::array<double, kSlices> pulse_width{};   // t_l,k, ns
  std::array<double, kSlices> gate_width{};    // t_g,k, ns
  std::array<double, kSlices> gain{};          // m_k, accumulated pulse count
  std::array<double, kSlices> dark{};          // D_k, additive level
  double dark_passive = 0.0;                   // D_P for the passive slice
  double distance_offset = 0.0;                // d0, meters

  /// Throws ConfigError when any invariant is violated:
  /// t_l > 0, t_g >= t_l, xi >= t_l, gain > 0, dark >= 0.
  void validate() const;
};

/// Distance-dependent decay of the reflected pulse, applied to the total
/// path length. Inverse-square with a near-field clamp, or off entirely.
struct AttenuationModel {
  enum class Kind { kInverseSquare, kNone };
  Kind kind = Kind::kInverseSquare;
  double z_ref = 1.0;  // m
  double z_min = 0.5;  // m, clamp to avoid the singularity at the sensor

  double operator()(double z) const {
    if (kind == Kind::kNone) return 1.0;
    const double zc = std::max(z, z_min);
    const double q = z_ref / zc;
    return q * q;
  }
  /// d(beta)/dz; zero on the clamped branch.
  double ddz(double z) const {
    if (kind == Kind::kNone || z <= z_min) return 0.0;
    const double b = (*this)(z);
    return -2.0 * b / z;
  }
};

/// Trapezoidal range-intensity profile value and its partial derivatives.
/// segment: 0 = outside support, 1 = rising edge, 2 = plateau, 3 = falling.
/// kink_dist is the distance (ns) from u to the nearest case boundary;
/// gradient consumers use it to exclude non-differentiable points.
struct ProfileEval {
  double value = 0.0;
  double d_xi = 0.0;
  double d_tl = 0.0;
  double d_tg = 0.0;
  double d_z = 0.0;  // per meter of total path (includes the 1/c factor)
  int segment = 0;
  double kink_dist = 0.0;
};

/// C~_k at total path length z (meters). Piecewise linear and continuous:
/// rising edge, plateau of height t_l, falling edge, zero outside.
double gateProfile(const GatingParams& gp, int k, double z);

/// Profile with partials w.r.t. xi_k, t_l,k, t_g,k, z and d0 (d/d d0 equals
/// d/dz). At case boundaries returns the right-limit subgradient.
ProfileEval gateProfileGrad(const GatingParams& gp, int k, double z);

/// Test oracle: quadrature of the defining time integral with rectangular
/// gate and pulse and unit decay. Integrates over the gate window with the
/// partition refined at the pulse-indicator breakpoints and a composite
/// midpoint rule per piece, so the quadrature converges despite the
/// discontinuous integrand.
double gateProfileQuadrature(const GatingParams& gp, int k, double z, int n_steps);

/// Single-point gated intensity:
///   m_k * alpha * iota * psi * |n.w| * C~_k(z) * beta(z) + lambda + dark_k.
double gatedPixel(const GatingParams& gp, const AttenuationModel& beta, int k,
                  double alpha, double iota, double psi, double cos_term, double z,
                  double lambda);

}  // namespace gvr
