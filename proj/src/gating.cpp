// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/gating.hpp"

#include <algorithm>

namespace gvr {

void GatingParams::validate() const {
  for (int k = 0; k < kSlices; ++k) {
    if (!(pulse_width[k] > 0.0))
      throw ConfigError("gating: pulse_width must be > 0 (slice " + std::to_string(k) + ")");
    if (!(gate_width[k] > 0.0))
      throw ConfigError("gating: gate_width must be > 0 (slice " + std::to_string(k) + ")");
    if (gate_width[k] < pulse_width[k])
      throw ConfigError("gating: gate_width must be >= pulse_width (slice " +
                        std::to_string(k) + ")");
    if (gate_delay[k] < pulse_width[k])
      throw ConfigError("gating: gate_delay must be >= pulse_width (slice " +
                        std::to_string(k) + ")");
    if (!(gain[k] > 0.0))
      throw ConfigError("gating: gain must be > 0 (slice " + std::to_string(k) + ")");
    if (dark[k] < 0.0)
      throw ConfigError("gating: dark must be >= 0 (slice " + std::to_string(k) + ")");
  }
  if (dark_passive < 0.0) throw ConfigError("gating: dark_passive must be >= 0");
}

double gateProfile(const GatingParams& gp, int k, double z) {
  const double u = (z + gp.distance_offset) / kSpeedOfLight;
  const double xi = gp.gate_delay[k];
  const double tl = gp.pulse_width[k];
  const double tg = gp.gate_width[k];
  if (u < xi - tl || u >= xi + tg) return 0.0;
  if (u < xi) return u - xi + tl;
  if (u < xi + tg - tl) return tl;
  return -u + xi + tg;
}

ProfileEval gateProfileGrad(const GatingParams& gp, int k, double z) {
  const double u = (z + gp.distance_offset) / kSpeedOfLight;
  const double xi = gp.gate_delay[k];
  const double tl = gp.pulse_width[k];
  const double tg = gp.gate_width[k];
  const double inv_c = 1.0 / kSpeedOfLight;

  ProfileEval e;
  const double b0 = xi - tl, b1 = xi, b2 = xi + tg - tl, b3 = xi + tg;
  e.kink_dist = std::min(std::min(std::abs(u - b0), std::abs(u - b1)),
                         std::min(std::abs(u - b2), std::abs(u - b3)));
  // Half-open cases give the right-limit subgradient at each boundary.
  if (u < b0 || u >= b3) {
    e.segment = 0;
    return e;
  }
  if (u < b1) {
    e.segment = 1;
    e.value = u - xi + tl;
    e.d_xi = -1.0;
    e.d_tl = 1.0;
    e.d_z = inv_c;
    return e;
  }
  if (u < b2) {
    e.segment = 2;
    e.value = tl;
    e.d_tl = 1.0;
    return e;
  }
  e.segment = 3;
  e.value = -u + xi + tg;
  e.d_xi = 1.0;
  e.d_tg = 1.0;
  e.d_z = -inv_c;
  return e;
}

double gateProfileQuadrature(const GatingParams& gp, int k, double z, int n_steps) {
  gp.validate();
  if (n_steps < 1000) throw ConfigError("profile quadrature: n_steps must be >= 1000");
  const double u = (z + gp.distance_offset) / kSpeedOfLight;
  const double xi = gp.gate_delay[k];
  const double tl = gp.pulse_width[k];
  const double tg = gp.gate_width[k];

  // Integrand of the defining integral with rectangular gate and pulse:
  //   f(t) = g(t - xi) * p(t - u),  g = 1 on [0, t_g], p = 1 on [0, t_l].
  auto integrand = [&](double t) {
    const double gs = t - xi;
    const double ps = t - u;
    const bool g_on = gs >= 0.0 && gs <= tg;
    const bool p_on = ps >= 0.0 && ps <= tl;
    return (g_on && p_on) ? 1.0 : 0.0;
  };

  // The integrand jumps where the pulse indicator switches. Refining the
  // trapezoid partition at those points restores convergence.
  double pieces[4] = {xi, xi + tg, 0, 0};
  int np = 2;
  for (double b : {u, u + tl}) {
    if (b > xi && b < xi + tg) {
      pieces[np++] = b;
    }
  }
  std::sort(pieces, pieces + np);

  // Composite midpoint per piece: nodes never land on a breakpoint, so the
  // rule is exact for the piecewise-constant integrand.
  const double total = tg;
  double sum = 0.0;
  for (int p = 0; p + 1 < np; ++p) {
    const double a = pieces[p], b = pieces[p + 1];
    const double len = b - a;
    if (len <= 0.0) continue;
    const int n = std::max(2, int(std::ceil(double(n_steps) * len / total)));
    const double h = len / n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += integrand(a + h * (i + 0.5));
    sum += acc * h;
  }
  return sum;
}

double gatedPixel(const GatingParams& gp, const AttenuationModel& beta, int k,
                  double alpha, double iota, double psi, double cos_term, double z,
                  double lambda) {
  const double profile = gateProfile(gp, k, z);
  return gp.gain[k] * alpha * iota * psi * cos_term * profile * beta(z) + lambda +
         gp.dark[k];
}

}  // namespace gvr
