// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gvr/gating.hpp"

using namespace gvr;

namespace {

// Readable numbers: c = 0.3 m/ns so that z'/c maps cleanly onto ns.
GatingParams referenceParams() {
  GatingParams gp;
  gp.gate_delay = {400, 500, 900};
  gp.pulse_width = {240, 240, 240};
  gp.gate_width = {500, 450, 600};
  gp.gain = {1, 1, 1};
  gp.dark = {0.01, 0.01, 0.01};
  gp.dark_passive = 0.01;
  return gp;
}

double zOfRoundTrip(double u_ns) { return u_ns * kSpeedOfLight; }

}  // namespace

TEST_CASE("profile: plateau, rising edge and outside-support values") {
  const GatingParams gp = referenceParams();
  // Plateau: xi < u < xi + t_g - t_l -> t_l.
  CHECK(gateProfile(gp, 0, zOfRoundTrip(450)) == doctest::Approx(240).epsilon(1e-12));
  // Below support.
  CHECK(gateProfile(gp, 0, zOfRoundTrip(100)) == 0.0);
  // Rising edge: u - xi + t_l.
  CHECK(gateProfile(gp, 0, zOfRoundTrip(200)) == doctest::Approx(40).epsilon(1e-12));
  // Falling edge: -u + xi + t_g.
  CHECK(gateProfile(gp, 0, zOfRoundTrip(700)) == doctest::Approx(200).epsilon(1e-12));
  // Above support.
  CHECK(gateProfile(gp, 0, zOfRoundTrip(901)) == 0.0);
}

TEST_CASE("profile: quadrature oracle agrees within 1e-6 relative") {
  const GatingParams gp = referenceParams();
  for (int k = 0; k < GatingParams::kSlices; ++k) {
    const double lo = gp.gate_delay[size_t(k)] - gp.pulse_width[size_t(k)] - 60;
    const double hi = gp.gate_delay[size_t(k)] + gp.gate_width[size_t(k)] + 60;
    for (int i = 0; i <= 2000; ++i) {
      const double u = lo + (hi - lo) * i / 2000.0;
      const double z = zOfRoundTrip(u);
      const double a = gateProfile(gp, k, z);
      const double q = gateProfileQuadrature(gp, k, z, 100000);
      CHECK(std::abs(a - q) <= 1e-6 * std::max({1.0, std::abs(a), std::abs(q)}));
    }
  }
}

TEST_CASE("profile: oracle self-consistency on plateau and edge midpoints") {
  const GatingParams gp = referenceParams();
  const double plateau = gateProfileQuadrature(gp, 0, zOfRoundTrip(450), 100000);
  CHECK(plateau == doctest::Approx(240).epsilon(1e-6));
  const double edge = gateProfileQuadrature(gp, 0, zOfRoundTrip(280), 100000);
  CHECK(edge == doctest::Approx(gateProfile(gp, 0, zOfRoundTrip(280))).epsilon(1e-6));
  CHECK(gateProfileQuadrature(gp, 0, zOfRoundTrip(100), 100000) == 0.0);
}

TEST_CASE("profile: continuity at the three case boundaries") {
  const GatingParams gp = referenceParams();
  for (int k = 0; k < GatingParams::kSlices; ++k) {
    const double xi = gp.gate_delay[size_t(k)];
    const double tl = gp.pulse_width[size_t(k)];
    const double tg = gp.gate_width[size_t(k)];
    for (double u : {xi - tl, xi, xi + tg - tl, xi + tg}) {
      const double zl = zOfRoundTrip(u) - 1e-9;
      const double zr = zOfRoundTrip(u) + 1e-9;
      CHECK(std::abs(gateProfile(gp, k, zl) - gateProfile(gp, k, zr)) < 1e-8);
    }
  }
}

TEST_CASE("profile: max value is t_l and support width is t_g + t_l") {
  const GatingParams gp = referenceParams();
  for (int k = 0; k < GatingParams::kSlices; ++k) {
    const double xi = gp.gate_delay[size_t(k)];
    const double tl = gp.pulse_width[size_t(k)];
    const double tg = gp.gate_width[size_t(k)];
    double peak = 0.0;
    double first = 1e30, last = -1e30;
    for (int i = 0; i <= 20000; ++i) {
      const double u = xi - tl - 20 + (tg + tl + 40) * i / 20000.0;
      const double v = gateProfile(gp, k, zOfRoundTrip(u));
      peak = std::max(peak, v);
      if (v > 0) {
        first = std::min(first, u);
        last = std::max(last, u);
      }
    }
    CHECK(peak == doctest::Approx(tl).epsilon(1e-9));
    CHECK(last - first == doctest::Approx(tg + tl).epsilon(1e-2));
  }
}

TEST_CASE("profile gradient: analytic cases") {
  const GatingParams gp = referenceParams();
  // Plateau point.
  ProfileEval e = gateProfileGrad(gp, 0, zOfRoundTrip(450));
  CHECK(e.segment == 2);
  CHECK(e.d_z == 0.0);
  CHECK(e.d_tl == 1.0);
  CHECK(e.d_xi == 0.0);
  // Rising edge: d/dz of (z + d0)/c - xi + t_l is 1/c.
  e = gateProfileGrad(gp, 0, zOfRoundTrip(200));
  CHECK(e.segment == 1);
  CHECK(e.d_z == doctest::Approx(1.0 / kSpeedOfLight).epsilon(1e-12));
  CHECK(e.d_xi == -1.0);
  // Outside support.
  e = gateProfileGrad(gp, 0, zOfRoundTrip(50));
  CHECK(e.segment == 0);
  CHECK(e.d_z == 0.0);
  CHECK(e.d_tl == 0.0);
}

TEST_CASE("profile gradient: matches central finite differences off kinks") {
  GatingParams gp = referenceParams();
  gp.distance_offset = 2.5;
  const RngKey key(7);
  int checked = 0;
  for (int i = 0; i < 400 && checked < 100; ++i) {
    const double u = 100 + 900 * key.uniform(uint64_t(i));
    const double z = zOfRoundTrip(u) - gp.distance_offset;
    const ProfileEval e = gateProfileGrad(gp, 0, z);
    if (e.kink_dist < 0.05) continue;  // skip near case boundaries
    ++checked;
    const double hz = 1e-3;  // meters
    const double fd_z = (gateProfile(gp, 0, z + hz) - gateProfile(gp, 0, z - hz)) / (2 * hz);
    CHECK(std::abs(fd_z - e.d_z) <= 1e-5 * std::max(1.0, std::abs(fd_z)));

    auto fd_param = [&](std::array<double, 3> GatingParams::* field) {
      GatingParams gp2 = gp;
      const double h = 1e-3;
      (gp2.*field)[0] += h;
      const double up = gateProfile(gp2, 0, z);
      (gp2.*field)[0] -= 2 * h;
      const double dn = gateProfile(gp2, 0, z);
      return (up - dn) / (2 * h);
    };
    CHECK(std::abs(fd_param(&GatingParams::gate_delay) - e.d_xi) <= 1e-5);
    CHECK(std::abs(fd_param(&GatingParams::pulse_width) - e.d_tl) <= 1e-5);
    CHECK(std::abs(fd_param(&GatingParams::gate_width) - e.d_tg) <= 1e-5);
  }
  CHECK(checked == 100);
}

TEST_CASE("gated pixel: no active term, full shadow, direct evaluation") {
  GatingParams gp = referenceParams();
  AttenuationModel none{AttenuationModel::Kind::kNone, 1.0, 0.5};
  // alpha = 0 -> ambient + dark only.
  CHECK(gatedPixel(gp, none, 0, 0.0, 2.0, 1.0, 1.0, zOfRoundTrip(450), 0.2) ==
        doctest::Approx(0.21).epsilon(1e-12));
  // psi = 0 -> ambient + dark.
  CHECK(gatedPixel(gp, none, 0, 0.7, 2.0, 0.0, 1.0, zOfRoundTrip(450), 0.2) ==
        doctest::Approx(0.21).epsilon(1e-12));
  // Direct evaluation on the plateau.
  gp.dark[0] = 0.0;
  CHECK(gatedPixel(gp, none, 0, 0.5, 2.0, 1.0, 1.0, zOfRoundTrip(450), 0.0) ==
        doctest::Approx(240.0).epsilon(1e-12));
}

TEST_CASE("gated pixel: affine in alpha, iota, psi and lambda") {
  const GatingParams gp = referenceParams();
  const AttenuationModel beta{AttenuationModel::Kind::kInverseSquare, 1.0, 0.5};
  const double z = zOfRoundTrip(450);
  const RngKey key(3);
  for (int i = 0; i < 50; ++i) {
    const double a = key.uniform(4 * uint64_t(i));
    const double io = 2.0 * key.uniform(4 * uint64_t(i) + 1);
    const double ps = key.uniform(4 * uint64_t(i) + 2);
    const double lam = key.uniform(4 * uint64_t(i) + 3);
    auto I = [&](double aa, double ii, double pp, double ll) {
      return gatedPixel(gp, beta, 1, aa, ii, pp, 0.8, z, ll);
    };
    const double base = I(a, io, ps, lam);
    const double dark = gp.dark[1];
    // Superposition in each argument.
    CHECK(I(2 * a, io, ps, lam) - dark ==
          doctest::Approx(2 * (base - lam - dark) + lam).epsilon(1e-9));
    CHECK(I(a, 2 * io, ps, lam) - dark ==
          doctest::Approx(2 * (base - lam - dark) + lam).epsilon(1e-9));
    CHECK(I(a, io, 2 * ps, lam) - dark ==
          doctest::Approx(2 * (base - lam - dark) + lam).epsilon(1e-9));
    CHECK(I(a, io, ps, 2 * lam) == doctest::Approx(base + lam).epsilon(1e-9));
  }
}

TEST_CASE("gating params: invariants rejected") {
  GatingParams gp = referenceParams();
  gp.gate_width[1] = 100;  // < pulse_width
  CHECK_THROWS_AS(gp.validate(), ConfigError);
  gp = referenceParams();
  gp.gate_delay[0] = 10;  // < pulse_width
  CHECK_THROWS_AS(gp.validate(), ConfigError);
  gp = referenceParams();
  gp.gain[2] = 0.0;
  CHECK_THROWS_AS(gp.validate(), ConfigError);
  gp = referenceParams();
  gp.dark[0] = -0.1;
  CHECK_THROWS_AS(gp.validate(), ConfigError);
  CHECK_THROWS_AS(gateProfileQuadrature(referenceParams(), 0, 1.0, 10), ConfigError);
}

TEST_CASE("attenuation: bounded, monotone, off switch") {
  const AttenuationModel beta{AttenuationModel::Kind::kInverseSquare, 1.0, 0.5};
  double prev = 2.0;
  for (double z = 1.0; z < 300.0; z *= 1.3) {
    const double b = beta(z);
    CHECK(b > 0.0);
    CHECK(b <= 1.0);
    CHECK(b <= prev);
    prev = b;
  }
  const AttenuationModel off{AttenuationModel::Kind::kNone, 1.0, 0.5};
  CHECK(off(123.0) == 1.0);
  CHECK(off.ddz(123.0) == 0.0);
}
