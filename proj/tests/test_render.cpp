// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gvr/render.hpp"

using namespace gvr;

namespace {

struct TestScene {
  SceneGrid grid;
  ProposalGrid proposal;
  GatingParams gating;
  IlluminatorModel illum;
  RenderConfig config;

  SceneContext ctx() const { return {grid, proposal, gating, illum, config}; }
};

// Empty box [-5,5]^2 x [0,20] with desk-scale gates covering the volume.
TestScene makeScene() {
  TestScene s;
  s.grid.allocate(Aabb{Vec3(-5, -5, 0), Vec3(5, 5, 20)}, Vec3i(33, 33, 65),
                  Vec3i(9, 9, 17));
  std::fill(s.grid.density_raw.begin(), s.grid.density_raw.end(), -30.0);
  s.gating.gate_delay = {60, 90, 130};
  s.gating.pulse_width = {50, 50, 50};
  s.gating.gate_width = {70, 80, 90};
  s.gating.gain = {1, 1, 1};
  s.gating.dark = {0.01, 0.015, 0.02};
  s.gating.dark_passive = 0.005;
  s.illum.eta = 1.0;
  s.illum.sigma = Vec2(0.5, 0.5);
  s.illum.order = Vec2(1, 1);
  s.config.n_samples = 64;
  s.config.shadow.step = 0.15;
  s.config.shadow.bias = 0.8;
  s.config.attenuation.kind = AttenuationModel::Kind::kNone;
  s.proposal.allocate(s.grid.bounds, Vec3i(9, 9, 9));
  s.proposal.distillFrom(s.grid);
  return s;
}

// Gaussian density shell centered `1.81 sigma_s` behind the plane z = z0.
void addPlaneShell(SceneGrid& g, double z0, double sigma_s = 0.25, double tau = 20.0) {
  const double inset = 1.81 * sigma_s;
  const double peak = tau / (std::sqrt(2 * M_PI) * sigma_s);
  const Vec3i d = g.density_dims;
  for (int z = 0; z < d.z(); ++z) {
    const double zc = g.bounds.lo.z() + g.bounds.extent().z() * z / (d.z() - 1);
    const double arg = (zc - z0 - inset) / sigma_s;
    const double sigma = peak * std::exp(-0.5 * arg * arg);
    if (sigma < 1e-9) continue;
    for (int y = 0; y < d.y(); ++y)
      for (int x = 0; x < d.x(); ++x) {
        double& raw = g.density_raw[(size_t(z) * d.y() + y) * d.x() + x];
        raw = std::max(raw, softplusInv(sigma));
      }
  }
}

void setUniformAlbedo(SceneGrid& g, double albedo) {
  for (size_t v = 0; v < g.appCount(); ++v)
    g.refl[v * kReflCoeffs] = logit(albedo) / 0.28209479177387814;
}

void setUniformAmbient(SceneGrid& g, double lambda) {
  for (size_t v = 0; v < g.appCount(); ++v)
    g.ambient[v * kAmbCoeffs] =
        lambda > 1e-9 ? softplusInv(lambda) / 0.28209479177387814 : -88.0;
}

Ray axialRay() {
  Ray r;
  r.origin = Vec3(0, 0, -1);
  r.dir = Vec3(0, 0, 1);
  return r;
}

}  // namespace

TEST_CASE("sampling: stratified uniform PDF lands one sample per stratum") {
  TestScene s = makeScene();
  Ray r = axialRay();
  r.near = 0.0;
  r.far = 100.0;
  const SampleSet set = sampleCameraRay(s.proposal, r, 4, 16, 0.1, RngKey(5));
  REQUIRE(set.l.size() == 4);
  const double t0 = set.segment.t0, t1 = set.segment.t1;
  CHECK(t0 == doctest::Approx(1.0));  // ray starts 1 m before the box
  CHECK(t1 == doctest::Approx(21.0));
  for (int j = 0; j < 4; ++j) {
    CHECK(set.l[size_t(j)] >= t0 + (t1 - t0) * j / 4);
    CHECK(set.l[size_t(j)] < t0 + (t1 - t0) * (j + 1) / 4);
  }
  for (int j = 0; j + 1 < 4; ++j) CHECK(set.l[size_t(j)] < set.l[size_t(j + 1)]);
  CHECK(set.delta[3] == set.delta[2]);
}

TEST_CASE("sampling: inverse CDF of a two-bin PDF") {
  // Masses 0.25 / 0.75; u = 0.5 lands 1/3 into the second bin. Emulates the
  // sampler's inversion arithmetic on a hand-built PDF.
  const std::vector<double> pdf = {0.25, 0.75};
  const double u = 0.5;
  double cum = 0.0;
  int bin = 0;
  while (bin < 1 && cum + pdf[size_t(bin)] < u) cum += pdf[size_t(bin++)];
  const double frac = (u - cum) / pdf[size_t(bin)];
  CHECK(bin == 1);
  CHECK(frac == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("sampling: concentrated PDF attracts samples") {
  TestScene s = makeScene();
  addPlaneShell(s.grid, 10.0, 0.3, 40.0);
  s.proposal.distillFrom(s.grid);
  Ray r = axialRay();
  int inside = 0, total = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const SampleSet set =
        sampleCameraRay(s.proposal, r, 20, 64, 0.1, RngKey(uint64_t(trial)));
    for (double l : set.l) {
      total += 1;
      const double z = r.origin.z() + l;
      // The coarse proposal spreads the shell over roughly one proposal cell.
      if (z > 7.4 && z < 13.1) ++inside;
    }
  }
  CHECK(double(inside) / total >= 0.8);
}

TEST_CASE("quadrature: telescoping identity and spec cases") {
  std::vector<double> w, T;
  quadratureWeights({1e6}, {1.0}, w, T);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));

  quadratureWeights({std::log(2.0), 1e9}, {1.0, 1.0}, w, T);
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-12));

  quadratureWeights({0, 0, 0}, {1, 1, 1}, w, T);
  for (double v : w) CHECK(v == 0.0);
  CHECK(T[3] == 1.0);

  // Telescoping: sum w = 1 - T_end.
  const RngKey key(9);
  std::vector<double> sig(32), del(32);
  for (int i = 0; i < 32; ++i) {
    sig[size_t(i)] = 3.0 * key.uniform(2 * uint64_t(i));
    del[size_t(i)] = 0.1 + key.uniform(2 * uint64_t(i) + 1);
  }
  quadratureWeights(sig, del, w, T);
  double sum = 0.0;
  for (int i = 31; i >= 0; --i) sum += w[size_t(i)];
  CHECK(sum == doctest::Approx(1.0 - T[32]).epsilon(1e-12));
  for (double v : w) CHECK(v >= 0.0);

  // Subdividing a zero-density interval changes nothing.
  std::vector<double> w2, T2, w3, T3;
  quadratureWeights({1.0, 0.0, 2.0}, {0.5, 1.0, 0.5}, w2, T2);
  quadratureWeights({1.0, 0.0, 0.0, 0.0, 2.0}, {0.5, 0.3, 0.3, 0.4, 0.5}, w3, T3);
  CHECK(w3[0] == w2[0]);
  CHECK(w3[4] == w2[2]);
  CHECK(T3[5] == T2[3]);
}

TEST_CASE("render: empty scene gives dark plus background, no surface") {
  TestScene s = makeScene();
  s.grid.background_ambient = 0.3;
  RayOptions opts;
  opts.sample_key = RngKey(1);
  const RayOutputs ro = renderRay(s.ctx(), axialRay(), CameraPose{}, opts);
  for (int k = 0; k < 3; ++k)
    CHECK(ro.intensity[size_t(k)] ==
          doctest::Approx(0.3 + s.gating.dark[size_t(k)]).epsilon(1e-9));
  CHECK(ro.passive == doctest::Approx(0.3 + s.gating.dark_passive).epsilon(1e-9));
  CHECK(ro.depth == kNoSurfaceDepth);

  Ray miss;
  miss.origin = Vec3(50, 50, -1);
  miss.dir = Vec3(0, 0, 1);
  const RayOutputs mo = renderRay(s.ctx(), miss, CameraPose{}, opts);
  CHECK(mo.intensity[0] == doctest::Approx(0.3 + s.gating.dark[0]));
  CHECK(mo.weight_sum == 0.0);
}

TEST_CASE("render: eta = 0 reduces gated slices to passive plus dark offset") {
  TestScene s = makeScene();
  addPlaneShell(s.grid, 10.0);
  setUniformAlbedo(s.grid, 0.6);
  setUniformAmbient(s.grid, 0.2);
  s.proposal.distillFrom(s.grid);
  s.illum.eta = 0.0;
  RayOptions opts;
  const RngKey base(77);
  for (int i = 0; i < 50; ++i) {
    Ray r = axialRay();
    r.dir = (Vec3(0.4 * base.uniform(2 * uint64_t(i)) - 0.2,
                  0.4 * base.uniform(2 * uint64_t(i) + 1) - 0.2, 1.0))
                .normalized();
    opts.sample_key = base.sub(uint64_t(i));
    const RayOutputs ro = renderRay(s.ctx(), r, CameraPose{}, opts);
    for (int k = 0; k < 3; ++k) {
      CHECK(ro.active_sum[size_t(k)] == 0.0);
      CHECK(ro.intensity[size_t(k)] ==
            ro.passive - s.gating.dark_passive + s.gating.dark[size_t(k)]);
    }
  }
}

TEST_CASE("render: component identity is exact on random rays") {
  TestScene s = makeScene();
  addPlaneShell(s.grid, 12.0);
  setUniformAlbedo(s.grid, 0.5);
  setUniformAmbient(s.grid, 0.15);
  s.grid.background_ambient = 0.1;
  const RngKey noise(123);
  for (size_t i = 0; i < s.grid.density_raw.size(); ++i)
    s.grid.density_raw[i] += 0.3 * noise.uniform(i);
  s.proposal.distillFrom(s.grid);
  s.illum.trans = Vec3(0.4, -0.2, 0);

  const RngKey base(31);
  RayOptions opts;
  for (int i = 0; i < 1000; ++i) {
    Ray r;
    r.origin = Vec3(4 * base.uniform(4 * uint64_t(i)) - 2,
                    4 * base.uniform(4 * uint64_t(i) + 1) - 2, -1);
    r.dir = (Vec3(0.5 * base.uniform(4 * uint64_t(i) + 2) - 0.25,
                  0.5 * base.uniform(4 * uint64_t(i) + 3) - 0.25, 1.0))
                .normalized();
    opts.sample_key = base.sub(uint64_t(i));
    const RayOutputs ro = renderRay(s.ctx(), r, CameraPose{}, opts);
    for (int k = 0; k < 3; ++k)
      CHECK(ro.intensity[size_t(k)] ==
            ro.active_sum[size_t(k)] + ro.passive_sum + s.gating.dark[size_t(k)]);
    CHECK(ro.passive == ro.passive_sum + s.gating.dark_passive);
  }
}

TEST_CASE("render: depth of an opaque plane and of twin translucent planes") {
  TestScene s = makeScene();
  addPlaneShell(s.grid, 10.0);
  s.proposal.distillFrom(s.grid);
  RayOptions opts;
  opts.sample_key = RngKey(11);
  Ray r = axialRay();
  const RayOutputs ro = renderRay(s.ctx(), r, CameraPose{}, opts);
  CHECK(ro.weight_sum > 0.999);
  CHECK(std::abs(ro.depth - 11.0) < 0.4);

  // Half-opacity slab around 5 plus opaque backstop at 15: near-equal
  // weights at ray distances ~6 and ~16 give expected depth ~11. The slab is
  // uniform and grid-aligned so its optical depth interpolates cleanly.
  TestScene s2 = makeScene();
  {
    const Vec3i d = s2.grid.density_dims;
    const double sigma = std::log(2.0) / 2.1875;  // ln 2 over slab + edge ramps
    for (int z = 0; z < d.z(); ++z) {
      const double zc = s2.grid.bounds.extent().z() * z / (d.z() - 1);
      if (zc < 4.0 || zc > 6.0) continue;
      for (int y = 0; y < d.y(); ++y)
        for (int x = 0; x < d.x(); ++x)
          s2.grid.density_raw[(size_t(z) * d.y() + y) * d.x() + x] = softplusInv(sigma);
    }
  }
  addPlaneShell(s2.grid, 15.0, 0.25, 2000.0);
  s2.proposal.distillFrom(s2.grid);
  // The translucent slab draws few proposal samples (opacity-proportional),
  // so resolve it with a denser quadrature and average the jitter noise.
  s2.config.n_samples = 256;
  double depth_mean = 0;
  const int reps = 8;
  for (int t = 0; t < reps; ++t) {
    opts.sample_key = RngKey(100 + uint64_t(t));
    const RayOutputs ro2 = renderRay(s2.ctx(), r, CameraPose{}, opts);
    CHECK(ro2.weight_sum > 0.999);
    depth_mean += ro2.depth / reps;
  }
  CHECK(std::abs(depth_mean - 11.0) < 0.5);
}

TEST_CASE("render: doubling sample count moves smooth-scene values < 1e-2 relative") {
  TestScene s = makeScene();
  const Vec3i d = s.grid.density_dims;
  for (int z = 0; z < d.z(); ++z) {
    const double zc = s.grid.bounds.extent().z() * z / (d.z() - 1);
    const double sigma = 0.12 * std::exp(-(zc - 9.0) * (zc - 9.0) / 16.0) + 0.02;
    for (int y = 0; y < d.y(); ++y)
      for (int x = 0; x < d.x(); ++x)
        s.grid.density_raw[(size_t(z) * d.y() + y) * d.x() + x] = softplusInv(sigma);
  }
  setUniformAlbedo(s.grid, 0.6);
  setUniformAmbient(s.grid, 0.2);
  s.proposal.distillFrom(s.grid);
  Ray r = axialRay();
  TestScene s_hi = s;
  s_hi.config.n_samples = 128;
  // Compare estimator means over jitter draws (stratification noise is part
  // of either estimator).
  double lo_mean[4] = {0, 0, 0, 0}, hi_mean[4] = {0, 0, 0, 0};
  const int reps = 24;
  for (int t = 0; t < reps; ++t) {
    RayOptions opts;
    opts.sample_key = RngKey(uint64_t(t));
    const RayOutputs lo = renderRay(s.ctx(), r, CameraPose{}, opts);
    const RayOutputs hi = renderRay(s_hi.ctx(), r, CameraPose{}, opts);
    for (int k = 0; k < 3; ++k) {
      lo_mean[k] += lo.intensity[size_t(k)] / reps;
      hi_mean[k] += hi.intensity[size_t(k)] / reps;
    }
    lo_mean[3] += lo.passive / reps;
    hi_mean[3] += hi.passive / reps;
  }
  for (int k = 0; k < 4; ++k)
    CHECK(std::abs(lo_mean[k] - hi_mean[k]) <=
          1e-2 * std::max(1.0, std::abs(hi_mean[k])));
}

TEST_CASE("render: occluder kills active, leaves passive bit-identical") {
  TestScene s = makeScene();
  addPlaneShell(s.grid, 14.0);  // lit wall
  setUniformAlbedo(s.grid, 0.7);
  setUniformAmbient(s.grid, 0.25);
  s.illum.trans = Vec3(3.0, 0, 0);  // offset emitter
  s.proposal.distillFrom(s.grid);

  // Dense occluder between the emitter (x = 3) and the wall patch at x = 0,
  // positioned off the camera ray so its samples never touch it.
  TestScene s_occ = s;
  {
    const Vec3i d = s_occ.grid.density_dims;
    for (int z = 0; z < d.z(); ++z)
      for (int y = 0; y < d.y(); ++y)
        for (int x = 0; x < d.x(); ++x) {
          const Vec3 p = s_occ.grid.bounds.lo +
                         s_occ.grid.bounds.extent().cwiseProduct(
                             Vec3(double(x) / (d.x() - 1), double(y) / (d.y() - 1),
                                  double(z) / (d.z() - 1)));
          if (p.x() > 1.2 && p.x() < 2.2 && std::abs(p.y()) < 4.0 && p.z() > 6.0 &&
              p.z() < 8.0)
            s_occ.grid.density_raw[(size_t(z) * d.y() + y) * d.x() + x] =
                softplusInv(60.0);
        }
    s_occ.proposal = s.proposal;  // camera samples stay bit-identical
  }

  Ray r = axialRay();
  RayOptions opts;
  opts.sample_key = RngKey(5);
  opts.need_psi_all = true;
  const RayOutputs lit = renderRay(s.ctx(), r, CameraPose{}, opts);
  const RayOutputs occ = renderRay(s_occ.ctx(), r, CameraPose{}, opts);
  CHECK(lit.active_sum[0] > 1e-3);
  for (int k = 0; k < 3; ++k)
    CHECK(occ.active_sum[size_t(k)] <= 1e-3 * std::max(lit.active_sum[size_t(k)], 1e-30));
  CHECK(occ.passive == lit.passive);  // camera path untouched
  CHECK(occ.expected_shadow / occ.weight_sum < 0.05);
  CHECK(lit.expected_shadow / lit.weight_sum > 0.95);
}

TEST_CASE("render: enlarging bounds around empty margin is a no-op for fixed rays") {
  TestScene s = makeScene();
  addPlaneShell(s.grid, 10.0);
  setUniformAlbedo(s.grid, 0.5);
  setUniformAmbient(s.grid, 0.1);
  s.proposal.distillFrom(s.grid);

  // Same voxel size (0.3125), margins of whole voxels, so vertices of the
  // enlarged grid coincide with the original where they overlap. The
  // sampling device (proposal) is shared so quadrature nodes are identical;
  // only the out-of-bounds density behavior is under test.
  TestScene s_big = makeScene();
  s_big.grid.allocate(Aabb{Vec3(-7.5, -7.5, -2.5), Vec3(7.5, 7.5, 22.5)},
                      Vec3i(49, 49, 81), Vec3i(9, 9, 17));
  std::fill(s_big.grid.density_raw.begin(), s_big.grid.density_raw.end(), -30.0);
  addPlaneShell(s_big.grid, 10.0);
  setUniformAlbedo(s_big.grid, 0.5);
  setUniformAmbient(s_big.grid, 0.1);
  s_big.grid.background_ambient = s.grid.background_ambient;
  s_big.proposal = s.proposal;

  Ray r;
  r.origin = Vec3(0.1, -0.2, 1.0);  // inside both boxes
  r.dir = Vec3(0, 0, 1);
  r.near = 0.0;
  r.far = 18.0;  // ends inside both boxes
  RayOptions opts;
  opts.sample_key = RngKey(3);
  const RayOutputs a = renderRay(s.ctx(), r, CameraPose{}, opts);
  const RayOutputs b = renderRay(s_big.ctx(), r, CameraPose{}, opts);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(a.intensity[size_t(k)] - b.intensity[size_t(k)]) < 1e-9);
  CHECK(std::abs(a.passive - b.passive) < 1e-9);
}

TEST_CASE("pixel rays: unit direction, center convention") {
  PinholeCamera cam;
  cam.width = 8;
  cam.height = 6;
  cam.fx = cam.fy = 10;
  cam.cx = 4;
  cam.cy = 3;
  CameraPose pose;
  const Ray center = pixelRay(cam, pose, 3, 2);
  CHECK(center.dir.norm() == doctest::Approx(1.0).epsilon(1e-12));
  const Ray corner = pixelRay(cam, pose, 0, 0);
  CHECK(corner.dir.x() < 0);
  CHECK(corner.dir.y() < 0);
  CHECK(corner.dir.z() > 0);
}
