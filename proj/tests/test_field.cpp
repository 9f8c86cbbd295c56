// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "gvr/field.hpp"
#include "gvr/render.hpp"

using namespace gvr;

namespace {

SceneGrid makeGrid(const Vec3i& d = Vec3i(9, 9, 9), const Vec3i& a = Vec3i(5, 5, 5)) {
  SceneGrid g;
  g.allocate(Aabb{Vec3(0, 0, 0), Vec3(4, 4, 4)}, d, a);
  return g;
}

Vec3 randomDir(const RngKey& key, uint64_t i) {
  const double z = key.uniform(2 * i) * 2 - 1;
  const double phi = key.uniform(2 * i + 1) * 2 * M_PI;
  const double r = std::sqrt(std::max(0.0, 1 - z * z));
  return Vec3(r * std::cos(phi), r * std::sin(phi), z);
}

}  // namespace

TEST_CASE("density: constant field, vertex identity, trilinear center weight") {
  SceneGrid g = makeGrid();
  std::fill(g.density_raw.begin(), g.density_raw.end(), 1.3);
  CHECK(queryDensity(g, Vec3(1.234, 2.5, 3.1)).sigma ==
        doctest::Approx(softplus(1.3)).epsilon(1e-12));

  // Exact value at a grid vertex (cell size 0.5).
  std::fill(g.density_raw.begin(), g.density_raw.end(), 0.0);
  const int nx = 9, ny = 9;
  auto flat = [&](int x, int y, int z) { return (z * ny + y) * nx + x; };
  g.density_raw[flat(2, 4, 6)] = 2.0;
  CHECK(queryDensity(g, Vec3(1.0, 2.0, 3.0)).raw == doctest::Approx(2.0).epsilon(1e-12));

  // Cell center sees 1/8 of a single corner.
  std::fill(g.density_raw.begin(), g.density_raw.end(), 0.0);
  g.density_raw[flat(3, 3, 3)] = 8.0;
  CHECK(queryDensity(g, Vec3(1.75, 1.75, 1.75)).raw == doctest::Approx(1.0).epsilon(1e-12));

  // Outside bounds: zero density.
  CHECK(queryDensity(g, Vec3(-1, 0, 0)).sigma == 0.0);
  CHECK(!queryDensity(g, Vec3(-1, 0, 0)).inside);
}

TEST_CASE("density: embedding is the interpolated appearance vector") {
  SceneGrid g = makeGrid();
  std::fill(g.refl.begin(), g.refl.end(), 0.25);
  std::fill(g.ambient.begin(), g.ambient.end(), -0.5);
  const DensitySample s = queryDensity(g, Vec3(2.0, 2.0, 2.0));
  for (int i = 0; i < kReflCoeffs; ++i) CHECK(s.embedding[i] == doctest::Approx(0.25));
  for (int i = 0; i < kAmbCoeffs; ++i)
    CHECK(s.embedding[kReflCoeffs + i] == doctest::Approx(-0.5));
}

TEST_CASE("interpolation gradients match finite differences away from faces") {
  SceneGrid g = makeGrid();
  const RngKey key(3);
  for (size_t i = 0; i < g.density_raw.size(); ++i)
    g.density_raw[i] = 2.0 * key.uniform(i) - 1.0;

  const RngKey pts(4);
  int tested = 0;
  for (int t = 0; t < 200 && tested < 50; ++t) {
    const Vec3 x(0.3 + 3.4 * pts.uniform(3 * uint64_t(t)),
                 0.3 + 3.4 * pts.uniform(3 * uint64_t(t) + 1),
                 0.3 + 3.4 * pts.uniform(3 * uint64_t(t) + 2));
    // Stay away from cell faces (cell 0.5) so the interpolant is smooth.
    bool near_face = false;
    for (int a = 0; a < 3; ++a) {
      const double f = x[a] / 0.5;
      if (std::abs(f - std::round(f)) < 0.02) near_face = true;
    }
    if (near_face) continue;
    ++tested;

    const NormalEval ne = queryNormal(g, x);
    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
      Vec3 xp = x, xm = x;
      xp[a] += h;
      xm[a] -= h;
      const double fd = (queryDensity(g, xp).sigma - queryDensity(g, xm).sigma) / (2 * h);
      CHECK(std::abs(fd - ne.grad[a]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }

    // d(sigma)/d(vertex value) = softplus'(v) * stencil weight.
    const TriStencil st = triStencil(g.bounds, g.density_dims, x);
    const DensitySample base = queryDensity(g, x);
    for (int c = 0; c < 8; ++c) {
      const double save = g.density_raw[st.corner[c]];
      g.density_raw[st.corner[c]] = save + h;
      const double up = queryDensity(g, x).sigma;
      g.density_raw[st.corner[c]] = save - h;
      const double dn = queryDensity(g, x).sigma;
      g.density_raw[st.corner[c]] = save;
      const double fd = (up - dn) / (2 * h);
      const double analytic = softplusGrad(base.raw) * st.w[c];
      CHECK(std::abs(fd - analytic) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
  CHECK(tested == 50);
}

TEST_CASE("normals: linear ramp, radial bump, degenerate uniform") {
  SceneGrid g = makeGrid(Vec3i(17, 17, 17));
  // Raw ramp along +x: sigma increases with x, normal points to -x.
  for (int z = 0; z < 17; ++z)
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 17; ++x)
        g.density_raw[(size_t(z) * 17 + y) * 17 + x] = 0.5 * x;
  const NormalEval ramp = queryNormal(g, Vec3(2.0, 2.0, 2.0));
  CHECK(!ramp.degenerate);
  CHECK((ramp.n - Vec3(-1, 0, 0)).norm() < 1e-12);
  CHECK(ramp.n.norm() == doctest::Approx(1.0).epsilon(1e-9));

  // Spherically symmetric bump: normals point radially outward.
  const Vec3 c(2, 2, 2);
  for (int z = 0; z < 17; ++z)
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 17; ++x) {
        const Vec3 p(x * 0.25, y * 0.25, z * 0.25);
        g.density_raw[(size_t(z) * 17 + y) * 17 + x] = 5.0 * std::exp(-(p - c).squaredNorm());
      }
  const RngKey key(9);
  for (int i = 0; i < 40; ++i) {
    const Vec3 dir = randomDir(key, uint64_t(i));
    const Vec3 x = c + 0.8 * dir;
    const NormalEval ne = queryNormal(g, x);
    if (ne.degenerate) continue;
    CHECK((ne.n - dir).norm() < 2e-1);  // lattice quantization
    CHECK(ne.n.dot(dir) > 0.98);
  }

  // Uniform field: degenerate everywhere.
  std::fill(g.density_raw.begin(), g.density_raw.end(), 1.0);
  CHECK(queryNormal(g, Vec3(2.1, 1.7, 2.9)).degenerate);
}

TEST_CASE("reflectance: sigmoid midpoint, saturation, basis ratio") {
  SceneGrid g = makeGrid();
  const Vec3 d = Vec3(0, 0, 1), w = Vec3(0, 0, 1);
  CHECK(queryReflectance(g, Vec3(2, 2, 2), d, w) == doctest::Approx(0.5).epsilon(1e-12));

  for (size_t v = 0; v < g.appCount(); ++v) g.refl[v * kReflCoeffs] = 80.0;
  CHECK(queryReflectance(g, Vec3(2, 2, 2), d, w) == doctest::Approx(1.0).epsilon(1e-6));

  // One directional coefficient: logit ratio across directions follows the
  // basis values.
  std::fill(g.refl.begin(), g.refl.end(), 0.0);
  for (size_t v = 0; v < g.appCount(); ++v) g.refl[v * kReflCoeffs + 2] = 0.7;  // Y(z)
  const Vec3 d1(0, 0, 1);
  const Vec3 d2 = Vec3(0, 1, 1).normalized();
  const double t1 = reflectanceLogit(g, Vec3(2, 2, 2), d1, w);
  const double t2 = reflectanceLogit(g, Vec3(2, 2, 2), d2, w);
  CHECK(t1 / t2 == doctest::Approx(1.0 / d2.z()).epsilon(1e-9));
}

TEST_CASE("ambient: softplus zero, background outside, direction independent DC") {
  SceneGrid g = makeGrid();
  g.background_ambient = 0.37;
  CHECK(queryAmbient(g, Vec3(2, 2, 2), Vec3(0, 0, 1)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(queryAmbient(g, Vec3(9, 0, 0), Vec3(0, 0, 1)) == doctest::Approx(0.37));

  for (size_t v = 0; v < g.appCount(); ++v) g.ambient[v * kAmbCoeffs] = 1.1;
  const RngKey key(13);
  const double ref = queryAmbient(g, Vec3(1.5, 2.5, 3.5), randomDir(key, 0));
  for (int i = 1; i < 100; ++i)
    CHECK(queryAmbient(g, Vec3(1.5, 2.5, 3.5), randomDir(key, uint64_t(i))) ==
          doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("proposal weights: uniform floor, concentration, argmax stability") {
  ProposalGrid p;
  p.allocate(Aabb{Vec3(0, 0, 0), Vec3(4, 4, 4)}, Vec3i(5, 5, 5));
  const Vec3 o(2, 2, -1), dir(0, 0, 1);

  // All-zero proposal: uniform PDF.
  ProposalWeights pw = proposalWeights(p, o, dir, 0.0, 100.0, 16);
  CHECK(pw.segment.valid);
  for (double v : pw.pdf) CHECK(v == doctest::Approx(1.0 / 16).epsilon(1e-12));

  // All density confined to one bin: that bin holds >= 90% of the mass.
  // A finer proposal (17 z-vertices, spacing 0.25) makes the density tent of
  // a single vertex plane fit inside one of 8 bins: vertex z = 2.25 spans
  // [2.0, 2.5] = bin 4 exactly.
  ProposalGrid pf;
  pf.allocate(Aabb{Vec3(0, 0, 0), Vec3(4, 4, 4)}, Vec3i(5, 5, 17));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) pf.density[(size_t(9) * 5 + y) * 5 + x] = 500.0;
  pw = proposalWeights(pf, o, dir, 0.0, 100.0, 8);
  int argmax = 0;
  for (int b = 1; b < 8; ++b)
    if (pw.pdf[size_t(b)] > pw.pdf[size_t(argmax)]) argmax = b;
  CHECK(argmax == 4);
  CHECK(pw.pdf[size_t(argmax)] >= 0.90);

  // Doubling densities keeps the argmax bin.
  for (double& v : pf.density) v *= 2.0;
  pw = proposalWeights(pf, o, dir, 0.0, 100.0, 8);
  int argmax2 = 0;
  for (int b = 1; b < 8; ++b)
    if (pw.pdf[size_t(b)] > pw.pdf[size_t(argmax2)]) argmax2 = b;
  CHECK(argmax2 == argmax);

  // Miss: empty weights.
  CHECK(!proposalWeights(p, Vec3(9, 9, -1), dir, 0.0, 100.0, 16).segment.valid);
  // PDF sums to one.
  double sum = 0;
  for (double v : pw.pdf) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("proposal distillation keeps shell maxima") {
  SceneGrid g = makeGrid(Vec3i(33, 33, 33));
  std::fill(g.density_raw.begin(), g.density_raw.end(), -20.0);
  // A dense slab at z index 16.
  for (int y = 0; y < 33; ++y)
    for (int x = 0; x < 33; ++x)
      g.density_raw[(size_t(16) * 33 + y) * 33 + x] = softplusInv(40.0);
  ProposalGrid p;
  p.allocate(g.bounds, Vec3i(9, 9, 9));
  p.distillFrom(g);
  double peak = 0;
  for (double v : p.density) peak = std::max(peak, v);
  CHECK(peak == doctest::Approx(40.0).epsilon(1e-6));
}

TEST_CASE("checkpoint: round trip preserves payloads at float32") {
  SceneGrid g = makeGrid();
  ProposalGrid p;
  p.allocate(g.bounds, Vec3i(4, 4, 4));
  const RngKey key(21);
  for (size_t i = 0; i < g.density_raw.size(); ++i)
    g.density_raw[i] = float(key.uniform(i) * 4 - 2);
  for (size_t i = 0; i < g.refl.size(); ++i) g.refl[i] = float(key.sub(1).uniform(i));
  for (size_t i = 0; i < g.ambient.size(); ++i) g.ambient[i] = float(key.sub(2).uniform(i));
  for (size_t i = 0; i < p.density.size(); ++i) p.density[i] = float(key.sub(3).uniform(i));
  g.background_ambient = 0.25;

  const std::string path =
      (std::filesystem::temp_directory_path() / "gvr_ckpt_test.gfgrid").string();
  saveGridCheckpoint(path, g, p);
  SceneGrid g2;
  ProposalGrid p2;
  loadGridCheckpoint(path, g2, p2);
  CHECK(g2.density_dims == g.density_dims);
  CHECK(g2.app_dims == g.app_dims);
  CHECK(g2.density_raw == g.density_raw);
  CHECK(g2.refl == g.refl);
  CHECK(g2.ambient == g.ambient);
  CHECK(p2.density == p.density);
  CHECK(g2.background_ambient == doctest::Approx(0.25));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(loadGridCheckpoint("/nonexistent/file.gfgrid", g2, p2), DataError);
}

TEST_CASE("sh basis: jacobian matches finite differences") {
  const RngKey key(31);
  for (int t = 0; t < 10; ++t) {
    const Vec3 d = randomDir(key, uint64_t(t));
    double y[kShCount];
    Vec3 jac[kShCount];
    shBasis9Jac(d, y, jac);
    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
      Vec3 dp = d, dm = d;
      dp[a] += h;
      dm[a] -= h;
      double yp[kShCount], ym[kShCount];
      shBasis9(dp, yp);
      shBasis9(dm, ym);
      for (int i = 0; i < kShCount; ++i)
        CHECK(jac[i][a] == doctest::Approx((yp[i] - ym[i]) / (2 * h)).epsilon(1e-6));
    }
  }
}
