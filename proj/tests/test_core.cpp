// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "gvr/core.hpp"

using namespace gvr;

TEST_CASE("rng: keyed streams are deterministic and independent") {
  const RngKey a(42), b(42), c(43);
  for (int i = 0; i < 64; ++i) {
    CHECK(a.uniform(uint64_t(i)) == b.uniform(uint64_t(i)));
    CHECK(a.uniform(uint64_t(i)) != c.uniform(uint64_t(i)));
    const double u = a.uniform(uint64_t(i));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(a.sub(1).uniform(0) != a.sub(2).uniform(0));
}

TEST_CASE("rng: normal has sane moments") {
  const RngKey key(7);
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = key.normal(uint64_t(i));
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("fixed accumulator: order-independent and near-exact") {
  FixedAccum acc(4);
  std::vector<double> vals(1000);
  const RngKey key(5);
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = key.uniform(i) * 2.0 - 1.0;
  parallelFor(vals.size(), 4, [&](size_t i) { acc.add(1, vals[i]); });
  const double expect = std::accumulate(vals.begin(), vals.end(), 0.0);
  CHECK(acc.read(1) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(acc.read(0) == 0.0);
  CHECK(!acc.overflowed());

  // Bitwise equality across thread counts.
  FixedAccum one(1), many(1);
  for (int t : {1, 7}) {
    FixedAccum& target = t == 1 ? one : many;
    parallelFor(vals.size(), t, [&](size_t i) { target.add(0, vals[i]); });
  }
  CHECK(one.read(0) == many.read(0));
}

TEST_CASE("parallelFor covers every index exactly once") {
  std::vector<std::atomic<int>> hits(1037);
  parallelFor(hits.size(), 3, [&](size_t i) { hits[i].fetch_add(1); });
  for (auto& h : hits) CHECK(h.load() == 1);
}

TEST_CASE("aabb: segment clipping") {
  Aabb box{Vec3(0, 0, 0), Vec3(1, 2, 3)};
  double t0 = 0, t1 = 100;
  CHECK(box.clipSegment(Vec3(0.5, 1.0, -1.0), Vec3(0, 0, 1), t0, t1));
  CHECK(t0 == doctest::Approx(1.0));
  CHECK(t1 == doctest::Approx(4.0));
  t0 = 0;
  t1 = 100;
  CHECK(!box.clipSegment(Vec3(5, 5, -1), Vec3(0, 0, 1), t0, t1));
}

TEST_CASE("rotation: Rodrigues round trip and jacobian vs finite differences") {
  const RngKey key(11);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 r(key.uniform(6 * uint64_t(trial)) * 2 - 1,
           key.uniform(6 * uint64_t(trial) + 1) * 2 - 1,
           key.uniform(6 * uint64_t(trial) + 2) * 2 - 1);
    if (trial == 0) r = Vec3::Zero();  // exercise the small-angle branch
    const Vec3 v(key.uniform(6 * uint64_t(trial) + 3) * 2 - 1,
                 key.uniform(6 * uint64_t(trial) + 4) * 2 - 1,
                 key.uniform(6 * uint64_t(trial) + 5) * 2 - 1);
    const Mat3 R = axisAngleToMatrix(r);
    CHECK((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));

    Mat3 jac;
    rotateVectorJacobian(r, v, jac);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      Vec3 rp = r, rm = r;
      rp[i] += h;
      rm[i] -= h;
      const Vec3 fd = (axisAngleToMatrix(rp) * v - axisAngleToMatrix(rm) * v) / (2 * h);
      CHECK((fd - jac.col(i)).norm() < 1e-6 * std::max(1.0, fd.norm()));
    }
  }
}

TEST_CASE("softplus helpers") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(40.0) == doctest::Approx(40.0));
  CHECK(softplusInv(softplus(1.7)) == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(softplusInv(softplus(-9.0)) == doctest::Approx(-9.0).epsilon(1e-9));
  const double h = 1e-6;
  for (double x : {-3.0, 0.0, 2.5}) {
    const double fd = (softplus(x + h) - softplus(x - h)) / (2 * h);
    CHECK(softplusGrad(x) == doctest::Approx(fd).epsilon(1e-8));
  }
}
