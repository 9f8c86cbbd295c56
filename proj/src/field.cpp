// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/field.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace gvr {

namespace {
constexpr double kY0 = 0.28209479177387814;   // 1/(2 sqrt(pi))
constexpr double kY1 = 0.4886025119029199;    // sqrt(3/(4 pi))
constexpr double kY2a = 1.0925484305920792;   // sqrt(15/(4 pi))
constexpr double kY2b = 0.31539156525252005;  // sqrt(5/(16 pi))
constexpr double kY2c = 0.5462742152960396;   // sqrt(15/(16 pi))
}  // namespace

void shBasis9(const Vec3& d, double out[kShCount]) {
  const double x = d.x(), y = d.y(), z = d.z();
  out[0] = kY0;
  out[1] = kY1 * y;
  out[2] = kY1 * z;
  out[3] = kY1 * x;
  out[4] = kY2a * x * y;
  out[5] = kY2a * y * z;
  out[6] = kY2b * (3.0 * z * z - 1.0);
  out[7] = kY2a * x * z;
  out[8] = kY2c * (x * x - y * y);
}

void shBasis9Jac(const Vec3& d, double out[kShCount], Vec3 jac[kShCount]) {
  shBasis9(d, out);
  const double x = d.x(), y = d.y(), z = d.z();
  jac[0] = Vec3::Zero();
  jac[1] = Vec3(0, kY1, 0);
  jac[2] = Vec3(0, 0, kY1);
  jac[3] = Vec3(kY1, 0, 0);
  jac[4] = Vec3(kY2a * y, kY2a * x, 0);
  jac[5] = Vec3(0, kY2a * z, kY2a * y);
  jac[6] = Vec3(0, 0, kY2b * 6.0 * z);
  jac[7] = Vec3(kY2a * z, 0, kY2a * x);
  jac[8] = Vec3(kY2c * 2.0 * x, -kY2c * 2.0 * y, 0);
}

TriStencil triStencil(const Aabb& bounds, const Vec3i& dims, const Vec3& x) {
  TriStencil s;
  if (!bounds.contains(x)) return s;
  const Vec3 ext = bounds.extent();
  int base[3];
  double f[3];      // fractional position within the cell
  double scale[3];  // d(frac)/d(world)
  for (int a = 0; a < 3; ++a) {
    const int n = dims[a];
    if (n < 2) {
      base[a] = 0;
      f[a] = 0.0;
      scale[a] = 0.0;
      continue;
    }
    const double cell = ext[a] / (n - 1);
    double t = (x[a] - bounds.lo[a]) / cell;
    int i = int(std::floor(t));
    i = std::max(0, std::min(i, n - 2));
    base[a] = i;
    f[a] = t - i;
    scale[a] = 1.0 / cell;
  }
  const int nx = dims.x(), ny = dims.y();
  auto flat = [&](int ix, int iy, int iz) { return (iz * ny + iy) * nx + ix; };
  int c = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx, ++c) {
        const double wx = dx ? f[0] : 1.0 - f[0];
        const double wy = dy ? f[1] : 1.0 - f[1];
        const double wz = dz ? f[2] : 1.0 - f[2];
        const double sx = dx ? 1.0 : -1.0;
        const double sy = dy ? 1.0 : -1.0;
        const double sz = dz ? 1.0 : -1.0;
        s.corner[c] = flat(std::min(base[0] + dx, dims.x() - 1),
                           std::min(base[1] + dy, dims.y() - 1),
                           std::min(base[2] + dz, dims.z() - 1));
        s.w[c] = wx * wy * wz;
        s.dw[c] = Vec3(sx * wy * wz * scale[0], wx * sy * wz * scale[1],
                       wx * wy * sz * scale[2]);
      }
  s.inside = true;
  return s;
}

void SceneGrid::allocate(const Aabb& b, const Vec3i& density, const Vec3i& appearance) {
  if ((density.array() < 2).any() || (appearance.array() < 2).any())
    throw ConfigError("scene grid: dims must be >= 2 per axis");
  if ((b.extent().array() <= 0.0).any())
    throw ConfigError("scene grid: bounds must have positive extent");
  bounds = b;
  density_dims = density;
  app_dims = appearance;
  density_raw.assign(densityCount(), 0.0);
  refl.assign(appCount() * kReflCoeffs, 0.0);
  ambient.assign(appCount() * kAmbCoeffs, 0.0);
}

double SceneGrid::rawDensityAt(const Vec3& x) const {
  const TriStencil s = triStencil(bounds, density_dims, x);
  if (!s.inside) return -1e30;  // softplus -> 0
  double v = 0.0;
  for (int c = 0; c < 8; ++c) v += s.w[c] * density_raw[s.corner[c]];
  return v;
}

DensitySample queryDensity(const SceneGrid& grid, const Vec3& x) {
  DensitySample out;
  const TriStencil sd = triStencil(grid.bounds, grid.density_dims, x);
  if (!sd.inside) return out;
  out.inside = true;
  double v = 0.0;
  for (int c = 0; c < 8; ++c) v += sd.w[c] * grid.density_raw[sd.corner[c]];
  out.raw = v;
  out.sigma = softplus(v);
  const TriStencil sa = triStencil(grid.bounds, grid.app_dims, x);
  if (sa.inside) {
    for (int c = 0; c < 8; ++c) {
      const double w = sa.w[c];
      const double* rc = &grid.refl[size_t(sa.corner[c]) * kReflCoeffs];
      const double* ac = &grid.ambient[size_t(sa.corner[c]) * kAmbCoeffs];
      for (int i = 0; i < kReflCoeffs; ++i) out.embedding[i] += w * rc[i];
      for (int i = 0; i < kAmbCoeffs; ++i) out.embedding[kReflCoeffs + i] += w * ac[i];
    }
  }
  return out;
}

NormalEval queryNormal(const SceneGrid& grid, const Vec3& x, double eps) {
  NormalEval out;
  const TriStencil s = triStencil(grid.bounds, grid.density_dims, x);
  if (!s.inside) return out;
  double v = 0.0;
  Vec3 gv = Vec3::Zero();
  for (int c = 0; c < 8; ++c) {
    const double raw = grid.density_raw[s.corner[c]];
    v += s.w[c] * raw;
    gv += s.dw[c] * raw;
  }
  out.grad = softplusGrad(v) * gv;
  out.grad_norm = out.grad.norm();
  if (out.grad_norm <= eps) return out;
  out.degenerate = false;
  out.n = -out.grad / out.grad_norm;
  return out;
}

double reflectanceLogit(const SceneGrid& grid, const Vec3& x, const Vec3& d,
                        const Vec3& omega) {
  const TriStencil s = triStencil(grid.bounds, grid.app_dims, x);
  if (!s.inside) return 0.0;
  double cx[kReflCoeffs] = {0};
  for (int c = 0; c < 8; ++c) {
    const double w = s.w[c];
    const double* rc = &grid.refl[size_t(s.corner[c]) * kReflCoeffs];
    for (int i = 0; i < kReflCoeffs; ++i) cx[i] += w * rc[i];
  }
  double yd[kShCount];
  shBasis9(d, yd);
  double t = 0.0;
  for (int i = 0; i < kShCount; ++i) t += cx[i] * yd[i];
  double yo[kShCount];
  shBasis9(omega, yo);
  for (int i = 0; i < 3; ++i) t += cx[kShCount + i] * yo[1 + i];
  return t;
}

double queryReflectance(const SceneGrid& grid, const Vec3& x, const Vec3& d,
                        const Vec3& omega) {
  return sigmoid(reflectanceLogit(grid, x, d, omega));
}

double queryAmbient(const SceneGrid& grid, const Vec3& x, const Vec3& d) {
  const TriStencil s = triStencil(grid.bounds, grid.app_dims, x);
  if (!s.inside) return grid.background_ambient;
  double ax[kAmbCoeffs] = {0};
  for (int c = 0; c < 8; ++c) {
    const double w = s.w[c];
    const double* ac = &grid.ambient[size_t(s.corner[c]) * kAmbCoeffs];
    for (int i = 0; i < kAmbCoeffs; ++i) ax[i] += w * ac[i];
  }
  double yd[kShCount];
  shBasis9(d, yd);
  double t = 0.0;
  for (int i = 0; i < kAmbCoeffs; ++i) t += ax[i] * yd[i];
  return softplus(t);
}

void ProposalGrid::allocate(const Aabb& b, const Vec3i& d) {
  if ((d.array() < 2).any()) throw ConfigError("proposal grid: dims must be >= 2");
  bounds = b;
  dims = d;
  density.assign(size_t(d.x()) * d.y() * d.z(), 0.0);
}

double ProposalGrid::at(const Vec3& x) const {
  const TriStencil s = triStencil(bounds, dims, x);
  if (!s.inside) return 0.0;
  double v = 0.0;
  for (int c = 0; c < 8; ++c) v += s.w[c] * density[s.corner[c]];
  return v;
}

void ProposalGrid::distillFrom(const SceneGrid& scene) {
  const Vec3i sd = scene.density_dims;
  std::fill(density.begin(), density.end(), 0.0);
  const int nx = dims.x(), ny = dims.y(), nz = dims.z();
  for (int iz = 0; iz < sd.z(); ++iz)
    for (int iy = 0; iy < sd.y(); ++iy)
      for (int ix = 0; ix < sd.x(); ++ix) {
        const double sigma =
            softplus(scene.density_raw[(size_t(iz) * sd.y() + iy) * sd.x() + ix]);
        // Nearest proposal vertex for this scene vertex.
        const int px = int(std::lround(double(ix) * (nx - 1) / (sd.x() - 1)));
        const int py = int(std::lround(double(iy) * (ny - 1) / (sd.y() - 1)));
        const int pz = int(std::lround(double(iz) * (nz - 1) / (sd.z() - 1)));
        double& slot = density[(size_t(pz) * ny + py) * nx + px];
        slot = std::max(slot, sigma);
      }
}

ProposalWeights proposalWeights(const ProposalGrid& grid, const Vec3& origin,
                                const Vec3& dir, double near, double far, int n_bins,
                                double floor_frac) {
  ProposalWeights out;
  double t0 = near, t1 = far;
  if (!grid.bounds.clipSegment(origin, dir, t0, t1) || !(t1 > t0)) return out;
  out.segment = {t0, t1, true};
  out.pdf.assign(n_bins, 0.0);

  // Per-bin opacity without the leading transmittance: the max-pooled
  // proposal is wider than the true density, and transmittance weighting
  // would starve every bin behind the blob's leading edge.
  const double dt = (t1 - t0) / n_bins;
  double total = 0.0;
  std::vector<double> mass(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    const double tm = t0 + dt * (b + 0.5);
    const double sigma = grid.at(origin + tm * dir);
    const double w = -std::expm1(-sigma * dt);
    mass[b] = w;
    total += w;
  }
  const double uniform = 1.0 / n_bins;
  for (int b = 0; b < n_bins; ++b) {
    const double guided = total > 0.0 ? mass[b] / total : uniform;
    out.pdf[b] = (1.0 - floor_frac) * guided + floor_frac * uniform;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

void writeU32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
uint32_t readU32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void writeF32s(std::ostream& os, const double* data, size_t n) {
  std::vector<float> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = float(data[i]);
  os.write(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
}

void readF32s(std::istream& is, double* data, size_t n) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
  for (size_t i = 0; i < n; ++i) data[i] = double(buf[i]);
}

}  // namespace

void saveGridCheckpoint(const std::string& path, const SceneGrid& grid,
                        const ProposalGrid& proposal) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("GFGRID1\0", 8);
  writeU32(os, 4);  // field count
  float bounds[6] = {float(grid.bounds.lo.x()), float(grid.bounds.lo.y()),
                     float(grid.bounds.lo.z()), float(grid.bounds.hi.x()),
                     float(grid.bounds.hi.y()), float(grid.bounds.hi.z())};
  os.write(reinterpret_cast<char*>(bounds), sizeof(bounds));
  const float bg = float(grid.background_ambient);
  os.write(reinterpret_cast<const char*>(&bg), 4);

  auto field = [&](const char* name, const Vec3i& dims, uint32_t channels,
                   const std::vector<double>& data) {
    char buf[12] = {0};
    std::snprintf(buf, sizeof(buf), "%s", name);
    os.write(buf, 12);
    writeU32(os, uint32_t(dims.x()));
    writeU32(os, uint32_t(dims.y()));
    writeU32(os, uint32_t(dims.z()));
    writeU32(os, channels);
    writeF32s(os, data.data(), data.size());
  };
  field("density", grid.density_dims, 1, grid.density_raw);
  field("reflectance", grid.app_dims, kReflCoeffs, grid.refl);
  field("ambient", grid.app_dims, kAmbCoeffs, grid.ambient);
  field("proposal", proposal.dims, 1, proposal.density);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

void loadGridCheckpoint(const std::string& path, SceneGrid& grid, ProposalGrid& proposal) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8] = {0};
  is.read(magic, 8);
  if (std::memcmp(magic, "GFGRID1\0", 8) != 0)
    throw DataError("bad checkpoint magic in " + path);
  const uint32_t fields = readU32(is);
  if (fields != 4) throw DataError("unexpected checkpoint field count in " + path);
  float bounds[6];
  is.read(reinterpret_cast<char*>(bounds), sizeof(bounds));
  Aabb box;
  box.lo = Vec3(bounds[0], bounds[1], bounds[2]);
  box.hi = Vec3(bounds[3], bounds[4], bounds[5]);
  float bg = 0.0f;
  is.read(reinterpret_cast<char*>(&bg), 4);

  struct Raw {
    std::string name;
    Vec3i dims;
    uint32_t channels;
    std::vector<double> data;
  };
  std::vector<Raw> raws;
  for (uint32_t f = 0; f < fields; ++f) {
    char buf[12];
    is.read(buf, 12);
    Raw r;
    r.name = std::string(buf, strnlen(buf, 12));
    r.dims = Vec3i(int(readU32(is)), int(readU32(is)), int(readU32(is)));
    r.channels = readU32(is);
    const size_t n = size_t(r.dims.x()) * r.dims.y() * r.dims.z() * r.channels;
    r.data.resize(n);
    readF32s(is, r.data.data(), n);
    if (!is) throw DataError("truncated checkpoint: " + path);
    raws.push_back(std::move(r));
  }
  auto find = [&](const std::string& name) -> Raw& {
    for (auto& r : raws)
      if (r.name == name) return r;
    throw DataError("checkpoint missing field '" + name + "': " + path);
  };
  Raw& den = find("density");
  Raw& ref = find("reflectance");
  Raw& amb = find("ambient");
  Raw& pro = find("proposal");
  if (ref.dims != amb.dims || ref.channels != kReflCoeffs || amb.channels != kAmbCoeffs)
    throw DataError("checkpoint appearance layout mismatch: " + path);
  grid.allocate(box, den.dims, ref.dims);
  grid.density_raw = std::move(den.data);
  grid.refl = std::move(ref.data);
  grid.ambient = std::move(amb.data);
  grid.background_ambient = bg;
  proposal.allocate(box, pro.dims);
  proposal.density = std::move(pro.data);
}

}  // namespace gvr
