// Copyright 2026 The gvr Authors
// SPDX-License-Identifier: Apache-2.0

#include "gvr/synthio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gvr/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gvr {

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

void writePfm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open PFM for writing: " + path);
  os << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  // PFM stores rows bottom-up.
  for (int y = img.height - 1; y >= 0; --y)
    os.write(reinterpret_cast<const char*>(&img.px[size_t(y) * img.width]),
             std::streamsize(img.width) * 4);
  if (!os) throw DataError("PFM write failed: " + path);
}

Image readPfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing PFM file: " + path);
  std::string tag;
  is >> tag;
  if (tag == "PF") throw DataError("color PFM not supported (expected Pf): " + path);
  if (tag != "Pf") throw DataError("malformed PFM header in " + path);
  int w = 0, h = 0;
  double scale = 0.0;
  is >> w >> h >> scale;
  if (!is || w <= 0 || h <= 0) throw DataError("malformed PFM dimensions in " + path);
  if (scale >= 0.0)
    throw DataError("big-endian PFM rejected (scale " + std::to_string(scale) + "): " + path);
  is.get();  // single whitespace after the scale line
  Image img;
  img.resize(w, h);
  for (int y = h - 1; y >= 0; --y)
    is.read(reinterpret_cast<char*>(&img.px[size_t(y) * w]), std::streamsize(w) * 4);
  if (!is) throw DataError("truncated PFM payload in " + path);
  return img;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

double Primitive::sdf(const Vec3& x) const {
  switch (type) {
    case Type::kPlane:
      return normal.normalized().dot(x - point);
    case Type::kSphere:
      return (x - center).norm() - radius;
    case Type::kBox: {
      const Vec3 q = (x - center).cwiseAbs() - half;
      const Vec3 q_out = q.cwiseMax(0.0);
      return q_out.norm() + std::min(q.maxCoeff(), 0.0);
    }
  }
  return 1e30;
}

bool Primitive::intersect(const Vec3& o, const Vec3& d, double t_min, double& t) const {
  switch (type) {
    case Type::kPlane: {
      const Vec3 n = normal.normalized();
      const double denom = d.dot(n);
      if (std::abs(denom) < 1e-12) return false;
      const double tt = (point - o).dot(n) / denom;
      if (tt <= t_min) return false;
      t = tt;
      return true;
    }
    case Type::kSphere: {
      const Vec3 oc = o - center;
      const double b = oc.dot(d);
      const double c = oc.squaredNorm() - radius * radius;
      const double disc = b * b - c;
      if (disc < 0.0) return false;
      const double s = std::sqrt(disc);
      double tt = -b - s;
      if (tt <= t_min) tt = -b + s;
      if (tt <= t_min) return false;
      t = tt;
      return true;
    }
    case Type::kBox: {
      double t0 = t_min, t1 = 1e300;
      Aabb box{center - half, center + half};
      if (!box.clipSegment(o, d, t0, t1)) return false;
      if (t1 <= t_min) return false;
      t = t0 > t_min ? t0 : t1;
      return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Scene spec
// ---------------------------------------------------------------------------

void SceneSpec::validate() const {
  if (primitives.empty() && background_ambient <= 0.0)
    throw ConfigError("scene: needs at least one primitive or background ambient");
  if ((bounds.extent().array() <= 0.0).any())
    throw ConfigError("scene: bounds must have positive extent");
  if (camera.width <= 0 || camera.height <= 0 || camera.fx <= 0 || camera.fy <= 0)
    throw ConfigError("scene: invalid camera intrinsics");
  if (poses.empty()) throw ConfigError("scene: needs at least one pose");
  if (int(poses.size()) != splits.train + splits.val + splits.test)
    throw ConfigError("scene: pose count must equal train+val+test split sizes");
  for (const Mat4& m : poses) {
    const Mat3 r = m.topLeftCorner<3, 3>();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
        std::abs(r.determinant() - 1.0) > 1e-9)
      throw ConfigError("scene: pose rotation is not a proper rigid transform");
  }
  for (const Primitive& p : primitives) {
    if (p.type == Primitive::Type::kSphere && !(p.radius > 0.0))
      throw ConfigError("scene: degenerate sphere radius");
    if (p.type == Primitive::Type::kBox && (p.half.array() <= 0.0).any())
      throw ConfigError("scene: degenerate box extents");
    if (p.type == Primitive::Type::kPlane && p.normal.norm() < 1e-12)
      throw ConfigError("scene: degenerate plane normal");
    if (!(p.albedo > 0.0) || !(p.albedo < 1.0))
      throw ConfigError("scene: albedo must lie in (0, 1)");
    if (p.ambient < 0.0) throw ConfigError("scene: ambient emission must be >= 0");
  }
  gating.validate();
  illuminator.validate();
}

std::vector<Mat4> makeArcPoses(int count, const Vec3& target, double radius,
                               double height, double span_deg) {
  std::vector<Mat4> poses;
  const double span = span_deg * M_PI / 180.0;
  for (int i = 0; i < count; ++i) {
    const double a = count > 1 ? -span / 2 + span * i / (count - 1) : 0.0;
    const Vec3 pos = target + Vec3(radius * std::sin(a), 0.0, -radius * std::cos(a)) +
                     Vec3(0, height, 0);
    const Vec3 fwd = (target - pos).normalized();
    const Vec3 up(0, 1, 0);
    Vec3 right = fwd.cross(up);
    if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
    right.normalize();
    const Vec3 down = fwd.cross(right);
    Mat4 m = Mat4::Identity();
    m.block<3, 1>(0, 0) = right;
    m.block<3, 1>(0, 1) = down;
    m.block<3, 1>(0, 2) = fwd;
    m.block<3, 1>(0, 3) = pos;
    poses.push_back(m);
  }
  return poses;
}

SceneSpec makeDefaultScene() {
  SceneSpec s;
  s.bounds.lo = Vec3(-45, -1, 0);
  s.bounds.hi = Vec3(45, 25, 150);
  s.background_ambient = 0.04;

  Primitive ground;
  ground.type = Primitive::Type::kPlane;
  ground.point = Vec3(0, 0, 0);
  ground.normal = Vec3(0, 1, 0);
  ground.albedo = 0.45;
  ground.ambient = 0.12;
  Primitive ball;
  ball.type = Primitive::Type::kSphere;
  ball.center = Vec3(-10, 8, 55);
  ball.radius = 8.0;
  ball.albedo = 0.75;
  ball.ambient = 0.25;
  Primitive crate;
  crate.type = Primitive::Type::kBox;
  crate.center = Vec3(14, 6, 85);
  crate.half = Vec3(9, 6, 9);
  crate.albedo = 0.6;
  crate.ambient = 0.18;
  s.primitives = {ground, ball, crate};

  s.camera.width = 160;
  s.camera.height = 90;
  s.camera.fy = 96.0;
  s.camera.fx = 96.0;
  s.camera.cx = 80.0;
  s.camera.cy = 45.0;

  s.splits = {20, 5, 5};
  s.poses = makeArcPoses(30, Vec3(0, 2, 70), 76.0, 4.0, 14.0);

  s.gating.gate_delay = {240, 500, 900};
  s.gating.pulse_width = {240, 240, 240};
  s.gating.gate_width = {300, 450, 600};
  s.gating.gain = {1, 1, 1};
  s.gating.dark = {0.02, 0.02, 0.02};
  s.gating.dark_passive = 0.02;
  s.auto_gain = true;

  s.illuminator.eta = 1.0;
  s.illuminator.sigma = Vec2(0.45, 0.35);
  s.illuminator.order = Vec2(2.0, 2.0);
  s.illuminator.trans = Vec3(1.6, -0.6, 0.0);

  s.render.n_samples = 64;
  s.render.shadow.bias = 4.0;
  s.render.shadow.step = 1.2;
  s.render.attenuation.kind = AttenuationModel::Kind::kInverseSquare;
  s.render.attenuation.z_ref = 30.0;
  s.render.attenuation.z_min = 1.0;

  s.bake_dims = Vec3i(128, 96, 128);
  s.noise_sigma = 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

namespace {

json vecToJson(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json vec2ToJson(const Vec2& v) { return json::array({v.x(), v.y()}); }
Vec3 vecFromJson(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }
Vec2 vec2FromJson(const json& j) { return Vec2(j.at(0), j.at(1)); }
Vec3i vec3iFromJson(const json& j) { return Vec3i(j.at(0), j.at(1), j.at(2)); }

json mat4ToJson(const Mat4& m) {
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}
Mat4 mat4FromJson(const json& j) {
  if (!j.is_array() || j.size() != 16) throw DataError("pose must be a 16-number array");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j.at(r * 4 + c);
  return m;
}

json gatingToJson(const GatingParams& g) {
  return json{{"gate_delay", g.gate_delay},
              {"pulse_width", g.pulse_width},
              {"gate_width", g.gate_width},
              {"gain", g.gain},
              {"dark", g.dark},
              {"dark_passive", g.dark_passive},
              {"distance_offset", g.distance_offset}};
}
GatingParams gatingFromJson(const json& j) {
  GatingParams g;
  auto arr3 = [&](const char* key, std::array<double, 3>& out) {
    const auto& a = j.at(key);
    for (int i = 0; i < 3; ++i) out[size_t(i)] = a.at(i);
  };
  arr3("gate_delay", g.gate_delay);
  arr3("pulse_width", g.pulse_width);
  arr3("gate_width", g.gate_width);
  arr3("gain", g.gain);
  arr3("dark", g.dark);
  g.dark_passive = j.at("dark_passive");
  g.distance_offset = j.value("distance_offset", 0.0);
  return g;
}

json illumToJson(const IlluminatorModel& m) {
  return json{{"eta", m.eta},           {"mean", vec2ToJson(m.mean)},
              {"sigma", vec2ToJson(m.sigma)}, {"order", vec2ToJson(m.order)},
              {"rot", vecToJson(m.rot)},      {"trans", vecToJson(m.trans)}};
}
IlluminatorModel illumFromJson(const json& j) {
  IlluminatorModel m;
  m.eta = j.at("eta");
  m.mean = vec2FromJson(j.at("mean"));
  m.sigma = vec2FromJson(j.at("sigma"));
  m.order = vec2FromJson(j.at("order"));
  m.rot = vecFromJson(j.at("rot"));
  m.trans = vecFromJson(j.at("trans"));
  return m;
}

json renderToJson(const RenderConfig& r) {
  return json{{"n_samples", r.n_samples},
              {"n_proposal_bins", r.n_proposal_bins},
              {"pdf_floor", r.pdf_floor},
              {"use_shadow", r.use_shadow},
              {"shadow_step", r.shadow.step},
              {"shadow_min_samples", r.shadow.min_samples},
              {"shadow_max_samples", r.shadow.max_samples},
              {"shadow_bias", r.shadow.bias},
              {"attenuation", r.attenuation.kind == AttenuationModel::Kind::kNone
                                  ? "none"
                                  : "inverse_square"},
              {"attenuation_z_ref", r.attenuation.z_ref},
              {"attenuation_z_min", r.attenuation.z_min}};
}
RenderConfig renderFromJson(const json& j) {
  RenderConfig r;
  r.n_samples = j.value("n_samples", r.n_samples);
  r.n_proposal_bins = j.value("n_proposal_bins", r.n_proposal_bins);
  r.pdf_floor = j.value("pdf_floor", r.pdf_floor);
  r.use_shadow = j.value("use_shadow", r.use_shadow);
  r.shadow.step = j.value("shadow_step", r.shadow.step);
  r.shadow.min_samples = j.value("shadow_min_samples", r.shadow.min_samples);
  r.shadow.max_samples = j.value("shadow_max_samples", r.shadow.max_samples);
  r.shadow.bias = j.value("shadow_bias", r.shadow.bias);
  const std::string att = j.value("attenuation", "inverse_square");
  if (att == "none")
    r.attenuation.kind = AttenuationModel::Kind::kNone;
  else if (att == "inverse_square")
    r.attenuation.kind = AttenuationModel::Kind::kInverseSquare;
  else
    throw ConfigError("unknown attenuation kind: " + att);
  r.attenuation.z_ref = j.value("attenuation_z_ref", r.attenuation.z_ref);
  r.attenuation.z_min = j.value("attenuation_z_min", r.attenuation.z_min);
  return r;
}

json cameraToJson(const PinholeCamera& c) {
  return json{{"width", c.width}, {"height", c.height}, {"fx", c.fx},
              {"fy", c.fy},       {"cx", c.cx},         {"cy", c.cy}};
}
PinholeCamera cameraFromJson(const json& j) {
  PinholeCamera c;
  c.width = j.at("width");
  c.height = j.at("height");
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  return c;
}

json loadJsonFile(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open JSON file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("JSON parse error in " + path + ": " + e.what());
  }
  return j;
}

void writeJsonFile(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open JSON file for writing: " + path);
  os << j.dump(2) << "\n";
  if (!os) throw DataError("JSON write failed: " + path);
}

}  // namespace

SceneSpec loadSceneSpec(const std::string& path) {
  const json j = loadJsonFile(path);
  SceneSpec s;
  try {
    s.bounds.lo = vecFromJson(j.at("bounds").at("lo"));
    s.bounds.hi = vecFromJson(j.at("bounds").at("hi"));
    s.background_ambient = j.value("background_ambient", 0.0);
    for (const auto& pj : j.at("primitives")) {
      Primitive p;
      const std::string t = pj.at("type");
      if (t == "plane") {
        p.type = Primitive::Type::kPlane;
        p.point = vecFromJson(pj.at("point"));
        p.normal = vecFromJson(pj.at("normal"));
      } else if (t == "sphere") {
        p.type = Primitive::Type::kSphere;
        p.center = vecFromJson(pj.at("center"));
        p.radius = pj.at("radius");
      } else if (t == "box") {
        p.type = Primitive::Type::kBox;
        p.center = vecFromJson(pj.at("center"));
        p.half = vecFromJson(pj.at("half"));
      } else {
        throw ConfigError("unknown primitive type: " + t);
      }
      p.albedo = pj.value("albedo", 0.5);
      p.ambient = pj.value("ambient", 0.0);
      p.view_lobe = pj.value("view_lobe", 0.0);
      s.primitives.push_back(p);
    }
    s.camera = cameraFromJson(j.at("camera"));
    if (j.contains("poses")) {
      for (const auto& pj : j.at("poses")) s.poses.push_back(mat4FromJson(pj));
    } else if (j.contains("pose_arc")) {
      const auto& a = j.at("pose_arc");
      s.poses = makeArcPoses(a.at("count"), vecFromJson(a.at("target")), a.at("radius"),
                             a.at("height"), a.at("span_deg"));
    } else {
      throw ConfigError("scene: needs \"poses\" or \"pose_arc\"");
    }
    if (j.contains("splits")) {
      s.splits.train = j.at("splits").value("train", s.splits.train);
      s.splits.val = j.at("splits").value("val", s.splits.val);
      s.splits.test = j.at("splits").value("test", s.splits.test);
    } else {
      s.splits = {int(s.poses.size()), 0, 0};
    }
    s.gating = gatingFromJson(j.at("gating"));
    s.auto_gain = j.value("auto_gain", true);
    s.illuminator = illumFromJson(j.at("illuminator"));
    if (j.contains("render")) s.render = renderFromJson(j.at("render"));
    if (j.contains("bake_dims")) s.bake_dims = vec3iFromJson(j.at("bake_dims"));
    s.shell_sigma = j.value("shell_sigma", 0.0);
    s.surface_inset = j.value("surface_inset", 1.81);
    s.noise_sigma = j.value("noise_sigma", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError("scene config " + path + ": " + e.what());
  }
  s.validate();
  return s;
}

void saveSceneSpec(const std::string& path, const SceneSpec& s) {
  json prims = json::array();
  for (const Primitive& p : s.primitives) {
    json pj;
    switch (p.type) {
      case Primitive::Type::kPlane:
        pj = {{"type", "plane"}, {"point", vecToJson(p.point)}, {"normal", vecToJson(p.normal)}};
        break;
      case Primitive::Type::kSphere:
        pj = {{"type", "sphere"}, {"center", vecToJson(p.center)}, {"radius", p.radius}};
        break;
      case Primitive::Type::kBox:
        pj = {{"type", "box"}, {"center", vecToJson(p.center)}, {"half", vecToJson(p.half)}};
        break;
    }
    pj["albedo"] = p.albedo;
    pj["ambient"] = p.ambient;
    if (p.view_lobe != 0.0) pj["view_lobe"] = p.view_lobe;
    prims.push_back(pj);
  }
  json poses = json::array();
  for (const Mat4& m : s.poses) poses.push_back(mat4ToJson(m));
  json j{{"bounds", {{"lo", vecToJson(s.bounds.lo)}, {"hi", vecToJson(s.bounds.hi)}}},
         {"background_ambient", s.background_ambient},
         {"primitives", prims},
         {"camera", cameraToJson(s.camera)},
         {"poses", poses},
         {"splits", {{"train", s.splits.train}, {"val", s.splits.val}, {"test", s.splits.test}}},
         {"gating", gatingToJson(s.gating)},
         {"auto_gain", s.auto_gain},
         {"illuminator", illumToJson(s.illuminator)},
         {"render", renderToJson(s.render)},
         {"bake_dims", {s.bake_dims.x(), s.bake_dims.y(), s.bake_dims.z()}},
         {"shell_sigma", s.shell_sigma},
         {"surface_inset", s.surface_inset},
         {"noise_sigma", s.noise_sigma}};
  writeJsonFile(path, j);
}

// ---------------------------------------------------------------------------
// Baking
// ---------------------------------------------------------------------------

void bakeScene(const SceneSpec& spec, SceneGrid& grid, ProposalGrid& proposal) {
  spec.validate();
  const Vec3i bd = spec.bake_dims;
  const Vec3i ad(std::max(2, bd.x() / 2), std::max(2, bd.y() / 2), std::max(2, bd.z() / 2));
  grid.allocate(spec.bounds, bd, ad);
  grid.background_ambient = spec.background_ambient;

  const Vec3 cell = spec.bounds.extent().cwiseQuotient((bd - Vec3i::Ones()).cast<double>());
  const double sigma_s = spec.shell_sigma > 0.0 ? spec.shell_sigma : cell.maxCoeff();
  const double inset = spec.surface_inset * sigma_s;
  const double sigma_pk = 20.0 / (std::sqrt(2.0 * M_PI) * sigma_s);

  auto vertexPos = [](const Aabb& b, const Vec3i& dims, int ix, int iy, int iz) {
    const Vec3 ext = b.extent();
    return Vec3(b.lo.x() + ext.x() * ix / (dims.x() - 1),
                b.lo.y() + ext.y() * iy / (dims.y() - 1),
                b.lo.z() + ext.z() * iz / (dims.z() - 1));
  };

  for (int iz = 0; iz < bd.z(); ++iz)
    for (int iy = 0; iy < bd.y(); ++iy)
      for (int ix = 0; ix < bd.x(); ++ix) {
        const Vec3 x = vertexPos(spec.bounds, bd, ix, iy, iz);
        double phi = 1e30;
        for (const Primitive& p : spec.primitives) phi = std::min(phi, p.sdf(x));
        const double arg = (phi + inset) / sigma_s;
        const double sigma = sigma_pk * std::exp(-0.5 * arg * arg);
        grid.density_raw[(size_t(iz) * bd.y() + iy) * bd.x() + ix] =
            sigma > 1e-9 ? softplusInv(sigma) : -25.0;
      }

  for (int iz = 0; iz < ad.z(); ++iz)
    for (int iy = 0; iy < ad.y(); ++iy)
      for (int ix = 0; ix < ad.x(); ++ix) {
        const Vec3 x = vertexPos(spec.bounds, ad, ix, iy, iz);
        const Primitive* nearest = nullptr;
        double best = 1e30;
        for (const Primitive& p : spec.primitives) {
          const double d = std::abs(p.sdf(x));
          if (d < best) {
            best = d;
            nearest = &p;
          }
        }
        const size_t v = (size_t(iz) * ad.y() + iy) * ad.x() + ix;
        double albedo = 0.5, amb = spec.background_ambient, lobe = 0.0;
        if (nearest) {
          albedo = std::min(std::max(nearest->albedo, 1e-4), 1.0 - 1e-4);
          amb = nearest->ambient;
          lobe = nearest->view_lobe;
        }
        double* rc = &grid.refl[v * kReflCoeffs];
        rc[0] = logit(albedo) / 0.28209479177387814;
        rc[2] = lobe;
        double* ac = &grid.ambient[v * kAmbCoeffs];
        ac[0] = amb > 1e-9 ? softplusInv(amb) / 0.28209479177387814 : -88.0;
      }

  proposal.allocate(spec.bounds, Vec3i(16, 16, 16));
  proposal.distillFrom(grid);
}

Image analyticDepth(const SceneSpec& spec, const CameraPose& pose,
                    const PinholeCamera& cam) {
  Image depth;
  depth.resize(cam.width, cam.height, float(kNoSurfaceDepth));
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      const Ray r = pixelRay(cam, pose, px, py);
      double best = 1e300;
      for (const Primitive& p : spec.primitives) {
        double t;
        if (p.intersect(r.origin, r.dir, 1e-6, t) && t < best) best = t;
      }
      if (best < 1e300) depth.at(px, py) = float(best);
    }
  return depth;
}

GatedStack simulateCapture(const SceneSpec& spec, const SceneGrid& grid,
                           const ProposalGrid& proposal, const CameraPose& pose,
                           uint64_t seed, uint64_t frame_id, int threads) {
  const PinholeCamera& cam = spec.camera;
  GatedStack out;
  for (Image* im : {&out.slices[0], &out.slices[1], &out.slices[2], &out.passive,
                    &out.shadow_mask})
    im->resize(cam.width, cam.height);
  out.depth = analyticDepth(spec, pose, cam);

  const SceneContext ctx{grid, proposal, spec.gating, spec.illuminator, spec.render};
  const RngKey frame_key = RngKey(seed).sub(0x51D).sub(frame_id);
  const size_t n = size_t(cam.width) * cam.height;

  parallelFor(n, threads, [&](size_t i) {
    const int px = int(i % cam.width);
    const int py = int(i / cam.width);
    const Ray ray = pixelRay(cam, pose, px, py);
    RayOptions opts;
    opts.sample_key = frame_key.sub(i);
    const RayOutputs ro = renderRay(ctx, ray, pose, opts);
    const RngKey noise_key = frame_key.sub(0xA015E).sub(i);
    for (int k = 0; k < 3; ++k) {
      double v = ro.intensity[size_t(k)];
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise_key.normal(uint64_t(k));
      out.slices[k].px[i] = float(v);
    }
    double vp = ro.passive;
    if (spec.noise_sigma > 0.0) vp += spec.noise_sigma * noise_key.normal(3);
    out.passive.px[i] = float(vp);

    // Shadow mask at the first analytic surface.
    float mask = 1.f;
    const float d = out.depth.px[i];
    if (d > 0.f) {
      const Vec3 xh = ray.origin + double(d) * ray.dir;
      const Vec3 oi = illuminatorOrigin(spec.illuminator, pose);
      const double psi = shadowTransmittance(grid, oi, xh, spec.render.shadow);
      mask = psi >= 0.5 ? 1.f : 0.f;
    }
    out.shadow_mask.px[i] = mask;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

void writeManifest(const std::string& path, const Manifest& m) {
  json frames = json::array();
  for (const FrameEntry& f : m.frames) {
    frames.push_back(json{{"pose", mat4ToJson(f.pose)},
                          {"slices", {f.slice_paths[0], f.slice_paths[1], f.slice_paths[2],
                                      f.slice_paths[3]}},
                          {"depth", f.depth_path},
                          {"shadow", f.shadow_path},
                          {"split", f.split}});
  }
  json j{{"width", m.width},
         {"height", m.height},
         {"camera", cameraToJson(m.camera)},
         {"bounds", {{"lo", vecToJson(m.bounds.lo)}, {"hi", vecToJson(m.bounds.hi)}}},
         {"background_ambient", m.background_ambient},
         {"gating", gatingToJson(m.gating_gt)},
         {"illuminator", illumToJson(m.illum_gt)},
         {"render", renderToJson(m.render)},
         {"gt_grid", m.gt_grid_path},
         {"frames", frames}};
  writeJsonFile(path, j);
}

Manifest readManifest(const std::string& path, bool check_files) {
  const json j = loadJsonFile(path);
  Manifest m;
  try {
    m.width = j.at("width");
    m.height = j.at("height");
    m.camera = cameraFromJson(j.at("camera"));
    m.bounds.lo = vecFromJson(j.at("bounds").at("lo"));
    m.bounds.hi = vecFromJson(j.at("bounds").at("hi"));
    m.background_ambient = j.value("background_ambient", 0.0);
    m.gating_gt = gatingFromJson(j.at("gating"));
    m.illum_gt = illumFromJson(j.at("illuminator"));
    if (j.contains("render")) m.render = renderFromJson(j.at("render"));
    m.gt_grid_path = j.value("gt_grid", "");
    for (const auto& fj : j.at("frames")) {
      FrameEntry f;
      f.pose = mat4FromJson(fj.at("pose"));
      const auto& sl = fj.at("slices");
      for (int k = 0; k < 4; ++k) f.slice_paths[k] = sl.at(k);
      f.depth_path = fj.at("depth");
      f.shadow_path = fj.at("shadow");
      f.split = fj.value("split", "train");
      if (f.split != "train" && f.split != "val" && f.split != "test")
        throw DataError("manifest: unknown split tag '" + f.split + "'");
      m.frames.push_back(f);
    }
  } catch (const json::exception& e) {
    throw DataError("manifest " + path + ": " + e.what());
  }
  for (const FrameEntry& f : m.frames) {
    const Mat3 r = f.pose.topLeftCorner<3, 3>();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
        std::abs(r.determinant() - 1.0) > 1e-9)
      throw DataError("manifest: pose rotation is not a proper rigid transform");
  }
  if (check_files) {
    const fs::path base = fs::path(path).parent_path();
    auto must_exist = [&](const std::string& rel) {
      if (rel.empty()) return;
      if (!fs::exists(base / rel))
        throw DataError("manifest references a missing file: " + (base / rel).string());
    };
    for (const FrameEntry& f : m.frames) {
      for (const auto& s : f.slice_paths) must_exist(s);
      must_exist(f.depth_path);
      must_exist(f.shadow_path);
    }
    must_exist(m.gt_grid_path);
  }
  return m;
}

Dataset loadDataset(const std::string& manifest_path) {
  Dataset d;
  d.manifest = readManifest(manifest_path, true);
  d.dir = fs::path(manifest_path).parent_path().string();
  const fs::path base(d.dir);
  for (size_t i = 0; i < d.manifest.frames.size(); ++i) {
    const FrameEntry& fe = d.manifest.frames[i];
    Frame f;
    f.pose.rot = fe.pose.topLeftCorner<3, 3>();
    f.pose.origin = fe.pose.block<3, 1>(0, 3);
    for (int k = 0; k < 4; ++k) {
      f.slices[k] = readPfm((base / fe.slice_paths[k]).string());
      if (f.slices[k].width != d.manifest.width || f.slices[k].height != d.manifest.height)
        throw DataError("dataset: image dimensions differ from the manifest: " +
                        fe.slice_paths[k]);
    }
    f.depth = readPfm((base / fe.depth_path).string());
    f.shadow = readPfm((base / fe.shadow_path).string());
    if (f.depth.width != d.manifest.width || f.shadow.width != d.manifest.width)
      throw DataError("dataset: auxiliary image dimensions differ from the manifest");
    f.split = fe.split == "train" ? 0 : (fe.split == "val" ? 1 : 2);
    (f.split == 0 ? d.train_idx : f.split == 1 ? d.val_idx : d.test_idx).push_back(int(i));
    d.frames.push_back(std::move(f));
  }
  return d;
}

std::string generateDataset(const SceneSpec& spec_in, const std::string& out_dir,
                            uint64_t seed, int threads) {
  SceneSpec spec = spec_in;
  spec.validate();
  fs::create_directories(fs::path(out_dir) / "frames");

  SceneGrid grid;
  ProposalGrid proposal;
  bakeScene(spec, grid, proposal);

  // Calibrate per-slice gains so peak active intensity sits near 0.8.
  if (spec.auto_gain) {
    CameraPose probe;
    const Mat4 m = spec.poses[spec.poses.size() / 2];
    probe.rot = m.topLeftCorner<3, 3>();
    probe.origin = m.block<3, 1>(0, 3);
    const SceneContext ctx{grid, proposal, spec.gating, spec.illuminator, spec.render};
    double peak[3] = {0, 0, 0};
    const RngKey key(seed ^ 0xCA11B);
    for (int py = 0; py < spec.camera.height; py += 2)
      for (int px = 0; px < spec.camera.width; px += 2) {
        const Ray ray = pixelRay(spec.camera, probe, px, py);
        RayOptions opts;
        opts.sample_key = key.sub(size_t(py) * spec.camera.width + px);
        const RayOutputs ro = renderRay(ctx, ray, probe, opts);
        for (int k = 0; k < 3; ++k)
          peak[k] = std::max(peak[k], ro.active_sum[size_t(k)]);
      }
    for (int k = 0; k < 3; ++k)
      if (peak[k] > 0.0) spec.gating.gain[size_t(k)] *= 0.8 / peak[k];
  }

  Manifest man;
  man.width = spec.camera.width;
  man.height = spec.camera.height;
  man.camera = spec.camera;
  man.bounds = spec.bounds;
  man.background_ambient = spec.background_ambient;
  man.gating_gt = spec.gating;
  man.illum_gt = spec.illuminator;
  man.render = spec.render;
  man.gt_grid_path = "gt_grid.ckpt";
  saveGridCheckpoint((fs::path(out_dir) / man.gt_grid_path).string(), grid, proposal);

  for (size_t i = 0; i < spec.poses.size(); ++i) {
    CameraPose pose;
    pose.rot = spec.poses[i].topLeftCorner<3, 3>();
    pose.origin = spec.poses[i].block<3, 1>(0, 3);
    const GatedStack stack = simulateCapture(spec, grid, proposal, pose, seed, i, threads);

    char name[64];
    FrameEntry fe;
    fe.pose = spec.poses[i];
    const char* kinds[6] = {"slice0", "slice1", "slice2", "passive", "depth", "shadow"};
    const Image* imgs[6] = {&stack.slices[0], &stack.slices[1], &stack.slices[2],
                            &stack.passive, &stack.depth, &stack.shadow_mask};
    for (int k = 0; k < 6; ++k) {
      std::snprintf(name, sizeof(name), "frames/f%03zu_%s.pfm", i, kinds[k]);
      writePfm((fs::path(out_dir) / name).string(), *imgs[k]);
      if (k < 4)
        fe.slice_paths[k] = name;
      else if (k == 4)
        fe.depth_path = name;
      else
        fe.shadow_path = name;
    }
    const int ti = int(i);
    fe.split = ti < spec.splits.train
                   ? "train"
                   : (ti < spec.splits.train + spec.splits.val ? "val" : "test");
    man.frames.push_back(fe);
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  writeManifest(manifest_path, man);
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Train config JSON (declared in train.hpp; lives here with the other
// config formats)
// ---------------------------------------------------------------------------

void loadTrainConfigJson(const std::string& path, TrainConfig& cfg, LossWeights& lw) {
  const json j = loadJsonFile(path);
  try {
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch_rays = j.value("batch_rays", cfg.batch_rays);
    cfg.lr_fields = j.value("lr_fields", cfg.lr_fields);
    cfg.lr_extrinsics = j.value("lr_extrinsics", cfg.lr_extrinsics);
    cfg.lr_gating = j.value("lr_gating", cfg.lr_gating);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.deterministic = j.value("deterministic", cfg.deterministic);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.val_interval = j.value("val_interval", cfg.val_interval);
    cfg.ckpt_interval = j.value("ckpt_interval", cfg.ckpt_interval);
    cfg.distill_interval = j.value("distill_interval", cfg.distill_interval);
    cfg.history_interval = j.value("history_interval", cfg.history_interval);
    cfg.learn_fields = j.value("learn_fields", cfg.learn_fields);
    cfg.learn_gating = j.value("learn_gating", cfg.learn_gating);
    cfg.learn_d0 = j.value("learn_d0", cfg.learn_d0);
    cfg.learn_extrinsics = j.value("learn_extrinsics", cfg.learn_extrinsics);
    cfg.learn_illum_profile = j.value("learn_illum_profile", cfg.learn_illum_profile);
    if (j.contains("density_dims")) cfg.density_dims = vec3iFromJson(j.at("density_dims"));
    if (j.contains("app_dims")) cfg.app_dims = vec3iFromJson(j.at("app_dims"));
    if (j.contains("proposal_dims")) cfg.proposal_dims = vec3iFromJson(j.at("proposal_dims"));
    cfg.init_density_raw = j.value("init_density_raw", cfg.init_density_raw);
    cfg.init_ambient_dc = j.value("init_ambient_dc", cfg.init_ambient_dc);
    if (j.contains("render")) cfg.render = renderFromJson(j.at("render"));
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      lw.lambda1 = l.value("lambda1", lw.lambda1);
      lw.lambda2 = l.value("lambda2", lw.lambda2);
      lw.lambda3 = l.value("lambda3", lw.lambda3);
      lw.lambda4 = l.value("lambda4", lw.lambda4);
      lw.lambda5 = l.value("lambda5", lw.lambda5);
      lw.s = l.value("s", lw.s);
      lw.eps_i = l.value("eps_i", lw.eps_i);
      lw.eps_x = l.value("eps_x", lw.eps_x);
      lw.eps_d_init = l.value("eps_d_init", lw.eps_d_init);
      lw.eps_d_decay = l.value("eps_d_decay", lw.eps_d_decay);
    }
  } catch (const json::exception& e) {
    throw ConfigError("train config " + path + ": " + e.what());
  }
  cfg.validate();
  lw.validate();
}

void saveTrainConfigJson(const std::string& path, const TrainConfig& cfg,
                         const LossWeights& lw) {
  json j{{"steps", cfg.steps},
         {"batch_rays", cfg.batch_rays},
         {"lr_fields", cfg.lr_fields},
         {"lr_extrinsics", cfg.lr_extrinsics},
         {"lr_gating", cfg.lr_gating},
         {"beta1", cfg.beta1},
         {"beta2", cfg.beta2},
         {"adam_eps", cfg.adam_eps},
         {"weight_decay", cfg.weight_decay},
         {"lr_decay", cfg.lr_decay},
         {"seed", cfg.seed},
         {"deterministic", cfg.deterministic},
         {"threads", cfg.threads},
         {"val_interval", cfg.val_interval},
         {"ckpt_interval", cfg.ckpt_interval},
         {"distill_interval", cfg.distill_interval},
         {"history_interval", cfg.history_interval},
         {"learn_fields", cfg.learn_fields},
         {"learn_gating", cfg.learn_gating},
         {"learn_d0", cfg.learn_d0},
         {"learn_extrinsics", cfg.learn_extrinsics},
         {"learn_illum_profile", cfg.learn_illum_profile},
         {"density_dims", {cfg.density_dims.x(), cfg.density_dims.y(), cfg.density_dims.z()}},
         {"app_dims", {cfg.app_dims.x(), cfg.app_dims.y(), cfg.app_dims.z()}},
         {"proposal_dims",
          {cfg.proposal_dims.x(), cfg.proposal_dims.y(), cfg.proposal_dims.z()}},
         {"init_density_raw", cfg.init_density_raw},
         {"init_ambient_dc", cfg.init_ambient_dc},
         {"render", renderToJson(cfg.render)},
         {"loss",
          {{"lambda1", lw.lambda1},
           {"lambda2", lw.lambda2},
           {"lambda3", lw.lambda3},
           {"lambda4", lw.lambda4},
           {"lambda5", lw.lambda5},
           {"s", lw.s},
           {"eps_i", lw.eps_i},
           {"eps_x", lw.eps_x},
           {"eps_d_init", lw.eps_d_init},
           {"eps_d_decay", lw.eps_d_decay}}}};
  writeJsonFile(path, j);
}

}  // namespace gvr
