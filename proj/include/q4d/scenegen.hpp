#pragma once

// Procedural dynamic scene generator. Scenes are rigid primitives (spheres,
// boxes, textured quads, an infinite background plane) moving along keyframed
// rigid tracks, rendered by per-pixel analytic ray casting with a z-buffer.
// Every covered pixel records which object it hit and where on the object, so
// the exact 3D displacement of that surface point to any other timestamp is
// available in closed form. This is both the training data source and the
// brute-force oracle for the learning tests.
//
// Determinism contract: identical seeds yield bit-identical bundles. All
// randomness goes through named PCG32 substreams, generation is
// single-threaded, and stored arrays are quantized to float32 once at the end
// of generation so that archives round-trip bit-exactly.

#include "q4d/geometry.hpp"
#include "q4d/representation.hpp"
#include "q4d/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4d {

// ---------------------------------------------------------------------------
// Scene description

enum class ShapeKind : int { Sphere = 0, Box = 1, Quad = 2, Plane = 3 };

enum class MotionKind : int { Static = 0, ConstantVelocity = 1, Sinusoidal = 2,
                              PiecewiseLinear = 3 };

// Keyframed rigid poses, one per frame (local -> world).
struct MotionProgram {
  std::vector<CameraPose> poses;

  bool is_static() const {
    for (std::size_t i = 1; i < poses.size(); ++i) {
      if ((poses[i].translation - poses[0].translation).norm() > 0 ||
          rotation_angle(poses[i].rotation, poses[0].rotation) > 0)
        return false;
    }
    return true;
  }
};

struct TextureParams {
  double checker_scale = 2.0;
  Vec3 color_a = Vec3(0.9, 0.9, 0.9);
  Vec3 color_b = Vec3(0.1, 0.1, 0.1);
  double noise_amp = 0.2;
  double noise_scale = 4.0;
  std::uint64_t noise_seed = 0;
};

struct RigidBody {
  ShapeKind shape = ShapeKind::Sphere;
  double size = 0.5;  // radius / half-extent / half-side
  TextureParams texture;
  MotionProgram motion;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int num_frames = 2;
  int height = 64, width = 64;
  double vertical_fov = 1.0;  // radians
  std::vector<RigidBody> objects;
  MotionProgram camera_path;
  Vec3 light_dir = Vec3(0.3, -0.5, -0.8);
  double ambient = 0.35;

  void validate() const {
    if (num_frames < 2)
      throw std::invalid_argument("scene spec: need at least 2 frames");
    if (height < 8 || width < 8 || height % 2 || width % 2)
      throw std::invalid_argument("scene spec: resolution must be even, >= 8");
    for (const auto& o : objects) {
      if (!(o.size > 0))
        throw std::invalid_argument("scene spec: nonpositive object size");
      if (static_cast<int>(o.motion.poses.size()) != num_frames)
        throw std::invalid_argument(
            "scene spec: motion not defined for all frames");
    }
    if (static_cast<int>(camera_path.poses.size()) != num_frames)
      throw std::invalid_argument("scene spec: camera path length mismatch");
  }
};

// ---------------------------------------------------------------------------
// Procedural texture

namespace detail {

inline std::uint64_t hash3(std::int64_t x, std::int64_t y, std::int64_t z,
                           std::uint64_t seed) {
  std::uint64_t h = seed;
  h ^= static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL;
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ULL;
  h ^= static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBULL;
  h ^= static_cast<std::uint64_t>(z) * 0x165667B19E3779F9ULL;
  h = (h ^ (h >> 31)) * 0xD6E8FEB86659FD93ULL;
  return h ^ (h >> 32);
}

inline double lattice(std::int64_t x, std::int64_t y, std::int64_t z,
                      std::uint64_t seed) {
  return static_cast<double>(hash3(x, y, z, seed) >> 11) * 0x1.0p-53;
}

// Trilinear value noise in [0, 1].
inline double value_noise(const Vec3& p, std::uint64_t seed) {
  auto fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy),
       iz = static_cast<std::int64_t>(fz);
  double tx = p.x() - fx, ty = p.y() - fy, tz = p.z() - fz;
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  tx = smooth(tx);
  ty = smooth(ty);
  tz = smooth(tz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

inline Vec3 albedo(const TextureParams& tex, const Vec3& local) {
  Vec3 s = local * tex.checker_scale;
  int parity = (static_cast<std::int64_t>(std::floor(s.x())) +
                static_cast<std::int64_t>(std::floor(s.y())) +
                static_cast<std::int64_t>(std::floor(s.z()))) & 1;
  Vec3 base = parity ? tex.color_b : tex.color_a;
  double n = value_noise(local * tex.noise_scale, tex.noise_seed);
  Vec3 c = base + Vec3::Constant(tex.noise_amp * (n - 0.5));
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------
// Analytic intersections in the object's local frame. The ray is
// parameterized so that t equals camera z-depth (direction has unit
// camera-frame z). Returns smallest t > t_min, or +inf.

struct LocalHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 local = Vec3::Zero();
  Vec3 normal_local = Vec3::Zero();
};

inline LocalHit intersect_local(ShapeKind shape, double size, const Vec3& o,
                                const Vec3& d, double t_min) {
  LocalHit hit;
  switch (shape) {
    case ShapeKind::Sphere: {
      double a = d.squaredNorm();
      double b = 2.0 * o.dot(d);
      double c = o.squaredNorm() - size * size;
      double disc = b * b - 4 * a * c;
      if (disc < 0) return hit;
      double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t > t_min && t < hit.t) {
          hit.t = t;
          hit.local = o + t * d;
          hit.normal_local = hit.local.normalized();
        }
      }
      return hit;
    }
    case ShapeKind::Box: {
      double t0 = t_min, t1 = std::numeric_limits<double>::infinity();
      int axis0 = -1;
      for (int k = 0; k < 3; ++k) {
        if (std::fabs(d[k]) < 1e-300) {
          if (std::fabs(o[k]) > size) return hit;
          continue;
        }
        double ta = (-size - o[k]) / d[k];
        double tb = (size - o[k]) / d[k];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
          t0 = ta;
          axis0 = k;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return hit;
      }
      if (axis0 < 0) return hit;  // started inside; ignore
      hit.t = t0;
      hit.local = o + t0 * d;
      Vec3 n = Vec3::Zero();
      n[axis0] = hit.local[axis0] > 0 ? 1.0 : -1.0;
      hit.normal_local = n;
      return hit;
    }
    case ShapeKind::Quad:
    case ShapeKind::Plane: {
      if (std::fabs(d.z()) < 1e-300) return hit;
      double t = -o.z() / d.z();
      if (t <= t_min) return hit;
      Vec3 p = o + t * d;
      if (shape == ShapeKind::Quad &&
          (std::fabs(p.x()) > size || std::fabs(p.y()) > size))
        return hit;
      hit.t = t;
      hit.local = p;
      hit.normal_local = Vec3(0, 0, d.z() > 0 ? -1.0 : 1.0);
      return hit;
    }
  }
  return hit;
}

inline float f32(double x) { return static_cast<float>(x); }
// The volatile store blocks GCC's vectorizer from eliding the
// narrow-to-float rounding at -O3, which would leave the in-memory bundle
// different from its float32 archive form.
inline double q32(double x) {
  volatile float f = static_cast<float>(x);
  return f;
}
inline Vec3 q32(const Vec3& v) { return Vec3(q32(v.x()), q32(v.y()), q32(v.z())); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Ground truth bundle

struct SceneHit {
  int object = -1;  // -1: no hit (sky)
  Vec3 local = Vec3::Zero();
};

struct GroundTruthBundle {
  CameraIntrinsics intrinsics;
  std::vector<CameraPose> poses;            // first pose is identity
  std::vector<Grid<Vec3>> frames;           // RGB in [0,1]
  std::vector<DepthMap> depths;             // z-depth, valid = covered
  std::vector<Grid<int>> hit_object;        // per pixel object id or -1
  std::vector<Grid<Vec3>> hit_local;        // object-local surface point
  std::vector<Mask> dynamic_mask;           // moving-object pixels
  std::vector<RigidBody> objects;           // motion poses included
  std::vector<std::uint8_t> object_dynamic; // cached per-object flag
  std::uint64_t seed = 0;

  int num_frames() const { return static_cast<int>(frames.size()); }
  Timestamp stamp(int i) const { return Timestamp(i, num_frames()); }

  // World position at time tau of the surface point seen at (u, v) in frame
  // i. Exact by construction: the point rides rigidly on its object.
  Vec3 world_at(int i, int u, int v, int tau) const {
    int obj = hit_object[i].at(v, u);
    const Vec3& local = hit_local[i].at(v, u);
    return objects[static_cast<std::size_t>(obj)].motion.poses[tau].to_world(
        local);
  }

  DisplacementField displacement(int i, int tau) const {
    int h = depths[i].values.h, w = depths[i].values.w;
    DisplacementField d(h, w, stamp(i), stamp(tau));
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        if (!depths[i].valid.at(v, u)) continue;
        d.valid.at(v, u) = 1;
        if (i == tau) continue;  // exactly zero
        d.deltas.at(v, u) = world_at(i, u, v, tau) - world_at(i, u, v, i);
      }
    return d;
  }

  // First-hit z-depth along the ray from camera tau through world point x.
  // Returns +inf for rays behind the camera.
  double cast_depth(int tau, const Vec3& x) const {
    Vec3 cam = poses[tau].to_camera(x);
    if (cam.z() <= 0) return std::numeric_limits<double>::infinity();
    Vec3 dir_cam = cam / cam.z();  // unit camera z: parameter == z-depth
    Vec3 o_world = poses[tau].translation;
    Vec3 d_world = poses[tau].rotation * dir_cam;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& obj : objects) {
      const CameraPose& op = obj.motion.poses[tau];
      Vec3 o_l = op.to_camera(o_world);
      Vec3 d_l = op.rotation.conjugate() * d_world;
      auto hit = detail::intersect_local(obj.shape, obj.size, o_l, d_l, 1e-9);
      best = std::min(best, hit.t);
    }
    return best;
  }

  // Whether the surface point seen at (u, v) in frame i is unoccluded and in
  // view at time tau.
  bool visible(int i, int u, int v, int tau) const {
    if (!depths[i].valid.at(v, u)) return false;
    Vec3 x = world_at(i, u, v, tau);
    double pu, pv, z;
    if (!project(intrinsics, poses[tau], x, pu, pv, z)) return false;
    if (pu < -0.5 || pu > intrinsics.width - 0.5 || pv < -0.5 ||
        pv > intrinsics.height - 0.5)
      return false;
    double first = cast_depth(tau, x);
    return first >= z - 1e-6 * std::max(1.0, z);
  }

  Mask visibility(int i, int tau) const {
    int h = depths[i].values.h, w = depths[i].values.w;
    Mask m(h, w, 0);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u)
        if (visible(i, u, v, tau)) m.at(v, u) = 1;
    return m;
  }

  PointMap base_pointmap(int i) const {
    return unproject(depths[i], intrinsics, poses[i]);
  }

  FactorizedFrame4D factorized(int i) const {
    FactorizedFrame4D f;
    f.source = stamp(i);
    f.base = base_pointmap(i);
    for (int tau = 0; tau < num_frames(); ++tau)
      f.displacements.emplace(tau, displacement(i, tau));
    return f;
  }
};

// ---------------------------------------------------------------------------
// Motion program constructors

inline MotionProgram motion_static(const CameraPose& pose, int n) {
  MotionProgram m;
  m.poses.assign(static_cast<std::size_t>(n), pose);
  return m;
}

inline MotionProgram motion_constant_velocity(const CameraPose& start,
                                              const Vec3& velocity,
                                              const Vec3& axis_rate, int n) {
  MotionProgram m;
  for (int i = 0; i < n; ++i) {
    CameraPose p;
    Vec3 w = axis_rate * static_cast<double>(i);
    double ang = w.norm();
    Quat dq = ang > 0 ? Quat(Eigen::AngleAxisd(ang, w / ang)) : Quat::Identity();
    p.rotation = canonical(dq * start.rotation);
    p.translation = start.translation + velocity * static_cast<double>(i);
    m.poses.push_back(p);
  }
  return m;
}

inline MotionProgram motion_sinusoidal(const CameraPose& start,
                                       const Vec3& amplitude, double period,
                                       double phase, int n) {
  MotionProgram m;
  for (int i = 0; i < n; ++i) {
    CameraPose p = start;
    double s = std::sin(2.0 * M_PI * i / period + phase);
    p.translation = start.translation + amplitude * s;
    m.poses.push_back(p);
  }
  return m;
}

inline MotionProgram motion_piecewise_linear(const CameraPose& start,
                                             const std::vector<Vec3>& waypoints,
                                             int n) {
  // Linear interpolation of the translation through the waypoint list.
  MotionProgram m;
  std::vector<Vec3> pts;
  pts.push_back(start.translation);
  for (const auto& w : waypoints) pts.push_back(w);
  for (int i = 0; i < n; ++i) {
    double t = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    double s = t * (pts.size() - 1);
    auto k = std::min(static_cast<std::size_t>(s), pts.size() - 2);
    double f = s - static_cast<double>(k);
    CameraPose p = start;
    p.translation = (1 - f) * pts[k] + f * pts[k + 1];
    m.poses.push_back(p);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Rendering

inline GroundTruthBundle generate(const SceneSpec& spec) {
  spec.validate();
  int n = spec.num_frames, h = spec.height, w = spec.width;
  GroundTruthBundle out;
  out.seed = spec.seed;
  out.intrinsics =
      CameraIntrinsics::centered(spec.width, spec.height, spec.vertical_fov);
  out.objects = spec.objects;

  // Re-center the camera path so the first frame is the world frame.
  CameraPose inv0 = spec.camera_path.poses[0].inverse();
  for (int i = 0; i < n; ++i)
    out.poses.push_back(inv0.compose(spec.camera_path.poses[i]));
  for (auto& obj : out.objects)
    for (auto& p : obj.motion.poses) p = inv0.compose(p);
  out.poses[0] = CameraPose::identity();  // exact

  for (const auto& obj : out.objects)
    out.object_dynamic.push_back(obj.motion.is_static() ? 0 : 1);

  Vec3 light = spec.light_dir.normalized();
  for (int i = 0; i < n; ++i) {
    const CameraPose& cam = out.poses[i];
    Grid<Vec3> rgb(h, w, Vec3::Zero());
    DepthMap depth(h, w);
    Grid<int> hit_obj(h, w, -1);
    Grid<Vec3> hit_local(h, w, Vec3::Zero());
    Mask dyn(h, w, 0);

    // Object poses in camera-relative form, hoisted out of the pixel loop.
    struct LocalFrame {
      Vec3 origin;
      Quat rot_inv;
    };
    std::vector<LocalFrame> lf;
    for (const auto& obj : out.objects) {
      const CameraPose& op = obj.motion.poses[i];
      lf.push_back({op.to_camera(cam.translation), op.rotation.conjugate()});
    }

    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        Vec3 dir_world = cam.rotation * pixel_ray_camera(out.intrinsics, u, v);
        double best = std::numeric_limits<double>::infinity();
        int best_obj = -1;
        detail::LocalHit best_hit;
        for (std::size_t k = 0; k < out.objects.size(); ++k) {
          Vec3 d_l = lf[k].rot_inv * dir_world;
          auto hit = detail::intersect_local(out.objects[k].shape,
                                             out.objects[k].size, lf[k].origin,
                                             d_l, 1e-6);
          if (hit.t < best) {
            best = hit.t;
            best_obj = static_cast<int>(k);
            best_hit = hit;
          }
        }
        if (best_obj < 0) continue;
        const RigidBody& obj = out.objects[static_cast<std::size_t>(best_obj)];
        Vec3 normal_world =
            obj.motion.poses[i].rotation * best_hit.normal_local;
        double diffuse = std::max(0.0, normal_world.dot(-light));
        Vec3 color = detail::albedo(obj.texture, best_hit.local) *
                     (spec.ambient + (1.0 - spec.ambient) * diffuse);
        rgb.at(v, u) = color.cwiseMax(0.0).cwiseMin(1.0);
        depth.values.at(v, u) = best;  // t parameter equals z-depth
        depth.valid.at(v, u) = 1;
        hit_obj.at(v, u) = best_obj;
        hit_local.at(v, u) = best_hit.local;
        dyn.at(v, u) = out.object_dynamic[static_cast<std::size_t>(best_obj)];
      }

    out.frames.push_back(std::move(rgb));
    out.depths.push_back(std::move(depth));
    out.hit_object.push_back(std::move(hit_obj));
    out.hit_local.push_back(std::move(hit_local));
    out.dynamic_mask.push_back(std::move(dyn));
  }

  // Quantize everything that gets archived to float32 once, here, so the
  // in-memory bundle and its serialized form are bit-identical.
  for (auto& f : out.frames)
    for (auto& p : f.data) p = detail::q32(p);
  for (auto& d : out.depths)
    for (auto& z : d.values.data) z = detail::q32(z);
  for (auto& g : out.hit_local)
    for (auto& p : g.data) p = detail::q32(p);
  auto qpose = [](CameraPose& p) {
    p.rotation = Quat(detail::q32(p.rotation.w()), detail::q32(p.rotation.x()),
                      detail::q32(p.rotation.y()), detail::q32(p.rotation.z()));
    p.translation = detail::q32(p.translation);
  };
  for (auto& p : out.poses) qpose(p);
  for (auto& obj : out.objects)
    for (auto& p : obj.motion.poses) qpose(p);
  return out;
}

// ---------------------------------------------------------------------------
// Photometric augmentation (GT untouched). Probabilities follow the training
// recipe: blur 0.2, color jitter 0.1, grayscale 0.05; a zeroed config is the
// identity.

struct AugmentConfig {
  double p_blur = 0.2;
  double p_jitter = 0.1;
  double p_grayscale = 0.05;
};

inline std::vector<Grid<Vec3>> augment(const std::vector<Grid<Vec3>>& frames,
                                       std::uint64_t seed,
                                       const AugmentConfig& cfg = {}) {
  Pcg32 rng = make_stream(seed, 0xA46);
  std::vector<Grid<Vec3>> out = frames;

  if (rng.next_double() < cfg.p_blur) {
    double sigma = rng.uniform(0.3, 1.2);
    int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      kernel[static_cast<std::size_t>(k + radius)] =
          std::exp(-0.5 * k * k / (sigma * sigma));
      ksum += kernel[static_cast<std::size_t>(k + radius)];
    }
    for (auto& x : kernel) x /= ksum;
    for (auto& img : out) {
      Grid<Vec3> tmp(img.h, img.w, Vec3::Zero());
      for (int v = 0; v < img.h; ++v)
        for (int u = 0; u < img.w; ++u) {
          Vec3 acc = Vec3::Zero();
          for (int k = -radius; k <= radius; ++k)
            acc += kernel[static_cast<std::size_t>(k + radius)] *
                   img.at(v, std::clamp(u + k, 0, img.w - 1));
          tmp.at(v, u) = acc;
        }
      for (int v = 0; v < img.h; ++v)
        for (int u = 0; u < img.w; ++u) {
          Vec3 acc = Vec3::Zero();
          for (int k = -radius; k <= radius; ++k)
            acc += kernel[static_cast<std::size_t>(k + radius)] *
                   tmp.at(std::clamp(v + k, 0, img.h - 1), u);
          img.at(v, u) = acc;
        }
    }
  }

  if (rng.next_double() < cfg.p_jitter) {
    double brightness = rng.uniform(0.8, 1.2);
    double contrast = rng.uniform(0.8, 1.2);
    double saturation = rng.uniform(0.8, 1.2);
    for (auto& img : out)
      for (auto& p : img.data) {
        p *= brightness;
        p = Vec3::Constant(0.5) + contrast * (p - Vec3::Constant(0.5));
        double luma = 0.299 * p.x() + 0.587 * p.y() + 0.114 * p.z();
        p = Vec3::Constant(luma) + saturation * (p - Vec3::Constant(luma));
      }
  }

  if (rng.next_double() < cfg.p_grayscale) {
    for (auto& img : out)
      for (auto& p : img.data) {
        double luma = 0.299 * p.x() + 0.587 * p.y() + 0.114 * p.z();
        p = Vec3::Constant(luma);
      }
  }

  for (auto& img : out)
    for (auto& p : img.data) p = p.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Clip sampling: strict temporal order, random stride in [1, 5], re-indexed
// timestamps, world frame re-centered on the clip's first camera.

inline GroundTruthBundle sample_clip(const GroundTruthBundle& bundle,
                                     int clip_len, std::uint64_t seed) {
  int n = bundle.num_frames();
  if (clip_len < 2 || clip_len > n)
    throw std::invalid_argument("sample_clip: insufficient frames");
  Pcg32 rng = make_stream(seed, 0xC11);
  int max_stride = std::min(5, (n - 1) / (clip_len - 1));
  int stride = 1 + static_cast<int>(rng.next_bounded(
                       static_cast<std::uint32_t>(max_stride)));
  int span = (clip_len - 1) * stride;
  int start =
      static_cast<int>(rng.next_bounded(static_cast<std::uint32_t>(n - span)));

  GroundTruthBundle out;
  out.seed = bundle.seed;
  out.intrinsics = bundle.intrinsics;
  out.objects = bundle.objects;
  out.object_dynamic = bundle.object_dynamic;

  CameraPose inv0 = bundle.poses[start].inverse();
  std::vector<int> sel;
  for (int k = 0; k < clip_len; ++k) sel.push_back(start + k * stride);

  for (int idx : sel) {
    out.poses.push_back(inv0.compose(bundle.poses[idx]));
    out.frames.push_back(bundle.frames[idx]);
    out.depths.push_back(bundle.depths[idx]);
    out.hit_object.push_back(bundle.hit_object[idx]);
    out.hit_local.push_back(bundle.hit_local[idx]);
    out.dynamic_mask.push_back(bundle.dynamic_mask[idx]);
  }
  for (auto& obj : out.objects) {
    std::vector<CameraPose> kept;
    for (int idx : sel) kept.push_back(inv0.compose(obj.motion.poses[idx]));
    obj.motion.poses = std::move(kept);
  }
  out.poses[0] = CameraPose::identity();
  return out;
}

// ---------------------------------------------------------------------------
// Random scene specs

struct SceneGenConfig {
  int min_frames = 2, max_frames = 18;
  int height = 64, width = 64;
  double min_aspect = 1.0, max_aspect = 1.0;  // (W/H); 1 disables
  int min_objects = 2, max_objects = 4;
  double min_fov = 0.7, max_fov = 1.2;
  double max_speed = 0.25;      // object translation per frame
  double max_cam_speed = 0.08;  // camera translation per frame
  double background_dist = 8.0;
};

inline SceneSpec random_scene_spec(std::uint64_t seed,
                                   const SceneGenConfig& cfg = {}) {
  SceneSpec spec;
  spec.seed = seed;
  Pcg32 rng = make_stream(seed, 0x5CE);
  spec.num_frames =
      cfg.min_frames + static_cast<int>(rng.next_bounded(
                           static_cast<std::uint32_t>(cfg.max_frames -
                                                      cfg.min_frames + 1)));
  int n = spec.num_frames;
  if (cfg.max_aspect > cfg.min_aspect) {
    // Aspect-ratio augmentation applied at generation time: pick (H, W) with
    // roughly constant pixel count, rounded to even.
    double aspect = rng.uniform(cfg.min_aspect, cfg.max_aspect);
    double area = static_cast<double>(cfg.height) * cfg.width;
    int hh = static_cast<int>(std::lround(std::sqrt(area / aspect) / 2.0)) * 2;
    int ww = static_cast<int>(std::lround(std::sqrt(area * aspect) / 2.0)) * 2;
    spec.height = std::max(8, hh);
    spec.width = std::max(8, ww);
  } else {
    spec.height = cfg.height;
    spec.width = cfg.width;
  }
  spec.vertical_fov = rng.uniform(cfg.min_fov, cfg.max_fov);

  // Background: static wall plane facing the camera.
  RigidBody wall;
  wall.shape = ShapeKind::Plane;
  wall.size = 1.0;
  wall.texture.checker_scale = rng.uniform(0.4, 1.0);
  wall.texture.noise_amp = 0.35;
  wall.texture.noise_scale = rng.uniform(0.5, 2.0);
  wall.texture.noise_seed = rng.next_u64();
  wall.texture.color_a = Vec3(rng.uniform(0.5, 0.9), rng.uniform(0.5, 0.9),
                              rng.uniform(0.5, 0.9));
  wall.texture.color_b = Vec3(rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5),
                              rng.uniform(0.1, 0.5));
  CameraPose wall_pose;
  wall_pose.translation = Vec3(0, 0, cfg.background_dist);
  wall.motion = motion_static(wall_pose, n);
  spec.objects.push_back(wall);

  int num_obj =
      cfg.min_objects + static_cast<int>(rng.next_bounded(
                            static_cast<std::uint32_t>(cfg.max_objects -
                                                       cfg.min_objects + 1)));
  for (int k = 0; k < num_obj; ++k) {
    RigidBody obj;
    switch (rng.next_bounded(3)) {
      case 0: obj.shape = ShapeKind::Sphere; break;
      case 1: obj.shape = ShapeKind::Box; break;
      default: obj.shape = ShapeKind::Quad; break;
    }
    obj.size = rng.uniform(0.3, 0.9);
    obj.texture.checker_scale = rng.uniform(1.5, 5.0);
    obj.texture.noise_amp = rng.uniform(0.1, 0.4);
    obj.texture.noise_scale = rng.uniform(2.0, 8.0);
    obj.texture.noise_seed = rng.next_u64();
    obj.texture.color_a = Vec3(rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0),
                               rng.uniform(0.4, 1.0));
    obj.texture.color_b = Vec3(rng.uniform(0.0, 0.4), rng.uniform(0.0, 0.4),
                               rng.uniform(0.0, 0.4));

    CameraPose start;
    start.translation = Vec3(rng.uniform(-1.8, 1.8), rng.uniform(-1.2, 1.2),
                             rng.uniform(3.0, 6.0));
    start.rotation = canonical(
        Quat(Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI),
                               Vec3(rng.normal(), rng.normal(), rng.normal())
                                   .normalized())));
    double speed = rng.uniform(0.2, 1.0) * cfg.max_speed;
    switch (rng.next_bounded(3)) {
      case 0: {
        Vec3 vel = Vec3(rng.normal(), rng.normal(), 0.4 * rng.normal())
                       .normalized() * speed;
        Vec3 spin = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized() *
                    rng.uniform(0.0, 0.2);
        obj.motion = motion_constant_velocity(start, vel, spin, n);
        break;
      }
      case 1: {
        Vec3 amp = Vec3(rng.normal(), rng.normal(), 0.4 * rng.normal())
                       .normalized() * speed * n * 0.4;
        obj.motion = motion_sinusoidal(start, amp, rng.uniform(6.0, 2.0 * n),
                                       rng.uniform(0, 2 * M_PI), n);
        break;
      }
      default: {
        std::vector<Vec3> wps;
        int nw = 1 + static_cast<int>(rng.next_bounded(2));
        for (int j = 0; j < nw; ++j)
          wps.push_back(start.translation +
                        Vec3(rng.normal(), rng.normal(), 0.4 * rng.normal()) *
                            speed * n * 0.5);
        obj.motion = motion_piecewise_linear(start, wps, n);
        break;
      }
    }
    spec.objects.push_back(obj);
  }

  // Slow camera track with a mild yaw drift.
  CameraPose cam_start;
  Vec3 cam_vel = Vec3(rng.normal(), 0.4 * rng.normal(), 0.4 * rng.normal())
                     .normalized() * rng.uniform(0.2, 1.0) * cfg.max_cam_speed;
  Vec3 cam_spin = Vec3(0, 1, 0) * rng.uniform(-0.01, 0.01);
  spec.camera_path = motion_constant_velocity(cam_start, cam_vel, cam_spin, n);
  return spec;
}

}  // namespace q4d
