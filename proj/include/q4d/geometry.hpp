#pragma once

// Camera models, ray maps, pointmap assembly under the perspective model,
// Sim(3) transforms and scene-scale normalization.
//
// Conventions (fixed across the whole project):
//  - depth is z-depth along the camera optical axis,
//  - pixel (u, v) samples at center (u + 0.5, v + 0.5), u indexes width,
//  - camera-to-world pose: world = R * cam + t, t is the camera center,
//  - quaternions are scalar-first with positive-scalar canonicalization,
//  - ray maps live on the half-resolution grid; directions have unit
//    camera-frame z before rotation so that origin + depth * direction
//    reproduces the pinhole unprojection.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace q4d {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

template <typename T>
struct Grid {
  int h = 0, w = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h_, int w_, T fill = T{})
      : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * w + x];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }
};

using Mask = Grid<std::uint8_t>;

struct CameraIntrinsics {
  int width = 0;
  int height = 0;
  double vertical_fov = 0.0;  // radians
  double px = 0.0, py = 0.0;  // principal point, pixels

  static CameraIntrinsics centered(int width, int height, double vertical_fov) {
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.vertical_fov = vertical_fov;
    k.px = width / 2.0;
    k.py = height / 2.0;
    return k;
  }

  void validate() const {
    if (width < 8 || height < 8 || width % 2 || height % 2)
      throw std::invalid_argument(
          "intrinsics: width/height must be even and >= 8");
    if (!(vertical_fov > 0.0 && vertical_fov < M_PI))
      throw std::invalid_argument("intrinsics: fov must be in (0, pi)");
    if (px < 0 || px > width || py < 0 || py > height)
      throw std::invalid_argument("intrinsics: principal point outside image");
  }

  double focal() const { return (height / 2.0) / std::tan(vertical_fov / 2.0); }
};

inline Quat canonical(const Quat& q) {
  Quat n = q.normalized();
  if (n.w() < 0) return Quat(-n.w(), -n.x(), -n.y(), -n.z());
  return n;
}

struct CameraPose {
  Quat rotation = Quat::Identity();  // camera-to-world
  Vec3 translation = Vec3::Zero();   // camera center in world

  static CameraPose identity() { return CameraPose{}; }

  void validate() const {
    // Tolerance admits rotations round-tripped through float32 storage.
    if (std::fabs(rotation.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("pose: quaternion not unit");
  }

  Vec3 to_world(const Vec3& cam) const { return rotation * cam + translation; }
  Vec3 to_camera(const Vec3& world) const {
    return rotation.conjugate() * (world - translation);
  }

  // this ∘ other (apply other first).
  CameraPose compose(const CameraPose& other) const {
    CameraPose out;
    out.rotation = (rotation * other.rotation).normalized();
    out.translation = rotation * other.translation + translation;
    return out;
  }

  CameraPose inverse() const {
    CameraPose out;
    out.rotation = rotation.conjugate();
    out.translation = -(rotation.conjugate() * translation);
    return out;
  }
};

struct DepthMap {
  Grid<double> values;
  Mask valid;

  DepthMap() = default;
  DepthMap(int h, int w) : values(h, w, 0.0), valid(h, w, 0) {}
};

struct RayMap {
  // Half-resolution grid: (H/2) x (W/2).
  Grid<Vec3> origins;
  Grid<Vec3> directions;

  RayMap() = default;
  RayMap(int h2, int w2)
      : origins(h2, w2, Vec3::Zero()), directions(h2, w2, Vec3::Zero()) {}
};

struct PointMap {
  Grid<Vec3> points;
  Mask valid;

  PointMap() = default;
  PointMap(int h, int w) : points(h, w, Vec3::Zero()), valid(h, w, 0) {}
};

struct Sim3 {
  double scale = 1.0;
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static Sim3 identity() { return Sim3{}; }

  void validate() const {
    if (!(scale > 0.0)) throw std::invalid_argument("sim3: scale must be > 0");
    if (std::fabs(rotation.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("sim3: quaternion not unit");
  }

  Vec3 apply(const Vec3& p) const {
    return scale * (rotation * p) + translation;
  }

  Sim3 compose(const Sim3& other) const {
    Sim3 out;
    out.scale = scale * other.scale;
    out.rotation = (rotation * other.rotation).normalized();
    out.translation = scale * (rotation * other.translation) + translation;
    return out;
  }

  Sim3 inverse() const {
    Sim3 out;
    out.scale = 1.0 / scale;
    out.rotation = rotation.conjugate();
    out.translation = -(rotation.conjugate() * translation) / scale;
    return out;
  }

  // Rigid pose mapped through the similarity: centers scale, rotations do not.
  CameraPose apply(const CameraPose& pose) const {
    CameraPose out;
    out.rotation = (rotation * pose.rotation).normalized();
    out.translation = apply(pose.translation);
    return out;
  }
};

// Camera-frame direction through the pixel center (u + 0.5, v + 0.5), with
// unit z component.
inline Vec3 pixel_ray_camera(const CameraIntrinsics& intr, double u, double v) {
  double f = intr.focal();
  return Vec3((u + 0.5 - intr.px) / f, (v + 0.5 - intr.py) / f, 1.0);
}

// World-space ray map on the half-resolution grid. Half-grid cell (x, y)
// covers full pixels (2x, 2y)..(2x+1, 2y+1); its center sits at full-res
// pixel coordinate (2x + 1, 2y + 1) measured in pixel-center units.
inline RayMap intrinsics_to_rays(const CameraIntrinsics& intr,
                                 const CameraPose& pose) {
  intr.validate();
  pose.validate();
  int h2 = intr.height / 2, w2 = intr.width / 2;
  RayMap rays(h2, w2);
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x) {
      // Center of the 2x2 full-res block, expressed as a full-res pixel
      // index with a half-pixel offset: u + 0.5 = 2x + 1.
      Vec3 cam = pixel_ray_camera(intr, 2.0 * x + 0.5, 2.0 * y + 0.5);
      rays.directions.at(y, x) = pose.rotation * cam;
      rays.origins.at(y, x) = pose.translation;
    }
  return rays;
}

inline PointMap unproject(const DepthMap& depth, const CameraIntrinsics& intr,
                          const CameraPose& pose) {
  intr.validate();
  pose.validate();
  if (depth.values.h != intr.height || depth.values.w != intr.width)
    throw std::invalid_argument("unproject: depth/intrinsics shape mismatch");
  PointMap pm(depth.values.h, depth.values.w);
  for (int v = 0; v < intr.height; ++v)
    for (int u = 0; u < intr.width; ++u) {
      if (!depth.valid.at(v, u)) continue;
      Vec3 dir = pose.rotation * pixel_ray_camera(intr, u, v);
      pm.points.at(v, u) = pose.translation + depth.values.at(v, u) * dir;
      pm.valid.at(v, u) = 1;
    }
  return pm;
}

// Projection helper (inverse of unproject for points in front of the camera).
// Returns camera z-depth; pixel coordinates are continuous, pixel-center
// convention (a point at pixel index u projects to u + 0.5... - 0.5 == u).
inline bool project(const CameraIntrinsics& intr, const CameraPose& pose,
                    const Vec3& world, double& u, double& v, double& z) {
  Vec3 cam = pose.to_camera(world);
  z = cam.z();
  if (z <= 0.0) return false;
  double f = intr.focal();
  u = cam.x() / z * f + intr.px - 0.5;
  v = cam.y() / z * f + intr.py - 0.5;
  return true;
}

namespace detail {
// Linear interpolation cell + weight with extrapolation at the borders
// (weights may leave [0, 1]; indices stay in range).
inline void lerp_cell(double t, int n, int& i0, double& w) {
  int i = static_cast<int>(std::floor(t));
  i0 = std::clamp(i, 0, n - 2);
  w = t - static_cast<double>(i0);
}
}  // namespace detail

// Assemble a full-resolution pointmap from depth and a half-resolution ray
// map: origins/directions are upsampled bilinearly (with linear extrapolation
// at the image border), then P = origin + depth * direction.
inline PointMap pointmap_from_rays(const DepthMap& depth, const RayMap& rays) {
  int h = depth.values.h, w = depth.values.w;
  if (rays.origins.h * 2 != h || rays.origins.w * 2 != w)
    throw std::invalid_argument(
        "pointmap_from_rays: ray grid must be half the depth grid");
  PointMap pm(h, w);
  for (int v = 0; v < h; ++v) {
    // Full pixel center (u + 0.5) in half-grid index space: u/2 - 0.25.
    double ty = v / 2.0 - 0.25;
    int y0;
    double wy;
    detail::lerp_cell(ty, rays.origins.h, y0, wy);
    for (int u = 0; u < w; ++u) {
      if (!depth.valid.at(v, u)) continue;
      double tx = u / 2.0 - 0.25;
      int x0;
      double wx;
      detail::lerp_cell(tx, rays.origins.w, x0, wx);
      auto blerp = [&](const Grid<Vec3>& g) -> Vec3 {
        const Vec3& a = g.at(y0, x0);
        const Vec3& b = g.at(y0, x0 + 1);
        const Vec3& c = g.at(y0 + 1, x0);
        const Vec3& d = g.at(y0 + 1, x0 + 1);
        return (1 - wy) * ((1 - wx) * a + wx * b) +
               wy * ((1 - wx) * c + wx * d);
      };
      Vec3 origin = blerp(rays.origins);
      Vec3 dir = blerp(rays.directions);
      pm.points.at(v, u) = origin + depth.values.at(v, u) * dir;
      pm.valid.at(v, u) = 1;
    }
  }
  return pm;
}

inline PointMap sim3_apply(const Sim3& T, const PointMap& pts) {
  PointMap out = pts;
  for (std::size_t i = 0; i < out.points.data.size(); ++i)
    if (out.valid.data[i]) out.points.data[i] = T.apply(out.points.data[i]);
  return out;
}

// Scale factor that makes the mean distance of all valid points to the world
// origin equal to 1. Throws if no point is valid.
inline double scene_norm_scale(const std::vector<PointMap>& maps) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& pm : maps)
    for (std::size_t i = 0; i < pm.points.data.size(); ++i)
      if (pm.valid.data[i]) {
        sum += pm.points.data[i].norm();
        ++count;
      }
  if (count == 0)
    throw std::invalid_argument("normalize_scene: no valid points");
  return static_cast<double>(count) / sum;  // 1 / mean norm
}

struct NormalizedScene {
  std::vector<PointMap> points;
  std::vector<CameraPose> poses;
  double scale = 1.0;
};

// Scales every point and every camera center by s = 1 / mean(|p|).
inline NormalizedScene normalize_scene(const std::vector<PointMap>& maps,
                                       const std::vector<CameraPose>& poses) {
  NormalizedScene out;
  out.scale = scene_norm_scale(maps);
  out.points = maps;
  for (auto& pm : out.points)
    for (std::size_t i = 0; i < pm.points.data.size(); ++i)
      if (pm.valid.data[i]) pm.points.data[i] *= out.scale;
  out.poses = poses;
  for (auto& p : out.poses) p.translation *= out.scale;
  return out;
}

// Geodesic angle between two rotations, in radians; q and -q coincide.
inline double rotation_angle(const Quat& a, const Quat& b) {
  // atan2 form of the relative rotation's half angle: accurate for small
  // angles, where acos of the quaternion dot loses half the digits.
  Quat r = a.normalized().conjugate() * b.normalized();
  double v = r.vec().norm();
  return 2.0 * std::atan2(v, std::fabs(r.w()));
}

}  // namespace q4d
