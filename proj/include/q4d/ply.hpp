#pragma once

// Binary little-endian PLY export: colored point clouds and trajectory
// polylines (vertices + edges).

#include "q4d/geometry.hpp"
#include "q4d/representation.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace q4d {

struct PlyVertex {
  float x, y, z;
  std::uint8_t r, g, b;
};

inline void write_ply(const std::filesystem::path& path,
                      const std::vector<PlyVertex>& vertices,
                      const std::vector<std::pair<std::int32_t, std::int32_t>>&
                          edges = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ply: cannot write " + path.string());
  f << "ply\nformat binary_little_endian 1.0\n";
  f << "element vertex " << vertices.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (!edges.empty()) {
    f << "element edge " << edges.size() << "\n";
    f << "property int vertex1\nproperty int vertex2\n";
  }
  f << "end_header\n";
  for (const auto& v : vertices) {
    f.write(reinterpret_cast<const char*>(&v.x), 4);
    f.write(reinterpret_cast<const char*>(&v.y), 4);
    f.write(reinterpret_cast<const char*>(&v.z), 4);
    f.put(static_cast<char>(v.r));
    f.put(static_cast<char>(v.g));
    f.put(static_cast<char>(v.b));
  }
  for (const auto& [a, b] : edges) {
    f.write(reinterpret_cast<const char*>(&a), 4);
    f.write(reinterpret_cast<const char*>(&b), 4);
  }
}

inline std::size_t write_pointmap_ply(const std::filesystem::path& path,
                                      const PointMap& pm,
                                      const Grid<Vec3>& rgb) {
  std::vector<PlyVertex> verts;
  for (std::size_t i = 0; i < pm.points.data.size(); ++i) {
    if (!pm.valid.data[i]) continue;
    const Vec3& p = pm.points.data[i];
    const Vec3& c = rgb.data[i];
    verts.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()),
                     static_cast<float>(p.z()),
                     static_cast<std::uint8_t>(255.0 * c.x()),
                     static_cast<std::uint8_t>(255.0 * c.y()),
                     static_cast<std::uint8_t>(255.0 * c.z())});
  }
  write_ply(path, verts);
  return verts.size();
}

// Rainbow-colored polylines, one per trajectory.
inline void write_trajectories_ply(const std::filesystem::path& path,
                                   const std::vector<Trajectory>& trajs) {
  std::vector<PlyVertex> verts;
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  for (const auto& tr : trajs) {
    for (std::size_t k = 0; k < tr.positions.size(); ++k) {
      double t = tr.positions.size() > 1
                     ? static_cast<double>(k) / (tr.positions.size() - 1)
                     : 0.0;
      const Vec3& p = tr.positions[k].second;
      // simple hue ramp blue -> red
      auto chan = [](double x) {
        return static_cast<std::uint8_t>(255.0 * std::clamp(x, 0.0, 1.0));
      };
      verts.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()),
                       static_cast<float>(p.z()), chan(t),
                       chan(1.0 - std::fabs(2 * t - 1)), chan(1.0 - t)});
      if (k > 0)
        edges.emplace_back(static_cast<std::int32_t>(verts.size() - 2),
                           static_cast<std::int32_t>(verts.size() - 1));
    }
  }
  write_ply(path, verts, edges);
}

}  // namespace q4d
