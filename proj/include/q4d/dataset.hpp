#pragma once

// Serialization of ground-truth bundles and datasets through the tensor
// archive format. A dataset is a directory with `dataset.json` plus one
// archive subdirectory per sequence.

#include "q4d/archive.hpp"
#include "q4d/scenegen.hpp"

#include <string>
#include <vector>

namespace q4d {

namespace detail {

inline json pose_to_json(const CameraPose& p) {
  return json{{"q", {p.rotation.w(), p.rotation.x(), p.rotation.y(),
                     p.rotation.z()}},
              {"t", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

inline CameraPose pose_from_json(const json& j) {
  CameraPose p;
  auto q = j.at("q");
  p.rotation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                    q[3].get<double>());
  auto t = j.at("t");
  p.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  return p;
}

}  // namespace detail

inline TensorArchive bundle_to_archive(const GroundTruthBundle& b) {
  int n = b.num_frames();
  int h = b.intrinsics.height, w = b.intrinsics.width;
  TensorArchive ar;

  std::vector<float> frames, depths, locals, poses;
  std::vector<std::uint8_t> valid, dyn;
  std::vector<std::int32_t> hits;
  for (int i = 0; i < n; ++i) {
    for (const auto& p : b.frames[i].data)
      for (int c = 0; c < 3; ++c) frames.push_back(static_cast<float>(p[c]));
    for (double z : b.depths[i].values.data)
      depths.push_back(static_cast<float>(z));
    valid.insert(valid.end(), b.depths[i].valid.data.begin(),
                 b.depths[i].valid.data.end());
    dyn.insert(dyn.end(), b.dynamic_mask[i].data.begin(),
               b.dynamic_mask[i].data.end());
    for (int id : b.hit_object[i].data) hits.push_back(id);
    for (const auto& p : b.hit_local[i].data)
      for (int c = 0; c < 3; ++c) locals.push_back(static_cast<float>(p[c]));
    const CameraPose& cp = b.poses[i];
    for (double x : {cp.rotation.w(), cp.rotation.x(), cp.rotation.y(),
                     cp.rotation.z(), cp.translation.x(), cp.translation.y(),
                     cp.translation.z()})
      poses.push_back(static_cast<float>(x));
  }
  ar.put_f32("frames", {n, h, w, 3}, frames);
  ar.put_f32("depths", {n, h, w}, depths);
  ar.put_u8("valid", {n, h, w}, valid);
  ar.put_u8("dynamic_mask", {n, h, w}, dyn);
  ar.put_i32("hit_object", {n, h, w}, hits);
  ar.put_f32("hit_local", {n, h, w, 3}, locals);
  ar.put_f32("poses", {n, 7}, poses);

  json objs = json::array();
  for (std::size_t k = 0; k < b.objects.size(); ++k) {
    const RigidBody& o = b.objects[k];
    json motion = json::array();
    for (const auto& p : o.motion.poses)
      motion.push_back(detail::pose_to_json(p));
    objs.push_back({{"shape", static_cast<int>(o.shape)},
                    {"size", o.size},
                    {"dynamic", static_cast<bool>(b.object_dynamic[k])},
                    {"motion", motion}});
  }
  ar.meta = json{{"kind", "gt_bundle"},
                 {"seed", b.seed},
                 {"num_frames", n},
                 {"height", h},
                 {"width", w},
                 {"vertical_fov", b.intrinsics.vertical_fov},
                 {"px", b.intrinsics.px},
                 {"py", b.intrinsics.py},
                 {"objects", objs}};
  return ar;
}

inline GroundTruthBundle bundle_from_archive(const TensorArchive& ar) {
  GroundTruthBundle b;
  const json& m = ar.meta;
  if (m.value("kind", "") != "gt_bundle")
    throw std::runtime_error("dataset: archive is not a gt bundle");
  int n = m.at("num_frames").get<int>();
  int h = m.at("height").get<int>(), w = m.at("width").get<int>();
  b.seed = m.at("seed").get<std::uint64_t>();
  b.intrinsics.width = w;
  b.intrinsics.height = h;
  b.intrinsics.vertical_fov = m.at("vertical_fov").get<double>();
  b.intrinsics.px = m.at("px").get<double>();
  b.intrinsics.py = m.at("py").get<double>();

  auto frames = ar.get_f32("frames");
  auto depths = ar.get_f32("depths");
  auto valid = ar.get_u8("valid");
  auto dyn = ar.get_u8("dynamic_mask");
  auto hits = ar.get_i32("hit_object");
  auto locals = ar.get_f32("hit_local");
  auto poses = ar.get_f32("poses");

  std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    Grid<Vec3> rgb(h, w), loc(h, w);
    DepthMap d(h, w);
    Grid<int> ho(h, w, -1);
    Mask dm(h, w, 0);
    for (std::size_t j = 0; j < hw; ++j) {
      std::size_t base = (static_cast<std::size_t>(i) * hw + j) * 3;
      rgb.data[j] = Vec3(frames[base], frames[base + 1], frames[base + 2]);
      loc.data[j] = Vec3(locals[base], locals[base + 1], locals[base + 2]);
      d.values.data[j] = depths[static_cast<std::size_t>(i) * hw + j];
      d.valid.data[j] = valid[static_cast<std::size_t>(i) * hw + j];
      dm.data[j] = dyn[static_cast<std::size_t>(i) * hw + j];
      ho.data[j] = hits[static_cast<std::size_t>(i) * hw + j];
    }
    b.frames.push_back(std::move(rgb));
    b.hit_local.push_back(std::move(loc));
    b.depths.push_back(std::move(d));
    b.dynamic_mask.push_back(std::move(dm));
    b.hit_object.push_back(std::move(ho));
    const float* p = poses.data() + static_cast<std::size_t>(i) * 7;
    CameraPose cp;
    cp.rotation = Quat(p[0], p[1], p[2], p[3]);
    cp.translation = Vec3(p[4], p[5], p[6]);
    b.poses.push_back(cp);
  }

  for (const auto& jo : m.at("objects")) {
    RigidBody o;
    o.shape = static_cast<ShapeKind>(jo.at("shape").get<int>());
    o.size = jo.at("size").get<double>();
    for (const auto& jp : jo.at("motion"))
      o.motion.poses.push_back(detail::pose_from_json(jp));
    b.objects.push_back(std::move(o));
    b.object_dynamic.push_back(jo.at("dynamic").get<bool>() ? 1 : 0);
  }
  return b;
}

struct DatasetManifest {
  std::vector<std::string> sequences;

  void write(const fs::path& dir) const {
    json j{{"schema_version", kArchiveSchemaVersion}, {"sequences", sequences}};
    std::ofstream f(dir / "dataset.json");
    if (!f) throw std::runtime_error("dataset: cannot write manifest");
    f << j.dump(2) << "\n";
  }

  static DatasetManifest read(const fs::path& dir) {
    std::ifstream f(dir / "dataset.json");
    if (!f)
      throw std::runtime_error("dataset: missing dataset.json in " +
                               dir.string());
    json j = json::parse(f);
    DatasetManifest m;
    m.sequences = j.at("sequences").get<std::vector<std::string>>();
    return m;
  }
};

inline std::vector<GroundTruthBundle> load_dataset(const fs::path& dir) {
  DatasetManifest m = DatasetManifest::read(dir);
  std::vector<GroundTruthBundle> out;
  for (const auto& id : m.sequences)
    out.push_back(bundle_from_archive(TensorArchive::read(dir / id)));
  return out;
}

}  // namespace q4d
