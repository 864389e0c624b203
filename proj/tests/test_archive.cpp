#include "q4d/archive.hpp"

#include "q4d/dataset.hpp"
#include "q4d/scenegen.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace q4d;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("archive round-trips arrays bit-exactly") {
  TensorArchive ar;
  std::vector<float> f{1.5f, -2.25f, 3.0e-8f, 1.0e12f};
  std::vector<std::int32_t> i{-7, 0, 1 << 30};
  std::vector<std::uint8_t> u{0, 1, 255, 128};
  ar.put_f32("floats", {2, 2}, f);
  ar.put_i32("ints", {3}, i);
  ar.put_u8("bytes", {4}, u);
  ar.meta = json{{"note", "test"}, {"seed", 42}};
  fs::path dir = temp_dir("q4d_archive_rt");
  ar.write(dir);
  TensorArchive back = TensorArchive::read(dir);
  CHECK(back.get_f32("floats") == f);
  CHECK(back.get_i32("ints") == i);
  CHECK(back.get_u8("bytes") == u);
  CHECK(back.shape("floats") == std::vector<std::int64_t>{2, 2});
  CHECK(back.meta.at("seed").get<int>() == 42);
}

TEST_CASE("archive validates shapes and dtypes") {
  TensorArchive ar;
  CHECK_THROWS_AS(ar.put_f32("bad", {3}, {1.0f, 2.0f}), std::invalid_argument);
  ar.put_f32("x", {2}, {1.0f, 2.0f});
  CHECK_THROWS_AS(ar.get_i32("x"), std::runtime_error);
  CHECK_THROWS_AS(ar.array("missing"), std::runtime_error);
}

TEST_CASE("reading a missing or corrupt archive fails loudly") {
  CHECK_THROWS_AS(TensorArchive::read("/nonexistent/q4d"), std::runtime_error);
  fs::path dir = temp_dir("q4d_archive_bad");
  TensorArchive ar;
  ar.put_f32("x", {4}, {1, 2, 3, 4});
  ar.write(dir);
  // Truncate the blob: size check must fire.
  std::ofstream f(dir / "x.bin", std::ios::binary | std::ios::trunc);
  f << "xx";
  f.close();
  CHECK_THROWS_AS(TensorArchive::read(dir), std::runtime_error);
}

TEST_CASE("writing twice produces byte-identical files") {
  GroundTruthBundle b = generate(random_scene_spec(3));
  fs::path d1 = temp_dir("q4d_det1"), d2 = temp_dir("q4d_det2");
  bundle_to_archive(b).write(d1);
  bundle_to_archive(b).write(d2);
  for (const auto& e : fs::directory_iterator(d1)) {
    std::ifstream a(e.path(), std::ios::binary);
    std::ifstream bf(d2 / e.path().filename(), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(bf)), {});
    CHECK(sa == sb);
  }
}

TEST_CASE("ground-truth bundles survive the archive round trip bit-exactly") {
  SceneGenConfig cfg;
  cfg.min_frames = 3;
  cfg.max_frames = 5;
  cfg.height = 16;
  cfg.width = 16;
  GroundTruthBundle b = generate(random_scene_spec(11, cfg));
  fs::path dir = temp_dir("q4d_bundle_rt");
  bundle_to_archive(b).write(dir);
  GroundTruthBundle r = bundle_from_archive(TensorArchive::read(dir));
  REQUIRE(r.num_frames() == b.num_frames());
  CHECK(r.intrinsics.vertical_fov == b.intrinsics.vertical_fov);
  for (int i = 0; i < b.num_frames(); ++i) {
    for (std::size_t j = 0; j < b.frames[i].data.size(); ++j) {
      CHECK(r.frames[i].data[j] == b.frames[i].data[j]);
      CHECK(r.hit_local[i].data[j] == b.hit_local[i].data[j]);
    }
    CHECK(r.depths[i].values.data == b.depths[i].values.data);
    CHECK(r.depths[i].valid.data == b.depths[i].valid.data);
    CHECK(r.hit_object[i].data == b.hit_object[i].data);
    CHECK(r.dynamic_mask[i].data == b.dynamic_mask[i].data);
    CHECK((r.poses[i].translation - b.poses[i].translation).norm() == 0.0);
    CHECK(r.poses[i].rotation.coeffs() == b.poses[i].rotation.coeffs());
  }
  REQUIRE(r.objects.size() == b.objects.size());
  for (std::size_t k = 0; k < b.objects.size(); ++k) {
    CHECK(r.objects[k].shape == b.objects[k].shape);
    CHECK(r.objects[k].size == b.objects[k].size);
    CHECK(r.object_dynamic[k] == b.object_dynamic[k]);
    for (std::size_t i = 0; i < b.objects[k].motion.poses.size(); ++i)
      CHECK((r.objects[k].motion.poses[i].translation -
             b.objects[k].motion.poses[i].translation)
                .norm() == 0.0);
  }
  // Displacements derived from the round-tripped bundle must agree too.
  DisplacementField da = b.displacement(0, b.num_frames() - 1);
  DisplacementField db = r.displacement(0, r.num_frames() - 1);
  for (std::size_t j = 0; j < da.deltas.data.size(); ++j)
    CHECK((da.deltas.data[j] - db.deltas.data[j]).norm() == 0.0);
}

TEST_CASE("dataset manifest lists sequences and loads them back") {
  fs::path dir = temp_dir("q4d_dataset");
  SceneGenConfig cfg;
  cfg.min_frames = 2;
  cfg.max_frames = 3;
  cfg.height = 16;
  cfg.width = 16;
  DatasetManifest m;
  for (int k = 0; k < 2; ++k) {
    GroundTruthBundle b = generate(random_scene_spec(k, cfg));
    std::string id = "seq" + std::to_string(k);
    bundle_to_archive(b).write(dir / id);
    m.sequences.push_back(id);
  }
  m.write(dir);
  auto loaded = load_dataset(dir);
  CHECK(loaded.size() == 2);
  CHECK_THROWS(DatasetManifest::read(temp_dir("q4d_no_dataset")));
}
