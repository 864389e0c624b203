#include "q4d/streaming.hpp"

#include "q4d/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace q4d;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig c;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.encoder_layers = 2;
  c.heads = 2;
  c.motion_layers = 2;
  c.head_hidden = 32;
  return c;
}

std::vector<Grid<Vec3>> random_video(int n, int h, int w, std::uint64_t seed) {
  Pcg32 rng = make_stream(seed, 2);
  std::vector<Grid<Vec3>> v;
  for (int i = 0; i < n; ++i) {
    Grid<Vec3> img(h, w);
    for (auto& p : img.data)
      p = Vec3(rng.next_double(), rng.next_double(), rng.next_double());
    v.push_back(std::move(img));
  }
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("sequential ingestion equals causal-masked batch encoding") {
  Model m(tiny_cfg(), 21);
  const int n = 4;
  auto video = random_video(n, 16, 16, 21);
  NoGradGuard ng;
  std::vector<Tensor> toks;
  for (int i = 0; i < n; ++i)
    toks.push_back(m.patchify(video[i], Timestamp(i, n)));
  EncodeOptions causal;
  causal.causal = true;
  SceneLatent batch = m.encode(toks, 16, 16, causal);

  LatentCache cache(m, 16, 16);
  for (int i = 0; i < n; ++i) cache.ingest_frame(video[i], Timestamp(i, n));
  CHECK(cache.size() == n);
  for (int i = 0; i < n; ++i) {
    CHECK(max_abs_diff(batch.patch[i].value(),
                       cache.latent().patch[i].value()) < 1e-6);
    CHECK(max_abs_diff(batch.cam[i].value(), cache.latent().cam[i].value()) <
          1e-6);
    CHECK(max_abs_diff(batch.time[i].value(), cache.latent().time[i].value()) <
          1e-6);
  }
}

TEST_CASE("ingesting one frame matches ingesting it as a prefix") {
  Model m(tiny_cfg(), 22);
  auto video = random_video(2, 16, 16, 22);
  NoGradGuard ng;
  LatentCache solo(m, 16, 16);
  solo.ingest_frame(video[0], Timestamp(0, 8));
  LatentCache both(m, 16, 16);
  both.ingest_frame(video[0], Timestamp(0, 8));
  both.ingest_frame(video[1], Timestamp(1, 8));
  CHECK(solo.latent().patch[0].value() == both.latent().patch[0].value());
}

TEST_CASE("cached latents are bit-identical after further ingestion") {
  Model m(tiny_cfg(), 23);
  const int horizon = 16;
  auto video = random_video(horizon, 16, 16, 23);
  NoGradGuard ng;
  LatentCache cache(m, 16, 16);
  for (int i = 0; i < 4; ++i) cache.ingest_frame(video[i], Timestamp(i, horizon));
  std::vector<std::vector<double>> before;
  for (int i = 0; i < 4; ++i) before.push_back(cache.latent().patch[i].value());
  std::vector<double> motion_before = cache.query_motion(1, 3).out.value();
  for (int i = 4; i < 14; ++i)
    cache.ingest_frame(video[i], Timestamp(i, horizon));
  for (int i = 0; i < 4; ++i)
    CHECK(cache.latent().patch[i].value() == before[i]);
  CHECK(cache.query_motion(1, 3).out.value() == motion_before);
}

TEST_CASE("queries work in both temporal directions, including self") {
  Model m(tiny_cfg(), 24);
  auto video = random_video(3, 16, 16, 24);
  NoGradGuard ng;
  LatentCache cache(m, 16, 16);
  for (int i = 0; i < 3; ++i) cache.ingest_frame(video[i], Timestamp(i, 3));
  CHECK_NOTHROW(cache.query_motion(0, 2));  // past -> current
  CHECK_NOTHROW(cache.query_motion(2, 0));  // current -> past
  CHECK_NOTHROW(cache.query_motion(1, 1));  // self
  CHECK_THROWS_AS(cache.query_motion(0, 3), std::out_of_range);
  CHECK_NOTHROW(cache.query_geometry(2));
}

TEST_CASE("ingestion enforces increasing timestamps and matching shapes") {
  Model m(tiny_cfg(), 25);
  auto video = random_video(2, 16, 16, 25);
  NoGradGuard ng;
  LatentCache cache(m, 16, 16);
  cache.ingest_frame(video[0], Timestamp(2, 8));
  CHECK_THROWS_AS(cache.ingest_frame(video[1], Timestamp(2, 8)),
                  std::invalid_argument);
  CHECK_THROWS_AS(cache.ingest_frame(video[1], Timestamp(1, 8)),
                  std::invalid_argument);
  CHECK_THROWS_AS(cache.ingest_frame(video[1], Timestamp(3, 9)),
                  std::invalid_argument);
  Grid<Vec3> wrong(8, 8, Vec3::Zero());
  CHECK_THROWS_AS(cache.ingest_frame(wrong, Timestamp(4, 8)),
                  std::invalid_argument);
}

TEST_CASE("a serialized cache resumes bit-identically") {
  Model m(tiny_cfg(), 26);
  const int horizon = 10;
  auto video = random_video(6, 16, 16, 26);
  NoGradGuard ng;
  LatentCache cache(m, 16, 16);
  for (int i = 0; i < 3; ++i) cache.ingest_frame(video[i], Timestamp(i, horizon));

  fs::path dir = fs::temp_directory_path() / "q4d_cache_rt";
  fs::remove_all(dir);
  cache.to_archive().write(dir);
  LatentCache resumed =
      LatentCache::from_archive(TensorArchive::read(dir), m);
  CHECK(resumed.size() == 3);
  for (int i = 3; i < 6; ++i) {
    cache.ingest_frame(video[i], Timestamp(i, horizon));
    resumed.ingest_frame(video[i], Timestamp(i, horizon));
  }
  for (int i = 0; i < 6; ++i)
    CHECK(cache.latent().patch[i].value() ==
          resumed.latent().patch[i].value());
  CHECK(cache.query_motion(0, 5).out.value() ==
        resumed.query_motion(0, 5).out.value());
}
