#include "q4d/model.hpp"

#include "q4d/rng.hpp"

#include <doctest.h>

#include <cmath>

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
  Pcg32 rng = make_stream(seed, 1);
  std::vector<Grid<Vec3>> v;
  for (int i = 0; i < n; ++i) {
    Grid<Vec3> img(h, w);
    for (auto& p : img.data)
      p = Vec3(rng.next_double(), rng.next_double(), rng.next_double());
    v.push_back(std::move(img));
  }
  return v;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
  ModelConfig c = tiny_cfg();
  c.embed_dim = 15;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_cfg();
  c.encoder_layers = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_cfg();
  c.patch_size = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(output_param_from_name("bogus"), std::invalid_argument);
}

TEST_CASE("patchify separates pixel content from time") {
  Model m(tiny_cfg(), 1);
  auto video = random_video(1, 16, 16, 2);
  NoGradGuard ng;
  Tensor a = m.patchify(video[0], Timestamp(0, 4));
  Tensor b = m.patchify(video[0], Timestamp(3, 4));
  int per = m.tokens_per_frame(16, 16);
  REQUIRE(a.dim(0) == per);
  int d = m.cfg.embed_dim;
  // identical patch + camera tokens, different time token
  for (int r = 0; r < per - 1; ++r)
    for (int c = 0; c < d; ++c)
      CHECK(a.value()[r * d + c] == b.value()[r * d + c]);
  bool diff = false;
  for (int c = 0; c < d; ++c)
    if (a.value()[(per - 1) * d + c] != b.value()[(per - 1) * d + c])
      diff = true;
  CHECK(diff);
}

TEST_CASE("encode counts calls and requires two frames offline") {
  Model m(tiny_cfg(), 1);
  auto video = random_video(3, 16, 16, 3);
  NoGradGuard ng;
  CHECK(m.encode_calls == 0);
  SceneLatent lat = m.encode_video(video);
  CHECK(m.encode_calls == 1);
  CHECK(lat.n == 3);
  CHECK(lat.patch[0].dim(0) == 16);
  CHECK_THROWS_AS(m.encode_video({video[0]}), std::invalid_argument);
  CHECK(m.encode_calls == 1);  // rejected before counting
}

TEST_CASE("forward_4d encodes exactly once") {
  Model m(tiny_cfg(), 4);
  auto video = random_video(3, 16, 16, 4);
  NoGradGuard ng;
  auto f = m.forward_4d(video, 1, {0, 1, 2});
  CHECK(m.encode_calls == 1);
  CHECK(f.geometry.size() == 3);
  CHECK(f.motion.size() == 3);
}

TEST_CASE("causal encoding makes past latents independent of the future") {
  Model m(tiny_cfg(), 5);
  auto video = random_video(4, 16, 16, 5);
  NoGradGuard ng;
  EncodeOptions causal;
  causal.causal = true;
  SceneLatent full = m.encode_video(video, causal);
  auto edited = video;
  for (auto& p : edited[3].data) p = Vec3(0.5, 0.5, 0.5);
  SceneLatent cut = m.encode_video(edited, causal);
  for (int i = 0; i < 3; ++i)
    CHECK(full.patch[i].value() == cut.patch[i].value());
  CHECK(full.patch[3].value() != cut.patch[3].value());
  // Offline (bidirectional) encoding does propagate the change backward.
  SceneLatent off_a = m.encode_video(video);
  SceneLatent off_b = m.encode_video(edited);
  CHECK(off_a.patch[0].value() != off_b.patch[0].value());
}

TEST_CASE("frame-wise layers alone treat frames independently") {
  Model m(tiny_cfg(), 6);
  auto video = random_video(2, 16, 16, 6);
  NoGradGuard ng;
  EncodeOptions opts;
  opts.skip_global = true;
  SceneLatent a = m.encode_video(video, opts);
  auto edited = video;
  for (auto& p : edited[1].data) p = Vec3(0.1, 0.2, 0.3);
  SceneLatent b = m.encode_video(edited, opts);
  CHECK(a.patch[0].value() == b.patch[0].value());
  CHECK(a.cam[0].value() == b.cam[0].value());
}

TEST_CASE("geometry head outputs obey their invariants") {
  Model m(tiny_cfg(), 7);
  auto video = random_video(2, 16, 16, 7);
  NoGradGuard ng;
  SceneLatent lat = m.encode_video(video);
  GeometryOut g = m.geometry_head(lat, 0);
  CHECK(g.depth.numel() == 16 * 16);
  CHECK(g.rays.dim(0) == 8 * 8);
  CHECK(g.rays.dim(1) == 6);
  for (double z : g.depth.value()) CHECK(z > 0.0);
  double fov = g.fov.value()[0];
  CHECK(fov > 0.0);
  CHECK(fov < M_PI);
  double qn = 0;
  for (double q : g.quat.value()) qn += q * q;
  CHECK(qn == doctest::Approx(1.0).epsilon(1e-12));

  Model::GeometryPrediction gp = Model::extract_geometry(g);
  CHECK(gp.pose.rotation.w() >= 0.0);  // canonicalized
  CHECK(gp.depth.values.at(3, 5) == g.depth.value()[3 * 16 + 5]);
}

TEST_CASE("zeroing the motion head's final linear zeroes the displacement") {
  Model m(tiny_cfg(), 8);
  for (auto& x : m.params.at("mot.head.w").mutable_value()) x = 0.0;
  for (auto& x : m.params.at("mot.head.b").mutable_value()) x = 0.0;
  auto video = random_video(3, 16, 16, 8);
  NoGradGuard ng;
  SceneLatent lat = m.encode_video(video);
  MotionOut mo = m.motion_head(lat, 0, 2);
  for (double v : mo.out.value()) CHECK(v == 0.0);
  for (double v : mo.log_sigma.value()) CHECK(v == 0.0);
}

TEST_CASE("motion output parameterizations convert to the same displacement") {
  PointMap base(2, 2);
  CameraPose pose;
  pose.rotation = Quat(Eigen::AngleAxisd(0.4, Vec3::UnitY()));
  pose.translation = Vec3(0.2, -0.1, 0.5);
  Pcg32 rng(9);
  std::vector<Vec3> deltas;
  for (int i = 0; i < 4; ++i) {
    base.points.data[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
    base.valid.data[i] = 1;
    deltas.emplace_back(rng.normal(), rng.normal(), rng.normal());
  }
  auto make_out = [&](OutputParam param) {
    MotionOut mo;
    mo.param = param;
    mo.h = mo.w = 2;
    mo.source = 0;
    mo.target = 1;
    std::vector<double> v;
    for (int i = 0; i < 4; ++i) {
      Vec3 raw;
      switch (param) {
        case OutputParam::Displacement: raw = deltas[i]; break;
        case OutputParam::PointsWorld:
          raw = base.points.data[i] + deltas[i];
          break;
        case OutputParam::PointsLocal:
          raw = pose.to_camera(base.points.data[i] + deltas[i]);
          break;
      }
      for (int c = 0; c < 3; ++c) v.push_back(raw[c]);
    }
    mo.out = Tensor::constant({4, 3}, std::move(v));
    mo.log_sigma = Tensor::zeros({4});
    return mo;
  };
  for (OutputParam p : {OutputParam::Displacement, OutputParam::PointsWorld,
                        OutputParam::PointsLocal}) {
    Model::MotionPrediction mp =
        Model::extract_motion(make_out(p), base, pose, 2);
    for (int i = 0; i < 4; ++i)
      CHECK((mp.deltas.deltas.data[i] - deltas[i]).norm() < 1e-12);
  }
}

TEST_CASE("ablation switches change the motion head computation") {
  auto video = random_video(2, 16, 16, 10);
  NoGradGuard ng;
  std::vector<std::vector<double>> outs;
  for (int variant = 0; variant < 4; ++variant) {
    ModelConfig c = tiny_cfg();
    if (variant == 1) c.use_cross_attn = false;
    if (variant == 2) c.use_self_attn = false;
    if (variant == 3) c.use_adaln = false;
    Model m(c, 11);  // same seed -> same parameter draws per name
    // The modulation output starts zero-initialized (gates closed), which
    // would hide the self-attention branch entirely; open them.
    for (auto& [name, p] : m.params)
      if (name.find("ada.b2") != std::string::npos)
        for (auto& x : p.mutable_value()) x = 0.25;
    SceneLatent lat = m.encode_video(video);
    outs.push_back(m.motion_head(lat, 0, 1).out.value());
  }
  CHECK(outs[0] != outs[1]);
  CHECK(outs[0] != outs[2]);
  CHECK(outs[0] != outs[3]);
}

TEST_CASE("attention rows are normalized inside the encoder") {
  // Indirect check through the public API: softmax_rows is exercised via a
  // hand-built attention with a mask pattern identical to the causal one.
  int n = 2, per = 3;
  auto mask = Model::causal_mask(n, per);
  Pcg32 rng(12);
  std::vector<double> sv(static_cast<std::size_t>(n * per * n * per));
  for (auto& x : sv) x = rng.normal();
  Tensor scores =
      Tensor::constant({n * per, n * per}, std::move(sv));
  Tensor sm = softmax_rows(scores, mask.get());
  for (int r = 0; r < n * per; ++r) {
    double sum = 0;
    for (int c = 0; c < n * per; ++c) sum += sm.value()[r * n * per + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    for (int c = 0; c < n * per; ++c)
      if (c / per > r / per) CHECK(sm.value()[r * n * per + c] == 0.0);
  }
}

TEST_CASE("assemble produces a factorized frame anchored at the query") {
  Model m(tiny_cfg(), 13);
  auto video = random_video(3, 16, 16, 13);
  NoGradGuard ng;
  auto f = m.forward_4d(video, 1, {0, 1, 2});
  FactorizedFrame4D frame = m.assemble(f);
  CHECK(frame.source.frame_index == 1);
  CHECK(frame.displacements.size() == 3);
  CHECK(frame.base.points.h == 16);
  for (auto v : frame.base.valid.data) CHECK(v == 1);
}
