#include "q4d/cli.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace q4d;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_run_cfg() {
  RunConfig c;
  c.seed = 7;
  c.gen.count = 2;
  c.scenegen.min_frames = 3;
  c.scenegen.max_frames = 3;
  c.scenegen.height = 16;
  c.scenegen.width = 16;
  c.model.patch_size = 4;
  c.model.embed_dim = 16;
  c.model.encoder_layers = 2;
  c.model.heads = 2;
  c.model.motion_layers = 2;
  c.model.head_hidden = 32;
  c.train.total_steps = 0;
  c.train.dense_probability = 1.0;
  c.augment_enabled = false;
  c.clip_len = 3;
  c.checkpoint_interval = 0;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& p) {
  std::ifstream f(p);
  int n = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

// A prediction archive copied verbatim from the ground truth.
void write_perfect_prediction(const GroundTruthBundle& b, int query,
                              const fs::path& dir) {
  int n = b.num_frames();
  int h = b.intrinsics.height, w = b.intrinsics.width;
  std::size_t hw = static_cast<std::size_t>(h) * w;
  TensorArchive ar;
  std::vector<float> depth, rays, poses, fov;
  for (int i = 0; i < n; ++i) {
    for (double z : b.depths[i].values.data) depth.push_back(static_cast<float>(z));
    RayMap rm = intrinsics_to_rays(b.intrinsics, b.poses[i]);
    for (std::size_t j = 0; j < rm.origins.data.size(); ++j) {
      for (int c = 0; c < 3; ++c)
        rays.push_back(static_cast<float>(rm.origins.data[j][c]));
      for (int c = 0; c < 3; ++c)
        rays.push_back(static_cast<float>(rm.directions.data[j][c]));
    }
    const CameraPose& p = b.poses[i];
    for (double x : {p.rotation.w(), p.rotation.x(), p.rotation.y(),
                     p.rotation.z(), p.translation.x(), p.translation.y(),
                     p.translation.z()})
      poses.push_back(static_cast<float>(x));
    fov.push_back(static_cast<float>(b.intrinsics.vertical_fov));
  }
  ar.put_f32("depth", {n, h, w}, depth);
  ar.put_f32("rays", {n, h / 2, w / 2, 6}, rays);
  ar.put_f32("poses", {n, 7}, poses);
  ar.put_f32("fov", {n}, fov);

  PointMap base = b.base_pointmap(query);
  std::vector<float> bp;
  for (const auto& p : base.points.data)
    for (int c = 0; c < 3; ++c) bp.push_back(static_cast<float>(p[c]));
  ar.put_f32("base", {h, w, 3}, bp);
  ar.put_u8("base_valid", {h, w}, base.valid.data);

  std::vector<float> disp;
  std::vector<std::uint8_t> dvalid;
  std::vector<int> targets;
  for (int t = 0; t < n; ++t) {
    targets.push_back(t);
    DisplacementField d = b.displacement(query, t);
    for (const auto& v : d.deltas.data)
      for (int c = 0; c < 3; ++c) disp.push_back(static_cast<float>(v[c]));
    dvalid.insert(dvalid.end(), d.valid.data.begin(), d.valid.data.end());
  }
  ar.put_f32("disp", {n, h, w, 3}, disp);
  ar.put_u8("disp_valid", {n, h, w}, dvalid);
  ar.meta = json{{"kind", "prediction"}, {"query", query},
                 {"targets", targets}, {"num_frames", n},
                 {"height", h},        {"width", w},
                 {"streaming", false}};
  ar.write(dir);
}

}  // namespace

TEST_CASE("dataset generation is byte-deterministic") {
  RunConfig cfg = tiny_run_cfg();
  fs::path a = temp_dir("q4d_gen_a"), b = temp_dir("q4d_gen_b");
  cmd_gen(cfg, a);
  cmd_gen(cfg, b);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), a);
    CHECK(slurp(e.path()) == slurp(b / rel));
    ++files;
  }
  CHECK(files > 4);  // two sequences + manifest + config
  auto bundles = load_dataset(a);
  CHECK(bundles.size() == 2);
}

TEST_CASE("configuration files reject unknown keys and round-trip") {
  RunConfig cfg = tiny_run_cfg();
  RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  json j = cfg.to_json();
  j["typo_key"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  j = cfg.to_json();
  j["train"]["learning_rate"] = 0.1;  // must be "lr"
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
  j = cfg.to_json();
  j["model"]["embed_dim"] = "wide";
  CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);

  fs::path dir = temp_dir("q4d_cfg");
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(RunConfig::load(dir / "broken.json"), ConfigError);
  cfg.dump(dir / "ok.json");
  CHECK(RunConfig::load(dir / "ok.json").to_json() == cfg.to_json());
}

TEST_CASE("training writes logs plus checkpoints and resumes identically") {
  RunConfig cfg = tiny_run_cfg();
  fs::path data = temp_dir("q4d_train_data");
  cmd_gen(cfg, data);

  cfg.train.total_steps = 2;
  cfg.train.lr = 1e-3;
  cfg.checkpoint_interval = 1;
  fs::path a = temp_dir("q4d_train_a");
  TrainRunResult ra = cmd_train(cfg, data, a);
  CHECK(ra.steps_run == 2);
  CHECK(fs::exists(a / "checkpoint_1" / "manifest.json"));
  CHECK(fs::exists(a / "checkpoint_2" / "manifest.json"));
  CHECK(ra.final_checkpoint == a / "checkpoint_2");
  CHECK(count_lines(a / "train_log.csv") == 3);  // header + 2 steps

  // Resuming from the midpoint reproduces the final checkpoint exactly.
  fs::path b = temp_dir("q4d_train_b");
  TrainRunResult rb = cmd_train(cfg, data, b, a / "checkpoint_1");
  CHECK(rb.steps_run == 1);
  TensorArchive ca = TensorArchive::read(a / "checkpoint_2");
  TensorArchive cb = TensorArchive::read(b / "checkpoint_2");
  for (const auto& name : ca.names())
    if (name.rfind("param.", 0) == 0) CHECK(ca.get_u8(name) == cb.get_u8(name));

  // A zero-step run still leaves a usable checkpoint.
  cfg.train.total_steps = 0;
  fs::path z = temp_dir("q4d_train_z");
  TrainRunResult rz = cmd_train(cfg, data, z);
  CHECK(rz.steps_run == 0);
  CHECK(fs::exists(z / "checkpoint_0" / "manifest.json"));

  CHECK_THROWS_AS(cmd_train(cfg, temp_dir("q4d_train_empty"), temp_dir("q4d_train_x")),
                  DataError);
}

TEST_CASE("query exports a complete prediction archive") {
  RunConfig cfg = tiny_run_cfg();
  fs::path data = temp_dir("q4d_query_data");
  cmd_gen(cfg, data);
  fs::path run = temp_dir("q4d_query_run");
  fs::path ck = cmd_train(cfg, data, run).final_checkpoint;

  fs::path out = temp_dir("q4d_query_out");
  cmd_query(ck, data / "seq0", 1, {}, out);
  TensorArchive pa = TensorArchive::read(out);
  int h = cfg.scenegen.height, w = cfg.scenegen.width;
  CHECK(pa.meta.at("kind") == "prediction");
  CHECK(pa.meta.at("query").get<int>() == 1);
  CHECK(pa.meta.at("targets").get<std::vector<int>>() ==
        std::vector<int>{0, 1, 2});
  CHECK(pa.shape("depth") == std::vector<std::int64_t>{3, h, w});
  CHECK(pa.shape("rays") == std::vector<std::int64_t>{3, h / 2, w / 2, 6});
  CHECK(pa.shape("poses") == std::vector<std::int64_t>{3, 7});
  CHECK(pa.shape("base") == std::vector<std::int64_t>{h, w, 3});
  CHECK(pa.shape("disp") == std::vector<std::int64_t>{3, h, w, 3});
  for (float z : pa.get_f32("depth")) CHECK(z > 0.0f);

  // The streaming path matches a causally masked batch forward pass. The
  // offline path is bidirectional, so it is not compared here.
  fs::path sout = temp_dir("q4d_query_stream");
  QueryOptions sopts;
  sopts.streaming = true;
  cmd_query(ck, data / "seq0", 1, {}, sout, sopts);
  TensorArchive sa = TensorArchive::read(sout);
  CHECK(sa.meta.at("streaming").get<bool>());
  {
    GroundTruthBundle b = bundle_from_archive(TensorArchive::read(data / "seq0"));
    Model model(cfg.model, 0);
    load_checkpoint(ck, model, nullptr, nullptr);
    NoGradGuard ng;
    EncodeOptions causal;
    causal.causal = true;
    Model::Forward4D fwd = model.forward_4d(b.frames, 1, {0, 1, 2}, causal);
    auto gq = Model::extract_geometry(fwd.geometry[1]);
    PointMap base = pointmap_from_rays(gq.depth, gq.rays);
    auto on = sa.get_f32("disp");
    std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int t = 0; t < 3; ++t) {
      auto mp = Model::extract_motion(fwd.motion.at(t), base, gq.pose, 3);
      for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
          CHECK(std::fabs(on[(static_cast<std::size_t>(t) * hw + i) * 3 +
                             static_cast<std::size_t>(c)] -
                          mp.deltas.deltas.data[i][c]) < 1e-6);
    }
  }

  CHECK_THROWS_AS(cmd_query(ck, data / "seq0", 5, {}, out), DataError);
  CHECK_THROWS_AS(cmd_query(ck, data / "seq0", 0, {7}, out), DataError);
  CHECK_THROWS_AS(cmd_query(ck, data / "nope", 0, {}, out), DataError);
}

TEST_CASE("exported point clouds have one vertex per valid pixel") {
  RunConfig cfg = tiny_run_cfg();
  fs::path data = temp_dir("q4d_ply_data");
  cmd_gen(cfg, data);
  fs::path run = temp_dir("q4d_ply_run");
  fs::path ck = cmd_train(cfg, data, run).final_checkpoint;
  fs::path out = temp_dir("q4d_ply_out");
  QueryOptions opts;
  opts.ply = true;
  cmd_query(ck, data / "seq0", 0, {}, out, opts);
  TensorArchive pa = TensorArchive::read(out);
  std::size_t nvalid = 0;
  for (auto v : pa.get_u8("base_valid")) nvalid += v;

  std::ifstream f(out / "base.ply");
  REQUIRE(f.good());
  std::string line;
  std::size_t vertices = 0;
  while (std::getline(f, line))
    if (line.rfind("element vertex ", 0) == 0)
      vertices = std::stoul(line.substr(15));
  CHECK(vertices == nvalid);
  CHECK(fs::exists(out / "trajectories.ply"));
}

TEST_CASE("metrics on a perfect prediction reach the ideal values") {
  RunConfig cfg = tiny_run_cfg();
  SceneSpec spec = random_scene_spec(123, cfg.scenegen);
  GroundTruthBundle b = generate(spec);
  fs::path gt = temp_dir("q4d_metrics_gt");
  bundle_to_archive(b).write(gt);
  fs::path pred = temp_dir("q4d_metrics_pred");
  write_perfect_prediction(b, 1, pred);

  for (const char* align : {"sim3_ransac", "median_scale", "none"}) {
    fs::path out = temp_dir("q4d_metrics_out");
    MetricOptions opts;
    opts.align = align;
    MetricReport r = cmd_metrics(pred, gt, out, opts);
    CHECK(*r.apd == 100.0);
    CHECK(*r.epe < 1e-4);
    CHECK(*r.ate < 1e-4);
    CHECK(*r.rpe_t < 1e-4);
    CHECK(*r.rpe_r < 1e-2);
    CHECK(*r.acc < 1e-4);
    CHECK(*r.comp < 1e-4);
    CHECK(*r.depth_rel < 1e-5);
    CHECK(*r.depth_delta == 100.0);
    CHECK(r.alignment == align);
    json rj = json::parse(slurp(out / "report.json"));
    CHECK(rj.at("alignment") == align);
    CHECK(rj.at("depth_alignment") == "scale");
    CHECK(rj.at("apd").get<double>() == 100.0);
    CHECK(count_lines(out / "report.csv") == 2);
  }

  MetricOptions shift;
  shift.depth_align = "scale_shift";
  MetricReport rs = cmd_metrics(pred, gt, temp_dir("q4d_metrics_shift"), shift);
  CHECK(*rs.depth_delta == 100.0);

  MetricOptions bad;
  bad.align = "procrustes";
  CHECK_THROWS_AS(cmd_metrics(pred, gt, temp_dir("q4d_metrics_bad"), bad),
                  ConfigError);
  bad = MetricOptions{};
  bad.depth_align = "affine";
  CHECK_THROWS_AS(cmd_metrics(pred, gt, temp_dir("q4d_metrics_bad2"), bad),
                  ConfigError);
  CHECK_THROWS_AS(
      cmd_metrics(gt, gt, temp_dir("q4d_metrics_bad3"), MetricOptions{}),
      DataError);
}

TEST_CASE("report aggregation averages each metric across runs") {
  fs::path dir = temp_dir("q4d_report");
  auto write_report = [&](const char* name, double apd, double epe) {
    MetricReport r;
    r.apd = apd;
    r.epe = epe;
    r.ate = 0.5;
    r.alignment = "none";
    std::ofstream f(dir / name);
    f << report_to_json(r).dump(2);
    return dir / name;
  };
  fs::path r1 = write_report("r1.json", 80.0, 0.2);
  fs::path r2 = write_report("r2.json", 90.0, 0.4);

  MetricReport agg = cmd_report({r1, r2}, dir / "summary.csv");
  CHECK(*agg.apd == doctest::Approx(85.0));
  CHECK(*agg.epe == doctest::Approx(0.3));
  CHECK(*agg.ate == doctest::Approx(0.5));
  CHECK_FALSE(agg.nc.has_value());
  CHECK(count_lines(dir / "summary.csv") == 4);  // header + 3 present metrics

  MetricReport solo = cmd_report({r1}, dir / "solo.csv");
  CHECK(*solo.apd == 80.0);
  CHECK(*solo.epe == 0.2);

  // A report missing one of the shared metrics cannot be averaged.
  MetricReport partial;
  partial.apd = 70.0;
  std::ofstream(dir / "r3.json") << report_to_json(partial).dump(2);
  CHECK_THROWS_AS(cmd_report({r1, dir / "r3.json"}, dir / "bad.csv"),
                  DataError);
  CHECK_THROWS_AS(cmd_report({}, dir / "empty.csv"), DataError);
  CHECK_THROWS_AS(cmd_report({dir / "missing.json"}, dir / "m.csv"), DataError);
}
