#pragma once

// Command implementations behind the CLI binary: dataset generation,
// training, querying, metric evaluation and report aggregation. Each command
// is a pure function of (config, inputs, seed); the binary maps thrown
// error categories to exit codes.

#include "q4d/config.hpp"
#include "q4d/dataset.hpp"
#include "q4d/errors.hpp"
#include "q4d/evalmetrics.hpp"
#include "q4d/model.hpp"
#include "q4d/ply.hpp"
#include "q4d/streaming.hpp"
#include "q4d/training.hpp"

#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace q4d {

// ---------------------------------------------------------------------------
// gen: K procedurally generated sequences + dataset manifest.

inline void cmd_gen(const RunConfig& cfg, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  DatasetManifest manifest;
  for (int k = 0; k < cfg.gen.count; ++k) {
    std::uint64_t sseed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(k);
    SceneSpec spec = random_scene_spec(sseed, cfg.scenegen);
    GroundTruthBundle bundle = generate(spec);
    std::string id = "seq" + std::to_string(k);
    bundle_to_archive(bundle).write(out_dir / id);
    manifest.sequences.push_back(id);
  }
  manifest.write(out_dir);
  cfg.dump(out_dir / "config.json");
}

// ---------------------------------------------------------------------------
// train: optimization loop with CSV log + periodic checkpoints.

struct TrainRunResult {
  long steps_run = 0;
  LossBreakdown last;
  fs::path final_checkpoint;
};

inline TrainRunResult cmd_train(const RunConfig& cfg, const fs::path& dataset,
                                const fs::path& out_dir,
                                const std::optional<fs::path>& resume = {}) {
  std::vector<GroundTruthBundle> bundles;
  try {
    bundles = load_dataset(dataset);
  } catch (const std::exception& e) {
    throw DataError(std::string("train: ") + e.what());
  }
  if (bundles.empty()) throw DataError("train: empty dataset");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  cfg.dump(out_dir / "config.json");

  Model model(cfg.model, cfg.seed);
  AdamW opt(cfg.train);
  Pcg32 rng = make_stream(cfg.seed, 0x7121);
  long start = 0;
  if (resume) start = load_checkpoint(*resume, model, &opt, &rng);

  std::ofstream log(out_dir / "train_log.csv",
                    start == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("train: cannot write log");
  if (start == 0)
    log << "step,lr,grad_norm,depth,ray,camera,motion,total\n";

  auto checkpoint_name = [&](long step) {
    return out_dir / ("checkpoint_" + std::to_string(step));
  };
  if (start == 0 && cfg.train.total_steps == 0)
    save_checkpoint(checkpoint_name(0), model, opt, 0, rng);

  TrainRunResult result;
  for (long step = start; step < cfg.train.total_steps; ++step) {
    // Every per-step random decision derives from (seed, step) so that a
    // resumed run replays the identical schedule.
    std::uint64_t step_seed =
        cfg.seed ^ (0xA24BAED4963EE407ULL * (static_cast<std::uint64_t>(step) + 1));
    Pcg32 srng = make_stream(step_seed, 0x57E9);
    const GroundTruthBundle& full =
        bundles[srng.next_bounded(static_cast<std::uint32_t>(bundles.size()))];
    int len = std::min(cfg.clip_len, full.num_frames());
    GroundTruthBundle clip_bundle =
        len < full.num_frames() ? sample_clip(full, len, step_seed) : full;
    SupervisionPlan plan =
        build_supervision_plan(clip_bundle, step_seed, cfg.train);
    std::vector<Grid<Vec3>> images =
        cfg.augment_enabled ? augment(clip_bundle.frames, step_seed, cfg.aug)
                            : clip_bundle.frames;
    TrainClip clip = make_train_clip(clip_bundle, plan, &images);
    StepResult r = train_step(model, clip, plan, opt, cfg.train);
    log << step << ',' << std::setprecision(17) << r.lr << ',' << r.grad_norm
        << ',' << r.loss.depth << ',' << r.loss.ray << ',' << r.loss.camera
        << ',' << r.loss.motion << ',' << r.loss.total << '\n';
    result.last = r.loss;
    ++result.steps_run;
    long done = step + 1;
    if (done == cfg.train.total_steps ||
        (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0)) {
      save_checkpoint(checkpoint_name(done), model, opt, done, rng);
      result.final_checkpoint = checkpoint_name(done);
    }
  }
  if (result.final_checkpoint.empty())
    result.final_checkpoint = checkpoint_name(start == 0 ? 0 : start);
  return result;
}

// ---------------------------------------------------------------------------
// query: encode a sequence once, export geometry for every frame and a
// factorized frame for the query index.

struct QueryOptions {
  bool streaming = false;
  bool ply = false;
};

inline void cmd_query(const fs::path& checkpoint, const fs::path& sequence,
                      int query, std::vector<int> targets,
                      const fs::path& out_dir, const QueryOptions& opts = {}) {
  GroundTruthBundle bundle;
  ModelConfig mc;
  try {
    bundle = bundle_from_archive(TensorArchive::read(sequence));
    TensorArchive ck = TensorArchive::read(checkpoint);
    mc = ModelConfig::from_json(ck.meta.at("model"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string("query: ") + e.what());
  }
  int n = bundle.num_frames();
  if (query < 0 || query >= n)
    throw DataError("query: source index out of range");
  if (targets.empty())
    for (int t = 0; t < n; ++t) targets.push_back(t);
  for (int t : targets)
    if (t < 0 || t >= n) throw DataError("query: target index out of range");

  Model model(mc, 0);
  load_checkpoint(checkpoint, model, nullptr, nullptr);

  NoGradGuard ng;
  std::vector<Model::GeometryPrediction> geos;
  std::map<int, MotionOut> motions;
  if (opts.streaming) {
    LatentCache cache(model, bundle.intrinsics.height, bundle.intrinsics.width);
    for (int i = 0; i < n; ++i)
      cache.ingest_frame(bundle.frames[static_cast<std::size_t>(i)],
                         Timestamp(i, n));
    for (int i = 0; i < n; ++i)
      geos.push_back(Model::extract_geometry(cache.query_geometry(i)));
    for (int t : targets)
      if (!motions.count(t)) motions.emplace(t, cache.query_motion(query, t));
  } else {
    Model::Forward4D f = model.forward_4d(bundle.frames, query, targets);
    for (const auto& g : f.geometry)
      geos.push_back(Model::extract_geometry(g));
    motions = std::move(f.motion);
  }

  int h = bundle.intrinsics.height, w = bundle.intrinsics.width;
  const Model::GeometryPrediction& gq = geos[static_cast<std::size_t>(query)];
  PointMap base = pointmap_from_rays(gq.depth, gq.rays);
  FactorizedFrame4D frame;
  frame.source = Timestamp(query, n);
  frame.base = base;
  for (const auto& [t, m] : motions) {
    Model::MotionPrediction mp =
        Model::extract_motion(m, base, gq.pose, n);
    frame.displacements.emplace(t, std::move(mp.deltas));
  }

  TensorArchive ar;
  {
    std::vector<float> depth, rays, poses, fov;
    for (const auto& g : geos) {
      for (double z : g.depth.values.data) depth.push_back(static_cast<float>(z));
      for (int i = 0; i < (h / 2) * (w / 2); ++i) {
        const Vec3& o = g.rays.origins.data[static_cast<std::size_t>(i)];
        const Vec3& d = g.rays.directions.data[static_cast<std::size_t>(i)];
        for (int c = 0; c < 3; ++c) rays.push_back(static_cast<float>(o[c]));
        for (int c = 0; c < 3; ++c) rays.push_back(static_cast<float>(d[c]));
      }
      for (double x : {g.pose.rotation.w(), g.pose.rotation.x(),
                       g.pose.rotation.y(), g.pose.rotation.z(),
                       g.pose.translation.x(), g.pose.translation.y(),
                       g.pose.translation.z()})
        poses.push_back(static_cast<float>(x));
      fov.push_back(static_cast<float>(g.vertical_fov));
    }
    ar.put_f32("depth", {n, h, w}, depth);
    ar.put_f32("rays", {n, h / 2, w / 2, 6}, rays);
    ar.put_f32("poses", {n, 7}, poses);
    ar.put_f32("fov", {n}, fov);
  }
  {
    std::vector<float> bp;
    for (const auto& p : base.points.data)
      for (int c = 0; c < 3; ++c) bp.push_back(static_cast<float>(p[c]));
    ar.put_f32("base", {h, w, 3}, bp);
    ar.put_u8("base_valid", {h, w}, base.valid.data);
    std::vector<float> disp;
    std::vector<std::uint8_t> dvalid;
    std::vector<int> tlist;
    for (const auto& [t, d] : frame.displacements) {
      tlist.push_back(t);
      for (const auto& v : d.deltas.data)
        for (int c = 0; c < 3; ++c) disp.push_back(static_cast<float>(v[c]));
      dvalid.insert(dvalid.end(), d.valid.data.begin(), d.valid.data.end());
    }
    ar.put_f32("disp",
               {static_cast<std::int64_t>(tlist.size()), h, w, 3}, disp);
    ar.put_u8("disp_valid",
              {static_cast<std::int64_t>(tlist.size()), h, w}, dvalid);
    ar.meta = json{{"kind", "prediction"},
                   {"query", query},
                   {"targets", tlist},
                   {"num_frames", n},
                   {"height", h},
                   {"width", w},
                   {"streaming", opts.streaming},
                   {"model", mc.to_json()}};
  }
  ar.write(out_dir);

  if (opts.ply) {
    write_pointmap_ply(out_dir / "base.ply", base,
                       bundle.frames[static_cast<std::size_t>(query)]);
    std::vector<int> sorted_targets;
    for (const auto& [t, d] : frame.displacements) sorted_targets.push_back(t);
    std::vector<Timestamp> stamps;
    for (int t : sorted_targets) stamps.push_back(Timestamp(t, n));
    std::vector<Trajectory> trajs;
    for (int v = 4; v < h; v += 8)
      for (int u = 4; u < w; u += 8) {
        if (!base.valid.at(v, u)) continue;
        trajs.push_back(extract_trajectory(frame, u, v, stamps));
      }
    write_trajectories_ply(out_dir / "trajectories.ply", trajs);
  }
}

// ---------------------------------------------------------------------------
// metrics: alignment + benchmark numbers for a prediction vs its GT bundle.

struct MetricOptions {
  std::string align = "sim3_ransac";  // sim3_ransac | median_scale | none
  std::string depth_align = "scale";  // scale | scale_shift
  MetricSettings settings;
};

inline json report_to_json(const MetricReport& r) {
  json j = json::object();
  auto put = [&j](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("apd", r.apd);
  put("epe", r.epe);
  put("ate", r.ate);
  put("rpe_t", r.rpe_t);
  put("rpe_r", r.rpe_r);
  put("acc", r.acc);
  put("comp", r.comp);
  put("nc", r.nc);
  put("depth_rel", r.depth_rel);
  put("depth_delta", r.depth_delta);
  j["alignment"] = r.alignment;
  j["apd_thresholds"] = r.apd_thresholds;
  return j;
}

inline MetricReport report_from_json(const json& j) {
  MetricReport r;
  auto get = [&j](const char* k) -> std::optional<double> {
    if (j.contains(k)) return j.at(k).get<double>();
    return std::nullopt;
  };
  r.apd = get("apd");
  r.epe = get("epe");
  r.ate = get("ate");
  r.rpe_t = get("rpe_t");
  r.rpe_r = get("rpe_r");
  r.acc = get("acc");
  r.comp = get("comp");
  r.nc = get("nc");
  r.depth_rel = get("depth_rel");
  r.depth_delta = get("depth_delta");
  r.alignment = j.value("alignment", "");
  if (j.contains("apd_thresholds"))
    r.apd_thresholds = j.at("apd_thresholds").get<std::vector<double>>();
  return r;
}

inline MetricReport cmd_metrics(const fs::path& pred_dir,
                                const fs::path& gt_dir,
                                const fs::path& out_dir,
                                const MetricOptions& opts = {}) {
  if (opts.align != "sim3_ransac" && opts.align != "median_scale" &&
      opts.align != "none")
    throw ConfigError("metrics: unknown alignment '" + opts.align + "'");
  if (opts.depth_align != "scale" && opts.depth_align != "scale_shift")
    throw ConfigError("metrics: unknown depth alignment '" + opts.depth_align +
                      "'");
  TensorArchive pa;
  GroundTruthBundle gtb;
  try {
    pa = TensorArchive::read(pred_dir);
    gtb = bundle_from_archive(TensorArchive::read(gt_dir));
  } catch (const std::exception& e) {
    throw DataError(std::string("metrics: ") + e.what());
  }
  if (pa.meta.value("kind", "") != "prediction")
    throw DataError("metrics: pred archive is not a prediction");
  int n = pa.meta.at("num_frames").get<int>();
  int h = pa.meta.at("height").get<int>(), w = pa.meta.at("width").get<int>();
  int query = pa.meta.at("query").get<int>();
  if (n != gtb.num_frames() || h != gtb.intrinsics.height ||
      w != gtb.intrinsics.width)
    throw DataError("metrics: prediction and GT shapes disagree");
  std::vector<int> targets = pa.meta.at("targets").get<std::vector<int>>();

  auto base = pa.get_f32("base");
  auto base_valid = pa.get_u8("base_valid");
  auto disp = pa.get_f32("disp");
  auto disp_valid = pa.get_u8("disp_valid");
  std::size_t hw = static_cast<std::size_t>(h) * w;

  // Track points: predicted base + displacement vs exact GT world position.
  std::vector<Vec3> pred_pts, gt_pts;
  std::vector<std::uint8_t> valid;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    int tau = targets[k];
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        std::size_t i = static_cast<std::size_t>(v) * w + u;
        bool ok = base_valid[i] && disp_valid[k * hw + i] &&
                  gtb.depths[static_cast<std::size_t>(query)].valid.data[i];
        valid.push_back(ok ? 1 : 0);
        if (!ok) {
          pred_pts.push_back(Vec3::Zero());
          gt_pts.push_back(Vec3::Zero());
          continue;
        }
        std::size_t b3 = i * 3, d3 = (k * hw + i) * 3;
        Vec3 p(base[b3] + disp[d3], base[b3 + 1] + disp[d3 + 1],
               base[b3 + 2] + disp[d3 + 2]);
        pred_pts.push_back(p);
        gt_pts.push_back(gtb.world_at(query, u, v, tau));
      }
  }

  MetricReport report;
  report.alignment = opts.align;
  report.apd_thresholds = opts.settings.apd_thresholds;

  Correspondences corr;
  for (std::size_t i = 0; i < pred_pts.size(); ++i)
    if (valid[i]) corr.add(pred_pts[i], gt_pts[i]);
  if (corr.size() < 3) throw DataError("metrics: too few valid track points");

  Sim3 align = Sim3::identity();
  if (opts.align == "sim3_ransac") {
    // Degenerate predictions (e.g. an untrained model collapsing points
    // onto a line) can defeat the robust fit; fall back so the metrics
    // still quantify how bad the prediction is.
    try {
      align = ransac_sim3(corr, opts.settings.ransac_threshold,
                          opts.settings.ransac_iterations, gtb.seed)
                  .transform;
    } catch (const std::exception&) {
      try {
        align = umeyama_sim3(corr);
      } catch (const std::exception&) {
        align = Sim3::identity();
      }
    }
  } else if (opts.align == "median_scale") {
    align.scale = median_scale(corr);
  }
  std::vector<Vec3> aligned = pred_pts;
  for (std::size_t i = 0; i < aligned.size(); ++i)
    if (valid[i]) aligned[i] = align.apply(aligned[i]);

  report.apd = apd(aligned, gt_pts, valid, opts.settings.apd_thresholds);
  report.epe = epe(aligned, gt_pts, valid);

  // Poses.
  auto poses = pa.get_f32("poses");
  std::vector<CameraPose> pred_poses;
  for (int i = 0; i < n; ++i) {
    const float* p = poses.data() + static_cast<std::size_t>(i) * 7;
    CameraPose cp;
    cp.rotation = Quat(p[0], p[1], p[2], p[3]);
    cp.rotation.normalize();
    cp.translation = Vec3(p[4], p[5], p[6]);
    pred_poses.push_back(cp);
  }
  PoseError pe = ate_rpe(pred_poses, gtb.poses);
  report.ate = pe.ate;
  report.rpe_t = pe.rpe_t;
  report.rpe_r = pe.rpe_r;

  // Cloud metrics on the query frame's base geometry, using the tracking
  // alignment.
  std::vector<Vec3> pred_cloud, gt_cloud;
  PointMap gt_base = gtb.base_pointmap(query);
  for (std::size_t i = 0; i < hw; ++i) {
    if (base_valid[i]) {
      Vec3 p(base[i * 3], base[i * 3 + 1], base[i * 3 + 2]);
      pred_cloud.push_back(align.apply(p));
    }
    if (gt_base.valid.data[i]) gt_cloud.push_back(gt_base.points.data[i]);
  }
  if (!pred_cloud.empty() && !gt_cloud.empty()) {
    CloudError ce = acc_comp_nc(pred_cloud, gt_cloud);
    report.acc = ce.acc;
    report.comp = ce.comp;
    report.nc = ce.nc;
  }

  // Depth.
  auto dvals = pa.get_f32("depth");
  std::vector<DepthMap> pred_depth;
  for (int i = 0; i < n; ++i) {
    DepthMap d(h, w);
    for (std::size_t j = 0; j < hw; ++j) {
      d.values.data[j] = dvals[static_cast<std::size_t>(i) * hw + j];
      d.valid.data[j] = 1;
    }
    pred_depth.push_back(std::move(d));
  }
  DepthError de = depth_metrics(pred_depth, gtb.depths,
                                opts.depth_align == "scale"
                                    ? DepthAlign::Scale
                                    : DepthAlign::ScaleShift);
  report.depth_rel = de.rel;
  report.depth_delta = de.delta;

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  json rj = report_to_json(report);
  rj["depth_alignment"] = opts.depth_align;
  {
    std::ofstream f(out_dir / "report.json");
    if (!f) throw DataError("metrics: cannot write report");
    f << rj.dump(2) << "\n";
  }
  {
    std::ofstream f(out_dir / "report.csv");
    f << "apd,epe,ate,rpe_t,rpe_r,acc,comp,nc,depth_rel,depth_delta,alignment\n";
    auto cell = [&f](const std::optional<double>& v) {
      if (v) f << std::setprecision(17) << *v;
      f << ',';
    };
    cell(report.apd);
    cell(report.epe);
    cell(report.ate);
    cell(report.rpe_t);
    cell(report.rpe_r);
    cell(report.acc);
    cell(report.comp);
    cell(report.nc);
    cell(report.depth_rel);
    cell(report.depth_delta);
    f << report.alignment << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// report: aggregate several MetricReports into one mean table.

inline MetricReport cmd_report(const std::vector<fs::path>& report_files,
                               const fs::path& out_csv) {
  if (report_files.empty()) throw DataError("report: no inputs");
  std::vector<MetricReport> reports;
  for (const auto& p : report_files) {
    std::ifstream f(p);
    if (!f) throw DataError("report: cannot open " + p.string());
    try {
      reports.push_back(report_from_json(json::parse(f)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("report: ") + e.what());
    }
  }
  auto fields = [](const MetricReport& r) {
    return std::vector<std::pair<const char*, std::optional<double>>>{
        {"apd", r.apd},           {"epe", r.epe},
        {"ate", r.ate},           {"rpe_t", r.rpe_t},
        {"rpe_r", r.rpe_r},       {"acc", r.acc},
        {"comp", r.comp},         {"nc", r.nc},
        {"depth_rel", r.depth_rel}, {"depth_delta", r.depth_delta}};
  };
  auto first = fields(reports[0]);
  for (const auto& r : reports) {
    auto fs_r = fields(r);
    for (std::size_t i = 0; i < first.size(); ++i)
      if (first[i].second.has_value() != fs_r[i].second.has_value())
        throw DataError("report: inconsistent metric sets");
  }
  MetricReport agg;
  agg.alignment = reports[0].alignment;
  agg.apd_thresholds = reports[0].apd_thresholds;
  auto mean_of = [&](auto pick) -> std::optional<double> {
    if (!pick(reports[0]).has_value()) return std::nullopt;
    double s = 0.0;
    for (const auto& r : reports) s += *pick(r);
    return s / static_cast<double>(reports.size());
  };
  agg.apd = mean_of([](const MetricReport& r) { return r.apd; });
  agg.epe = mean_of([](const MetricReport& r) { return r.epe; });
  agg.ate = mean_of([](const MetricReport& r) { return r.ate; });
  agg.rpe_t = mean_of([](const MetricReport& r) { return r.rpe_t; });
  agg.rpe_r = mean_of([](const MetricReport& r) { return r.rpe_r; });
  agg.acc = mean_of([](const MetricReport& r) { return r.acc; });
  agg.comp = mean_of([](const MetricReport& r) { return r.comp; });
  agg.nc = mean_of([](const MetricReport& r) { return r.nc; });
  agg.depth_rel = mean_of([](const MetricReport& r) { return r.depth_rel; });
  agg.depth_delta = mean_of([](const MetricReport& r) { return r.depth_delta; });

  std::ofstream f(out_csv);
  if (!f) throw DataError("report: cannot write " + out_csv.string());
  f << "metric,mean,count\n";
  for (const auto& [name, v] : fields(agg))
    if (v)
      f << name << ',' << std::setprecision(17) << *v << ','
        << reports.size() << "\n";
  return agg;
}

}  // namespace q4d
