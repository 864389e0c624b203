#pragma once

// Run configuration: one JSON document covering generation, model, training
// and metric settings. Unknown keys are rejected so typos fail loudly.

#include "q4d/errors.hpp"
#include "q4d/evalmetrics.hpp"
#include "q4d/model.hpp"
#include "q4d/scenegen.hpp"
#include "q4d/training.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace q4d {

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object())
    throw ConfigError("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k))
      throw ConfigError("config: unknown key '" + k + "' in " + where);
}

}  // namespace detail

struct GenSettings {
  int count = 8;  // sequences per dataset
};

struct MetricSettings {
  std::vector<double> apd_thresholds = default_apd_thresholds();
  double ransac_threshold = 0.05;
  int ransac_iterations = 512;
};

struct RunConfig {
  std::uint64_t seed = 1;
  GenSettings gen;
  SceneGenConfig scenegen;
  AugmentConfig aug;
  bool augment_enabled = true;
  ModelConfig model;
  TrainConfig train;
  int clip_len = 6;
  int checkpoint_interval = 500;
  MetricSettings metrics;

  json to_json() const {
    return json{
        {"seed", seed},
        {"gen", {{"count", gen.count}}},
        {"scenegen",
         {{"min_frames", scenegen.min_frames},
          {"max_frames", scenegen.max_frames},
          {"height", scenegen.height},
          {"width", scenegen.width},
          {"min_aspect", scenegen.min_aspect},
          {"max_aspect", scenegen.max_aspect},
          {"min_objects", scenegen.min_objects},
          {"max_objects", scenegen.max_objects},
          {"min_fov", scenegen.min_fov},
          {"max_fov", scenegen.max_fov},
          {"max_speed", scenegen.max_speed},
          {"max_cam_speed", scenegen.max_cam_speed},
          {"background_dist", scenegen.background_dist}}},
        {"augment",
         {{"enabled", augment_enabled},
          {"p_blur", aug.p_blur},
          {"p_jitter", aug.p_jitter},
          {"p_grayscale", aug.p_grayscale}}},
        {"model", model.to_json()},
        {"train", train.to_json()},
        {"clip_len", clip_len},
        {"checkpoint_interval", checkpoint_interval},
        {"metrics",
         {{"apd_thresholds", metrics.apd_thresholds},
          {"ransac_threshold", metrics.ransac_threshold},
          {"ransac_iterations", metrics.ransac_iterations}}}};
  }

  static RunConfig from_json(const json& j) {
    detail::check_keys(j, {"seed", "gen", "scenegen", "augment", "model",
                           "train", "clip_len", "checkpoint_interval",
                           "metrics"},
                       "<root>");
    RunConfig c;
    try {
      c.seed = j.value("seed", c.seed);
      if (j.contains("gen")) {
        detail::check_keys(j["gen"], {"count"}, "gen");
        c.gen.count = j["gen"].value("count", c.gen.count);
      }
      if (j.contains("scenegen")) {
        const json& s = j["scenegen"];
        detail::check_keys(s,
                           {"min_frames", "max_frames", "height", "width",
                            "min_aspect", "max_aspect", "min_objects",
                            "max_objects", "min_fov", "max_fov", "max_speed",
                            "max_cam_speed", "background_dist"},
                           "scenegen");
        auto& g = c.scenegen;
        g.min_frames = s.value("min_frames", g.min_frames);
        g.max_frames = s.value("max_frames", g.max_frames);
        g.height = s.value("height", g.height);
        g.width = s.value("width", g.width);
        g.min_aspect = s.value("min_aspect", g.min_aspect);
        g.max_aspect = s.value("max_aspect", g.max_aspect);
        g.min_objects = s.value("min_objects", g.min_objects);
        g.max_objects = s.value("max_objects", g.max_objects);
        g.min_fov = s.value("min_fov", g.min_fov);
        g.max_fov = s.value("max_fov", g.max_fov);
        g.max_speed = s.value("max_speed", g.max_speed);
        g.max_cam_speed = s.value("max_cam_speed", g.max_cam_speed);
        g.background_dist = s.value("background_dist", g.background_dist);
      }
      if (j.contains("augment")) {
        const json& a = j["augment"];
        detail::check_keys(a, {"enabled", "p_blur", "p_jitter", "p_grayscale"},
                           "augment");
        c.augment_enabled = a.value("enabled", c.augment_enabled);
        c.aug.p_blur = a.value("p_blur", c.aug.p_blur);
        c.aug.p_jitter = a.value("p_jitter", c.aug.p_jitter);
        c.aug.p_grayscale = a.value("p_grayscale", c.aug.p_grayscale);
      }
      if (j.contains("model")) {
        detail::check_keys(j["model"],
                           {"patch_size", "embed_dim", "encoder_layers",
                            "heads", "motion_layers", "mlp_ratio",
                            "head_hidden", "norm_eps", "use_self_attn",
                            "use_cross_attn", "use_adaln", "output_param"},
                           "model");
        c.model = ModelConfig::from_json(j["model"]);
      }
      if (j.contains("train")) {
        detail::check_keys(j["train"],
                           {"lr", "weight_decay", "clip_norm", "total_steps",
                            "beta1", "beta2", "adam_eps", "grad_term_weight",
                            "dense_probability", "sparse_keep_min",
                            "sparse_keep_max", "causal"},
                           "train");
        c.train = TrainConfig::from_json(j["train"]);
      }
      c.clip_len = j.value("clip_len", c.clip_len);
      c.checkpoint_interval = j.value("checkpoint_interval",
                                      c.checkpoint_interval);
      if (j.contains("metrics")) {
        const json& m = j["metrics"];
        detail::check_keys(
            m, {"apd_thresholds", "ransac_threshold", "ransac_iterations"},
            "metrics");
        c.metrics.apd_thresholds =
            m.value("apd_thresholds", c.metrics.apd_thresholds);
        c.metrics.ransac_threshold =
            m.value("ransac_threshold", c.metrics.ransac_threshold);
        c.metrics.ransac_iterations =
            m.value("ransac_iterations", c.metrics.ransac_iterations);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
  }

  static RunConfig load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path.string());
    json j;
    try {
      j = json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    return from_json(j);
  }

  void dump(const fs::path& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("config: cannot write " + path.string());
    f << to_json().dump(2) << "\n";
  }
};

}  // namespace q4d
