#pragma once

// Losses (aleatoric L1 with spatial/temporal gradient terms), supervision
// sampling, scene-normalized clip preparation, and the AdamW training loop
// with cosine learning-rate schedule and gradient clipping.

#include "q4d/archive.hpp"
#include "q4d/errors.hpp"
#include "q4d/model.hpp"
#include "q4d/rng.hpp"
#include "q4d/scenegen.hpp"
#include "q4d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4d {

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.05;
  double clip_norm = 1.0;
  int total_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_term_weight = 1.0;  // weight of spatial/temporal gradient terms
  double dense_probability = 0.2;
  double sparse_keep_min = 0.2;
  double sparse_keep_max = 0.3;
  bool causal = false;  // train the streaming variant

  nlohmann::json to_json() const {
    return nlohmann::json{{"lr", lr},
                          {"weight_decay", weight_decay},
                          {"clip_norm", clip_norm},
                          {"total_steps", total_steps},
                          {"beta1", beta1},
                          {"beta2", beta2},
                          {"adam_eps", adam_eps},
                          {"grad_term_weight", grad_term_weight},
                          {"dense_probability", dense_probability},
                          {"sparse_keep_min", sparse_keep_min},
                          {"sparse_keep_max", sparse_keep_max},
                          {"causal", causal}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_term_weight = j.value("grad_term_weight", c.grad_term_weight);
    c.dense_probability = j.value("dense_probability", c.dense_probability);
    c.sparse_keep_min = j.value("sparse_keep_min", c.sparse_keep_min);
    c.sparse_keep_max = j.value("sparse_keep_max", c.sparse_keep_max);
    c.causal = j.value("causal", c.causal);
    return c;
  }
};

inline double cosine_lr(double base, long step, long total_steps) {
  if (total_steps <= 0) return base;
  double t = std::clamp(static_cast<double>(step) / total_steps, 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// Supervision sampling

struct SupervisionPlan {
  int query = 0;
  std::vector<int> targets;  // all N timestamps, ascending
  bool dense = false;
  double keep_fraction = 0.0;  // used when !dense
  std::vector<Mask> masks;     // per target, subset of GT validity at query
};

inline SupervisionPlan build_supervision_plan(const GroundTruthBundle& b,
                                              std::uint64_t seed,
                                              const TrainConfig& cfg = {}) {
  int n = b.num_frames();
  if (n < 2) throw std::invalid_argument("supervision: need >= 2 frames");
  Pcg32 rng = make_stream(seed, 0x5CA1E);
  SupervisionPlan plan;
  plan.query = static_cast<int>(rng.next_bounded(static_cast<std::uint32_t>(n)));
  plan.targets.resize(static_cast<std::size_t>(n));
  std::iota(plan.targets.begin(), plan.targets.end(), 0);
  plan.dense = rng.uniform(0.0, 1.0) < cfg.dense_probability;
  if (!plan.dense)
    plan.keep_fraction = rng.uniform(cfg.sparse_keep_min, cfg.sparse_keep_max);

  const Mask& valid = b.depths[static_cast<std::size_t>(plan.query)].valid;
  int h = valid.h, w = valid.w;
  for (int tau : plan.targets) {
    if (plan.dense) {
      plan.masks.push_back(valid);
      continue;
    }
    DisplacementField d = b.displacement(plan.query, tau);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < valid.data.size(); ++i)
      if (valid.data[i]) idx.push_back(i);
    std::size_t keep = static_cast<std::size_t>(
        std::lround(plan.keep_fraction * static_cast<double>(idx.size())));
    keep = std::min(keep, idx.size());
    // Top displacement magnitudes; ties broken by pixel index for
    // determinism.
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep),
                     idx.end(), [&](std::size_t a, std::size_t c) {
                       double ma = d.deltas.data[a].norm();
                       double mc = d.deltas.data[c].norm();
                       if (ma != mc) return ma > mc;
                       return a < c;
                     });
    Mask m(h, w, 0);
    for (std::size_t k = 0; k < keep; ++k) m.data[idx[k]] = 1;
    plan.masks.push_back(std::move(m));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Scene-normalized training clip

struct TrainClip {
  int n = 0, h = 0, w = 0;
  std::vector<Grid<Vec3>> images;  // network input (possibly augmented)
  std::vector<DepthMap> depth;     // scaled GT z-depth
  std::vector<RayMap> rays;        // world-frame GT rays, origins scaled
  std::vector<CameraPose> poses;   // translations scaled
  double vertical_fov = 1.0;
  double scale = 1.0;
  // Displacement GT for plan.query -> each target, scaled; index parallel
  // to plan.targets.
  std::vector<DisplacementField> disp;
  PointMap query_base;  // scaled base pointmap of the query frame
};

inline TrainClip make_train_clip(const GroundTruthBundle& b,
                                 const SupervisionPlan& plan,
                                 const std::vector<Grid<Vec3>>* images = nullptr) {
  TrainClip clip;
  clip.n = b.num_frames();
  clip.h = b.intrinsics.height;
  clip.w = b.intrinsics.width;
  clip.vertical_fov = b.intrinsics.vertical_fov;
  clip.images = images ? *images : b.frames;

  std::vector<PointMap> base;
  for (int i = 0; i < clip.n; ++i) base.push_back(b.base_pointmap(i));
  double s = scene_norm_scale(base);
  clip.scale = s;

  for (int i = 0; i < clip.n; ++i) {
    DepthMap d = b.depths[static_cast<std::size_t>(i)];
    for (auto& z : d.values.data) z *= s;
    clip.depth.push_back(std::move(d));
    CameraPose p = b.poses[static_cast<std::size_t>(i)];
    p.translation *= s;
    clip.poses.push_back(p);
    clip.rays.push_back(intrinsics_to_rays(b.intrinsics, clip.poses.back()));
  }
  for (std::size_t k = 0; k < plan.targets.size(); ++k) {
    DisplacementField d = b.displacement(plan.query, plan.targets[k]);
    for (auto& v : d.deltas.data) v *= s;
    clip.disp.push_back(std::move(d));
  }
  clip.query_base = base[static_cast<std::size_t>(plan.query)];
  for (std::size_t i = 0; i < clip.query_base.points.data.size(); ++i)
    if (clip.query_base.valid.data[i]) clip.query_base.points.data[i] *= s;
  return clip;
}

// ---------------------------------------------------------------------------
// Losses

// Mean over weighted elements of |pred - gt| * exp(-log_sigma) + log_sigma.
inline Tensor aleatoric_l1(const Tensor& pred, const Tensor& gt,
                           const Tensor& log_sigma,
                           std::shared_ptr<std::vector<double>> weights,
                           long* count_out = nullptr) {
  double count = 0.0;
  for (double w : *weights) count += w;
  if (count <= 0.0) throw std::invalid_argument("aleatoric_l1: empty mask");
  if (count_out) *count_out = static_cast<long>(std::lround(count));
  Tensor r = abs_t(sub(pred, gt));
  Tensor term = add(mul(r, neg_exp_t(log_sigma)), log_sigma);
  return scale(weighted_sum(term, std::move(weights)), 1.0 / count);
}

namespace detail {

// Broadcast a per-pixel tensor [n] to [n*ch] (channel-major inner).
inline Tensor broadcast_channels(const Tensor& per_pixel, int ch) {
  std::int64_t n = per_pixel.numel();
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n * ch));
  for (std::int64_t i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) idx.push_back(i);
  return gather(per_pixel, std::move(idx), {n * ch});
}

inline std::shared_ptr<std::vector<double>> mask_weights(const Mask& m, int ch) {
  auto w = std::make_shared<std::vector<double>>();
  w->reserve(m.data.size() * static_cast<std::size_t>(ch));
  for (auto v : m.data)
    for (int c = 0; c < ch; ++c) w->push_back(v ? 1.0 : 0.0);
  return w;
}

inline Tensor const_from_grid(const Grid<Vec3>& g) {
  std::vector<double> v;
  v.reserve(g.data.size() * 3);
  for (const auto& p : g.data) {
    v.push_back(p.x());
    v.push_back(p.y());
    v.push_back(p.z());
  }
  return Tensor::constant({static_cast<std::int64_t>(g.data.size()) * 3},
                          std::move(v));
}

}  // namespace detail

// Depth term: aleatoric L1 on values plus aleatoric L1 on forward-difference
// spatial gradients (pairs where both pixels are valid, sigma taken at the
// anchor pixel).
inline Tensor depth_loss(const GeometryOut& g, const DepthMap& gt,
                         double grad_weight = 1.0, long* pixels = nullptr) {
  int h = g.h, w = g.w;
  if (gt.values.h != h || gt.values.w != w)
    throw std::invalid_argument("depth_loss: shape mismatch");
  Tensor gt_t = Tensor::constant({static_cast<std::int64_t>(h) * w},
                                 std::vector<double>(gt.values.data));
  Tensor value = aleatoric_l1(g.depth, gt_t, g.log_sigma,
                              detail::mask_weights(gt.valid, 1), pixels);

  // Forward differences in x then y, concatenated into one mean.
  auto idx_a = std::make_shared<std::vector<std::int64_t>>();
  auto idx_b = std::make_shared<std::vector<std::int64_t>>();
  auto wts = std::make_shared<std::vector<double>>();
  std::vector<double> gt_diff;
  auto push_pair = [&](int va, int ua, int vb, int ub) {
    std::int64_t a = static_cast<std::int64_t>(va) * w + ua;
    std::int64_t bb = static_cast<std::int64_t>(vb) * w + ub;
    idx_a->push_back(a);
    idx_b->push_back(bb);
    bool ok = gt.valid.at(va, ua) && gt.valid.at(vb, ub);
    wts->push_back(ok ? 1.0 : 0.0);
    gt_diff.push_back(ok ? gt.values.at(vb, ub) - gt.values.at(va, ua) : 0.0);
  };
  for (int v = 0; v < h; ++v)
    for (int u = 0; u + 1 < w; ++u) push_pair(v, u, v, u + 1);
  for (int v = 0; v + 1 < h; ++v)
    for (int u = 0; u < w; ++u) push_pair(v, u, v + 1, u);

  double cnt = 0;
  for (double x : *wts) cnt += x;
  if (cnt == 0.0) return grad_weight == 0.0 ? value : value;  // no valid pairs
  std::int64_t m = static_cast<std::int64_t>(idx_a->size());
  Tensor da = gather(g.depth, idx_a, {m});
  Tensor db = gather(g.depth, idx_b, {m});
  Tensor diff = sub(db, da);
  Tensor gt_d = Tensor::constant({m}, std::move(gt_diff));
  Tensor sig = gather(g.log_sigma, idx_a, {m});
  Tensor grad_term = aleatoric_l1(diff, gt_d, sig, wts);
  return add(value, scale(grad_term, grad_weight));
}

// Ray term: aleatoric L1 over the 6 (origin, direction) channels at half
// resolution; sigma borrowed from the depth head at the block's top-left
// full-resolution pixel.
inline Tensor ray_loss(const GeometryOut& g, const RayMap& gt,
                       long* pixels = nullptr) {
  int h2 = g.h / 2, w2 = g.w / 2;
  if (gt.origins.h != h2 || gt.origins.w != w2)
    throw std::invalid_argument("ray_loss: shape mismatch");
  std::vector<double> gt_v;
  gt_v.reserve(static_cast<std::size_t>(h2) * w2 * 6);
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x) {
      const Vec3& o = gt.origins.at(y, x);
      const Vec3& d = gt.directions.at(y, x);
      for (int c = 0; c < 3; ++c) gt_v.push_back(o[c]);
      for (int c = 0; c < 3; ++c) gt_v.push_back(d[c]);
    }
  std::int64_t n6 = static_cast<std::int64_t>(h2) * w2 * 6;
  Tensor gt_t = Tensor::constant({static_cast<std::int64_t>(h2) * w2, 6},
                                 std::move(gt_v));
  auto sig_idx = std::make_shared<std::vector<std::int64_t>>();
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x)
      for (int c = 0; c < 6; ++c)
        sig_idx->push_back(static_cast<std::int64_t>(2 * y) * g.w + 2 * x);
  Tensor sig = gather(g.log_sigma, sig_idx, {n6});
  auto wts = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n6), 1.0);
  if (pixels) *pixels = h2 * w2;
  return aleatoric_l1(reshape(g.rays, {n6}), reshape(gt_t, {n6}), sig, wts);
}

// Camera term per frame: |fov error| + geodesic rotation angle (radians)
// + L1 translation error, averaged over frames.
inline Tensor camera_loss(const std::vector<GeometryOut>& geos,
                          const std::vector<CameraPose>& gt_poses,
                          double gt_fov) {
  if (geos.empty()) throw std::invalid_argument("camera_loss: no frames");
  if (geos.size() != gt_poses.size())
    throw std::invalid_argument("camera_loss: frame count mismatch");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < geos.size(); ++i) {
    const GeometryOut& g = geos[i];
    Tensor fov_err = abs_t(add_scalar(g.fov, -gt_fov));
    Quat q = gt_poses[i].rotation.normalized();
    Tensor qgt = Tensor::constant({1, 4}, {q.w(), q.x(), q.y(), q.z()});
    Tensor dot = abs_t(sum(mul(g.quat, qgt)));
    Tensor angle = scale(acos_t(dot), 2.0);
    const Vec3& t = gt_poses[i].translation;
    Tensor tgt = Tensor::constant({1, 3}, {t.x(), t.y(), t.z()});
    Tensor terr = sum(abs_t(sub(g.trans, tgt)));
    total = add(total, add(fov_err, add(angle, terr)));
  }
  return scale(total, 1.0 / static_cast<double>(geos.size()));
}

// Motion term: aleatoric L1 on the head output against the GT target for the
// configured parameterization, plus aleatoric L1 on consecutive-target
// temporal differences (sigma anchored at the earlier target).
inline Tensor motion_loss(const std::vector<MotionOut>& preds,
                          const TrainClip& clip, const SupervisionPlan& plan,
                          double grad_weight = 1.0, long* pixels = nullptr) {
  if (preds.empty()) throw std::invalid_argument("motion_loss: no targets");
  if (preds.size() != plan.targets.size() || preds.size() != clip.disp.size())
    throw std::invalid_argument("motion_loss: target count mismatch");
  std::int64_t hw = static_cast<std::int64_t>(clip.h) * clip.w;

  const CameraPose& qpose = clip.poses[static_cast<std::size_t>(plan.query)];
  auto target_values = [&](std::size_t k) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(hw) * 3);
    const DisplacementField& d = clip.disp[k];
    for (std::int64_t i = 0; i < hw; ++i) {
      Vec3 delta = d.deltas.data[static_cast<std::size_t>(i)];
      Vec3 out;
      switch (preds[k].param) {
        case OutputParam::Displacement: out = delta; break;
        case OutputParam::PointsWorld:
          out = clip.query_base.points.data[static_cast<std::size_t>(i)] + delta;
          break;
        case OutputParam::PointsLocal:
          out = qpose.to_camera(
              clip.query_base.points.data[static_cast<std::size_t>(i)] + delta);
          break;
      }
      for (int c = 0; c < 3; ++c) v.push_back(out[c]);
    }
    return v;
  };
  auto combined_mask = [&](std::size_t k) {
    Mask m(clip.h, clip.w, 0);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      m.data[i] = (plan.masks[k].data[i] && clip.disp[k].valid.data[i]) ? 1 : 0;
    return m;
  };

  Tensor total = Tensor::scalar(0.0);
  long px_total = 0;
  std::vector<Mask> masks;
  for (std::size_t k = 0; k < preds.size(); ++k)
    masks.push_back(combined_mask(k));
  for (std::size_t k = 0; k < preds.size(); ++k) {
    Tensor gt = Tensor::constant({hw * 3}, target_values(k));
    Tensor sig = detail::broadcast_channels(preds[k].log_sigma, 3);
    long px = 0;
    Tensor term = aleatoric_l1(reshape(preds[k].out, {hw * 3}), gt, sig,
                               detail::mask_weights(masks[k], 3), &px);
    px_total += px / 3;
    total = add(total, term);
  }
  // Temporal first-difference term over consecutive targets.
  if (grad_weight != 0.0 && preds.size() > 1) {
    for (std::size_t k = 0; k + 1 < preds.size(); ++k) {
      Mask both(clip.h, clip.w, 0);
      double cnt = 0;
      for (std::size_t i = 0; i < both.data.size(); ++i) {
        both.data[i] = (masks[k].data[i] && masks[k + 1].data[i]) ? 1 : 0;
        cnt += both.data[i];
      }
      if (cnt == 0) continue;
      std::vector<double> a = target_values(k), b = target_values(k + 1);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = b[i] - a[i];
      Tensor gt_diff = Tensor::constant({hw * 3}, std::move(a));
      Tensor diff = sub(reshape(preds[k + 1].out, {hw * 3}),
                        reshape(preds[k].out, {hw * 3}));
      Tensor sig = detail::broadcast_channels(preds[k].log_sigma, 3);
      Tensor term = aleatoric_l1(diff, gt_diff, sig,
                                 detail::mask_weights(both, 3));
      total = add(total, scale(term, grad_weight));
    }
  }
  if (pixels) *pixels = px_total;
  return total;
}

struct LossBreakdown {
  double depth = 0, ray = 0, camera = 0, motion = 0, total = 0;
  long depth_pixels = 0, ray_pixels = 0, motion_pixels = 0;
};

// ---------------------------------------------------------------------------
// Optimizer

class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  long step_count() const { return step_; }
  double last_lr() const { return last_lr_; }
  double last_grad_norm() const { return last_grad_norm_; }

  void step(Model& model) {
    double lr = cosine_lr(cfg_.lr, step_, cfg_.total_steps);
    last_lr_ = lr;
    ++step_;

    double sq = 0.0;
    for (auto& [name, p] : model.params) {
      const auto& g = p.node()->grad;
      for (double x : g) sq += x * x;
    }
    last_grad_norm_ = std::sqrt(sq);
    double factor = 1.0;
    if (cfg_.clip_norm > 0 && last_grad_norm_ > cfg_.clip_norm)
      factor = cfg_.clip_norm / last_grad_norm_;

    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : model.params) {
      auto& value = p.mutable_value();
      const auto& grad = p.node()->grad;
      if (grad.size() != value.size()) continue;  // no gradient this step
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != value.size()) m.assign(value.size(), 0.0);
      if (v.size() != value.size()) v.assign(value.size(), 0.0);
      for (std::size_t i = 0; i < value.size(); ++i) {
        double g = grad[i] * factor;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        double mh = m[i] / bc1, vh = v[i] / bc2;
        value[i] -= lr * (mh / (std::sqrt(vh) + cfg_.adam_eps) +
                          cfg_.weight_decay * value[i]);
      }
    }
  }

  // Checkpoint plumbing: float64 state stored as raw bytes.
  void save(TensorArchive& ar) const {
    auto put = [&ar](const std::string& n, const std::vector<double>& v) {
      std::vector<std::uint8_t> b(v.size() * sizeof(double));
      std::memcpy(b.data(), v.data(), b.size());
      ar.put_u8(n, {static_cast<std::int64_t>(b.size())}, b);
    };
    for (const auto& [k, v] : m_) put("adam.m." + k, v);
    for (const auto& [k, v] : v_) put("adam.v." + k, v);
    ar.meta["adam_step"] = step_;
  }

  void load(const TensorArchive& ar) {
    auto get = [&ar](const std::string& n) {
      auto b = ar.get_u8(n);
      std::vector<double> v(b.size() / sizeof(double));
      std::memcpy(v.data(), b.data(), b.size());
      return v;
    };
    m_.clear();
    v_.clear();
    for (const auto& name : ar.names()) {
      if (name.rfind("adam.m.", 0) == 0) m_[name.substr(7)] = get(name);
      if (name.rfind("adam.v.", 0) == 0) v_[name.substr(7)] = get(name);
    }
    step_ = ar.meta.at("adam_step").get<long>();
  }

 private:
  TrainConfig cfg_;
  std::map<std::string, std::vector<double>> m_, v_;
  long step_ = 0;
  double last_lr_ = 0.0, last_grad_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training step

struct StepResult {
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Forward pass + loss graph over a normalized clip. Exposed separately so
// gradient checks and loss oracles can reuse it.
struct ClipLoss {
  Tensor depth, ray, camera, motion, total;
  LossBreakdown values;
  Model::Forward4D forward;
};

inline ClipLoss clip_loss(const Model& model, const TrainClip& clip,
                          const SupervisionPlan& plan, const TrainConfig& cfg) {
  ClipLoss out;
  EncodeOptions opts;
  opts.causal = cfg.causal;
  out.forward = model.forward_4d(clip.images, plan.query, plan.targets, opts);

  Tensor d_total = Tensor::scalar(0.0);
  long d_px = 0, r_px = 0;
  Tensor r_total = Tensor::scalar(0.0);
  for (int i = 0; i < clip.n; ++i) {
    long px = 0;
    d_total = add(d_total,
                  depth_loss(out.forward.geometry[static_cast<std::size_t>(i)],
                             clip.depth[static_cast<std::size_t>(i)],
                             cfg.grad_term_weight, &px));
    d_px += px;
    long rpx = 0;
    r_total = add(r_total,
                  ray_loss(out.forward.geometry[static_cast<std::size_t>(i)],
                           clip.rays[static_cast<std::size_t>(i)], &rpx));
    r_px += rpx;
  }
  out.depth = scale(d_total, 1.0 / clip.n);
  out.ray = scale(r_total, 1.0 / clip.n);
  out.camera = camera_loss(out.forward.geometry, clip.poses, clip.vertical_fov);

  std::vector<MotionOut> preds;
  for (int t : plan.targets) preds.push_back(out.forward.motion.at(t));
  long m_px = 0;
  out.motion = scale(motion_loss(preds, clip, plan, cfg.grad_term_weight, &m_px),
                     1.0 / static_cast<double>(preds.size()));
  out.total = add(add(out.depth, out.ray), add(out.camera, out.motion));

  out.values.depth = out.depth.item();
  out.values.ray = out.ray.item();
  out.values.camera = out.camera.item();
  out.values.motion = out.motion.item();
  out.values.total = out.total.item();
  out.values.depth_pixels = d_px;
  out.values.ray_pixels = r_px;
  out.values.motion_pixels = m_px;
  return out;
}

inline StepResult train_step(Model& model, const TrainClip& clip,
                             const SupervisionPlan& plan, AdamW& opt,
                             const TrainConfig& cfg) {
  model.zero_grad();
  ClipLoss loss = clip_loss(model, clip, plan, cfg);
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(loss.values.depth) || bad(loss.values.ray) ||
      bad(loss.values.camera) || bad(loss.values.motion)) {
    std::string term = bad(loss.values.depth)    ? "depth"
                       : bad(loss.values.ray)    ? "ray"
                       : bad(loss.values.camera) ? "camera"
                                                 : "motion";
    throw NumericError("train_step: non-finite " + term + " loss");
  }
  backward(loss.total);
  opt.step(model);
  StepResult r;
  r.loss = loss.values;
  r.lr = opt.last_lr();
  r.grad_norm = opt.last_grad_norm();
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: parameters + optimizer state + RNG state, bit-exact resume.

inline void save_checkpoint(const fs::path& dir, const Model& model,
                            const AdamW& opt, long step, const Pcg32& rng) {
  TensorArchive ar;
  auto put = [&ar](const std::string& n, const std::vector<double>& v) {
    std::vector<std::uint8_t> b(v.size() * sizeof(double));
    std::memcpy(b.data(), v.data(), b.size());
    ar.put_u8(n, {static_cast<std::int64_t>(b.size())}, b);
  };
  json shapes = json::object();
  for (const auto& [k, p] : model.params) {
    put("param." + k, p.value());
    shapes[k] = p.shape();
  }
  opt.save(ar);
  ar.meta["kind"] = "checkpoint";
  ar.meta["step"] = step;
  ar.meta["model"] = model.cfg.to_json();
  ar.meta["param_shapes"] = shapes;
  ar.meta["rng"] = {{"state", rng.state()}, {"inc", rng.inc()}};
  ar.write(dir);
}

inline long load_checkpoint(const fs::path& dir, Model& model, AdamW* opt,
                            Pcg32* rng) {
  TensorArchive ar = TensorArchive::read(dir);
  if (ar.meta.value("kind", "") != "checkpoint")
    throw std::runtime_error("checkpoint: archive kind mismatch");
  ModelConfig saved = ModelConfig::from_json(ar.meta.at("model"));
  if (saved.to_json() != model.cfg.to_json())
    throw std::runtime_error("checkpoint: model config mismatch");
  for (auto& [k, p] : model.params) {
    auto b = ar.get_u8("param." + k);
    std::vector<double> v(b.size() / sizeof(double));
    std::memcpy(v.data(), b.data(), b.size());
    if (static_cast<std::int64_t>(v.size()) != p.numel())
      throw std::runtime_error("checkpoint: size mismatch for " + k);
    p.mutable_value() = std::move(v);
  }
  if (opt) opt->load(ar);
  if (rng && ar.meta.contains("rng"))
    rng->restore(ar.meta["rng"].at("state").get<std::uint64_t>(),
                 ar.meta["rng"].at("inc").get<std::uint64_t>());
  return ar.meta.at("step").get<long>();
}

}  // namespace q4d
