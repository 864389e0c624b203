#pragma once

// The toy-scale network: patchifier with camera/time tokens, an encoder
// alternating frame-wise and global self-attention, a per-patch geometry
// head (depth + rays + camera) and the conditional motion head (AdaLN
// time conditioning + cross-attention to the target frame's tokens).

#include "q4d/geometry.hpp"
#include "q4d/representation.hpp"
#include "q4d/rng.hpp"
#include "q4d/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4d {

enum class OutputParam : int { Displacement = 0, PointsWorld = 1, PointsLocal = 2 };

inline std::string output_param_name(OutputParam p) {
  switch (p) {
    case OutputParam::Displacement: return "displacement";
    case OutputParam::PointsWorld: return "points_world";
    case OutputParam::PointsLocal: return "points_local";
  }
  return "?";
}

inline OutputParam output_param_from_name(const std::string& s) {
  if (s == "displacement") return OutputParam::Displacement;
  if (s == "points_world") return OutputParam::PointsWorld;
  if (s == "points_local") return OutputParam::PointsLocal;
  throw std::invalid_argument("unknown output parameterization: " + s);
}

struct ModelConfig {
  int patch_size = 8;
  int embed_dim = 128;
  int encoder_layers = 6;  // even; alternating frame-wise / global
  int heads = 4;
  int motion_layers = 4;  // K
  double mlp_ratio = 4.0;
  int head_hidden = 256;
  double norm_eps = 1e-6;
  // Motion-head ablation switches and the output parameterization.
  bool use_self_attn = true;
  bool use_cross_attn = true;
  bool use_adaln = true;
  OutputParam output_param = OutputParam::Displacement;

  void validate() const {
    if (embed_dim % heads)
      throw std::invalid_argument("model config: embed_dim % heads != 0");
    if (encoder_layers % 2)
      throw std::invalid_argument("model config: encoder_layers must be even");
    if (patch_size < 2 || patch_size % 2)
      throw std::invalid_argument("model config: patch_size must be even >= 2");
    if (motion_layers < 1)
      throw std::invalid_argument("model config: motion_layers must be >= 1");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"patch_size", patch_size},
                          {"embed_dim", embed_dim},
                          {"encoder_layers", encoder_layers},
                          {"heads", heads},
                          {"motion_layers", motion_layers},
                          {"mlp_ratio", mlp_ratio},
                          {"head_hidden", head_hidden},
                          {"norm_eps", norm_eps},
                          {"use_self_attn", use_self_attn},
                          {"use_cross_attn", use_cross_attn},
                          {"use_adaln", use_adaln},
                          {"output_param", output_param_name(output_param)}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.heads = j.value("heads", c.heads);
    c.motion_layers = j.value("motion_layers", c.motion_layers);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.use_self_attn = j.value("use_self_attn", c.use_self_attn);
    c.use_cross_attn = j.value("use_cross_attn", c.use_cross_attn);
    c.use_adaln = j.value("use_adaln", c.use_adaln);
    c.output_param = output_param_from_name(
        j.value("output_param", output_param_name(c.output_param)));
    c.validate();
    return c;
  }

  int mlp_hidden() const {
    return static_cast<int>(std::lround(mlp_ratio * embed_dim));
  }
};

// Per-frame token sets produced by the encoder.
struct SceneLatent {
  int n = 0, h = 0, w = 0;
  std::vector<Tensor> patch;  // N x [M, D]
  std::vector<Tensor> cam;    // N x [1, D]
  std::vector<Tensor> time;   // N x [1, D]

  int patches_y(int patch_size) const { return h / patch_size; }
  int patches_x(int patch_size) const { return w / patch_size; }
};

struct GeometryOut {
  Tensor depth;      // [H*W], positive (exp of raw head output)
  Tensor log_sigma;  // [H*W]
  Tensor rays;       // [H2*W2, 6], (origin xyz, direction xyz)
  Tensor fov;        // [1]
  Tensor quat;       // [1,4], unit, scalar-first
  Tensor trans;      // [1,3]
  int h = 0, w = 0;
};

struct MotionOut {
  Tensor out;        // [H*W, 3]; meaning depends on output_param
  Tensor log_sigma;  // [H*W]
  OutputParam param = OutputParam::Displacement;
  int h = 0, w = 0;
  int source = 0, target = 0;
};

struct EncodeOptions {
  bool causal = false;
  bool skip_global = false;  // test hook: global layers become identity
};

// ---------------------------------------------------------------------------
// Small graph-builder helpers

namespace nn {

inline Tensor slice_cols(const Tensor& x, std::int64_t b, std::int64_t e) {
  std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (b < 0 || e > cols || b >= e)
    throw std::invalid_argument("slice_cols: bad range");
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(rows * (e - b)));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = b; c < e; ++c) idx.push_back(r * cols + c);
  return gather(x, std::move(idx), {rows, e - b});
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  std::vector<Tensor> t;
  t.reserve(parts.size());
  for (const auto& p : parts) t.push_back(transpose2d(p));
  return transpose2d(concat_rows(t));
}

inline Tensor repeat_row(const Tensor& x, std::int64_t n) {
  std::int64_t c = x.numel();
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n * c));
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t j = 0; j < c; ++j) idx.push_back(j);
  return gather(x, std::move(idx), {n, c});
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

// L2-normalize a [1, n] row.
inline Tensor normalize_row(const Tensor& x) {
  Tensor sq = sum(mul(x, x));
  Tensor inv = unary(
      sq, [](double v) { return 1.0 / std::sqrt(std::max(v, 1e-30)); },
      [](double v) {
        double c = std::max(v, 1e-30);
        return -0.5 / (c * std::sqrt(c));
      });
  std::vector<std::int64_t> idx(static_cast<std::size_t>(x.numel()), 0);
  Tensor bcast = gather(inv, std::move(idx), x.shape());
  return mul(x, bcast);
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Fixed sinusoidal encodings

// 2D positional encoding over the patch grid, row-major (y, x), D channels:
// first half encodes y, second half encodes x.
inline std::vector<double> positional_encoding_2d(int gy, int gx, int dim) {
  std::vector<double> out(static_cast<std::size_t>(gy) * gx * dim);
  int half = dim / 2;
  auto fill = [&](int base, int count, double coord, double* dst) {
    for (int k = 0; k < count / 2; ++k) {
      double freq =
          std::pow(10000.0, -2.0 * k / static_cast<double>(count));
      dst[base + 2 * k] = std::sin(coord * freq);
      dst[base + 2 * k + 1] = std::cos(coord * freq);
    }
  };
  for (int y = 0; y < gy; ++y)
    for (int x = 0; x < gx; ++x) {
      double* dst = out.data() + (static_cast<std::size_t>(y) * gx + x) * dim;
      fill(0, half, static_cast<double>(y), dst);
      fill(half, dim - half, static_cast<double>(x), dst);
    }
  return out;
}

// Sinusoidal encoding of normalized time in [0, 1]; frequencies span
// [pi, 1000 pi] geometrically.
inline std::vector<double> time_encoding(double t, int dim) {
  std::vector<double> out(static_cast<std::size_t>(dim));
  int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    double freq = M_PI * std::pow(1000.0, half > 1
                                              ? static_cast<double>(k) /
                                                    (half - 1)
                                              : 0.0);
    out[static_cast<std::size_t>(2 * k)] = std::sin(t * freq);
    out[static_cast<std::size_t>(2 * k + 1)] = std::cos(t * freq);
  }
  return out;
}

// ---------------------------------------------------------------------------
// The model

class Model {
 public:
  ModelConfig cfg;
  std::map<std::string, Tensor> params;  // ordered, stable iteration
  mutable long encode_calls = 0;

  explicit Model(ModelConfig config, std::uint64_t seed = 0) : cfg(config) {
    cfg.validate();
    Pcg32 rng = make_stream(seed, 0x90DE1);
    init_params(rng);
  }

  // -------------------------------------------------------------------------
  // Tokenization

  Tensor patchify(const Grid<Vec3>& img, const Timestamp& t) const {
    int p = cfg.patch_size, d = cfg.embed_dim;
    if (img.h % p || img.w % p)
      throw std::invalid_argument("patchify: image not divisible by patch size");
    int gy = img.h / p, gx = img.w / p, m = gy * gx;
    std::vector<double> patches(static_cast<std::size_t>(m) * p * p * 3);
    for (int y = 0; y < gy; ++y)
      for (int x = 0; x < gx; ++x) {
        double* dst =
            patches.data() + (static_cast<std::size_t>(y) * gx + x) * p * p * 3;
        for (int iy = 0; iy < p; ++iy)
          for (int ix = 0; ix < p; ++ix) {
            const Vec3& c = img.at(y * p + iy, x * p + ix);
            std::size_t o = (static_cast<std::size_t>(iy) * p + ix) * 3;
            dst[o] = c.x();
            dst[o + 1] = c.y();
            dst[o + 2] = c.z();
          }
      }
    Tensor patch_mat = Tensor::constant({m, p * p * 3}, std::move(patches));
    Tensor tokens = nn::linear(patch_mat, at("patch_embed.w"), at("patch_embed.b"));
    Tensor pos = Tensor::constant({m, d}, positional_encoding_2d(gy, gx, d));
    tokens = add(tokens, pos);
    Tensor time_tok =
        add(at("time_token_base"),
            Tensor::constant({1, d}, time_encoding(t.normalized_time(), d)));
    return concat_rows({tokens, at("camera_token"), time_tok});
  }

  // -------------------------------------------------------------------------
  // Encoder

  SceneLatent encode(const std::vector<Tensor>& frame_tokens, int h, int w,
                     const EncodeOptions& opts = {}) const {
    int n = static_cast<int>(frame_tokens.size());
    if (n < 2 && !opts.causal)
      throw std::invalid_argument("encode: need at least 2 frames");
    if (n < 1) throw std::invalid_argument("encode: empty input");
    ++encode_calls;
    int per = tokens_per_frame(h, w);
    for (const auto& t : frame_tokens)
      if (t.dim(0) != per || t.dim(1) != cfg.embed_dim)
        throw std::invalid_argument("encode: bad frame token shape");

    std::shared_ptr<std::vector<double>> mask;
    if (opts.causal) mask = causal_mask(n, per);

    std::vector<Tensor> frames = frame_tokens;
    for (int l = 0; l < cfg.encoder_layers; ++l) {
      std::string pfx = "enc." + std::to_string(l) + ".";
      if (l % 2 == 0) {
        for (auto& f : frames) f = encoder_block(f, f, pfx, nullptr);
      } else {
        if (opts.skip_global) continue;
        Tensor x = concat_rows(frames);
        x = encoder_block(x, x, pfx, mask.get());
        for (int i = 0; i < n; ++i)
          frames[static_cast<std::size_t>(i)] =
              slice_rows(x, static_cast<std::int64_t>(i) * per,
                         static_cast<std::int64_t>(i + 1) * per);
      }
    }

    SceneLatent lat;
    lat.n = n;
    lat.h = h;
    lat.w = w;
    int m = per - 2;
    for (int i = 0; i < n; ++i) {
      lat.patch.push_back(slice_rows(frames[static_cast<std::size_t>(i)], 0, m));
      lat.cam.push_back(slice_rows(frames[static_cast<std::size_t>(i)], m, m + 1));
      lat.time.push_back(
          slice_rows(frames[static_cast<std::size_t>(i)], m + 1, m + 2));
    }
    return lat;
  }

  SceneLatent encode_video(const std::vector<Grid<Vec3>>& images,
                           const EncodeOptions& opts = {}) const {
    if (images.empty()) throw std::invalid_argument("encode: empty video");
    int n = static_cast<int>(images.size());
    std::vector<Tensor> toks;
    for (int i = 0; i < n; ++i)
      toks.push_back(patchify(images[static_cast<std::size_t>(i)],
                              Timestamp(i, std::max(n, 2))));
    return encode(toks, images[0].h, images[0].w, opts);
  }

  // A single encoder block with queries x and context ctx (pre-norm).
  Tensor encoder_block(const Tensor& x, const Tensor& ctx,
                       const std::string& pfx,
                       const std::vector<double>* mask) const {
    Tensor h = layer_norm(x, at(pfx + "ln1.g"), at(pfx + "ln1.b"), cfg.norm_eps);
    Tensor hc = (x.node() == ctx.node())
                    ? h
                    : layer_norm(ctx, at(pfx + "ln1.g"), at(pfx + "ln1.b"),
                                 cfg.norm_eps);
    Tensor a = attention(h, hc, pfx + "attn.", mask);
    Tensor y = add(x, a);
    Tensor h2 = layer_norm(y, at(pfx + "ln2.g"), at(pfx + "ln2.b"), cfg.norm_eps);
    return add(y, mlp(h2, pfx + "mlp."));
  }

  Tensor attention(const Tensor& x, const Tensor& ctx, const std::string& pfx,
                   const std::vector<double>* mask) const {
    int d = cfg.embed_dim, nh = cfg.heads, dh = d / nh;
    Tensor q = nn::linear(x, at(pfx + "wq"), at(pfx + "bq"));
    Tensor k = nn::linear(ctx, at(pfx + "wk"), at(pfx + "bk"));
    Tensor v = nn::linear(ctx, at(pfx + "wv"), at(pfx + "bv"));
    std::vector<Tensor> heads_out;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hd = 0; hd < nh; ++hd) {
      Tensor qh = nn::slice_cols(q, static_cast<std::int64_t>(hd) * dh,
                                 static_cast<std::int64_t>(hd + 1) * dh);
      Tensor kh = nn::slice_cols(k, static_cast<std::int64_t>(hd) * dh,
                                 static_cast<std::int64_t>(hd + 1) * dh);
      Tensor vh = nn::slice_cols(v, static_cast<std::int64_t>(hd) * dh,
                                 static_cast<std::int64_t>(hd + 1) * dh);
      Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
      Tensor attn = softmax_rows(scores, mask);
      heads_out.push_back(matmul(attn, vh));
    }
    Tensor merged = nh == 1 ? heads_out[0] : nn::concat_cols(heads_out);
    return nn::linear(merged, at(pfx + "wo"), at(pfx + "bo"));
  }

  Tensor mlp(const Tensor& x, const std::string& pfx) const {
    Tensor h = gelu_t(nn::linear(x, at(pfx + "w1"), at(pfx + "b1")));
    return nn::linear(h, at(pfx + "w2"), at(pfx + "b2"));
  }

  // -------------------------------------------------------------------------
  // Geometry head

  GeometryOut geometry_head(const SceneLatent& lat, int frame) const {
    check_frame(lat, frame);
    int p = cfg.patch_size;
    int m = lat.patch[static_cast<std::size_t>(frame)].dim(0);
    const Tensor& z = lat.patch[static_cast<std::size_t>(frame)];
    const Tensor& c = lat.cam[static_cast<std::size_t>(frame)];
    Tensor zc = nn::concat_cols({z, nn::repeat_row(c, m)});

    Tensor dh = gelu_t(nn::linear(zc, at("geo.depth.w1"), at("geo.depth.b1")));
    Tensor dout = nn::linear(dh, at("geo.depth.w2"), at("geo.depth.b2"));
    // dout: [M, p*p*2] -> per-pixel (raw depth, log sigma)
    int gy = lat.patches_y(p), gx = lat.patches_x(p);
    GeometryOut out;
    out.h = lat.h;
    out.w = lat.w;
    Tensor raw = gather(dout, patch_grid_indices(gy, gx, p, 2, 0),
                        {static_cast<std::int64_t>(lat.h) * lat.w});
    out.depth = exp_t(raw);
    out.log_sigma = gather(dout, patch_grid_indices(gy, gx, p, 2, 1),
                           {static_cast<std::int64_t>(lat.h) * lat.w});

    Tensor rh = gelu_t(nn::linear(zc, at("geo.ray.w1"), at("geo.ray.b1")));
    Tensor rout = nn::linear(rh, at("geo.ray.w2"), at("geo.ray.b2"));
    // rout: [M, (p/2)^2 * 6] -> half-res 6-channel ray map
    out.rays = gather(rout, halfres_grid_indices(gy, gx, p),
                      {static_cast<std::int64_t>(lat.h / 2) * (lat.w / 2), 6});

    Tensor ch = gelu_t(nn::linear(c, at("geo.cam.w1"), at("geo.cam.b1")));
    Tensor cout = nn::linear(ch, at("geo.cam.w2"), at("geo.cam.b2"));
    out.fov = reshape(scale(sigmoid_t(nn::slice_cols(cout, 0, 1)), M_PI), {1});
    out.quat = nn::normalize_row(nn::slice_cols(cout, 1, 5));
    out.trans = nn::slice_cols(cout, 5, 8);
    return out;
  }

  // -------------------------------------------------------------------------
  // Motion head

  MotionOut motion_head(const SceneLatent& lat, int query, int target) const {
    check_frame(lat, query);
    check_frame(lat, target);
    int p = cfg.patch_size;
    Tensor dec = lat.patch[static_cast<std::size_t>(query)];
    const Tensor& cond = lat.time[static_cast<std::size_t>(target)];
    const Tensor& ztau = lat.patch[static_cast<std::size_t>(target)];

    for (int k = 0; k < cfg.motion_layers; ++k) {
      std::string pfx = "mot." + std::to_string(k) + ".";
      Tensor s1, b1, g1, s2, b2, g2;
      if (cfg.use_adaln) {
        Tensor m = gelu_t(nn::linear(cond, at(pfx + "ada.w1"), at(pfx + "ada.b1")));
        Tensor mod = nn::linear(m, at(pfx + "ada.w2"), at(pfx + "ada.b2"));
        int d = cfg.embed_dim;
        s1 = nn::slice_cols(mod, 0, d);
        b1 = nn::slice_cols(mod, d, 2 * d);
        g1 = nn::slice_cols(mod, 2 * d, 3 * d);
        s2 = nn::slice_cols(mod, 3 * d, 4 * d);
        b2 = nn::slice_cols(mod, 4 * d, 5 * d);
        g2 = nn::slice_cols(mod, 5 * d, 6 * d);
      }
      if (cfg.use_self_attn) {
        Tensor h = layer_norm(dec, at(pfx + "ln_sa.g"), at(pfx + "ln_sa.b"),
                              cfg.norm_eps);
        if (cfg.use_adaln) {
          h = mul_rowvec(h, reshape(add_scalar(s1, 1.0), {cfg.embed_dim}));
          h = add_rowvec(h, reshape(b1, {cfg.embed_dim}));
        }
        Tensor a = attention(h, h, pfx + "sa.", nullptr);
        if (cfg.use_adaln)
          a = mul_rowvec(a, reshape(g1, {cfg.embed_dim}));
        dec = add(dec, a);
      }
      if (cfg.use_cross_attn) {
        Tensor h = layer_norm(dec, at(pfx + "ln_caq.g"), at(pfx + "ln_caq.b"),
                              cfg.norm_eps);
        Tensor kv = layer_norm(ztau, at(pfx + "ln_cakv.g"),
                               at(pfx + "ln_cakv.b"), cfg.norm_eps);
        dec = add(dec, attention(h, kv, pfx + "ca.", nullptr));
      }
      {
        Tensor h = layer_norm(dec, at(pfx + "ln_mlp.g"), at(pfx + "ln_mlp.b"),
                              cfg.norm_eps);
        if (cfg.use_adaln) {
          h = mul_rowvec(h, reshape(add_scalar(s2, 1.0), {cfg.embed_dim}));
          h = add_rowvec(h, reshape(b2, {cfg.embed_dim}));
        }
        Tensor m = mlp(h, pfx + "mlp.");
        if (cfg.use_adaln)
          m = mul_rowvec(m, reshape(g2, {cfg.embed_dim}));
        dec = add(dec, m);
      }
    }

    Tensor head = nn::linear(dec, at("mot.head.w"), at("mot.head.b"));
    // head: [M, p*p*4] -> per-pixel (dx, dy, dz, log sigma)
    int gy = lat.patches_y(p), gx = lat.patches_x(p);
    MotionOut out;
    out.param = cfg.output_param;
    out.h = lat.h;
    out.w = lat.w;
    out.source = query;
    out.target = target;
    std::vector<Tensor> ch;
    for (int c = 0; c < 3; ++c)
      ch.push_back(gather(head, patch_grid_indices(gy, gx, p, 4, c),
                          {static_cast<std::int64_t>(lat.h) * lat.w, 1}));
    out.out = nn::concat_cols(ch);
    out.log_sigma = gather(head, patch_grid_indices(gy, gx, p, 4, 3),
                           {static_cast<std::int64_t>(lat.h) * lat.w});
    return out;
  }

  // -------------------------------------------------------------------------
  // Whole-pipeline forward: encode once, geometry for every frame, motion
  // from the query frame to each requested target.

  struct Forward4D {
    SceneLatent latent;
    std::vector<GeometryOut> geometry;
    std::map<int, MotionOut> motion;  // keyed by target frame
    int query = 0;
  };

  Forward4D forward_4d(const std::vector<Grid<Vec3>>& images, int query,
                       const std::vector<int>& targets,
                       const EncodeOptions& opts = {}) const {
    Forward4D out;
    out.latent = encode_video(images, opts);
    out.query = query;
    check_frame(out.latent, query);
    for (int i = 0; i < out.latent.n; ++i)
      out.geometry.push_back(geometry_head(out.latent, i));
    for (int t : targets) {
      check_frame(out.latent, t);
      if (!out.motion.count(t))
        out.motion.emplace(t, motion_head(out.latent, query, t));
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Value-level extraction

  struct GeometryPrediction {
    DepthMap depth;
    Grid<double> depth_log_sigma;
    RayMap rays;
    double vertical_fov = 1.0;
    CameraPose pose;
  };

  struct MotionPrediction {
    DisplacementField deltas;
    Grid<double> motion_log_sigma;
  };

  static GeometryPrediction extract_geometry(const GeometryOut& g) {
    GeometryPrediction out;
    int h = g.h, w = g.w;
    out.depth = DepthMap(h, w);
    out.depth_log_sigma = Grid<double>(h, w, 0.0);
    for (int i = 0; i < h * w; ++i) {
      out.depth.values.data[static_cast<std::size_t>(i)] =
          g.depth.value()[static_cast<std::size_t>(i)];
      out.depth.valid.data[static_cast<std::size_t>(i)] = 1;
      out.depth_log_sigma.data[static_cast<std::size_t>(i)] =
          g.log_sigma.value()[static_cast<std::size_t>(i)];
    }
    int h2 = h / 2, w2 = w / 2;
    out.rays = RayMap(h2, w2);
    for (int i = 0; i < h2 * w2; ++i) {
      const double* r = g.rays.value().data() + static_cast<std::size_t>(i) * 6;
      out.rays.origins.data[static_cast<std::size_t>(i)] = Vec3(r[0], r[1], r[2]);
      out.rays.directions.data[static_cast<std::size_t>(i)] =
          Vec3(r[3], r[4], r[5]);
    }
    out.vertical_fov = g.fov.value()[0];
    const auto& q = g.quat.value();
    out.pose.rotation = canonical(Quat(q[0], q[1], q[2], q[3]));
    const auto& t = g.trans.value();
    out.pose.translation = Vec3(t[0], t[1], t[2]);
    return out;
  }

  // Converts the head output into a world-space displacement field relative
  // to the given base pointmap (predicted geometry of the query frame).
  static MotionPrediction extract_motion(const MotionOut& m,
                                         const PointMap& base,
                                         const CameraPose& query_pose,
                                         int num_frames) {
    MotionPrediction out;
    int h = m.h, w = m.w;
    out.deltas = DisplacementField(h, w, Timestamp(m.source, num_frames),
                                   Timestamp(m.target, num_frames));
    out.motion_log_sigma = Grid<double>(h, w, 0.0);
    for (int i = 0; i < h * w; ++i) {
      const double* d = m.out.value().data() + static_cast<std::size_t>(i) * 3;
      Vec3 raw(d[0], d[1], d[2]);
      Vec3 delta;
      switch (m.param) {
        case OutputParam::Displacement: delta = raw; break;
        case OutputParam::PointsWorld:
          delta = raw - base.points.data[static_cast<std::size_t>(i)];
          break;
        case OutputParam::PointsLocal:
          delta = query_pose.to_world(raw) -
                  base.points.data[static_cast<std::size_t>(i)];
          break;
      }
      out.deltas.deltas.data[static_cast<std::size_t>(i)] = delta;
      out.deltas.valid.data[static_cast<std::size_t>(i)] =
          base.valid.data[static_cast<std::size_t>(i)];
      out.motion_log_sigma.data[static_cast<std::size_t>(i)] =
          m.log_sigma.value()[static_cast<std::size_t>(i)];
    }
    return out;
  }

  // Assembled factorized frame: base from predicted depth + predicted rays,
  // displacements for every requested target.
  FactorizedFrame4D assemble(const Forward4D& f) const {
    const GeometryOut& g = f.geometry[static_cast<std::size_t>(f.query)];
    GeometryPrediction gp = extract_geometry(g);
    FactorizedFrame4D out;
    out.source = Timestamp(f.query, f.latent.n);
    out.base = pointmap_from_rays(gp.depth, gp.rays);
    for (const auto& [t, m] : f.motion) {
      MotionPrediction mp = extract_motion(m, out.base, gp.pose, f.latent.n);
      out.displacements.emplace(t, std::move(mp.deltas));
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Parameter plumbing

  const Tensor& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end())
      throw std::logic_error("model: missing parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [k, v] : params) v.zero_grad();
  }

  int tokens_per_frame(int h, int w) const {
    return (h / cfg.patch_size) * (w / cfg.patch_size) + 2;
  }

  static std::shared_ptr<std::vector<double>> causal_mask(int n, int per) {
    std::int64_t t = static_cast<std::int64_t>(n) * per;
    auto mask = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(t * t), 0.0);
    for (std::int64_t i = 0; i < t; ++i)
      for (std::int64_t j = 0; j < t; ++j)
        if (j / per > i / per)
          (*mask)[static_cast<std::size_t>(i * t + j)] = -1e30;
    return mask;
  }

 private:
  static void check_frame(const SceneLatent& lat, int i) {
    if (i < 0 || i >= lat.n)
      throw std::out_of_range("model: frame index out of range");
  }

  // Flat indices mapping the per-pixel channel c of a [M, p*p*ch] head
  // output onto the row-major full-resolution image grid.
  static std::shared_ptr<std::vector<std::int64_t>> patch_grid_indices(
      int gy, int gx, int p, int ch, int c) {
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(gy) * gx * p * p);
    std::int64_t row_len = static_cast<std::int64_t>(p) * p * ch;
    for (int v = 0; v < gy * p; ++v)
      for (int u = 0; u < gx * p; ++u) {
        std::int64_t m = static_cast<std::int64_t>(v / p) * gx + (u / p);
        std::int64_t o = (static_cast<std::int64_t>(v % p) * p + (u % p)) * ch + c;
        idx->push_back(m * row_len + o);
      }
    return idx;
  }

  // Indices mapping a [M, (p/2)^2*6] head output onto the half-res
  // [H2*W2, 6] ray layout.
  static std::shared_ptr<std::vector<std::int64_t>> halfres_grid_indices(
      int gy, int gx, int p) {
    int hp = p / 2;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(gy) * gx * hp * hp * 6);
    std::int64_t row_len = static_cast<std::int64_t>(hp) * hp * 6;
    for (int v = 0; v < gy * hp; ++v)
      for (int u = 0; u < gx * hp; ++u)
        for (int c = 0; c < 6; ++c) {
          std::int64_t m = static_cast<std::int64_t>(v / hp) * gx + (u / hp);
          std::int64_t o =
              (static_cast<std::int64_t>(v % hp) * hp + (u % hp)) * 6 + c;
          idx->push_back(m * row_len + o);
        }
    return idx;
  }

  void init_params(Pcg32& rng) {
    int d = cfg.embed_dim, p = cfg.patch_size, hh = cfg.head_hidden;
    int mh = cfg.mlp_hidden();
    auto dense = [&](const std::string& name, int in, int out, double std_dev) {
      std::vector<double> w(static_cast<std::size_t>(in) * out);
      for (auto& x : w) x = rng.normal() * std_dev;
      params.emplace(name + ".w" , Tensor::param({in, out}, std::move(w)));
      params.emplace(name + ".b",
                     Tensor::param({out}, std::vector<double>(
                                              static_cast<std::size_t>(out), 0.0)));
    };
    auto matrix = [&](const std::string& name, int in, int out,
                      double std_dev) {
      std::vector<double> w(static_cast<std::size_t>(in) * out);
      for (auto& x : w) x = rng.normal() * std_dev;
      params.emplace(name, Tensor::param({in, out}, std::move(w)));
    };
    auto bias = [&](const std::string& name, int n, double fill = 0.0) {
      params.emplace(name, Tensor::param({n}, std::vector<double>(
                                                  static_cast<std::size_t>(n),
                                                  fill)));
    };
    auto row = [&](const std::string& name, int n, double std_dev) {
      std::vector<double> w(static_cast<std::size_t>(n));
      for (auto& x : w) x = rng.normal() * std_dev;
      params.emplace(name, Tensor::param({1, n}, std::move(w)));
    };
    auto ln = [&](const std::string& pfx) {
      bias(pfx + "g", d, 1.0);
      bias(pfx + "b", d, 0.0);
    };
    auto attn_p = [&](const std::string& pfx) {
      double s = 0.02;
      matrix(pfx + "wq", d, d, s);
      bias(pfx + "bq", d);
      matrix(pfx + "wk", d, d, s);
      bias(pfx + "bk", d);
      matrix(pfx + "wv", d, d, s);
      bias(pfx + "bv", d);
      matrix(pfx + "wo", d, d, s);
      bias(pfx + "bo", d);
    };
    auto mlp_p = [&](const std::string& pfx) {
      matrix(pfx + "w1", d, mh, 0.02);
      bias(pfx + "b1", mh);
      matrix(pfx + "w2", mh, d, 0.02);
      bias(pfx + "b2", d);
    };

    dense("patch_embed", p * p * 3, d, 0.02);
    row("camera_token", d, 0.02);
    row("time_token_base", d, 0.02);

    for (int l = 0; l < cfg.encoder_layers; ++l) {
      std::string pfx = "enc." + std::to_string(l) + ".";
      ln(pfx + "ln1.");
      attn_p(pfx + "attn.");
      ln(pfx + "ln2.");
      mlp_p(pfx + "mlp.");
    }

    matrix("geo.depth.w1", 2 * d, hh, 0.02);
    bias("geo.depth.b1", hh);
    matrix("geo.depth.w2", hh, p * p * 2, 0.02);
    bias("geo.depth.b2", p * p * 2);
    matrix("geo.ray.w1", 2 * d, hh, 0.02);
    bias("geo.ray.b1", hh);
    matrix("geo.ray.w2", hh, (p / 2) * (p / 2) * 6, 0.02);
    bias("geo.ray.b2", (p / 2) * (p / 2) * 6);
    matrix("geo.cam.w1", d, hh, 0.02);
    bias("geo.cam.b1", hh);
    matrix("geo.cam.w2", hh, 8, 0.02);
    {
      // Bias the camera head toward identity rotation (w component 1).
      std::vector<double> b(8, 0.0);
      b[1] = 1.0;
      params.emplace("geo.cam.b2", Tensor::param({8}, std::move(b)));
    }

    for (int k = 0; k < cfg.motion_layers; ++k) {
      std::string pfx = "mot." + std::to_string(k) + ".";
      matrix(pfx + "ada.w1", d, hh, 0.02);
      bias(pfx + "ada.b1", hh);
      // Zero-initialized modulation: scale/shift/gate all start at zero so
      // the untrained motion head is near-identity.
      matrix(pfx + "ada.w2", hh, 6 * d, 0.0);
      bias(pfx + "ada.b2", 6 * d);
      ln(pfx + "ln_sa.");
      attn_p(pfx + "sa.");
      ln(pfx + "ln_caq.");
      ln(pfx + "ln_cakv.");
      attn_p(pfx + "ca.");
      ln(pfx + "ln_mlp.");
      mlp_p(pfx + "mlp.");
    }
    matrix("mot.head.w", d, p * p * 4, 0.02);
    bias("mot.head.b", p * p * 4);
  }
};

}  // namespace q4d
