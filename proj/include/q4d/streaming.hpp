#pragma once

// Causal/streaming variant: per-frame ingestion with a latent cache.
// Frame-wise encoder layers run unchanged; global layers attend only to
// already-ingested frames, whose layer inputs are cached so past tokens are
// never recomputed. Cached entries are append-only and immutable.

#include "q4d/archive.hpp"
#include "q4d/model.hpp"

#include <cstring>
#include <stdexcept>
#include <vector>

namespace q4d {

class LatentCache {
 public:
  explicit LatentCache(const Model& model, int h, int w)
      : model_(&model), h_(h), w_(w) {
    if (h % model.cfg.patch_size || w % model.cfg.patch_size)
      throw std::invalid_argument("latent cache: bad image size");
    ctx_.resize(static_cast<std::size_t>(model.cfg.encoder_layers / 2));
  }

  int size() const { return static_cast<int>(stamps_.size()); }
  int height() const { return h_; }
  int width() const { return w_; }
  const Timestamp& stamp(int i) const {
    return stamps_.at(static_cast<std::size_t>(i));
  }

  void ingest_frame(const Grid<Vec3>& img, const Timestamp& t) {
    if (img.h != h_ || img.w != w_)
      throw std::invalid_argument("latent cache: frame size mismatch");
    if (!stamps_.empty()) {
      if (t.num_frames != stamps_.front().num_frames)
        throw std::invalid_argument("latent cache: inconsistent horizon");
      if (t.frame_index <= stamps_.back().frame_index)
        throw std::invalid_argument("latent cache: timestamps must increase");
    }
    NoGradGuard ng;
    const Model& m = *model_;
    int per = m.tokens_per_frame(h_, w_);
    int d = m.cfg.embed_dim;
    Tensor x = m.patchify(img, t);
    for (int l = 0; l < m.cfg.encoder_layers; ++l) {
      std::string pfx = "enc." + std::to_string(l) + ".";
      if (l % 2 == 0) {
        x = m.encoder_block(x, x, pfx, nullptr);
      } else {
        std::size_t gl = static_cast<std::size_t>(l / 2);
        std::vector<double>& past = ctx_[gl];
        std::int64_t past_rows =
            static_cast<std::int64_t>(past.size()) / d;
        Tensor ctx = x;
        if (past_rows > 0) {
          Tensor prior = Tensor::constant({past_rows, d},
                                          std::vector<double>(past));
          ctx = concat_rows({prior, x});
        }
        // Append this frame's layer input before advancing it.
        past.insert(past.end(), x.value().begin(), x.value().end());
        x = m.encoder_block(x, ctx, pfx, nullptr);
      }
    }
    int mtok = per - 2;
    latent_.patch.push_back(slice_rows(x, 0, mtok));
    latent_.cam.push_back(slice_rows(x, mtok, mtok + 1));
    latent_.time.push_back(slice_rows(x, mtok + 1, mtok + 2));
    latent_.n = static_cast<int>(latent_.patch.size());
    latent_.h = h_;
    latent_.w = w_;
    stamps_.push_back(t);
  }

  // Final per-frame tokens, shaped like an offline encoder output.
  const SceneLatent& latent() const { return latent_; }

  GeometryOut query_geometry(int i) const {
    check(i);
    NoGradGuard ng;
    return model_->geometry_head(latent_, i);
  }

  MotionOut query_motion(int source, int target) const {
    check(source);
    check(target);
    NoGradGuard ng;
    return model_->motion_head(latent_, source, target);
  }

  // Suspend/resume: tokens and per-layer contexts stored as raw float64
  // bytes so a resumed cache is bit-identical.
  TensorArchive to_archive() const {
    TensorArchive ar;
    auto put_f64 = [&ar](const std::string& name, const std::vector<double>& v) {
      std::vector<std::uint8_t> bytes(v.size() * sizeof(double));
      std::memcpy(bytes.data(), v.data(), bytes.size());
      ar.put_u8(name, {static_cast<std::int64_t>(bytes.size())}, bytes);
    };
    for (int i = 0; i < size(); ++i) {
      std::string p = "frame" + std::to_string(i) + ".";
      put_f64(p + "patch", latent_.patch[static_cast<std::size_t>(i)].value());
      put_f64(p + "cam", latent_.cam[static_cast<std::size_t>(i)].value());
      put_f64(p + "time", latent_.time[static_cast<std::size_t>(i)].value());
    }
    for (std::size_t gl = 0; gl < ctx_.size(); ++gl)
      put_f64("ctx" + std::to_string(gl), ctx_[gl]);
    json stamps = json::array();
    for (const auto& s : stamps_)
      stamps.push_back({{"frame_index", s.frame_index},
                        {"num_frames", s.num_frames}});
    ar.meta = json{{"kind", "latent_cache"},
                   {"height", h_},
                   {"width", w_},
                   {"stamps", stamps},
                   {"model", model_->cfg.to_json()},
                   {"values", "float64-le"}};
    return ar;
  }

  static LatentCache from_archive(const TensorArchive& ar, const Model& model) {
    if (ar.meta.value("kind", "") != "latent_cache")
      throw std::runtime_error("latent cache: archive kind mismatch");
    LatentCache c(model, ar.meta.at("height").get<int>(),
                  ar.meta.at("width").get<int>());
    auto get_f64 = [&ar](const std::string& name) {
      std::vector<std::uint8_t> bytes = ar.get_u8(name);
      std::vector<double> v(bytes.size() / sizeof(double));
      std::memcpy(v.data(), bytes.data(), bytes.size());
      return v;
    };
    int d = model.cfg.embed_dim;
    int i = 0;
    const json& stamps = ar.meta.at("stamps");
    for (const auto& js : stamps) {
      std::string p = "frame" + std::to_string(i) + ".";
      std::vector<double> patch = get_f64(p + "patch");
      std::int64_t rows = static_cast<std::int64_t>(patch.size()) / d;
      c.latent_.patch.push_back(
          Tensor::constant({rows, d}, std::move(patch)));
      c.latent_.cam.push_back(Tensor::constant({1, d}, get_f64(p + "cam")));
      c.latent_.time.push_back(Tensor::constant({1, d}, get_f64(p + "time")));
      c.stamps_.push_back(Timestamp(js.at("frame_index").get<int>(),
                                    js.at("num_frames").get<int>()));
      ++i;
    }
    c.latent_.n = i;
    c.latent_.h = c.h_;
    c.latent_.w = c.w_;
    for (std::size_t gl = 0; gl < c.ctx_.size(); ++gl)
      c.ctx_[gl] = get_f64("ctx" + std::to_string(gl));
    return c;
  }

 private:
  void check(int i) const {
    if (i < 0 || i >= size())
      throw std::out_of_range("latent cache: frame not ingested");
  }

  const Model* model_;
  int h_, w_;
  SceneLatent latent_;
  std::vector<Timestamp> stamps_;
  // ctx_[l/2]: row-major concatenation of every past frame's input tokens to
  // global layer l.
  std::vector<std::vector<double>> ctx_;
};

}  // namespace q4d
