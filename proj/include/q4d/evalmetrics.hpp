#pragma once

// Alignment estimators (closed-form Sim(3), RANSAC, median scale, depth
// scale / scale-shift) and the benchmark metrics: APD, EPE, ATE/RPE,
// Acc/Comp/NC and depth Rel / delta.

#include "q4d/geometry.hpp"
#include "q4d/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace q4d {

struct Correspondences {
  std::vector<Vec3> pred;
  std::vector<Vec3> gt;

  std::size_t size() const { return pred.size(); }
  void add(const Vec3& p, const Vec3& g) {
    pred.push_back(p);
    gt.push_back(g);
  }
  void validate() const {
    if (pred.size() != gt.size())
      throw std::invalid_argument("correspondences: size mismatch");
    for (const auto& p : pred)
      if (!p.allFinite()) throw std::invalid_argument("correspondences: non-finite");
    for (const auto& g : gt)
      if (!g.allFinite()) throw std::invalid_argument("correspondences: non-finite");
  }
};

// Least-squares similarity aligning pred onto gt:
// minimize sum_k | s R pred_k + t - gt_k |^2, det(R) = +1.
inline Sim3 umeyama_sim3(const Correspondences& c) {
  c.validate();
  const std::size_t n = c.size();
  if (n < 3) throw std::invalid_argument("umeyama: need at least 3 points");

  Vec3 mu_p = Vec3::Zero(), mu_g = Vec3::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    mu_p += c.pred[k];
    mu_g += c.gt[k];
  }
  mu_p /= static_cast<double>(n);
  mu_g /= static_cast<double>(n);

  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
  double var_p = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    Vec3 dp = c.pred[k] - mu_p;
    Vec3 dg = c.gt[k] - mu_g;
    sigma += dg * dp.transpose();
    var_p += dp.squaredNorm();
  }
  sigma /= static_cast<double>(n);
  var_p /= static_cast<double>(n);
  if (var_p <= 0.0)
    throw std::invalid_argument("umeyama: degenerate (coincident points)");

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d = svd.singularValues();
  // Rank must be >= 2 for the rotation to be determined (collinear sets
  // have two vanishing singular values).
  if (d(1) <= 1e-12 * std::max(1.0, d(0)))
    throw std::invalid_argument("umeyama: degenerate (collinear points)");

  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Vec3 s_diag = Vec3::Ones();
  if (u.determinant() * v.determinant() < 0) s_diag(2) = -1.0;
  Eigen::Matrix3d r = u * s_diag.asDiagonal() * v.transpose();
  double scale = d.dot(s_diag) / var_p;
  if (!(scale > 0))
    throw std::invalid_argument("umeyama: nonpositive scale (degenerate)");

  Sim3 out;
  out.scale = scale;
  out.rotation = canonical(Quat(r));
  out.translation = mu_g - scale * (r * mu_p);
  return out;
}

struct RansacResult {
  Sim3 transform;
  std::vector<std::uint8_t> inliers;
  std::size_t inlier_count = 0;
};

inline RansacResult ransac_sim3(const Correspondences& c,
                                double inlier_threshold = 0.05,
                                int iterations = 512,
                                std::uint64_t seed = 0) {
  c.validate();
  const std::size_t n = c.size();
  if (n < 3) throw std::invalid_argument("ransac_sim3: need at least 3 points");
  Pcg32 rng = make_stream(seed, 0x5A3);

  std::vector<std::uint8_t> best_mask;
  std::size_t best_count = 0;
  for (int it = 0; it < iterations; ++it) {
    std::size_t i0 = rng.next_bounded(static_cast<std::uint32_t>(n));
    std::size_t i1, i2;
    do { i1 = rng.next_bounded(static_cast<std::uint32_t>(n)); } while (i1 == i0);
    do {
      i2 = rng.next_bounded(static_cast<std::uint32_t>(n));
    } while (i2 == i0 || i2 == i1);
    Correspondences sample;
    sample.add(c.pred[i0], c.gt[i0]);
    sample.add(c.pred[i1], c.gt[i1]);
    sample.add(c.pred[i2], c.gt[i2]);
    Sim3 model;
    try {
      model = umeyama_sim3(sample);
    } catch (const std::invalid_argument&) {
      continue;  // degenerate minimal sample
    }
    std::vector<std::uint8_t> mask(n, 0);
    std::size_t count = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if ((model.apply(c.pred[k]) - c.gt[k]).norm() < inlier_threshold) {
        mask[k] = 1;
        ++count;
      }
    }
    if (count > best_count) {  // ties broken by first-found
      best_count = count;
      best_mask = std::move(mask);
    }
  }
  if (best_count < 3)
    throw std::runtime_error("ransac_sim3: no model with >= 3 inliers");

  Correspondences inl;
  for (std::size_t k = 0; k < n; ++k)
    if (best_mask[k]) inl.add(c.pred[k], c.gt[k]);
  RansacResult out;
  out.transform = umeyama_sim3(inl);
  out.inliers = std::move(best_mask);
  out.inlier_count = best_count;
  return out;
}

// Lower median (even n takes the smaller central value) for cross-language
// determinism.
inline double lower_median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

inline double median_scale(const Correspondences& c) {
  c.validate();
  if (c.size() == 0) throw std::invalid_argument("median_scale: empty");
  std::vector<double> ratios;
  ratios.reserve(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    double pn = c.pred[k].norm();
    if (pn == 0.0)
      throw std::invalid_argument("median_scale: zero predicted norm");
    ratios.push_back(c.gt[k].norm() / pn);
  }
  return lower_median(std::move(ratios));
}

// ---------------------------------------------------------------------------
// Tracking metrics. Tracks are flat lists of (pred, gt, valid) points; the
// caller applies alignment first.

inline const std::vector<double>& default_apd_thresholds() {
  static const std::vector<double> t{0.05, 0.10, 0.20, 0.40, 0.80};
  return t;
}

inline double apd(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                  const std::vector<std::uint8_t>& valid,
                  const std::vector<double>& thresholds =
                      default_apd_thresholds()) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw std::invalid_argument("apd: size mismatch");
  std::size_t n_valid = 0;
  std::vector<std::size_t> below(thresholds.size(), 0);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!valid[k]) continue;
    ++n_valid;
    double e = (pred[k] - gt[k]).norm();
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      if (e < thresholds[t]) ++below[t];
  }
  if (n_valid == 0) throw std::invalid_argument("apd: empty valid set");
  double acc = 0.0;
  for (std::size_t t = 0; t < thresholds.size(); ++t)
    acc += 100.0 * static_cast<double>(below[t]) / static_cast<double>(n_valid);
  return acc / static_cast<double>(thresholds.size());
}

inline double epe(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                  const std::vector<std::uint8_t>& valid) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw std::invalid_argument("epe: size mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!valid[k]) continue;
    sum += (pred[k] - gt[k]).norm();
    ++n;
  }
  if (n == 0) throw std::invalid_argument("epe: empty valid set");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Pose metrics

struct PoseError {
  double ate = 0.0;    // RMSE of aligned camera centers
  double rpe_t = 0.0;  // mean relative translation error, scene units
  double rpe_r = 0.0;  // mean relative rotation error, degrees
};

inline PoseError ate_rpe(const std::vector<CameraPose>& pred,
                         const std::vector<CameraPose>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("ate_rpe: length mismatch");
  if (pred.size() < 2)
    throw std::invalid_argument("ate_rpe: need at least 2 poses");
  const std::size_t n = pred.size();

  Correspondences centers;
  for (std::size_t i = 0; i < n; ++i)
    centers.add(pred[i].translation, gt[i].translation);
  Sim3 align;
  try {
    align = umeyama_sim3(centers);
  } catch (const std::invalid_argument&) {
    align = Sim3::identity();  // degenerate trajectory (e.g. static camera)
  }

  std::vector<CameraPose> ap;
  ap.reserve(n);
  for (const auto& p : pred) ap.push_back(align.apply(p));

  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    sq += (ap[i].translation - gt[i].translation).squaredNorm();
  PoseError out;
  out.ate = std::sqrt(sq / static_cast<double>(n));

  double sum_t = 0.0, sum_r = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    CameraPose rel_p = ap[i].inverse().compose(ap[i + 1]);
    CameraPose rel_g = gt[i].inverse().compose(gt[i + 1]);
    sum_t += (rel_p.translation - rel_g.translation).norm();
    sum_r += rotation_angle(rel_p.rotation, rel_g.rotation) * 180.0 / M_PI;
  }
  out.rpe_t = sum_t / static_cast<double>(n - 1);
  out.rpe_r = sum_r / static_cast<double>(n - 1);
  return out;
}

// ---------------------------------------------------------------------------
// Cloud metrics

struct CloudError {
  double acc = 0.0;
  double comp = 0.0;
  std::optional<double> nc;  // omitted when a cloud is smaller than k+1
};

namespace detail {

inline std::size_t nearest_index(const Vec3& q, const std::vector<Vec3>& cloud) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double d = (cloud[i] - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// Unoriented normals from local PCA over the k nearest neighbors.
inline std::vector<Vec3> pca_normals(const std::vector<Vec3>& cloud, int k) {
  std::vector<Vec3> normals(cloud.size(), Vec3::UnitZ());
  std::vector<std::pair<double, std::size_t>> dist(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t j = 0; j < cloud.size(); ++j)
      dist[j] = {(cloud[j] - cloud[i]).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k + 1, dist.end());
    Vec3 mean = Vec3::Zero();
    for (int m = 0; m <= k; ++m) mean += cloud[dist[m].second];
    mean /= static_cast<double>(k + 1);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int m = 0; m <= k; ++m) {
      Vec3 d = cloud[dist[m].second] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    normals[i] = es.eigenvectors().col(0);  // smallest eigenvalue
  }
  return normals;
}

}  // namespace detail

inline CloudError acc_comp_nc(const std::vector<Vec3>& pred,
                              const std::vector<Vec3>& gt,
                              int knn_for_normals = 10) {
  if (pred.empty() || gt.empty())
    throw std::invalid_argument("acc_comp_nc: empty cloud");
  CloudError out;

  std::vector<std::size_t> nn_pg(pred.size()), nn_gp(gt.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    nn_pg[i] = detail::nearest_index(pred[i], gt);
    acc += (pred[i] - gt[nn_pg[i]]).norm();
  }
  double comp = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    nn_gp[i] = detail::nearest_index(gt[i], pred);
    comp += (gt[i] - pred[nn_gp[i]]).norm();
  }
  out.acc = acc / static_cast<double>(pred.size());
  out.comp = comp / static_cast<double>(gt.size());

  int k = knn_for_normals;
  if (static_cast<int>(pred.size()) > k && static_cast<int>(gt.size()) > k) {
    auto np = detail::pca_normals(pred, k);
    auto ng = detail::pca_normals(gt, k);
    double d_pg = 0.0, d_gp = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      d_pg += std::fabs(np[i].dot(ng[nn_pg[i]]));
    for (std::size_t i = 0; i < gt.size(); ++i)
      d_gp += std::fabs(ng[i].dot(np[nn_gp[i]]));
    out.nc = 0.5 * (d_pg / static_cast<double>(pred.size()) +
                    d_gp / static_cast<double>(gt.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Depth metrics

enum class DepthAlign { Scale, ScaleShift };

struct DepthError {
  double rel = 0.0;
  double delta = 0.0;  // percentage with max(r, 1/r) < 1.25
  double scale = 1.0;
  double shift = 0.0;
};

inline DepthError depth_metrics(const std::vector<DepthMap>& pred,
                                const std::vector<DepthMap>& gt,
                                DepthAlign mode) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("depth_metrics: sequence length mismatch");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i].values.same_shape(gt[i].values))
      throw std::invalid_argument("depth_metrics: shape mismatch");
    for (std::size_t j = 0; j < gt[i].values.data.size(); ++j) {
      if (!pred[i].valid.data[j] || !gt[i].valid.data[j]) continue;
      if (!(gt[i].values.data[j] > 0)) continue;  // nonpositive gt excluded
      p.push_back(pred[i].values.data[j]);
      g.push_back(gt[i].values.data[j]);
    }
  }
  if (p.empty()) throw std::invalid_argument("depth_metrics: no valid overlap");

  DepthError out;
  if (mode == DepthAlign::Scale) {
    std::vector<double> ratios(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) ratios[j] = g[j] / p[j];
    out.scale = lower_median(std::move(ratios));
  } else {
    // Least squares (s, b) minimizing sum (s p + b - g)^2.
    double n = static_cast<double>(p.size());
    double sp = 0, sg = 0, spp = 0, spg = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      sp += p[j];
      sg += g[j];
      spp += p[j] * p[j];
      spg += p[j] * g[j];
    }
    double det = n * spp - sp * sp;
    if (std::fabs(det) < 1e-300)
      throw std::invalid_argument("depth_metrics: degenerate fit");
    out.scale = (n * spg - sp * sg) / det;
    out.shift = (sg - out.scale * sp) / n;
  }

  double rel = 0.0;
  std::size_t hit = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    double d = out.scale * p[j] + out.shift;
    rel += std::fabs(d - g[j]) / g[j];
    double ratio = d > 0 ? std::max(d / g[j], g[j] / d)
                         : std::numeric_limits<double>::infinity();
    if (ratio < 1.25) ++hit;
  }
  out.rel = rel / static_cast<double>(p.size());
  out.delta = 100.0 * static_cast<double>(hit) / static_cast<double>(p.size());
  return out;
}

// ---------------------------------------------------------------------------
// Structured report

struct MetricReport {
  std::optional<double> apd, epe;
  std::optional<double> ate, rpe_t, rpe_r;
  std::optional<double> acc, comp, nc;
  std::optional<double> depth_rel, depth_delta;
  std::string alignment;  // which alignment produced the tracking numbers
  std::vector<double> apd_thresholds = default_apd_thresholds();
};

}  // namespace q4d
