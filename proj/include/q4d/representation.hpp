#pragma once

// Factorized 4D data model: base geometry of a source frame plus
// time-indexed displacement fields, and trajectory extraction over it.

#include "q4d/geometry.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace q4d {

struct Timestamp {
  int frame_index = 0;
  int num_frames = 1;

  Timestamp() = default;
  Timestamp(int frame_index_, int num_frames_)
      : frame_index(frame_index_), num_frames(num_frames_) {
    if (num_frames < 1 || frame_index < 0 || frame_index >= num_frames)
      throw std::invalid_argument("timestamp: frame index out of range");
  }

  double normalized_time() const {
    return num_frames > 1
               ? static_cast<double>(frame_index) / (num_frames - 1)
               : 0.0;
  }

  bool operator==(const Timestamp& o) const {
    return frame_index == o.frame_index;
  }
  bool operator<(const Timestamp& o) const {
    return frame_index < o.frame_index;
  }
};

struct DisplacementField {
  Grid<Vec3> deltas;
  Mask valid;
  Timestamp source;
  Timestamp target;

  DisplacementField() = default;
  DisplacementField(int h, int w, Timestamp src, Timestamp tgt)
      : deltas(h, w, Vec3::Zero()), valid(h, w, 0), source(src), target(tgt) {}
};

struct FactorizedFrame4D {
  Timestamp source;
  PointMap base;
  std::map<int, DisplacementField> displacements;  // keyed by target frame

  bool has_target(const Timestamp& t) const {
    return displacements.count(t.frame_index) > 0;
  }
};

struct Trajectory {
  std::vector<std::pair<Timestamp, Vec3>> positions;  // strictly increasing t
  int u = 0, v = 0;                                   // source pixel
  std::vector<std::uint8_t> visibility;               // optional, per position
};

// P_i^{t_i -> tau} = base + delta. Mask is the intersection of base validity
// and the displacement's validity; compose at tau == source with no stored
// self-displacement returns the base unchanged.
inline PointMap compose(const FactorizedFrame4D& frame, const Timestamp& target) {
  if (target == frame.source && !frame.has_target(target)) return frame.base;
  auto it = frame.displacements.find(target.frame_index);
  if (it == frame.displacements.end())
    throw std::invalid_argument("compose: no displacement for target frame " +
                                std::to_string(target.frame_index));
  const DisplacementField& d = it->second;
  if (!d.deltas.same_shape(frame.base.points))
    throw std::invalid_argument("compose: displacement shape mismatch");
  PointMap out(frame.base.points.h, frame.base.points.w);
  for (std::size_t i = 0; i < out.points.data.size(); ++i) {
    if (frame.base.valid.data[i] && d.valid.data[i]) {
      out.points.data[i] = frame.base.points.data[i] + d.deltas.data[i];
      out.valid.data[i] = 1;
    }
  }
  return out;
}

inline Trajectory extract_trajectory(const FactorizedFrame4D& frame, int u,
                                     int v,
                                     const std::vector<Timestamp>& targets) {
  const PointMap& base = frame.base;
  if (v < 0 || v >= base.points.h || u < 0 || u >= base.points.w ||
      !base.valid.at(v, u))
    throw std::invalid_argument("extract_trajectory: pixel invalid in base");
  std::vector<Timestamp> sorted = targets;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i - 1] == sorted[i])
      throw std::invalid_argument("extract_trajectory: duplicate targets");
  Trajectory traj;
  traj.u = u;
  traj.v = v;
  for (const Timestamp& t : sorted) {
    Vec3 p;
    if (t == frame.source && !frame.has_target(t)) {
      p = base.points.at(v, u);
    } else {
      auto it = frame.displacements.find(t.frame_index);
      if (it == frame.displacements.end())
        throw std::invalid_argument(
            "extract_trajectory: missing displacement for frame " +
            std::to_string(t.frame_index));
      if (!it->second.valid.at(v, u))
        throw std::invalid_argument(
            "extract_trajectory: pixel invalid in displacement field");
      p = base.points.at(v, u) + it->second.deltas.at(v, u);
    }
    traj.positions.emplace_back(t, p);
  }
  return traj;
}

inline Trajectory extract_trajectory(
    const std::vector<FactorizedFrame4D>& frames, const Timestamp& source,
    int u, int v, const std::vector<Timestamp>& targets) {
  for (const auto& f : frames)
    if (f.source == source) return extract_trajectory(f, u, v, targets);
  throw std::invalid_argument("extract_trajectory: no frame with source " +
                              std::to_string(source.frame_index));
}

}  // namespace q4d
