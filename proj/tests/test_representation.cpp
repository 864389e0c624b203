#include "q4d/representation.hpp"

#include "q4d/rng.hpp"

#include <doctest.h>

using namespace q4d;

namespace {

FactorizedFrame4D make_frame(Pcg32& rng, int h, int w, int n, int source) {
  FactorizedFrame4D f;
  f.source = Timestamp(source, n);
  f.base = PointMap(h, w);
  for (int i = 0; i < h * w; ++i) {
    f.base.points.data[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
    f.base.valid.data[i] = rng.next_bounded(4) ? 1 : 0;
  }
  for (int t = 0; t < n; ++t) {
    DisplacementField d(h, w, f.source, Timestamp(t, n));
    for (int i = 0; i < h * w; ++i) {
      d.deltas.data[i] =
          t == source ? Vec3::Zero()
                      : Vec3(rng.normal(), rng.normal(), rng.normal());
      d.valid.data[i] = rng.next_bounded(5) ? 1 : 0;
    }
    f.displacements.emplace(t, std::move(d));
  }
  return f;
}

}  // namespace

TEST_CASE("normalized time is frame_index / (N-1)") {
  CHECK(Timestamp(0, 5).normalized_time() == doctest::Approx(0.0));
  CHECK(Timestamp(4, 5).normalized_time() == doctest::Approx(1.0));
  CHECK(Timestamp(1, 3).normalized_time() == doctest::Approx(0.5));
}

TEST_CASE("compose at the source timestamp returns the base bit-exactly") {
  Pcg32 rng(1);
  FactorizedFrame4D f = make_frame(rng, 6, 7, 5, 2);
  PointMap self = compose(f, Timestamp(2, 5));
  for (std::size_t i = 0; i < self.points.data.size(); ++i) {
    if (!self.valid.data[i]) continue;
    CHECK(self.points.data[i].x() == f.base.points.data[i].x());
    CHECK(self.points.data[i].y() == f.base.points.data[i].y());
    CHECK(self.points.data[i].z() == f.base.points.data[i].z());
  }

  // Also bit-exact when no self-displacement is stored at all.
  FactorizedFrame4D g = f;
  g.displacements.erase(2);
  PointMap self2 = compose(g, Timestamp(2, 5));
  for (std::size_t i = 0; i < self2.points.data.size(); ++i)
    if (self2.valid.data[i])
      CHECK(self2.points.data[i] == f.base.points.data[i]);
}

TEST_CASE("compose adds displacements and intersects masks") {
  Pcg32 rng(2);
  FactorizedFrame4D f = make_frame(rng, 4, 4, 3, 0);
  PointMap p = compose(f, Timestamp(1, 3));
  const DisplacementField& d = f.displacements.at(1);
  for (std::size_t i = 0; i < p.points.data.size(); ++i) {
    bool expect = f.base.valid.data[i] && d.valid.data[i];
    CHECK(static_cast<bool>(p.valid.data[i]) == expect);
    if (expect)
      CHECK((p.points.data[i] - (f.base.points.data[i] + d.deltas.data[i]))
                .norm() < 1e-15);
  }
}

TEST_CASE("compose with a missing target throws") {
  Pcg32 rng(3);
  FactorizedFrame4D f = make_frame(rng, 4, 4, 3, 1);
  CHECK_THROWS(compose(f, Timestamp(7, 8)));
}

TEST_CASE("trajectories are ordered and anchored at the base geometry") {
  Pcg32 rng(4);
  FactorizedFrame4D f = make_frame(rng, 5, 5, 4, 1);
  int u = 2, v = 3;
  f.base.valid.at(v, u) = 1;
  for (auto& [t, d] : f.displacements) d.valid.at(v, u) = 1;
  std::vector<Timestamp> ts;
  for (int t = 0; t < 4; ++t) ts.push_back(Timestamp(t, 4));
  Trajectory tr = extract_trajectory(f, u, v, ts);
  REQUIRE(tr.positions.size() == 4);
  for (std::size_t k = 1; k < tr.positions.size(); ++k)
    CHECK(tr.positions[k].first.frame_index >
          tr.positions[k - 1].first.frame_index);
  CHECK((tr.positions[1].second - f.base.points.at(v, u)).norm() < 1e-15);
}
