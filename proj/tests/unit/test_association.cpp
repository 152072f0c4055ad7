#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "mvpose/association.hpp"
#include "mvpose/error.hpp"
#include "mvpose/synthetic.hpp"
#include "../support/oracles.hpp"

using namespace mvpose;

namespace {

Pose2DSet stamp(int cam, Micros t) {
  Pose2DSet s;
  s.camera_id = cam;
  s.capture_timestamp = t;
  return s;
}

PersonDetection2D detect(const Camera& cam, const std::vector<Vec3>& joints) {
  PersonDetection2D p;
  std::vector<Vec2> uv;
  for (std::size_t j = 0; j < joints.size(); ++j) {
    JointDetection2D d;
    d.joint_class = static_cast<int>(j);
    d.position = project(cam, joints[j]);
    d.confidence = 0.95;
    d.cov = Mat2::Identity();
    d.valid = true;
    p.joints.push_back(d);
    uv.push_back(d.position);
  }
  p.bbox = padded_extent(uv);
  return p;
}

std::map<int, Camera> by_id(const std::vector<Camera>& cams) {
  std::map<int, Camera> m;
  for (const auto& c : cams) m.emplace(c.id, c);
  return m;
}

}  // namespace

TEST_CASE("synchronizer: equal timestamps form one complete set") {
  Synchronizer sync(4, 10'000, 50'000);
  std::vector<FrameSet> out;
  for (int c = 0; c < 4; ++c) {
    auto r = sync.push(stamp(c, 1'000'000), 1'005'000);
    out.insert(out.end(), r.begin(), r.end());
  }
  REQUIRE(out.size() == 1u);
  CHECK(out[0].entries.size() == 4u);
  CHECK(out[0].timestamp == 1'000'000);
  CHECK(sync.stats().complete == 1u);
  CHECK(sync.stats().dropped_late == 0u);
}

TEST_CASE("synchronizer: a 50 ms late camera is dropped after max_wait") {
  Synchronizer sync(4, 10'000, 20'000);
  std::vector<FrameSet> out;
  for (int c = 0; c < 3; ++c) {
    auto r = sync.push(stamp(c, 0), 2'000);
    out.insert(out.end(), r.begin(), r.end());
  }
  CHECK(out.empty());
  auto r = sync.poll(22'000);
  REQUIRE(r.size() == 1u);
  CHECK(r[0].entries.size() == 3u);
  CHECK(r[0].processable());
  // The late camera captured at the same instant but arrives 50 ms later.
  CHECK(sync.push(stamp(3, 0), 52'000).empty());
  CHECK(sync.stats().dropped_late == 1u);
  CHECK(sync.stats().incomplete == 1u);
}

TEST_CASE("synchronizer: jittered 30 Hz streams lose nothing") {
  // Offline optimum: every capture of frame k belongs to group k, so a
  // correct synchronizer reproduces 300 complete groups.
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Micros> jitter(-5'000, 5'000);
  std::uniform_int_distribution<Micros> transit(2'000, 12'000);
  struct Arrival {
    Micros at;
    Pose2DSet msg;
  };
  std::vector<Arrival> arrivals;
  for (int k = 0; k < 300; ++k) {
    const Micros base = k * 33'333;
    for (int c = 0; c < 4; ++c) {
      const Micros cap = base + jitter(rng);
      arrivals.push_back({cap + transit(rng), stamp(c, cap)});
    }
  }
  std::stable_sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) { return a.at < b.at; });
  Synchronizer sync(4, 16'000, 33'333);
  std::vector<FrameSet> out;
  for (auto& a : arrivals) {
    auto r = sync.push(a.msg, a.at);
    out.insert(out.end(), r.begin(), r.end());
  }
  auto rest = sync.flush();
  out.insert(out.end(), rest.begin(), rest.end());
  CHECK(sync.stats().dropped_late == 0u);
  CHECK(out.size() == 300u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    CHECK(out[k].entries.size() == 4u);
    for (const auto& [cam, e] : out[k].entries) {
      CHECK(std::llabs(e.capture_timestamp - static_cast<Micros>(k) * 33'333) <= 5'000);
    }
  }
}

TEST_CASE("synchronizer rejects bad parameters") {
  CHECK_THROWS_AS(Synchronizer(0, 1, 1), Error);
  CHECK_THROWS_AS(Synchronizer(2, -1, 1), Error);
}

TEST_CASE("matching: one person spans every view") {
  const auto topo = SkeletonTopology::default17();
  const auto cams = synth::ring(4, 4.0, 2.0);
  const auto body = synth::body_pose(topo, Vec3(0, 0, 0.95), 0.0, 0.3);
  FrameSet fs;
  for (const auto& c : cams) {
    Pose2DSet s = stamp(c.id, 0);
    s.persons.push_back(detect(c, body));
    fs.entries.emplace(c.id, s);
  }
  const auto m = match_across_views(fs, by_id(cams), {1.0, 0.1});
  REQUIRE(m.groups.size() == 1u);
  CHECK(m.groups[0].size() == 4u);
  CHECK(m.held_back.empty());

  FrameSet one;
  one.entries.emplace(cams[0].id, fs.entries.at(cams[0].id));
  const auto single = match_across_views(one, by_id(cams));
  CHECK(single.groups.empty());
  CHECK(single.held_back.size() == 1u);
}

TEST_CASE("matching: two persons agree with exhaustive assignment") {
  const auto topo = SkeletonTopology::default17();
  const auto cams = synth::ring(4, 4.5, 2.2);
  const auto map = by_id(cams);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    const Vec3 a(-1.0 + 0.2 * u(rng), 0.2 * u(rng), 0.95);
    const Vec3 b = a + Vec3(2.0, 0.3 * u(rng), 0.0);
    const std::vector<std::vector<Vec3>> people{synth::body_pose(topo, a, u(rng), u(rng)),
                                                synth::body_pose(topo, b, u(rng), u(rng))};
    FrameSet fs;
    // Per-view shuffle so that person indices do not line up.
    std::vector<std::vector<int>> order;
    for (const auto& c : cams) {
      std::vector<int> o{0, 1};
      if (u(rng) > 0) std::swap(o[0], o[1]);
      Pose2DSet s = stamp(c.id, 0);
      for (int i : o) s.persons.push_back(detect(c, people[static_cast<std::size_t>(i)]));
      fs.entries.emplace(c.id, s);
      order.push_back(o);
    }
    const auto m = match_across_views(fs, map);
    REQUIRE(m.groups.size() == 2u);

    const auto perm = oracle::exhaustive_assignment(4, 2, [&](int v, int i, int j) {
      const Mat3 F = fundamental_matrix(cams[0], cams[static_cast<std::size_t>(v)]);
      return epipolar_affinity(F, fs.entries.at(cams[0].id).persons[static_cast<std::size_t>(i)],
                               fs.entries.at(cams[static_cast<std::size_t>(v)].id).persons[static_cast<std::size_t>(j)]);
    });
    for (const auto& g : m.groups) {
      REQUIRE(g.size() == 4u);
      REQUIRE(g[0].camera_id == cams[0].id);
      const int i = g[0].person;
      for (std::size_t v = 1; v < 4; ++v) {
        CHECK(g[v].camera_id == cams[v].id);
        CHECK(g[v].person == perm[v][static_cast<std::size_t>(i)]);
        // And the oracle agrees with the truth.
        CHECK(order[v][static_cast<std::size_t>(g[v].person)] == order[0][static_cast<std::size_t>(i)]);
      }
    }
  }
}

TEST_CASE("epipolar affinity without shared joints is infinite") {
  const auto cams = synth::ring(2, 4.0, 2.0);
  PersonDetection2D a;
  PersonDetection2D b;
  a.joints.resize(3);
  b.joints.resize(3);
  CHECK(std::isinf(epipolar_affinity(fundamental_matrix(cams[0], cams[1]), a, b)));
}

TEST_CASE("iou and feedback matching") {
  const BBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, BBox{1, 0, 2, 2}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, BBox{5, 5, 1, 1}) == 0.0);
  CHECK(iou(BBox{}, BBox{}) == 0.0);

  const std::vector<BBox> fb{{0, 0, 2, 2}, {10, 10, 2, 2}};
  const std::vector<BBox> det{{10.1, 10, 2, 2}, {0, 0, 2, 2}, {50, 50, 1, 1}};
  auto m = match_feedback_to_detection(fb, det, 0.3);
  std::sort(m.begin(), m.end());
  REQUIRE(m.size() == 2u);
  CHECK(m[0] == std::pair{0, 1});
  CHECK(m[1] == std::pair{1, 0});
  CHECK(match_feedback_to_detection(std::vector<BBox>{{0, 0, 1, 1}}, std::vector<BBox>{{4, 4, 1, 1}}, 0.3).empty());
}

TEST_CASE("padded extent") {
  const std::vector<Vec2> pts{{0, 0}, {10, 4}};
  const BBox b = padded_extent(pts, 0.1);
  CHECK(b == BBox{-1, -1, 12, 6});
  for (const auto& p : pts) CHECK(b.contains(p));
  CHECK(padded_extent({}, 0.1).area() == 0.0);
}
