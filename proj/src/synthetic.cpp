#include "mvpose/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "mvpose/error.hpp"

namespace mvpose::synth {

Camera look_at(int id, const Vec3& eye, const Vec3& target, double focal_px, int width, int height) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) throw Error(Errc::InvalidArgument, "camera looks straight up or down");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  Mat3 K;
  K << focal_px, 0.0, 0.5 * width, 0.0, focal_px, 0.5 * height, 0.0, 0.0, 1.0;
  Camera cam;
  cam.id = id;
  cam.width = width;
  cam.height = height;
  cam.P.leftCols<3>() = K * R;
  cam.P.col(3) = -K * R * eye;
  return cam;
}

std::vector<Camera> ring(int n, double radius, double height, double focal_px, int width, int image_height,
                         double target_z) {
  if (n < 1) throw Error(Errc::InvalidArgument, "ring needs at least one camera");
  std::vector<Camera> cams;
  for (int i = 0; i < n; ++i) {
    // Start off-axis so that four cameras sit in the room corners.
    const double a = std::numbers::pi / 4.0 + 2.0 * std::numbers::pi * i / n;
    const Vec3 eye(radius * std::cos(a), radius * std::sin(a), height);
    cams.push_back(look_at(i, eye, Vec3(0.0, 0.0, target_z), focal_px, width, image_height));
  }
  return cams;
}

std::vector<Vec3> body_pose(const SkeletonTopology& topo, const Vec3& pelvis, double yaw, double phase) {
  const Vec3 fwd(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 left(-std::sin(yaw), std::cos(yaw), 0.0);
  const Vec3 up = Vec3::UnitZ();
  auto dir = [&](double f, double l, double u) { return Vec3(f * fwd + l * left + u * up).normalized(); };

  const double leg = 0.35 * std::sin(phase);
  const double arm = -0.3 * std::sin(phase);
  const double knee_l = 0.25 * (1.0 + std::sin(phase + std::numbers::pi / 2.0));
  const double knee_r = 0.25 * (1.0 - std::sin(phase + std::numbers::pi / 2.0));

  auto direction = [&](const std::string& child) -> Vec3 {
    if (child == "spine" || child == "neck") return dir(0.05, 0.0, 1.0);
    if (child == "head") return dir(0.1, 0.0, 1.0);
    if (child == "nose") return dir(1.0, 0.0, 0.3);
    if (child == "l_hip") return dir(0.0, 1.0, 0.0);
    if (child == "r_hip") return dir(0.0, -1.0, 0.0);
    if (child == "l_knee") return dir(std::sin(leg), 0.0, -std::cos(leg));
    if (child == "r_knee") return dir(std::sin(-leg), 0.0, -std::cos(-leg));
    if (child == "l_ankle") return dir(std::sin(leg - knee_l), 0.0, -std::cos(leg - knee_l));
    if (child == "r_ankle") return dir(std::sin(-leg - knee_r), 0.0, -std::cos(-leg - knee_r));
    if (child == "l_shoulder") return dir(0.0, 1.0, -0.1);
    if (child == "r_shoulder") return dir(0.0, -1.0, -0.1);
    if (child == "l_elbow") return dir(std::sin(arm), 0.15, -std::cos(arm));
    if (child == "r_elbow") return dir(std::sin(-arm), -0.15, -std::cos(-arm));
    if (child == "l_wrist") return dir(std::sin(arm + 0.4), 0.1, -std::cos(arm + 0.4));
    if (child == "r_wrist") return dir(std::sin(-arm + 0.4), -0.1, -std::cos(-arm + 0.4));
    throw Error(Errc::InvalidArgument, "body_pose has no direction for joint '" + child + "'");
  };

  const auto J = static_cast<std::size_t>(topo.joint_count());
  std::vector<Vec3> x(J, Vec3::Zero());
  std::vector<bool> placed(J, false);
  const int root = topo.index_of("pelvis");
  if (root < 0) throw Error(Errc::InvalidArgument, "body_pose needs a pelvis joint");
  x[static_cast<std::size_t>(root)] = pelvis;
  placed[static_cast<std::size_t>(root)] = true;
  // Bones may be listed in any order; sweep until the tree is placed.
  for (std::size_t pass = 0; pass < J; ++pass) {
    bool progress = false;
    for (const auto& b : topo.bones()) {
      const auto p = static_cast<std::size_t>(b.parent);
      const auto c = static_cast<std::size_t>(b.child);
      if (placed[p] == placed[c]) continue;
      const auto [from, to] = placed[p] ? std::pair{p, c} : std::pair{c, p};
      const Vec3 d = direction(topo.joint_names()[c]);
      x[to] = x[from] + (placed[p] ? 1.0 : -1.0) * b.length * d;
      placed[to] = true;
      progress = true;
    }
    if (!progress) break;
  }
  return x;
}

ScriptedPerson walking_person(int id, const SkeletonTopology& topo, const WalkParams& walk, double fps,
                              double duration_s) {
  ScriptedPerson p;
  p.id = id;
  const int frames = static_cast<int>(std::floor(duration_s * fps + 1e-9));
  const double omega = walk.radius > 0.0 ? walk.speed / walk.radius : 0.0;
  for (int k = 0; k <= frames; ++k) {
    const double t = k / fps;
    const double a = walk.start_angle + omega * t;
    const Vec3 pelvis = walk.center + walk.radius * Vec3(std::cos(a), std::sin(a), 0.0);
    const double yaw = a + std::copysign(std::numbers::pi / 2.0, omega == 0.0 ? 1.0 : omega);
    p.keyframes.push_back({t, body_pose(topo, pelvis, yaw, 2.0 * std::numbers::pi * walk.stride_hz * t)});
  }
  return p;
}

SceneScript crowd_scene(int persons, const SkeletonTopology& topo, double spacing, double radius, double fps,
                        double duration_s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> speed(0.3, 0.6);
  std::bernoulli_distribution ccw(0.5);
  SceneScript s;
  s.fps = fps;
  s.duration_s = duration_s;
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(persons))));
  const int rows = (persons + cols - 1) / cols;
  for (int i = 0; i < persons; ++i) {
    WalkParams w;
    w.center = Vec3((i % cols - 0.5 * (cols - 1)) * spacing, (i / cols - 0.5 * (rows - 1)) * spacing, 0.95);
    w.radius = radius;
    w.start_angle = angle(rng);
    w.speed = speed(rng) * (ccw(rng) ? 1.0 : -1.0);
    s.persons.push_back(walking_person(i, topo, w, fps, duration_s));
  }
  return s;
}

std::vector<OcclusionEvent> occlusion_events(const SceneScript& scene, const std::vector<int>& camera_ids,
                                             const SkeletonTopology& topo, const OcclusionSuiteParams& params,
                                             std::uint64_t seed) {
  std::vector<int> joints = params.joints;
  if (joints.empty()) {
    for (const char* n : {"l_wrist", "r_wrist", "l_ankle", "r_ankle"}) {
      if (const int j = topo.index_of(n); j >= 0) joints.push_back(j);
    }
  }
  if (joints.empty() || camera_ids.empty() || scene.persons.empty()) return {};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<OcclusionEvent> out;
  for (int e = 0; e < params.events; ++e) {
    const auto& person = scene.persons[static_cast<std::size_t>(unit(rng) * scene.persons.size()) % scene.persons.size()];
    const int joint = joints[static_cast<std::size_t>(unit(rng) * joints.size()) % joints.size()];
    const double len = params.min_len_s + (params.max_len_s - params.min_len_s) * unit(rng);
    // Leave the first half second clean so tracks can form.
    const double t0 = 0.5 + std::max(0.0, scene.duration_s - len - 0.5) * unit(rng);
    const bool displaced = unit(rng) < params.displaced_fraction;
    const double dir = 2.0 * std::numbers::pi * unit(rng);
    std::vector<int> cams = camera_ids;
    std::shuffle(cams.begin(), cams.end(), rng);
    const int n = 1 + static_cast<int>(unit(rng) * std::max(1, params.max_cameras)) % std::max(1, params.max_cameras);
    for (int c = 0; c < std::min<int>(n, static_cast<int>(cams.size())); ++c) {
      OcclusionEvent ev;
      ev.person_id = person.id;
      ev.camera_id = cams[static_cast<std::size_t>(c)];
      ev.joints = {joint};
      ev.t0 = t0;
      ev.t1 = t0 + len;
      if (displaced) {
        ev.mode = OcclusionMode::Displaced;
        ev.offset_px = params.offset_px * Vec2(std::cos(dir), std::sin(dir));
        ev.amplitude = params.amplitude;
      }
      out.push_back(std::move(ev));
    }
  }
  return out;
}

Skeleton3D ground_truth_skeleton(const GroundTruthPerson& p, Micros t) {
  Skeleton3D s;
  s.person_id = p.id;
  s.timestamp = t;
  for (const auto& x : p.joints) s.joints.push_back({Gaussian3D{x, Mat3::Zero()}, true, Vec3::Zero(), false});
  return s;
}

}  // namespace mvpose::synth
