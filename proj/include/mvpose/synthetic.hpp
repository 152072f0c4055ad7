#pragma once

#include <cstdint>
#include <vector>

#include "mvpose/sensor.hpp"
#include "mvpose/skeleton.hpp"

// Synthetic scenes: camera rigs, walking skeletons and occlusion scripts.
namespace mvpose::synth {

/// Pinhole camera at eye looking at target with z up.
Camera look_at(int id, const Vec3& eye, const Vec3& target, double focal_px, int width, int height);

/// n cameras evenly spaced on a circle around the origin, all aimed at
/// (0, 0, target_z).
std::vector<Camera> ring(int n, double radius, double height, double focal_px = 600.0, int width = 1280,
                         int image_height = 960, double target_z = 1.0);

/// Joint positions of the default 17-joint body in mid-stride. Every bone
/// has exactly its topology length. `phase` drives the limb swing, yaw is
/// the walking direction around z.
std::vector<Vec3> body_pose(const SkeletonTopology& topo, const Vec3& pelvis, double yaw, double phase);

struct WalkParams {
  Vec3 center = Vec3(0.0, 0.0, 0.95);  // pelvis path center
  double radius = 0.6;                 // circular path radius, m
  double speed = 0.5;                  // m/s along the path
  double start_angle = 0.0;            // rad
  double stride_hz = 0.9;              // swing frequency
};

/// One scripted person walking on a circle, keyed at every frame.
ScriptedPerson walking_person(int id, const SkeletonTopology& topo, const WalkParams& walk, double fps,
                              double duration_s);

/// People spread on a grid at the given spacing, each walking on a small
/// circle of `radius` (keep radius < spacing / 2 to preserve separation).
SceneScript crowd_scene(int persons, const SkeletonTopology& topo, double spacing, double radius, double fps,
                        double duration_s, std::uint64_t seed);

struct OcclusionSuiteParams {
  std::vector<int> joints;        // candidate joints, default wrists and ankles
  int events = 12;
  double min_len_s = 0.3;
  double max_len_s = 1.0;
  int max_cameras = 2;            // each event hides the joint in 1..max_cameras views
  double displaced_fraction = 0.5;
  double offset_px = 30.0;
  double amplitude = 0.4;
};

/// Random wrist/ankle occlusion events over the scene's persons and the
/// given cameras.
std::vector<OcclusionEvent> occlusion_events(const SceneScript& scene, const std::vector<int>& camera_ids,
                                             const SkeletonTopology& topo, const OcclusionSuiteParams& params,
                                             std::uint64_t seed);

/// Ground-truth skeleton of a scripted person at time t (valid joints, zero
/// covariance).
Skeleton3D ground_truth_skeleton(const GroundTruthPerson& p, Micros t);

}  // namespace mvpose::synth
