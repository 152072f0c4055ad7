#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvpose/association.hpp"
#include "mvpose/heatmap.hpp"
#include "mvpose/protocol.hpp"

namespace mvpose {

// --- Scene script ------------------------------------------------------------

enum class OcclusionMode { Hidden, Displaced };

struct OcclusionEvent {
  int person_id = 0;
  int camera_id = -1;  // -1: every camera
  std::vector<int> joints;
  double t0 = 0.0;  // seconds, inclusive
  double t1 = 0.0;  // seconds, exclusive
  OcclusionMode mode = OcclusionMode::Hidden;
  Vec2 offset_px = Vec2::Zero();
  double amplitude = 0.0;

  bool applies(int person, int camera, int joint, double t) const;
};

struct Keyframe {
  double t = 0.0;
  std::vector<Vec3> joints;
};

struct ScriptedPerson {
  int id = 0;
  std::vector<Keyframe> keyframes;  // ascending t
};

struct GroundTruthPerson {
  int id = 0;
  std::vector<Vec3> joints;
};

/// Scripted ground truth: joints are linearly interpolated between
/// keyframes; a person exists between its first and last keyframe.
struct SceneScript {
  double fps = 30.0;
  double duration_s = 10.0;
  std::vector<ScriptedPerson> persons;
  std::vector<OcclusionEvent> occlusions;

  std::vector<GroundTruthPerson> at(double t) const;
  int frame_count() const;
  double frame_time(int k) const { return static_cast<double>(k) / fps; }
  Micros frame_time_us(int k) const;
};

// {"fps":..,"duration_s":..,"persons":[{"id":..,"keyframes":[{"t":..,"joints":[[x,y,z],..]}]}],
//  "occlusions":[{"person":..,"camera":..,"joints":[..],"t0":..,"t1":..,"mode":"hidden"|"displaced",
//                 "offset_px":[dx,dy],"amplitude":..}]}
SceneScript parse_scene(const std::string& json_text);
SceneScript load_scene(const std::filesystem::path& path);
std::string scene_to_json(const SceneScript& scene);

// --- Sensor node -------------------------------------------------------------

struct ObservationModel {
  double blob_sigma_px = 3.0;
  double peak_jitter_sigma_px = 0.0;
  double confidence_lo = 0.9;
  double confidence_hi = 1.0;
  std::vector<OcclusionEvent> occlusions;
  double false_negative_rate = 0.0;
  Micros clock_offset_us = 0;
  double clock_drift_ppm = 0.0;

  void validate() const;
};

struct HeatmapLayout {
  int crop_px = 256;  // square crop side
  int cells = 64;     // heatmap cells per side

  double stride() const { return static_cast<double>(crop_px) / cells; }
};

struct SensorConfig {
  HeatmapLayout layout;
  ExtractionParams extraction;
  FusionGains gains;
  Saturation saturation = Saturation::Normalize;
  bool feedback_enabled = true;
  Micros staleness_us = 150'000;
  double min_iou = 0.3;
  // Peak of a rendered feedback blob. 1.5x this must stay below a confident
  // detection peak so that feedback cannot override a visible joint.
  double feedback_amplitude = 0.4;
  // Added in quadrature to the reprojected covariance. A wide kernel keeps
  // the pull on a visible detection small while still filling in a hidden one.
  double feedback_kernel_sigma_px = 10.0;
  double bbox_pad = 0.1;
  // Inference time between capture and heatmap fusion; feedback received
  // before capture + processing_us is fused into that frame.
  Micros processing_us = 20'000;
};

struct PersonObservation {
  int person_id = 0;
  Heatmap heatmap;
  BBox bbox;
};

struct SensorStats {
  std::size_t frames = 0;
  std::size_t persons_published = 0;
  std::size_t feedback_messages = 0;
  std::size_t feedback_applied = 0;  // persons whose heatmap was fused with feedback
};

/// Rounds outgoing values to the wire resolution (0.1 px positions,
/// 0.001 confidence, 0.1 px^2 covariance) keeping covariances PSD.
WireJoint quantize_joint(const JointDetection2D& d);
/// Rounds a box outward to 0.1 px.
BBox quantize_bbox(const BBox& b);

/// Simulated smart edge sensor: renders detection heatmaps from ground
/// truth, fuses stored feedback, extracts 2D joints and stamps them with
/// its local clock. Deterministic for a given seed and input sequence.
class SensorNode {
 public:
  SensorNode(Camera camera, ObservationModel model, SensorConfig config, std::uint64_t seed, int joint_count);

  std::vector<PersonObservation> observe(std::span<const GroundTruthPerson> scene, double t);
  PoseMessage sense_and_publish(std::span<const GroundTruthPerson> scene, double t);

  /// Stores per-person feedback, latest wins. `receipt_local_us` is the
  /// local clock at arrival.
  void receive_feedback(const FeedbackMessage& msg, Micros receipt_local_us);

  Micros local_time_us(double t) const;
  const Camera& camera() const { return camera_; }
  const SensorConfig& config() const { return config_; }
  const SensorStats& stats() const { return stats_; }

 private:
  struct StoredFeedback {
    FeedbackPerson person;
    Micros receipt = 0;
  };

  Camera camera_;
  ObservationModel model_;
  SensorConfig config_;
  int joint_count_;
  std::mt19937_64 rng_;
  std::map<int, BBox> last_bbox_;
  std::map<int, StoredFeedback> feedback_;
  SensorStats stats_;
  Heatmap fb_scratch_;
  Heatmap fused_scratch_;
};

}  // namespace mvpose
