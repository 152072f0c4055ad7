#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mvpose/association.hpp"
#include "mvpose/protocol.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

struct BackendConfig {
  MatchParams matching;
  double confidence_threshold = 0.1;  // views below it do not enter triangulation
  double track_gate_m = 0.5;
  int track_expiry = 15;              // consecutive missed frame sets
  double process_noise = kDefaultProcessNoise;
  double bbox_pad = 0.1;
  UTParams ut;
  LmParams lm;
};

struct PersonTrack {
  int person_id = 0;
  Skeleton3D last;
  Micros last_update = 0;
  int misses = 0;
};

struct FrameStats {
  std::size_t groups = 0;        // groups seen in >= 2 views
  std::size_t held_back = 0;     // single-view groups
  std::size_t failures = 0;      // groups that produced no skeleton
  std::vector<std::string> errors;
};

/// Cold-start aware exponential moving average of the pipeline delay.
class DelayEstimator {
 public:
  static constexpr double kDefaultSeconds = 0.1;
  static constexpr std::size_t kWarmup = 10;
  static constexpr double kFactor = 0.1;

  /// One sample: feedback emission time minus source capture time.
  void add(Micros source_us, Micros emit_us);
  void add_seconds(double delay_s);
  double seconds() const;
  std::size_t samples() const { return count_; }

 private:
  std::size_t count_ = 0;
  double warmup_sum_ = 0.0;
  double ema_ = 0.0;
};

/// Replays a sample history through DelayEstimator.
double estimate_delay(std::span<const double> samples_s);

/// Predicts each skeleton dt seconds ahead and reprojects every valid joint
/// into every camera with the unscented transform. Joints behind a camera or
/// outside its image are left invalid; cameras that see no joint of any
/// skeleton get no message. Messages are ordered by camera id.
std::vector<FeedbackMessage> make_feedback(std::span<const Skeleton3D> skeletons, std::span<const Camera> cams,
                                           double dt, Micros source_us, Micros emit_us, const BackendConfig& cfg = {});

/// Fusion side of the pipeline. Owns the person tracks; one instance per
/// ingestion context.
class Backend {
 public:
  Backend(std::vector<Camera> cams, SkeletonTopology topo, BackendConfig cfg = {});

  /// Matches, triangulates and optimizes every person in the frame set and
  /// updates the tracks. Returned skeletons are sorted by person id. A
  /// failing person is reported in last_stats() and never aborts the frame.
  std::vector<Skeleton3D> process_frameset(const FrameSet& fs);

  std::vector<FeedbackMessage> make_feedback(std::span<const Skeleton3D> skeletons, double dt, Micros source_us,
                                             Micros emit_us) const;

  const std::map<int, PersonTrack>& tracks() const { return tracks_; }
  const FrameStats& last_stats() const { return stats_; }
  const SkeletonTopology& topology() const { return topo_; }
  const std::vector<Camera>& cameras() const { return cams_; }
  const BackendConfig& config() const { return cfg_; }

 private:
  std::vector<Camera> cams_;
  std::map<int, Camera> cam_by_id_;
  SkeletonTopology topo_;
  BackendConfig cfg_;
  std::map<int, PersonTrack> tracks_;
  int next_id_ = 0;
  FrameStats stats_;
};

}  // namespace mvpose
