#pragma once

#include <deque>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mvpose/heatmap.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

/// Axis-aligned rectangle in full-image pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  Vec2 center() const { return {x + 0.5 * w, y + 0.5 * h}; }
  bool contains(const Vec2& p, double tol = 1e-6) const {
    return p.x() >= x - tol && p.y() >= y - tol && p.x() <= x + w + tol && p.y() <= y + h + tol;
  }
  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

/// Extent of the points padded by pad * max(w, h) on every side.
BBox padded_extent(std::span<const Vec2> points, double pad = 0.1);

struct PersonDetection2D {
  int local_track_id = -1;
  BBox bbox;
  std::vector<JointDetection2D> joints;
};

struct Pose2DSet {
  int camera_id = 0;
  Micros capture_timestamp = 0;
  std::vector<PersonDetection2D> persons;
};

struct FrameSet {
  Micros timestamp = 0;                // anchor: earliest capture timestamp
  std::map<int, Pose2DSet> entries;    // by camera id

  bool processable() const { return entries.size() >= 2; }
};

struct SyncStats {
  std::size_t received = 0;
  std::size_t emitted = 0;
  std::size_t complete = 0;
  std::size_t incomplete = 0;
  std::size_t dropped_late = 0;
};

/// Groups per-camera pose messages into frame sets by capture timestamp.
/// A group is anchored at its earliest capture timestamp; a message joins
/// when it lies within sync_window of the anchor. A group is emitted once
/// every camera has contributed or max_wait has passed since the group was
/// opened. Messages that belong to an already emitted group are dropped.
class Synchronizer {
 public:
  Synchronizer(int n_cams, Micros sync_window, Micros max_wait);

  std::vector<FrameSet> push(Pose2DSet msg, Micros now);
  std::vector<FrameSet> poll(Micros now);
  /// Emits everything still open.
  std::vector<FrameSet> flush();

  const SyncStats& stats() const { return stats_; }
  Micros sync_window() const { return window_; }

 private:
  struct Pending {
    FrameSet set;
    Micros opened_at = 0;
  };

  void emit_up_to(std::size_t idx, std::vector<FrameSet>& out);
  void emit_front(std::vector<FrameSet>& out);

  int n_cams_;
  Micros window_;
  Micros max_wait_;
  std::deque<Pending> open_;
  std::deque<Micros> emitted_anchors_;
  std::optional<Micros> last_emitted_;
  SyncStats stats_;
};

struct ViewMember {
  int camera_id = 0;
  int person = 0;
  bool operator==(const ViewMember&) const = default;
  auto operator<=>(const ViewMember&) const = default;
};

struct MatchResult {
  std::vector<std::vector<ViewMember>> groups;      // observed in >= 2 views
  std::vector<std::vector<ViewMember>> held_back;   // single-view groups
};

struct MatchParams {
  double threshold_px = 25.0;
  double confidence_threshold = 0.1;
};

/// Mean symmetric epipolar distance over jointly valid joints, weighted by
/// the smaller of the two confidences. Infinite when nothing is shared.
double epipolar_affinity(const Mat3& F_ab, const PersonDetection2D& a, const PersonDetection2D& b,
                         double confidence_threshold = 0.1);

/// Iterative greedy cross-view grouping. Views are visited in camera-id
/// order; each person joins the group with the lowest mean affinity below
/// the threshold or opens a new group.
MatchResult match_across_views(const FrameSet& fs, const std::map<int, Camera>& cams, const MatchParams& params = {});

/// Greedy descending-IoU matching; returns (feedback index, detection index).
std::vector<std::pair<int, int>> match_feedback_to_detection(std::span<const BBox> feedback,
                                                             std::span<const BBox> detected, double min_iou);

}  // namespace mvpose
