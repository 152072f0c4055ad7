#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvpose/association.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

/// Reported columns: hips, knees, ankles, shoulders, elbows, wrists, avg.
/// The average runs over every evaluated joint, including unclassified ones.
inline constexpr std::array<const char*, 7> kClassColumns{"hips", "knees", "ankles", "shoulders", "elbows", "wrists", "avg"};

using Cell = std::optional<double>;  // empty when nothing was evaluated
using ClassRow = std::array<Cell, 7>;

/// Running per-class sums.
class ClassAccumulator {
 public:
  void add(JointClass c, double value);
  void merge(const ClassAccumulator& other);
  ClassRow row(double scale = 1.0) const;
  std::size_t count() const { return total_n_; }

 private:
  std::array<double, kNumJointClasses> sum_{};
  std::array<std::size_t, kNumJointClasses> n_{};
  double total_ = 0.0;
  std::size_t total_n_ = 0;
};

/// Euclidean error per jointly valid joint, accumulated in millimetres.
/// Throws NoValidJoints when no joint is valid in both skeletons.
ClassAccumulator mpjpe(const Skeleton3D& est, const Skeleton3D& gt, const SkeletonTopology& topo);

inline constexpr double kHeadlessThresholdPx = 10.0;

/// Half the projected head-nose segment, or the fixed fallback when the
/// topology has no such joints or either end is not visible.
double head_threshold(std::span<const Vec2> gt_uv, std::span<const bool> gt_visible, const SkeletonTopology& topo,
                      double fallback_px = kHeadlessThresholdPx);

/// Per-class detection hits (100 or 0 per joint) over joints whose ground
/// truth is visible. `est` may be null for a missed person.
ClassAccumulator jdr(const PersonDetection2D* est, std::span<const Vec2> gt_uv, std::span<const bool> gt_visible,
                     const SkeletonTopology& topo, double threshold_px);

struct PcpResult {
  std::vector<std::size_t> correct;  // per bone
  std::vector<std::size_t> total;
};

/// A limb is correct when the mean endpoint error is strictly below half
/// the ground-truth limb length. Limbs with an invalid estimated end count
/// as incorrect.
PcpResult pcp(const Skeleton3D& est, const Skeleton3D& gt, const SkeletonTopology& topo);
void merge(PcpResult& into, const PcpResult& from);

struct FramePoint {
  int frame = 0;
  double t = 0.0;
  Cell mpjpe_mm;
  Cell jdr_pct;
  int persons_out = 0;
  int persons_gt = 0;
  bool operator==(const FramePoint&) const = default;
};

struct TransportSummary {
  std::size_t pose_sent = 0;
  std::size_t pose_lost = 0;
  std::size_t pose_bytes = 0;
  std::size_t feedback_sent = 0;
  std::size_t feedback_lost = 0;
  std::size_t feedback_bytes = 0;
  std::size_t decode_rejected = 0;
  std::size_t sync_dropped_late = 0;
  std::size_t framesets = 0;
  std::size_t incomplete_framesets = 0;
  double bytes_per_person_per_s = 0.0;
  double mean_capture_to_output_ms = 0.0;
  double delay_estimate_ms = 0.0;
  bool operator==(const TransportSummary&) const = default;
};

struct MetricsReport {
  std::string scenario;
  bool feedback = false;
  std::uint64_t seed = 0;
  bool partial = false;
  std::vector<std::string> failures;

  ClassRow mpjpe_mm{};
  ClassRow jdr_pct{};
  ClassRow reprojection_px{};
  double jdr_threshold_px = 0.0;  // 0: half head size

  std::vector<std::string> limbs;
  std::vector<Cell> pcp_pct;  // per limb
  Cell pcp_avg;

  TransportSummary transport;
  std::size_t id_switches = 0;
  std::size_t skeletons = 0;
  std::vector<FramePoint> series;

  bool operator==(const MetricsReport&) const = default;
};

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

/// Header "hips,...,avg" then one row each for MPJPE (mm), JDR (%) and
/// reprojection error (px). A report without evaluated frames is header-only.
std::string report_to_csv(const MetricsReport& r);
std::string series_to_csv(const MetricsReport& r);

/// Writes metrics.json or metrics.csv plus series.csv into dir.
void emit_report(const MetricsReport& r, const std::string& format, const std::filesystem::path& dir);

}  // namespace mvpose
