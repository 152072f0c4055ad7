#include "mvpose/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "mvpose/error.hpp"

namespace mvpose {

double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BBox padded_extent(std::span<const Vec2> points, double pad) {
  if (points.empty()) return {};
  Vec2 lo = points[0];
  Vec2 hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double margin = pad * std::max(hi.x() - lo.x(), hi.y() - lo.y());
  return {lo.x() - margin, lo.y() - margin, hi.x() - lo.x() + 2 * margin, hi.y() - lo.y() + 2 * margin};
}

// --- Synchronizer -----------------------------------------------------------

Synchronizer::Synchronizer(int n_cams, Micros sync_window, Micros max_wait)
    : n_cams_(n_cams), window_(sync_window), max_wait_(max_wait) {
  if (n_cams <= 0 || sync_window < 0 || max_wait < 0) {
    throw Error(Errc::InvalidArgument, "synchronizer parameters must be non-negative");
  }
}

void Synchronizer::emit_front(std::vector<FrameSet>& out) {
  Pending p = std::move(open_.front());
  open_.pop_front();
  for (const auto& [cam, e] : p.set.entries) {
    if (std::llabs(e.capture_timestamp - p.set.timestamp) > window_) {
      throw std::logic_error("frame set violates its timestamp window");
    }
  }
  ++stats_.emitted;
  if (static_cast<int>(p.set.entries.size()) == n_cams_) {
    ++stats_.complete;
  } else {
    ++stats_.incomplete;
  }
  emitted_anchors_.push_back(p.set.timestamp);
  if (emitted_anchors_.size() > 256) emitted_anchors_.pop_front();
  last_emitted_ = p.set.timestamp;
  out.push_back(std::move(p.set));
}

void Synchronizer::emit_up_to(std::size_t idx, std::vector<FrameSet>& out) {
  // Emitting a group also releases every older group: with per-camera
  // monotone timestamps they cannot receive messages any more.
  for (std::size_t i = 0; i <= idx; ++i) emit_front(out);
}

std::vector<FrameSet> Synchronizer::push(Pose2DSet msg, Micros now) {
  std::vector<FrameSet> out;
  ++stats_.received;
  const Micros ts = msg.capture_timestamp;

  for (std::size_t i = 0; i < open_.size(); ++i) {
    auto& p = open_[i];
    if (std::llabs(ts - p.set.timestamp) <= window_ && !p.set.entries.contains(msg.camera_id)) {
      // Keep the earliest capture time as anchor; a new earlier member must
      // not push existing members out of the window.
      Micros anchor = std::min(p.set.timestamp, ts);
      bool fits = true;
      for (const auto& [cam, e] : p.set.entries) {
        if (std::llabs(e.capture_timestamp - anchor) > window_) fits = false;
      }
      if (!fits) continue;
      p.set.timestamp = anchor;
      p.set.entries.emplace(msg.camera_id, std::move(msg));
      if (static_cast<int>(p.set.entries.size()) == n_cams_) emit_up_to(i, out);
      auto more = poll(now);
      out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
      return out;
    }
  }

  const bool late = std::any_of(emitted_anchors_.begin(), emitted_anchors_.end(),
                                [&](Micros a) { return std::llabs(ts - a) <= window_; }) ||
                    (last_emitted_ && ts < *last_emitted_);
  if (late) {
    ++stats_.dropped_late;
    return poll(now);
  }

  Pending p;
  p.set.timestamp = ts;
  p.opened_at = now;
  p.set.entries.emplace(msg.camera_id, std::move(msg));
  // Keep open groups ordered by anchor.
  auto pos = std::upper_bound(open_.begin(), open_.end(), ts,
                              [](Micros t, const Pending& q) { return t < q.set.timestamp; });
  const auto idx = static_cast<std::size_t>(pos - open_.begin());
  open_.insert(pos, std::move(p));
  if (n_cams_ == 1) emit_up_to(idx, out);
  auto more = poll(now);
  out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  return out;
}

std::vector<FrameSet> Synchronizer::poll(Micros now) {
  std::vector<FrameSet> out;
  for (std::size_t i = open_.size(); i-- > 0;) {
    if (now - open_[i].opened_at >= max_wait_) {
      emit_up_to(i, out);
      break;
    }
  }
  return out;
}

std::vector<FrameSet> Synchronizer::flush() {
  std::vector<FrameSet> out;
  if (!open_.empty()) emit_up_to(open_.size() - 1, out);
  return out;
}

// --- Cross-view matching ----------------------------------------------------

double epipolar_affinity(const Mat3& F_ab, const PersonDetection2D& a, const PersonDetection2D& b,
                         double confidence_threshold) {
  const std::size_t J = std::min(a.joints.size(), b.joints.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& ja = a.joints[j];
    const auto& jb = b.joints[j];
    if (!ja.valid || !jb.valid) continue;
    const double w = std::min(ja.confidence, jb.confidence);
    if (w < confidence_threshold) continue;
    num += w * symmetric_epipolar_distance(F_ab, ja.position, jb.position);
    den += w;
  }
  return den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
}

MatchResult match_across_views(const FrameSet& fs, const std::map<int, Camera>& cams, const MatchParams& params) {
  std::vector<std::vector<ViewMember>> pool;

  auto person_at = [&](const ViewMember& m) -> const PersonDetection2D& {
    return fs.entries.at(m.camera_id).persons[static_cast<std::size_t>(m.person)];
  };

  // FrameSet entries iterate in ascending camera id.
  for (const auto& [cam_id, set] : fs.entries) {
    const auto cam_it = cams.find(cam_id);
    if (cam_it == cams.end()) continue;
    const Camera& cam = cam_it->second;
    const int n_persons = static_cast<int>(set.persons.size());
    const int n_groups = static_cast<int>(pool.size());

    // Affinity of every new person to every existing group.
    std::vector<std::tuple<double, int, int>> candidates;
    for (int g = 0; g < n_groups; ++g) {
      std::vector<Mat3> Fs;
      for (const auto& m : pool[static_cast<std::size_t>(g)]) {
        Fs.push_back(fundamental_matrix(cams.at(m.camera_id), cam));
      }
      for (int p = 0; p < n_persons; ++p) {
        double sum = 0.0;
        for (std::size_t k = 0; k < Fs.size(); ++k) {
          sum += epipolar_affinity(Fs[k], person_at(pool[static_cast<std::size_t>(g)][k]),
                                   set.persons[static_cast<std::size_t>(p)], params.confidence_threshold);
        }
        const double aff = sum / static_cast<double>(Fs.size());
        if (aff < params.threshold_px) candidates.emplace_back(aff, p, g);
      }
    }
    // Lowest affinity first; ties by person index then group (oldest group
    // holds the lowest camera id).
    std::sort(candidates.begin(), candidates.end());

    std::vector<bool> person_used(static_cast<std::size_t>(n_persons), false);
    std::vector<bool> group_used(static_cast<std::size_t>(n_groups), false);
    for (const auto& [aff, p, g] : candidates) {
      if (person_used[static_cast<std::size_t>(p)] || group_used[static_cast<std::size_t>(g)]) continue;
      person_used[static_cast<std::size_t>(p)] = true;
      group_used[static_cast<std::size_t>(g)] = true;
      pool[static_cast<std::size_t>(g)].push_back({cam_id, p});
    }
    for (int p = 0; p < n_persons; ++p) {
      if (!person_used[static_cast<std::size_t>(p)]) pool.push_back({{cam_id, p}});
    }
  }

  MatchResult res;
  for (auto& g : pool) {
    if (g.size() >= 2) {
      res.groups.push_back(std::move(g));
    } else {
      res.held_back.push_back(std::move(g));
    }
  }
  return res;
}

std::vector<std::pair<int, int>> match_feedback_to_detection(std::span<const BBox> feedback,
                                                             std::span<const BBox> detected, double min_iou) {
  std::vector<std::tuple<double, int, int>> pairs;
  for (std::size_t f = 0; f < feedback.size(); ++f) {
    for (std::size_t d = 0; d < detected.size(); ++d) {
      const double v = iou(feedback[f], detected[d]);
      if (v >= min_iou && v > 0.0) pairs.emplace_back(-v, static_cast<int>(f), static_cast<int>(d));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> fb_used(feedback.size(), false);
  std::vector<bool> det_used(detected.size(), false);
  std::vector<std::pair<int, int>> out;
  for (const auto& [neg, f, d] : pairs) {
    if (fb_used[static_cast<std::size_t>(f)] || det_used[static_cast<std::size_t>(d)]) continue;
    fb_used[static_cast<std::size_t>(f)] = true;
    det_used[static_cast<std::size_t>(d)] = true;
    out.emplace_back(f, d);
  }
  return out;
}

}  // namespace mvpose
