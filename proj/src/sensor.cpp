#include "mvpose/sensor.hpp"

#include <algorithm>
#include <cmath>

#include "mvpose/error.hpp"
#include "mvpose/kernels.hpp"

namespace mvpose {

namespace {

// Dividing by the integer scale yields the double nearest to the decimal,
// which keeps the JSON representation short.
double round_to(double v, double scale) { return std::round(v * scale) / scale; }

}  // namespace

void ObservationModel::validate() const {
  if (!(blob_sigma_px > 0.0)) throw Error(Errc::ConfigError, "blob_sigma must be positive");
  if (peak_jitter_sigma_px < 0.0) throw Error(Errc::ConfigError, "peak jitter must be non-negative");
  if (confidence_lo < 0.0 || confidence_hi > 1.0 || confidence_lo > confidence_hi) {
    throw Error(Errc::ConfigError, "confidence range must satisfy 0 <= lo <= hi <= 1");
  }
  if (false_negative_rate < 0.0 || false_negative_rate > 1.0) {
    throw Error(Errc::ConfigError, "false negative rate must lie in [0, 1]");
  }
}

WireJoint quantize_joint(const JointDetection2D& d) {
  constexpr double kPx = 10.0;     // 0.1 px
  constexpr double kConf = 1000.0;
  WireJoint w;
  if (!d.valid) return w;
  w.valid = true;
  w.u = round_to(d.position.x(), kPx);
  w.v = round_to(d.position.y(), kPx);
  w.confidence = std::clamp(round_to(d.confidence, kConf), 0.0, 1.0);
  const double sxx = std::max(1.0 / kPx, round_to(d.cov(0, 0), kPx));
  const double syy = std::max(1.0 / kPx, round_to(d.cov(1, 1), kPx));
  // Round the off-diagonal toward zero and cap it so the matrix stays PSD.
  const double bound = std::sqrt(sxx * syy);
  double steps = std::trunc(0.5 * (d.cov(0, 1) + d.cov(1, 0)) * kPx);
  while (std::abs(steps) / kPx > bound) steps -= std::copysign(1.0, steps);
  w.cov = {sxx, steps / kPx, syy};
  return w;
}

BBox quantize_bbox(const BBox& b) {
  constexpr double kPx = 10.0;
  const double x0 = std::floor(b.x * kPx) / kPx;
  const double y0 = std::floor(b.y * kPx) / kPx;
  const double x1 = std::ceil((b.x + b.w) * kPx) / kPx;
  const double y1 = std::ceil((b.y + b.h) * kPx) / kPx;
  return {x0, y0, round_to(x1 - x0, kPx), round_to(y1 - y0, kPx)};
}

SensorNode::SensorNode(Camera camera, ObservationModel model, SensorConfig config, std::uint64_t seed, int joint_count)
    : camera_(std::move(camera)),
      model_(std::move(model)),
      config_(config),
      joint_count_(joint_count),
      rng_(seed) {
  camera_.validate();
  model_.validate();
  check_gains(config_.gains);
  if (joint_count_ <= 0) throw Error(Errc::ConfigError, "joint count must be positive");
  if (config_.layout.crop_px <= 0 || config_.layout.cells <= 0) throw Error(Errc::ConfigError, "invalid heatmap layout");
}

Micros SensorNode::local_time_us(double t) const {
  const double true_us = t * 1e6;
  return static_cast<Micros>(std::llround(true_us + static_cast<double>(model_.clock_offset_us) +
                                          model_.clock_drift_ppm * 1e-6 * true_us));
}

std::vector<PersonObservation> SensorNode::observe(std::span<const GroundTruthPerson> scene, double t) {
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double stride = config_.layout.stride();
  const double crop = config_.layout.crop_px;

  std::vector<PersonObservation> out;
  for (const auto& person : scene) {
    // Noise is drawn for every scripted person and joint, visible or not, so
    // the realization at frame k never depends on what happened before.
    const double fn_draw = unit(rng_);
    const std::size_t J = person.joints.size();
    std::vector<Vec2> noise(J);
    std::vector<double> amp(J);
    for (std::size_t j = 0; j < J; ++j) {
      noise[j].x() = jitter(rng_) * model_.peak_jitter_sigma_px;
      noise[j].y() = jitter(rng_) * model_.peak_jitter_sigma_px;
      amp[j] = model_.confidence_lo + (model_.confidence_hi - model_.confidence_lo) * unit(rng_);
    }

    std::vector<Vec2> uv(J);
    std::vector<bool> in_front(J, false);
    std::vector<Vec2> visible;
    for (std::size_t j = 0; j < J; ++j) {
      if (camera_.depth(person.joints[j]) <= 1e-6) continue;
      in_front[j] = true;
      uv[j] = project(camera_, person.joints[j]);
      if (camera_.in_image(uv[j])) visible.push_back(uv[j]);
    }
    if (visible.empty() || fn_draw < model_.false_negative_rate) continue;

    PersonObservation obs;
    obs.person_id = person.id;
    obs.bbox = padded_extent(visible, config_.bbox_pad);

    const auto last = last_bbox_.find(person.id);
    const Vec2 center = last != last_bbox_.end() ? last->second.center() : obs.bbox.center();
    const Vec2 origin(std::round(center.x() - 0.5 * crop), std::round(center.y() - 0.5 * crop));
    obs.heatmap = Heatmap(joint_count_, config_.layout.cells, config_.layout.cells, origin, stride);

    std::vector<Gaussian2D> blobs(static_cast<std::size_t>(joint_count_));
    std::vector<double> amplitudes(static_cast<std::size_t>(joint_count_), 0.0);
    const Mat2 blob_cov = Mat2::Identity() * model_.blob_sigma_px * model_.blob_sigma_px;
    for (std::size_t j = 0; j < std::min<std::size_t>(J, blobs.size()); ++j) {
      if (!in_front[j]) continue;
      blobs[j].cov = blob_cov;
      blobs[j].mean = uv[j] + noise[j];
      amplitudes[j] = amp[j];
      for (const auto& e : model_.occlusions) {
        if (!e.applies(person.id, camera_.id, static_cast<int>(j), t)) continue;
        if (e.mode == OcclusionMode::Hidden) {
          amplitudes[j] = 0.0;
        } else {
          blobs[j].mean = uv[j] + e.offset_px;
          amplitudes[j] = e.amplitude;
        }
        break;
      }
    }
    kernels::parallel::render_all(obs.heatmap, blobs, amplitudes);
    out.push_back(std::move(obs));
  }
  return out;
}

PoseMessage SensorNode::sense_and_publish(std::span<const GroundTruthPerson> scene, double t) {
  ++stats_.frames;
  const Micros now_local = local_time_us(t);
  const Micros fusion_local = now_local + config_.processing_us;
  std::vector<PersonObservation> observations = observe(scene, t);

  // Feedback candidates that are fresh enough, matched to detections by IoU.
  std::vector<const FeedbackPerson*> fresh;
  std::vector<BBox> fresh_boxes;
  if (config_.feedback_enabled) {
    for (const auto& [id, fb] : feedback_) {
      if (fusion_local - fb.receipt <= config_.staleness_us && fusion_local >= fb.receipt) {
        fresh.push_back(&fb.person);
        fresh_boxes.push_back(fb.person.bbox);
      }
    }
  }
  std::vector<int> fb_for_obs(observations.size(), -1);
  if (!fresh.empty()) {
    std::vector<BBox> det_boxes;
    for (const auto& o : observations) det_boxes.push_back(o.bbox);
    for (const auto& [f, d] : match_feedback_to_detection(fresh_boxes, det_boxes, config_.min_iou)) {
      fb_for_obs[static_cast<std::size_t>(d)] = f;
    }
  }

  PoseMessage msg;
  msg.camera_id = camera_.id;
  msg.capture_timestamp_us = now_local;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    auto& obs = observations[i];
    const Heatmap* source = &obs.heatmap;
    if (fb_for_obs[i] >= 0) {
      const FeedbackPerson& fb = *fresh[static_cast<std::size_t>(fb_for_obs[i])];
      Heatmap& fb_map = fb_scratch_;
      fb_map.reset(obs.heatmap.joints(), obs.heatmap.width(), obs.heatmap.height(), obs.heatmap.origin(),
                   obs.heatmap.stride());
      std::vector<Gaussian2D> blobs(static_cast<std::size_t>(joint_count_));
      std::vector<double> amplitudes(static_cast<std::size_t>(joint_count_), 0.0);
      for (std::size_t j = 0; j < std::min(fb.joints.size(), blobs.size()); ++j) {
        const auto& fj = fb.joints[j];
        if (!fj.valid) continue;
        blobs[j].mean = {fj.u, fj.v};
        blobs[j].cov << fj.cov[0], fj.cov[1], fj.cov[1], fj.cov[2];
        blobs[j].cov.diagonal().array() += config_.feedback_kernel_sigma_px * config_.feedback_kernel_sigma_px;
        amplitudes[j] = config_.feedback_amplitude;
      }
      kernels::parallel::render_all(fb_map, blobs, amplitudes);
      fuse(obs.heatmap, fb_map, config_.gains, config_.saturation, fused_scratch_);
      source = &fused_scratch_;
      ++stats_.feedback_applied;
    }

    const auto detections = kernels::parallel::extract_all(*source, config_.extraction);
    WirePerson wp;
    wp.local_track_id = obs.person_id;
    wp.bbox = obs.bbox;
    for (const auto& d : detections) {
      wp.joints.push_back(quantize_joint(d));
      const auto& w = wp.joints.back();
      if (!w.valid) continue;
      // The published box must contain every valid joint.
      const double x1 = std::max(wp.bbox.x + wp.bbox.w, w.u);
      const double y1 = std::max(wp.bbox.y + wp.bbox.h, w.v);
      wp.bbox.x = std::min(wp.bbox.x, w.u);
      wp.bbox.y = std::min(wp.bbox.y, w.v);
      wp.bbox.w = x1 - wp.bbox.x;
      wp.bbox.h = y1 - wp.bbox.y;
    }
    wp.bbox = quantize_bbox(wp.bbox);
    msg.persons.push_back(std::move(wp));
    last_bbox_[obs.person_id] = obs.bbox;
    ++stats_.persons_published;
  }
  return msg;
}

void SensorNode::receive_feedback(const FeedbackMessage& msg, Micros receipt_local_us) {
  if (msg.camera_id != camera_.id) return;
  ++stats_.feedback_messages;
  for (const auto& p : msg.persons) {
    feedback_[p.person_id] = StoredFeedback{p, receipt_local_us};
  }
  // Forget entries that can no longer be used.
  std::erase_if(feedback_, [&](const auto& kv) { return receipt_local_us - kv.second.receipt > config_.staleness_us; });
}

}  // namespace mvpose
