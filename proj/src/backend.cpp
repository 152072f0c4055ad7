#include "mvpose/backend.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

#include <Eigen/Eigenvalues>

#include "mvpose/error.hpp"

namespace mvpose {

void DelayEstimator::add(Micros source_us, Micros emit_us) {
  add_seconds(static_cast<double>(emit_us - source_us) * 1e-6);
}

void DelayEstimator::add_seconds(double delay_s) {
  ++count_;
  if (count_ < kWarmup) {
    warmup_sum_ += delay_s;
  } else if (count_ == kWarmup) {
    ema_ = (warmup_sum_ + delay_s) / static_cast<double>(kWarmup);
  } else {
    ema_ += kFactor * (delay_s - ema_);
  }
}

double DelayEstimator::seconds() const { return count_ < kWarmup ? kDefaultSeconds : ema_; }

double estimate_delay(std::span<const double> samples_s) {
  DelayEstimator e;
  for (const double s : samples_s) e.add_seconds(s);
  return e.seconds();
}

namespace {

Mat2 psd_clamped(const Mat2& m) {
  const Mat2 s = symmetrized(m);
  Eigen::SelfAdjointEigenSolver<Mat2> es(s);
  const Vec2 ev = es.eigenvalues().cwiseMax(0.0);
  return symmetrized(Mat2(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose()));
}

Gaussian2D reproject(const Camera& cam, const Gaussian3D& x, const UTParams& ut) {
  // A point estimate stays a point: jittering a zero covariance would
  // invent spread that is not there.
  if (x.cov.isZero(0.0)) return {project(cam, x.mean), Mat2::Zero()};
  GaussianN in{x.mean, x.cov};
  const GaussianN out = unscented_transform(
      in, [&cam](const VecX& p) -> VecX { return project(cam, Vec3(p)); }, ut);
  return {Vec2(out.mean), psd_clamped(Mat2(out.cov))};
}

}  // namespace

std::vector<FeedbackMessage> make_feedback(std::span<const Skeleton3D> skeletons, std::span<const Camera> cams,
                                           double dt, Micros source_us, Micros emit_us, const BackendConfig& cfg) {
  std::vector<Skeleton3D> predicted;
  predicted.reserve(skeletons.size());
  for (const auto& s : skeletons) predicted.push_back(predict(s, std::max(0.0, dt), cfg.process_noise));

  std::vector<const Camera*> order;
  for (const auto& c : cams) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const Camera* a, const Camera* b) { return a->id < b->id; });

  std::vector<FeedbackMessage> out;
  for (const Camera* cam : order) {
    FeedbackMessage msg;
    msg.camera_id = cam->id;
    msg.source_timestamp_us = source_us;
    msg.emit_timestamp_us = emit_us;
    for (const auto& skel : predicted) {
      FeedbackPerson fp;
      fp.person_id = skel.person_id;
      fp.joints.resize(skel.joints.size());
      std::vector<Vec2> seen;
      for (std::size_t j = 0; j < skel.joints.size(); ++j) {
        const auto& js = skel.joints[j];
        if (!js.valid || cam->depth(js.position.mean) <= 1e-6) continue;
        Gaussian2D g;
        try {
          g = reproject(*cam, js.position, cfg.ut);
        } catch (const Error&) {
          continue;
        }
        if (!g.mean.allFinite() || !g.cov.allFinite() || !cam->in_image(g.mean)) continue;
        auto& fj = fp.joints[j];
        fj.valid = true;
        fj.u = g.mean.x();
        fj.v = g.mean.y();
        fj.cov = {g.cov(0, 0), g.cov(0, 1), g.cov(1, 1)};
        seen.push_back(g.mean);
      }
      if (seen.empty()) continue;
      fp.bbox = padded_extent(seen, cfg.bbox_pad);
      msg.persons.push_back(std::move(fp));
    }
    if (!msg.persons.empty()) out.push_back(std::move(msg));
  }
  return out;
}

Backend::Backend(std::vector<Camera> cams, SkeletonTopology topo, BackendConfig cfg)
    : cams_(std::move(cams)), topo_(std::move(topo)), cfg_(std::move(cfg)) {
  for (const auto& c : cams_) {
    c.validate();
    if (!cam_by_id_.emplace(c.id, c).second) throw Error(Errc::ConfigError, "duplicate camera id " + std::to_string(c.id));
  }
  if (cfg_.track_expiry < 1) throw Error(Errc::ConfigError, "track expiry must be at least one frame set");
}

namespace {

struct Candidate {
  std::vector<Gaussian3D> raw;
  std::vector<bool> valid;
  Vec3 root = Vec3::Zero();
  bool ok = false;
  std::string error;
};

struct Solved {
  Skeleton3D skel;
  bool ok = false;
  std::string error;
};

}  // namespace

std::vector<Skeleton3D> Backend::process_frameset(const FrameSet& fs) {
  stats_ = {};
  const int J = topo_.joint_count();
  const MatchResult match = match_across_views(fs, cam_by_id_, cfg_.matching);
  stats_.groups = match.groups.size();
  stats_.held_back = match.held_back.size();
  const int G = static_cast<int>(match.groups.size());

  // Triangulation, one person per iteration.
  std::vector<Candidate> cand(static_cast<std::size_t>(G));
#pragma omp parallel for schedule(dynamic)
  for (int g = 0; g < G; ++g) {
    auto& c = cand[static_cast<std::size_t>(g)];
    try {
      c.raw.assign(static_cast<std::size_t>(J), Gaussian3D{});
      c.valid.assign(static_cast<std::size_t>(J), false);
      Skeleton3D probe;
      probe.joints.resize(static_cast<std::size_t>(J));
      for (int j = 0; j < J; ++j) {
        std::vector<JointObservation> obs;
        for (const auto& m : match.groups[static_cast<std::size_t>(g)]) {
          const auto& person = fs.entries.at(m.camera_id).persons.at(static_cast<std::size_t>(m.person));
          if (j >= static_cast<int>(person.joints.size())) continue;
          const auto& d = person.joints[static_cast<std::size_t>(j)];
          if (!d.valid || d.confidence < cfg_.confidence_threshold) continue;
          obs.push_back({&cam_by_id_.at(m.camera_id), {d.position, d.cov}, d.confidence});
        }
        if (obs.size() < 2) continue;
        try {
          const Gaussian3D x = triangulate_joint(obs, cfg_.ut);
          if (!x.mean.allFinite() || !x.cov.allFinite()) continue;
          c.raw[static_cast<std::size_t>(j)] = x;
          c.valid[static_cast<std::size_t>(j)] = true;
          probe.joints[static_cast<std::size_t>(j)] = {x, true, Vec3::Zero(), false};
        } catch (const Error&) {
          // A degenerate joint is simply missing from this frame.
        }
      }
      c.ok = skeleton_root(probe, c.root);
      if (!c.ok) c.error = "no joint could be triangulated";
    } catch (const std::exception& e) {
      c.ok = false;
      c.error = e.what();
    }
  }

  // Track association by predicted root distance.
  std::map<int, Vec3> predicted_roots;
  std::map<int, Skeleton3D> predicted;
  for (const auto& [id, tr] : tracks_) {
    const double dt = std::max<double>(0.0, static_cast<double>(fs.timestamp - tr.last_update) * 1e-6);
    Skeleton3D p = predict(tr.last, dt, cfg_.process_noise);
    Vec3 root;
    if (skeleton_root(p, root)) predicted_roots[id] = root;
    predicted.emplace(id, std::move(p));
  }
  std::vector<std::tuple<double, int, int>> pairs;  // distance, track, group
  for (int g = 0; g < G; ++g) {
    if (!cand[static_cast<std::size_t>(g)].ok) continue;
    for (const auto& [id, root] : predicted_roots) {
      const double d = (root - cand[static_cast<std::size_t>(g)].root).norm();
      if (d < cfg_.track_gate_m) pairs.emplace_back(d, id, g);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> track_of(static_cast<std::size_t>(G), -1);
  std::map<int, bool> taken;
  for (const auto& [d, id, g] : pairs) {
    if (track_of[static_cast<std::size_t>(g)] >= 0 || taken[id]) continue;
    track_of[static_cast<std::size_t>(g)] = id;
    taken[id] = true;
  }
  std::vector<bool> is_new(static_cast<std::size_t>(G), false);
  for (int g = 0; g < G; ++g) {
    if (!cand[static_cast<std::size_t>(g)].ok || track_of[static_cast<std::size_t>(g)] >= 0) continue;
    track_of[static_cast<std::size_t>(g)] = next_id_++;
    is_new[static_cast<std::size_t>(g)] = true;
  }

  // Skeleton optimization, one person per iteration.
  std::vector<Solved> solved(static_cast<std::size_t>(G));
#pragma omp parallel for schedule(dynamic)
  for (int g = 0; g < G; ++g) {
    const auto& c = cand[static_cast<std::size_t>(g)];
    auto& s = solved[static_cast<std::size_t>(g)];
    if (!c.ok) continue;
    try {
      const int id = track_of[static_cast<std::size_t>(g)];
      const Skeleton3D* prior = is_new[static_cast<std::size_t>(g)] ? nullptr : &predicted.at(id);
      // std::vector<bool> is packed and cannot back a span.
      const auto flags = std::make_unique<bool[]>(static_cast<std::size_t>(J));
      std::copy(c.valid.begin(), c.valid.end(), flags.get());
      const FactorGraph graph = build_graph(c.raw, std::span<const bool>(flags.get(), static_cast<std::size_t>(J)), topo_);
      std::vector<Vec3> init(static_cast<std::size_t>(J), Vec3::Zero());
      for (int j = 0; j < J; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        init[ju] = c.raw[ju].mean;
        if (prior && prior->joints[ju].valid) init[ju] = prior->joints[ju].position.mean;
      }
      const OptimizeResult r = optimize(graph, init, cfg_.lm);

      Skeleton3D skel;
      skel.person_id = id;
      skel.timestamp = fs.timestamp;
      skel.joints.resize(static_cast<std::size_t>(J));
      for (int v = 0; v < graph.variable_count(); ++v) {
        auto& js = skel.joints[static_cast<std::size_t>(graph.joint_of_var[static_cast<std::size_t>(v)])];
        js.valid = true;
        js.position = r.joints[static_cast<std::size_t>(v)];
        js.position.cov = symmetrized(js.position.cov);
      }
      if (!is_new[static_cast<std::size_t>(g)]) {
        const Skeleton3D& prev = tracks_.at(id).last;
        if (prev.timestamp < skel.timestamp) skel = update_velocity(prev, skel);
      }
      s.skel = std::move(skel);
      s.ok = true;
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  }

  // Deterministic merge and track bookkeeping.
  std::vector<Skeleton3D> out;
  std::map<int, bool> updated;
  for (int g = 0; g < G; ++g) {
    const auto gu = static_cast<std::size_t>(g);
    if (!solved[gu].ok) {
      ++stats_.failures;
      const std::string& why = cand[gu].ok ? solved[gu].error : cand[gu].error;
      stats_.errors.push_back("group " + std::to_string(g) + ": " + why);
      continue;
    }
    const int id = track_of[gu];
    auto& tr = tracks_[id];
    tr.person_id = id;
    tr.last = solved[gu].skel;
    tr.last_update = fs.timestamp;
    tr.misses = 0;
    updated[id] = true;
    out.push_back(solved[gu].skel);
  }
  for (auto it = tracks_.begin(); it != tracks_.end();) {
    if (!updated[it->first] && ++it->second.misses >= cfg_.track_expiry) {
      it = tracks_.erase(it);
    } else {
      ++it;
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.person_id < b.person_id; });
  return out;
}

std::vector<FeedbackMessage> Backend::make_feedback(std::span<const Skeleton3D> skeletons, double dt, Micros source_us,
                                                    Micros emit_us) const {
  return mvpose::make_feedback(skeletons, cams_, dt, source_us, emit_us, cfg_);
}

}  // namespace mvpose
