#include "mvpose/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "mvpose/error.hpp"

namespace mvpose {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(Errc::ConfigError, what); }

// Object access that rejects unknown keys, so typos in scenario files fail loudly.
class Obj {
 public:
  Obj(const json& j, std::string where, std::initializer_list<const char*> keys) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) config_error(where_ + " must be an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items()) {
      if (!allowed.count(k)) config_error(where_ + ": unknown key '" + k + "'");
    }
  }

  bool has(const char* k) const { return j_.contains(k); }
  const json& at(const char* k) const { return j_.at(k); }

  template <typename T>
  void get(const char* k, T& out) const {
    if (!j_.contains(k)) return;
    try {
      out = j_.at(k).get<T>();
    } catch (const json::exception& e) {
      config_error(where_ + "." + k + ": " + e.what());
    }
  }

 private:
  const json& j_;
  std::string where_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

LatencyModel latency_from(const json& j, const std::string& where, LatencyModel m) {
  const Obj o(j, where, {"fixed_us", "jitter_us", "loss"});
  o.get("fixed_us", m.fixed_us);
  o.get("jitter_us", m.jitter_us);
  o.get("loss", m.loss);
  return m;
}

ojson latency_json(const LatencyModel& m) {
  return {{"fixed_us", m.fixed_us}, {"jitter_us", m.jitter_us}, {"loss", m.loss}};
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix(splitmix(seed) ^ stream); }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::ConfigError, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void ScenarioConfig::validate() const {
  try {
    check_gains(sensor.gains);
    observation.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  if (sync_window_us < 0 || max_wait_us < 0) config_error("sync window and max wait must be non-negative");
  if (sensor.processing_us < 0 || backend_processing_us < 0) config_error("processing times must be non-negative");
  if (uplink.loss < 0.0 || uplink.loss > 1.0 || downlink.loss < 0.0 || downlink.loss > 1.0) {
    config_error("loss probabilities must lie in [0, 1]");
  }
  if (sensor.layout.crop_px <= 0 || sensor.layout.cells <= 0) config_error("heatmap layout must be positive");
  if (duration_s < 0.0) config_error("duration must be non-negative");
  if (jdr_threshold_px < 0.0) config_error("jdr threshold must be non-negative");
}

ScenarioConfig parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    config_error(std::string("scenario is not valid JSON: ") + e.what());
  }
  ScenarioConfig c;
  const Obj top(doc, "scenario",
                {"name", "cameras", "scene", "topology", "observation", "heatmap", "extraction", "gains", "saturation",
                 "feedback", "feedback_sensor", "transport", "uplink", "downlink", "sync", "timing", "backend", "seed",
                 "duration_s", "jdr_threshold_px", "output"});
  top.get("name", c.name);
  std::string path;
  top.get("cameras", path);
  c.cameras = resolve(base_dir, path);
  path.clear();
  top.get("scene", path);
  c.scene = resolve(base_dir, path);
  path.clear();
  top.get("topology", path);
  c.topology = resolve(base_dir, path);
  path.clear();
  top.get("output", path);
  c.output = resolve(base_dir, path);

  if (top.has("observation")) {
    const Obj o(top.at("observation"), "observation",
                {"blob_sigma_px", "peak_jitter_sigma_px", "confidence_range", "false_negative_rate", "clock_offset_us",
                 "clock_drift_ppm"});
    o.get("blob_sigma_px", c.observation.blob_sigma_px);
    o.get("peak_jitter_sigma_px", c.observation.peak_jitter_sigma_px);
    o.get("false_negative_rate", c.observation.false_negative_rate);
    if (o.has("confidence_range")) {
      std::vector<double> r;
      o.get("confidence_range", r);
      if (r.size() != 2) config_error("observation.confidence_range must be [lo, hi]");
      c.observation.confidence_lo = r[0];
      c.observation.confidence_hi = r[1];
    }
    if (o.has("clock_offset_us")) {
      if (o.at("clock_offset_us").is_array()) {
        o.get("clock_offset_us", c.clock_offsets_us);
      } else {
        o.get("clock_offset_us", c.observation.clock_offset_us);
      }
    }
    if (o.has("clock_drift_ppm")) {
      if (o.at("clock_drift_ppm").is_array()) {
        o.get("clock_drift_ppm", c.clock_drift_ppm);
      } else {
        o.get("clock_drift_ppm", c.observation.clock_drift_ppm);
      }
    }
  }
  if (top.has("heatmap")) {
    const Obj o(top.at("heatmap"), "heatmap", {"crop_px", "cells"});
    o.get("crop_px", c.sensor.layout.crop_px);
    o.get("cells", c.sensor.layout.cells);
  }
  if (top.has("extraction")) {
    const Obj o(top.at("extraction"), "extraction", {"confidence_threshold", "contribution_threshold"});
    o.get("confidence_threshold", c.sensor.extraction.confidence_threshold);
    o.get("contribution_threshold", c.sensor.extraction.contribution_threshold);
  }
  if (top.has("gains")) {
    const Obj o(top.at("gains"), "gains", {"alpha", "beta"});
    o.get("alpha", c.sensor.gains.alpha);
    o.get("beta", c.sensor.gains.beta);
  }
  if (top.has("saturation")) {
    std::string s;
    top.get("saturation", s);
    if (s == "clamp") {
      c.sensor.saturation = Saturation::Clamp;
    } else if (s == "normalize") {
      c.sensor.saturation = Saturation::Normalize;
    } else {
      config_error("saturation must be clamp or normalize");
    }
  }
  top.get("feedback", c.feedback);
  if (top.has("feedback_sensor")) {
    const Obj o(top.at("feedback_sensor"), "feedback_sensor", {"staleness_us", "min_iou", "amplitude", "kernel_sigma_px"});
    o.get("staleness_us", c.sensor.staleness_us);
    o.get("min_iou", c.sensor.min_iou);
    o.get("amplitude", c.sensor.feedback_amplitude);
    o.get("kernel_sigma_px", c.sensor.feedback_kernel_sigma_px);
  }
  if (top.has("transport")) {
    std::string t;
    top.get("transport", t);
    if (t == "loopback") {
      c.transport = ChannelKind::Loopback;
    } else if (t == "socket") {
      c.transport = ChannelKind::Socket;
    } else {
      config_error("transport must be loopback or socket");
    }
  }
  if (top.has("uplink")) c.uplink = latency_from(top.at("uplink"), "uplink", c.uplink);
  if (top.has("downlink")) c.downlink = latency_from(top.at("downlink"), "downlink", c.downlink);
  if (top.has("sync")) {
    const Obj o(top.at("sync"), "sync", {"window_us", "max_wait_us"});
    o.get("window_us", c.sync_window_us);
    o.get("max_wait_us", c.max_wait_us);
  }
  if (top.has("timing")) {
    const Obj o(top.at("timing"), "timing", {"sensor_processing_us", "backend_processing_us"});
    o.get("sensor_processing_us", c.sensor.processing_us);
    o.get("backend_processing_us", c.backend_processing_us);
  }
  if (top.has("backend")) {
    const Obj o(top.at("backend"), "backend",
                {"match_threshold_px", "confidence_threshold", "track_gate_m", "track_expiry", "bbox_pad"});
    o.get("match_threshold_px", c.backend.matching.threshold_px);
    o.get("confidence_threshold", c.backend.confidence_threshold);
    c.backend.matching.confidence_threshold = c.backend.confidence_threshold;
    o.get("track_gate_m", c.backend.track_gate_m);
    o.get("track_expiry", c.backend.track_expiry);
    o.get("bbox_pad", c.backend.bbox_pad);
  }
  top.get("seed", c.seed);
  top.get("duration_s", c.duration_s);
  top.get("jdr_threshold_px", c.jdr_threshold_px);
  c.validate();
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_file(path), path.parent_path());
}

std::string scenario_to_json(const ScenarioConfig& c) {
  ojson doc;
  doc["name"] = c.name;
  doc["cameras"] = c.cameras.generic_string();
  doc["scene"] = c.scene.generic_string();
  if (!c.topology.empty()) doc["topology"] = c.topology.generic_string();
  ojson obs = {{"blob_sigma_px", c.observation.blob_sigma_px},
               {"peak_jitter_sigma_px", c.observation.peak_jitter_sigma_px},
               {"confidence_range", {c.observation.confidence_lo, c.observation.confidence_hi}},
               {"false_negative_rate", c.observation.false_negative_rate}};
  if (c.clock_offsets_us.empty()) {
    obs["clock_offset_us"] = c.observation.clock_offset_us;
  } else {
    obs["clock_offset_us"] = c.clock_offsets_us;
  }
  if (c.clock_drift_ppm.empty()) {
    obs["clock_drift_ppm"] = c.observation.clock_drift_ppm;
  } else {
    obs["clock_drift_ppm"] = c.clock_drift_ppm;
  }
  doc["observation"] = obs;
  doc["heatmap"] = {{"crop_px", c.sensor.layout.crop_px}, {"cells", c.sensor.layout.cells}};
  doc["extraction"] = {{"confidence_threshold", c.sensor.extraction.confidence_threshold},
                       {"contribution_threshold", c.sensor.extraction.contribution_threshold}};
  doc["gains"] = {{"alpha", c.sensor.gains.alpha}, {"beta", c.sensor.gains.beta}};
  doc["saturation"] = c.sensor.saturation == Saturation::Clamp ? "clamp" : "normalize";
  doc["feedback"] = c.feedback;
  doc["feedback_sensor"] = {{"staleness_us", c.sensor.staleness_us},
                            {"min_iou", c.sensor.min_iou},
                            {"amplitude", c.sensor.feedback_amplitude},
                            {"kernel_sigma_px", c.sensor.feedback_kernel_sigma_px}};
  doc["transport"] = c.transport == ChannelKind::Socket ? "socket" : "loopback";
  doc["uplink"] = latency_json(c.uplink);
  doc["downlink"] = latency_json(c.downlink);
  doc["sync"] = {{"window_us", c.sync_window_us}, {"max_wait_us", c.max_wait_us}};
  doc["timing"] = {{"sensor_processing_us", c.sensor.processing_us},
                   {"backend_processing_us", c.backend_processing_us}};
  doc["backend"] = {{"match_threshold_px", c.backend.matching.threshold_px},
                    {"confidence_threshold", c.backend.confidence_threshold},
                    {"track_gate_m", c.backend.track_gate_m},
                    {"track_expiry", c.backend.track_expiry},
                    {"bbox_pad", c.backend.bbox_pad}};
  doc["seed"] = c.seed;
  doc["duration_s"] = c.duration_s;
  doc["jdr_threshold_px"] = c.jdr_threshold_px;
  if (!c.output.empty()) doc["output"] = c.output.generic_string();
  return doc.dump(2) + "\n";
}

ScenarioInputs load_inputs(const ScenarioConfig& cfg) {
  for (const auto* p : {&cfg.cameras, &cfg.scene}) {
    if (p->empty() || !std::filesystem::exists(*p)) config_error("missing input file '" + p->string() + "'");
  }
  if (!cfg.topology.empty() && !std::filesystem::exists(cfg.topology)) {
    config_error("missing topology file '" + cfg.topology.string() + "'");
  }
  try {
    ScenarioInputs in;
    in.cameras = load_cameras(cfg.cameras);
    in.scene = load_scene(cfg.scene);
    in.topology = cfg.topology.empty() ? SkeletonTopology::default17() : load_topology(cfg.topology);
    const auto n = in.cameras.size();
    if ((!cfg.clock_offsets_us.empty() && cfg.clock_offsets_us.size() != n) ||
        (!cfg.clock_drift_ppm.empty() && cfg.clock_drift_ppm.size() != n)) {
      config_error("per-camera clock arrays must have one entry per camera");
    }
    return in;
  } catch (const Error& e) {
    config_error(e.what());
  }
}

namespace {

struct QueuedSet {
  FrameSet fs;
  Micros ready = 0;
};

// Accumulates every metric of one run.
class Evaluator {
 public:
  Evaluator(const SkeletonTopology& topo, const std::vector<Camera>& cams, int frames, double threshold_px)
      : topo_(topo), cams_(cams), threshold_(threshold_px), jdr_frame_(frames), mpjpe_frame_(frames),
        out_frame_(frames, 0), gt_frame_(frames, 0) {}

  void sensor_frame(int k, const Camera& cam, const std::vector<GroundTruthPerson>& gt, const Pose2DSet& est) {
    const std::size_t J = static_cast<std::size_t>(topo_.joint_count());
    for (const auto& person : gt) {
      std::vector<Vec2> uv(J, Vec2::Zero());
      auto visible = std::make_unique<bool[]>(J);
      bool any = false;
      for (std::size_t j = 0; j < J; ++j) {
        visible[j] = false;
        if (cam.depth(person.joints[j]) <= 1e-6) continue;
        uv[j] = project(cam, person.joints[j]);
        visible[j] = cam.in_image(uv[j]);
        any = any || visible[j];
      }
      if (!any) continue;
      const std::span<const bool> vis(visible.get(), J);
      const double thr = threshold_ > 0.0 ? threshold_ : head_threshold(uv, vis, topo_);
      const PersonDetection2D* match = nullptr;
      for (const auto& p : est.persons) {
        if (p.local_track_id == person.id) match = &p;
      }
      const ClassAccumulator a = jdr(match, uv, vis, topo_, thr);
      jdr_.merge(a);
      jdr_frame_[static_cast<std::size_t>(k)].merge(a);
    }
  }

  void skeletons(int k, const std::vector<GroundTruthPerson>& gt_people, Micros t,
                 const std::vector<Skeleton3D>& est) {
    const auto ku = static_cast<std::size_t>(k);
    gt_frame_[ku] = static_cast<int>(gt_people.size());
    out_frame_[ku] = static_cast<int>(est.size());
    std::vector<Skeleton3D> gt;
    for (const auto& p : gt_people) gt.push_back(synth_gt(p, t));

    // Greedy one-to-one assignment by mean joint distance.
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t e = 0; e < est.size(); ++e) {
      for (std::size_t g = 0; g < gt.size(); ++g) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t j = 0; j < gt[g].joints.size() && j < est[e].joints.size(); ++j) {
          if (!est[e].joints[j].valid) continue;
          sum += (est[e].joints[j].position.mean - gt[g].joints[j].position.mean).norm();
          ++n;
        }
        if (n > 0 && sum / n < 0.5) pairs.emplace_back(sum / n, e, g);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<int> est_of_gt(gt.size(), -1);
    std::vector<bool> used(est.size(), false);
    for (const auto& [d, e, g] : pairs) {
      if (used[e] || est_of_gt[g] >= 0) continue;
      used[e] = true;
      est_of_gt[g] = static_cast<int>(e);
    }

    Skeleton3D missing;
    missing.joints.resize(static_cast<std::size_t>(topo_.joint_count()));
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (est_of_gt[g] < 0) {
        merge(pcp_, pcp(missing, gt[g], topo_));
        continue;
      }
      const Skeleton3D& e = est[static_cast<std::size_t>(est_of_gt[g])];
      merge(pcp_, pcp(e, gt[g], topo_));
      try {
        const ClassAccumulator a = mpjpe(e, gt[g], topo_);
        mpjpe_.merge(a);
        mpjpe_frame_[ku].merge(a);
      } catch (const Error&) {
      }
      for (const auto& cam : cams_) {
        for (std::size_t j = 0; j < e.joints.size(); ++j) {
          const Vec3& xg = gt[g].joints[j].position.mean;
          if (!e.joints[j].valid || cam.depth(xg) <= 1e-6 || cam.depth(e.joints[j].position.mean) <= 1e-6) continue;
          const Vec2 ug = project(cam, xg);
          if (!cam.in_image(ug)) continue;
          reproj_.add(topo_.joint_class(static_cast<int>(j)), (project(cam, e.joints[j].position.mean) - ug).norm());
        }
      }
      const int gt_id = gt_people[g].id;
      const auto it = identity_.find(gt_id);
      if (it != identity_.end() && it->second != e.person_id) ++id_switches_;
      identity_[gt_id] = e.person_id;
    }
  }

  void finish(MetricsReport& r, double fps) const {
    r.mpjpe_mm = mpjpe_.row();
    r.jdr_pct = jdr_.row();
    r.reprojection_px = reproj_.row();
    r.jdr_threshold_px = threshold_;
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t b = 0; b < topo_.bones().size(); ++b) {
      const auto& bone = topo_.bones()[b];
      r.limbs.push_back(topo_.joint_names()[static_cast<std::size_t>(bone.parent)] + "-" +
                        topo_.joint_names()[static_cast<std::size_t>(bone.child)]);
      const std::size_t c = pcp_.correct.empty() ? 0 : pcp_.correct[b];
      const std::size_t n = pcp_.total.empty() ? 0 : pcp_.total[b];
      r.pcp_pct.push_back(n ? Cell(100.0 * static_cast<double>(c) / static_cast<double>(n)) : Cell{});
      correct += c;
      total += n;
    }
    if (total) r.pcp_avg = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
    r.id_switches = id_switches_;
    for (std::size_t k = 0; k < jdr_frame_.size(); ++k) {
      FramePoint p;
      p.frame = static_cast<int>(k);
      p.t = static_cast<double>(k) / fps;
      p.mpjpe_mm = mpjpe_frame_[k].row()[6];
      p.jdr_pct = jdr_frame_[k].row()[6];
      p.persons_out = out_frame_[k];
      p.persons_gt = gt_frame_[k];
      r.series.push_back(p);
    }
  }

 private:
  static Skeleton3D synth_gt(const GroundTruthPerson& p, Micros t) {
    Skeleton3D s;
    s.person_id = p.id;
    s.timestamp = t;
    for (const auto& x : p.joints) s.joints.push_back({Gaussian3D{x, Mat3::Zero()}, true, Vec3::Zero(), false});
    return s;
  }

  const SkeletonTopology& topo_;
  const std::vector<Camera>& cams_;
  double threshold_;
  ClassAccumulator jdr_, mpjpe_, reproj_;
  PcpResult pcp_;
  std::vector<ClassAccumulator> jdr_frame_, mpjpe_frame_;
  std::vector<int> out_frame_, gt_frame_;
  std::map<int, int> identity_;
  std::size_t id_switches_ = 0;
};

}  // namespace

RunOutput run_scenario(const ScenarioConfig& cfg, const ScenarioInputs& in) {
  const auto wall0 = std::chrono::steady_clock::now();
  cfg.validate();
  const SkeletonTopology& topo = in.topology;
  const int J = topo.joint_count();
  const SceneScript& scene = in.scene;
  for (const auto& p : scene.persons) {
    for (const auto& k : p.keyframes) {
      if (static_cast<int>(k.joints.size()) != J) config_error("scene joint count does not match the topology");
    }
  }
  std::vector<Camera> cams = in.cameras;
  std::sort(cams.begin(), cams.end(), [](const Camera& a, const Camera& b) { return a.id < b.id; });
  const auto n = cams.size();
  if (n < 2) config_error("at least two cameras are required");
  if (!cfg.clock_offsets_us.empty() && cfg.clock_offsets_us.size() != n) config_error("one clock offset per camera");
  if (!cfg.clock_drift_ppm.empty() && cfg.clock_drift_ppm.size() != n) config_error("one clock drift per camera");

  const double duration = cfg.duration_s > 0.0 ? cfg.duration_s : scene.duration_s;
  const int frames = static_cast<int>(std::floor(duration * scene.fps + 1e-9));
  const auto period = static_cast<Micros>(std::llround(1e6 / scene.fps));
  const Micros window_us = cfg.sync_window_us > 0 ? cfg.sync_window_us : period / 2;
  const Micros max_wait_us = cfg.max_wait_us > 0 ? cfg.max_wait_us : period;

  // Clocks must stay inside the synchronization window over the whole run.
  std::vector<ObservationModel> models(n, cfg.observation);
  Micros lo = 0;
  Micros hi = 0;
  for (std::size_t c = 0; c < n; ++c) {
    models[c].occlusions = scene.occlusions;
    if (!cfg.clock_offsets_us.empty()) models[c].clock_offset_us = cfg.clock_offsets_us[c];
    if (!cfg.clock_drift_ppm.empty()) models[c].clock_drift_ppm = cfg.clock_drift_ppm[c];
    const auto drift = static_cast<Micros>(std::ceil(std::abs(models[c].clock_drift_ppm) * duration));
    lo = std::min(lo, models[c].clock_offset_us - drift);
    hi = std::max(hi, models[c].clock_offset_us + drift);
  }
  if (2 * (hi - lo) >= window_us) config_error("clock offsets and drift exceed half the sync window");

  SensorConfig sensor_cfg = cfg.sensor;
  sensor_cfg.feedback_enabled = cfg.feedback;
  std::vector<SensorNode> sensors;
  std::vector<std::unique_ptr<Channel>> up;
  std::vector<std::unique_ptr<Channel>> down;
  std::map<int, std::size_t> index_of;
  for (std::size_t c = 0; c < n; ++c) {
    sensors.emplace_back(cams[c], models[c], sensor_cfg, derive_seed(cfg.seed, c), J);
    up.push_back(make_channel(cfg.transport, cfg.uplink, derive_seed(cfg.seed, 1000 + c)));
    down.push_back(make_channel(cfg.transport, cfg.downlink, derive_seed(cfg.seed, 2000 + c)));
    index_of[cams[c].id] = c;
  }

  Synchronizer sync(static_cast<int>(n), window_us, max_wait_us);
  Backend backend(cams, topo, cfg.backend);
  DelayEstimator delay;
  Evaluator eval(topo, cams, frames, cfg.jdr_threshold_px);

  RunOutput out;
  MetricsReport& report = out.report;
  report.scenario = cfg.name;
  report.feedback = cfg.feedback;
  report.seed = cfg.seed;
  auto& ts = report.transport;

  std::map<std::pair<int, Micros>, int> frame_of;
  std::vector<int> next_frame(n, 0);
  std::vector<bool> failed(n, false);
  std::deque<QueuedSet> queue;
  Micros busy_until = 0;
  std::size_t person_msgs = 0;
  std::size_t person_bytes = 0;
  double latency_sum_ms = 0.0;

  auto fail = [&](const std::string& what) {
    report.partial = true;
    report.failures.push_back(what);
  };

  auto deliver_feedback = [&](std::size_t c, Micros until) {
    for (auto& d : down[c]->receive(until)) {
      try {
        const FeedbackMessage m = decode_feedback(d.payload, J);
        sensors[c].receive_feedback(m, sensors[c].local_time_us(static_cast<double>(d.received_us) * 1e-6));
      } catch (const Error&) {
        ++ts.decode_rejected;
      }
    }
  };

  auto process = [&](const QueuedSet& q, Micros start) {
    const FrameSet& fs = q.fs;
    ++ts.framesets;
    if (static_cast<std::size_t>(fs.entries.size()) < n) ++ts.incomplete_framesets;
    if (!fs.processable()) return;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Skeleton3D> skels;
    try {
      skels = backend.process_frameset(fs);
    } catch (const std::exception& e) {
      fail(std::string("backend: ") + e.what());
      return;
    }
    out.frameset_wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    const Micros done = start + cfg.backend_processing_us;
    busy_until = done;
    out.outputs.push_back({done, fs.timestamp, skels});
    report.skeletons += skels.size();
    latency_sum_ms += static_cast<double>(done - fs.timestamp) * 1e-3;

    const auto& first = *fs.entries.begin();
    const auto it = frame_of.find({first.first, first.second.capture_timestamp});
    if (it != frame_of.end()) {
      const int k = it->second;
      eval.skeletons(k, scene.at(scene.frame_time(k)), fs.timestamp, skels);
    }

    delay.add(fs.timestamp, done);
    if (cfg.feedback && !skels.empty()) {
      const Micros emit = std::max(done, fs.timestamp);
      for (const auto& m : backend.make_feedback(skels, delay.seconds(), fs.timestamp, emit)) {
        const std::size_t c = index_of.at(m.camera_id);
        if (down[c]->closed()) continue;
        down[c]->send(encode(m), done);
      }
    }
  };

  constexpr Micros kTick = 1000;
  const Micros last_frame_us = frames > 0 ? scene.frame_time_us(frames - 1) : 0;
  const Micros stop = last_frame_us + cfg.sensor.processing_us + max_wait_us + cfg.uplink.fixed_us +
                      cfg.uplink.jitter_us + 2 * cfg.backend_processing_us + 1'000'000;
  for (Micros now = 0; now <= stop; now += kTick) {
    for (std::size_t c = 0; c < n; ++c) {
      if (failed[c]) continue;
      // A frame is sensed once its inference would have finished, so every
      // feedback message that arrived in the meantime is available to it.
      while (next_frame[c] < frames && scene.frame_time_us(next_frame[c]) + cfg.sensor.processing_us <= now) {
        const int k = next_frame[c]++;
        const Micros f_us = scene.frame_time_us(k);
        deliver_feedback(c, f_us + cfg.sensor.processing_us);
        try {
          const auto gt = scene.at(scene.frame_time(k));
          const PoseMessage msg = sensors[c].sense_and_publish(gt, scene.frame_time(k));
          frame_of[{cams[c].id, msg.capture_timestamp_us}] = k;
          eval.sensor_frame(k, cams[c], gt, to_pose2d(msg));
          std::string payload = encode(msg);
          if (!msg.persons.empty()) {
            person_msgs += msg.persons.size();
            person_bytes += payload.size();
          }
          up[c]->send(std::move(payload), f_us + cfg.sensor.processing_us);
        } catch (const std::exception& e) {
          failed[c] = true;
          fail("sensor " + std::to_string(cams[c].id) + ": " + e.what());
          up[c]->close();
          break;
        }
      }
      if (!failed[c]) deliver_feedback(c, now);
    }

    std::vector<std::tuple<Micros, std::size_t, std::string>> arrivals;
    for (std::size_t c = 0; c < n; ++c) {
      if (up[c]->closed()) continue;
      for (auto& d : up[c]->receive(now)) arrivals.emplace_back(d.received_us, c, std::move(d.payload));
    }
    std::stable_sort(arrivals.begin(), arrivals.end(),
                     [](const auto& a, const auto& b) { return std::tie(std::get<0>(a), std::get<1>(a)) <
                                                               std::tie(std::get<0>(b), std::get<1>(b)); });
    for (auto& [at, c, payload] : arrivals) {
      try {
        for (auto& fs : sync.push(to_pose2d(decode_pose(payload, J)), at)) queue.push_back({std::move(fs), at});
      } catch (const Error&) {
        ++ts.decode_rejected;
      }
    }
    for (auto& fs : sync.poll(now)) queue.push_back({std::move(fs), now});

    while (!queue.empty()) {
      const Micros start = std::max(queue.front().ready, busy_until);
      if (start > now) break;
      const QueuedSet q = std::move(queue.front());
      queue.pop_front();
      process(q, start);
    }
  }
  for (auto& fs : sync.flush()) queue.push_back({std::move(fs), stop});
  while (!queue.empty()) {
    const QueuedSet q = std::move(queue.front());
    queue.pop_front();
    process(q, std::max(q.ready, busy_until));
  }
  for (std::size_t c = 0; c < n; ++c) {
    up[c]->close();
    down[c]->close();
    const ChannelStats u = up[c]->stats();
    const ChannelStats d = down[c]->stats();
    ts.pose_sent += u.sent;
    ts.pose_lost += u.lost;
    ts.pose_bytes += u.bytes;
    ts.feedback_sent += d.sent;
    ts.feedback_lost += d.lost;
    ts.feedback_bytes += d.bytes;
  }
  ts.sync_dropped_late = sync.stats().dropped_late;
  if (person_msgs) {
    ts.bytes_per_person_per_s = static_cast<double>(person_bytes) / static_cast<double>(person_msgs) * scene.fps;
  }
  if (!out.outputs.empty()) ts.mean_capture_to_output_ms = latency_sum_ms / static_cast<double>(out.outputs.size());
  ts.delay_estimate_ms = delay.seconds() * 1e3;
  eval.finish(report, scene.fps);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return out;
}

RunOutput run_scenario(const ScenarioConfig& cfg) { return run_scenario(cfg, load_inputs(cfg)); }

void write_run(const RunOutput& run, const std::filesystem::path& dir) {
  emit_report(run.report, "json", dir);
  std::ofstream sk(dir / "skeletons.jsonl", std::ios::binary);
  if (!sk) throw Error(Errc::IoError, "cannot write " + (dir / "skeletons.jsonl").string());
  for (const auto& o : run.outputs) {
    for (const auto& s : o.skeletons) sk << encode_skeleton(s);
  }
  std::vector<double> ms = run.frameset_wall_ms;
  std::sort(ms.begin(), ms.end());
  ojson timing = {{"wall_seconds", run.wall_seconds}, {"framesets", ms.size()}};
  if (!ms.empty()) {
    double sum = 0.0;
    for (const double v : ms) sum += v;
    timing["frameset_ms_mean"] = sum / static_cast<double>(ms.size());
    timing["frameset_ms_p95"] = ms[std::min(ms.size() - 1, static_cast<std::size_t>(0.95 * ms.size()))];
    timing["frameset_ms_max"] = ms.back();
  }
  std::ofstream tf(dir / "timing.json", std::ios::binary);
  if (!tf) throw Error(Errc::IoError, "cannot write " + (dir / "timing.json").string());
  tf << timing.dump(2) << "\n";
}

}  // namespace mvpose
