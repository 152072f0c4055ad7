#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvpose/error.hpp"
#include "mvpose/sensor.hpp"

namespace mvpose {

bool OcclusionEvent::applies(int person, int camera, int joint, double t) const {
  if (person != person_id) return false;
  if (camera_id >= 0 && camera != camera_id) return false;
  if (t < t0 || t >= t1) return false;
  return std::find(joints.begin(), joints.end(), joint) != joints.end();
}

std::vector<GroundTruthPerson> SceneScript::at(double t) const {
  std::vector<GroundTruthPerson> out;
  for (const auto& p : persons) {
    const auto& kf = p.keyframes;
    if (kf.empty() || t < kf.front().t - 1e-9 || t > kf.back().t + 1e-9) continue;
    GroundTruthPerson g;
    g.id = p.id;
    auto hi = std::upper_bound(kf.begin(), kf.end(), t, [](double v, const Keyframe& k) { return v < k.t; });
    if (hi == kf.begin()) {
      g.joints = kf.front().joints;
    } else if (hi == kf.end()) {
      g.joints = kf.back().joints;
    } else {
      const auto lo = std::prev(hi);
      const double span = hi->t - lo->t;
      const double w = span > 0.0 ? (t - lo->t) / span : 0.0;
      g.joints.resize(lo->joints.size());
      for (std::size_t j = 0; j < g.joints.size(); ++j) {
        g.joints[j] = (1.0 - w) * lo->joints[j] + w * hi->joints[j];
      }
    }
    out.push_back(std::move(g));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

int SceneScript::frame_count() const {
  return static_cast<int>(std::floor(duration_s * fps + 1e-9));
}

Micros SceneScript::frame_time_us(int k) const {
  return static_cast<Micros>(std::llround(frame_time(k) * 1e6));
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::SchemaViolation, "scene: " + what); }

Vec3 vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) bad("joint positions are [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

SceneScript parse_scene(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) bad("document must be an object");
  SceneScript s;
  try {
    s.fps = doc.at("fps").get<double>();
    s.duration_s = doc.at("duration_s").get<double>();
    for (const auto& pj : doc.at("persons")) {
      ScriptedPerson p;
      p.id = pj.at("id").get<int>();
      for (const auto& kj : pj.at("keyframes")) {
        Keyframe k;
        k.t = kj.at("t").get<double>();
        for (const auto& x : kj.at("joints")) k.joints.push_back(vec3(x));
        if (!p.keyframes.empty() && k.t <= p.keyframes.back().t) bad("keyframes must have increasing t");
        if (!p.keyframes.empty() && k.joints.size() != p.keyframes.back().joints.size()) bad("keyframe joint counts differ");
        p.keyframes.push_back(std::move(k));
      }
      s.persons.push_back(std::move(p));
    }
    if (doc.contains("occlusions")) {
      for (const auto& oj : doc.at("occlusions")) {
        OcclusionEvent e;
        e.person_id = oj.at("person").get<int>();
        e.camera_id = oj.value("camera", -1);
        e.joints = oj.at("joints").get<std::vector<int>>();
        e.t0 = oj.at("t0").get<double>();
        e.t1 = oj.at("t1").get<double>();
        const auto mode = oj.at("mode").get<std::string>();
        if (mode == "hidden") {
          e.mode = OcclusionMode::Hidden;
        } else if (mode == "displaced") {
          e.mode = OcclusionMode::Displaced;
          const auto& off = oj.at("offset_px");
          e.offset_px = {off.at(0).get<double>(), off.at(1).get<double>()};
          e.amplitude = oj.at("amplitude").get<double>();
        } else {
          bad("unknown occlusion mode '" + mode + "'");
        }
        s.occlusions.push_back(std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    bad(e.what());
  }
  if (!(s.fps > 0.0) || !(s.duration_s > 0.0)) bad("fps and duration_s must be positive");
  return s;
}

SceneScript load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open scene file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

std::string scene_to_json(const SceneScript& scene) {
  nlohmann::ordered_json doc;
  doc["fps"] = scene.fps;
  doc["duration_s"] = scene.duration_s;
  doc["persons"] = nlohmann::ordered_json::array();
  for (const auto& p : scene.persons) {
    nlohmann::ordered_json kfs = nlohmann::ordered_json::array();
    for (const auto& k : p.keyframes) {
      nlohmann::ordered_json joints = nlohmann::ordered_json::array();
      for (const auto& x : k.joints) joints.push_back({x.x(), x.y(), x.z()});
      kfs.push_back({{"t", k.t}, {"joints", joints}});
    }
    doc["persons"].push_back({{"id", p.id}, {"keyframes", kfs}});
  }
  doc["occlusions"] = nlohmann::ordered_json::array();
  for (const auto& e : scene.occlusions) {
    nlohmann::ordered_json o = {{"person", e.person_id}, {"camera", e.camera_id}, {"joints", e.joints},
                                {"t0", e.t0},           {"t1", e.t1}};
    if (e.mode == OcclusionMode::Hidden) {
      o["mode"] = "hidden";
    } else {
      o["mode"] = "displaced";
      o["offset_px"] = {e.offset_px.x(), e.offset_px.y()};
      o["amplitude"] = e.amplitude;
    }
    doc["occlusions"].push_back(o);
  }
  return doc.dump();
}

}  // namespace mvpose
