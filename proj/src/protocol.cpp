#include "mvpose/protocol.hpp"

#include <cmath>

#include <json.hpp>

#include "mvpose/error.hpp"

namespace mvpose {

using ojson = nlohmann::ordered_json;

namespace {

[[noreturn]] void schema(const std::string& what) { throw Error(Errc::SchemaViolation, what); }
[[noreturn]] void invariant(const std::string& what) { throw Error(Errc::InvariantViolation, what); }

bool finite_all(std::initializer_list<double> vs) {
  for (double v : vs) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void check_cov(const std::array<double, 3>& c, const char* where) {
  if (!finite_all({c[0], c[1], c[2]})) invariant(std::string(where) + ": covariance not finite");
  const double scale = std::max({1.0, std::abs(c[0]), std::abs(c[2])});
  if (c[0] < -1e-9 * scale || c[2] < -1e-9 * scale || c[0] * c[2] - c[1] * c[1] < -1e-9 * scale * scale) {
    invariant(std::string(where) + ": covariance is not positive semi-definite");
  }
}

void check_bbox(const BBox& b) {
  if (!finite_all({b.x, b.y, b.w, b.h}) || b.w < 0.0 || b.h < 0.0) invariant("bbox must be finite with w, h >= 0");
}

// Strict object access: every key must be known, every required key present.
class Fields {
 public:
  Fields(const ojson& obj, std::initializer_list<const char*> required, std::initializer_list<const char*> optional,
         const char* where)
      : obj_(obj) {
    if (!obj.is_object()) schema(std::string(where) + " must be an object");
    for (const auto& [key, _] : obj.items()) {
      bool known = false;
      for (const char* k : required) known = known || key == k;
      for (const char* k : optional) known = known || key == k;
      if (!known) schema(std::string("unknown field '") + key + "' in " + where);
    }
    for (const char* k : required) {
      if (!obj.contains(k)) schema(std::string("missing field '") + k + "' in " + where);
    }
  }

  const ojson& operator[](const char* key) const { return obj_.at(key); }

 private:
  const ojson& obj_;
};

double num(const ojson& j, const char* what) {
  if (!j.is_number()) schema(std::string(what) + " must be a number");
  return j.get<double>();
}

std::int64_t integer(const ojson& j, const char* what) {
  if (!j.is_number_integer()) schema(std::string(what) + " must be an integer");
  return j.get<std::int64_t>();
}

std::array<double, 3> cov3(const ojson& j) {
  if (!j.is_array() || j.size() != 3) schema("cov must be [sxx, sxy, syy]");
  return {num(j[0], "cov"), num(j[1], "cov"), num(j[2], "cov")};
}

ojson bbox_json(const BBox& b) { return ojson::array({b.x, b.y, b.w, b.h}); }

BBox parse_bbox(const ojson& j) {
  if (!j.is_array() || j.size() != 4) schema("bbox must be [x, y, w, h]");
  return {num(j[0], "bbox"), num(j[1], "bbox"), num(j[2], "bbox"), num(j[3], "bbox")};
}

void check_joint_count(std::size_t n, int joint_count) {
  if (joint_count > 0 && n != static_cast<std::size_t>(joint_count)) {
    schema("joints array has " + std::to_string(n) + " entries, expected " + std::to_string(joint_count));
  }
}

PoseMessage pose_from_json(const ojson& doc, int joint_count) {
  Fields f(doc, {"type", "camera_id", "capture_timestamp_us", "persons"}, {}, "pose message");
  PoseMessage m;
  m.camera_id = static_cast<int>(integer(f["camera_id"], "camera_id"));
  m.capture_timestamp_us = integer(f["capture_timestamp_us"], "capture_timestamp_us");
  if (!f["persons"].is_array()) schema("persons must be an array");
  for (const auto& pj : f["persons"]) {
    Fields pf(pj, {"local_track_id", "bbox", "joints"}, {}, "person");
    WirePerson p;
    p.local_track_id = static_cast<int>(integer(pf["local_track_id"], "local_track_id"));
    p.bbox = parse_bbox(pf["bbox"]);
    if (!pf["joints"].is_array()) schema("joints must be an array");
    check_joint_count(pf["joints"].size(), joint_count);
    for (const auto& jj : pf["joints"]) {
      if (!jj.is_object() || !jj.contains("valid") || !jj["valid"].is_boolean()) schema("joint needs boolean 'valid'");
      WireJoint w;
      w.valid = jj["valid"].get<bool>();
      if (w.valid) {
        Fields jf(jj, {"valid", "u", "v", "confidence", "cov"}, {}, "joint");
        w.u = num(jf["u"], "u");
        w.v = num(jf["v"], "v");
        w.confidence = num(jf["confidence"], "confidence");
        w.cov = cov3(jf["cov"]);
      } else {
        Fields jf(jj, {"valid"}, {}, "invalid joint");
      }
      p.joints.push_back(w);
    }
    m.persons.push_back(std::move(p));
  }
  check_invariants(m, joint_count);
  return m;
}

FeedbackMessage feedback_from_json(const ojson& doc, int joint_count) {
  Fields f(doc, {"type", "camera_id", "source_timestamp_us", "emit_timestamp_us", "persons"}, {}, "feedback message");
  FeedbackMessage m;
  m.camera_id = static_cast<int>(integer(f["camera_id"], "camera_id"));
  m.source_timestamp_us = integer(f["source_timestamp_us"], "source_timestamp_us");
  m.emit_timestamp_us = integer(f["emit_timestamp_us"], "emit_timestamp_us");
  if (!f["persons"].is_array()) schema("persons must be an array");
  for (const auto& pj : f["persons"]) {
    Fields pf(pj, {"person_id", "bbox", "joints"}, {}, "feedback person");
    FeedbackPerson p;
    p.person_id = static_cast<int>(integer(pf["person_id"], "person_id"));
    p.bbox = parse_bbox(pf["bbox"]);
    if (!pf["joints"].is_array()) schema("joints must be an array");
    check_joint_count(pf["joints"].size(), joint_count);
    for (const auto& jj : pf["joints"]) {
      if (!jj.is_object() || !jj.contains("valid") || !jj["valid"].is_boolean()) schema("joint needs boolean 'valid'");
      FeedbackJoint w;
      w.valid = jj["valid"].get<bool>();
      if (w.valid) {
        Fields jf(jj, {"valid", "u", "v", "cov"}, {}, "feedback joint");
        w.u = num(jf["u"], "u");
        w.v = num(jf["v"], "v");
        w.cov = cov3(jf["cov"]);
      } else {
        Fields jf(jj, {"valid"}, {}, "invalid feedback joint");
      }
      p.joints.push_back(w);
    }
    m.persons.push_back(std::move(p));
  }
  check_invariants(m, joint_count);
  return m;
}

ojson parse_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  try {
    return ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    schema(std::string("malformed JSON: ") + e.what());
  }
}

std::string type_of(const ojson& doc) {
  if (!doc.is_object() || !doc.contains("type") || !doc["type"].is_string()) schema("message needs a string 'type'");
  return doc["type"].get<std::string>();
}

}  // namespace

void check_invariants(const PoseMessage& msg, int joint_count) {
  if (msg.capture_timestamp_us < 0) invariant("capture timestamp must be non-negative");
  for (const auto& p : msg.persons) {
    check_bbox(p.bbox);
    if (joint_count > 0 && p.joints.size() != static_cast<std::size_t>(joint_count)) {
      invariant("person joint count does not match the topology");
    }
    for (const auto& j : p.joints) {
      if (!j.valid) continue;
      if (!finite_all({j.u, j.v, j.confidence})) invariant("joint values must be finite");
      if (j.confidence < 0.0 || j.confidence > 1.0) invariant("confidence must lie in [0, 1]");
      check_cov(j.cov, "pose joint");
    }
  }
}

void check_invariants(const FeedbackMessage& msg, int joint_count) {
  if (msg.emit_timestamp_us < msg.source_timestamp_us) invariant("feedback emitted before its source frame");
  for (const auto& p : msg.persons) {
    check_bbox(p.bbox);
    if (joint_count > 0 && p.joints.size() != static_cast<std::size_t>(joint_count)) {
      invariant("person joint count does not match the topology");
    }
    for (const auto& j : p.joints) {
      if (!j.valid) continue;
      if (!finite_all({j.u, j.v})) invariant("joint values must be finite");
      check_cov(j.cov, "feedback joint");
    }
  }
}

std::string encode(const PoseMessage& msg) {
  check_invariants(msg);
  ojson persons = ojson::array();
  for (const auto& p : msg.persons) {
    ojson joints = ojson::array();
    for (const auto& j : p.joints) {
      if (!j.valid) {
        joints.push_back({{"valid", false}});
        continue;
      }
      joints.push_back({{"valid", true},
                        {"u", j.u},
                        {"v", j.v},
                        {"confidence", j.confidence},
                        {"cov", ojson::array({j.cov[0], j.cov[1], j.cov[2]})}});
    }
    persons.push_back({{"local_track_id", p.local_track_id}, {"bbox", bbox_json(p.bbox)}, {"joints", joints}});
  }
  const ojson doc = {{"type", "pose"},
                     {"camera_id", msg.camera_id},
                     {"capture_timestamp_us", msg.capture_timestamp_us},
                     {"persons", persons}};
  return doc.dump() + "\n";
}

std::string encode(const FeedbackMessage& msg) {
  check_invariants(msg);
  ojson persons = ojson::array();
  for (const auto& p : msg.persons) {
    ojson joints = ojson::array();
    for (const auto& j : p.joints) {
      if (!j.valid) {
        joints.push_back({{"valid", false}});
        continue;
      }
      joints.push_back({{"valid", true}, {"u", j.u}, {"v", j.v}, {"cov", ojson::array({j.cov[0], j.cov[1], j.cov[2]})}});
    }
    persons.push_back({{"person_id", p.person_id}, {"bbox", bbox_json(p.bbox)}, {"joints", joints}});
  }
  const ojson doc = {{"type", "feedback"},
                     {"camera_id", msg.camera_id},
                     {"source_timestamp_us", msg.source_timestamp_us},
                     {"emit_timestamp_us", msg.emit_timestamp_us},
                     {"persons", persons}};
  return doc.dump() + "\n";
}

Message decode(std::string_view line, int joint_count) {
  const ojson doc = parse_line(line);
  const std::string type = type_of(doc);
  if (type == "pose") return pose_from_json(doc, joint_count);
  if (type == "feedback") return feedback_from_json(doc, joint_count);
  schema("unknown message type '" + type + "'");
}

PoseMessage decode_pose(std::string_view line, int joint_count) {
  const ojson doc = parse_line(line);
  if (type_of(doc) != "pose") schema("expected a pose message");
  return pose_from_json(doc, joint_count);
}

FeedbackMessage decode_feedback(std::string_view line, int joint_count) {
  const ojson doc = parse_line(line);
  if (type_of(doc) != "feedback") schema("expected a feedback message");
  return feedback_from_json(doc, joint_count);
}

std::vector<Message> decode_stream(std::string_view text, int joint_count, DecodeStats* stats) {
  std::vector<Message> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(decode(line, joint_count));
      if (stats) ++stats->decoded;
    } catch (const Error&) {
      if (stats) ++stats->rejected;
    }
  }
  return out;
}

Pose2DSet to_pose2d(const PoseMessage& msg) {
  Pose2DSet set;
  set.camera_id = msg.camera_id;
  set.capture_timestamp = msg.capture_timestamp_us;
  for (const auto& p : msg.persons) {
    PersonDetection2D d;
    d.local_track_id = p.local_track_id;
    d.bbox = p.bbox;
    for (std::size_t j = 0; j < p.joints.size(); ++j) {
      const auto& w = p.joints[j];
      JointDetection2D jd;
      jd.joint_class = static_cast<int>(j);
      jd.valid = w.valid;
      jd.position = {w.u, w.v};
      jd.confidence = w.confidence;
      jd.cov << w.cov[0], w.cov[1], w.cov[1], w.cov[2];
      d.joints.push_back(jd);
    }
    set.persons.push_back(std::move(d));
  }
  return set;
}

PoseMessage to_message(const Pose2DSet& set) {
  PoseMessage m;
  m.camera_id = set.camera_id;
  m.capture_timestamp_us = set.capture_timestamp;
  for (const auto& p : set.persons) {
    WirePerson w;
    w.local_track_id = p.local_track_id;
    w.bbox = p.bbox;
    for (const auto& j : p.joints) {
      WireJoint wj;
      if (j.valid) {
        wj.valid = true;
        wj.u = j.position.x();
        wj.v = j.position.y();
        wj.confidence = j.confidence;
        wj.cov = {j.cov(0, 0), 0.5 * (j.cov(0, 1) + j.cov(1, 0)), j.cov(1, 1)};
      }
      w.joints.push_back(wj);
    }
    m.persons.push_back(std::move(w));
  }
  return m;
}

std::string encode_skeleton(const Skeleton3D& skel) {
  ojson joints = ojson::array();
  for (const auto& j : skel.joints) {
    if (!j.valid) {
      joints.push_back({{"valid", false}});
      continue;
    }
    const auto& m = j.position.mean;
    const auto& c = j.position.cov;
    joints.push_back({{"valid", true},
                      {"x", ojson::array({m.x(), m.y(), m.z()})},
                      {"cov", ojson::array({c(0, 0), c(0, 1), c(0, 2), c(1, 1), c(1, 2), c(2, 2)})}});
  }
  const ojson doc = {
      {"type", "skeleton"}, {"person_id", skel.person_id}, {"timestamp_us", skel.timestamp}, {"joints", joints}};
  return doc.dump() + "\n";
}

Skeleton3D decode_skeleton(std::string_view line) {
  const ojson doc = parse_line(line);
  if (type_of(doc) != "skeleton") schema("expected a skeleton record");
  Fields f(doc, {"type", "person_id", "timestamp_us", "joints"}, {}, "skeleton");
  Skeleton3D s;
  s.person_id = static_cast<int>(integer(f["person_id"], "person_id"));
  s.timestamp = integer(f["timestamp_us"], "timestamp_us");
  if (!f["joints"].is_array()) schema("joints must be an array");
  for (const auto& jj : f["joints"]) {
    if (!jj.is_object() || !jj.contains("valid") || !jj["valid"].is_boolean()) schema("joint needs boolean 'valid'");
    JointState js;
    js.valid = jj["valid"].get<bool>();
    if (js.valid) {
      Fields jf(jj, {"valid", "x", "cov"}, {}, "skeleton joint");
      const auto& x = jf["x"];
      const auto& c = jf["cov"];
      if (!x.is_array() || x.size() != 3 || !c.is_array() || c.size() != 6) schema("skeleton joint needs x[3] and cov[6]");
      js.position.mean = {num(x[0], "x"), num(x[1], "x"), num(x[2], "x")};
      const double xx = num(c[0], "cov"), xy = num(c[1], "cov"), xz = num(c[2], "cov");
      const double yy = num(c[3], "cov"), yz = num(c[4], "cov"), zz = num(c[5], "cov");
      js.position.cov << xx, xy, xz, xy, yy, yz, xz, yz, zz;
    }
    s.joints.push_back(js);
  }
  return s;
}

}  // namespace mvpose
