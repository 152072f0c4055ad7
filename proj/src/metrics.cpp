#include "mvpose/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvpose/error.hpp"

namespace mvpose {

using ojson = nlohmann::ordered_json;

void ClassAccumulator::add(JointClass c, double value) {
  const auto i = static_cast<std::size_t>(c);
  sum_[i] += value;
  ++n_[i];
  total_ += value;
  ++total_n_;
}

void ClassAccumulator::merge(const ClassAccumulator& o) {
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    sum_[i] += o.sum_[i];
    n_[i] += o.n_[i];
  }
  total_ += o.total_;
  total_n_ += o.total_n_;
}

ClassRow ClassAccumulator::row(double scale) const {
  ClassRow r{};
  for (std::size_t i = 0; i < 6; ++i) {
    if (n_[i] > 0) r[i] = scale * sum_[i] / static_cast<double>(n_[i]);
  }
  if (total_n_ > 0) r[6] = scale * total_ / static_cast<double>(total_n_);
  return r;
}

ClassAccumulator mpjpe(const Skeleton3D& est, const Skeleton3D& gt, const SkeletonTopology& topo) {
  const auto J = static_cast<std::size_t>(topo.joint_count());
  if (est.joints.size() != J || gt.joints.size() != J) throw Error(Errc::InvalidArgument, "skeleton size does not match topology");
  ClassAccumulator acc;
  for (std::size_t j = 0; j < J; ++j) {
    if (!est.joints[j].valid || !gt.joints[j].valid) continue;
    const double d = (est.joints[j].position.mean - gt.joints[j].position.mean).norm();
    acc.add(topo.joint_class(static_cast<int>(j)), 1000.0 * d);
  }
  if (acc.count() == 0) throw Error(Errc::NoValidJoints, "no jointly valid joints");
  return acc;
}

double head_threshold(std::span<const Vec2> gt_uv, std::span<const bool> gt_visible, const SkeletonTopology& topo,
                      double fallback_px) {
  const int head = topo.index_of("head");
  const int nose = topo.index_of("nose");
  if (head < 0 || nose < 0) return fallback_px;
  const auto h = static_cast<std::size_t>(head);
  const auto n = static_cast<std::size_t>(nose);
  if (h >= gt_uv.size() || n >= gt_uv.size() || !gt_visible[h] || !gt_visible[n]) return fallback_px;
  return 0.5 * (gt_uv[h] - gt_uv[n]).norm();
}

ClassAccumulator jdr(const PersonDetection2D* est, std::span<const Vec2> gt_uv, std::span<const bool> gt_visible,
                     const SkeletonTopology& topo, double threshold_px) {
  ClassAccumulator acc;
  for (std::size_t j = 0; j < gt_uv.size(); ++j) {
    if (!gt_visible[j]) continue;
    bool hit = false;
    if (est && j < est->joints.size() && est->joints[j].valid) {
      hit = (est->joints[j].position - gt_uv[j]).norm() < threshold_px;
    }
    acc.add(topo.joint_class(static_cast<int>(j)), hit ? 100.0 : 0.0);
  }
  return acc;
}

PcpResult pcp(const Skeleton3D& est, const Skeleton3D& gt, const SkeletonTopology& topo) {
  PcpResult r;
  r.correct.assign(topo.bones().size(), 0);
  r.total.assign(topo.bones().size(), 0);
  for (std::size_t b = 0; b < topo.bones().size(); ++b) {
    const auto& bone = topo.bones()[b];
    const auto& ga = gt.joints[static_cast<std::size_t>(bone.parent)];
    const auto& gb = gt.joints[static_cast<std::size_t>(bone.child)];
    if (!ga.valid || !gb.valid) continue;
    ++r.total[b];
    const auto& ea = est.joints[static_cast<std::size_t>(bone.parent)];
    const auto& eb = est.joints[static_cast<std::size_t>(bone.child)];
    if (!ea.valid || !eb.valid) continue;
    const double length = (ga.position.mean - gb.position.mean).norm();
    const double err = 0.5 * ((ea.position.mean - ga.position.mean).norm() + (eb.position.mean - gb.position.mean).norm());
    if (err < 0.5 * length) ++r.correct[b];
  }
  return r;
}

void merge(PcpResult& into, const PcpResult& from) {
  if (into.total.empty()) {
    into = from;
    return;
  }
  for (std::size_t b = 0; b < into.total.size(); ++b) {
    into.correct[b] += from.correct[b];
    into.total[b] += from.total[b];
  }
}

namespace {

ojson cell(const Cell& c) { return c ? ojson(*c) : ojson(nullptr); }

Cell cell_from(const ojson& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

ojson row_json(const ClassRow& r) {
  ojson o = ojson::object();
  for (std::size_t i = 0; i < r.size(); ++i) o[kClassColumns[i]] = cell(r[i]);
  return o;
}

ClassRow row_from(const ojson& o) {
  ClassRow r{};
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = cell_from(o.at(kClassColumns[i]));
  return r;
}

std::string fmt(const Cell& c) {
  if (!c) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << *c;
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "write failed for " + p.string());
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  ojson doc;
  doc["scenario"] = r.scenario;
  doc["feedback"] = r.feedback;
  doc["seed"] = r.seed;
  doc["partial"] = r.partial;
  doc["failures"] = r.failures;
  doc["mpjpe_mm"] = row_json(r.mpjpe_mm);
  doc["jdr_pct"] = row_json(r.jdr_pct);
  doc["reprojection_px"] = row_json(r.reprojection_px);
  doc["jdr_threshold_px"] = r.jdr_threshold_px;
  ojson pcp_doc = ojson::object();
  for (std::size_t i = 0; i < r.limbs.size(); ++i) pcp_doc[r.limbs[i]] = cell(r.pcp_pct[i]);
  doc["pcp_pct"] = {{"limbs", pcp_doc}, {"avg", cell(r.pcp_avg)}};
  const auto& t = r.transport;
  doc["transport"] = {{"pose_sent", t.pose_sent},
                      {"pose_lost", t.pose_lost},
                      {"pose_bytes", t.pose_bytes},
                      {"feedback_sent", t.feedback_sent},
                      {"feedback_lost", t.feedback_lost},
                      {"feedback_bytes", t.feedback_bytes},
                      {"decode_rejected", t.decode_rejected},
                      {"sync_dropped_late", t.sync_dropped_late},
                      {"framesets", t.framesets},
                      {"incomplete_framesets", t.incomplete_framesets},
                      {"bytes_per_person_per_s", t.bytes_per_person_per_s},
                      {"mean_capture_to_output_ms", t.mean_capture_to_output_ms},
                      {"delay_estimate_ms", t.delay_estimate_ms}};
  doc["id_switches"] = r.id_switches;
  doc["skeletons"] = r.skeletons;
  ojson series = ojson::array();
  for (const auto& p : r.series) {
    series.push_back({{"frame", p.frame},
                      {"t", p.t},
                      {"mpjpe_mm", cell(p.mpjpe_mm)},
                      {"jdr_pct", cell(p.jdr_pct)},
                      {"persons_out", p.persons_out},
                      {"persons_gt", p.persons_gt}});
  }
  doc["series"] = series;
  return doc.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  MetricsReport r;
  try {
    const ojson doc = ojson::parse(text);
    r.scenario = doc.at("scenario").get<std::string>();
    r.feedback = doc.at("feedback").get<bool>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.partial = doc.at("partial").get<bool>();
    r.failures = doc.at("failures").get<std::vector<std::string>>();
    r.mpjpe_mm = row_from(doc.at("mpjpe_mm"));
    r.jdr_pct = row_from(doc.at("jdr_pct"));
    r.reprojection_px = row_from(doc.at("reprojection_px"));
    r.jdr_threshold_px = doc.at("jdr_threshold_px").get<double>();
    for (const auto& [name, v] : doc.at("pcp_pct").at("limbs").items()) {
      r.limbs.push_back(name);
      r.pcp_pct.push_back(cell_from(v));
    }
    r.pcp_avg = cell_from(doc.at("pcp_pct").at("avg"));
    const auto& t = doc.at("transport");
    auto& s = r.transport;
    s.pose_sent = t.at("pose_sent").get<std::size_t>();
    s.pose_lost = t.at("pose_lost").get<std::size_t>();
    s.pose_bytes = t.at("pose_bytes").get<std::size_t>();
    s.feedback_sent = t.at("feedback_sent").get<std::size_t>();
    s.feedback_lost = t.at("feedback_lost").get<std::size_t>();
    s.feedback_bytes = t.at("feedback_bytes").get<std::size_t>();
    s.decode_rejected = t.at("decode_rejected").get<std::size_t>();
    s.sync_dropped_late = t.at("sync_dropped_late").get<std::size_t>();
    s.framesets = t.at("framesets").get<std::size_t>();
    s.incomplete_framesets = t.at("incomplete_framesets").get<std::size_t>();
    s.bytes_per_person_per_s = t.at("bytes_per_person_per_s").get<double>();
    s.mean_capture_to_output_ms = t.at("mean_capture_to_output_ms").get<double>();
    s.delay_estimate_ms = t.at("delay_estimate_ms").get<double>();
    r.id_switches = doc.at("id_switches").get<std::size_t>();
    r.skeletons = doc.at("skeletons").get<std::size_t>();
    for (const auto& p : doc.at("series")) {
      FramePoint f;
      f.frame = p.at("frame").get<int>();
      f.t = p.at("t").get<double>();
      f.mpjpe_mm = cell_from(p.at("mpjpe_mm"));
      f.jdr_pct = cell_from(p.at("jdr_pct"));
      f.persons_out = p.at("persons_out").get<int>();
      f.persons_gt = p.at("persons_gt").get<int>();
      r.series.push_back(f);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string report_to_csv(const MetricsReport& r) {
  std::string out;
  for (std::size_t i = 0; i < kClassColumns.size(); ++i) {
    if (i) out += ',';
    out += kClassColumns[i];
  }
  out += '\n';
  if (r.series.empty()) return out;
  for (const ClassRow* row : {&r.mpjpe_mm, &r.jdr_pct, &r.reprojection_px}) {
    for (std::size_t i = 0; i < row->size(); ++i) {
      if (i) out += ',';
      out += fmt((*row)[i]);
    }
    out += '\n';
  }
  return out;
}

std::string series_to_csv(const MetricsReport& r) {
  std::string out = "frame,t,mpjpe_mm,jdr_pct,persons_out,persons_gt\n";
  for (const auto& p : r.series) {
    out += std::to_string(p.frame) + ',' + fmt(p.t) + ',' + fmt(p.mpjpe_mm) + ',' + fmt(p.jdr_pct) + ',' +
           std::to_string(p.persons_out) + ',' + std::to_string(p.persons_gt) + '\n';
  }
  return out;
}

void emit_report(const MetricsReport& r, const std::string& format, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  if (format == "json") {
    write_file(dir / "metrics.json", report_to_json(r));
  } else if (format == "csv") {
    write_file(dir / "metrics.csv", report_to_csv(r));
  } else {
    throw Error(Errc::InvalidArgument, "unknown report format '" + format + "'");
  }
  write_file(dir / "series.csv", series_to_csv(r));
}

}  // namespace mvpose
