// Scenario runner, report emitter and synthetic scenario generator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvpose/error.hpp"
#include "mvpose/harness.hpp"
#include "mvpose/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mvpose;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + p.string());
  out << text;
}

double avg_of(const ClassRow& r) { return r[6].value_or(0.0); }

double mean_of(const ClassRow& r, std::initializer_list<int> classes) {
  double s = 0.0;
  int n = 0;
  for (int c : classes) {
    if (r[static_cast<std::size_t>(c)]) {
      s += *r[static_cast<std::size_t>(c)];
      ++n;
    }
  }
  return n ? s / n : 0.0;
}

void print_summary(const MetricsReport& r, double wall) {
  std::printf("%-8s MPJPE %.2f mm  JDR %.2f %%  PCP %.2f %%  reproj %.2f px  id switches %zu  (%.1f s)\n",
              r.feedback ? "fb on" : "fb off", avg_of(r.mpjpe_mm), avg_of(r.jdr_pct), r.pcp_avg.value_or(0.0),
              avg_of(r.reprojection_px), r.id_switches, wall);
}

struct RunOptions {
  fs::path config;
  std::string feedback = "on";
  std::optional<std::uint64_t> seed;
  fs::path out;
  std::string transport;
};

int cmd_run(const RunOptions& o) {
  ScenarioConfig cfg = load_scenario(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.transport.empty()) cfg.transport = o.transport == "socket" ? ChannelKind::Socket : ChannelKind::Loopback;
  fs::path out = o.out.empty() ? cfg.output : o.out;
  if (out.empty()) out = "out";
  const ScenarioInputs inputs = load_inputs(cfg);

  std::vector<bool> modes;
  if (o.feedback == "both") {
    modes = {false, true};
  } else {
    modes = {o.feedback == "on"};
  }
  bool partial = false;
  std::vector<MetricsReport> reports;
  for (const bool fb : modes) {
    cfg.feedback = fb;
    const RunOutput run = run_scenario(cfg, inputs);
    const fs::path dir = out / (fb ? "fb_on" : "fb_off");
    write_run(run, dir);
    print_summary(run.report, run.wall_seconds);
    for (const auto& f : run.report.failures) std::fprintf(stderr, "failure: %s\n", f.c_str());
    partial = partial || run.report.partial;
    reports.push_back(run.report);
  }
  if (reports.size() == 2) {
    const auto& off = reports[0];
    const auto& on = reports[1];
    const int wrists = static_cast<int>(JointClass::Wrists);
    const int ankles = static_cast<int>(JointClass::Ankles);
    nlohmann::ordered_json cmp = {
        {"scenario", cfg.name},
        {"seed", cfg.seed},
        {"mpjpe_mm", {{"fb_off", avg_of(off.mpjpe_mm)}, {"fb_on", avg_of(on.mpjpe_mm)}}},
        {"jdr_pct", {{"fb_off", avg_of(off.jdr_pct)}, {"fb_on", avg_of(on.jdr_pct)}}},
        {"jdr_wrists_ankles_pct",
         {{"fb_off", mean_of(off.jdr_pct, {wrists, ankles})}, {"fb_on", mean_of(on.jdr_pct, {wrists, ankles})}}},
        {"pcp_pct", {{"fb_off", off.pcp_avg.value_or(0.0)}, {"fb_on", on.pcp_avg.value_or(0.0)}}}};
    fs::create_directories(out);
    spit(out / "comparison.json", cmp.dump(2) + "\n");
  }
  return partial ? kExitPartial : kExitOk;
}

int cmd_report(const fs::path& in, const std::string& format) {
  std::vector<fs::path> dirs;
  if (fs::exists(in / "metrics.json")) {
    dirs.push_back(in);
  } else {
    for (const char* sub : {"fb_off", "fb_on"}) {
      if (fs::exists(in / sub / "metrics.json")) dirs.push_back(in / sub);
    }
  }
  if (dirs.empty()) throw Error(Errc::IoError, "no metrics.json under " + in.string());
  for (const auto& d : dirs) {
    const MetricsReport r = report_from_json(slurp(d / "metrics.json"));
    if (format == "csv") {
      emit_report(r, "csv", d);
      if (dirs.size() > 1) std::cout << "# " << d.filename().string() << "\n";
      std::cout << report_to_csv(r);
    } else {
      std::cout << report_to_json(r);
    }
  }
  return kExitOk;
}

struct SynthOptions {
  fs::path out = "scenario";
  std::string kind = "clean";
  std::uint64_t seed = 1;
  int cameras = 4;
  int persons = 1;
  double duration = 10.0;
  int cells = 256;
};

int cmd_synth(const SynthOptions& o) {
  fs::create_directories(o.out);
  const SkeletonTopology topo = SkeletonTopology::default17();
  const double radius = o.cameras > 8 ? 8.0 : 5.5;
  const std::vector<Camera> cams = synth::ring(o.cameras, radius, 2.5);
  SceneScript scene;
  if (o.persons == 1) {
    scene.fps = 30.0;
    scene.duration_s = o.duration;
    scene.persons.push_back(synth::walking_person(0, topo, {}, scene.fps, o.duration));
  } else {
    scene = synth::crowd_scene(o.persons, topo, 2.0, 0.3, 30.0, o.duration, o.seed);
  }
  if (o.kind == "occlusion") {
    std::vector<int> ids;
    for (const auto& c : cams) ids.push_back(c.id);
    scene.occlusions = synth::occlusion_events(scene, ids, topo, {}, o.seed);
  } else if (o.kind != "clean") {
    throw Error(Errc::ConfigError, "unknown scenario kind '" + o.kind + "'");
  }
  spit(o.out / "cameras.json", cameras_to_json(cams));
  spit(o.out / "scene.json", scene_to_json(scene));
  spit(o.out / "topology.json", topology_to_json(topo));

  ScenarioConfig cfg;
  cfg.name = o.kind;
  cfg.cameras = "cameras.json";
  cfg.scene = "scene.json";
  cfg.topology = "topology.json";
  cfg.seed = o.seed;
  cfg.jdr_threshold_px = 10.0;
  cfg.sensor.layout.cells = o.cells;
  cfg.output = "out";
  spit(o.out / "scenario.json", scenario_to_json(cfg));
  std::printf("wrote %s\n", (o.out / "scenario.json").string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view 3D pose fusion simulator"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario");
  run_cmd->add_option("--config", run.config, "Scenario file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--feedback", run.feedback, "on, off or both")->check(CLI::IsMember({"on", "off", "both"}));
  run_cmd->add_option("--seed", run.seed, "Override the scenario seed");
  run_cmd->add_option("--out", run.out, "Output directory");
  run_cmd->add_option("--transport", run.transport, "loopback or socket")
      ->check(CLI::IsMember({"loopback", "socket"}));

  fs::path report_in;
  std::string format = "csv";
  auto* report_cmd = app.add_subcommand("report", "Print a stored report");
  report_cmd->add_option("--in", report_in, "Run output directory")->required();
  report_cmd->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic scenario");
  synth_cmd->add_option("--out", synth_opts.out, "Output directory");
  synth_cmd->add_option("--kind", synth_opts.kind, "clean or occlusion")->check(CLI::IsMember({"clean", "occlusion"}));
  synth_cmd->add_option("--seed", synth_opts.seed, "Scene seed");
  synth_cmd->add_option("--cameras", synth_opts.cameras, "Camera count");
  synth_cmd->add_option("--persons", synth_opts.persons, "Person count");
  synth_cmd->add_option("--duration", synth_opts.duration, "Seconds");
  synth_cmd->add_option("--cells", synth_opts.cells, "Heatmap cells per side");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; anything else is a bad invocation.
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  try {
    if (*run_cmd) return cmd_run(run);
    if (*report_cmd) return cmd_report(report_in, format);
    if (*synth_cmd) return cmd_synth(synth_opts);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == Errc::ConfigError || e.code() == Errc::SchemaViolation ? kExitConfig : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
