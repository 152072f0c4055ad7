#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvpose/backend.hpp"
#include "mvpose/metrics.hpp"
#include "mvpose/protocol.hpp"
#include "mvpose/sensor.hpp"

namespace mvpose {

struct ScenarioConfig {
  std::string name = "scenario";
  std::filesystem::path cameras;   // calibration file
  std::filesystem::path scene;     // scene script
  std::filesystem::path topology;  // empty: built-in 17-joint body

  ObservationModel observation;           // occlusions come from the scene script
  std::vector<Micros> clock_offsets_us;   // per camera, overrides observation.clock_offset_us
  std::vector<double> clock_drift_ppm;    // per camera
  SensorConfig sensor;
  bool feedback = true;

  ChannelKind transport = ChannelKind::Loopback;
  LatencyModel uplink{5'000, 1'000, 0.0};
  LatencyModel downlink{5'000, 1'000, 0.0};

  Micros sync_window_us = 0;  // 0: half the frame period
  Micros max_wait_us = 0;     // 0: one frame period
  Micros backend_processing_us = 11'000;  // simulated cost of one frame set
  BackendConfig backend;

  std::uint64_t seed = 1;
  double duration_s = 0.0;       // 0: the scene script's duration
  double jdr_threshold_px = 0.0; // 0: half head size
  std::filesystem::path output;

  /// Throws ConfigError when the gains, clocks or files are unusable.
  void validate() const;
};

/// Parses a scenario file; relative paths resolve against base_dir.
ScenarioConfig parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const ScenarioConfig& cfg);

struct ScenarioInputs {
  std::vector<Camera> cameras;
  SceneScript scene;
  SkeletonTopology topology;
};

ScenarioInputs load_inputs(const ScenarioConfig& cfg);

struct EmittedSkeletons {
  Micros emit_us = 0;      // simulated time the frame-set result left the backend
  Micros capture_us = 0;   // frame-set anchor
  std::vector<Skeleton3D> skeletons;
};

struct RunOutput {
  MetricsReport report;
  std::vector<EmittedSkeletons> outputs;
  double wall_seconds = 0.0;
  std::vector<double> frameset_wall_ms;  // measured per process_frameset call
};

/// Runs one closed-loop simulation. Metrics depend only on simulated time,
/// so a run is reproducible for a given configuration and seed.
RunOutput run_scenario(const ScenarioConfig& cfg, const ScenarioInputs& inputs);
RunOutput run_scenario(const ScenarioConfig& cfg);

/// Writes metrics.json, series.csv, skeletons.jsonl and timing.json.
void write_run(const RunOutput& run, const std::filesystem::path& dir);

}  // namespace mvpose
