#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mvpose/association.hpp"
#include "mvpose/skeleton.hpp"

namespace mvpose {

// Wire records. One JSON object per line; see docs/protocol.md.

struct WireJoint {
  bool valid = false;
  double u = 0.0;
  double v = 0.0;
  double confidence = 0.0;
  std::array<double, 3> cov{0.0, 0.0, 0.0};  // sxx, sxy, syy
  bool operator==(const WireJoint&) const = default;
};

struct WirePerson {
  int local_track_id = 0;
  BBox bbox;
  std::vector<WireJoint> joints;
  bool operator==(const WirePerson&) const = default;
};

struct PoseMessage {
  int camera_id = 0;
  Micros capture_timestamp_us = 0;
  std::vector<WirePerson> persons;
  bool operator==(const PoseMessage&) const = default;
};

struct FeedbackJoint {
  bool valid = false;
  double u = 0.0;
  double v = 0.0;
  std::array<double, 3> cov{0.0, 0.0, 0.0};
  bool operator==(const FeedbackJoint&) const = default;
};

struct FeedbackPerson {
  int person_id = 0;
  BBox bbox;
  std::vector<FeedbackJoint> joints;
  bool operator==(const FeedbackPerson&) const = default;
};

struct FeedbackMessage {
  int camera_id = 0;
  Micros source_timestamp_us = 0;
  Micros emit_timestamp_us = 0;
  std::vector<FeedbackPerson> persons;
  bool operator==(const FeedbackMessage&) const = default;
};

using Message = std::variant<PoseMessage, FeedbackMessage>;

/// Serializes to one line of JSON terminated by '\n'. Throws
/// InvariantViolation for messages breaking their type invariants.
std::string encode(const PoseMessage& msg);
std::string encode(const FeedbackMessage& msg);

/// Parses one line. `joint_count` > 0 enforces the per-person joint array
/// length. Throws SchemaViolation or InvariantViolation.
Message decode(std::string_view line, int joint_count = 0);
PoseMessage decode_pose(std::string_view line, int joint_count = 0);
FeedbackMessage decode_feedback(std::string_view line, int joint_count = 0);

struct DecodeStats {
  std::size_t decoded = 0;
  std::size_t rejected = 0;
};

/// Decodes a newline-delimited stream, skipping (and counting) bad lines.
std::vector<Message> decode_stream(std::string_view text, int joint_count, DecodeStats* stats = nullptr);

void check_invariants(const PoseMessage& msg, int joint_count = 0);
void check_invariants(const FeedbackMessage& msg, int joint_count = 0);

Pose2DSet to_pose2d(const PoseMessage& msg);
PoseMessage to_message(const Pose2DSet& set);

// Skeleton stream record:
// {"type":"skeleton","person_id":..,"timestamp_us":..,
//  "joints":[{"valid":true,"x":[x,y,z],"cov":[xx,xy,xz,yy,yz,zz]},...]}
std::string encode_skeleton(const Skeleton3D& skel);
Skeleton3D decode_skeleton(std::string_view line);

// --- Transport -------------------------------------------------------------

struct LatencyModel {
  Micros fixed_us = 0;
  Micros jitter_us = 0;  // uniform in [-jitter, +jitter], total latency floored at 0
  double loss = 0.0;     // independent per-message drop probability
};

struct Delivery {
  std::string payload;
  Micros sent_us = 0;
  Micros received_us = 0;
};

struct ChannelStats {
  std::size_t sent = 0;
  std::size_t lost = 0;
  std::size_t delivered = 0;
  std::size_t dropped_after_close = 0;
  std::size_t bytes = 0;
};

enum class ChannelKind { Loopback, Socket };

/// One-directional message channel driven by simulated time. Delivery is
/// FIFO; a message becomes receivable at max(send + latency, previous
/// delivery). One producer and one consumer may use a channel concurrently.
class Channel {
 public:
  virtual ~Channel() = default;

  /// Throws Disconnected after close().
  virtual void send(std::string payload, Micros now) = 0;
  /// Returns every message whose delivery time is <= now.
  virtual std::vector<Delivery> receive(Micros now) = 0;
  virtual void close() = 0;
  virtual bool closed() const = 0;
  virtual ChannelStats stats() const = 0;
};

std::unique_ptr<Channel> make_channel(ChannelKind kind, const LatencyModel& latency, std::uint64_t seed);

}  // namespace mvpose
