#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mvpose/geometry.hpp"

namespace mvpose {

/// Multi-channel confidence grid over an image crop. Cell (x, y) covers the
/// full-image square starting at origin + stride * (x, y). Values are kept
/// in [0, 1].
class Heatmap {
 public:
  Heatmap() = default;
  Heatmap(int joints, int width, int height, Vec2 origin, double stride);

  /// Reshapes and zeroes the map, reusing its storage.
  void reset(int joints, int width, int height, Vec2 origin, double stride);

  int joints() const { return joints_; }
  int width() const { return width_; }
  int height() const { return height_; }
  const Vec2& origin() const { return origin_; }
  double stride() const { return stride_; }
  std::size_t cells() const { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }

  std::span<float> channel(int j);
  std::span<const float> channel(int j) const;

  float at(int j, int x, int y) const { return channel(j)[static_cast<std::size_t>(y) * width_ + x]; }
  /// Stores v clamped to [0, 1].
  void set(int j, int x, int y, double v);

  Vec2 cell_center(double x, double y) const { return origin_ + stride_ * Vec2(x + 0.5, y + 0.5); }
  /// Continuous cell coordinates of a full-image point (inverse of cell_center).
  Vec2 to_cell(const Vec2& uv) const { return (uv - origin_) / stride_ - Vec2(0.5, 0.5); }

  bool congruent(const Heatmap& other) const;
  void fill(float v);

  bool operator==(const Heatmap&) const = default;

 private:
  int joints_ = 0;
  int width_ = 0;
  int height_ = 0;
  Vec2 origin_ = Vec2::Zero();
  double stride_ = 1.0;
  std::vector<float> data_;
};

struct ExtractionParams {
  double confidence_threshold = 0.1;    // validity of a detection
  double contribution_threshold = 0.1;  // fraction of the peak a cell needs to enter the covariance
};

struct JointDetection2D {
  int joint_class = 0;
  Vec2 position = Vec2::Zero();
  double confidence = 0.0;
  Mat2 cov = Mat2::Zero();
  bool valid = false;
};

struct CellIndex {
  int x = 0;
  int y = 0;
};

/// Row-major first maximum of a channel.
CellIndex argmax_cell(std::span<const float> channel, int width);

JointDetection2D extract_peak(const Heatmap& hm, int joint, const ExtractionParams& params = {});

/// Confidence-weighted spread of the contributing cells about the peak,
/// normalized by the number of contributing cells and expressed in
/// full-image px^2. Falls back to an isotropic (stride/2)^2 matrix when no
/// spread is measurable.
Mat2 extract_covariance(const Heatmap& hm, int joint, const Vec2& peak, double peak_conf,
                        const ExtractionParams& params = {});

/// Max-composites amplitude * exp(-d^T S^-1 d / 2) into the channel within a
/// 3-sigma Mahalanobis radius of g.mean.
void render_gaussian(Heatmap& hm, int joint, const Gaussian2D& g, double amplitude);

struct FusionGains {
  double alpha = 0.15;  // additive feedback
  double beta = 0.75;   // multiplicative feedback
};

/// How fused values above 1 are brought back into [0, 1].
enum class Saturation {
  Clamp,      // element-wise min(1, v)
  Normalize,  // divide a channel by its maximum when that maximum exceeds 1
};

/// Detection/feedback fusion: det + s * fb * (alpha + beta * det), with
/// s = 1 / (1 - alpha - beta); algebraically equal to
/// s * ((1-a-b) det + a fb + b fb*det). Throws GainDomain unless a + b < 1.
Heatmap fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains,
             Saturation saturation = Saturation::Clamp);
/// Same, writing into out and reusing its storage.
void fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation, Heatmap& out);

/// Fuses channel j of det and fb into out (which must be congruent).
void fuse_channel(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation,
                  Heatmap& out, int joint);

/// Fused value for a single cell before saturation.
double fuse_value(double det, double fb, const FusionGains& gains);

void check_gains(const FusionGains& gains);

/// Writes <prefix>_<j>.pgm per channel plus <prefix>.json with origin and stride.
void dump_heatmap(const Heatmap& hm, const std::filesystem::path& dir, const std::string& prefix);

}  // namespace mvpose
