#include "mvpose/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/LU>
#include <json.hpp>

#include "mvpose/error.hpp"
#include "mvpose/kernels.hpp"

namespace mvpose {

namespace {

float clamp01(double v) {
  if (!(v > 0.0)) return 0.0f;  // also maps NaN to 0
  return v >= 1.0 ? 1.0f : static_cast<float>(v);
}

}  // namespace

Heatmap::Heatmap(int joints, int width, int height, Vec2 origin, double stride) {
  reset(joints, width, height, origin, stride);
}

void Heatmap::reset(int joints, int width, int height, Vec2 origin, double stride) {
  if (joints <= 0 || width <= 0 || height <= 0) {
    throw Error(Errc::InvalidArgument, "heatmap dimensions must be positive");
  }
  if (!(stride > 0.0) || !origin.allFinite()) {
    throw Error(Errc::InvalidArgument, "heatmap stride must be positive and origin finite");
  }
  joints_ = joints;
  width_ = width;
  height_ = height;
  origin_ = origin;
  stride_ = stride;
  data_.assign(static_cast<std::size_t>(joints) * cells(), 0.0f);
}

std::span<float> Heatmap::channel(int j) {
  return {data_.data() + static_cast<std::size_t>(j) * cells(), cells()};
}

std::span<const float> Heatmap::channel(int j) const {
  return {data_.data() + static_cast<std::size_t>(j) * cells(), cells()};
}

void Heatmap::set(int j, int x, int y, double v) {
  channel(j)[static_cast<std::size_t>(y) * width_ + x] = clamp01(v);
}

bool Heatmap::congruent(const Heatmap& other) const {
  return joints_ == other.joints_ && width_ == other.width_ && height_ == other.height_ &&
         origin_ == other.origin_ && stride_ == other.stride_;
}

void Heatmap::fill(float v) {
  std::fill(data_.begin(), data_.end(), clamp01(v));
}

CellIndex argmax_cell(std::span<const float> channel, int width) {
  std::size_t best = 0;
  float best_v = channel.empty() ? 0.0f : channel[0];
  for (std::size_t i = 1; i < channel.size(); ++i) {
    if (channel[i] > best_v) {
      best_v = channel[i];
      best = i;
    }
  }
  return {static_cast<int>(best % static_cast<std::size_t>(width)), static_cast<int>(best / static_cast<std::size_t>(width))};
}

JointDetection2D extract_peak(const Heatmap& hm, int joint, const ExtractionParams& params) {
  const auto ch = hm.channel(joint);
  const CellIndex c = argmax_cell(ch, hm.width());
  JointDetection2D d;
  d.joint_class = joint;
  d.position = hm.cell_center(c.x, c.y);
  d.confidence = hm.at(joint, c.x, c.y);
  d.valid = d.confidence >= params.confidence_threshold && d.confidence > 0.0;
  d.cov = extract_covariance(hm, joint, d.position, d.confidence, params);
  return d;
}

Mat2 extract_covariance(const Heatmap& hm, int joint, const Vec2& peak, double peak_conf,
                        const ExtractionParams& params) {
  const double half = 0.5 * hm.stride();
  const Mat2 fallback = Mat2::Identity() * half * half;
  if (!(peak_conf > 0.0)) return fallback;

  const Vec2 p = hm.to_cell(peak);
  const double threshold = params.contribution_threshold * peak_conf;
  const auto ch = hm.channel(joint);
  const int w = hm.width();
  const int h = hm.height();

  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  std::size_t contributing = 0;
  for (int y = 0; y < h; ++y) {
    const float* row = ch.data() + static_cast<std::size_t>(y) * w;
    const double dy = y - p.y();
    for (int x = 0; x < w; ++x) {
      const double c = row[x];
      if (c < threshold) continue;
      const double dx = x - p.x();
      sxx += c * dx * dx;
      sxy += c * dx * dy;
      syy += c * dy * dy;
      ++contributing;
    }
  }
  if (contributing == 0) return fallback;

  const double scale = hm.stride() * hm.stride() / static_cast<double>(contributing);
  Mat2 cov;
  cov << sxx * scale, sxy * scale, sxy * scale, syy * scale;
  if (!(cov.trace() > 0.0)) return fallback;
  return cov;
}

void render_gaussian(Heatmap& hm, int joint, const Gaussian2D& g, double amplitude) {
  if (!(amplitude > 0.0)) return;
  amplitude = std::min(amplitude, 1.0);

  Mat2 cov = symmetrized(g.cov);
  if (!(cov.determinant() > 1e-12 * std::max(1.0, cov.trace() * cov.trace())) || cov(0, 0) <= 0.0 || cov(1, 1) <= 0.0) {
    cov += Mat2::Identity();
  }
  const Mat2 info = cov.inverse();

  // Bounding box of the 3-sigma ellipse, in cell coordinates.
  const double rx = 3.0 * std::sqrt(cov(0, 0)) / hm.stride();
  const double ry = 3.0 * std::sqrt(cov(1, 1)) / hm.stride();
  const Vec2 c = hm.to_cell(g.mean);
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - rx)));
  const int x1 = std::min(hm.width() - 1, static_cast<int>(std::ceil(c.x() + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - ry)));
  const int y1 = std::min(hm.height() - 1, static_cast<int>(std::ceil(c.y() + ry)));

  auto ch = hm.channel(joint);
  const int w = hm.width();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 d = hm.cell_center(x, y) - g.mean;
      const double m2 = d.dot(info * d);
      if (m2 > 9.0) continue;
      float& cell = ch[static_cast<std::size_t>(y) * w + x];
      const float v = clamp01(amplitude * std::exp(-0.5 * m2));
      if (v > cell) cell = v;
    }
  }
}

void check_gains(const FusionGains& gains) {
  if (!(gains.alpha >= 0.0) || !(gains.beta >= 0.0) || !(gains.alpha + gains.beta < 1.0)) {
    throw Error(Errc::GainDomain, "fusion gains need alpha >= 0, beta >= 0 and alpha + beta < 1");
  }
}

double fuse_value(double det, double fb, const FusionGains& gains) {
  const double s = 1.0 / (1.0 - gains.alpha - gains.beta);
  return det + s * fb * (gains.alpha + gains.beta * det);
}

void fuse_channel(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation,
                  Heatmap& out, int joint) {
  const auto d = det.channel(joint);
  const auto f = fb.channel(joint);
  auto o = out.channel(joint);
  const double s = 1.0 / (1.0 - gains.alpha - gains.beta);

  if (saturation == Saturation::Clamp) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      o[i] = clamp01(d[i] + s * f[i] * (gains.alpha + gains.beta * d[i]));
    }
    return;
  }

  // Fused values are staged in the output; a second pass rescales only when
  // the channel actually saturates.
  double peak = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (f[i] == 0.0f) {
      o[i] = d[i];
      peak = std::max(peak, static_cast<double>(d[i]));
      continue;
    }
    const double v = d[i] + s * f[i] * (gains.alpha + gains.beta * d[i]);
    peak = std::max(peak, v);
    o[i] = static_cast<float>(v);
  }
  if (peak <= 1.0) return;
  const auto norm = static_cast<float>(1.0 / peak);
  for (auto& x : o) x = clamp01(x * norm);
}

Heatmap fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation) {
  Heatmap out;
  fuse(det, fb, gains, saturation, out);
  return out;
}

void fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation, Heatmap& out) {
  check_gains(gains);
  if (!det.congruent(fb)) {
    throw Error(Errc::InvalidArgument, "detection and feedback heatmaps are not congruent");
  }
  if (&out == &det || &out == &fb) throw Error(Errc::InvalidArgument, "fuse output aliases an input");
  if (!out.congruent(det)) out.reset(det.joints(), det.width(), det.height(), det.origin(), det.stride());
  kernels::parallel::fuse(det, fb, gains, saturation, out);
}

void dump_heatmap(const Heatmap& hm, const std::filesystem::path& dir, const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  for (int j = 0; j < hm.joints(); ++j) {
    const auto path = dir / (prefix + "_" + std::to_string(j) + ".pgm");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    out << "P5\n" << hm.width() << " " << hm.height() << "\n255\n";
    for (const float v : hm.channel(j)) {
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  const nlohmann::json sidecar = {{"origin", {hm.origin().x(), hm.origin().y()}}, {"stride", hm.stride()}};
  std::ofstream side(dir / (prefix + ".json"));
  if (!side) throw Error(Errc::IoError, "cannot write heatmap sidecar");
  side << sidecar.dump() << "\n";
}

}  // namespace mvpose
