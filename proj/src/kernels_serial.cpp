#include "mvpose/kernels.hpp"

namespace mvpose::kernels::serial {

void fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation, Heatmap& out) {
  for (int j = 0; j < det.joints(); ++j) {
    fuse_channel(det, fb, gains, saturation, out, j);
  }
}

std::vector<JointDetection2D> extract_all(const Heatmap& hm, const ExtractionParams& params) {
  std::vector<JointDetection2D> out(static_cast<std::size_t>(hm.joints()));
  for (int j = 0; j < hm.joints(); ++j) {
    out[static_cast<std::size_t>(j)] = extract_peak(hm, j, params);
  }
  return out;
}

void render_all(Heatmap& hm, const std::vector<Gaussian2D>& blobs, const std::vector<double>& amplitudes) {
  for (int j = 0; j < hm.joints(); ++j) {
    render_gaussian(hm, j, blobs[static_cast<std::size_t>(j)], amplitudes[static_cast<std::size_t>(j)]);
  }
}

}  // namespace mvpose::kernels::serial
