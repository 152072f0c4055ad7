#include "mvpose/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvpose::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

void fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation, Heatmap& out) {
  const int n = det.joints();
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    fuse_channel(det, fb, gains, saturation, out, j);
  }
}

std::vector<JointDetection2D> extract_all(const Heatmap& hm, const ExtractionParams& params) {
  const int n = hm.joints();
  std::vector<JointDetection2D> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    out[static_cast<std::size_t>(j)] = extract_peak(hm, j, params);
  }
  return out;
}

void render_all(Heatmap& hm, const std::vector<Gaussian2D>& blobs, const std::vector<double>& amplitudes) {
  const int n = hm.joints();
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j) {
    render_gaussian(hm, j, blobs[static_cast<std::size_t>(j)], amplitudes[static_cast<std::size_t>(j)]);
  }
}

}  // namespace parallel
}  // namespace mvpose::kernels
