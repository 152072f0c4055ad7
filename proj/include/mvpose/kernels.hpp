#pragma once

#include <vector>

#include "mvpose/heatmap.hpp"

// Whole-heatmap kernels. `serial` is the reference implementation kept for
// testing and benchmarking; `parallel` distributes channels over OpenMP
// threads. Each channel is processed by exactly one thread in the same
// order as the serial code, so both produce bit-identical results.
namespace mvpose::kernels {

namespace serial {

void fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation, Heatmap& out);
std::vector<JointDetection2D> extract_all(const Heatmap& hm, const ExtractionParams& params);
void render_all(Heatmap& hm, const std::vector<Gaussian2D>& blobs, const std::vector<double>& amplitudes);

}  // namespace serial

namespace parallel {

void fuse(const Heatmap& det, const Heatmap& fb, const FusionGains& gains, Saturation saturation, Heatmap& out);
std::vector<JointDetection2D> extract_all(const Heatmap& hm, const ExtractionParams& params);
void render_all(Heatmap& hm, const std::vector<Gaussian2D>& blobs, const std::vector<double>& amplitudes);

}  // namespace parallel

/// Number of worker threads the parallel kernels will use.
int max_threads();

}  // namespace mvpose::kernels
