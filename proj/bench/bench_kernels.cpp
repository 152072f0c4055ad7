// Serial vs OpenMP heatmap kernels on sensor-sized maps.
//   bench_kernels [--cells N] [--reps N]

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "mvpose/kernels.hpp"

using namespace mvpose;

namespace {

template <typename Fn>
double time_ms(int reps, Fn&& fn) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-12s serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  identical=%s\n", name, serial_ms,
              parallel_ms, serial_ms / parallel_ms, identical ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
  int cells = 256;
  int reps = 20;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string a = argv[i];
    if (a == "--cells") cells = std::stoi(argv[i + 1]);
    else if (a == "--reps") reps = std::stoi(argv[i + 1]);
  }
  const int joints = 17;
  std::printf("%d channels of %dx%d cells, %d threads, %d reps\n", joints, cells, cells, kernels::max_threads(),
              reps);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Gaussian2D> blobs;
  std::vector<double> amps;
  for (int j = 0; j < joints; ++j) {
    const double s = 4.0 + 8.0 * u(rng);
    blobs.push_back({Vec2(cells * u(rng), cells * u(rng)), s * s * Mat2::Identity()});
    amps.push_back(0.5 + 0.5 * u(rng));
  }

  Heatmap rs(joints, cells, cells, Vec2::Zero(), 1.0);
  Heatmap rp = rs;
  const double render_s = time_ms(reps, [&] { kernels::serial::render_all(rs, blobs, amps); });
  const double render_p = time_ms(reps, [&] { kernels::parallel::render_all(rp, blobs, amps); });
  report("render", render_s, render_p, rs == rp);

  Heatmap fb(joints, cells, cells, Vec2::Zero(), 1.0);
  for (auto& b : blobs) b.mean += Vec2(3.0, -2.0);
  kernels::serial::render_all(fb, blobs, amps);
  const FusionGains gains{0.15, 0.75};
  Heatmap fs(joints, cells, cells, Vec2::Zero(), 1.0);
  Heatmap fp = fs;
  const double fuse_s = time_ms(reps, [&] { kernels::serial::fuse(rs, fb, gains, Saturation::Normalize, fs); });
  const double fuse_p = time_ms(reps, [&] { kernels::parallel::fuse(rs, fb, gains, Saturation::Normalize, fp); });
  report("fuse", fuse_s, fuse_p, fs == fp);

  std::vector<JointDetection2D> es;
  std::vector<JointDetection2D> ep;
  const double ext_s = time_ms(reps, [&] { es = kernels::serial::extract_all(fs, {}); });
  const double ext_p = time_ms(reps, [&] { ep = kernels::parallel::extract_all(fs, {}); });
  bool same = es.size() == ep.size();
  for (std::size_t i = 0; same && i < es.size(); ++i) {
    same = es[i].position == ep[i].position && es[i].cov == ep[i].cov && es[i].confidence == ep[i].confidence;
  }
  report("extract", ext_s, ext_p, same);
  return 0;
}
