#include <doctest.h>

#include <filesystem>
#include <random>

#include <Eigen/Eigenvalues>

#include "mvpose/error.hpp"
#include "mvpose/heatmap.hpp"
#include "mvpose/kernels.hpp"
#include "../support/oracles.hpp"

using namespace mvpose;

namespace {

Heatmap random_map(std::mt19937_64& rng, int joints, int w, int h, double density) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Heatmap hm(joints, w, h, Vec2(10.0 * u(rng), -5.0 * u(rng)), 0.5 + 3.0 * u(rng));
  for (int j = 0; j < joints; ++j) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (u(rng) < density) hm.set(j, x, y, u(rng));
      }
    }
  }
  return hm;
}

Heatmap blob(double sx, double sy, int n = 64) {
  Heatmap hm(1, n, n, Vec2::Zero(), 1.0);
  const double c = n / 2 + 0.5;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - c;
      const double dy = y + 0.5 - c;
      hm.set(0, x, y, std::exp(-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy))));
    }
  }
  return hm;
}

}  // namespace

TEST_CASE("extract_peak basics") {
  Heatmap hm(2, 8, 6, Vec2(100, 200), 4.0);
  hm.set(0, 3, 2, 0.9);
  const auto d = extract_peak(hm, 0);
  CHECK(d.valid);
  CHECK(d.confidence == doctest::Approx(0.9f));
  CHECK((d.position - Vec2(100 + 4 * 3.5, 200 + 4 * 2.5)).norm() < 1e-12);
  // Single contributing cell: zero spread, so the (stride/2)^2 fallback.
  CHECK((d.cov - 4.0 * Mat2::Identity()).norm() < 1e-12);

  const auto z = extract_peak(hm, 1);
  CHECK_FALSE(z.valid);
  CHECK(z.confidence == 0.0);
}

TEST_CASE("extract_peak breaks ties row-major") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cell(0, 15);
  for (int t = 0; t < 100; ++t) {
    Heatmap hm(1, 16, 16, Vec2::Zero(), 1.0);
    for (int k = 0; k < 3; ++k) hm.set(0, cell(rng), cell(rng), 0.7);
    const auto ref = oracle::exhaustive_argmax(hm, 0);
    const auto d = extract_peak(hm, 0);
    CHECK((d.position - Vec2(ref.x + 0.5, ref.y + 0.5)).norm() < 1e-12);
    CHECK((extract_peak(hm, 0).position - d.position).norm() == 0.0);
  }
}

TEST_CASE("extract_covariance equals the brute-force sum") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    const Heatmap hm = random_map(rng, 1, 20 + t % 13, 15 + t % 7, 0.3);
    const auto d = extract_peak(hm, 0);
    if (!(d.confidence > 0.0)) continue;
    const Mat2 ref = oracle::brute_covariance(hm, 0, d.position, d.confidence, 0.1);
    const Mat2 got = extract_covariance(hm, 0, d.position, d.confidence);
    if (ref.trace() > 0.0) {
      CHECK((got - ref).norm() <= 1e-10 * ref.norm());
    }
  }
}

TEST_CASE("extract_covariance shape") {
  const Heatmap iso = blob(3.0, 3.0);
  const auto d = extract_peak(iso, 0);
  const Mat2 c = d.cov;
  CHECK(std::abs(c(0, 0) - c(1, 1)) / c(0, 0) < 0.05);
  CHECK(std::abs(c(0, 1)) < 0.05 * c(0, 0));

  const Heatmap elong = blob(5.0, 1.0);
  const Mat2 e = extract_peak(elong, 0).cov;
  CHECK(e(0, 0) > e(1, 1));
  Eigen::SelfAdjointEigenSolver<Mat2> es(e);
  const Vec2 major = es.eigenvectors().col(1);
  CHECK(std::abs(major.x()) > std::cos(10.0 * 3.14159265358979 / 180.0));
}

TEST_CASE("render_gaussian") {
  Heatmap hm(1, 21, 21, Vec2::Zero(), 1.0);
  const Vec2 mean(10.5, 10.5);
  render_gaussian(hm, 0, {mean, 4.0 * Mat2::Identity()}, 1.0);
  CHECK(hm.at(0, 10, 10) == doctest::Approx(1.0));
  CHECK(hm.at(0, 12, 10) == doctest::Approx(std::exp(-0.5)).epsilon(0.02));
  // Outside 3 sigma stays untouched.
  CHECK(hm.at(0, 17, 10) == 0.0f);

  const Heatmap once = hm;
  render_gaussian(hm, 0, {mean, 4.0 * Mat2::Identity()}, 1.0);
  CHECK(hm == once);
  render_gaussian(hm, 0, {mean, 4.0 * Mat2::Identity()}, 0.0);
  CHECK(hm == once);

  // Singular covariance is regularized instead of producing NaN.
  Heatmap s(1, 9, 9, Vec2::Zero(), 1.0);
  render_gaussian(s, 0, {Vec2(4.5, 4.5), Mat2::Zero()}, 0.5);
  CHECK(s.at(0, 4, 4) == doctest::Approx(0.5));
  for (float v : s.channel(0)) CHECK(std::isfinite(v));
}

TEST_CASE("fusion rule") {
  Heatmap det(1, 3, 1, Vec2::Zero(), 1.0);
  Heatmap fb = det;
  det.set(0, 0, 0, 0.8);
  fb.set(0, 0, 0, 1.0);
  det.set(0, 1, 0, 0.3);
  const FusionGains paper{0.15, 0.75};
  CHECK(fuse_value(0.8, 1.0, paper) == doctest::Approx(8.3));
  const Heatmap out = fuse(det, fb, paper);
  CHECK(out.at(0, 0, 0) == 1.0f);
  CHECK(out.at(0, 1, 0) == det.at(0, 1, 0));
  CHECK_THROWS_AS(fuse(det, fb, FusionGains{0.5, 0.5}), Error);
  try {
    check_gains({0.6, 0.5});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::GainDomain);
  }
  Heatmap other(1, 3, 1, Vec2(1, 0), 1.0);
  CHECK_THROWS_AS(fuse(det, other, paper), Error);
}

TEST_CASE("fusion identity and monotonicity on random maps") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> g(0.0, 0.49);
  for (int t = 0; t < 30; ++t) {
    const Heatmap det = random_map(rng, 2, 17, 13, 0.6);
    Heatmap zero(det.joints(), det.width(), det.height(), det.origin(), det.stride());
    const FusionGains gains{g(rng), g(rng)};
    for (auto sat : {Saturation::Clamp, Saturation::Normalize}) {
      CHECK(fuse(det, zero, gains, sat) == det);
    }
    for (int j = 0; j < det.joints(); ++j) {
      for (float d : det.channel(j)) {
        const double f = d + (1.0 - d) * 0.5;
        CHECK(fuse_value(d, f, gains) >= d);
      }
    }
  }
}

TEST_CASE("normalize keeps the channel shape") {
  Heatmap det(1, 4, 1, Vec2::Zero(), 1.0);
  Heatmap fb = det;
  det.set(0, 0, 0, 0.9);
  det.set(0, 1, 0, 0.2);
  fb.set(0, 0, 0, 0.5);
  const Heatmap out = fuse(det, fb, {}, Saturation::Normalize);
  CHECK(out.at(0, 0, 0) == doctest::Approx(1.0));
  const double peak = fuse_value(0.9, 0.5, {});
  CHECK(out.at(0, 1, 0) == doctest::Approx(0.2 / peak).epsilon(1e-6));
  for (float v : out.channel(0)) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  std::mt19937_64 rng(31);
  const Heatmap det = random_map(rng, 17, 32, 32, 0.5);
  const Heatmap fb = random_map(rng, 17, 32, 32, 0.2);
  Heatmap fb2(fb.joints(), fb.width(), fb.height(), det.origin(), det.stride());
  for (int j = 0; j < 17; ++j) std::copy(fb.channel(j).begin(), fb.channel(j).end(), fb2.channel(j).begin());
  for (auto sat : {Saturation::Clamp, Saturation::Normalize}) {
    Heatmap a(17, 32, 32, det.origin(), det.stride());
    Heatmap b = a;
    kernels::serial::fuse(det, fb2, {}, sat, a);
    kernels::parallel::fuse(det, fb2, {}, sat, b);
    CHECK(a == b);
  }
  const auto ea = kernels::serial::extract_all(det, {});
  const auto eb = kernels::parallel::extract_all(det, {});
  for (std::size_t j = 0; j < ea.size(); ++j) {
    CHECK(ea[j].position == eb[j].position);
    CHECK(ea[j].cov == eb[j].cov);
  }
  std::vector<Gaussian2D> blobs(17);
  std::vector<double> amps(17, 0.7);
  for (int j = 0; j < 17; ++j) blobs[static_cast<std::size_t>(j)] = {det.origin() + Vec2(j, 2 * j), (1.0 + j) * Mat2::Identity()};
  Heatmap ra(17, 32, 32, det.origin(), det.stride());
  Heatmap rb = ra;
  kernels::serial::render_all(ra, blobs, amps);
  kernels::parallel::render_all(rb, blobs, amps);
  CHECK(ra == rb);
  CHECK(kernels::max_threads() >= 1);
}

TEST_CASE("values stay in range and dimensions are checked") {
  Heatmap hm(1, 2, 2, Vec2::Zero(), 1.0);
  hm.set(0, 0, 0, 3.0);
  hm.set(0, 1, 0, -1.0);
  hm.set(0, 0, 1, std::nan(""));
  CHECK(hm.at(0, 0, 0) == 1.0f);
  CHECK(hm.at(0, 1, 0) == 0.0f);
  CHECK(hm.at(0, 0, 1) == 0.0f);
  CHECK_THROWS_AS(Heatmap(0, 2, 2, Vec2::Zero(), 1.0), Error);
  CHECK_THROWS_AS(Heatmap(1, 2, 2, Vec2::Zero(), 0.0), Error);
}

TEST_CASE("debug dump writes one image per channel") {
  const auto dir = std::filesystem::temp_directory_path() / "mvpose_dump_test";
  std::filesystem::remove_all(dir);
  Heatmap hm(2, 4, 3, Vec2(1, 2), 2.0);
  hm.set(1, 2, 1, 1.0);
  dump_heatmap(hm, dir, "h");
  CHECK(std::filesystem::exists(dir / "h_0.pgm"));
  CHECK(std::filesystem::exists(dir / "h_1.pgm"));
  CHECK(std::filesystem::exists(dir / "h.json"));
  CHECK(std::filesystem::file_size(dir / "h_1.pgm") > 12u);
  std::filesystem::remove_all(dir);
}
