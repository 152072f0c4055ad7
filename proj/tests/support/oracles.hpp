#pragma once

// Reference computations for the tests. Each one is written from the
// definition with plain loops and does not call the code path it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/SVD>

#include "mvpose/association.hpp"
#include "mvpose/geometry.hpp"
#include "mvpose/heatmap.hpp"
#include "mvpose/skeleton.hpp"

namespace oracle {

using namespace mvpose;

inline std::array<double, 2> project(const Camera& cam, const Vec3& x) {
  double h[3] = {0.0, 0.0, 0.0};
  const double p[4] = {x.x(), x.y(), x.z(), 1.0};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) h[r] += cam.P(r, c) * p[c];
  }
  return {h[0] / h[2], h[1] / h[2]};
}

// Weighted DLT with the normalization done inline.
inline Vec3 dlt(const std::vector<const Camera*>& cams, const std::vector<Vec2>& uv, const std::vector<double>& w) {
  Eigen::MatrixXd A(2 * cams.size(), 4);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const auto& P = cams[i]->P;
    Eigen::RowVector4d r0 = uv[i].x() * P.row(2) - P.row(0);
    Eigen::RowVector4d r1 = uv[i].y() * P.row(2) - P.row(1);
    A.row(2 * i) = w[i] * r0 / r0.norm();
    A.row(2 * i + 1) = w[i] * r1 / r1.norm();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d X = svd.matrixV().col(3);
  return X.head<3>() / X(3);
}

// Eq. (2) about the peak, summed cell by cell in full-image pixels.
inline Mat2 brute_covariance(const Heatmap& hm, int j, const Vec2& peak, double peak_conf, double rel_threshold) {
  const double thr = rel_threshold * peak_conf;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  long k = 0;
  for (int y = 0; y < hm.height(); ++y) {
    for (int x = 0; x < hm.width(); ++x) {
      const double c = hm.at(j, x, y);
      if (c < thr) continue;
      const double du = hm.origin().x() + hm.stride() * (x + 0.5) - peak.x();
      const double dv = hm.origin().y() + hm.stride() * (y + 0.5) - peak.y();
      sxx += c * du * du;
      sxy += c * du * dv;
      syy += c * dv * dv;
      ++k;
    }
  }
  Mat2 m = Mat2::Zero();
  if (k == 0) return m;
  m << sxx / k, sxy / k, sxy / k, syy / k;
  return m;
}

struct ArgMax {
  int x = 0;
  int y = 0;
  double value = 0.0;
};

inline ArgMax exhaustive_argmax(const Heatmap& hm, int j) {
  ArgMax best{0, 0, -1.0};
  for (int y = 0; y < hm.height(); ++y) {
    for (int x = 0; x < hm.width(); ++x) {
      if (hm.at(j, x, y) > best.value) best = {x, y, hm.at(j, x, y)};
    }
  }
  return best;
}

struct Moments {
  VecX mean;
  MatX cov;
};

// Monte-Carlo propagation of N(mean, diag blocks) through f.
template <typename F>
Moments monte_carlo(const VecX& mean, const MatX& cov, F&& f, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  const Eigen::LLT<MatX> llt(cov);
  const MatX L = llt.matrixL();
  std::vector<VecX> ys;
  ys.reserve(static_cast<std::size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    VecX z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = n01(rng);
    ys.push_back(f(VecX(mean + L * z)));
  }
  Moments m;
  m.mean = VecX::Zero(ys.front().size());
  for (const auto& y : ys) m.mean += y;
  m.mean /= samples;
  m.cov = MatX::Zero(m.mean.size(), m.mean.size());
  for (const auto& y : ys) m.cov += (y - m.mean) * (y - m.mean).transpose();
  m.cov /= (samples - 1);
  return m;
}

// Lowest-cost assignment of each view's persons to the persons of the first
// view, by enumeration. cost(v, i, j) is the pairwise cost between person i
// of view 0 and person j of view v. Returns perm[v][i] = j.
template <typename Cost>
std::vector<std::vector<int>> exhaustive_assignment(int views, int persons, Cost&& cost) {
  std::vector<std::vector<int>> best(static_cast<std::size_t>(views));
  best[0].resize(static_cast<std::size_t>(persons));
  std::iota(best[0].begin(), best[0].end(), 0);
  for (int v = 1; v < views; ++v) {
    std::vector<int> perm(static_cast<std::size_t>(persons));
    std::iota(perm.begin(), perm.end(), 0);
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (int i = 0; i < persons; ++i) c += cost(v, i, perm[static_cast<std::size_t>(i)]);
      if (c < best_cost) {
        best_cost = c;
        best[static_cast<std::size_t>(v)] = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return best;
}

inline double mean_joint_error_mm(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = a[i].x() - b[i].x();
    const double dy = a[i].y() - b[i].y();
    const double dz = a[i].z() - b[i].z();
    s += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return 1000.0 * s / static_cast<double>(a.size());
}

inline double pcp_percent(const std::vector<Vec3>& est, const std::vector<Vec3>& gt, const SkeletonTopology& topo) {
  int ok = 0;
  for (const auto& b : topo.bones()) {
    const auto p = static_cast<std::size_t>(b.parent);
    const auto c = static_cast<std::size_t>(b.child);
    const double len = (gt[p] - gt[c]).norm();
    const double err = 0.5 * ((est[p] - gt[p]).norm() + (est[c] - gt[c]).norm());
    if (err < 0.5 * len) ++ok;
  }
  return 100.0 * ok / static_cast<double>(topo.bones().size());
}

// EMA seeded with the warm-up mean, closed form for a constant input after
// a step: est_n = new + (old - new) * (1 - k)^n.
inline double ema_after_step(double old_value, double new_value, double factor, int n) {
  return new_value + (old_value - new_value) * std::pow(1.0 - factor, n);
}

}  // namespace oracle
