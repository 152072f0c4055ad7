#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mvpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Calibrated pinhole camera. P maps homogeneous world points (meters) to
/// homogeneous pixel coordinates.
struct Camera {
  int id = 0;
  Mat34 P = Mat34::Zero();
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument when the left 3x3 block is rank deficient or the
  /// image size is not positive.
  void validate() const;

  /// Optical center in world coordinates (right null vector of P).
  Vec3 center() const;

  /// Signed depth of x along the principal axis; positive in front.
  double depth(const Vec3& x) const;

  bool in_image(const Vec2& uv) const {
    return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() < width && uv.y() < height;
  }
};

struct Gaussian2D {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
};

struct Gaussian3D {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

struct GaussianN {
  VecX mean;
  MatX cov;
};

/// Scaled unscented transform parameters.
struct UTParams {
  double alpha = 1e-3;  // sigma-point spread
  double beta = 2.0;    // prior knowledge term, 2 is optimal for Gaussians
  double kappa = 0.0;   // secondary scaling
};

Vec2 project(const Camera& cam, const Vec3& x);

/// One row pair of the triangulation system.
struct WeightedView {
  const Camera* camera = nullptr;
  Vec2 uv = Vec2::Zero();
  double weight = 1.0;
};

/// Confidence-weighted DLT. Each row of the 2N x 4 system is scaled by the
/// view weight divided by the L2 norm of the unweighted row; the solution is
/// the right singular vector of the smallest singular value.
Vec3 triangulate_dlt(std::span<const WeightedView> views);

using VectorMap = std::function<VecX(const VecX&)>;

/// Propagates a Gaussian through f with 2n+1 sigma points. The output
/// covariance is symmetrized.
GaussianN unscented_transform(const GaussianN& input, const VectorMap& f,
                              const UTParams& params = {});

struct JointObservation {
  const Camera* camera = nullptr;
  Gaussian2D position;
  double confidence = 1.0;
};

/// Triangulates one joint and its covariance by pushing the stacked 2D
/// observations through triangulate_dlt with the unscented transform.
/// Confidences act as fixed DLT weights for every sigma point.
Gaussian3D triangulate_joint(std::span<const JointObservation> observations,
                             const UTParams& params = {});

/// Fundamental matrix F with x_b^T F x_a = 0 for corresponding points.
Mat3 fundamental_matrix(const Camera& a, const Camera& b);

/// Distance in pixels from point uv to the homogeneous line l.
double point_line_distance(const Vec2& uv, const Vec3& line);

/// Symmetric epipolar distance of a correspondence (mean of both directions).
double symmetric_epipolar_distance(const Mat3& F_ab, const Vec2& ua, const Vec2& ub);

template <typename Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& m) {
  return (0.5 * (m + m.transpose())).eval();
}

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const MatX& m);

bool is_symmetric_psd(const MatX& m, double eig_floor = -1e-9, double sym_tol = 1e-9);

// Calibration file: [{"id":int,"P":[[..4],[..4],[..4]],"width":int,"height":int}]
std::vector<Camera> parse_cameras(const std::string& json_text);
std::vector<Camera> load_cameras(const std::filesystem::path& path);
std::string cameras_to_json(std::span<const Camera> cams);

}  // namespace mvpose
