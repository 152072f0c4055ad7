#include "mvpose/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <json.hpp>

#include "mvpose/error.hpp"

namespace mvpose {

namespace {

constexpr double kMinHomogeneous = 1e-12;
constexpr double kSingularTieTolerance = 1e-9;
constexpr double kCovarianceJitter = 1e-9;

}  // namespace

void Camera::validate() const {
  if (width <= 0 || height <= 0) {
    throw Error(Errc::InvalidArgument, "camera " + std::to_string(id) + " has non-positive image size");
  }
  if (!P.allFinite()) {
    throw Error(Errc::InvalidArgument, "camera " + std::to_string(id) + " has non-finite projection");
  }
  Eigen::FullPivLU<Mat3> lu(P.leftCols<3>());
  if (lu.rank() < 3) {
    throw Error(Errc::InvalidArgument, "camera " + std::to_string(id) + " left 3x3 block is rank deficient");
  }
}

Vec3 Camera::center() const {
  return -P.leftCols<3>().inverse() * P.col(3);
}

double Camera::depth(const Vec3& x) const {
  const Mat3 M = P.leftCols<3>();
  const double w = P.row(2).dot(x.homogeneous());
  const double sign = M.determinant() > 0.0 ? 1.0 : -1.0;
  return sign * w / M.row(2).norm();
}

Vec2 project(const Camera& cam, const Vec3& x) {
  const Vec3 h = cam.P * x.homogeneous();
  if (std::abs(h.z()) <= kMinHomogeneous) {
    throw Error(Errc::DegenerateProjection, "point lies on the principal plane of camera " + std::to_string(cam.id));
  }
  return h.hnormalized();
}

Vec3 triangulate_dlt(std::span<const WeightedView> views) {
  int usable = 0;
  for (const auto& v : views) {
    if (v.weight < 0.0 || !std::isfinite(v.weight)) {
      throw Error(Errc::InvalidArgument, "triangulation weights must be finite and non-negative");
    }
    if (v.weight > 0.0) ++usable;
  }
  if (usable < 2) {
    throw Error(Errc::InsufficientViews, "need at least two views with positive weight, got " + std::to_string(usable));
  }

  Eigen::Matrix<double, Eigen::Dynamic, 4> A(2 * usable, 4);
  int row = 0;
  for (const auto& v : views) {
    if (v.weight <= 0.0) continue;
    const Mat34& P = v.camera->P;
    const Eigen::RowVector4d a_u = v.uv.x() * P.row(2) - P.row(0);
    const Eigen::RowVector4d a_v = v.uv.y() * P.row(2) - P.row(1);
    const double n_u = a_u.norm();
    const double n_v = a_v.norm();
    A.row(row++) = n_u > 0.0 ? (v.weight / n_u) * a_u : a_u;
    A.row(row++) = n_v > 0.0 ? (v.weight / n_v) * a_v : a_v;
  }

  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 4>> svd(A, Eigen::ComputeFullV);
  const Vec4 s = svd.singularValues();
  // Fewer than 4 rows cannot happen (usable >= 2), so s has 4 entries.
  if (s(2) - s(3) <= kSingularTieTolerance * s(0)) {
    throw Error(Errc::DegenerateGeometry, "two smallest singular values coincide; rays are parallel or identical");
  }
  const Vec4 x = svd.matrixV().col(3);
  if (std::abs(x(3)) <= kMinHomogeneous) {
    throw Error(Errc::HomogeneousDivide, "triangulated point is at infinity");
  }
  return x.head<3>() / x(3);
}

GaussianN unscented_transform(const GaussianN& input, const VectorMap& f, const UTParams& params) {
  const Eigen::Index n = input.mean.size();
  if (input.cov.rows() != n || input.cov.cols() != n) {
    throw Error(Errc::InvalidArgument, "covariance shape does not match mean");
  }
  const double lambda = params.alpha * params.alpha * (static_cast<double>(n) + params.kappa) - static_cast<double>(n);
  const double spread = static_cast<double>(n) + lambda;
  if (!(spread > 0.0)) {
    throw Error(Errc::InvalidArgument, "unscented transform spread must be positive");
  }

  MatX cov = symmetrized(input.cov);
  Eigen::LLT<MatX> llt(spread * cov);
  if (llt.info() != Eigen::Success) {
    cov.diagonal().array() += kCovarianceJitter;
    llt.compute(spread * cov);
    if (llt.info() != Eigen::Success) {
      throw Error(Errc::CholeskyFailure, "covariance is not positive definite after jitter");
    }
  }
  const MatX L = llt.matrixL();

  const double w0_mean = lambda / spread;
  const double w0_cov = w0_mean + (1.0 - params.alpha * params.alpha + params.beta);
  const double wi = 1.0 / (2.0 * spread);

  auto eval = [&](const VecX& x) -> VecX {
    try {
      return f(x);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(Errc::MapFailure, e.what());
    }
  };

  // Accumulate deviations from the central image; the sigma-point weights
  // are large with opposite signs and would otherwise cancel catastrophically.
  const VecX y0 = eval(input.mean);
  const Eigen::Index m = y0.size();
  std::vector<VecX> dev;
  dev.reserve(static_cast<std::size_t>(2 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const VecX yp = eval(input.mean + L.col(i));
    const VecX ym = eval(input.mean - L.col(i));
    if (yp.size() != m || ym.size() != m) {
      throw Error(Errc::MapFailure, "map returned inconsistent output dimension");
    }
    dev.push_back(yp - y0);
    dev.push_back(ym - y0);
  }

  VecX shift = VecX::Zero(m);
  for (const auto& d : dev) shift += wi * d;

  GaussianN out;
  out.mean = y0 + shift;
  out.cov = w0_cov * shift * shift.transpose();
  for (const auto& d : dev) {
    const VecX c = d - shift;
    out.cov += wi * c * c.transpose();
  }
  out.cov = symmetrized(out.cov);
  return out;
}

Gaussian3D triangulate_joint(std::span<const JointObservation> observations, const UTParams& params) {
  const auto n_views = static_cast<Eigen::Index>(observations.size());
  GaussianN in;
  in.mean.resize(2 * n_views);
  in.cov = MatX::Zero(2 * n_views, 2 * n_views);
  for (Eigen::Index i = 0; i < n_views; ++i) {
    const auto& o = observations[static_cast<std::size_t>(i)];
    in.mean.segment<2>(2 * i) = o.position.mean;
    in.cov.block<2, 2>(2 * i, 2 * i) = o.position.cov;
  }

  std::vector<WeightedView> views(observations.size());
  for (std::size_t i = 0; i < observations.size(); ++i) {
    views[i].camera = observations[i].camera;
    views[i].weight = observations[i].confidence;
  }

  // Fail fast on degenerate input before spending sigma points on it.
  for (std::size_t i = 0; i < views.size(); ++i) views[i].uv = observations[i].position.mean;
  (void)triangulate_dlt(views);

  const VectorMap dlt = [views](const VecX& stacked) mutable -> VecX {
    for (std::size_t i = 0; i < views.size(); ++i) {
      views[i].uv = stacked.segment<2>(2 * static_cast<Eigen::Index>(i));
    }
    return triangulate_dlt(views);
  };
  const GaussianN out = unscented_transform(in, dlt, params);
  Gaussian3D g;
  g.mean = out.mean;
  g.cov = out.cov;
  return g;
}

Mat3 fundamental_matrix(const Camera& a, const Camera& b) {
  const Vec3 e_b = b.P * a.center().homogeneous();
  Mat3 ex;
  ex << 0, -e_b.z(), e_b.y(), e_b.z(), 0, -e_b.x(), -e_b.y(), e_b.x(), 0;
  const Eigen::Matrix<double, 4, 3> pinv = a.P.transpose() * (a.P * a.P.transpose()).inverse();
  return ex * b.P * pinv;
}

double point_line_distance(const Vec2& uv, const Vec3& line) {
  const double n = line.head<2>().norm();
  if (n <= 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(line.dot(uv.homogeneous())) / n;
}

double symmetric_epipolar_distance(const Mat3& F_ab, const Vec2& ua, const Vec2& ub) {
  const Vec3 line_in_b = F_ab * ua.homogeneous();
  const Vec3 line_in_a = F_ab.transpose() * ub.homogeneous();
  return 0.5 * (point_line_distance(ub, line_in_b) + point_line_distance(ua, line_in_a));
}

double min_eigenvalue(const MatX& m) {
  Eigen::SelfAdjointEigenSolver<MatX> es(symmetrized(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_symmetric_psd(const MatX& m, double eig_floor, double sym_tol) {
  if (m.rows() != m.cols() || !m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) return false;
  return min_eigenvalue(m) >= eig_floor;
}

std::vector<Camera> parse_cameras(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("camera file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(Errc::SchemaViolation, "camera file must be a JSON array");

  std::vector<Camera> cams;
  for (const auto& rec : doc) {
    if (!rec.is_object()) throw Error(Errc::SchemaViolation, "camera record must be an object");
    for (const auto& [key, _] : rec.items()) {
      if (key != "id" && key != "P" && key != "width" && key != "height") {
        throw Error(Errc::SchemaViolation, "unknown camera field '" + key + "'");
      }
    }
    for (const char* key : {"id", "P", "width", "height"}) {
      if (!rec.contains(key)) throw Error(Errc::SchemaViolation, std::string("camera record missing '") + key + "'");
    }
    if (!rec["id"].is_number_integer() || !rec["width"].is_number_integer() || !rec["height"].is_number_integer()) {
      throw Error(Errc::SchemaViolation, "camera id, width and height must be integers");
    }
    Camera cam;
    cam.id = rec["id"].get<int>();
    cam.width = rec["width"].get<int>();
    cam.height = rec["height"].get<int>();
    const auto& P = rec["P"];
    if (!P.is_array() || P.size() != 3) throw Error(Errc::SchemaViolation, "P must have 3 rows");
    for (int r = 0; r < 3; ++r) {
      if (!P[r].is_array() || P[r].size() != 4) throw Error(Errc::SchemaViolation, "P rows must have 4 entries");
      for (int c = 0; c < 4; ++c) {
        if (!P[r][c].is_number()) throw Error(Errc::SchemaViolation, "P entries must be numbers");
        cam.P(r, c) = P[r][c].get<double>();
      }
    }
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open camera file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cameras(ss.str());
}

std::string cameras_to_json(std::span<const Camera> cams) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& c : cams) {
    nlohmann::json P = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) P.push_back({c.P(r, 0), c.P(r, 1), c.P(r, 2), c.P(r, 3)});
    doc.push_back({{"id", c.id}, {"P", P}, {"width", c.width}, {"height", c.height}});
  }
  return doc.dump(2);
}

}  // namespace mvpose
