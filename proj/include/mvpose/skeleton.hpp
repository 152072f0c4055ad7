#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvpose/geometry.hpp"

namespace mvpose {

/// Capture and emission times are integer microseconds since scenario start.
using Micros = std::int64_t;

enum class JointClass { Hips, Knees, Ankles, Shoulders, Elbows, Wrists, Other };

inline constexpr int kNumJointClasses = 7;
std::string_view to_string(JointClass c);
/// Classifies a joint by name ("l_wrist" -> Wrists, "pelvis" -> Other).
JointClass classify_joint(std::string_view name);

struct Bone {
  int parent = 0;
  int child = 0;
  double length = 0.0;  // mean limb length, meters
  double sigma = 0.05;  // standard deviation, meters
};

class SkeletonTopology {
 public:
  SkeletonTopology() = default;
  SkeletonTopology(std::vector<std::string> names, std::vector<Bone> bones);

  /// 17-joint body model with synthetic (not dataset-derived) limb priors.
  static SkeletonTopology default17();

  int joint_count() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& joint_names() const { return names_; }
  const std::vector<Bone>& bones() const { return bones_; }
  JointClass joint_class(int j) const { return classes_[static_cast<std::size_t>(j)]; }
  /// -1 when absent.
  int index_of(std::string_view name) const;

 private:
  void validate() const;

  std::vector<std::string> names_;
  std::vector<Bone> bones_;
  std::vector<JointClass> classes_;
};

// {"joints":[names], "bones":[[parent, child, l_mean, l_sigma], ...]}
SkeletonTopology parse_topology(const std::string& json_text);
SkeletonTopology load_topology(const std::filesystem::path& path);
std::string topology_to_json(const SkeletonTopology& topo);

struct JointState {
  Gaussian3D position;
  bool valid = false;
  Vec3 velocity = Vec3::Zero();  // m/s
  bool velocity_known = false;   // set once a finite difference has been taken
};

struct Skeleton3D {
  int person_id = -1;
  Micros timestamp = 0;
  std::vector<JointState> joints;

  int valid_count() const;
};

struct UnaryFactor {
  int var = 0;
  Vec3 mean = Vec3::Zero();
  Mat3 information = Mat3::Identity();
  Mat3 sqrt_information = Mat3::Identity();  // upper factor U with U^T U = information
  Mat3 covariance = Mat3::Identity();
};

struct PairwiseFactor {
  int var_a = 0;
  int var_b = 0;
  double length = 0.0;
  double sigma = 0.05;
};

struct FactorGraph {
  int joint_count = 0;
  std::vector<int> joint_of_var;  // variable -> joint index
  std::vector<int> var_of_joint;  // joint -> variable, -1 for excluded joints
  std::vector<UnaryFactor> unaries;
  std::vector<PairwiseFactor> pairwise;

  int variable_count() const { return static_cast<int>(joint_of_var.size()); }
};

/// One unary factor per valid joint (information = jittered inverse
/// covariance) and one bone factor per topology edge with both ends valid.
FactorGraph build_graph(std::span<const Gaussian3D> triangulated, std::span<const bool> valid,
                        const SkeletonTopology& topo);

struct LmParams {
  double initial_damping = 1e-4;
  double damping_increase = 10.0;
  double damping_decrease = 0.5;
  int max_iterations = 50;
  double relative_tolerance = 1e-8;
  double absolute_tolerance = 1e-12;
  double max_damping = 1e12;
};

struct OptimizeResult {
  std::vector<Gaussian3D> joints;  // per variable
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted steps
  bool converged = false;
  bool singular_information = false;
  std::vector<double> cost_history;  // cost after every accepted step, starting with the initial cost
};

/// Total squared whitened residual of the graph at the per-variable points.
double graph_cost(const FactorGraph& graph, std::span<const Vec3> x);

/// Levenberg-Marquardt over the joint positions. `init` is indexed by joint
/// (size joint_count); entries for excluded joints are ignored. Marginal
/// covariances are the 3x3 diagonal blocks of the inverse information matrix.
OptimizeResult optimize(const FactorGraph& graph, std::span<const Vec3> init, const LmParams& params = {});

/// Bone residual (|xa - xb| - l) / sigma.
double pairwise_residual(const Vec3& xa, const Vec3& xb, double length, double sigma);
/// Gradient of pairwise_residual with respect to xa; the xb gradient is its negative.
Vec3 pairwise_jacobian(const Vec3& xa, const Vec3& xb, double sigma);

/// Sum over bones with both ends valid of squared bone residuals.
double bone_prior_residual(std::span<const Vec3> joints, std::span<const bool> valid, const SkeletonTopology& topo);

inline constexpr double kDefaultProcessNoise = 0.01;  // m^2/s

/// Constant-velocity extrapolation by dt seconds with covariance inflated
/// by q * dt * I.
Skeleton3D predict(const Skeleton3D& skel, double dt, double process_noise = kDefaultProcessNoise);

/// Finite-difference velocity between consecutive estimates, smoothed as
/// 0.5 * previous + 0.5 * new once a previous velocity exists.
Skeleton3D update_velocity(const Skeleton3D& prev, const Skeleton3D& curr);

/// Pelvis when valid, otherwise centroid of valid joints. Returns false when
/// no joint is valid.
bool skeleton_root(const Skeleton3D& skel, Vec3& root);

}  // namespace mvpose
