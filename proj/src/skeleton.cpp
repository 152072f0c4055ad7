#include "mvpose/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "mvpose/error.hpp"

namespace mvpose {

namespace {

constexpr double kNormFloor = 1e-9;
constexpr double kInformationJitter = 1e-9;

}  // namespace

std::string_view to_string(JointClass c) {
  switch (c) {
    case JointClass::Hips: return "hips";
    case JointClass::Knees: return "knees";
    case JointClass::Ankles: return "ankles";
    case JointClass::Shoulders: return "shoulders";
    case JointClass::Elbows: return "elbows";
    case JointClass::Wrists: return "wrists";
    case JointClass::Other: return "other";
  }
  return "other";
}

JointClass classify_joint(std::string_view name) {
  auto has = [&](std::string_view s) { return name.find(s) != std::string_view::npos; };
  if (has("hip")) return JointClass::Hips;
  if (has("knee")) return JointClass::Knees;
  if (has("ankle")) return JointClass::Ankles;
  if (has("shoulder")) return JointClass::Shoulders;
  if (has("elbow")) return JointClass::Elbows;
  if (has("wrist")) return JointClass::Wrists;
  return JointClass::Other;
}

SkeletonTopology::SkeletonTopology(std::vector<std::string> names, std::vector<Bone> bones)
    : names_(std::move(names)), bones_(std::move(bones)) {
  validate();
  classes_.reserve(names_.size());
  for (const auto& n : names_) classes_.push_back(classify_joint(n));
}

void SkeletonTopology::validate() const {
  const int J = joint_count();
  if (J == 0) throw Error(Errc::InvalidArgument, "topology has no joints");
  if (static_cast<int>(bones_.size()) != J - 1) {
    throw Error(Errc::InvalidArgument, "topology must be a tree with J-1 bones");
  }
  // Union-find over the edges: J-1 edges without a cycle span the tree.
  std::vector<int> parent(static_cast<std::size_t>(J));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  };
  for (const auto& b : bones_) {
    if (b.parent < 0 || b.parent >= J || b.child < 0 || b.child >= J || b.parent == b.child) {
      throw Error(Errc::InvalidArgument, "bone references an invalid joint");
    }
    if (!(b.length > 0.0) || !(b.sigma > 0.0)) {
      throw Error(Errc::InvalidArgument, "bone length and sigma must be positive");
    }
    const int ra = find(b.parent);
    const int rb = find(b.child);
    if (ra == rb) throw Error(Errc::InvalidArgument, "bones contain a cycle");
    parent[static_cast<std::size_t>(ra)] = rb;
  }
}

int SkeletonTopology::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

SkeletonTopology SkeletonTopology::default17() {
  std::vector<std::string> names = {
      "pelvis",     "spine",   "neck",    "head",       "nose",    "l_hip",   "l_knee",     "l_ankle", "r_hip",
      "r_knee",     "r_ankle", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};
  constexpr double s = 0.05;
  std::vector<Bone> bones = {
      {0, 1, 0.25, s},  {1, 2, 0.30, s},  {2, 3, 0.15, s},   {3, 4, 0.10, s},
      {0, 5, 0.12, s},  {5, 6, 0.45, s},  {6, 7, 0.42, s},   {0, 8, 0.12, s},
      {8, 9, 0.45, s},  {9, 10, 0.42, s}, {2, 11, 0.17, s},  {11, 12, 0.29, s},
      {12, 13, 0.26, s}, {2, 14, 0.17, s}, {14, 15, 0.29, s}, {15, 16, 0.26, s}};
  return SkeletonTopology(std::move(names), std::move(bones));
}

SkeletonTopology parse_topology(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaViolation, std::string("topology is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("joints") || !doc.contains("bones")) {
    throw Error(Errc::SchemaViolation, "topology needs 'joints' and 'bones'");
  }
  for (const auto& [key, _] : doc.items()) {
    if (key != "joints" && key != "bones") throw Error(Errc::SchemaViolation, "unknown topology field '" + key + "'");
  }
  std::vector<std::string> names;
  for (const auto& n : doc["joints"]) {
    if (!n.is_string()) throw Error(Errc::SchemaViolation, "joint names must be strings");
    names.push_back(n.get<std::string>());
  }
  std::vector<Bone> bones;
  for (const auto& b : doc["bones"]) {
    if (!b.is_array() || (b.size() != 3 && b.size() != 4)) {
      throw Error(Errc::SchemaViolation, "bone entries are [parent, child, l_mean, l_sigma]");
    }
    Bone bone;
    bone.parent = b[0].get<int>();
    bone.child = b[1].get<int>();
    bone.length = b[2].get<double>();
    bone.sigma = b.size() == 4 ? b[3].get<double>() : 0.05;
    bones.push_back(bone);
  }
  return SkeletonTopology(std::move(names), std::move(bones));
}

SkeletonTopology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open topology file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_topology(ss.str());
}

std::string topology_to_json(const SkeletonTopology& topo) {
  nlohmann::json bones = nlohmann::json::array();
  for (const auto& b : topo.bones()) bones.push_back({b.parent, b.child, b.length, b.sigma});
  return nlohmann::json{{"joints", topo.joint_names()}, {"bones", bones}}.dump(2);
}

int Skeleton3D::valid_count() const {
  return static_cast<int>(std::count_if(joints.begin(), joints.end(), [](const JointState& j) { return j.valid; }));
}

FactorGraph build_graph(std::span<const Gaussian3D> triangulated, std::span<const bool> valid,
                        const SkeletonTopology& topo) {
  const int J = topo.joint_count();
  if (static_cast<int>(triangulated.size()) != J || static_cast<int>(valid.size()) != J) {
    throw Error(Errc::InvalidArgument, "joint arrays do not match the topology");
  }
  FactorGraph g;
  g.joint_count = J;
  g.var_of_joint.assign(static_cast<std::size_t>(J), -1);
  for (int j = 0; j < J; ++j) {
    if (!valid[static_cast<std::size_t>(j)]) continue;
    const int var = g.variable_count();
    g.var_of_joint[static_cast<std::size_t>(j)] = var;
    g.joint_of_var.push_back(j);

    const Gaussian3D& obs = triangulated[static_cast<std::size_t>(j)];
    UnaryFactor u;
    u.var = var;
    u.mean = obs.mean;
    u.covariance = symmetrized(obs.cov);
    Eigen::SelfAdjointEigenSolver<Mat3> es(u.covariance);
    const Vec3 eig = es.eigenvalues().cwiseMax(0.0).array() + kInformationJitter;
    u.information = es.eigenvectors() * eig.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    u.information = symmetrized(u.information);
    u.sqrt_information = eig.cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    g.unaries.push_back(u);
  }
  if (g.variable_count() == 0) throw Error(Errc::EmptyGraph, "no valid joint to optimize");

  for (const auto& b : topo.bones()) {
    const int va = g.var_of_joint[static_cast<std::size_t>(b.parent)];
    const int vb = g.var_of_joint[static_cast<std::size_t>(b.child)];
    if (va < 0 || vb < 0) continue;
    g.pairwise.push_back({va, vb, b.length, b.sigma});
  }
  return g;
}

double pairwise_residual(const Vec3& xa, const Vec3& xb, double length, double sigma) {
  return ((xa - xb).norm() - length) / sigma;
}

Vec3 pairwise_jacobian(const Vec3& xa, const Vec3& xb, double sigma) {
  const Vec3 d = xa - xb;
  return d / (std::max(d.norm(), kNormFloor) * sigma);
}

double graph_cost(const FactorGraph& graph, std::span<const Vec3> x) {
  double cost = 0.0;
  for (const auto& u : graph.unaries) {
    cost += (u.sqrt_information * (x[static_cast<std::size_t>(u.var)] - u.mean)).squaredNorm();
  }
  for (const auto& p : graph.pairwise) {
    const double r = pairwise_residual(x[static_cast<std::size_t>(p.var_a)], x[static_cast<std::size_t>(p.var_b)], p.length, p.sigma);
    cost += r * r;
  }
  return cost;
}

namespace {

// Gauss-Newton normal equations H = J^T J, g = J^T r at x.
void normal_equations(const FactorGraph& graph, std::span<const Vec3> x, MatX& H, VecX& g) {
  const int n = 3 * graph.variable_count();
  H.setZero(n, n);
  g.setZero(n);
  for (const auto& u : graph.unaries) {
    const int k = 3 * u.var;
    const Vec3 r = u.sqrt_information * (x[static_cast<std::size_t>(u.var)] - u.mean);
    H.block<3, 3>(k, k) += u.information;
    g.segment<3>(k) += u.sqrt_information.transpose() * r;
  }
  for (const auto& p : graph.pairwise) {
    const Vec3& xa = x[static_cast<std::size_t>(p.var_a)];
    const Vec3& xb = x[static_cast<std::size_t>(p.var_b)];
    const double r = pairwise_residual(xa, xb, p.length, p.sigma);
    const Vec3 ja = pairwise_jacobian(xa, xb, p.sigma);
    const Mat3 jj = ja * ja.transpose();
    const int a = 3 * p.var_a;
    const int b = 3 * p.var_b;
    H.block<3, 3>(a, a) += jj;
    H.block<3, 3>(b, b) += jj;
    H.block<3, 3>(a, b) -= jj;
    H.block<3, 3>(b, a) -= jj;
    g.segment<3>(a) += ja * r;
    g.segment<3>(b) -= ja * r;
  }
}

}  // namespace

OptimizeResult optimize(const FactorGraph& graph, std::span<const Vec3> init, const LmParams& params) {
  if (static_cast<int>(init.size()) != graph.joint_count) {
    throw Error(Errc::InvalidArgument, "init must provide one point per joint");
  }
  const int V = graph.variable_count();
  std::vector<Vec3> x(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) x[static_cast<std::size_t>(v)] = init[static_cast<std::size_t>(graph.joint_of_var[static_cast<std::size_t>(v)])];

  OptimizeResult res;
  double cost = graph_cost(graph, x);
  res.initial_cost = cost;
  res.cost_history.push_back(cost);

  double lambda = params.initial_damping;
  MatX H;
  VecX g;
  std::vector<Vec3> trial(x.size());
  bool converged = cost <= params.absolute_tolerance;
  while (!converged && res.iterations < params.max_iterations) {
    normal_equations(graph, x, H, g);
    bool accepted = false;
    while (!accepted) {
      MatX damped = H;
      damped.diagonal().array() += lambda;
      Eigen::LDLT<MatX> ldlt(damped);
      const VecX delta = -ldlt.solve(g);
      if (ldlt.info() == Eigen::Success && delta.allFinite()) {
        for (int v = 0; v < V; ++v) trial[static_cast<std::size_t>(v)] = x[static_cast<std::size_t>(v)] + delta.segment<3>(3 * v);
        const double trial_cost = graph_cost(graph, trial);
        if (trial_cost < cost) {
          const double decrease = (cost - trial_cost) / std::max(cost, 1e-300);
          x.swap(trial);
          cost = trial_cost;
          res.cost_history.push_back(cost);
          ++res.iterations;
          lambda = std::max(lambda * params.damping_decrease, 1e-15);
          accepted = true;
          if (decrease < params.relative_tolerance || cost <= params.absolute_tolerance) converged = true;
          break;
        }
      }
      lambda *= params.damping_increase;
      if (lambda > params.max_damping) {
        // No descent direction left at any damping: x is a local minimum.
        converged = true;
        break;
      }
    }
  }
  res.converged = converged;
  res.final_cost = cost;

  normal_equations(graph, x, H, g);
  Eigen::LDLT<MatX> ldlt(H);
  MatX cov;
  bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
  if (ok) {
    cov = ldlt.solve(MatX::Identity(3 * V, 3 * V));
    ok = cov.allFinite();
  }
  res.singular_information = !ok;
  res.joints.resize(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) {
    auto& out = res.joints[static_cast<std::size_t>(v)];
    out.mean = x[static_cast<std::size_t>(v)];
    if (ok) {
      out.cov = symmetrized(cov.block<3, 3>(3 * v, 3 * v));
      if (min_eigenvalue(out.cov) < -1e-9) {
        res.singular_information = true;
        out.cov = graph.unaries[static_cast<std::size_t>(v)].covariance;
      }
    } else {
      out.cov = graph.unaries[static_cast<std::size_t>(v)].covariance;
    }
  }
  return res;
}

double bone_prior_residual(std::span<const Vec3> joints, std::span<const bool> valid, const SkeletonTopology& topo) {
  double total = 0.0;
  for (const auto& b : topo.bones()) {
    if (!valid[static_cast<std::size_t>(b.parent)] || !valid[static_cast<std::size_t>(b.child)]) continue;
    const double r = pairwise_residual(joints[static_cast<std::size_t>(b.parent)], joints[static_cast<std::size_t>(b.child)], b.length, b.sigma);
    total += r * r;
  }
  return total;
}

Skeleton3D predict(const Skeleton3D& skel, double dt, double process_noise) {
  if (dt < 0.0) throw Error(Errc::InvalidArgument, "prediction horizon must be non-negative");
  Skeleton3D out = skel;
  if (dt == 0.0) return out;
  out.timestamp = skel.timestamp + static_cast<Micros>(std::llround(dt * 1e6));
  for (auto& j : out.joints) {
    if (!j.valid) continue;
    j.position.mean += j.velocity * dt;
    j.position.cov.diagonal().array() += process_noise * dt;
  }
  return out;
}

Skeleton3D update_velocity(const Skeleton3D& prev, const Skeleton3D& curr) {
  if (curr.timestamp <= prev.timestamp) {
    throw Error(Errc::NonMonotoneTimestamp, "current skeleton is not newer than the previous one");
  }
  if (prev.joints.size() != curr.joints.size()) {
    throw Error(Errc::InvalidArgument, "skeletons have different joint counts");
  }
  const double dt = static_cast<double>(curr.timestamp - prev.timestamp) * 1e-6;
  Skeleton3D out = curr;
  for (std::size_t j = 0; j < out.joints.size(); ++j) {
    auto& o = out.joints[j];
    const auto& p = prev.joints[j];
    if (!o.valid || !p.valid) {
      o.velocity.setZero();
      o.velocity_known = false;
      continue;
    }
    const Vec3 raw = (o.position.mean - p.position.mean) / dt;
    o.velocity = p.velocity_known ? Vec3(0.5 * p.velocity + 0.5 * raw) : raw;
    o.velocity_known = true;
  }
  return out;
}

bool skeleton_root(const Skeleton3D& skel, Vec3& root) {
  if (skel.joints.empty()) return false;
  if (skel.joints[0].valid) {
    root = skel.joints[0].position.mean;
    return true;
  }
  Vec3 sum = Vec3::Zero();
  int n = 0;
  for (const auto& j : skel.joints) {
    if (!j.valid) continue;
    sum += j.position.mean;
    ++n;
  }
  if (n == 0) return false;
  root = sum / n;
  return true;
}

}  // namespace mvpose
