#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace gaitforge {

inline constexpr double kGravity = 9.81;

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Rigid placement of a frame: x_parent = rotation * x_local + translation.
struct FramePlacement {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static FramePlacement from_xyz_rpy(const Vector6d& xyz_rpy);

  FramePlacement operator*(const FramePlacement& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
  Eigen::Vector3d act(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  FramePlacement inverse() const {
    return {rotation.transpose(), -rotation.transpose() * translation};
  }
};

/// R = Rz(yaw) * Ry(pitch) * Rx(roll).
Eigen::Matrix3d rotation_from_rpy(double roll, double pitch, double yaw);

enum class JointType { Revolute, Prismatic, Floating6, Fixed };
enum class ClosureKind { Point3, PlanarPoint2, Pin5 };
enum class Side { Left, Right };

inline Side other_side(Side s) { return s == Side::Left ? Side::Right : Side::Left; }
const char* to_string(Side s);
const char* to_string(JointType t);
const char* to_string(ClosureKind k);

struct Body {
  std::string name;
  double mass = 0.0;
  Eigen::Vector3d com = Eigen::Vector3d::Zero();
  Eigen::Matrix3d inertia = Eigen::Matrix3d::Zero();  // about com, body frame
};

struct JointSpec {
  std::string name;
  JointType type = JointType::Revolute;
  int parent = -1;  // body index
  int child = -1;   // body index
  Vector6d origin = Vector6d::Zero();  // x, y, z, roll, pitch, yaw
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  // One (lo, hi) pair per coordinate; floating6 carries six pairs.
  std::vector<double> lower;
  std::vector<double> upper;
  double velocity_limit = 0.0;
  double torque_limit = 0.0;
  bool actuated = false;

  int num_coords() const {
    switch (type) {
      case JointType::Floating6: return 6;
      case JointType::Fixed: return 0;
      default: return 1;
    }
  }
};

struct LoopClosure {
  std::string name;
  ClosureKind kind = ClosureKind::Point3;
  int parent_body = -1;
  Eigen::Vector3d parent_point = Eigen::Vector3d::Zero();
  int child_body = -1;
  Eigen::Vector3d child_point = Eigen::Vector3d::Zero();
  // planar_point2: plane normal in the parent body frame.
  // pin5: hinge axis in the parent body frame.
  Eigen::Vector3d normal = Eigen::Vector3d::UnitY();
  // pin5: hinge axis in the child body frame.
  Eigen::Vector3d child_axis = Eigen::Vector3d::UnitY();
  bool has_normal = false;
  bool has_child_axis = false;

  int rows() const {
    switch (kind) {
      case ClosureKind::Point3: return 3;
      case ClosureKind::PlanarPoint2: return 2;
      case ClosureKind::Pin5: return 5;
    }
    return 0;
  }
};

struct ContactPatch {
  Side side = Side::Left;
  int body = -1;
  Vector6d frame_xyz_rpy = Vector6d::Zero();
  FramePlacement frame;  // sole center relative to the body frame
  double la = 0.0;       // length
  double lb = 0.0;       // width
  double mu = 0.0;
  double gamma = 0.0;
};

struct SwapEntry {
  int to = 0;
  int from = 0;
  int sign = 1;
};

/// Raw, unvalidated content of a model file.
struct ModelDescription {
  std::vector<Body> bodies;
  std::vector<JointSpec> joints;
  std::vector<LoopClosure> closures;
  std::vector<ContactPatch> contacts;
  std::vector<SwapEntry> swap;
  bool has_symmetry = false;
  bool fully_actuated_in_stance = false;
};

/// Parse error (with 1-based line number) or invariant violation.
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// One generalized coordinate of the expanded tree. Floating6 joints become
/// six of these (prismatic x, y, z, revolute z, y, x).
struct Link {
  int parent = -1;            // parent link, -1 for the fixed root
  int joint = -1;             // owning JointSpec
  FramePlacement tree;        // parent link frame -> this joint frame at q = 0
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  bool prismatic = false;
  Matrix6d spatial_inertia = Matrix6d::Zero();  // about link origin, link frame
  double mass = 0.0;
  Eigen::Vector3d com = Eigen::Vector3d::Zero();  // link frame
};

/// Body attachment: body frame = link frame * offset (link -1 is the root).
struct BodyFrame {
  int link = -1;
  FramePlacement offset;
};

class RobotModel {
 public:
  static RobotModel from_description(ModelDescription description);

  const ModelDescription& description() const { return desc_; }
  const std::vector<Body>& bodies() const { return desc_.bodies; }
  const std::vector<JointSpec>& joints() const { return desc_.joints; }
  const std::vector<LoopClosure>& closures() const { return desc_.closures; }
  const std::vector<Link>& links() const { return links_; }

  int n() const { return static_cast<int>(links_.size()); }
  int n_a() const { return static_cast<int>(actuated_.size()); }
  int n_u() const { return static_cast<int>(unactuated_.size()); }
  int closure_rows() const { return closure_rows_; }

  const std::vector<int>& actuated() const { return actuated_; }
  const std::vector<int>& unactuated() const { return unactuated_; }
  bool is_actuated(int coord) const { return actuated_mask_[coord]; }

  const std::vector<std::string>& coordinate_names() const { return coord_names_; }
  const Eigen::VectorXd& lower_limits() const { return lower_; }
  const Eigen::VectorXd& upper_limits() const { return upper_; }
  /// Torque limits of the actuated coordinates, in A order.
  const Eigen::VectorXd& torque_limits() const { return torque_limits_; }

  /// Transmission matrix B (n x n_a).
  Eigen::MatrixXd transmission() const;

  int body_index(const std::string& name) const;  // throws ModelError
  const BodyFrame& body_frame(int body) const { return body_frames_[body]; }
  /// Links whose coordinates move the given link, root first.
  const std::vector<int>& ancestors(int link) const { return ancestors_[link]; }

  const ContactPatch& contact(Side side) const;
  bool has_contacts() const { return has_left_ && has_right_; }

  /// First coordinate of the floating6 joint, or -1.
  int floating_base() const { return floating_base_; }
  /// Body carried by the floating joint (the torso), or -1.
  int torso_body() const { return torso_body_; }

  bool has_symmetry() const { return desc_.has_symmetry; }
  /// Signed permutation: out[i] = sign[i] * in[perm[i]].
  const std::vector<int>& swap_permutation() const { return swap_perm_; }
  const std::vector<int>& swap_signs() const { return swap_sign_; }
  bool fully_actuated_in_stance() const { return desc_.fully_actuated_in_stance; }

  double total_mass() const;

  Eigen::VectorXd neutral_configuration() const;

 private:
  ModelDescription desc_;
  std::vector<Link> links_;
  std::vector<BodyFrame> body_frames_;
  std::vector<std::vector<int>> ancestors_;
  std::vector<int> actuated_, unactuated_;
  std::vector<bool> actuated_mask_;
  std::vector<std::string> coord_names_;
  Eigen::VectorXd lower_, upper_, torque_limits_;
  std::vector<int> swap_perm_, swap_sign_;
  int closure_rows_ = 0;
  int floating_base_ = -1;
  int torso_body_ = -1;
  bool has_left_ = false, has_right_ = false;
};

ModelDescription parse_model(const std::string& text);
RobotModel load_model(const std::string& path);
/// Canonical text form; reloading it yields an identical model.
std::string serialize_model(const RobotModel& model);
/// SHA-256 of the canonical text form.
std::string model_hash(const RobotModel& model);

/// Applies the declared leg-swap signed permutation to (q, qd).
std::pair<Eigen::VectorXd, Eigen::VectorXd> swap_legs(const RobotModel& model,
                                                      const Eigen::VectorXd& q,
                                                      const Eigen::VectorXd& qd);
Eigen::VectorXd swap_coordinates(const RobotModel& model, const Eigen::VectorXd& q);

/// Directory holding the bundled *.model files.
std::string bundled_model_dir();
std::string bundled_model_path(const std::string& name);

}  // namespace gaitforge
