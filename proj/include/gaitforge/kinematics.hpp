#pragma once

// Forward kinematics and geometric Jacobians on the expanded link tree.
// Templated on the scalar so the same sweep can run on dual numbers, which is
// how J̇ and the second-order kinematic terms are obtained.

#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gaitforge/dual.hpp"
#include "gaitforge/model.hpp"

namespace gaitforge {

template <typename S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Placement {
  Mat3<S> R = Mat3<S>::Identity();
  Vec3<S> p = Vec3<S>::Zero();

  Vec3<S> act(const Vec3<S>& x) const { return R * x + p; }
  Placement operator*(const FramePlacement& f) const {
    return {R * f.rotation.cast<S>(), R * f.translation.cast<S>() + p};
  }
};

template <typename S>
Mat3<S> skew(const Vec3<S>& v) {
  Mat3<S> m;
  m << S(0.0), -v.z(), v.y(), v.z(), S(0.0), -v.x(), -v.y(), v.x(), S(0.0);
  return m;
}

/// Rotation by angle about a unit axis (Rodrigues).
template <typename S>
Mat3<S> axis_rotation(const Eigen::Vector3d& axis, const S& angle) {
  const Mat3<S> K = skew<double>(axis).template cast<S>();
  return Mat3<S>::Identity() + sin(angle) * K + (S(1.0) - cos(angle)) * (K * K);
}

/// World placement of every link frame plus the world joint axes.
template <typename S>
struct LinkPoses {
  std::vector<Placement<S>> link;  // link frame in world
  std::vector<Vec3<S>> axis;       // joint axis in world

  const Placement<S>& operator[](int i) const { return link[i]; }
};

template <typename S>
LinkPoses<S> link_poses(const RobotModel& model, const VecX<S>& q) {
  const auto& links = model.links();
  LinkPoses<S> out;
  out.link.resize(links.size());
  out.axis.resize(links.size());
  for (size_t i = 0; i < links.size(); ++i) {
    const Link& l = links[i];
    Placement<S> joint = l.parent >= 0 ? out.link[l.parent] * l.tree : Placement<S>{} * l.tree;
    const Vec3<S> axis = joint.R * l.axis.cast<S>();
    out.axis[i] = axis;
    if (l.prismatic) {
      joint.p += axis * q[static_cast<Eigen::Index>(i)];
    } else {
      joint.R = joint.R * axis_rotation<S>(l.axis, q[static_cast<Eigen::Index>(i)]);
    }
    out.link[i] = joint;
  }
  return out;
}

template <typename S>
Placement<S> body_placement(const RobotModel& model, const LinkPoses<S>& poses, int body) {
  const BodyFrame& bf = model.body_frame(body);
  return bf.link >= 0 ? poses[bf.link] * bf.offset : Placement<S>{} * bf.offset;
}

/// Linear velocity Jacobian (3 x n) of a world point rigidly attached to `link`.
template <typename S>
MatX<S> point_jacobian_world(const RobotModel& model, const LinkPoses<S>& poses, int link,
                             const Vec3<S>& point) {
  MatX<S> J = MatX<S>::Zero(3, model.n());
  if (link < 0) return J;
  for (int j : model.ancestors(link)) {
    if (model.links()[j].prismatic) {
      J.col(j) = poses.axis[j];
    } else {
      J.col(j) = poses.axis[j].cross(point - poses[j].p);
    }
  }
  return J;
}

/// Angular velocity Jacobian (3 x n) of `link`, world coordinates.
template <typename S>
MatX<S> angular_jacobian_world(const RobotModel& model, const LinkPoses<S>& poses, int link) {
  MatX<S> J = MatX<S>::Zero(3, model.n());
  if (link < 0) return J;
  for (int j : model.ancestors(link))
    if (!model.links()[j].prismatic) J.col(j) = poses.axis[j];
  return J;
}

}  // namespace gaitforge
