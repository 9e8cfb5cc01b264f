#pragma once

#include <vector>

#include <Eigen/Core>

#include "gaitforge/model.hpp"

namespace gaitforge {

struct DynamicsTerms {
  Eigen::MatrixXd H;    // mass matrix
  Eigen::VectorXd nle;  // C(q, qd) qd + g(q)
  Eigen::VectorXd g;    // gravity vector
};

struct IdPartials {
  Eigen::MatrixXd dtau_dq;
  Eigen::MatrixXd dtau_dqd;
  Eigen::MatrixXd dtau_dqdd;  // equals the mass matrix
};

/// World placement of every body frame.
std::vector<FramePlacement> forward_kinematics(const RobotModel& model, const Eigen::VectorXd& q);

/// 3 x n linear Jacobian of a point given in `body` coordinates.
Eigen::MatrixXd point_jacobian(const RobotModel& model, const Eigen::VectorXd& q, int body,
                               const Eigen::Vector3d& local_point);
/// 6 x n Jacobian of a body-fixed frame: rows 0-2 angular, 3-5 linear velocity of
/// `local_point`, both in world coordinates.
Eigen::MatrixXd frame_jacobian(const RobotModel& model, const Eigen::VectorXd& q, int body,
                               const Eigen::Vector3d& local_point = Eigen::Vector3d::Zero());

/// Recursive Newton-Euler: H(q) qdd + C(q, qd) qd + g(q).
Eigen::VectorXd inverse_dynamics(const RobotModel& model, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qd, const Eigen::VectorXd& qdd);

/// Composite rigid body algorithm.
Eigen::MatrixXd mass_matrix(const RobotModel& model, const Eigen::VectorXd& q);
Eigen::VectorXd nonlinear_effects(const RobotModel& model, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& qd);
Eigen::VectorXd gravity_vector(const RobotModel& model, const Eigen::VectorXd& q);
DynamicsTerms dynamics_terms(const RobotModel& model, const Eigen::VectorXd& q,
                             const Eigen::VectorXd& qd);

/// Exact first-order partials of inverse_dynamics, one forward/backward sweep
/// carrying 6 x n derivative blocks per link.
IdPartials id_partials(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                       const Eigen::VectorXd& qdd);

double kinetic_energy(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd);
double potential_energy(const RobotModel& model, const Eigen::VectorXd& q);
Eigen::Vector3d center_of_mass(const RobotModel& model, const Eigen::VectorXd& q);

}  // namespace gaitforge
