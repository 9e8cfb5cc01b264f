#pragma once

// Holonomic constraints c(q) = 0 (loop closures, then the stance-sole pose),
// inverse kinematics for the passive coordinates, and the constrained inverse
// dynamics that maps an actuated-joint trajectory to the full state, reaction
// wrench and motor torques.

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaitforge/model.hpp"

namespace gaitforge {

struct StanceSpec {
  bool enabled = false;
  Side side = Side::Left;
  FramePlacement target;  // world pose of the stance sole frame

  static StanceSpec none() { return {}; }
  /// Flat ground: the sole frame is only yawed.
  static StanceSpec on(Side side, const Eigen::Vector3d& position, double yaw);

  double yaw() const;
};

/// Number of rows of c: closure rows, plus 6 with an enabled stance.
int constraint_count(const RobotModel& model, const StanceSpec& stance);

struct ConstraintEval {
  Eigen::VectorXd c;
  Eigen::MatrixXd J;
  Eigen::MatrixXd Jdot;
  Eigen::MatrixXd J_u;  // columns of J on U
  Eigen::MatrixXd J_a;  // columns of J on A
};

ConstraintEval constraint_eval(const RobotModel& model, const StanceSpec& stance,
                               const Eigen::VectorXd& q, const Eigen::VectorXd& qd);
Eigen::VectorXd constraint_residual(const RobotModel& model, const StanceSpec& stance,
                                    const Eigen::VectorXd& q);
Eigen::MatrixXd constraint_jacobian(const RobotModel& model, const StanceSpec& stance,
                                    const Eigen::VectorXd& q);

/// First variation of (J, J̇) when (q, qd) moves along (dq, dqd):
/// dJ = Σ dq_m ∂J/∂q_m and dJdot = Σ dq_m ∂J̇/∂q_m + Σ dqd_m ∂J/∂q_m.
struct JacobianVariation {
  Eigen::MatrixXd dJ;
  Eigen::MatrixXd dJdot;
};
JacobianVariation jacobian_variation(const RobotModel& model, const StanceSpec& stance,
                                     const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                     const Eigen::VectorXd& dq, const Eigen::VectorXd& dqd);

/// World pose of a contact sole frame.
FramePlacement sole_placement(const RobotModel& model, Side side, const Eigen::VectorXd& q);
/// 6 x n sole Jacobian (angular rows first), world coordinates.
Eigen::MatrixXd sole_jacobian(const RobotModel& model, Side side, const Eigen::VectorXd& q);

/// Rotation log map and the inverse of its left Jacobian.
Eigen::Vector3d rotation_log(const Eigen::Matrix3d& R);
Eigen::Matrix3d left_jacobian_inverse(const Eigen::Vector3d& phi);

// ---------------------------------------------------------------------------
// Inverse kinematics

class IkError : public std::runtime_error {
 public:
  enum class Kind { Singular, NoConvergence, Unsupported };
  IkError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct IkOptions {
  double tolerance = 1e-10;  // ∞-norm of c
  int max_iterations = 50;
  double singular_ratio = 1e-10;  // σ_min / σ_max
};

struct IkResult {
  Eigen::VectorXd qu;
  int iterations = 0;
  double residual = 0.0;
};

/// q from its actuated and unactuated parts.
Eigen::VectorXd assemble_configuration(const RobotModel& model, const Eigen::VectorXd& qa,
                                       const Eigen::VectorXd& qu);
Eigen::VectorXd actuated_part(const RobotModel& model, const Eigen::VectorXd& q);
Eigen::VectorXd unactuated_part(const RobotModel& model, const Eigen::VectorXd& q);

/// Damped Newton on c(qa, qu) = 0 with the square system J_u. Roots outside
/// the passive joint limits are rejected as NoConvergence.
IkResult solve_ik_detailed(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa,
                           const Eigen::VectorXd& guess, const IkOptions& opts = {});
Eigen::VectorXd solve_ik(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa,
                         const Eigen::VectorXd& guess, const IkOptions& opts = {});

/// Smallest over largest singular value of J_u.
double ju_conditioning(const Eigen::MatrixXd& J_u);

/// Warm start for the IK. Loop-passive coordinates are trigonometric series
/// in the actuated angles they depend on; floating-base coordinates are placed
/// so the stance sole sits exactly on its target.
class IkSurrogate {
 public:
  struct Series {
    int coordinate = -1;                 // index into the model coordinates
    std::vector<int> axes;               // actuated coordinates it depends on
    std::vector<std::vector<int>> terms; // per term: signed harmonic per axis (+k cos, -k sin)
    Eigen::VectorXd coeffs;
  };

  const std::vector<Series>& series() const { return series_; }
  Side side() const { return side_; }
  int order() const { return order_; }
  int samples_per_axis() const { return samples_; }
  double max_fit_residual() const { return max_fit_residual_; }
  const Eigen::VectorXd& box_lower() const { return box_lo_; }
  const Eigen::VectorXd& box_upper() const { return box_hi_; }

  /// Norm of all coefficients of `coordinate`'s series whose term involves `actuated_coord`.
  double axis_weight(int coordinate, int actuated_coord) const;

  /// Full qu guess for the given stance target.
  Eigen::VectorXd evaluate(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa) const;

  void save(std::ostream& out, const std::string& key) const;
  /// Returns false when the stored key differs.
  bool load(std::istream& in, const std::string& key);

  friend IkSurrogate build_ik_surrogate(const RobotModel&, Side, int, int);

 private:
  Side side_ = Side::Left;
  int order_ = 4;
  int samples_ = 0;
  double max_fit_residual_ = 0.0;
  Eigen::VectorXd box_lo_, box_hi_;
  std::vector<Series> series_;
};

/// Least-squares fit over a uniform grid of `samples_per_axis` points per
/// dependent actuated axis, total harmonic order ≤ `order`.
IkSurrogate build_ik_surrogate(const RobotModel& model, Side side, int samples_per_axis, int order = 4);

/// Cache key: model hash, side, order, grid.
std::string surrogate_cache_key(const RobotModel& model, Side side, int samples_per_axis, int order);

// ---------------------------------------------------------------------------
// Projection and constrained inverse dynamics

struct Projection {
  Eigen::MatrixXd G;     // n x n_a
  Eigen::MatrixXd Gdot;  // n x n_a
};

/// G and Ġ at (q, qd); qd must satisfy J qd = 0 for Ġ to be the time derivative along the flow.
Projection projection_matrix(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                             const Eigen::VectorXd& qd);

struct ConstrainedIdResult {
  Eigen::VectorXd q;
  Eigen::VectorXd qd;
  Eigen::VectorXd qdd;
  Eigen::VectorXd lambda;
  Eigen::VectorXd u;
  Eigen::MatrixXd G;
  Eigen::MatrixXd Gdot;
  Eigen::VectorXd tau;  // unconstrained inverse dynamics at (q, qd, qdd)
  int ik_iterations = 0;
};

/// `guess` is an n_u warm start for the passive coordinates.
ConstrainedIdResult constrained_inverse_dynamics(const RobotModel& model, const StanceSpec& stance,
                                                 const Eigen::VectorXd& qa, const Eigen::VectorXd& qda,
                                                 const Eigen::VectorXd& qdda, const Eigen::VectorXd& guess,
                                                 const IkOptions& opts = {});

/// Partials of the reconstruction. Columns are ordered [qa | qda | qdda].
struct CidPartials {
  ConstrainedIdResult value;
  Eigen::MatrixXd dq, dqd, dqdd;  // n x 3n_a
  Eigen::MatrixXd dlambda;        // n_c x 3n_a
  Eigen::MatrixXd du;             // n_a x 3n_a
};

CidPartials cid_partials(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa,
                         const Eigen::VectorXd& qda, const Eigen::VectorXd& qdda, const Eigen::VectorXd& guess,
                         const IkOptions& opts = {});

/// Same as above from an already reconstructed state.
CidPartials cid_partials(const RobotModel& model, const StanceSpec& stance, const ConstrainedIdResult& value);

}  // namespace gaitforge
