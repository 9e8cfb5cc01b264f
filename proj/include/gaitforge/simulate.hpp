#pragma once

// Forward simulation used to validate optimized gaits: constrained forward
// dynamics, the plastic impact at touchdown, a PD + feedforward tracking
// controller and the rollout metrics.

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaitforge/closure.hpp"
#include "gaitforge/gaitopt.hpp"
#include "gaitforge/model.hpp"

namespace gaitforge {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ForwardDynamicsResult {
  Eigen::VectorXd qdd;
  Eigen::VectorXd lambda;
  double residual = 0.0;  // ∞-norm of the KKT residual
};

/// Solves [H, −Jᵀ; J, 0]·[q̈; λ] = [Bu − nle; −J̇q̇ − 2αJq̇ − β²c].
ForwardDynamicsResult constrained_fd(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qd, const Eigen::VectorXd& u, double alpha = 0.0,
                                     double beta = 0.0);

struct ImpactResult {
  Eigen::VectorXd qd_plus;
  Eigen::VectorXd impulse;
  double momentum_residual = 0.0;    // ∞-norm of H(q̇⁺ − q̇⁻) − Jᵀλ
  double constraint_residual = 0.0;  // ∞-norm of J q̇⁺
};

/// Rigid plastic impact against the constraints of `next`: q is unchanged.
ImpactResult impact(const RobotModel& model, const StanceSpec& next, const Eigen::VectorXd& q,
                    const Eigen::VectorXd& qd_minus);

// ---------------------------------------------------------------------------
// Adaptive Dormand–Prince 5(4)

struct OdeOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  double initial_step = 0.0;  // 0 picks one from the first derivative
  double min_step = 1e-12;
  long max_steps = 1000000;
};

struct OdeStats {
  long accepted = 0;
  long rejected = 0;
  long evaluations = 0;
};

using OdeRhs = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)>;
/// Called after every accepted step; returning false stops the integration.
using OdeObserver = std::function<bool(double t, const Eigen::VectorXd& x)>;

/// Integrates x from t0 to t1 in place. Returns the time reached. Throws
/// SimulationError when the step size underflows.
double integrate_dopri5(const OdeRhs& f, double t0, double t1, Eigen::VectorXd& x, const OdeOptions& opts,
                        const OdeObserver& observer = {}, OdeStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Tracking controller

struct ReferenceSample {
  Eigen::VectorXd q;      // full reference configuration (planned footholds)
  Eigen::VectorXd qa;
  Eigen::VectorXd qda;
  Eigen::VectorXd u_open;
};

/// Continuous reference of an optimized gait. Step k of a rollout follows
/// step k mod L, with legs swapped on odd cycles of a swap-wrapped gait.
class GaitReference {
 public:
  GaitReference(const GaitProblem& problem, Eigen::VectorXd y);

  const GaitProblem& problem() const { return *problem_; }
  const Eigen::VectorXd& y() const { return y_; }
  double step_duration() const;
  Side stance_side(int step) const;

  /// Throws std::out_of_range for t outside [0, T].
  ReferenceSample sample(int step, double t) const;

 private:
  const GaitProblem* problem_;
  Eigen::VectorXd y_;
};

struct ControlOutput {
  Eigen::VectorXd u;
  int saturated = 0;  // joints clamped to their torque limit
};

/// u = u_open + Kp(q_d − q)_A + Kd(q̇_d − q̇)_A, clamped to the torque limits.
ControlOutput pd_tracking_controller(const RobotModel& model, const ReferenceSample& ref, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qd, double kp, double kd, bool clamp = true);

// ---------------------------------------------------------------------------
// Rollouts

struct SimConfig {
  double kp = 80.0;
  double kd = 5.0;
  double rtol = 1e-6;
  double atol = 1e-8;
  double baumgarte_alpha = 20.0;
  double baumgarte_beta = 20.0;
  double max_time = 60.0;  // s
  double fall_fraction = 0.5;
  bool clamp_torque = true;
};

struct SimEvent {
  double t = 0.0;
  int step = 0;
  std::string kind;  // "impact" or "fall"
  double momentum_residual = 0.0;
  double constraint_residual = 0.0;
};

struct SimTrace {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> q, qd, qdd, u, lambda;
  std::vector<int> step;       // step index of each sample
  std::vector<int> saturated;  // clamped joints at each sample
  std::vector<double> tracking_error;  // ∞-norm of the actuated position error
  std::vector<SimEvent> events;
  /// Swing sole at lift-off and touchdown, per completed step.
  std::vector<std::pair<FramePlacement, FramePlacement>> swing_poses;
  double max_constraint_drift = 0.0;
  bool fell = false;
  int steps_completed = 0;
};

/// Tracks `steps` steps of the reference (default: one gait cycle, L steps).
SimTrace run_gait(const RobotModel& model, const GaitReference& reference, const SimConfig& config,
                  std::optional<int> steps = std::nullopt);

struct SimMetrics {
  std::vector<double> step_length_errors;
  double control_energy = 0.0;
  double max_tracking_error = 0.0;  // rad
};

/// Step-length error along `heading` per completed step, and the RMS control
/// energy √((1/N)Σ uᵀu) over all samples. Throws on an empty trace.
SimMetrics metrics(const SimTrace& trace, double desired_step_length, double heading = 0.0);
double control_energy(const std::vector<Eigen::VectorXd>& u);

/// Trajectory CSV columns plus the event column.
void write_sim_trace_csv(std::ostream& out, const SimTrace& trace);

}  // namespace gaitforge
