#pragma once

// The L-step periodic gait program: decision vector y = per-step Bezier
// coefficients of the actuated joints plus the post-reset velocity and the
// reset impulse; everything else is reconstructed by constrained inverse
// dynamics at the collocation nodes.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaitforge/closure.hpp"
#include "gaitforge/model.hpp"
#include "gaitforge/nlp.hpp"
#include "gaitforge/trajectory.hpp"

namespace gaitforge {

struct GaitConfig {
  int L = 2;
  double T = 0.4;
  int V = 5;
  int N = 14;
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 0.1;
  Side first_stance = Side::Left;
  double step_length = 0.1;      // forward swing-foot displacement per step
  double foot_offset = 0.1;      // lateral sole position, ±
  double heading = 0.0;          // yaw of every foothold
  double apex_height = 0.03;
  std::vector<int> apex_nodes;   // 0-based; empty means the node(s) nearest T/2
  double max_torso_roll = 0.05236;
  double max_torso_pitch = 0.05236;
  std::optional<double> z_min;   // default: z_min_fraction of the seed standing height
  double z_min_fraction = 0.8;
  bool symmetric_torsion = false;
  bool periodic = true;
  std::optional<Eigen::VectorXd> pin_qa0;  // pins the actuated pose at the start of step 1
  std::optional<Eigen::VectorXd> seed_qa;  // standing pose for the initial guess
  int threads = 1;
};

/// `key = value` lines, `#` comments. Vectors are comma separated.
GaitConfig parse_gait_config(const std::string& text);
GaitConfig load_gait_config(const std::string& path);
std::string serialize_gait_config(const GaitConfig& config);

/// Sole targets of one step.
struct StepPlan {
  Side stance = Side::Left;
  FramePlacement stance_target;
  FramePlacement swing_start;
  FramePlacement swing_end;
};

/// Footholds implied by the config. Step l's swing moves from x=(l-1)s/2 to
/// (l+1)s/2 while the stance sole sits at x=ls/2.
std::vector<StepPlan> plan_steps(const GaitConfig& config);

/// Contact wrench rows g(λ_st) ≤ 0 except the first (λ_fz ≥ 0).
struct ContactRows {
  Eigen::VectorXd value;
  Eigen::MatrixXd jacobian;  // rows x 6
};
/// λ_st = (fx, fy, fz, mx, my, mz). Rows: fz ≥ 0; fx²+fy² − μ²fz² ≤ 0;
/// mz − γfz ≤ 0; ±mx − l_a fz/2 ≤ 0; ±my − l_b fz/2 ≤ 0; optionally −mz − γfz ≤ 0.
ContactRows contact_rows(const ContactPatch& patch, const Eigen::Matrix<double, 6, 1>& wrench,
                         bool symmetric_torsion);
int contact_row_count(bool symmetric_torsion);

/// ZYX Euler angles (yaw, pitch, roll) of R and the matrix E with ω = E·(ψ̇, θ̇, φ̇).
Eigen::Vector3d euler_zyx(const Eigen::Matrix3d& R);
Eigen::Matrix3d euler_zyx_rate_matrix(const Eigen::Vector3d& ypr);

/// Residuals of the reset at the end of a step: H(q⁻)(q̇_r − q̇⁻) − J_nextᵀλ_r and J_next q̇_r.
Eigen::VectorXd reset_residual(const RobotModel& model, const StanceSpec& next, const Eigen::VectorXd& q_minus,
                               const Eigen::VectorXd& qd_minus, const Eigen::VectorXd& qd_r,
                               const Eigen::VectorXd& lambda_r);

struct RowBlockInfo {
  std::string name;
  int offset = 0;
  int rows = 0;
};

class GaitProblem {
 public:
  GaitProblem(const RobotModel& model, GaitConfig config, const IkSurrogate& left, const IkSurrogate& right);

  const RobotModel& model() const { return *model_; }
  const GaitConfig& config() const { return config_; }
  const DecisionLayout& layout() const { return layout_; }
  const CollocationGrid& grid() const { return grid_; }
  const std::vector<StepPlan>& steps() const { return plans_; }
  const std::vector<int>& apex_nodes() const { return apex_; }
  double z_min() const { return z_min_; }

  int num_variables() const { return layout_.total(); }
  int num_constraints() const { return rows_; }
  const Eigen::VectorXd& lower() const { return lo_; }
  const Eigen::VectorXd& upper() const { return hi_; }
  const std::vector<RowBlockInfo>& blocks() const { return blocks_; }
  const std::vector<std::pair<int, int>>& jacobian_pattern() const { return pattern_; }

  StanceSpec stance(int l) const;
  /// Stance of the step that follows step l, expressed in step l's footholds.
  StanceSpec next_stance(int l) const;
  bool wraps_with_swap() const;

  struct Evaluation {
    double cost = 0.0;
    Eigen::VectorXd grad;
    Eigen::VectorXd g;
    Eigen::MatrixXd jac;  // dense, num_constraints x num_variables
  };
  /// Throws IkError when a node cannot be reconstructed.
  Evaluation evaluate(const Eigen::VectorXd& y, bool derivatives) const;

  double cost(const Eigen::VectorXd& y) const { return evaluate(y, false).cost; }
  Eigen::VectorXd constraints(const Eigen::VectorXd& y) const { return evaluate(y, false).g; }
  double constraint_violation(const Eigen::VectorXd& y) const;

  /// Standing seed: every Bezier row equals the seed pose, zero velocities and impulses.
  Eigen::VectorXd initial_guess() const;

  /// Full reconstruction of step l at time t.
  ConstrainedIdResult state_at(const Eigen::VectorXd& y, int l, double t) const;

  /// Swing sole placements at the first and last node of every step.
  std::vector<std::pair<FramePlacement, FramePlacement>> swing_endpoints(const Eigen::VectorXd& y) const;

  /// |achieved − desired| forward swing displacement per step.
  std::vector<double> step_length_errors(const Eigen::VectorXd& y) const;

  /// Residuals of the wrap from step L back to step 1 (reset pair, positions, velocities).
  Eigen::VectorXd periodicity_residual(const Eigen::VectorXd& y) const;

  NlpProblem as_nlp() const;

 private:
  struct NodeData;
  NodeData eval_node(const std::vector<StepVariables>& steps, int l, int i, bool derivatives) const;
  Eigen::VectorXd surrogate_guess(const StanceSpec& stance, const Eigen::VectorXd& qa) const;
  int add_block(const std::string& name, int rows);

  const RobotModel* model_;
  GaitConfig config_;
  const IkSurrogate* left_;
  const IkSurrogate* right_;
  DecisionLayout layout_;
  CollocationGrid grid_;
  std::vector<StepPlan> plans_;
  std::vector<int> apex_;
  double z_min_ = 0.0;
  Eigen::VectorXd seed_;
  Eigen::MatrixXd swap_a_;  // signed permutation on actuated coordinates

  int rows_ = 0;
  Eigen::VectorXd lo_, hi_;
  std::vector<RowBlockInfo> blocks_;
  std::vector<std::vector<int>> node_offset_;  // [l][i]
  std::vector<int> reset_offset_;              // [l], -1 without a reset after step l
  int pin_offset_ = -1;
  std::vector<std::pair<int, int>> pattern_;
};

}  // namespace gaitforge
