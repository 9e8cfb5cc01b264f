#pragma once

// Bezier curves for the actuated joints, the collocation grid, and the
// layout of the decision vector y.

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gaitforge {

struct BernsteinValues {
  Eigen::VectorXd p;    // P_v(s)
  Eigen::VectorXd dp;   // dP_v/ds
  Eigen::VectorXd ddp;  // d²P_v/ds²
};

/// Degree-V Bernstein basis at s ∈ [0, 1] with its first two s-derivatives.
BernsteinValues bernstein_basis(int V, double s);

struct BezierTrajectory {
  double T = 1.0;
  Eigen::MatrixXd coeffs;  // (V+1) x n_a, row v is b_v

  int degree() const { return static_cast<int>(coeffs.rows()) - 1; }
};

struct BezierSample {
  Eigen::VectorXd q;
  Eigen::VectorXd qd;
  Eigen::VectorXd qdd;
};

/// Position, velocity and acceleration at time t ∈ [0, T].
BezierSample bezier_eval(const BezierTrajectory& traj, double t);

struct CollocationGrid {
  double T = 1.0;
  std::vector<double> t;

  int size() const { return static_cast<int>(t.size()); }
};

/// Chebyshev–Lobatto points on [0, T]; t_1 = 0 and t_N = T exactly.
CollocationGrid chebyshev_nodes(int N, double T);

struct StepVariables {
  BezierTrajectory traj;
  Eigen::VectorXd qd_r;      // velocity after the reset at the end of the step
  Eigen::VectorXd lambda_r;  // impulse of that reset
};

/// Per step: Bezier coefficients (row-major over (v, j)), then q̇_r, then λ_r.
struct DecisionLayout {
  int L = 1;
  int V = 5;
  int n_a = 0;
  int n = 0;
  int n_u = 0;

  int bezier_size() const { return (V + 1) * n_a; }
  int per_step() const { return bezier_size() + n + n_u; }
  int total() const { return L * per_step(); }

  int bezier_offset(int l) const { return l * per_step(); }
  int coeff_index(int l, int v, int j) const { return bezier_offset(l) + v * n_a + j; }
  int qdr_offset(int l) const { return bezier_offset(l) + bezier_size(); }
  int lambda_offset(int l) const { return qdr_offset(l) + n; }
};

Eigen::VectorXd pack(const DecisionLayout& layout, const std::vector<StepVariables>& steps);
std::vector<StepVariables> unpack(const DecisionLayout& layout, const Eigen::VectorXd& y, double T);

struct TrajectorySample {
  double t = 0.0;
  Eigen::VectorXd q, qd, qdd, u, lambda;
};

/// Header `t,q_1..,qd_1..,qdd_1..,u_1..,lam_1..` then one row per sample.
/// An optional trailing `event` column is written when `events` is non-empty.
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectorySample>& samples,
                          const std::vector<std::string>& events = {});

}  // namespace gaitforge
