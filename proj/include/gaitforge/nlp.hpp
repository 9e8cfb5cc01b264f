#pragma once

// Problem interface shared by the gait assembly and the solvers:
//   min f(x)  s.t.  g_lo <= g(x) <= g_hi,  x_lo <= x <= x_hi.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace gaitforge {

using SparseMatrixR = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct NlpEvaluation {
  double f = 0.0;
  Eigen::VectorXd grad;  // filled when derivatives are requested
  Eigen::VectorXd g;
  SparseMatrixR jac;     // filled when derivatives are requested, fixed pattern
  std::string failure;   // reason when the evaluation failed
};

struct NlpProblem {
  int num_variables = 0;
  int num_constraints = 0;
  Eigen::VectorXd x_lower, x_upper;
  Eigen::VectorXd g_lower, g_upper;
  /// Structural nonzeros of the constraint Jacobian, row-major order.
  std::vector<std::pair<int, int>> jacobian_pattern;
  /// Returns false when the point cannot be evaluated (e.g. IK failure).
  std::function<bool(const Eigen::VectorXd& x, bool derivatives, NlpEvaluation& out)> evaluate;
};

/// ∞-norm of the bound violations of g, unscaled.
double bound_violation(const Eigen::VectorXd& g, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

/// Builds a matrix with exactly the given pattern from a dense one.
SparseMatrixR sparse_from_pattern(const Eigen::MatrixXd& dense, int rows, int cols,
                                  const std::vector<std::pair<int, int>>& pattern);

}  // namespace gaitforge
