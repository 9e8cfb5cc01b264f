#pragma once

// Augmented Lagrangian NLP solver with a limited-memory quasi-Newton inner
// loop, plus a small registry through which other backends can be plugged in.

#include <iosfwd>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaitforge/nlp.hpp"

namespace gaitforge {

struct SolverOptions {
  int max_iter = 200;             // outer (multiplier update) iterations
  double violation_tol = 1e-4;
  double stationarity_tol = 1e-3; // ∞-norm of ∇f + Jᵀμ at a converged point
  double cost_rtol = 1e-2;        // feasible outer iterates whose cost moved less than this also count
  double inner_tol = 1e-6;        // final tolerance of the inner minimizations
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  double penalty_max = 1e10;
  int lbfgs_memory = 10;
  int max_inner_iter = 15;
  double wall_clock_limit = std::numeric_limits<double>::infinity();  // s
  int max_eval_failures = 40;
  bool trace_enabled = true;
};

enum class SolveStatus { Converged, IterLimit, TimeLimit, EvalFailure };
const char* to_string(SolveStatus s);

struct TracePoint {
  double wall_time = 0.0;  // s since the solve started
  double violation = 0.0;
  double cost = 0.0;
};

struct SolveResult {
  Eigen::VectorXd y;
  double cost = 0.0;
  double violation = 0.0;
  double stationarity = 0.0;
  SolveStatus status = SolveStatus::IterLimit;
  int iterations = 0;        // outer iterations
  int inner_iterations = 0;  // accepted quasi-Newton steps
  int evaluations = 0;
  double wall_time = 0.0;
  std::vector<TracePoint> trace;
  Eigen::VectorXd multipliers;
  Eigen::VectorXd failed_point;  // set with EvalFailure
  std::string message;
};

/// Built-in augmented Lagrangian solver.
SolveResult minimize(const NlpProblem& problem, const Eigen::VectorXd& x0, const SolverOptions& opts = {});

/// ∞-norm of ∇f + Jᵀμ with the components of variables held at a bound removed.
double kkt_stationarity(const NlpProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& multipliers);

// ---------------------------------------------------------------------------
// Pluggable backends

struct SolverCapabilities {
  bool sparse_jacobian = true;
  bool inequality_constraints = true;
  bool variable_bounds = true;
};

class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverAdapter {
 public:
  virtual ~SolverAdapter() = default;
  virtual std::string name() const = 0;
  virtual SolverCapabilities capabilities() const = 0;
  virtual SolveResult solve(const NlpProblem& problem, const Eigen::VectorXd& x0, const SolverOptions& opts) = 0;
};

/// Adapter around `minimize`.
std::unique_ptr<SolverAdapter> make_internal_solver();

using SolverHandle = int;

/// Global registry; the internal solver is always present under "augmented-lagrangian".
SolverHandle register_external_solver(std::unique_ptr<SolverAdapter> adapter);
SolverHandle find_solver(const std::string& name);
std::vector<std::string> registered_solvers();

/// Checks the adapter's capabilities against the problem, then solves.
SolveResult solve_with(SolverHandle handle, const NlpProblem& problem, const Eigen::VectorXd& x0,
                       const SolverOptions& opts = {});

/// `wall_time_s,constraint_violation,cost` rows.
void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace);

}  // namespace gaitforge
