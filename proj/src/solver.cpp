#include "gaitforge/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <mutex>
#include <ostream>

#include <Eigen/Dense>

#include "gaitforge/io.hpp"

namespace gaitforge {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::IterLimit: return "IterLimit";
    case SolveStatus::TimeLimit: return "TimeLimit";
    case SolveStatus::EvalFailure: return "EvalFailure";
  }
  return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

struct Point {
  Eigen::VectorXd x;
  NlpEvaluation e;
  Eigen::MatrixXd J;  // dense copy of e.jac
  bool has_derivatives = false;
};

// Bound-constrained augmented Lagrangian (PHR form):
//   Φ(x) = f(x) + Σ_i ρ/2 · dist(g_i(x) + μ_i/ρ, [lo_i, hi_i])²
class AugmentedLagrangian {
 public:
  AugmentedLagrangian(const NlpProblem& p, const SolverOptions& o) : p_(p), o_(o), start_(Clock::now()) {}

  SolveResult run(const Eigen::VectorXd& x0);

 private:
  bool evaluate(const Eigen::VectorXd& x, bool derivatives, Point& pt) {
    ++result_.evaluations;
    pt.x = x;
    pt.has_derivatives = false;
    if (!p_.evaluate(x, derivatives, pt.e)) return false;
    if (!std::isfinite(pt.e.f) || !pt.e.g.allFinite()) {
      pt.e.failure = "non-finite evaluation";
      return false;
    }
    if (derivatives) {
      pt.J = Eigen::MatrixXd(pt.e.jac);
      pt.has_derivatives = true;
    }
    return true;
  }

  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

  // Penalty residual r = ρ (t − proj(t)), t = g + μ/ρ; also the multiplier estimate.
  Eigen::VectorXd residual(const Eigen::VectorXd& g) const {
    Eigen::VectorXd r(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double t = g[i] + mu_[i] / rho_;
      r[i] = rho_ * (t - std::clamp(t, p_.g_lower[i], p_.g_upper[i]));
    }
    return r;
  }

  double merit(const Point& pt) const { return pt.e.f + residual(pt.e.g).squaredNorm() / (2.0 * rho_); }

  Eigen::VectorXd merit_gradient(const Point& pt) const { return pt.e.grad + pt.J.transpose() * residual(pt.e.g); }

  Eigen::MatrixXd gauss_newton(const Point& pt) const {
    const Eigen::VectorXd r = residual(pt.e.g);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < r.size(); ++i)
      if (r[i] != 0.0 || p_.g_lower[i] == p_.g_upper[i]) rows.push_back(i);
    Eigen::MatrixXd Ja(static_cast<Eigen::Index>(rows.size()), pt.J.cols());
    for (size_t k = 0; k < rows.size(); ++k) Ja.row(static_cast<Eigen::Index>(k)) = pt.J.row(rows[k]);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(pt.J.cols(), pt.J.cols());
    G.selfadjointView<Eigen::Lower>().rankUpdate(Ja.transpose(), rho_);
    return G.selfadjointView<Eigen::Lower>();
  }

  // Components held at a bound with the gradient pushing outward.
  std::vector<bool> bound_active(const Eigen::VectorXd& x, const Eigen::VectorXd& grad) const {
    std::vector<bool> a(x.size(), false);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      a[i] = (x[i] <= p_.x_lower[i] && grad[i] > 0.0) || (x[i] >= p_.x_upper[i] && grad[i] < 0.0);
    return a;
  }

  double projected_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& grad) const {
    const auto a = bound_active(x, grad);
    double v = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (!a[i]) v = std::max(v, std::abs(grad[i]));
    return v;
  }

  Eigen::VectorXd project(const Eigen::VectorXd& x) const { return x.cwiseMax(p_.x_lower).cwiseMin(p_.x_upper); }

  // Damped BFGS matrix for the curvature the Gauss–Newton term misses.
  Eigen::MatrixXd quasi_newton(Eigen::Index n) const {
    double sigma = 1e-4;
    if (!pairs_.empty()) {
      const auto& [s, y] = pairs_.back();
      const double sy = s.dot(y);
      if (sy > 0.0) sigma = std::clamp(y.squaredNorm() / sy, 1e-6, 1e6);
    }
    Eigen::MatrixXd M = sigma * Eigen::MatrixXd::Identity(n, n);
    for (const auto& [s, y0] : pairs_) {
      const Eigen::VectorXd Ms = M * s;
      const double sMs = s.dot(Ms);
      if (!(sMs > 0.0)) continue;
      Eigen::VectorXd y = y0;
      const double sy = s.dot(y);
      if (sy < 0.2 * sMs) {
        const double theta = 0.8 * sMs / (sMs - sy);
        y = theta * y + (1.0 - theta) * Ms;
      }
      M += y * y.transpose() / s.dot(y) - Ms * Ms.transpose() / sMs;
    }
    return M;
  }

  // Minimizes the piecewise quadratic model
  //   ∇fᵀd + ½dᵀQd + Σ ρ/2 · dist(t_i + J_i d, [lo_i, hi_i])²
  // by semismooth Newton on the active set of the linearized rows, so rows
  // that would be crossed by the step take part in it.
  Eigen::VectorXd model_step(const Point& pt, const Eigen::MatrixXd& Q, const std::vector<bool>& fixed) const {
    const Eigen::Index n = pt.x.size();
    const Eigen::VectorXd t0 = pt.e.g + mu_ / rho_;
    auto model_residual = [&](const Eigen::VectorXd& Jd) {
      Eigen::VectorXd r(Jd.size());
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        const double t = t0[i] + Jd[i];
        r[i] = rho_ * (t - std::clamp(t, p_.g_lower[i], p_.g_upper[i]));
      }
      return r;
    };
    auto model_value = [&](const Eigen::VectorXd& d, const Eigen::VectorXd& r) {
      return pt.e.grad.dot(d) + 0.5 * d.dot(Q * d) + r.squaredNorm() / (2.0 * rho_);
    };
    auto free_only = [&](Eigen::VectorXd v) {
      for (Eigen::Index i = 0; i < n; ++i)
        if (fixed[i]) v[i] = 0.0;
      return v;
    };

    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd Jd = Eigen::VectorXd::Zero(pt.J.rows());
    Eigen::VectorXd r = model_residual(Jd);
    double q = model_value(d, r);
    for (int it = 0; it < 20; ++it) {
      const Eigen::VectorXd mg = free_only(pt.e.grad + Q * d + pt.J.transpose() * r);
      if (mg.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, pt.e.grad.cwiseAbs().maxCoeff())) break;
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < r.size(); ++i)
        if (r[i] != 0.0 || p_.g_lower[i] == p_.g_upper[i]) rows.push_back(i);
      Eigen::MatrixXd Ja(static_cast<Eigen::Index>(rows.size()), n);
      for (size_t k = 0; k < rows.size(); ++k) Ja.row(static_cast<Eigen::Index>(k)) = pt.J.row(rows[k]);
      Eigen::MatrixXd H = Q;
      H.selfadjointView<Eigen::Lower>().rankUpdate(Ja.transpose(), rho_);
      H = H.selfadjointView<Eigen::Lower>();
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!fixed[i]) continue;
        H.row(i).setZero();
        H.col(i).setZero();
        H(i, i) = 1.0;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(H);
      if (llt.info() != Eigen::Success) return {};
      const Eigen::VectorXd delta = -llt.solve(mg);
      if (!delta.allFinite()) return {};
      const Eigen::VectorXd Jdelta = pt.J * delta;
      // The model is convex, so backtracking on it always succeeds.
      double a = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 30; ++bt, a *= 0.5) {
        const Eigen::VectorXd Jn = Jd + a * Jdelta;
        const Eigen::VectorXd rn = model_residual(Jn);
        const Eigen::VectorXd dn = d + a * delta;
        const double qn = model_value(dn, rn);
        if (qn <= q + 1e-4 * a * mg.dot(delta)) {
          d = dn;
          Jd = Jn;
          r = rn;
          moved = q - qn > 1e-14 * std::max(1.0, std::abs(q));
          q = qn;
          break;
        }
      }
      if (!moved) break;
    }
    return d;
  }

  void record(const Point& pt) {
    const double viol = bound_violation(pt.e.g, p_.g_lower, p_.g_upper);
    if (o_.trace_enabled) result_.trace.push_back({elapsed(), viol, pt.e.f});
  }

  enum class InnerExit { Tolerance, Stalled, IterLimit, Converged, TimeLimit, EvalFailure };
  InnerExit inner(Point& cur, double tol);

  bool converged(const Point& pt) const {
    if (bound_violation(pt.e.g, p_.g_lower, p_.g_upper) > o_.violation_tol) return false;
    return projected_norm(pt.x, merit_gradient(pt)) <= o_.stationarity_tol;
  }

  const NlpProblem& p_;
  const SolverOptions& o_;
  Clock::time_point start_;
  SolveResult result_;
  Eigen::VectorXd mu_;
  double rho_ = 10.0;
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs_;
  double damping_ = -1.0;
  int failures_ = 0;  // consecutive failed evaluations
};

AugmentedLagrangian::InnerExit AugmentedLagrangian::inner(Point& cur, double tol) {
  const Eigen::Index n = cur.x.size();
  pairs_.clear();
  for (int it = 0; it < o_.max_inner_iter; ++it) {
    const Eigen::VectorXd grad = merit_gradient(cur);
    if (converged(cur)) return InnerExit::Converged;
    if (projected_norm(cur.x, grad) <= tol) return InnerExit::Tolerance;

    // Quadratic part of the model restricted to the free variables.
    const auto fixed = bound_active(cur.x, grad);
    Eigen::MatrixXd M = quasi_newton(n);
    const double scale = std::max(1e-12, (gauss_newton(cur).diagonal() + M.diagonal()).cwiseAbs().maxCoeff());
    if (damping_ < 0.0) damping_ = 1e-3 * scale;
    Eigen::VectorXd d;
    for (int attempt = 0; attempt < 40; ++attempt) {
      const Eigen::MatrixXd Q = M + damping_ * Eigen::MatrixXd::Identity(n, n);
      d = model_step(cur, Q, fixed);
      if (d.size() == n && d.allFinite()) break;
      damping_ = std::max(10.0 * damping_, 1e-10 * scale);
    }
    if (d.size() != n || !d.allFinite()) return InnerExit::Stalled;

    // Armijo backtracking along the projected path.
    const double phi0 = merit(cur);
    Point trial;
    bool accepted = false;
    double alpha = 1.0;
    for (int bt = 0; bt < 12; ++bt, alpha *= 0.5) {
      const Eigen::VectorXd x = project(cur.x + alpha * d);
      const Eigen::VectorXd step = x - cur.x;
      if (step.cwiseAbs().maxCoeff() <= 1e-15 * std::max(1.0, cur.x.cwiseAbs().maxCoeff())) break;
      if (!evaluate(x, bt == 0, trial)) {
        result_.failed_point = x;
        result_.message = trial.e.failure;
        if (++failures_ >= o_.max_eval_failures) return InnerExit::EvalFailure;
        continue;
      }
      failures_ = 0;
      if (merit(trial) <= phi0 + 1e-4 * grad.dot(step)) {
        accepted = true;
        break;
      }
      if (elapsed() > o_.wall_clock_limit) return InnerExit::TimeLimit;
    }
    if (!accepted) {
      damping_ *= 100.0;
      if (damping_ > 1e12 * scale) return InnerExit::Stalled;
      continue;
    }
    damping_ = alpha == 1.0 ? std::max(damping_ / 4.0, 1e-12 * scale) : damping_ * 10.0;
    if (!trial.has_derivatives && !evaluate(trial.x, true, trial)) {
      result_.failed_point = trial.x;
      result_.message = trial.e.failure;
      return InnerExit::EvalFailure;
    }
    ++result_.inner_iterations;
    const Eigen::VectorXd s = trial.x - cur.x;
    const Eigen::VectorXd ynew = merit_gradient(trial) - grad - gauss_newton(trial) * s;
    pairs_.emplace_back(s, ynew);
    if (static_cast<int>(pairs_.size()) > o_.lbfgs_memory) pairs_.pop_front();
    cur = std::move(trial);
    record(cur);
    if (elapsed() > o_.wall_clock_limit) return InnerExit::TimeLimit;
  }
  return InnerExit::IterLimit;
}

SolveResult AugmentedLagrangian::run(const Eigen::VectorXd& x0) {
  if (x0.size() != p_.num_variables) throw std::invalid_argument("minimize: x0 has the wrong size");
  if (o_.max_iter < 1 || !(o_.violation_tol > 0.0) || !(o_.stationarity_tol > 0.0) || !(o_.inner_tol > 0.0) ||
      !(o_.cost_rtol >= 0.0))
    throw std::invalid_argument("minimize: invalid options");
  mu_ = Eigen::VectorXd::Zero(p_.num_constraints);
  rho_ = o_.penalty_init;

  auto finish = [&](const Point& pt, SolveStatus status) {
    result_.status = status;
    result_.y = pt.x;
    result_.cost = pt.e.f;
    result_.violation = bound_violation(pt.e.g, p_.g_lower, p_.g_upper);
    if (pt.has_derivatives) {
      result_.multipliers = residual(pt.e.g);
      result_.stationarity = projected_norm(pt.x, merit_gradient(pt));
    }
    result_.wall_time = elapsed();
    return result_;
  };

  Point cur;
  if (!evaluate(project(x0), true, cur)) {
    result_.failed_point = project(x0);
    result_.message = cur.e.failure;
    result_.status = SolveStatus::EvalFailure;
    result_.y = project(x0);
    result_.wall_time = elapsed();
    return result_;
  }
  record(cur);

  const double omega0 = std::max(1.0, cur.e.grad.cwiseAbs().maxCoeff());
  double omega = omega0;
  double prev_violation = bound_violation(cur.e.g, p_.g_lower, p_.g_upper);
  double prev_cost = cur.e.f;
  for (int k = 1; k <= o_.max_iter; ++k) {
    result_.iterations = k;
    const InnerExit exit = inner(cur, std::max(o_.inner_tol, omega));
    if (exit == InnerExit::Converged) return finish(cur, SolveStatus::Converged);
    if (exit == InnerExit::EvalFailure) return finish(cur, SolveStatus::EvalFailure);
    if (exit == InnerExit::TimeLimit) return finish(cur, SolveStatus::TimeLimit);

    mu_ = residual(cur.e.g);
    const double viol = bound_violation(cur.e.g, p_.g_lower, p_.g_upper);
    if (converged(cur)) return finish(cur, SolveStatus::Converged);
    // Acceptable stop: feasible and the cost has settled while the inner loop
    // was already working at its final tolerance or could not reach it.
    const bool inner_spent = exit != InnerExit::Tolerance || omega <= o_.inner_tol;
    if (inner_spent && viol <= o_.violation_tol && prev_violation <= o_.violation_tol &&
        std::abs(cur.e.f - prev_cost) <= o_.cost_rtol * std::max(std::abs(cur.e.f), std::abs(prev_cost)))
      return finish(cur, SolveStatus::Converged);
    prev_cost = cur.e.f;
    if (viol > o_.violation_tol && viol > 0.5 * prev_violation)
      rho_ = std::min(o_.penalty_max, rho_ * o_.penalty_growth);
    prev_violation = viol;
    omega = std::max(o_.inner_tol, 0.1 * omega);
    if (elapsed() > o_.wall_clock_limit) return finish(cur, SolveStatus::TimeLimit);
  }
  return finish(cur, SolveStatus::IterLimit);
}

}  // namespace

SolveResult minimize(const NlpProblem& problem, const Eigen::VectorXd& x0, const SolverOptions& opts) {
  return AugmentedLagrangian(problem, opts).run(x0);
}

double kkt_stationarity(const NlpProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& multipliers) {
  NlpEvaluation e;
  if (!problem.evaluate(x, true, e)) throw std::runtime_error("kkt_stationarity: evaluation failed: " + e.failure);
  const Eigen::VectorXd grad = e.grad + e.jac.transpose() * multipliers;
  double v = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const bool held = (x[i] <= problem.x_lower[i] && grad[i] > 0.0) || (x[i] >= problem.x_upper[i] && grad[i] < 0.0);
    if (!held) v = std::max(v, std::abs(grad[i]));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Registry

namespace {

class InternalAdapter : public SolverAdapter {
 public:
  std::string name() const override { return "augmented-lagrangian"; }
  SolverCapabilities capabilities() const override { return {}; }
  SolveResult solve(const NlpProblem& problem, const Eigen::VectorXd& x0, const SolverOptions& opts) override {
    return minimize(problem, x0, opts);
  }
};

struct Registry {
  std::mutex mutex;
  std::vector<std::unique_ptr<SolverAdapter>> adapters;
  Registry() { adapters.push_back(make_internal_solver()); }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

std::unique_ptr<SolverAdapter> make_internal_solver() { return std::make_unique<InternalAdapter>(); }

SolverHandle register_external_solver(std::unique_ptr<SolverAdapter> adapter) {
  if (!adapter) throw std::invalid_argument("register_external_solver: null adapter");
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  for (const auto& a : r.adapters)
    if (a->name() == adapter->name()) throw std::invalid_argument("solver '" + adapter->name() + "' already registered");
  r.adapters.push_back(std::move(adapter));
  return static_cast<SolverHandle>(r.adapters.size()) - 1;
}

SolverHandle find_solver(const std::string& name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  for (size_t k = 0; k < r.adapters.size(); ++k)
    if (r.adapters[k]->name() == name) return static_cast<SolverHandle>(k);
  throw std::invalid_argument("no solver named '" + name + "'");
}

std::vector<std::string> registered_solvers() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& a : r.adapters) names.push_back(a->name());
  return names;
}

SolveResult solve_with(SolverHandle handle, const NlpProblem& problem, const Eigen::VectorXd& x0,
                       const SolverOptions& opts) {
  SolverAdapter* adapter = nullptr;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    if (handle < 0 || handle >= static_cast<SolverHandle>(r.adapters.size()))
      throw std::invalid_argument("solve_with: unknown solver handle");
    adapter = r.adapters[handle].get();
  }
  const SolverCapabilities caps = adapter->capabilities();
  if (!caps.sparse_jacobian)
    throw CapabilityError("solver '" + adapter->name() + "' does not accept sparse Jacobians");
  if (!caps.inequality_constraints && (problem.g_lower.array() != problem.g_upper.array()).any())
    throw CapabilityError("solver '" + adapter->name() + "' does not handle inequality constraints");
  if (!caps.variable_bounds && (problem.x_lower.array().isFinite().any() || problem.x_upper.array().isFinite().any()))
    throw CapabilityError("solver '" + adapter->name() + "' does not handle variable bounds");
  return adapter->solve(problem, x0, opts);
}

void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
  out << "wall_time_s,constraint_violation,cost\n";
  for (const auto& t : trace) out << format_csv(t.wall_time) << ',' << format_csv(t.violation) << ',' << format_csv(t.cost) << '\n';
}

}  // namespace gaitforge
