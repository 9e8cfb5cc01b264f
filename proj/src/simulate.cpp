#include "gaitforge/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/Dense>

#include "gaitforge/dynamics.hpp"
#include "gaitforge/trajectory.hpp"

namespace gaitforge {

namespace {

// Full-pivot LU on the KKT matrix: J may be rank deficient for a free
// model (no rows) and H alone is then the system.
Eigen::VectorXd solve_kkt(const Eigen::MatrixXd& H, const Eigen::MatrixXd& J, const Eigen::VectorXd& top,
                          const Eigen::VectorXd& bottom, double* residual) {
  const Eigen::Index n = H.rows(), m = J.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = H;
  K.topRightCorner(n, m) = -J.transpose();
  K.bottomLeftCorner(m, n) = J;
  Eigen::VectorXd rhs(n + m);
  rhs << top, bottom;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (!lu.isInvertible()) throw SimulationError("singular KKT matrix");
  Eigen::VectorXd sol = lu.solve(rhs);
  if (residual) *residual = (K * sol - rhs).cwiseAbs().maxCoeff();
  return sol;
}

}  // namespace

ForwardDynamicsResult constrained_fd(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qd, const Eigen::VectorXd& u, double alpha,
                                     double beta) {
  if (q.size() != model.n() || qd.size() != model.n() || u.size() != model.n_a())
    throw std::invalid_argument("constrained_fd: dimension mismatch");
  const DynamicsTerms dyn = dynamics_terms(model, q, qd);
  const Eigen::VectorXd top = model.transmission() * u - dyn.nle;
  ForwardDynamicsResult out;
  if (constraint_count(model, stance) == 0) {
    out.qdd = solve_kkt(dyn.H, Eigen::MatrixXd(0, model.n()), top, Eigen::VectorXd(0), &out.residual);
    out.lambda.resize(0);
    return out;
  }
  const ConstraintEval ce = constraint_eval(model, stance, q, qd);
  const Eigen::VectorXd Jqd = ce.J * qd;
  const Eigen::VectorXd bottom = -ce.Jdot * qd - 2.0 * alpha * Jqd - beta * beta * ce.c;
  const Eigen::VectorXd sol = solve_kkt(dyn.H, ce.J, top, bottom, &out.residual);
  out.qdd = sol.head(model.n());
  out.lambda = sol.tail(ce.J.rows());
  return out;
}

ImpactResult impact(const RobotModel& model, const StanceSpec& next, const Eigen::VectorXd& q,
                    const Eigen::VectorXd& qd_minus) {
  const Eigen::MatrixXd H = mass_matrix(model, q);
  const Eigen::MatrixXd J = constraint_jacobian(model, next, q);
  const Eigen::VectorXd top = H * qd_minus;
  double kkt = 0.0;
  const Eigen::VectorXd sol = solve_kkt(H, J, top, Eigen::VectorXd::Zero(J.rows()), &kkt);
  ImpactResult out;
  out.qd_plus = sol.head(model.n());
  out.impulse = sol.tail(J.rows());
  out.momentum_residual = (H * (out.qd_plus - qd_minus) - J.transpose() * out.impulse).cwiseAbs().maxCoeff();
  out.constraint_residual = J.rows() ? (J * out.qd_plus).cwiseAbs().maxCoeff() : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

double integrate_dopri5(const OdeRhs& f, double t0, double t1, Eigen::VectorXd& x, const OdeOptions& opts,
                        const OdeObserver& observer, OdeStats* stats) {
  if (!(opts.rtol > 0.0) || !(opts.atol > 0.0)) throw std::invalid_argument("integrate_dopri5: tolerances must be > 0");
  if (!(t1 >= t0)) throw std::invalid_argument("integrate_dopri5: t1 < t0");
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // b − b̂ (error weights)
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  OdeStats local;
  OdeStats& st = stats ? *stats : local;
  double t = t0;
  if (t1 == t0) return t;
  auto eval = [&](double tt, const Eigen::VectorXd& xx) {
    ++st.evaluations;
    Eigen::VectorXd k = f(tt, xx);
    if (k.size() != xx.size() || !k.allFinite()) throw SimulationError("non-finite derivative at t = " + std::to_string(tt));
    return k;
  };
  auto err_norm = [&](const Eigen::VectorXd& err, const Eigen::VectorXd& xa, const Eigen::VectorXd& xb) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
      const double sc = opts.atol + opts.rtol * std::max(std::abs(xa[i]), std::abs(xb[i]));
      s += (err[i] / sc) * (err[i] / sc);
    }
    return std::sqrt(s / static_cast<double>(std::max<Eigen::Index>(1, err.size())));
  };

  Eigen::VectorXd k1 = eval(t, x);
  double h = opts.initial_step;
  if (!(h > 0.0)) {
    const double d0 = err_norm(x, x, x), d1 = err_norm(k1, x, x);
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, t1 - t0);
  }
  long steps = 0;
  while (t < t1) {
    if (++steps > opts.max_steps) throw SimulationError("integrate_dopri5: too many steps");
    const bool last = t + h >= t1;
    if (last) h = t1 - t;
    if (h < opts.min_step && !last) throw SimulationError("step size underflow at t = " + std::to_string(t));
    const Eigen::VectorXd k2 = eval(t + c2 * h, x + h * a21 * k1);
    const Eigen::VectorXd k3 = eval(t + c3 * h, x + h * (a31 * k1 + a32 * k2));
    const Eigen::VectorXd k4 = eval(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Eigen::VectorXd k5 = eval(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Eigen::VectorXd k6 = eval(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Eigen::VectorXd xn = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double tn = last ? t1 : t + h;
    const Eigen::VectorXd k7 = eval(tn, xn);
    const Eigen::VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = err_norm(err, x, xn);
    if (en <= 1.0) {
      ++st.accepted;
      t = tn;
      x = xn;
      k1 = k7;
      if (observer && !observer(t, x)) return t;
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h *= fac;
    } else {
      ++st.rejected;
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      if (h < opts.min_step) throw SimulationError("step size underflow at t = " + std::to_string(t));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

GaitReference::GaitReference(const GaitProblem& problem, Eigen::VectorXd y) : problem_(&problem), y_(std::move(y)) {
  if (y_.size() != problem.num_variables()) throw std::invalid_argument("GaitReference: y has the wrong size");
}

double GaitReference::step_duration() const { return problem_->config().T; }

Side GaitReference::stance_side(int step) const {
  const int L = problem_->config().L;
  const Side s = problem_->steps()[step % L].stance;
  const bool swapped = problem_->wraps_with_swap() && (step / L) % 2 == 1;
  return swapped ? other_side(s) : s;
}

ReferenceSample GaitReference::sample(int step, double t) const {
  const double T = step_duration();
  if (step < 0) throw std::out_of_range("reference: negative step");
  if (!(t >= 0.0 && t <= T)) throw std::out_of_range("reference: t outside the step");
  const RobotModel& m = problem_->model();
  const int L = problem_->config().L;
  const ConstrainedIdResult s = problem_->state_at(y_, step % L, t);
  ReferenceSample out;
  out.q = s.q;
  out.qa = actuated_part(m, s.q);
  out.qda = actuated_part(m, s.qd);
  out.u_open = s.u;
  if (problem_->wraps_with_swap() && (step / L) % 2 == 1) {
    auto swap_a = [&](const Eigen::VectorXd& a) {
      Eigen::VectorXd full = Eigen::VectorXd::Zero(m.n());
      for (int k = 0; k < m.n_a(); ++k) full[m.actuated()[k]] = a[k];
      return actuated_part(m, swap_coordinates(m, full));
    };
    out.q = swap_coordinates(m, out.q);
    out.qa = swap_a(out.qa);
    out.qda = swap_a(out.qda);
    out.u_open = swap_a(out.u_open);
  }
  return out;
}

ControlOutput pd_tracking_controller(const RobotModel& model, const ReferenceSample& ref, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qd, double kp, double kd, bool clamp) {
  ControlOutput out;
  out.u = ref.u_open + kp * (ref.qa - actuated_part(model, q)) + kd * (ref.qda - actuated_part(model, qd));
  if (clamp) {
    const Eigen::VectorXd& lim = model.torque_limits();
    for (int k = 0; k < model.n_a(); ++k) {
      if (!(lim[k] > 0.0)) continue;
      if (std::abs(out.u[k]) > lim[k]) {
        out.u[k] = std::clamp(out.u[k], -lim[k], lim[k]);
        ++out.saturated;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

SimTrace run_gait(const RobotModel& model, const GaitReference& reference, const SimConfig& config,
                  std::optional<int> steps) {
  if (config.kp < 0.0 || config.kd < 0.0) throw std::invalid_argument("run_gait: gains must be >= 0");
  if (!model.has_contacts() || model.floating_base() < 0)
    throw std::invalid_argument("run_gait: model needs a floating base and contacts");
  const int total = steps.value_or(reference.problem().config().L);
  if (total < 1) throw std::invalid_argument("run_gait: need at least one step");
  const double T = reference.step_duration();
  const int n = model.n();
  const int z_index = model.floating_base() + 2;

  const ConstrainedIdResult s0 = reference.problem().state_at(reference.y(), 0, 0.0);
  Eigen::VectorXd x(2 * n);
  x << s0.q, s0.qd;
  const double fall_height = config.fall_fraction * s0.q[z_index];

  SimTrace trace;
  Side stance_side = reference.stance_side(0);
  StanceSpec stance;
  stance.enabled = true;
  stance.side = stance_side;
  stance.target = sole_placement(model, stance_side, s0.q);

  OdeOptions ode;
  ode.rtol = config.rtol;
  ode.atol = config.atol;

  auto control = [&](int k, double tau, const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
    return pd_tracking_controller(model, reference.sample(k, std::clamp(tau, 0.0, T)), q, qd, config.kp, config.kd,
                                  config.clamp_torque);
  };
  auto record = [&](int k, double t, const Eigen::VectorXd& xx) {
    const Eigen::VectorXd q = xx.head(n), qd = xx.tail(n);
    const ReferenceSample ref = reference.sample(k, std::clamp(t - k * T, 0.0, T));
    const ControlOutput c = pd_tracking_controller(model, ref, q, qd, config.kp, config.kd, config.clamp_torque);
    trace.tracking_error.push_back((ref.qa - actuated_part(model, q)).cwiseAbs().maxCoeff());
    const ForwardDynamicsResult fd =
        constrained_fd(model, stance, q, qd, c.u, config.baumgarte_alpha, config.baumgarte_beta);
    trace.t.push_back(t);
    trace.q.push_back(q);
    trace.qd.push_back(qd);
    trace.qdd.push_back(fd.qdd);
    trace.u.push_back(c.u);
    trace.lambda.push_back(fd.lambda);
    trace.step.push_back(k);
    trace.saturated.push_back(c.saturated);
    trace.max_constraint_drift =
        std::max(trace.max_constraint_drift, constraint_residual(model, stance, q).cwiseAbs().maxCoeff());
  };

  record(0, 0.0, x);
  for (int k = 0; k < total; ++k) {
    const double t0 = k * T;
    if (t0 >= config.max_time) break;
    const Side swing = other_side(stance_side);
    const FramePlacement liftoff = sole_placement(model, swing, x.head(n));
    auto rhs = [&](double t, const Eigen::VectorXd& xx) {
      const Eigen::VectorXd q = xx.head(n), qd = xx.tail(n);
      const ControlOutput c = control(k, t - t0, q, qd);
      const ForwardDynamicsResult fd =
          constrained_fd(model, stance, q, qd, c.u, config.baumgarte_alpha, config.baumgarte_beta);
      Eigen::VectorXd dx(2 * n);
      dx << qd, fd.qdd;
      return dx;
    };
    bool fell = false;
    auto observer = [&](double t, const Eigen::VectorXd& xx) {
      record(k, t, xx);
      if (xx[z_index] < fall_height) {
        fell = true;
        trace.events.push_back({t, k, "fall", 0.0, 0.0});
        return false;
      }
      return true;
    };
    integrate_dopri5(rhs, t0, std::min(t0 + T, config.max_time), x, ode, observer);
    if (fell) {
      trace.fell = true;
      break;
    }
    const Eigen::VectorXd q = x.head(n);
    const FramePlacement touchdown = sole_placement(model, swing, q);
    trace.swing_poses.emplace_back(liftoff, touchdown);
    ++trace.steps_completed;
    if (k + 1 == total) break;

    // Touchdown: the swing sole becomes the stance where it actually landed.
    StanceSpec next;
    next.enabled = true;
    next.side = swing;
    next.target = touchdown;
    const ImpactResult imp = impact(model, next, q, x.tail(n));
    trace.events.push_back({trace.t.back(), k, "impact", imp.momentum_residual, imp.constraint_residual});
    x.tail(n) = imp.qd_plus;
    stance = next;
    stance_side = swing;
  }
  return trace;
}

double control_energy(const std::vector<Eigen::VectorXd>& u) {
  if (u.empty()) throw std::invalid_argument("control_energy: no samples");
  double s = 0.0;
  for (const auto& ui : u) s += ui.squaredNorm();
  return std::sqrt(s / static_cast<double>(u.size()));
}

SimMetrics metrics(const SimTrace& trace, double desired_step_length, double heading) {
  if (trace.t.empty()) throw std::invalid_argument("metrics: empty trace");
  SimMetrics m;
  const Eigen::Vector3d fwd = rotation_from_rpy(0.0, 0.0, heading).col(0);
  for (const auto& [start, end] : trace.swing_poses)
    m.step_length_errors.push_back(std::abs(fwd.dot(end.translation - start.translation) - desired_step_length));
  m.control_energy = control_energy(trace.u);
  for (double e : trace.tracking_error) m.max_tracking_error = std::max(m.max_tracking_error, e);
  return m;
}

void write_sim_trace_csv(std::ostream& out, const SimTrace& trace) {
  std::vector<TrajectorySample> samples;
  std::vector<std::string> events(trace.t.size());
  samples.reserve(trace.t.size());
  for (size_t i = 0; i < trace.t.size(); ++i)
    samples.push_back({trace.t[i], trace.q[i], trace.qd[i], trace.qdd[i], trace.u[i], trace.lambda[i]});
  for (const auto& e : trace.events) {
    // Events are attached to the sample taken at their time.
    for (size_t i = trace.t.size(); i-- > 0;) {
      if (trace.t[i] == e.t && trace.step[i] == e.step) {
        events[i] = events[i].empty() ? e.kind : events[i] + ";" + e.kind;
        break;
      }
    }
  }
  write_trajectory_csv(out, samples, events);
}

}  // namespace gaitforge
