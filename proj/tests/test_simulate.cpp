#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "gaitforge/dynamics.hpp"
#include "gaitforge/gaitopt.hpp"
#include "gaitforge/simulate.hpp"
#include "support.hpp"

using namespace gaitforge;
using gaitforge::testing::bundled;
using gaitforge::testing::random_vector;

namespace {

struct Biped {
  RobotModel model = bundled("minibiped");
  IkSurrogate left = build_ik_surrogate(model, Side::Left, 100);
  IkSurrogate right = build_ik_surrogate(model, Side::Right, 100);
  GaitProblem problem{model, config(), left, right};

  GaitConfig config() const {
    GaitConfig c;
    c.seed_qa = gaitforge::testing::standing_qa(model);
    return c;
  }
};

const Biped& biped() {
  static const Biped b;
  return b;
}

Eigen::VectorXd moving_gait(std::mt19937& rng) {
  const GaitProblem& p = biped().problem;
  Eigen::VectorXd y = p.initial_guess();
  const DecisionLayout& lay = p.layout();
  for (int l = 0; l < lay.L; ++l)
    y.segment(lay.bezier_offset(l), lay.bezier_size()) += random_vector(lay.bezier_size(), rng, 0.05);
  return y;
}

// Torso on a floating joint with one actuated arm and no closures.
RobotModel floating_arm() {
  return RobotModel::from_description(parse_model(R"(
body world mass=0 com=0,0,0 inertia=0,0,0,0,0,0
body torso mass=4 com=0,0,0.05 inertia=0.05,0.04,0.03,0,0,0
body arm mass=1 com=0.2,0,0 inertia=0.001,0.01,0.01,0,0,0
joint base type=floating6 parent=world child=torso
      origin=0,0,0,0,0,0 axis=0,0,1
      limits=-10,10,-10,10,-10,10,-3.2,3.2,-1.5,1.5,-3.2,3.2
      vmax=0 taumax=0 actuated=0
joint shoulder type=revolute parent=torso child=arm
      origin=0,0,0.1,0,0,0 axis=0,1,0 limits=-3,3
      vmax=20 taumax=10 actuated=1
)"));
}

double total_energy(const RobotModel& m, const Eigen::VectorXd& x) {
  const int n = m.n();
  return kinetic_energy(m, x.head(n), x.tail(n)) + potential_energy(m, x.head(n));
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward dynamics

TEST(ForwardDynamics, InvertsConstrainedInverseDynamics) {
  const Biped& b = biped();
  std::mt19937 rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    const Eigen::VectorXd y = moving_gait(rng);
    const ConstrainedIdResult s = b.problem.state_at(y, 0, 0.05 + 0.1 * trial);
    const ForwardDynamicsResult fd = constrained_fd(b.model, b.problem.stance(0), s.q, s.qd, s.u);
    EXPECT_LT(gaitforge::testing::rel_error(fd.qdd, s.qdd), 1e-8);
    EXPECT_LT(gaitforge::testing::rel_error(fd.lambda, s.lambda), 1e-8);
    EXPECT_LE(fd.residual, 1e-10);
  }
}

TEST(ForwardDynamics, StaticStandingStaysAtRest) {
  const Biped& b = biped();
  const ConstrainedIdResult s = b.problem.state_at(b.problem.initial_guess(), 0, 0.2);
  ASSERT_LT(s.qd.cwiseAbs().maxCoeff(), 1e-12);
  const ForwardDynamicsResult fd = constrained_fd(b.model, b.problem.stance(0), s.q, s.qd, s.u);
  EXPECT_LT(fd.qdd.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ForwardDynamics, FreeFloatingBodyFalls) {
  const RobotModel m = floating_arm();
  const int fb = m.floating_base();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(m.n());
  q[fb + 2] = 1.0;
  q[fb + 4] = 0.3;
  q[m.actuated()[0]] = 0.7;
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(m.n_a());
  const ForwardDynamicsResult rest = constrained_fd(m, StanceSpec::none(), q, Eigen::VectorXd::Zero(m.n()), u);
  EXPECT_EQ(rest.lambda.size(), 0);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(m.n());
  expected[fb + 2] = -9.81;
  EXPECT_LT((rest.qdd - expected).cwiseAbs().maxCoeff(), 1e-10);

  std::mt19937 rng(3);
  const Eigen::VectorXd qd = random_vector(m.n(), rng, 1.0);
  const ForwardDynamicsResult moving = constrained_fd(m, StanceSpec::none(), q, qd, u);
  const Eigen::VectorXd direct = -mass_matrix(m, q).ldlt().solve(nonlinear_effects(m, q, qd));
  EXPECT_LT((moving.qdd - direct).cwiseAbs().maxCoeff(), 1e-10);
}

// ---------------------------------------------------------------------------
// Impacts

namespace {

struct ImpactSetup {
  Eigen::VectorXd q;
  StanceSpec next;
};

// Standing pose with the right sole as the next stance, placed where it is.
ImpactSetup standing_touchdown() {
  const Biped& b = biped();
  const ConstrainedIdResult s = b.problem.state_at(b.problem.initial_guess(), 0, b.problem.config().T);
  StanceSpec next;
  next.enabled = true;
  next.side = Side::Right;
  next.target = sole_placement(b.model, Side::Right, s.q);
  return {s.q, next};
}

}  // namespace

TEST(Impact, TouchdownWithoutApproachVelocityChangesNothing) {
  const Biped& b = biped();
  const ImpactSetup setup = standing_touchdown();
  const Eigen::MatrixXd J = constraint_jacobian(b.model, setup.next, setup.q);
  const Eigen::MatrixXd N = Eigen::FullPivLU<Eigen::MatrixXd>(J).kernel();
  std::mt19937 rng(11);
  const Eigen::VectorXd qd = N * random_vector(static_cast<int>(N.cols()), rng, 1.0);
  ASSERT_LT((J * qd).cwiseAbs().maxCoeff(), 1e-12);
  const ImpactResult r = impact(b.model, setup.next, setup.q, qd);
  EXPECT_LT((r.qd_plus - qd).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(r.impulse.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Impact, SatisfiesTheMomentumIdentityAndDissipates) {
  const Biped& b = biped();
  const ImpactSetup setup = standing_touchdown();
  const Eigen::MatrixXd H = mass_matrix(b.model, setup.q);
  const Eigen::MatrixXd J = constraint_jacobian(b.model, setup.next, setup.q);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd qd = random_vector(b.model.n(), rng, 1.0);
    const ImpactResult r = impact(b.model, setup.next, setup.q, qd);
    EXPECT_LE(r.momentum_residual, 1e-10);
    EXPECT_LE(r.constraint_residual, 1e-10);
    EXPECT_LT((J * r.qd_plus).cwiseAbs().maxCoeff(), 1e-10);
    // vᵀH(q̇⁺ − q̇⁻) = vᵀJᵀλ for arbitrary v
    for (int k = 0; k < 3; ++k) {
      const Eigen::VectorXd v = random_vector(b.model.n(), rng, 1.0);
      const double lhs = v.dot(H * (r.qd_plus - qd)), rhs = v.dot(J.transpose() * r.impulse);
      EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(rhs)));
    }
    EXPECT_LE(kinetic_energy(b.model, setup.q, r.qd_plus), kinetic_energy(b.model, setup.q, qd) + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Integrator

TEST(Dopri5, ExponentialDecay) {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(2, 1.0);
  OdeOptions o;
  o.rtol = o.atol = 1e-11;
  OdeStats stats;
  const double t = integrate_dopri5([](double, const Eigen::VectorXd& v) { return Eigen::VectorXd(-v); }, 0.0, 1.0,
                                    x, o, {}, &stats);
  EXPECT_EQ(t, 1.0);
  EXPECT_NEAR(x[0], std::exp(-1.0), 1e-10);
  EXPECT_GT(stats.accepted, 0);
}

TEST(Dopri5, ObserverCanStop) {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.0);
  const double t = integrate_dopri5([](double, const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1); }, 0.0,
                                    10.0, x, {}, [](double tt, const Eigen::VectorXd&) { return tt < 1.0; });
  EXPECT_GE(t, 1.0);
  EXPECT_LT(t, 10.0);
  EXPECT_NEAR(x[0], t, 1e-12);
}

TEST(Dopri5, BlowUpThrows) {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
  const auto rhs = [](double, const Eigen::VectorXd& v) { return Eigen::VectorXd(v.cwiseProduct(v)); };
  EXPECT_THROW(integrate_dopri5(rhs, 0.0, 2.0, x, {}), SimulationError);
}

TEST(Dopri5, DoublePendulumConservesEnergy) {
  const RobotModel m = bundled("double_pendulum");
  const int n = m.n();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2 * n);
  x[0] = 1.0;
  x[1] = -0.5;
  x[n] = 0.3;
  const Eigen::VectorXd u = Eigen::VectorXd::Zero(m.n_a());
  const auto rhs = [&](double, const Eigen::VectorXd& s) {
    Eigen::VectorXd d(2 * n);
    d.head(n) = s.tail(n);
    d.tail(n) = constrained_fd(m, StanceSpec::none(), s.head(n), s.tail(n), u).qdd;
    return d;
  };
  const double e0 = total_energy(m, x);
  OdeOptions o;
  o.rtol = o.atol = 1e-10;
  double worst = 0.0;
  integrate_dopri5(rhs, 0.0, 5.0, x, o, [&](double, const Eigen::VectorXd& s) {
    worst = std::max(worst, std::abs(total_energy(m, s) - e0));
    return true;
  });
  EXPECT_LT(worst / std::abs(e0), 1e-6);
}

// ---------------------------------------------------------------------------
// Controller

namespace {

ReferenceSample sample_reference(std::mt19937& rng) {
  const Biped& b = biped();
  const GaitReference ref(b.problem, moving_gait(rng));
  return ref.sample(0, 0.17);
}

}  // namespace

TEST(Controller, PerfectTrackingIsFeedforward) {
  const RobotModel& m = biped().model;
  std::mt19937 rng(2);
  const ReferenceSample ref = sample_reference(rng);
  Eigen::VectorXd qd = Eigen::VectorXd::Zero(m.n());
  for (int k = 0; k < m.n_a(); ++k) qd[m.actuated()[k]] = ref.qda[k];
  const ControlOutput c = pd_tracking_controller(m, ref, ref.q, qd, 80.0, 5.0, false);
  EXPECT_LT((c.u - ref.u_open).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(c.saturated, 0);
}

TEST(Controller, ZeroGainsIgnoreTheError) {
  const RobotModel& m = biped().model;
  std::mt19937 rng(4);
  const ReferenceSample ref = sample_reference(rng);
  const Eigen::VectorXd q = ref.q + random_vector(m.n(), rng, 0.1);
  const ControlOutput c = pd_tracking_controller(m, ref, q, random_vector(m.n(), rng, 1.0), 0.0, 0.0, false);
  EXPECT_TRUE(c.u == ref.u_open);
}

TEST(Controller, UnitErrorGivesKp) {
  const RobotModel& m = biped().model;
  std::mt19937 rng(6);
  ReferenceSample ref = sample_reference(rng);
  ref.qda.setZero();
  Eigen::VectorXd q = ref.q;
  q[m.actuated()[3]] -= 1.0;
  const ControlOutput c = pd_tracking_controller(m, ref, q, Eigen::VectorXd::Zero(m.n()), 80.0, 5.0, false);
  Eigen::VectorXd fb = c.u - ref.u_open;
  EXPECT_NEAR(fb[3], 80.0, 1e-9);
  fb[3] = 0.0;
  EXPECT_LT(fb.cwiseAbs().maxCoeff(), 1e-12);

  const ControlOutput clamped = pd_tracking_controller(m, ref, q, Eigen::VectorXd::Zero(m.n()), 80.0, 5.0);
  const double limit = m.torque_limits()[3];
  EXPECT_NEAR(clamped.u[3], std::min(limit, ref.u_open[3] + 80.0), 1e-12);
  EXPECT_EQ(clamped.saturated, ref.u_open[3] + 80.0 > limit ? 1 : 0);
}

TEST(Controller, ReferenceRejectsTimesOutsideTheStep) {
  const Biped& b = biped();
  const GaitReference ref(b.problem, b.problem.initial_guess());
  EXPECT_NO_THROW(ref.sample(0, ref.step_duration()));
  EXPECT_THROW(ref.sample(0, -1e-3), std::out_of_range);
  EXPECT_THROW(ref.sample(0, ref.step_duration() + 1e-3), std::out_of_range);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, ControlEnergyIsTheRmsNorm) {
  EXPECT_EQ(control_energy(std::vector<Eigen::VectorXd>(7, Eigen::VectorXd::Zero(4))), 0.0);
  std::vector<Eigen::VectorXd> u;
  u.push_back(Eigen::Vector2d(3, 4));
  u.push_back(Eigen::Vector2d(-5, 0));
  u.push_back(Eigen::Vector2d(0, 5));
  EXPECT_NEAR(control_energy(u), 5.0, 1e-15);
  EXPECT_THROW(control_energy({}), std::invalid_argument);
  EXPECT_THROW(metrics(SimTrace{}, 0.1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Rollouts

TEST(Rollout, StandingGaitHoldsItsPose) {
  const Biped& b = biped();
  const GaitReference ref(b.problem, b.problem.initial_guess());
  const SimTrace tr = run_gait(b.model, ref, SimConfig{}, 2);
  ASSERT_FALSE(tr.fell);
  EXPECT_EQ(tr.steps_completed, 2);
  double worst = 0.0;
  for (const Eigen::VectorXd& q : tr.q) worst = std::max(worst, (q - tr.q.front()).cwiseAbs().maxCoeff());
  EXPECT_LT(worst, 1e-3);
  EXPECT_LT(tr.max_constraint_drift, 1e-6);
  for (size_t i = 1; i < tr.t.size(); ++i) EXPECT_GT(tr.t[i], tr.t[i - 1]);
  // One touchdown between the two steps; none after the last.
  ASSERT_EQ(tr.events.size(), 1u);
  EXPECT_EQ(tr.events[0].kind, "impact");
  EXPECT_LE(tr.events[0].momentum_residual, 1e-10);

  std::ostringstream csv;
  write_sim_trace_csv(csv, tr);
  const std::string header = csv.str().substr(0, csv.str().find('\n'));
  EXPECT_EQ(header.substr(header.rfind(',') + 1), "event");
}

TEST(Rollout, MovingGaitKeepsConstraintsTight) {
  const Biped& b = biped();
  std::mt19937 rng(9);
  const GaitReference ref(b.problem, moving_gait(rng));
  const SimTrace tr = run_gait(b.model, ref, SimConfig{}, 1);
  EXPECT_LT(tr.max_constraint_drift, 1e-6);
  ASSERT_FALSE(tr.u.empty());
  const SimMetrics mt = metrics(tr, b.problem.config().step_length);
  EXPECT_NEAR(mt.control_energy, control_energy(tr.u), 1e-12);
  EXPECT_EQ(mt.step_length_errors.size(), static_cast<size_t>(tr.steps_completed));
}
