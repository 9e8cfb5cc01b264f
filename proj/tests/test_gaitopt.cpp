#include <gtest/gtest.h>

#include <cmath>
#include <random>

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

// Standing seed plus a perturbation small enough to keep every node solvable.
Eigen::VectorXd perturbed(const GaitProblem& p, std::mt19937& rng) {
  Eigen::VectorXd y = p.initial_guess();
  const DecisionLayout& lay = p.layout();
  for (int l = 0; l < lay.L; ++l) {
    const int b = lay.bezier_offset(l);
    y.segment(b, lay.bezier_size()) += random_vector(lay.bezier_size(), rng, 0.05);
    y.segment(lay.qdr_offset(l), lay.n) = random_vector(lay.n, rng, 0.2);
    y.segment(lay.lambda_offset(l), lay.n_u) = random_vector(lay.n_u, rng, 2.0);
  }
  return y;
}

// Per-row relative error of an analytic Jacobian against central differences.
double worst_row_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& fd) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < fd.rows(); ++r) {
    const double scale = std::max(1.0, fd.row(r).cwiseAbs().maxCoeff());
    worst = std::max(worst, (analytic.row(r) - fd.row(r)).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

}  // namespace

TEST(GaitConfigText, RoundTripsThroughSerialization) {
  GaitConfig c = biped().config();
  c.L = 4;
  c.step_length = 0.07;
  c.apex_nodes = {5, 8};
  c.symmetric_torsion = true;
  c.first_stance = Side::Right;
  const GaitConfig back = parse_gait_config(serialize_gait_config(c));
  EXPECT_EQ(back.L, 4);
  EXPECT_EQ(back.step_length, 0.07);
  EXPECT_EQ(back.apex_nodes, (std::vector<int>{5, 8}));
  EXPECT_TRUE(back.symmetric_torsion);
  EXPECT_EQ(back.first_stance, Side::Right);
  ASSERT_TRUE(back.seed_qa.has_value());
  EXPECT_EQ(*back.seed_qa, *c.seed_qa);
  EXPECT_EQ(serialize_gait_config(back), serialize_gait_config(c));
}

TEST(GaitConfigText, UnknownKeyReportsLine) {
  try {
    parse_gait_config("L = 2\n# comment\nstride = 3\n");
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_gait_config("w1 = 0\n"), std::invalid_argument);
  EXPECT_THROW(parse_gait_config("L = 1.5\n"), std::invalid_argument);
}

TEST(StepPlans, FootholdsAlternate) {
  GaitConfig c = biped().config();
  c.L = 3;
  c.step_length = 0.2;
  const auto plans = plan_steps(c);
  ASSERT_EQ(plans.size(), 3u);
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(plans[l].stance, l % 2 == 0 ? Side::Left : Side::Right);
    EXPECT_NEAR(plans[l].stance_target.translation.x(), 0.1 * l, 1e-15);
    EXPECT_NEAR(plans[l].swing_end.translation.x() - plans[l].swing_start.translation.x(), 0.2, 1e-15);
    EXPECT_NEAR(plans[l].swing_start.translation.y(), -plans[l].stance_target.translation.y(), 1e-15);
  }
}

TEST(ContactRows, FrictionViolatedByLargeTangentialForce) {
  ContactPatch patch = biped().model.contact(Side::Left);
  patch.mu = 0.7;
  Vector6d w;
  w << 80, 0, 100, 0, 0, 0;
  const ContactRows r = contact_rows(patch, w, false);
  EXPECT_GT(r.value[1], 0.0);
  EXPECT_DOUBLE_EQ(r.value[1], 80.0 * 80.0 - 0.49 * 100.0 * 100.0);
}

TEST(ContactRows, ZeroWrenchSitsOnTheBoundary) {
  const ContactPatch& patch = biped().model.contact(Side::Left);
  for (bool sym : {false, true}) {
    const ContactRows r = contact_rows(patch, Vector6d::Zero(), sym);
    ASSERT_EQ(r.value.size(), contact_row_count(sym));
    EXPECT_EQ(r.value.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(ContactRows, JacobianMatchesDifferences) {
  std::mt19937 rng(3);
  const ContactPatch& patch = biped().model.contact(Side::Right);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector6d w = random_vector(6, rng, 50.0);
    const Eigen::MatrixXd fd = gaitforge::testing::fd_jacobian(
        [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(contact_rows(patch, x, true).value); }, w, 1e-4);
    EXPECT_LT(worst_row_error(contact_rows(patch, w, true).jacobian, fd), 1e-8);
  }
}

TEST(EulerAngles, RoundTripAndRates) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d ypr = random_vector(3, rng, 1.2);
    const Eigen::Matrix3d R = rotation_from_rpy(ypr[2], ypr[1], ypr[0]);
    EXPECT_LT((euler_zyx(R) - ypr).cwiseAbs().maxCoeff(), 1e-12);
    // ω from R(t) by differences against E·(ψ̇, θ̇, φ̇)
    const Eigen::Vector3d rate = random_vector(3, rng, 1.0);
    const double h = 1e-6;
    const Eigen::Vector3d a = ypr + h * rate, b = ypr - h * rate;
    const Eigen::Matrix3d Rd = (rotation_from_rpy(a[2], a[1], a[0]) - rotation_from_rpy(b[2], b[1], b[0])) / (2 * h);
    const Eigen::Matrix3d W = Rd * R.transpose();
    const Eigen::Vector3d omega(W(2, 1), W(0, 2), W(1, 0));
    EXPECT_LT((euler_zyx_rate_matrix(ypr) * rate - omega).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GaitProblem, RowCountsSingleStep) {
  const Biped& b = biped();
  GaitConfig c = b.config();
  c.L = 1;
  c.periodic = false;
  const GaitProblem p(b.model, c, b.left, b.right);
  const int node = b.model.n() + b.model.n_a() + contact_row_count(false) + 3;
  const int swing = 4 + 6 + (c.N - 2);
  EXPECT_EQ(p.num_constraints(), c.N * node + swing);
  for (const auto& blk : p.blocks()) EXPECT_EQ(blk.name.rfind("step1/node", 0), 0u) << blk.name;
}

TEST(GaitProblem, RowCountsPeriodicTwoSteps) {
  const Biped& b = biped();
  const GaitConfig c = b.config();
  const GaitProblem p(b.model, c, b.left, b.right);
  const int n = b.model.n(), na = b.model.n_a();
  const int node = n + na + 7 + 3;
  const int swing = 4 + 6 + (c.N - 2);
  const int reset = n + (b.model.closure_rows() + 6) + 2 * na + 7;
  EXPECT_EQ(p.num_constraints(), 2 * (c.N * node + swing) + 2 * reset);
  EXPECT_EQ(p.num_variables(), 2 * ((c.V + 1) * na + n + b.model.n_u()));
}

TEST(GaitProblem, DoublingNDoublesOnlyNodeRows) {
  const Biped& b = biped();
  GaitConfig c = b.config();
  const GaitProblem p14(b.model, c, b.left, b.right);
  c.N = 28;
  const GaitProblem p28(b.model, c, b.left, b.right);
  auto tally = [](const GaitProblem& p) {
    int nodes = 0, reset = 0;
    for (const auto& blk : p.blocks()) (blk.name.find("node") != std::string::npos ? nodes : reset) += blk.rows;
    return std::pair{nodes, reset};
  };
  const auto [n14, r14] = tally(p14);
  const auto [n28, r28] = tally(p28);
  EXPECT_EQ(r14, r28);
  // Per step: N·(node rows + 1 clearance row) plus the endpoint swing rows,
  // which replace the clearance row at the first and last node.
  EXPECT_EQ(n28 - 2 * n14, -2 * (4 + 6 - 2));
  EXPECT_EQ(p14.num_variables(), p28.num_variables());
}

TEST(GaitProblem, OddStepsNeedSymmetry) {
  const Biped& b = biped();
  GaitConfig c = b.config();
  c.L = 3;
  EXPECT_NO_THROW(GaitProblem(b.model, c, b.left, b.right));
  ModelDescription d = b.model.description();
  d.has_symmetry = false;
  d.swap.clear();
  const RobotModel plain = RobotModel::from_description(d);
  const IkSurrogate l = build_ik_surrogate(plain, Side::Left, 20), r = build_ik_surrogate(plain, Side::Right, 20);
  EXPECT_THROW(GaitProblem(plain, c, l, r), std::invalid_argument);
  c.periodic = false;
  EXPECT_NO_THROW(GaitProblem(plain, c, l, r));
}

TEST(GaitProblem, ApexNodesNearestMidStep) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  EXPECT_EQ(p.apex_nodes(), (std::vector<int>{6, 7}));
}

TEST(GaitProblem, StandingSeedCarriesBodyWeight) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  const ConstrainedIdResult s = p.state_at(p.initial_guess(), 0, 0.2);
  const Eigen::VectorXd w = s.lambda.tail(6);
  EXPECT_NEAR(w[2], b.model.total_mass() * kGravity, 1e-8);
  EXPECT_NEAR(w[0], 0.0, 1e-8);
  EXPECT_NEAR(w[1], 0.0, 1e-8);
}

TEST(GaitProblem, CostIsLinearInWeights) {
  const Biped& b = biped();
  std::mt19937 rng(11);
  GaitConfig c = b.config();
  const GaitProblem base(b.model, c, b.left, b.right);
  const Eigen::VectorXd y = perturbed(base, rng);
  auto cost_with = [&](double w1, double w2, double w3) {
    GaitConfig k = c;
    k.w1 = w1;
    k.w2 = w2;
    k.w3 = w3;
    return GaitProblem(b.model, k, b.left, b.right).cost(y);
  };
  const double c1 = cost_with(1, 1, 1), c2 = cost_with(2, 1, 1), c3 = cost_with(3, 1, 1);
  EXPECT_NEAR(c3 - c2, c2 - c1, 1e-10 * c3);
  const double u_term = c2 - c1;
  EXPECT_GT(u_term, 0.0);
  EXPECT_NEAR(cost_with(1, 2, 5) - cost_with(1, 1, 5), cost_with(1, 3, 5) - cost_with(1, 2, 5), 1e-10 * c3);
}

TEST(GaitProblem, DerivativesMatchCentralDifferences) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 2; ++trial) {
    const Eigen::VectorXd y = perturbed(p, rng);
    const auto e = p.evaluate(y, true);
    const double h = 1e-6;
    Eigen::MatrixXd fd_jac(p.num_constraints(), p.num_variables());
    Eigen::VectorXd fd_grad(p.num_variables());
    for (int j = 0; j < p.num_variables(); ++j) {
      Eigen::VectorXd yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      const auto ep = p.evaluate(yp, false), em = p.evaluate(ym, false);
      fd_jac.col(j) = (ep.g - em.g) / (2 * h);
      fd_grad[j] = (ep.cost - em.cost) / (2 * h);
    }
    EXPECT_LT(worst_row_error(e.jac, fd_jac), 1e-5);
    EXPECT_LT((e.grad - fd_grad).cwiseAbs().maxCoeff() / std::max(1.0, fd_grad.cwiseAbs().maxCoeff()), 1e-5);
  }
}

TEST(GaitProblem, JacobianStaysInsideItsPattern) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  std::mt19937 rng(9);
  const auto e = p.evaluate(perturbed(p, rng), true);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(p.num_constraints(), p.num_variables());
  for (const auto& [r, c] : p.jacobian_pattern()) mask(r, c) = 1.0;
  EXPECT_EQ(e.jac.cwiseProduct((1.0 - mask.array()).matrix()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GaitProblem, ThreadCountDoesNotChangeResults) {
  const Biped& b = biped();
  GaitConfig c = b.config();
  const GaitProblem p1(b.model, c, b.left, b.right);
  c.threads = 3;
  const GaitProblem p3(b.model, c, b.left, b.right);
  std::mt19937 rng(4);
  const Eigen::VectorXd y = perturbed(p1, rng);
  const auto e1 = p1.evaluate(y, true), e3 = p3.evaluate(y, true);
  EXPECT_EQ(e1.cost, e3.cost);
  EXPECT_TRUE(e1.g == e3.g);
  EXPECT_TRUE(e1.jac == e3.jac);
  EXPECT_TRUE(e1.grad == e3.grad);
}

TEST(ResetMap, ImpactSolutionZeroesTheResidual) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  std::mt19937 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd y = perturbed(p, rng);
    const ConstrainedIdResult pre = p.state_at(y, 0, p.config().T);
    const StanceSpec next = p.next_stance(0);
    const ImpactResult imp = impact(b.model, next, pre.q, pre.qd);
    const Eigen::VectorXd r = reset_residual(b.model, next, pre.q, pre.qd, imp.qd_plus, imp.impulse);
    const double scale = std::max(1.0, imp.impulse.cwiseAbs().maxCoeff());
    EXPECT_LT(r.cwiseAbs().maxCoeff() / scale, 1e-10);

    // Away from the solution the residual is the KKT system applied to the offset.
    const Eigen::VectorXd dq = random_vector(b.model.n(), rng, 0.3);
    const Eigen::VectorXd dl = random_vector(static_cast<int>(imp.impulse.size()), rng, 1.0);
    const Eigen::VectorXd r2 =
        reset_residual(b.model, next, pre.q, pre.qd, imp.qd_plus + dq, imp.impulse + dl);
    const Eigen::MatrixXd H = mass_matrix(b.model, pre.q);
    const Eigen::MatrixXd J = constraint_jacobian(b.model, next, pre.q);
    Eigen::VectorXd expect(r2.size());
    expect << H * dq - J.transpose() * dl, J * dq;
    EXPECT_LT((r2 - expect).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ResetMap, ImpactFreeTouchdownNeedsNoImpulse) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  const ConstrainedIdResult pre = p.state_at(p.initial_guess(), 0, p.config().T);
  const StanceSpec next = p.next_stance(0);
  // Project the velocity onto the null space of the next constraints.
  const Eigen::MatrixXd J = constraint_jacobian(b.model, next, pre.q);
  std::mt19937 rng(8);
  Eigen::VectorXd v = random_vector(b.model.n(), rng, 0.5);
  v -= J.transpose() * (J * J.transpose()).ldlt().solve(J * v);
  const Eigen::VectorXd r = reset_residual(b.model, next, pre.q, v, v, Eigen::VectorXd::Zero(J.rows()));
  EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-12);
  const ImpactResult imp = impact(b.model, next, pre.q, v);
  EXPECT_LT((imp.qd_plus - v).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GaitProblem, ViolationIsClippedInfinityNorm) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  const Eigen::VectorXd y = p.initial_guess();
  const Eigen::VectorXd g = p.constraints(y);
  EXPECT_DOUBLE_EQ(p.constraint_violation(y), bound_violation(g, p.lower(), p.upper()));
  Eigen::VectorXd lo = g, hi = g;
  EXPECT_EQ(bound_violation(g, lo, hi), 0.0);
  hi[17] -= 0.01;
  EXPECT_NEAR(bound_violation(g, lo, hi), 0.01, 1e-15);
}

TEST(GaitProblem, RejectsNonFiniteDecisionVector) {
  const Biped& b = biped();
  const GaitProblem p(b.model, b.config(), b.left, b.right);
  Eigen::VectorXd y = p.initial_guess();
  y[3] = std::nan("");
  EXPECT_THROW(p.evaluate(y, false), std::invalid_argument);
  NlpEvaluation out;
  y[3] = 1e6;  // far outside anything the IK can reach
  EXPECT_FALSE(p.as_nlp().evaluate(y, false, out));
  EXPECT_FALSE(out.failure.empty());
}
