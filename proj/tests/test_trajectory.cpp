#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gaitforge/trajectory.hpp"

using namespace gaitforge;

TEST(Bernstein, EndpointsInterpolate) {
  for (int V = 2; V <= 10; ++V) {
    const auto b0 = bernstein_basis(V, 0.0);
    const auto b1 = bernstein_basis(V, 1.0);
    for (int v = 0; v <= V; ++v) {
      EXPECT_EQ(b0.p[v], v == 0 ? 1.0 : 0.0);
      EXPECT_EQ(b1.p[v], v == V ? 1.0 : 0.0);
    }
  }
}

TEST(Bernstein, MidpointDegreeFive) {
  const auto b = bernstein_basis(5, 0.5);
  const double expect[] = {1, 5, 10, 10, 5, 1};
  for (int v = 0; v <= 5; ++v) EXPECT_NEAR(b.p[v], expect[v] / 32.0, 1e-15);
}

TEST(Bernstein, PartitionOfUnity) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int V = 2; V <= 10; ++V) {
    for (int k = 0; k < 100; ++k) {
      const auto b = bernstein_basis(V, U(rng));
      EXPECT_NEAR(b.p.sum(), 1.0, 1e-14);
      EXPECT_NEAR(b.dp.sum(), 0.0, 1e-11);
      EXPECT_NEAR(b.ddp.sum(), 0.0, 1e-10);
    }
  }
}

TEST(Bernstein, RejectsOutOfRange) {
  EXPECT_THROW(bernstein_basis(5, -0.1), std::invalid_argument);
  EXPECT_THROW(bernstein_basis(5, 1.5), std::invalid_argument);
  EXPECT_THROW(bernstein_basis(1, 0.5), std::invalid_argument);
}

TEST(Bezier, ConstantCurve) {
  BezierTrajectory tr{0.4, Eigen::MatrixXd::Constant(6, 3, 0.7)};
  for (double t : {0.0, 0.1, 0.37, 0.4}) {
    const auto s = bezier_eval(tr, t);
    EXPECT_NEAR((s.q.array() - 0.7).abs().maxCoeff(), 0.0, 1e-15);
    EXPECT_NEAR(s.qd.norm(), 0.0, 1e-13);
    EXPECT_NEAR(s.qdd.norm(), 0.0, 1e-11);
  }
}

TEST(Bezier, EndpointDerivative) {
  std::mt19937 rng(5);
  std::normal_distribution<double> n01;
  BezierTrajectory tr{0.4, Eigen::MatrixXd(6, 4)};
  for (Eigen::Index k = 0; k < tr.coeffs.size(); ++k) tr.coeffs.data()[k] = n01(rng);
  const auto s0 = bezier_eval(tr, 0.0);
  const Eigen::VectorXd expect = 5.0 * (tr.coeffs.row(1) - tr.coeffs.row(0)).transpose() / 0.4;
  EXPECT_LE((s0.qd - expect).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(s0.q, Eigen::VectorXd(tr.coeffs.row(0).transpose()));
  EXPECT_EQ(bezier_eval(tr, 0.4).q, Eigen::VectorXd(tr.coeffs.row(5).transpose()));
}

TEST(Bezier, DerivativesMatchFiniteDifferences) {
  std::mt19937 rng(7);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> U(0.05, 0.95);
  BezierTrajectory tr{0.4, Eigen::MatrixXd(6, 5)};
  for (Eigen::Index k = 0; k < tr.coeffs.size(); ++k) tr.coeffs.data()[k] = n01(rng);
  const double h = 1e-6;
  for (int k = 0; k < 20; ++k) {
    const double t = U(rng) * tr.T;
    const auto s = bezier_eval(tr, t);
    const auto sp = bezier_eval(tr, t + h), sm = bezier_eval(tr, t - h);
    EXPECT_LE(((sp.q - sm.q) / (2 * h) - s.qd).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE(((sp.qd - sm.qd) / (2 * h) - s.qdd).cwiseAbs().maxCoeff(), 1e-7 * std::max(1.0, s.qdd.norm()));
  }
}

TEST(Bezier, RejectsTimeOutsideStep) {
  BezierTrajectory tr{0.4, Eigen::MatrixXd::Zero(6, 2)};
  EXPECT_THROW(bezier_eval(tr, 0.41), std::invalid_argument);
  EXPECT_THROW(bezier_eval(tr, -1e-9), std::invalid_argument);
}

TEST(Chebyshev, ThreeNodes) {
  const auto g = chebyshev_nodes(3, 1.0);
  ASSERT_EQ(g.size(), 3);
  EXPECT_EQ(g.t[0], 0.0);
  EXPECT_EQ(g.t[1], 0.5);
  EXPECT_EQ(g.t[2], 1.0);
}

TEST(Chebyshev, FiveNodesOnTwoSeconds) {
  const auto g = chebyshev_nodes(5, 2.0);
  const double s = std::sin(std::numbers::pi / 8), c = std::cos(std::numbers::pi / 8);
  const double expect[] = {0.0, 2 * s * s, 1.0, 2 * c * c, 2.0};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(g.t[i], expect[i], 1e-15);
}

TEST(Chebyshev, SymmetricWithExactEndpoints) {
  for (int N : {3, 4, 14, 15, 30}) {
    const double T = 0.4;
    const auto g = chebyshev_nodes(N, T);
    EXPECT_EQ(g.t.front(), 0.0);
    EXPECT_EQ(g.t.back(), T);
    for (int i = 0; i < N; ++i) EXPECT_NEAR(g.t[i] + g.t[N - 1 - i], T, 1e-15);
    for (int i = 1; i < N; ++i) EXPECT_LT(g.t[i - 1], g.t[i]);
  }
  EXPECT_THROW(chebyshev_nodes(2, 1.0), std::invalid_argument);
}

TEST(Layout, MinibipedTotal) {
  DecisionLayout lay{2, 5, 12, 22, 10};
  EXPECT_EQ(lay.total(), 208);
}

TEST(Layout, RoundTripBitExact) {
  DecisionLayout lay{2, 5, 12, 22, 10};
  std::mt19937 rng(11);
  std::normal_distribution<double> n01;
  for (int k = 0; k < 1000; ++k) {
    Eigen::VectorXd y(lay.total());
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = n01(rng) * std::pow(10.0, k % 7 - 3);
    EXPECT_EQ(pack(lay, unpack(lay, y, 0.4)), y);
  }
}

TEST(Layout, ZeroVector) {
  DecisionLayout lay{3, 4, 2, 5, 3};
  const auto steps = unpack(lay, Eigen::VectorXd::Zero(lay.total()), 1.0);
  ASSERT_EQ(steps.size(), 3u);
  for (const auto& s : steps) {
    EXPECT_EQ(s.traj.coeffs.norm(), 0.0);
    EXPECT_EQ(s.qd_r.norm(), 0.0);
    EXPECT_EQ(s.lambda_r.norm(), 0.0);
  }
  EXPECT_THROW(unpack(lay, Eigen::VectorXd::Zero(lay.total() + 1), 1.0), std::invalid_argument);
}

TEST(Layout, SlicesCoverVector) {
  DecisionLayout lay{2, 5, 12, 22, 10};
  std::vector<int> hits(lay.total(), 0);
  for (int l = 0; l < lay.L; ++l) {
    for (int v = 0; v <= lay.V; ++v)
      for (int j = 0; j < lay.n_a; ++j) ++hits[lay.coeff_index(l, v, j)];
    for (int k = 0; k < lay.n; ++k) ++hits[lay.qdr_offset(l) + k];
    for (int k = 0; k < lay.n_u; ++k) ++hits[lay.lambda_offset(l) + k];
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(TrajectoryCsv, HeaderAndDigits) {
  TrajectorySample s;
  s.t = 0.1;
  s.q = Eigen::VectorXd::Constant(2, 1.0 / 3.0);
  s.qd = s.qdd = Eigen::VectorXd::Zero(2);
  s.u = Eigen::VectorXd::Ones(1);
  s.lambda = Eigen::VectorXd::Zero(0);
  std::ostringstream out;
  write_trajectory_csv(out, {s});
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "t,q_1,q_2,qd_1,qd_2,qdd_1,qdd_2,u_1");
  EXPECT_EQ(row.substr(0, row.find(',')), "1.0000000000000001e-01");
  EXPECT_NE(row.find("3.3333333333333331e-01"), std::string::npos);
}
