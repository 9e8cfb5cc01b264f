#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "gaitforge/dynamics.hpp"
#include "support.hpp"

using namespace gaitforge;
using namespace gaitforge::testing;

namespace {

const char* kModels[] = {"pendulum", "double_pendulum", "fourbar", "minibiped"};

}  // namespace

TEST(Kinematics, PendulumZeroAngle) {
  auto m = bundled("pendulum");
  auto fk = forward_kinematics(m, Eigen::VectorXd::Zero(1));
  const int link = m.body_index("link");
  EXPECT_TRUE(fk[link].rotation.isIdentity(0.0));
  EXPECT_TRUE(fk[link].translation.isZero(0.0));
}

TEST(Kinematics, PendulumQuarterTurn) {
  auto m = bundled("pendulum");
  const double L = 0.7;
  Eigen::VectorXd q(1);
  q << std::numbers::pi / 2;
  auto fk = forward_kinematics(m, q);
  // rotating (L,0,0) by +90 deg about y lands on (0,0,-L)
  Eigen::Vector3d tip = fk[m.body_index("link")].act(Eigen::Vector3d(L, 0, 0));
  EXPECT_NEAR(tip.x(), 0.0, 1e-15);
  EXPECT_NEAR(tip.y(), 0.0, 1e-15);
  EXPECT_NEAR(tip.z(), -L, 1e-15);
}

TEST(Kinematics, FloatingBaseTranslation) {
  auto m = bundled("minibiped");
  std::mt19937 rng(3);
  Eigen::VectorXd q = random_configuration(m, rng);
  auto a = forward_kinematics(m, q);
  q.head<3>() += Eigen::Vector3d(1, 2, 3);
  auto b = forward_kinematics(m, q);
  for (size_t i = 1; i < a.size(); ++i) {
    EXPECT_TRUE((b[i].translation - a[i].translation - Eigen::Vector3d(1, 2, 3)).isZero(1e-12));
    EXPECT_TRUE(b[i].rotation.isApprox(a[i].rotation, 1e-14));
  }
}

TEST(Kinematics, PlacementsAreRotations) {
  auto m = bundled("minibiped");
  std::mt19937 rng(4);
  for (int k = 0; k < 20; ++k) {
    auto fk = forward_kinematics(m, random_configuration(m, rng));
    for (const auto& p : fk) {
      EXPECT_TRUE((p.rotation.transpose() * p.rotation).isIdentity(1e-12));
      EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
    }
  }
}

TEST(Kinematics, PendulumTipJacobian) {
  auto m = bundled("pendulum");
  const Eigen::Vector3d tip(0.7, 0, 0);
  auto J = point_jacobian(m, Eigen::VectorXd::Zero(1), m.body_index("link"), tip);
  // axis x offset = (0,1,0) x (0.7,0,0)
  EXPECT_TRUE(J.col(0).isApprox(Eigen::Vector3d(0, 0, -0.7), 1e-15));
}

TEST(Kinematics, OffPathColumnsZero) {
  auto m = bundled("minibiped");
  std::mt19937 rng(5);
  auto q = random_configuration(m, rng);
  auto J = frame_jacobian(m, q, m.body_index("l_foot"));
  for (int c = 14; c < 22; ++c) EXPECT_TRUE(J.col(c).isZero(0.0)) << c;
  EXPECT_THROW(point_jacobian(m, q, 999, Eigen::Vector3d::Zero()), ModelError);
}

TEST(Kinematics, JacobiansMatchFiniteDifferences) {
  std::mt19937 rng(11);
  for (const char* name : kModels) {
    auto m = bundled(name);
    for (int trial = 0; trial < 5; ++trial) {
      const Eigen::VectorXd q = random_configuration(m, rng);
      for (int b = 0; b < static_cast<int>(m.bodies().size()); ++b) {
        const Eigen::Vector3d pt = random_vector(3, rng, 0.2);
        auto pos = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
          return forward_kinematics(m, x)[b].act(pt);
        };
        auto J = point_jacobian(m, q, b, pt);
        EXPECT_LE(rel_error(J, fd_jacobian(pos, q)), 1e-6) << name << " body " << b;
        // angular rows: R(q + h d) ~ exp([J_w d h]) R(q)
        auto F = frame_jacobian(m, q, b, pt);
        const Eigen::VectorXd d = random_vector(m.n(), rng);
        const double h = 1e-6;
        const Eigen::Matrix3d Rp = forward_kinematics(m, q + h * d)[b].rotation;
        const Eigen::Matrix3d Rm = forward_kinematics(m, q - h * d)[b].rotation;
        const Eigen::Matrix3d W = (Rp - Rm) / (2 * h) * forward_kinematics(m, q)[b].rotation.transpose();
        const Eigen::Vector3d w(W(2, 1), W(0, 2), W(1, 0));
        EXPECT_LE(rel_error(F.topRows<3>() * d, w), 1e-6) << name << " body " << b;
        EXPECT_LE(rel_error(F.bottomRows<3>(), J), 1e-15);
      }
    }
  }
}

TEST(Dynamics, PendulumHandValues) {
  auto m = bundled("pendulum");
  const double mass = 1.0, lc = 0.5, Iyy = 0.02;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  EXPECT_NEAR(inverse_dynamics(m, z, z, z)[0], 0.0, 1e-15);
  EXPECT_NEAR(mass_matrix(m, z)(0, 0), mass * lc * lc + Iyy, 1e-15);
  Eigen::VectorXd q(1);
  q << std::numbers::pi / 2;
  EXPECT_NEAR(inverse_dynamics(m, q, z, z)[0], mass * kGravity * lc, 1e-12);
}

TEST(Dynamics, ConsistencyRneaVsCrba) {
  std::mt19937 rng(1);
  for (const char* name : kModels) {
    auto m = bundled(name);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const Eigen::VectorXd q = random_configuration(m, rng);
      const Eigen::VectorXd qd = random_vector(m.n(), rng, 2.0);
      const Eigen::VectorXd qdd = random_vector(m.n(), rng, 5.0);
      const Eigen::VectorXd r = inverse_dynamics(m, q, qd, qdd) - mass_matrix(m, q) * qdd -
                                nonlinear_effects(m, q, qd);
      worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-10) << name;
  }
}

TEST(Dynamics, MassMatrixSymmetricPositiveDefinite) {
  std::mt19937 rng(2);
  for (const char* name : kModels) {
    auto m = bundled(name);
    for (int k = 0; k < 100; ++k) {
      const Eigen::MatrixXd H = mass_matrix(m, random_configuration(m, rng));
      EXPECT_LE((H - H.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_EQ(H.llt().info(), Eigen::Success) << name;
    }
  }
}

TEST(Dynamics, GravityAtRest) {
  std::mt19937 rng(3);
  for (const char* name : kModels) {
    auto m = bundled(name);
    const Eigen::VectorXd q = random_configuration(m, rng);
    const Eigen::VectorXd z = Eigen::VectorXd::Zero(m.n());
    EXPECT_LE((inverse_dynamics(m, q, z, z) - gravity_vector(m, q)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((nonlinear_effects(m, q, z) - gravity_vector(m, q)).cwiseAbs().maxCoeff(), 1e-14);
    auto t = dynamics_terms(m, q, z);
    EXPECT_EQ(t.g, gravity_vector(m, q));
  }
}

TEST(Dynamics, FloatingBaseGravityIsWeight) {
  auto m = bundled("minibiped");
  std::mt19937 rng(9);
  const Eigen::VectorXd q = random_configuration(m, rng);
  const Eigen::VectorXd g = gravity_vector(m, q);
  EXPECT_NEAR(g[0], 0.0, 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
  EXPECT_NEAR(g[2], m.total_mass() * kGravity, 1e-10);
}

TEST(Dynamics, PartialsMatchFiniteDifferences) {
  std::mt19937 rng(21);
  for (const char* name : kModels) {
    auto m = bundled(name);
    for (int k = 0; k < 5; ++k) {
      const Eigen::VectorXd q = random_configuration(m, rng);
      const Eigen::VectorXd qd = random_vector(m.n(), rng, 2.0);
      const Eigen::VectorXd qdd = random_vector(m.n(), rng, 5.0);
      auto P = id_partials(m, q, qd, qdd);
      auto fq = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return inverse_dynamics(m, x, qd, qdd); };
      auto fv = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return inverse_dynamics(m, q, x, qdd); };
      auto fa = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return inverse_dynamics(m, q, qd, x); };
      EXPECT_LE(rel_error(P.dtau_dq, fd_jacobian(fq, q)), 1e-5) << name;
      EXPECT_LE(rel_error(P.dtau_dqd, fd_jacobian(fv, qd)), 1e-5) << name;
      EXPECT_LE(rel_error(P.dtau_dqdd, fd_jacobian(fa, qdd)), 1e-5) << name;
      EXPECT_LE((P.dtau_dqdd - mass_matrix(m, q)).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Dynamics, VelocityPartialIsLinearInVelocity) {
  // C(q, qd) qd is quadratic in qd, so its qd-partial scales linearly.
  auto m = bundled("double_pendulum");
  std::mt19937 rng(5);
  const Eigen::VectorXd q = random_configuration(m, rng);
  const Eigen::VectorXd qd = random_vector(m.n(), rng);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(m.n());
  auto A = id_partials(m, q, qd, z).dtau_dqd;
  auto B = id_partials(m, q, 2.0 * qd, z).dtau_dqd;
  EXPECT_LE((B - 2.0 * A).cwiseAbs().maxCoeff(), 1e-12);
  auto fv = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return nonlinear_effects(m, q, x); };
  EXPECT_LE(rel_error(B, fd_jacobian(fv, 2.0 * qd)), 1e-6);
}

TEST(Dynamics, EnergyRate) {
  // d/dt (T + V) = qd' (tau - g) ... with tau = H qdd + nle and qdd chosen,
  // power balance: qd' (tau) = dT/dt + dV/dt, checked along a short FD step.
  auto m = bundled("minibiped");
  std::mt19937 rng(8);
  const Eigen::VectorXd q = random_configuration(m, rng);
  const Eigen::VectorXd qd = random_vector(m.n(), rng);
  const Eigen::VectorXd qdd = random_vector(m.n(), rng);
  const double h = 1e-5;
  auto E = [&](double t) {
    Eigen::VectorXd qt = q + t * qd + 0.5 * t * t * qdd;
    Eigen::VectorXd vt = qd + t * qdd;
    return kinetic_energy(m, qt, vt) + potential_energy(m, qt);
  };
  const double dE = (E(h) - E(-h)) / (2 * h);
  const double power = qd.dot(inverse_dynamics(m, q, qd, qdd));
  EXPECT_NEAR(dE, power, 1e-5 * std::max(1.0, std::abs(power)));
}
