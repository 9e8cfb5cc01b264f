#include "gaitforge/dynamics.hpp"

#include <stdexcept>

#include "gaitforge/kinematics.hpp"

namespace gaitforge {

namespace {

// Spatial vectors are [angular; linear].

Eigen::Matrix3d sk(const Eigen::Vector3d& v) { return skew<double>(v); }

Matrix6d crm(const Vector6d& v) {
  Matrix6d m = Matrix6d::Zero();
  m.topLeftCorner<3, 3>() = sk(v.head<3>());
  m.bottomLeftCorner<3, 3>() = sk(v.tail<3>());
  m.bottomRightCorner<3, 3>() = sk(v.head<3>());
  return m;
}

Matrix6d crf(const Vector6d& v) { return -crm(v).transpose(); }

// crf(x) * h == force_cross_operand(h) * x
Matrix6d force_cross_operand(const Vector6d& h) {
  Matrix6d m = Matrix6d::Zero();
  m.topLeftCorner<3, 3>() = -sk(h.head<3>());
  m.topRightCorner<3, 3>() = -sk(h.tail<3>());
  m.bottomLeftCorner<3, 3>() = -sk(h.tail<3>());
  return m;
}

// Plücker transform from parent link coordinates to link coordinates.
struct LinkTransforms {
  std::vector<Matrix6d> X;
  std::vector<Vector6d> S;
};

LinkTransforms link_transforms(const RobotModel& model, const Eigen::VectorXd& q) {
  const auto& links = model.links();
  LinkTransforms t;
  t.X.resize(links.size());
  t.S.resize(links.size());
  for (size_t i = 0; i < links.size(); ++i) {
    const Link& l = links[i];
    Eigen::Matrix3d R = l.tree.rotation;
    Eigen::Vector3d p = l.tree.translation;
    Vector6d s = Vector6d::Zero();
    if (l.prismatic) {
      p += R * l.axis * q[i];
      s.tail<3>() = l.axis;
    } else {
      R = R * axis_rotation<double>(l.axis, q[i]);
      s.head<3>() = l.axis;
    }
    const Eigen::Matrix3d E = R.transpose();
    Matrix6d X = Matrix6d::Zero();
    X.topLeftCorner<3, 3>() = E;
    X.bottomRightCorner<3, 3>() = E;
    X.bottomLeftCorner<3, 3>() = -E * sk(p);
    t.X[i] = X;
    t.S[i] = s;
  }
  return t;
}

Vector6d gravity_acceleration() {
  Vector6d a = Vector6d::Zero();
  a[5] = kGravity;
  return a;
}

void check_size(const RobotModel& model, const Eigen::VectorXd& v, const char* what) {
  if (v.size() != model.n()) throw std::invalid_argument(std::string(what) + ": wrong vector size");
}

}  // namespace

std::vector<FramePlacement> forward_kinematics(const RobotModel& model, const Eigen::VectorXd& q) {
  check_size(model, q, "forward_kinematics");
  const auto poses = link_poses<double>(model, q);
  std::vector<FramePlacement> out(model.bodies().size());
  for (size_t b = 0; b < out.size(); ++b) {
    const auto pl = body_placement(model, poses, static_cast<int>(b));
    out[b] = {pl.R, pl.p};
  }
  return out;
}

Eigen::MatrixXd point_jacobian(const RobotModel& model, const Eigen::VectorXd& q, int body,
                               const Eigen::Vector3d& local_point) {
  check_size(model, q, "point_jacobian");
  if (body < 0 || body >= static_cast<int>(model.bodies().size()))
    throw ModelError("point_jacobian: unknown body");
  const auto poses = link_poses<double>(model, q);
  const auto pl = body_placement(model, poses, body);
  return point_jacobian_world(model, poses, model.body_frame(body).link, pl.act(local_point));
}

Eigen::MatrixXd frame_jacobian(const RobotModel& model, const Eigen::VectorXd& q, int body,
                               const Eigen::Vector3d& local_point) {
  check_size(model, q, "frame_jacobian");
  if (body < 0 || body >= static_cast<int>(model.bodies().size()))
    throw ModelError("frame_jacobian: unknown body");
  const auto poses = link_poses<double>(model, q);
  const auto pl = body_placement(model, poses, body);
  const int link = model.body_frame(body).link;
  Eigen::MatrixXd J(6, model.n());
  J.topRows<3>() = angular_jacobian_world(model, poses, link);
  J.bottomRows<3>() = point_jacobian_world(model, poses, link, pl.act(local_point));
  return J;
}

Eigen::VectorXd inverse_dynamics(const RobotModel& model, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qd, const Eigen::VectorXd& qdd) {
  check_size(model, q, "inverse_dynamics");
  check_size(model, qd, "inverse_dynamics");
  check_size(model, qdd, "inverse_dynamics");
  const auto& links = model.links();
  const int n = model.n();
  const auto t = link_transforms(model, q);
  std::vector<Vector6d> v(n), a(n), f(n);
  const Vector6d a0 = gravity_acceleration();
  for (int i = 0; i < n; ++i) {
    const int p = links[i].parent;
    const Vector6d vp = p >= 0 ? Vector6d(t.X[i] * v[p]) : Vector6d::Zero();
    const Vector6d ap = t.X[i] * (p >= 0 ? a[p] : a0);
    v[i] = vp + t.S[i] * qd[i];
    a[i] = ap + t.S[i] * qdd[i] + crm(v[i]) * t.S[i] * qd[i];
    const Matrix6d& I = links[i].spatial_inertia;
    f[i] = I * a[i] + crf(v[i]) * (I * v[i]);
  }
  Eigen::VectorXd tau(n);
  for (int i = n - 1; i >= 0; --i) {
    tau[i] = t.S[i].dot(f[i]);
    const int p = links[i].parent;
    if (p >= 0) f[p] += t.X[i].transpose() * f[i];
  }
  return tau;
}

Eigen::MatrixXd mass_matrix(const RobotModel& model, const Eigen::VectorXd& q) {
  check_size(model, q, "mass_matrix");
  const auto& links = model.links();
  const int n = model.n();
  const auto t = link_transforms(model, q);
  std::vector<Matrix6d> Ic(n);
  for (int i = 0; i < n; ++i) Ic[i] = links[i].spatial_inertia;
  for (int i = n - 1; i >= 0; --i) {
    const int p = links[i].parent;
    if (p >= 0) Ic[p] += t.X[i].transpose() * Ic[i] * t.X[i];
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    Vector6d F = Ic[i] * t.S[i];
    H(i, i) = t.S[i].dot(F);
    int j = i;
    while (links[j].parent >= 0) {
      F = t.X[j].transpose() * F;
      j = links[j].parent;
      H(i, j) = H(j, i) = F.dot(t.S[j]);
    }
  }
  return H;
}

Eigen::VectorXd nonlinear_effects(const RobotModel& model, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& qd) {
  return inverse_dynamics(model, q, qd, Eigen::VectorXd::Zero(model.n()));
}

Eigen::VectorXd gravity_vector(const RobotModel& model, const Eigen::VectorXd& q) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.n());
  return inverse_dynamics(model, q, zero, zero);
}

DynamicsTerms dynamics_terms(const RobotModel& model, const Eigen::VectorXd& q,
                             const Eigen::VectorXd& qd) {
  return {mass_matrix(model, q), nonlinear_effects(model, q, qd), gravity_vector(model, q)};
}

IdPartials id_partials(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                       const Eigen::VectorXd& qdd) {
  check_size(model, q, "id_partials");
  check_size(model, qd, "id_partials");
  check_size(model, qdd, "id_partials");
  const auto& links = model.links();
  const int n = model.n();
  const auto t = link_transforms(model, q);
  using Block = Eigen::Matrix<double, 6, Eigen::Dynamic>;

  std::vector<Vector6d> v(n), a(n), f(n);
  std::vector<Block> dv_dq(n), dv_dqd(n), da_dq(n), da_dqd(n), df_dq(n), df_dqd(n);
  const Vector6d a0 = gravity_acceleration();

  for (int i = 0; i < n; ++i) {
    const int p = links[i].parent;
    const Matrix6d& X = t.X[i];
    const Vector6d& S = t.S[i];
    const Vector6d vp = p >= 0 ? Vector6d(X * v[p]) : Vector6d::Zero();
    const Vector6d ap = X * (p >= 0 ? a[p] : a0);
    v[i] = vp + S * qd[i];
    const Matrix6d crm_sqd = crm(S * qd[i]);
    a[i] = ap + S * qdd[i] - crm_sqd * v[i];

    if (p >= 0) {
      dv_dq[i] = X * dv_dq[p];
      dv_dqd[i] = X * dv_dqd[p];
      da_dq[i] = X * da_dq[p];
      da_dqd[i] = X * da_dqd[p];
    } else {
      dv_dq[i] = dv_dqd[i] = da_dq[i] = da_dqd[i] = Block::Zero(6, n);
    }
    // d(X_i)/dq_i = -crm(S_i) X_i
    dv_dq[i].col(i) += crm(vp) * S;
    dv_dqd[i].col(i) += S;
    da_dq[i].col(i) += crm(ap) * S;
    da_dq[i] -= crm_sqd * dv_dq[i];
    da_dqd[i] -= crm_sqd * dv_dqd[i];
    da_dqd[i].col(i) += crm(v[i]) * S;

    const Matrix6d& I = links[i].spatial_inertia;
    const Vector6d h = I * v[i];
    f[i] = I * a[i] + crf(v[i]) * h;
    const Matrix6d dfv = crf(v[i]) * I + force_cross_operand(h);
    df_dq[i] = I * da_dq[i] + dfv * dv_dq[i];
    df_dqd[i] = I * da_dqd[i] + dfv * dv_dqd[i];
  }

  IdPartials out;
  out.dtau_dq.resize(n, n);
  out.dtau_dqd.resize(n, n);
  for (int i = n - 1; i >= 0; --i) {
    const Vector6d& S = t.S[i];
    out.dtau_dq.row(i) = S.transpose() * df_dq[i];
    out.dtau_dqd.row(i) = S.transpose() * df_dqd[i];
    const int p = links[i].parent;
    if (p >= 0) {
      const Matrix6d XT = t.X[i].transpose();
      df_dq[p] += XT * df_dq[i];
      df_dq[p].col(i) += XT * (crf(S) * f[i]);
      df_dqd[p] += XT * df_dqd[i];
      f[p] += XT * f[i];
    }
  }
  out.dtau_dqdd = mass_matrix(model, q);
  return out;
}

double kinetic_energy(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
  return 0.5 * qd.dot(mass_matrix(model, q) * qd);
}

double potential_energy(const RobotModel& model, const Eigen::VectorXd& q) {
  return model.total_mass() * kGravity * center_of_mass(model, q).z();
}

Eigen::Vector3d center_of_mass(const RobotModel& model, const Eigen::VectorXd& q) {
  check_size(model, q, "center_of_mass");
  const auto poses = link_poses<double>(model, q);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  double m = 0.0;
  for (int i = 0; i < model.n(); ++i) {
    const Link& l = model.links()[i];
    c += l.mass * poses[i].act(l.com);
    m += l.mass;
  }
  return m > 0.0 ? Eigen::Vector3d(c / m) : c;
}

}  // namespace gaitforge
