#include "gaitforge/closure.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "gaitforge/dynamics.hpp"
#include "gaitforge/io.hpp"
#include "gaitforge/kinematics.hpp"

namespace gaitforge {

namespace {

using D1 = Dual<double>;
using D2 = Dual<D1>;

// Two unit vectors spanning the plane orthogonal to n.
std::pair<Eigen::Vector3d, Eigen::Vector3d> orthogonal_pair(const Eigen::Vector3d& n) {
  const Eigen::Vector3d helper = std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d t1 = (helper - helper.dot(n) * n).normalized();
  return {t1, n.cross(t1)};
}

template <typename S>
Vec3<S> log_map(const Mat3<S>& R) {
  const S c = (R(0, 0) + R(1, 1) + R(2, 2) - 1.0) * 0.5;
  const Vec3<S> w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));  // 2 sin(θ) a
  const S s2 = w.squaredNorm() * 0.25;
  S factor;
  if (value(s2) < 1e-8 && value(c) > 0.0) {
    // θ / (2 sin θ) = asin(s) / (2 s)
    factor = 0.5 * (1.0 + s2 * (1.0 / 6 + s2 * (3.0 / 40 + s2 * (5.0 / 112 + s2 * (35.0 / 1152)))));
  } else {
    const S s = sqrt(s2);
    factor = atan2(s, c) / (2.0 * s);
  }
  return w * factor;
}

template <typename S>
Mat3<S> left_jacobian_inv(const Vec3<S>& phi) {
  const S t2 = phi.squaredNorm();
  S beta;
  if (value(t2) < 1e-2) {
    beta = 1.0 / 12 + t2 * (1.0 / 720 + t2 * (1.0 / 30240 + t2 * (1.0 / 1209600)));
  } else {
    const S t = sqrt(t2);
    beta = 1.0 / t2 - (1.0 + cos(t)) / (2.0 * t * sin(t));
  }
  const Mat3<S> K = skew<S>(phi);
  return Mat3<S>::Identity() - 0.5 * K + beta * (K * K);
}

template <typename S>
struct Stack {
  VecX<S> c;
  MatX<S> J;
};

template <typename S>
Stack<S> constraint_stack(const RobotModel& model, const StanceSpec& stance, const VecX<S>& q, bool with_jacobian) {
  const auto poses = link_poses<S>(model, q);
  const int rows = constraint_count(model, stance);
  const int n = model.n();
  Stack<S> out;
  out.c.resize(rows);
  if (with_jacobian) out.J = MatX<S>::Zero(rows, n);
  int r = 0;
  for (const auto& cl : model.closures()) {
    const Placement<S> pa = body_placement(model, poses, cl.parent_body);
    const Placement<S> pb = body_placement(model, poses, cl.child_body);
    const int la = model.body_frame(cl.parent_body).link;
    const int lb = model.body_frame(cl.child_body).link;
    const Vec3<S> xa = pa.act(cl.parent_point.cast<S>());
    const Vec3<S> xb = pb.act(cl.child_point.cast<S>());
    const Vec3<S> d = xa - xb;
    MatX<S> Jd, Jwa, Jwb;
    if (with_jacobian) {
      Jd = point_jacobian_world(model, poses, la, xa) - point_jacobian_world(model, poses, lb, xb);
      Jwa = angular_jacobian_world(model, poses, la);
    }
    switch (cl.kind) {
      case ClosureKind::Point3:
        out.c.template segment<3>(r) = d;
        if (with_jacobian) out.J.middleRows(r, 3) = Jd;
        r += 3;
        break;
      case ClosureKind::PlanarPoint2: {
        const auto [t1, t2] = orthogonal_pair(cl.normal);
        for (const Eigen::Vector3d& t : {t1, t2}) {
          const Vec3<S> tw = pa.R * t.cast<S>();
          out.c[r] = tw.dot(d);
          if (with_jacobian) out.J.row(r) = tw.transpose() * Jd + tw.cross(d).transpose() * Jwa;
          ++r;
        }
        break;
      }
      case ClosureKind::Pin5: {
        out.c.template segment<3>(r) = d;
        if (with_jacobian) {
          out.J.middleRows(r, 3) = Jd;
          Jwb = angular_jacobian_world(model, poses, lb);
        }
        r += 3;
        const Vec3<S> aw = pa.R * cl.normal.cast<S>();
        const auto [b1, b2] = orthogonal_pair(cl.child_axis);
        for (const Eigen::Vector3d& b : {b1, b2}) {
          const Vec3<S> bw = pb.R * b.cast<S>();
          out.c[r] = aw.dot(bw);
          if (with_jacobian) out.J.row(r) = aw.cross(bw).transpose() * (Jwa - Jwb);
          ++r;
        }
        break;
      }
    }
  }
  if (stance.enabled) {
    const ContactPatch& patch = model.contact(stance.side);
    const int link = model.body_frame(patch.body).link;
    const Placement<S> sole = body_placement(model, poses, patch.body) * patch.frame;
    const Mat3<S> RtT = stance.target.rotation.transpose().cast<S>();
    out.c.template segment<3>(r) = RtT * (sole.p - stance.target.translation.cast<S>());
    const Vec3<S> phi = log_map<S>(RtT * sole.R);
    out.c.template segment<3>(r + 3) = phi;
    if (with_jacobian) {
      out.J.middleRows(r, 3) = RtT * point_jacobian_world(model, poses, link, sole.p);
      out.J.middleRows(r + 3, 3) = left_jacobian_inv<S>(phi) * RtT * angular_jacobian_world(model, poses, link);
    }
    r += 6;
  }
  return out;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& J, const std::vector<int>& cols) {
  Eigen::MatrixXd out(J.rows(), static_cast<Eigen::Index>(cols.size()));
  for (size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = J.col(cols[k]);
  return out;
}

void check_square(const RobotModel& model, const StanceSpec& stance) {
  if (stance.enabled && !model.has_contacts())
    throw IkError(IkError::Kind::Unsupported, "stance requested on a model without contact patches");
  const int nc = constraint_count(model, stance);
  if (nc != model.n_u())
    throw IkError(IkError::Kind::Unsupported,
                  "constraint count " + std::to_string(nc) + " differs from n_u = " + std::to_string(model.n_u()) +
                      " (system not fully actuated)");
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Damped Newton over the coordinates `coords` of q (in place).
int newton_solve(const RobotModel& model, const StanceSpec& stance, Eigen::VectorXd& q, const std::vector<int>& coords,
                 const IkOptions& opts) {
  Eigen::VectorXd c = constraint_residual(model, stance, q);
  if (c.size() != static_cast<Eigen::Index>(coords.size()))
    throw IkError(IkError::Kind::Unsupported, "IK system is not square");
  int it = 0;
  while (inf_norm(c) > opts.tolerance) {
    if (it >= opts.max_iterations)
      throw IkError(IkError::Kind::NoConvergence,
                    "IK did not converge in " + std::to_string(opts.max_iterations) + " iterations (|c| = " +
                        format_shortest(inf_norm(c)) + ")");
    const Eigen::MatrixXd Js = select_columns(constraint_jacobian(model, stance, q), coords);
    if (ju_conditioning(Js) < opts.singular_ratio)
      throw IkError(IkError::Kind::Singular, "constraint Jacobian on the passive coordinates is singular");
    const Eigen::VectorXd step = -Js.partialPivLu().solve(c);
    const double norm0 = c.norm();
    double alpha = 1.0;
    bool accepted = false;
    while (alpha >= 1.0 / 1024) {
      Eigen::VectorXd trial = q;
      for (size_t k = 0; k < coords.size(); ++k) trial[coords[k]] += alpha * step[static_cast<Eigen::Index>(k)];
      Eigen::VectorXd ct = constraint_residual(model, stance, trial);
      if (ct.allFinite() && ct.norm() <= (1.0 - 1e-4 * alpha) * norm0) {
        q = trial;
        c = ct;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    ++it;
    if (!accepted) {
      // Round-off floor: accept a converged-but-stalled iterate.
      if (inf_norm(c) <= 10 * opts.tolerance) break;
      throw IkError(IkError::Kind::NoConvergence, "IK line search failed (|c| = " + format_shortest(inf_norm(c)) + ")");
    }
  }
  if (inf_norm(c) > opts.tolerance * 10)
    throw IkError(IkError::Kind::NoConvergence, "IK stalled at |c| = " + format_shortest(inf_norm(c)));
  return it;
}

void check_within_limits(const RobotModel& model, const Eigen::VectorXd& q, const std::vector<int>& coords) {
  for (int i : coords) {
    const double tol = 1e-9;
    if (q[i] < model.lower_limits()[i] - tol || q[i] > model.upper_limits()[i] + tol)
      throw IkError(IkError::Kind::NoConvergence, "IK converged outside the limits of '" +
                                                      model.coordinate_names()[i] + "'");
  }
}

// Unactuated coordinates closed by the loops (not the floating base).
std::vector<int> loop_passive_coords(const RobotModel& model) {
  std::vector<int> out;
  const int fb = model.floating_base();
  for (int i : model.unactuated())
    if (fb < 0 || i < fb || i >= fb + 6) out.push_back(i);
  return out;
}

double wrap_into(double angle, double lo, double hi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  while (angle < lo && angle + two_pi <= hi + 1e-12) angle += two_pi;
  while (angle > hi && angle - two_pi >= lo - 1e-12) angle -= two_pi;
  return angle;
}

// Floating-base coordinates that put the stance sole exactly on its target.
void place_floating_base(const RobotModel& model, const StanceSpec& stance, Eigen::VectorXd& q) {
  const int fb = model.floating_base();
  if (fb < 0 || !stance.enabled) return;
  q.segment<6>(fb).setZero();
  const FramePlacement P0 = sole_placement(model, stance.side, q);
  const FramePlacement& O = model.links()[fb].tree;
  const FramePlacement B = O.inverse() * stance.target * P0.inverse() * O;
  const Eigen::Matrix3d& R = B.rotation;
  const double pitch = -std::asin(std::clamp(R(2, 0), -1.0, 1.0));
  const double yaw = std::atan2(R(1, 0), R(0, 0));
  const double roll = std::atan2(R(2, 1), R(2, 2));
  q.segment<3>(fb) = B.translation;
  q[fb + 3] = wrap_into(yaw, model.lower_limits()[fb + 3], model.upper_limits()[fb + 3]);
  q[fb + 4] = pitch;
  q[fb + 5] = wrap_into(roll, model.lower_limits()[fb + 5], model.upper_limits()[fb + 5]);
}

double basis_value(const std::vector<int>& term, const std::vector<double>& angles) {
  double v = 1.0;
  for (size_t k = 0; k < term.size(); ++k) {
    const int h = term[k];
    if (h > 0) v *= std::cos(h * angles[k]);
    else if (h < 0) v *= std::sin(-h * angles[k]);
  }
  return v;
}

void enumerate_terms(int dims, int order, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == dims) {
    out.push_back(cur);
    return;
  }
  int used = 0;
  for (int h : cur) used += std::abs(h);
  for (int k = 0; k + used <= order; ++k) {
    cur.push_back(k);
    enumerate_terms(dims, order, cur, out);
    cur.pop_back();
    if (k > 0) {
      cur.push_back(-k);
      enumerate_terms(dims, order, cur, out);
      cur.pop_back();
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

StanceSpec StanceSpec::on(Side side, const Eigen::Vector3d& position, double yaw) {
  StanceSpec s;
  s.enabled = true;
  s.side = side;
  s.target.rotation = rotation_from_rpy(0.0, 0.0, yaw);
  s.target.translation = position;
  return s;
}

double StanceSpec::yaw() const { return std::atan2(target.rotation(1, 0), target.rotation(0, 0)); }

int constraint_count(const RobotModel& model, const StanceSpec& stance) {
  return model.closure_rows() + (stance.enabled ? 6 : 0);
}

ConstraintEval constraint_eval(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                               const Eigen::VectorXd& qd) {
  VecX<D1> qq(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) qq[i] = D1(q[i], qd[i]);
  const auto st = constraint_stack<D1>(model, stance, qq, true);
  ConstraintEval e;
  e.c = st.c.unaryExpr([](const D1& x) { return x.a; });
  e.J = st.J.unaryExpr([](const D1& x) { return x.a; });
  e.Jdot = st.J.unaryExpr([](const D1& x) { return x.b; });
  e.J_u = select_columns(e.J, model.unactuated());
  e.J_a = select_columns(e.J, model.actuated());
  return e;
}

Eigen::VectorXd constraint_residual(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q) {
  return constraint_stack<double>(model, stance, q, false).c;
}

Eigen::MatrixXd constraint_jacobian(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q) {
  return constraint_stack<double>(model, stance, q, true).J;
}

JacobianVariation jacobian_variation(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qd, const Eigen::VectorXd& dq,
                                     const Eigen::VectorXd& dqd) {
  // outer seed: time (qd, and its variation dqd); inner seed: the variation dq
  VecX<D2> qq(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) qq[i] = D2(D1(q[i], dq[i]), D1(qd[i], dqd[i]));
  const auto st = constraint_stack<D2>(model, stance, qq, true);
  return {st.J.unaryExpr([](const D2& x) { return x.a.b; }), st.J.unaryExpr([](const D2& x) { return x.b.b; })};
}

FramePlacement sole_placement(const RobotModel& model, Side side, const Eigen::VectorXd& q) {
  const ContactPatch& patch = model.contact(side);
  const auto poses = link_poses<double>(model, q);
  const auto p = body_placement(model, poses, patch.body) * patch.frame;
  return {p.R, p.p};
}

Eigen::MatrixXd sole_jacobian(const RobotModel& model, Side side, const Eigen::VectorXd& q) {
  const ContactPatch& patch = model.contact(side);
  const auto poses = link_poses<double>(model, q);
  const auto p = body_placement(model, poses, patch.body) * patch.frame;
  const int link = model.body_frame(patch.body).link;
  Eigen::MatrixXd J(6, model.n());
  J.topRows<3>() = angular_jacobian_world(model, poses, link);
  J.bottomRows<3>() = point_jacobian_world(model, poses, link, p.p);
  return J;
}

Eigen::Vector3d rotation_log(const Eigen::Matrix3d& R) { return log_map<double>(R); }
Eigen::Matrix3d left_jacobian_inverse(const Eigen::Vector3d& phi) { return left_jacobian_inv<double>(phi); }

// ---------------------------------------------------------------------------

Eigen::VectorXd assemble_configuration(const RobotModel& model, const Eigen::VectorXd& qa, const Eigen::VectorXd& qu) {
  if (qa.size() != model.n_a() || qu.size() != model.n_u())
    throw std::invalid_argument("assemble_configuration: size mismatch");
  Eigen::VectorXd q(model.n());
  for (int k = 0; k < model.n_a(); ++k) q[model.actuated()[k]] = qa[k];
  for (int k = 0; k < model.n_u(); ++k) q[model.unactuated()[k]] = qu[k];
  return q;
}

Eigen::VectorXd actuated_part(const RobotModel& model, const Eigen::VectorXd& q) {
  Eigen::VectorXd out(model.n_a());
  for (int k = 0; k < model.n_a(); ++k) out[k] = q[model.actuated()[k]];
  return out;
}

Eigen::VectorXd unactuated_part(const RobotModel& model, const Eigen::VectorXd& q) {
  Eigen::VectorXd out(model.n_u());
  for (int k = 0; k < model.n_u(); ++k) out[k] = q[model.unactuated()[k]];
  return out;
}

double ju_conditioning(const Eigen::MatrixXd& J_u) {
  if (J_u.size() == 0) return 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J_u);
  const auto& s = svd.singularValues();
  if (s[0] == 0.0) return 0.0;
  return s[s.size() - 1] / s[0];
}

IkResult solve_ik_detailed(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa,
                           const Eigen::VectorXd& guess, const IkOptions& opts) {
  check_square(model, stance);
  Eigen::VectorXd q = assemble_configuration(model, qa, guess);
  IkResult r;
  r.iterations = newton_solve(model, stance, q, model.unactuated(), opts);
  check_within_limits(model, q, model.unactuated());
  r.qu = unactuated_part(model, q);
  r.residual = inf_norm(constraint_residual(model, stance, q));
  return r;
}

Eigen::VectorXd solve_ik(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa,
                         const Eigen::VectorXd& guess, const IkOptions& opts) {
  return solve_ik_detailed(model, stance, qa, guess, opts).qu;
}

// ---------------------------------------------------------------------------
// Surrogate

double IkSurrogate::axis_weight(int coordinate, int actuated_coord) const {
  double w = 0.0;
  for (const auto& s : series_) {
    if (s.coordinate != coordinate) continue;
    for (size_t a = 0; a < s.axes.size(); ++a) {
      if (s.axes[a] != actuated_coord) continue;
      for (size_t t = 0; t < s.terms.size(); ++t)
        if (s.terms[t][a] != 0) w += s.coeffs[static_cast<Eigen::Index>(t)] * s.coeffs[static_cast<Eigen::Index>(t)];
    }
  }
  return std::sqrt(w);
}

Eigen::VectorXd IkSurrogate::evaluate(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa) const {
  Eigen::VectorXd q = assemble_configuration(model, qa, Eigen::VectorXd::Zero(model.n_u()));
  for (int i : model.unactuated()) q[i] = std::clamp(0.0, model.lower_limits()[i], model.upper_limits()[i]);
  for (const auto& s : series_) {
    std::vector<double> angles;
    for (int a : s.axes) angles.push_back(q[a]);
    double v = 0.0;
    for (size_t t = 0; t < s.terms.size(); ++t) v += s.coeffs[static_cast<Eigen::Index>(t)] * basis_value(s.terms[t], angles);
    q[s.coordinate] = std::clamp(v, model.lower_limits()[s.coordinate], model.upper_limits()[s.coordinate]);
  }
  place_floating_base(model, stance, q);
  return unactuated_part(model, q);
}

IkSurrogate build_ik_surrogate(const RobotModel& model, Side side, int samples_per_axis, int order) {
  if (samples_per_axis < 2) throw std::invalid_argument("grid too small: need at least 2 samples per axis");
  if (order < 0) throw std::invalid_argument("surrogate order must be non-negative");
  IkSurrogate sur;
  sur.side_ = side;
  sur.order_ = order;
  sur.samples_ = samples_per_axis;
  sur.box_lo_.resize(model.n_a());
  sur.box_hi_.resize(model.n_a());
  for (int k = 0; k < model.n_a(); ++k) {
    const int i = model.actuated()[k];
    sur.box_lo_[k] = model.lower_limits()[i];
    sur.box_hi_[k] = model.upper_limits()[i];
    if (!std::isfinite(sur.box_lo_[k]) || !std::isfinite(sur.box_hi_[k]))
      throw std::invalid_argument("actuated-joint box must be bounded ('" + model.coordinate_names()[i] + "')");
  }
  const std::vector<int> passive = loop_passive_coords(model);
  if (passive.empty()) return sur;
  const StanceSpec loops = StanceSpec::none();
  if (model.closure_rows() != static_cast<int>(passive.size()))
    throw IkError(IkError::Kind::Unsupported, "loop closures do not determine the passive coordinates");

  IkOptions opts;
  // Reference assembly at the box center, from the passive coordinates at
  // zero (or their limit midpoint when zero is excluded).
  Eigen::VectorXd center = model.neutral_configuration();
  for (int k = 0; k < model.n_a(); ++k) center[model.actuated()[k]] = 0.5 * (sur.box_lo_[k] + sur.box_hi_[k]);
  // Continuation from an assembled q to new actuated values, subdividing the
  // path when a direct Newton solve fails.
  auto solve_at = [&](const Eigen::VectorXd& from, const Eigen::VectorXd& qa_full) {
    for (int pieces = 1;; pieces *= 2) {
      try {
        Eigen::VectorXd q = from;
        for (int p = 1; p <= pieces; ++p) {
          for (int k = 0; k < model.n_a(); ++k) {
            const int i = model.actuated()[k];
            q[i] = from[i] + (qa_full[i] - from[i]) * p / pieces;
          }
          newton_solve(model, loops, q, passive, opts);
        }
        check_within_limits(model, q, passive);
        return q;
      } catch (const IkError&) {
        if (pieces >= 64) throw;
      }
    }
  };
  try {
    center = solve_at(center, center);
  } catch (const IkError& e) {
    throw IkError(e.kind(), std::string("surrogate reference assembly failed: ") + e.what());
  }

  // Dependency of each passive coordinate on the actuated axes, from the
  // implicit-function sensitivities at a few assemblies.
  std::vector<std::vector<bool>> depends(passive.size(), std::vector<bool>(model.n_a(), false));
  {
    Eigen::VectorXd q = center;
    for (double frac : {0.5, 0.3, 0.7}) {
      Eigen::VectorXd target = q;
      for (int k = 0; k < model.n_a(); ++k)
        target[model.actuated()[k]] = sur.box_lo_[k] + frac * (sur.box_hi_[k] - sur.box_lo_[k]);
      q = solve_at(q, target);
      const Eigen::MatrixXd J = constraint_jacobian(model, loops, q);
      const Eigen::MatrixXd Gp = -select_columns(J, passive).partialPivLu().solve(select_columns(J, model.actuated()));
      const double scale = std::max(1.0, Gp.cwiseAbs().maxCoeff());
      for (size_t p = 0; p < passive.size(); ++p)
        for (int k = 0; k < model.n_a(); ++k)
          if (std::abs(Gp(static_cast<Eigen::Index>(p), k)) > 1e-9 * scale) depends[p][k] = true;
    }
  }

  std::map<std::vector<bool>, std::vector<size_t>> groups;
  for (size_t p = 0; p < passive.size(); ++p) groups[depends[p]].push_back(p);

  for (const auto& [mask, members] : groups) {
    std::vector<int> axes_k;  // indices into A
    for (int k = 0; k < model.n_a(); ++k)
      if (mask[k]) axes_k.push_back(k);
    const int d = static_cast<int>(axes_k.size());
    if (d > 3) throw std::invalid_argument("surrogate: a passive coordinate depends on more than 3 actuated axes");
    std::vector<std::vector<int>> terms;
    std::vector<int> cur;
    enumerate_terms(d, order, cur, terms);

    long total = 1;
    for (int i = 0; i < d; ++i) total *= samples_per_axis;
    Eigen::MatrixXd A(total, static_cast<Eigen::Index>(terms.size()));
    Eigen::MatrixXd Y(total, static_cast<Eigen::Index>(members.size()));
    Eigen::VectorXd q = center;
    for (long s = 0; s < total; ++s) {
      // boustrophedon walk so consecutive samples are neighbours (continuation)
      std::vector<int> idx(d);
      long rem = s;
      std::vector<long> digits(d);
      for (int i = 0; i < d; ++i) {
        digits[i] = rem % samples_per_axis;
        rem /= samples_per_axis;
      }
      for (int i = d - 1; i >= 0; --i) {
        long higher = 0;
        for (int j = i + 1; j < d; ++j) higher += digits[j];
        idx[i] = static_cast<int>((higher % 2) ? samples_per_axis - 1 - digits[i] : digits[i]);
      }
      Eigen::VectorXd target = center;
      std::vector<double> angles(d);
      for (int i = 0; i < d; ++i) {
        const int k = axes_k[i];
        const double v = sur.box_lo_[k] + (sur.box_hi_[k] - sur.box_lo_[k]) * idx[i] / (samples_per_axis - 1);
        target[model.actuated()[k]] = v;
        angles[i] = v;
      }
      try {
        q = solve_at(q, target);
      } catch (const IkError& e) {
        std::ostringstream msg;
        msg << "IK failed at surrogate sample qa = [";
        for (int i = 0; i < d; ++i) msg << (i ? ", " : "") << model.coordinate_names()[model.actuated()[axes_k[i]]] << "=" << angles[i];
        msg << "]: " << e.what();
        throw IkError(e.kind(), msg.str());
      }
      for (size_t t = 0; t < terms.size(); ++t) A(s, static_cast<Eigen::Index>(t)) = basis_value(terms[t], angles);
      for (size_t m = 0; m < members.size(); ++m) Y(s, static_cast<Eigen::Index>(m)) = q[passive[members[m]]];
    }
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    const Eigen::MatrixXd C = cod.solve(Y);
    const Eigen::MatrixXd fit = A * C;
    for (size_t m = 0; m < members.size(); ++m) {
      IkSurrogate::Series s;
      s.coordinate = passive[members[m]];
      for (int k : axes_k) s.axes.push_back(model.actuated()[k]);
      s.terms = terms;
      s.coeffs = C.col(static_cast<Eigen::Index>(m));
      const int i = s.coordinate;
      for (long r = 0; r < total; ++r) {
        const double pred = std::clamp(fit(r, static_cast<Eigen::Index>(m)), model.lower_limits()[i], model.upper_limits()[i]);
        sur.max_fit_residual_ = std::max(sur.max_fit_residual_, std::abs(pred - Y(r, static_cast<Eigen::Index>(m))));
      }
      sur.series_.push_back(std::move(s));
    }
  }
  std::sort(sur.series_.begin(), sur.series_.end(),
            [](const auto& a, const auto& b) { return a.coordinate < b.coordinate; });
  return sur;
}

std::string surrogate_cache_key(const RobotModel& model, Side side, int samples_per_axis, int order) {
  return model_hash(model) + "-" + to_string(side) + "-K" + std::to_string(order) + "-S" +
         std::to_string(samples_per_axis);
}

void IkSurrogate::save(std::ostream& out, const std::string& key) const {
  out << "gaitforge-ik-surrogate 1\n";
  out << "key " << key << "\n";
  out << "side " << to_string(side_) << " order " << order_ << " samples " << samples_ << " residual "
      << format_shortest(max_fit_residual_) << "\n";
  out << "box " << box_lo_.size();
  for (Eigen::Index k = 0; k < box_lo_.size(); ++k) out << " " << format_shortest(box_lo_[k]) << " " << format_shortest(box_hi_[k]);
  out << "\n";
  out << "series " << series_.size() << "\n";
  for (const auto& s : series_) {
    out << "coordinate " << s.coordinate << " axes " << s.axes.size();
    for (int a : s.axes) out << " " << a;
    out << " terms " << s.terms.size() << "\n";
    for (size_t t = 0; t < s.terms.size(); ++t) {
      for (int h : s.terms[t]) out << h << " ";
      out << format_shortest(s.coeffs[static_cast<Eigen::Index>(t)]) << "\n";
    }
  }
}

bool IkSurrogate::load(std::istream& in, const std::string& key) {
  auto expect = [&](const char* word) {
    std::string w;
    if (!(in >> w) || w != word) throw std::runtime_error(std::string("surrogate cache: expected '") + word + "'");
  };
  auto number = [&]() {
    std::string w;
    if (!(in >> w)) throw std::runtime_error("surrogate cache: truncated");
    return parse_number(w);
  };
  expect("gaitforge-ik-surrogate");
  expect("1");
  expect("key");
  std::string stored;
  in >> stored;
  if (stored != key) return false;
  IkSurrogate s;
  expect("side");
  std::string side;
  in >> side;
  s.side_ = side == "right" ? Side::Right : Side::Left;
  expect("order");
  s.order_ = static_cast<int>(number());
  expect("samples");
  s.samples_ = static_cast<int>(number());
  expect("residual");
  s.max_fit_residual_ = number();
  expect("box");
  const int na = static_cast<int>(number());
  s.box_lo_.resize(na);
  s.box_hi_.resize(na);
  for (int k = 0; k < na; ++k) {
    s.box_lo_[k] = number();
    s.box_hi_[k] = number();
  }
  expect("series");
  const int count = static_cast<int>(number());
  for (int c = 0; c < count; ++c) {
    Series ser;
    expect("coordinate");
    ser.coordinate = static_cast<int>(number());
    expect("axes");
    const int d = static_cast<int>(number());
    for (int a = 0; a < d; ++a) ser.axes.push_back(static_cast<int>(number()));
    expect("terms");
    const int nt = static_cast<int>(number());
    ser.coeffs.resize(nt);
    for (int t = 0; t < nt; ++t) {
      std::vector<int> term(d);
      for (int a = 0; a < d; ++a) term[a] = static_cast<int>(number());
      ser.terms.push_back(term);
      ser.coeffs[t] = number();
    }
    s.series_.push_back(std::move(ser));
  }
  *this = std::move(s);
  return true;
}

// ---------------------------------------------------------------------------
// Constrained inverse dynamics

namespace {

struct ProjectionWork {
  ConstraintEval ce;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  Eigen::MatrixXd Gu, Gudot;
};

ProjectionWork make_projection(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                               const Eigen::VectorXd& qd, double singular_ratio) {
  check_square(model, stance);
  ProjectionWork w;
  w.ce = constraint_eval(model, stance, q, qd);
  if (model.n_u() > 0) {
    if (ju_conditioning(w.ce.J_u) < singular_ratio)
      throw IkError(IkError::Kind::Singular, "J_u is singular");
    w.lu.compute(w.ce.J_u);
    w.Gu = -w.lu.solve(w.ce.J_a);
  } else {
    w.Gu.resize(0, model.n_a());
  }
  return w;
}

Eigen::MatrixXd full_from_parts(const RobotModel& model, const Eigen::MatrixXd& top_a, const Eigen::MatrixXd& u_rows) {
  Eigen::MatrixXd M(model.n(), top_a.cols());
  for (int k = 0; k < model.n_a(); ++k) M.row(model.actuated()[k]) = top_a.row(k);
  for (int k = 0; k < model.n_u(); ++k) M.row(model.unactuated()[k]) = u_rows.row(k);
  return M;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[idx[k]];
  return out;
}

}  // namespace

Projection projection_matrix(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& q,
                             const Eigen::VectorXd& qd) {
  ProjectionWork w = make_projection(model, stance, q, qd, IkOptions{}.singular_ratio);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(model.n_a(), model.n_a());
  Projection p;
  p.G = full_from_parts(model, I, w.Gu);
  Eigen::MatrixXd Gudot = model.n_u() > 0 ? Eigen::MatrixXd(-w.lu.solve(w.ce.Jdot * p.G))
                                          : Eigen::MatrixXd(0, model.n_a());
  p.Gdot = full_from_parts(model, Eigen::MatrixXd::Zero(model.n_a(), model.n_a()), Gudot);
  return p;
}

ConstrainedIdResult constrained_inverse_dynamics(const RobotModel& model, const StanceSpec& stance,
                                                 const Eigen::VectorXd& qa, const Eigen::VectorXd& qda,
                                                 const Eigen::VectorXd& qdda, const Eigen::VectorXd& guess,
                                                 const IkOptions& opts) {
  ConstrainedIdResult r;
  const IkResult ik = solve_ik_detailed(model, stance, qa, guess, opts);
  r.ik_iterations = ik.iterations;
  r.q = assemble_configuration(model, qa, ik.qu);
  // G does not depend on qd; Ġ needs qd = G qda first.
  ProjectionWork w = make_projection(model, stance, r.q, Eigen::VectorXd::Zero(model.n()), opts.singular_ratio);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(model.n_a(), model.n_a());
  r.G = full_from_parts(model, I, w.Gu);
  r.qd = r.G * qda;
  const ConstraintEval ce = constraint_eval(model, stance, r.q, r.qd);
  const Eigen::MatrixXd Gudot =
      model.n_u() > 0 ? Eigen::MatrixXd(-w.lu.solve(ce.Jdot * r.G)) : Eigen::MatrixXd(0, model.n_a());
  r.Gdot = full_from_parts(model, Eigen::MatrixXd::Zero(model.n_a(), model.n_a()), Gudot);
  r.qdd = r.G * qdda + r.Gdot * qda;
  r.tau = inverse_dynamics(model, r.q, r.qd, r.qdd);
  const Eigen::VectorXd tau_u = rows_of(r.tau, model.unactuated());
  const Eigen::VectorXd tau_a = rows_of(r.tau, model.actuated());
  r.lambda = model.n_u() > 0 ? Eigen::VectorXd(w.lu.transpose().solve(tau_u)) : Eigen::VectorXd(0);
  r.u = tau_a - (model.n_u() > 0 ? Eigen::VectorXd(ce.J_a.transpose() * r.lambda) : Eigen::VectorXd::Zero(model.n_a()));
  return r;
}

CidPartials cid_partials(const RobotModel& model, const StanceSpec& stance, const Eigen::VectorXd& qa,
                         const Eigen::VectorXd& qda, const Eigen::VectorXd& qdda, const Eigen::VectorXd& guess,
                         const IkOptions& opts) {
  return cid_partials(model, stance, constrained_inverse_dynamics(model, stance, qa, qda, qdda, guess, opts));
}

CidPartials cid_partials(const RobotModel& model, const StanceSpec& stance, const ConstrainedIdResult& v) {
  const int n = model.n(), na = model.n_a(), nu = model.n_u();
  const auto& A = model.actuated();
  const auto& U = model.unactuated();
  CidPartials out;
  out.value = v;
  out.dq.resize(n, 3 * na);
  out.dqd.resize(n, 3 * na);
  out.dqdd.resize(n, 3 * na);
  out.dlambda.resize(nu, 3 * na);
  out.du.resize(na, 3 * na);

  const ConstraintEval ce = constraint_eval(model, stance, v.q, v.qd);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  if (nu > 0) lu.compute(ce.J_u);
  const IdPartials P = id_partials(model, v.q, v.qd, v.qdd);
  const Eigen::VectorXd qda = rows_of(v.qd, A);
  const Eigen::VectorXd qdda = rows_of(v.qdd, A);
  const Eigen::MatrixXd Gudot = [&] {
    Eigen::MatrixXd M(nu, na);
    for (int k = 0; k < nu; ++k) M.row(k) = v.Gdot.row(U[k]);
    return M;
  }();

  // J'[G e_j], reused by the qda directions.
  std::vector<Eigen::MatrixXd> dJ_dir(na);

  auto finish = [&](int col, const Eigen::VectorXd& dq, const Eigen::VectorXd& dqd, const Eigen::VectorXd& dqdd,
                    const Eigen::MatrixXd& dJ) {
    const Eigen::VectorXd dtau = P.dtau_dq * dq + P.dtau_dqd * dqd + P.dtau_dqdd * dqdd;
    out.dq.col(col) = dq;
    out.dqd.col(col) = dqd;
    out.dqdd.col(col) = dqdd;
    if (nu > 0) {
      const Eigen::MatrixXd dJu = select_columns(dJ, U);
      const Eigen::MatrixXd dJa = select_columns(dJ, A);
      const Eigen::VectorXd dlam = lu.transpose().solve(rows_of(dtau, U) - dJu.transpose() * v.lambda);
      out.dlambda.col(col) = dlam;
      out.du.col(col) = rows_of(dtau, A) - dJa.transpose() * v.lambda - ce.J_a.transpose() * dlam;
    } else {
      out.du.col(col) = rows_of(dtau, A);
    }
  };

  const Eigen::VectorXd zero_n = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd zero_c = Eigen::MatrixXd::Zero(ce.J.rows(), n);
  for (int j = 0; j < na; ++j) {
    // qa direction
    const Eigen::VectorXd dq = v.G.col(j);
    Eigen::MatrixXd dG = Eigen::MatrixXd::Zero(n, na), dGdot = Eigen::MatrixXd::Zero(n, na);
    Eigen::MatrixXd dJ = zero_c;
    Eigen::VectorXd dqd = zero_n;
    if (nu > 0) {
      dJ = jacobian_variation(model, stance, v.q, v.qd, dq, zero_n).dJ;
      const Eigen::MatrixXd dGu = -lu.solve(dJ * v.G);
      for (int k = 0; k < nu; ++k) dG.row(U[k]) = dGu.row(k);
      dqd = dG * qda;
      const Eigen::MatrixXd dJdot = jacobian_variation(model, stance, v.q, v.qd, dq, dqd).dJdot;
      const Eigen::MatrixXd dGudot =
          -lu.solve(select_columns(dJ, U) * Gudot + dJdot * v.G + ce.Jdot * dG);
      for (int k = 0; k < nu; ++k) dGdot.row(U[k]) = dGudot.row(k);
    }
    dJ_dir[j] = dJ;
    const Eigen::VectorXd dqdd = dG * qdda + dGdot * qda;
    finish(j, dq, dqd, dqdd, dJ);
  }
  for (int j = 0; j < na; ++j) {
    // qda direction: only Ġ moves, through J̇'s dependence on qd.
    const Eigen::VectorXd dqd = v.G.col(j);
    Eigen::VectorXd dqdd = v.Gdot.col(j);
    if (nu > 0) {
      const Eigen::MatrixXd dGudot = -lu.solve(dJ_dir[j] * v.G);
      Eigen::MatrixXd dGdot = Eigen::MatrixXd::Zero(n, na);
      for (int k = 0; k < nu; ++k) dGdot.row(U[k]) = dGudot.row(k);
      dqdd += dGdot * qda;
    }
    finish(na + j, zero_n, dqd, dqdd, zero_c);
  }
  for (int j = 0; j < na; ++j) finish(2 * na + j, zero_n, zero_n, v.G.col(j), zero_c);
  return out;
}

}  // namespace gaitforge
