#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Core>

#include "gaitforge/model.hpp"

namespace gaitforge::testing {

inline RobotModel bundled(const std::string& name) { return load_model(bundled_model_path(name)); }

/// Uniform sample inside the joint limits, with infinite or wide ranges
/// narrowed to [-span, span].
inline Eigen::VectorXd random_configuration(const RobotModel& m, std::mt19937& rng, double span = 1.0) {
  Eigen::VectorXd q(m.n());
  for (int i = 0; i < m.n(); ++i) {
    double lo = std::max(m.lower_limits()[i], -span);
    double hi = std::min(m.upper_limits()[i], span);
    if (lo > hi) lo = hi = 0.5 * (m.lower_limits()[i] + m.upper_limits()[i]);
    q[i] = std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return q;
}

inline Eigen::VectorXd random_vector(int n, std::mt19937& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

/// Central-difference Jacobian of f at x.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (int j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// max|A - B| relative to max(1, max|B|).
inline double rel_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.size() == 0) return 0.0;
  const double scale = std::max(1.0, B.cwiseAbs().maxCoeff());
  return (A - B).cwiseAbs().maxCoeff() / scale;
}

}  // namespace gaitforge::testing

namespace gaitforge::testing {

/// Minibiped-style standing posture (by coordinate name suffix), actuated part.
inline Eigen::VectorXd standing_qa(const RobotModel& m) {
  Eigen::VectorXd qa = Eigen::VectorXd::Zero(m.n_a());
  for (int k = 0; k < m.n_a(); ++k) {
    const std::string& name = m.coordinate_names()[m.actuated()[k]];
    auto ends = [&](const char* s) {
      const std::string suf(s);
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends("hip_pitch")) qa[k] = -0.3;
    else if (ends("knee")) qa[k] = 0.4721;
    else if (ends("ankle_pitch")) qa[k] = -0.3;
  }
  return qa;
}

/// Random actuated configuration around the standing pose, inside the limits.
inline Eigen::VectorXd random_qa_near(const RobotModel& m, const Eigen::VectorXd& center, std::mt19937& rng,
                                      double radius) {
  Eigen::VectorXd qa = center;
  std::uniform_real_distribution<double> d(-radius, radius);
  for (int k = 0; k < m.n_a(); ++k) {
    const int i = m.actuated()[k];
    qa[k] = std::clamp(center[k] + d(rng), m.lower_limits()[i], m.upper_limits()[i]);
  }
  return qa;
}

}  // namespace gaitforge::testing
