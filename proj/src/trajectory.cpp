#include "gaitforge/trajectory.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

#include "gaitforge/io.hpp"

namespace gaitforge {

namespace {

// Bernstein values of degree k from those of degree k-1 (one de Casteljau level).
Eigen::VectorXd raise(const Eigen::VectorXd& prev, double s) {
  const Eigen::Index k = prev.size();
  Eigen::VectorXd next = Eigen::VectorXd::Zero(k + 1);
  for (Eigen::Index v = 0; v < k; ++v) {
    next[v] += (1.0 - s) * prev[v];
    next[v + 1] += s * prev[v];
  }
  return next;
}

}  // namespace

BernsteinValues bernstein_basis(int V, double s) {
  if (V < 2) throw std::invalid_argument("bernstein_basis: degree must be at least 2");
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("bernstein_basis: s outside [0, 1]");
  Eigen::VectorXd level = Eigen::VectorXd::Ones(1);
  for (int k = 1; k <= V - 2; ++k) level = raise(level, s);
  const Eigen::VectorXd p2 = level;          // degree V-2
  const Eigen::VectorXd p1 = raise(p2, s);   // degree V-1
  BernsteinValues out;
  out.p = raise(p1, s);
  out.dp = Eigen::VectorXd::Zero(V + 1);
  out.ddp = Eigen::VectorXd::Zero(V + 1);
  for (int v = 0; v < V; ++v) {
    out.dp[v] -= V * p1[v];
    out.dp[v + 1] += V * p1[v];
  }
  const double c2 = static_cast<double>(V) * (V - 1);
  for (int v = 0; v <= V - 2; ++v) {
    out.ddp[v] += c2 * p2[v];
    out.ddp[v + 1] -= 2.0 * c2 * p2[v];
    out.ddp[v + 2] += c2 * p2[v];
  }
  return out;
}

BezierSample bezier_eval(const BezierTrajectory& traj, double t) {
  if (!(traj.T > 0.0)) throw std::invalid_argument("bezier_eval: duration must be positive");
  if (!(t >= 0.0 && t <= traj.T)) throw std::invalid_argument("bezier_eval: t outside [0, T]");
  const auto b = bernstein_basis(traj.degree(), t / traj.T);
  return {traj.coeffs.transpose() * b.p, traj.coeffs.transpose() * b.dp / traj.T,
          traj.coeffs.transpose() * b.ddp / (traj.T * traj.T)};
}

CollocationGrid chebyshev_nodes(int N, double T) {
  if (N < 3) throw std::invalid_argument("chebyshev_nodes: need at least 3 nodes");
  if (!(T > 0.0)) throw std::invalid_argument("chebyshev_nodes: duration must be positive");
  CollocationGrid grid;
  grid.T = T;
  grid.t.assign(N, 0.0);
  // Fill the first half and mirror so the grid is symmetric about T/2.
  for (int i = 0; 2 * i < N - 1; ++i)
    grid.t[i] = 0.5 * T * (1.0 - std::cos(std::numbers::pi * i / (N - 1)));
  for (int i = 0; 2 * i < N - 1; ++i) grid.t[N - 1 - i] = T - grid.t[i];
  if (N % 2 == 1) grid.t[N / 2] = 0.5 * T;
  grid.t.front() = 0.0;
  grid.t.back() = T;
  return grid;
}

Eigen::VectorXd pack(const DecisionLayout& layout, const std::vector<StepVariables>& steps) {
  if (static_cast<int>(steps.size()) != layout.L) throw std::invalid_argument("pack: wrong number of steps");
  Eigen::VectorXd y(layout.total());
  for (int l = 0; l < layout.L; ++l) {
    const auto& s = steps[l];
    if (s.traj.coeffs.rows() != layout.V + 1 || s.traj.coeffs.cols() != layout.n_a ||
        s.qd_r.size() != layout.n || s.lambda_r.size() != layout.n_u)
      throw std::invalid_argument("pack: step variables do not match the layout");
    for (int v = 0; v <= layout.V; ++v)
      for (int j = 0; j < layout.n_a; ++j) y[layout.coeff_index(l, v, j)] = s.traj.coeffs(v, j);
    y.segment(layout.qdr_offset(l), layout.n) = s.qd_r;
    y.segment(layout.lambda_offset(l), layout.n_u) = s.lambda_r;
  }
  return y;
}

std::vector<StepVariables> unpack(const DecisionLayout& layout, const Eigen::VectorXd& y, double T) {
  if (y.size() != layout.total()) throw std::invalid_argument("unpack: length mismatch");
  std::vector<StepVariables> steps(layout.L);
  for (int l = 0; l < layout.L; ++l) {
    auto& s = steps[l];
    s.traj.T = T;
    s.traj.coeffs.resize(layout.V + 1, layout.n_a);
    for (int v = 0; v <= layout.V; ++v)
      for (int j = 0; j < layout.n_a; ++j) s.traj.coeffs(v, j) = y[layout.coeff_index(l, v, j)];
    s.qd_r = y.segment(layout.qdr_offset(l), layout.n);
    s.lambda_r = y.segment(layout.lambda_offset(l), layout.n_u);
  }
  return steps;
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectorySample>& samples,
                          const std::vector<std::string>& events) {
  if (samples.empty()) throw std::invalid_argument("write_trajectory_csv: no samples");
  if (!events.empty() && events.size() != samples.size())
    throw std::invalid_argument("write_trajectory_csv: one event entry per sample");
  const auto& s0 = samples.front();
  out << "t";
  const auto header = [&](const char* prefix, Eigen::Index count) {
    for (Eigen::Index k = 1; k <= count; ++k) out << ',' << prefix << k;
  };
  header("q_", s0.q.size());
  header("qd_", s0.qd.size());
  header("qdd_", s0.qdd.size());
  header("u_", s0.u.size());
  header("lam_", s0.lambda.size());
  if (!events.empty()) out << ",event";
  out << '\n';
  for (size_t r = 0; r < samples.size(); ++r) {
    const auto& s = samples[r];
    out << format_csv(s.t);
    for (const Eigen::VectorXd* v : {&s.q, &s.qd, &s.qdd, &s.u, &s.lambda}) {
      for (Eigen::Index k = 0; k < v->size(); ++k) out << ',' << format_csv((*v)[k]);
    }
    if (!events.empty()) out << ',' << events[r];
    out << '\n';
  }
}

}  // namespace gaitforge
