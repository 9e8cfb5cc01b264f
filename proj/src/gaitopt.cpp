#include "gaitforge/gaitopt.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <Eigen/Dense>

#include "gaitforge/dynamics.hpp"
#include "gaitforge/io.hpp"

namespace gaitforge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSmoothing = 1e-8;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& v) {
  const double d = parse_number(v);
  if (d != std::floor(d) || std::abs(d) > 1e9) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return static_cast<int>(d);
}

Eigen::VectorXd parse_vector(const std::string& v) {
  const auto parts = split_commas(v);
  Eigen::VectorXd out(static_cast<Eigen::Index>(parts.size()));
  for (size_t k = 0; k < parts.size(); ++k) out[static_cast<Eigen::Index>(k)] = parse_number(parts[k]);
  return out;
}

std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index k = 0; k < v.size(); ++k) s += (k ? "," : "") + format_shortest(v[k]);
  return s;
}

// d/dB of a quantity whose partials w.r.t. (qa, qda, qdda) are the columns of D.
Eigen::MatrixXd chain_to_coeffs(const Eigen::MatrixXd& D, const BernsteinValues& b, double T, int na) {
  const int V = static_cast<int>(b.p.size()) - 1;
  Eigen::MatrixXd out(D.rows(), (V + 1) * na);
  for (int v = 0; v <= V; ++v) {
    out.middleCols(v * na, na) = D.leftCols(na) * b.p[v] + D.middleCols(na, na) * (b.dp[v] / T) +
                                 D.rightCols(na) * (b.ddp[v] / (T * T));
  }
  return out;
}

double smooth_norm(const Eigen::VectorXd& x) { return std::sqrt(x.squaredNorm() + kSmoothing); }

// Runs f(k) for k in [0, count) on `threads` workers; rethrows the lowest-index failure.
template <typename F>
void parallel_for(int count, int threads, F&& f) {
  std::vector<std::exception_ptr> errors(count);
  auto work = [&](int start, int stride) {
    for (int k = start; k < count; k += stride) {
      try {
        f(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min(threads, count));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

GaitConfig parse_gait_config(const std::string& text) {
  GaitConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("gait config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "L") c.L = parse_int(val);
      else if (key == "T") c.T = parse_number(val);
      else if (key == "V") c.V = parse_int(val);
      else if (key == "N") c.N = parse_int(val);
      else if (key == "w1") c.w1 = parse_number(val);
      else if (key == "w2") c.w2 = parse_number(val);
      else if (key == "w3") c.w3 = parse_number(val);
      else if (key == "first_stance") {
        if (val == "left") c.first_stance = Side::Left;
        else if (val == "right") c.first_stance = Side::Right;
        else throw std::invalid_argument("first_stance must be left or right");
      } else if (key == "step_length") c.step_length = parse_number(val);
      else if (key == "foot_offset") c.foot_offset = parse_number(val);
      else if (key == "heading") c.heading = parse_number(val);
      else if (key == "apex_height") c.apex_height = parse_number(val);
      else if (key == "apex_nodes") {
        c.apex_nodes.clear();
        for (const auto& p : split_commas(val)) c.apex_nodes.push_back(parse_int(p));
      } else if (key == "max_torso_roll") c.max_torso_roll = parse_number(val);
      else if (key == "max_torso_pitch") c.max_torso_pitch = parse_number(val);
      else if (key == "z_min") c.z_min = parse_number(val);
      else if (key == "z_min_fraction") c.z_min_fraction = parse_number(val);
      else if (key == "symmetric_torsion") c.symmetric_torsion = parse_bool(val);
      else if (key == "periodic") c.periodic = parse_bool(val);
      else if (key == "pin_qa0") c.pin_qa0 = parse_vector(val);
      else if (key == "seed_qa") c.seed_qa = parse_vector(val);
      else if (key == "threads") c.threads = parse_int(val);
      else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("gait config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (c.L < 1) throw std::invalid_argument("gait config: L must be at least 1");
  if (!(c.T > 0.0)) throw std::invalid_argument("gait config: T must be positive");
  if (c.V < 2) throw std::invalid_argument("gait config: V must be at least 2");
  if (c.N < 3) throw std::invalid_argument("gait config: N must be at least 3");
  if (!(c.w1 > 0.0 && c.w2 > 0.0 && c.w3 > 0.0)) throw std::invalid_argument("gait config: weights must be positive");
  if (c.threads < 1) throw std::invalid_argument("gait config: threads must be at least 1");
  return c;
}

GaitConfig load_gait_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("gait config not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_gait_config(ss.str());
}

std::string serialize_gait_config(const GaitConfig& c) {
  std::ostringstream o;
  o << "L = " << c.L << "\nT = " << format_shortest(c.T) << "\nV = " << c.V << "\nN = " << c.N
    << "\nw1 = " << format_shortest(c.w1) << "\nw2 = " << format_shortest(c.w2)
    << "\nw3 = " << format_shortest(c.w3) << "\nfirst_stance = " << to_string(c.first_stance)
    << "\nstep_length = " << format_shortest(c.step_length) << "\nfoot_offset = " << format_shortest(c.foot_offset)
    << "\nheading = " << format_shortest(c.heading) << "\napex_height = " << format_shortest(c.apex_height);
  if (!c.apex_nodes.empty()) {
    o << "\napex_nodes = ";
    for (size_t k = 0; k < c.apex_nodes.size(); ++k) o << (k ? "," : "") << c.apex_nodes[k];
  }
  o << "\nmax_torso_roll = " << format_shortest(c.max_torso_roll)
    << "\nmax_torso_pitch = " << format_shortest(c.max_torso_pitch);
  if (c.z_min) o << "\nz_min = " << format_shortest(*c.z_min);
  o << "\nz_min_fraction = " << format_shortest(c.z_min_fraction)
    << "\nsymmetric_torsion = " << (c.symmetric_torsion ? 1 : 0) << "\nperiodic = " << (c.periodic ? 1 : 0);
  if (c.pin_qa0) o << "\npin_qa0 = " << join(*c.pin_qa0);
  if (c.seed_qa) o << "\nseed_qa = " << join(*c.seed_qa);
  o << "\nthreads = " << c.threads << '\n';
  return o.str();
}

std::vector<StepPlan> plan_steps(const GaitConfig& config) {
  std::vector<StepPlan> plans(config.L);
  const Eigen::Matrix3d R = rotation_from_rpy(0.0, 0.0, config.heading);
  const Eigen::Vector3d fwd = R.col(0), lat = R.col(1);
  const double s = config.step_length;
  for (int l = 0; l < config.L; ++l) {
    StepPlan& p = plans[l];
    p.stance = l % 2 == 0 ? config.first_stance : other_side(config.first_stance);
    const double side_sign = p.stance == Side::Left ? 1.0 : -1.0;
    p.stance_target.rotation = R;
    p.stance_target.translation = fwd * (l * s / 2) + lat * (side_sign * config.foot_offset);
    p.swing_start.rotation = p.swing_end.rotation = R;
    p.swing_start.translation = fwd * ((l - 1) * s / 2) - lat * (side_sign * config.foot_offset);
    p.swing_end.translation = fwd * ((l + 1) * s / 2) - lat * (side_sign * config.foot_offset);
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Row helpers

int contact_row_count(bool symmetric_torsion) { return symmetric_torsion ? 8 : 7; }

ContactRows contact_rows(const ContactPatch& patch, const Eigen::Matrix<double, 6, 1>& w, bool symmetric_torsion) {
  const int k = contact_row_count(symmetric_torsion);
  ContactRows r;
  r.value.resize(k);
  r.jacobian = Eigen::MatrixXd::Zero(k, 6);
  const double fx = w[0], fy = w[1], fz = w[2], mx = w[3], my = w[4], mz = w[5];
  const double mu2 = patch.mu * patch.mu, ha = 0.5 * patch.la, hb = 0.5 * patch.lb;
  r.value[0] = fz;
  r.jacobian(0, 2) = 1.0;
  r.value[1] = fx * fx + fy * fy - mu2 * fz * fz;
  r.jacobian.row(1) << 2 * fx, 2 * fy, -2 * mu2 * fz, 0, 0, 0;
  r.value[2] = mz - patch.gamma * fz;
  r.jacobian.row(2) << 0, 0, -patch.gamma, 0, 0, 1;
  r.value[3] = mx - ha * fz;
  r.jacobian.row(3) << 0, 0, -ha, 1, 0, 0;
  r.value[4] = -mx - ha * fz;
  r.jacobian.row(4) << 0, 0, -ha, -1, 0, 0;
  r.value[5] = my - hb * fz;
  r.jacobian.row(5) << 0, 0, -hb, 0, 1, 0;
  r.value[6] = -my - hb * fz;
  r.jacobian.row(6) << 0, 0, -hb, 0, -1, 0;
  if (symmetric_torsion) {
    r.value[7] = -mz - patch.gamma * fz;
    r.jacobian.row(7) << 0, 0, -patch.gamma, 0, 0, -1;
  }
  return r;
}

Eigen::Vector3d euler_zyx(const Eigen::Matrix3d& R) {
  const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
  return {std::atan2(R(1, 0), R(0, 0)), pitch, std::atan2(R(2, 1), R(2, 2))};
}

Eigen::Matrix3d euler_zyx_rate_matrix(const Eigen::Vector3d& ypr) {
  const double cy = std::cos(ypr[0]), sy = std::sin(ypr[0]), cp = std::cos(ypr[1]), sp = std::sin(ypr[1]);
  Eigen::Matrix3d E;
  E << 0, -sy, cy * cp, 0, cy, sy * cp, 1, 0, -sp;
  return E;
}

Eigen::VectorXd reset_residual(const RobotModel& model, const StanceSpec& next, const Eigen::VectorXd& q_minus,
                               const Eigen::VectorXd& qd_minus, const Eigen::VectorXd& qd_r,
                               const Eigen::VectorXd& lambda_r) {
  const Eigen::MatrixXd J = constraint_jacobian(model, next, q_minus);
  const Eigen::MatrixXd H = mass_matrix(model, q_minus);
  Eigen::VectorXd r(model.n() + J.rows());
  r.head(model.n()) = H * (qd_r - qd_minus) - J.transpose() * lambda_r;
  r.tail(J.rows()) = J * qd_r;
  return r;
}

// ---------------------------------------------------------------------------
// Problem

struct GaitProblem::NodeData {
  ConstrainedIdResult value;
  CidPartials partials;  // filled with derivatives
  Eigen::VectorXd g;
  Eigen::MatrixXd dg;  // rows x 3n_a
  double cost = 0.0;
  Eigen::VectorXd dcost;  // 3n_a
};

GaitProblem::GaitProblem(const RobotModel& model, GaitConfig config, const IkSurrogate& left,
                         const IkSurrogate& right)
    : model_(&model), config_(std::move(config)), left_(&left), right_(&right) {
  const auto& c = config_;
  if (!model.has_contacts() || model.floating_base() < 0)
    throw std::invalid_argument("gait problem: model needs a floating base and both contacts");
  if (!model.fully_actuated_in_stance())
    throw std::invalid_argument("gait problem: model is not fully actuated in single support");
  if (c.periodic && c.L % 2 == 1 && !model.has_symmetry())
    throw std::invalid_argument("gait problem: odd L with periodic closure needs a symmetry permutation");
  if (left.side() != Side::Left || right.side() != Side::Right)
    throw std::invalid_argument("gait problem: surrogates must be for the left and right stance");

  const int n = model.n(), na = model.n_a(), nu = model.n_u();
  layout_ = {c.L, c.V, na, n, nu};
  grid_ = chebyshev_nodes(c.N, c.T);
  plans_ = plan_steps(c);

  if (c.apex_nodes.empty()) {
    double best = kInf;
    for (int i = 0; i < c.N; ++i) best = std::min(best, std::abs(grid_.t[i] - 0.5 * c.T));
    for (int i = 1; i + 1 < c.N; ++i)
      if (std::abs(grid_.t[i] - 0.5 * c.T) <= best + 1e-12 * c.T) apex_.push_back(i);
  } else {
    for (int i : c.apex_nodes) {
      if (i <= 0 || i >= c.N - 1) throw std::invalid_argument("gait problem: apex nodes must be interior");
      apex_.push_back(i);
    }
  }

  seed_ = c.seed_qa ? *c.seed_qa : Eigen::VectorXd::Zero(na);
  if (seed_.size() != na) throw std::invalid_argument("gait problem: seed_qa has the wrong size");
  if (c.pin_qa0 && c.pin_qa0->size() != na) throw std::invalid_argument("gait problem: pin_qa0 has the wrong size");
  {
    const Eigen::VectorXd lo = actuated_part(model, model.lower_limits());
    const Eigen::VectorXd hi = actuated_part(model, model.upper_limits());
    seed_ = seed_.cwiseMax(lo).cwiseMin(hi);
  }
  if (c.z_min) {
    z_min_ = *c.z_min;
  } else {
    const StanceSpec st = stance(0);
    const Eigen::VectorXd qu = solve_ik(model, st, seed_, surrogate_guess(st, seed_));
    z_min_ = c.z_min_fraction * assemble_configuration(model, seed_, qu)[model.floating_base() + 2];
  }

  swap_a_ = Eigen::MatrixXd::Identity(na, na);
  if (wraps_with_swap()) {
    swap_a_.setZero();
    std::vector<int> pos(n, -1);
    for (int k = 0; k < na; ++k) pos[model.actuated()[k]] = k;
    for (int k = 0; k < na; ++k) {
      const int from = model.swap_permutation()[model.actuated()[k]];
      if (pos[from] < 0) throw std::invalid_argument("gait problem: symmetry maps an actuated joint to a passive one");
      swap_a_(k, pos[from]) = model.swap_signs()[model.actuated()[k]];
    }
  }

  // Row plan with bounds.
  const int kc = contact_row_count(c.symmetric_torsion);
  std::vector<double> lo, hi;
  auto push = [&](double a, double b) {
    lo.push_back(a);
    hi.push_back(b);
  };
  auto push_contact = [&] {
    push(0.0, kInf);
    for (int k = 1; k < kc; ++k) push(-kInf, 0.0);
  };
  const Eigen::VectorXd tau = model.torque_limits();
  node_offset_.assign(c.L, std::vector<int>(c.N, 0));
  reset_offset_.assign(c.L, -1);
  for (int l = 0; l < c.L; ++l) {
    const StepPlan& p = plans_[l];
    for (int i = 0; i < c.N; ++i) {
      node_offset_[l][i] = add_block("step" + std::to_string(l + 1) + "/node" + std::to_string(i + 1), 0);
      for (int k = 0; k < n; ++k) push(model.lower_limits()[k], model.upper_limits()[k]);
      for (int k = 0; k < na; ++k) push(-tau[k], tau[k]);
      push_contact();
      push(-c.max_torso_roll, c.max_torso_roll);
      push(-c.max_torso_pitch, c.max_torso_pitch);
      push(z_min_, kInf);
      if (i == 0 || i == c.N - 1) {
        const FramePlacement& f = i == 0 ? p.swing_start : p.swing_end;
        for (int k = 0; k < 3; ++k) push(f.translation[k], f.translation[k]);
        push(c.heading, c.heading);
        if (i == c.N - 1) {
          push(0.0, 0.0);
          push(0.0, 0.0);
        }
      } else {
        const bool apex = std::find(apex_.begin(), apex_.end(), i) != apex_.end();
        push(apex ? c.apex_height : 0.0, kInf);
      }
      blocks_.back().rows = static_cast<int>(lo.size()) - node_offset_[l][i];
      rows_ = static_cast<int>(lo.size());
    }
  }
  for (int l = 0; l < c.L; ++l) {
    if (l == c.L - 1 && !c.periodic) break;
    reset_offset_[l] = add_block("reset" + std::to_string(l + 1), 0);
    const int nc = constraint_count(model, next_stance(l));
    for (int k = 0; k < n + nc + 2 * na; ++k) push(0.0, 0.0);
    push_contact();
    blocks_.back().rows = static_cast<int>(lo.size()) - reset_offset_[l];
    rows_ = static_cast<int>(lo.size());
  }
  if (c.pin_qa0) {
    pin_offset_ = add_block("pin_qa0", na);
    for (int k = 0; k < na; ++k) push((*c.pin_qa0)[k], (*c.pin_qa0)[k]);
  }
  rows_ = static_cast<int>(lo.size());
  lo_ = Eigen::Map<Eigen::VectorXd>(lo.data(), rows_);
  hi_ = Eigen::Map<Eigen::VectorXd>(hi.data(), rows_);

  // Jacobian pattern: each block is dense over the variables it touches.
  auto bezier_cols = [&](int l, std::set<int>& cols) {
    for (int k = 0; k < layout_.bezier_size(); ++k) cols.insert(layout_.bezier_offset(l) + k);
  };
  for (const auto& b : blocks_) {
    std::set<int> cols;
    if (b.name.rfind("step", 0) == 0) {
      const int l = std::stoi(b.name.substr(4)) - 1;
      bezier_cols(l, cols);
    } else if (b.name.rfind("reset", 0) == 0) {
      const int l = std::stoi(b.name.substr(5)) - 1;
      const int nx = (l + 1) % c.L;
      bezier_cols(l, cols);
      for (int k = 0; k < 2 * na; ++k) cols.insert(layout_.bezier_offset(nx) + k);
      for (int k = 0; k < n; ++k) cols.insert(layout_.qdr_offset(l) + k);
      for (int k = 0; k < nu; ++k) cols.insert(layout_.lambda_offset(l) + k);
    } else {
      for (int k = 0; k < na; ++k) cols.insert(layout_.bezier_offset(0) + k);
    }
    for (int r = b.offset; r < b.offset + b.rows; ++r)
      for (int col : cols) pattern_.emplace_back(r, col);
  }
}

int GaitProblem::add_block(const std::string& name, int rows) {
  blocks_.push_back({name, rows_, rows});
  rows_ += rows;
  return blocks_.back().offset;
}

StanceSpec GaitProblem::stance(int l) const {
  const StepPlan& p = plans_[l];
  return StanceSpec::on(p.stance, p.stance_target.translation, config_.heading);
}

StanceSpec GaitProblem::next_stance(int l) const {
  const StepPlan& p = plans_[l];
  return StanceSpec::on(other_side(p.stance), p.swing_end.translation, config_.heading);
}

bool GaitProblem::wraps_with_swap() const { return config_.periodic && config_.L % 2 == 1; }

Eigen::VectorXd GaitProblem::surrogate_guess(const StanceSpec& st, const Eigen::VectorXd& qa) const {
  return (st.side == Side::Left ? left_ : right_)->evaluate(*model_, st, qa);
}

GaitProblem::NodeData GaitProblem::eval_node(const std::vector<StepVariables>& steps, int l, int i,
                                             bool derivatives) const {
  const RobotModel& m = *model_;
  const GaitConfig& c = config_;
  const int n = m.n(), na = m.n_a();
  const StanceSpec st = stance(l);
  const auto s = bezier_eval(steps[l].traj, grid_.t[i]);
  NodeData d;
  const Eigen::VectorXd guess = surrogate_guess(st, s.q);
  if (derivatives) {
    d.partials = cid_partials(m, st, s.q, s.qd, s.qdd, guess);
    d.value = d.partials.value;
  } else {
    d.value = constrained_inverse_dynamics(m, st, s.q, s.qd, s.qdd, guess);
  }
  const auto& v = d.value;
  const auto& P = d.partials;
  const int kc = contact_row_count(c.symmetric_torsion);
  const int fb = m.floating_base();
  const StepPlan& plan = plans_[l];
  const int swing_rows = (i == 0) ? 4 : (i == c.N - 1 ? 6 : 1);
  const int rows = n + na + kc + 3 + swing_rows;
  d.g.resize(rows);
  if (derivatives) d.dg = Eigen::MatrixXd::Zero(rows, 3 * na);

  int r = 0;
  d.g.segment(r, n) = v.q;
  if (derivatives) d.dg.middleRows(r, n) = P.dq;
  r += n;
  d.g.segment(r, na) = v.u;
  if (derivatives) d.dg.middleRows(r, na) = P.du;
  r += na;
  const Eigen::Matrix<double, 6, 1> wrench = v.lambda.tail<6>();
  const ContactRows cr = contact_rows(m.contact(st.side), wrench, c.symmetric_torsion);
  d.g.segment(r, kc) = cr.value;
  if (derivatives) d.dg.middleRows(r, kc) = cr.jacobian * P.dlambda.bottomRows(6);
  r += kc;
  const int torso[3] = {fb + 5, fb + 4, fb + 2};  // roll, pitch, height
  for (int k = 0; k < 3; ++k) {
    d.g[r + k] = v.q[torso[k]];
    if (derivatives) d.dg.row(r + k) = P.dq.row(torso[k]);
  }
  r += 3;

  const Side swing = other_side(plan.stance);
  const FramePlacement sole = sole_placement(m, swing, v.q);
  Eigen::MatrixXd Js;
  if (derivatives) Js = sole_jacobian(m, swing, v.q);
  if (i == 0 || i == c.N - 1) {
    const Eigen::Vector3d ypr = euler_zyx(sole.rotation);
    d.g.segment(r, 3) = sole.translation;
    d.g[r + 3] = ypr[0];
    if (i == c.N - 1) {
      d.g[r + 4] = ypr[1];
      d.g[r + 5] = ypr[2];
    }
    if (derivatives) {
      const Eigen::MatrixXd Jpos = Js.bottomRows(3) * P.dq;
      const Eigen::MatrixXd Jang = euler_zyx_rate_matrix(ypr).inverse() * Js.topRows(3) * P.dq;
      d.dg.middleRows(r, 3) = Jpos;
      d.dg.row(r + 3) = Jang.row(0);
      if (i == c.N - 1) d.dg.middleRows(r + 4, 2) = Jang.bottomRows(2);
    }
  } else {
    d.g[r] = sole.translation.z();
    if (derivatives) d.dg.row(r) = Js.row(5) * P.dq;
  }

  const double un = smooth_norm(v.u);
  d.cost = c.w1 / c.N * un;
  if (derivatives) d.dcost = (c.w1 / c.N / un) * (P.du.transpose() * v.u);
  return d;
}

GaitProblem::Evaluation GaitProblem::evaluate(const Eigen::VectorXd& y, bool derivatives) const {
  const RobotModel& m = *model_;
  const GaitConfig& c = config_;
  const int n = m.n(), na = m.n_a(), L = c.L, N = c.N, V = c.V;
  const double T = c.T;
  if (y.size() != layout_.total()) throw std::invalid_argument("gait problem: decision vector has the wrong size");
  if (!y.allFinite()) throw std::invalid_argument("gait problem: decision vector is not finite");
  const auto steps = unpack(layout_, y, T);

  std::vector<NodeData> nodes(L * N);
  parallel_for(L * N, c.threads, [&](int k) { nodes[k] = eval_node(steps, k / N, k % N, derivatives); });

  Evaluation out;
  out.g.resize(rows_);
  if (derivatives) {
    out.grad = Eigen::VectorXd::Zero(layout_.total());
    out.jac = Eigen::MatrixXd::Zero(rows_, layout_.total());
  }
  std::vector<BernsteinValues> basis(N);
  for (int i = 0; i < N; ++i) basis[i] = bernstein_basis(V, grid_.t[i] / T);

  // Node rows and the input term of the cost, reduced in node order.
  for (int l = 0; l < L; ++l) {
    const int bo = layout_.bezier_offset(l), bs = layout_.bezier_size();
    for (int i = 0; i < N; ++i) {
      const NodeData& d = nodes[l * N + i];
      const int r0 = node_offset_[l][i];
      out.g.segment(r0, d.g.size()) = d.g;
      out.cost += d.cost;
      if (derivatives) {
        out.jac.block(r0, bo, d.g.size(), bs) = chain_to_coeffs(d.dg, basis[i], T, na);
        out.grad.segment(bo, bs) += chain_to_coeffs(d.dcost.transpose(), basis[i], T, na).transpose();
      }
    }
  }

  // Initial velocity and acceleration terms.
  for (int l = 0; l < L; ++l) {
    const Eigen::MatrixXd& B = steps[l].traj.coeffs;
    const double c1 = V / T, c2 = V * (V - 1) / (T * T);
    const Eigen::VectorXd v0 = c1 * (B.row(1) - B.row(0)).transpose();
    const Eigen::VectorXd a0 = c2 * (B.row(2) - 2.0 * B.row(1) + B.row(0)).transpose();
    const double nv = smooth_norm(v0), nacc = smooth_norm(a0);
    out.cost += c.w2 * nv + c.w3 * nacc;
    if (derivatives) {
      const Eigen::VectorXd gv = c.w2 * v0 / nv, ga = c.w3 * a0 / nacc;
      auto seg = [&](int v) { return out.grad.segment(layout_.coeff_index(l, v, 0), na); };
      seg(0) += -c1 * gv + c2 * ga;
      seg(1) += c1 * gv - 2.0 * c2 * ga;
      seg(2) += c2 * ga;
    }
  }

  // Reset and periodic closure rows.
  const BernsteinValues& bend = basis[N - 1];
  for (int l = 0; l < L; ++l) {
    if (reset_offset_[l] < 0) continue;
    const int nx = (l + 1) % L;
    const NodeData& last = nodes[l * N + N - 1];
    const Eigen::VectorXd& qm = last.value.q;
    const Eigen::VectorXd& qdm = last.value.qd;
    const StanceSpec next = next_stance(l);
    const Eigen::VectorXd& qdr = steps[l].qd_r;
    const Eigen::VectorXd& lam = steps[l].lambda_r;
    const Eigen::MatrixXd J = constraint_jacobian(m, next, qm);
    const int nc = static_cast<int>(J.rows());
    const Eigen::MatrixXd H = mass_matrix(m, qm);
    const Eigen::MatrixXd& Bl = steps[l].traj.coeffs;
    const Eigen::MatrixXd& Bn = steps[nx].traj.coeffs;
    const Eigen::VectorXd qdr_a = actuated_part(m, qdr);

    int r = reset_offset_[l];
    out.g.segment(r, n) = H * (qdr - qdm) - J.transpose() * lam;
    out.g.segment(r + n, nc) = J * qdr;
    out.g.segment(r + n + nc, na) = Bn.row(0).transpose() - swap_a_ * Bl.row(V).transpose();
    out.g.segment(r + n + nc + na, na) = (V / T) * (Bn.row(1) - Bn.row(0)).transpose() - swap_a_ * qdr_a;
    const int kc = contact_row_count(c.symmetric_torsion);
    const Eigen::Matrix<double, 6, 1> impulse = lam.tail<6>();
    const ContactRows cr = contact_rows(m.contact(next.side), impulse, c.symmetric_torsion);
    out.g.segment(r + n + nc + 2 * na, kc) = cr.value;

    if (!derivatives) continue;
    const CidPartials& P = last.partials;
    const Eigen::VectorXd w = qdr - qdm;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    const Eigen::MatrixXd dHw = id_partials(m, qm, zero, w).dtau_dq - id_partials(m, qm, zero, zero).dtau_dq;
    Eigen::MatrixXd d1 = -H * P.dqd;  // n x 3n_a
    Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(nc, 3 * na);
    for (int j = 0; j < 3 * na; ++j) {
      if (P.dq.col(j).isZero(0.0)) continue;
      const Eigen::VectorXd dir = P.dq.col(j);
      const JacobianVariation jv = jacobian_variation(m, next, qm, zero, dir, zero);
      d1.col(j) += dHw * dir - jv.dJ.transpose() * lam;
      d2.col(j) = jv.dJ * qdr;
    }
    const int bo = layout_.bezier_offset(l), bs = layout_.bezier_size();
    out.jac.block(r, bo, n, bs) += chain_to_coeffs(d1, bend, T, na);
    out.jac.block(r + n, bo, nc, bs) += chain_to_coeffs(d2, bend, T, na);
    out.jac.block(r, layout_.qdr_offset(l), n, n) += H;
    out.jac.block(r, layout_.lambda_offset(l), n, J.rows()) -= J.transpose();
    out.jac.block(r + n, layout_.qdr_offset(l), nc, n) += J;

    const int r3 = r + n + nc, r4 = r3 + na;
    out.jac.block(r3, layout_.coeff_index(nx, 0, 0), na, na) += Eigen::MatrixXd::Identity(na, na);
    out.jac.block(r3, layout_.coeff_index(l, V, 0), na, na) -= swap_a_;
    out.jac.block(r4, layout_.coeff_index(nx, 1, 0), na, na) += (V / T) * Eigen::MatrixXd::Identity(na, na);
    out.jac.block(r4, layout_.coeff_index(nx, 0, 0), na, na) -= (V / T) * Eigen::MatrixXd::Identity(na, na);
    for (int k = 0; k < na; ++k)
      out.jac.block(r4, layout_.qdr_offset(l) + m.actuated()[k], na, 1) -= swap_a_.col(k);
    out.jac.block(r4 + na, layout_.lambda_offset(l) + J.rows() - 6, kc, 6) += cr.jacobian;
  }

  if (pin_offset_ >= 0) {
    out.g.segment(pin_offset_, na) = steps[0].traj.coeffs.row(0).transpose();
    if (derivatives)
      out.jac.block(pin_offset_, layout_.coeff_index(0, 0, 0), na, na) = Eigen::MatrixXd::Identity(na, na);
  }
  return out;
}

double GaitProblem::constraint_violation(const Eigen::VectorXd& y) const {
  return bound_violation(constraints(y), lo_, hi_);
}

Eigen::VectorXd GaitProblem::initial_guess() const {
  std::vector<StepVariables> steps(config_.L);
  for (auto& s : steps) {
    s.traj.T = config_.T;
    s.traj.coeffs = seed_.transpose().replicate(config_.V + 1, 1);
    s.qd_r = Eigen::VectorXd::Zero(model_->n());
    s.lambda_r = Eigen::VectorXd::Zero(model_->n_u());
  }
  return pack(layout_, steps);
}

ConstrainedIdResult GaitProblem::state_at(const Eigen::VectorXd& y, int l, double t) const {
  const auto steps = unpack(layout_, y, config_.T);
  const auto s = bezier_eval(steps.at(l).traj, std::clamp(t, 0.0, config_.T));
  const StanceSpec st = stance(l);
  return constrained_inverse_dynamics(*model_, st, s.q, s.qd, s.qdd, surrogate_guess(st, s.q));
}

std::vector<std::pair<FramePlacement, FramePlacement>> GaitProblem::swing_endpoints(const Eigen::VectorXd& y) const {
  std::vector<std::pair<FramePlacement, FramePlacement>> out;
  for (int l = 0; l < config_.L; ++l) {
    const Side swing = other_side(plans_[l].stance);
    out.emplace_back(sole_placement(*model_, swing, state_at(y, l, 0.0).q),
                     sole_placement(*model_, swing, state_at(y, l, config_.T).q));
  }
  return out;
}

std::vector<double> GaitProblem::step_length_errors(const Eigen::VectorXd& y) const {
  const Eigen::Vector3d fwd = rotation_from_rpy(0.0, 0.0, config_.heading).col(0);
  std::vector<double> out;
  for (const auto& [start, end] : swing_endpoints(y))
    out.push_back(std::abs(fwd.dot(end.translation - start.translation) - config_.step_length));
  return out;
}

Eigen::VectorXd GaitProblem::periodicity_residual(const Eigen::VectorXd& y) const {
  const int l = config_.L - 1;
  if (reset_offset_[l] < 0) throw std::logic_error("gait problem: no periodic closure configured");
  const int rows = model_->n() + constraint_count(*model_, next_stance(l)) + 2 * model_->n_a();
  return constraints(y).segment(reset_offset_[l], rows);
}

NlpProblem GaitProblem::as_nlp() const {
  NlpProblem p;
  p.num_variables = layout_.total();
  p.num_constraints = rows_;
  p.x_lower = Eigen::VectorXd::Constant(p.num_variables, -kInf);
  p.x_upper = Eigen::VectorXd::Constant(p.num_variables, kInf);
  p.g_lower = lo_;
  p.g_upper = hi_;
  p.jacobian_pattern = pattern_;
  p.evaluate = [this](const Eigen::VectorXd& x, bool derivatives, NlpEvaluation& out) {
    try {
      Evaluation e = evaluate(x, derivatives);
      out.f = e.cost;
      out.g = std::move(e.g);
      if (derivatives) {
        out.grad = std::move(e.grad);
        out.jac = sparse_from_pattern(e.jac, rows_, layout_.total(), pattern_);
      }
      out.failure.clear();
      return true;
    } catch (const IkError& e) {
      out.failure = e.what();
      return false;
    }
  };
  return p;
}

}  // namespace gaitforge
