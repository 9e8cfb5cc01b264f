#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "CLI11.hpp"
#include "json.hpp"

#include "gaitforge/dynamics.hpp"
#include "gaitforge/io.hpp"
#include "gaitforge/simulate.hpp"
#include "gaitforge/trajectory.hpp"

#ifndef GAITFORGE_VERSION
#define GAITFORGE_VERSION "0.0.0"
#endif

namespace gaitforge::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kSurrogateSamples = 100;
constexpr int kSurrogateOrder = 4;
constexpr int kSamplesPerStep = 41;

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write " + p.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed: " + p.string());
  }
  fs::rename(tmp, p);
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string solution_csv(const Eigen::VectorXd& y) {
  std::string s = "y\n";
  for (Eigen::Index i = 0; i < y.size(); ++i) s += format_csv(y[i]) + "\n";
  return s;
}

Eigen::VectorXd parse_solution_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "y") throw ConsistencyError("solution.csv: expected header 'y'");
  std::vector<double> v;
  while (std::getline(in, line))
    if (!line.empty()) v.push_back(parse_number(line));
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Side parse_side(const std::string& s) {
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw InputError("side must be left or right, got '" + s + "'");
}

// Runs a command body and maps its failure to the exit-code contract.
int guarded(std::ostream& log, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ModelError& e) {
    log << "error: " << e.what() << "\n";
    return kInput;
  } catch (const InputError& e) {
    log << "error: " << e.what() << "\n";
    return kInput;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kInput;
  } catch (const json::exception& e) {
    log << "error: malformed JSON: " << e.what() << "\n";
    return kInput;
  } catch (const ConsistencyError& e) {
    log << "error: " << e.what() << "\n";
    return kConsistency;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kNumeric;
  }
}

CheckLine line(std::string name, double value, double threshold, bool at_least = false) {
  CheckLine l{std::move(name), value, threshold, at_least, false};
  l.pass = at_least ? value >= threshold : value <= threshold;
  return l;
}

Eigen::VectorXd uniform(int n, std::mt19937& rng, double scale) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

Eigen::MatrixXd central_differences(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::MatrixXd J;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Eigen::VectorXd d = (f(xp) - f(xm)) / (2.0 * h);
    if (j == 0) J.resize(d.size(), x.size());
    J.col(j) = d;
  }
  return J;
}

// ∞-norm that is 0 for empty vectors (models without constraints).
template <class Derived>
double inf_norm(const Eigen::MatrixBase<Derived>& v) {
  return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0;
}

// max|A − B| over max(1, max|B|)
double relative(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (B.size() == 0) return 0.0;
  return inf_norm(A - B) / std::max(1.0, inf_norm(B));
}

double worst_row(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < B.rows(); ++r) {
    const double scale = std::max(1.0, B.row(r).cwiseAbs().maxCoeff());
    worst = std::max(worst, (A.row(r) - B.row(r)).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// Surrogate cache

fs::path cache_dir() {
  if (const char* e = std::getenv("GAITFORGE_CACHE_DIR"); e && *e) return e;
  if (const char* x = std::getenv("XDG_CACHE_HOME"); x && *x) return fs::path(x) / "gaitforge";
  if (const char* h = std::getenv("HOME"); h && *h) return fs::path(h) / ".cache" / "gaitforge";
  return {};
}

IkSurrogate cached_surrogate(const RobotModel& model, Side side, int samples, int order, std::ostream& log,
                             bool* hit) {
  if (hit) *hit = false;
  const fs::path dir = cache_dir();
  const std::string key = surrogate_cache_key(model, side, samples, order);
  const fs::path file = dir.empty() ? fs::path() : dir / (key + ".ik");
  if (!file.empty() && fs::exists(file)) {
    IkSurrogate s;
    std::ifstream in(file);
    try {
      if (s.load(in, key)) {
        if (hit) *hit = true;
        return s;
      }
    } catch (const std::runtime_error& e) {
      log << "warning: ignoring unreadable cache " << file.string() << ": " << e.what() << "\n";
    }
  }
  IkSurrogate s = build_ik_surrogate(model, side, samples, order);
  if (!file.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ostringstream text;
    s.save(text, key);
    try {
      write_file(file, text.str());
    } catch (const std::exception& e) {
      log << "warning: surrogate not cached: " << e.what() << "\n";
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// optimize

int cmd_optimize(const OptimizeArgs& a, std::ostream& log) {
  return guarded(log, [&] {
    const RobotModel model = load_model(a.model);
    GaitConfig cfg = a.gait_config ? load_gait_config(*a.gait_config) : GaitConfig{};
    if (a.steps) cfg.L = *a.steps;
    if (a.step_length) cfg.step_length = *a.step_length;
    if (a.threads) cfg.threads = *a.threads;
    // Round trip through the text form: validates the overrides and is what the manifest stores.
    const std::string cfg_text = serialize_gait_config(cfg);
    cfg = parse_gait_config(cfg_text);

    SolverOptions opts;
    if (a.max_iter) opts.max_iter = *a.max_iter;
    if (a.tol) opts.violation_tol = *a.tol;
    if (a.time_limit) opts.wall_clock_limit = *a.time_limit;
    const json solver = {{"max_iter", opts.max_iter},
                         {"violation_tol", opts.violation_tol},
                         {"stationarity_tol", opts.stationarity_tol},
                         {"cost_rtol", opts.cost_rtol},
                         {"inner_tol", opts.inner_tol},
                         {"max_inner_iter", opts.max_inner_iter}};

    const fs::path out(a.out);
    fs::create_directories(out);
    const std::string started = utc_now();
    const std::string model_sha = model_hash(model);
    const std::string run_id = sha256_hex(model_sha + "\n" + cfg_text + "\n" + solver.dump()).substr(0, 16);

    const IkSurrogate left = cached_surrogate(model, Side::Left, kSurrogateSamples, kSurrogateOrder, log);
    const IkSurrogate right = cached_surrogate(model, Side::Right, kSurrogateSamples, kSurrogateOrder, log);
    const GaitProblem problem(model, cfg, left, right);
    log << "optimize: " << problem.num_variables() << " variables, " << problem.num_constraints()
        << " constraints, L = " << cfg.L << ", step length " << cfg.step_length << " m\n";

    const SolveResult r = minimize(problem.as_nlp(), problem.initial_guess(), opts);
    log << "status " << to_string(r.status) << " after " << r.iterations << " iterations: violation "
        << r.violation << ", cost " << r.cost << ", " << r.wall_time << " s\n";
    if (!r.message.empty()) log << "  " << r.message << "\n";

    json outputs = json::object();
    auto emit = [&](const std::string& name, const std::string& text) {
      write_file(out / name, text);
      outputs[name] = sha256_hex(text);
    };
    emit("solution.csv", solution_csv(r.y));
    {
      std::ostringstream csv;
      write_trace_csv(csv, r.trace);
      emit("trace.csv", csv.str());
    }

    json summary = {{"run_id", run_id},
                    {"manifest", "manifest.json"},
                    {"status", to_string(r.status)},
                    {"converged", r.status == SolveStatus::Converged},
                    {"iterations", r.iterations},
                    {"inner_iterations", r.inner_iterations},
                    {"evaluations", r.evaluations},
                    {"wall_time_s", r.wall_time},
                    {"cost", r.cost},
                    {"violation", r.violation},
                    {"violation_tol", opts.violation_tol},
                    {"stationarity", r.stationarity},
                    {"message", r.message}};
    try {
      for (int l = 0; l < cfg.L; ++l) {
        std::vector<TrajectorySample> samples;
        for (int k = 0; k < kSamplesPerStep; ++k) {
          const double t = cfg.T * k / (kSamplesPerStep - 1);
          const ConstrainedIdResult s = problem.state_at(r.y, l, t);
          samples.push_back({l * cfg.T + t, s.q, s.qd, s.qdd, s.u, s.lambda});
        }
        std::ostringstream csv;
        write_trajectory_csv(csv, samples);
        emit("step_" + std::to_string(l + 1) + ".csv", csv.str());
      }
      const std::vector<double> errors = problem.step_length_errors(r.y);
      summary["step_length_errors"] = errors;
      summary["max_step_length_error"] = *std::max_element(errors.begin(), errors.end());
      if (cfg.periodic) summary["periodicity_residual"] = inf_norm(problem.periodicity_residual(r.y));
    } catch (const IkError& e) {
      log << "warning: the final point cannot be reconstructed, trajectories not written: " << e.what() << "\n";
    }
    emit("summary.json", summary.dump(2) + "\n");

    const json manifest = {{"tool", "gaitforge"},
                           {"version", GAITFORGE_VERSION},
                           {"command", "optimize"},
                           {"run_id", run_id},
                           {"model", {{"path", fs::absolute(a.model).lexically_normal().string()}, {"sha256", model_sha}}},
                           {"gait_config", cfg_text},
                           {"gait_config_sha256", sha256_hex(cfg_text)},
                           {"solver", solver},
                           {"surrogate", {{"samples", kSurrogateSamples}, {"order", kSurrogateOrder}}},
                           {"started", started},
                           {"finished", utc_now()},
                           {"outputs", outputs}};
    write_file(out / "manifest.json", manifest.dump(2) + "\n");
    log << "wrote " << out.string() << "/{manifest.json, summary.json, trace.csv, solution.csv, step_*.csv}\n";
    return r.status == SolveStatus::Converged ? kOk : kNumeric;
  });
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const SimulateArgs& a, std::ostream& log) {
  return guarded(log, [&] {
    if (!(a.kp >= 0.0) || !(a.kd >= 0.0)) throw InputError("gains must be non-negative");
    if (a.steps && *a.steps < 1) throw InputError("--steps must be at least 1");
    const fs::path dir(a.gait_dir);
    if (!fs::exists(dir / "manifest.json")) throw InputError("manifest not found in " + dir.string());
    const json manifest = json::parse(read_file(dir / "manifest.json"));
    const RobotModel model = load_model(a.model);
    const std::string sha = model_hash(model);
    const std::string expected = manifest.at("model").at("sha256");
    if (expected != sha)
      throw ConsistencyError("model hash mismatch: the gait was optimized for " + expected.substr(0, 12) +
                             "…, this model is " + sha.substr(0, 12) + "…");
    const std::string solution = read_file(dir / "solution.csv");
    if (sha256_hex(solution) != manifest.at("outputs").at("solution.csv").get<std::string>())
      throw ConsistencyError("solution.csv does not match the manifest");
    const json summary = json::parse(read_file(dir / "summary.json"));
    if (!summary.at("converged").get<bool>() && !a.force)
      throw InputError("gait did not converge (status " + summary.at("status").get<std::string>() +
                       "); pass --force to simulate it anyway");

    const GaitConfig cfg = parse_gait_config(manifest.at("gait_config").get<std::string>());
    const int samples = manifest.at("surrogate").at("samples"), order = manifest.at("surrogate").at("order");
    const IkSurrogate left = cached_surrogate(model, Side::Left, samples, order, log);
    const IkSurrogate right = cached_surrogate(model, Side::Right, samples, order, log);
    const GaitProblem problem(model, cfg, left, right);
    const Eigen::VectorXd y = parse_solution_csv(solution);
    if (y.size() != problem.num_variables())
      throw ConsistencyError("solution has " + std::to_string(y.size()) + " entries, the gait problem " +
                             std::to_string(problem.num_variables()));

    const GaitReference reference(problem, y);
    SimConfig sc;
    sc.kp = a.kp;
    sc.kd = a.kd;
    const SimTrace tr = run_gait(model, reference, sc, a.steps);
    const SimMetrics mt = metrics(tr, cfg.step_length, cfg.heading);

    const fs::path out = a.out ? fs::path(*a.out) : dir;
    fs::create_directories(out);
    std::ostringstream csv;
    write_sim_trace_csv(csv, tr);
    write_file(out / "sim_trace.csv", csv.str());

    json events = json::array();
    for (const SimEvent& e : tr.events)
      events.push_back({{"t", e.t},
                        {"step", e.step},
                        {"kind", e.kind},
                        {"momentum_residual", e.momentum_residual},
                        {"constraint_residual", e.constraint_residual}});
    int saturated = 0;
    for (int s : tr.saturated) saturated += s > 0;
    const json m = {{"run_id", manifest.at("run_id")},
                    {"manifest", fs::absolute(dir / "manifest.json").lexically_normal().string()},
                    {"kp", a.kp},
                    {"kd", a.kd},
                    {"steps_requested", a.steps.value_or(cfg.L)},
                    {"steps_completed", tr.steps_completed},
                    {"fell", tr.fell},
                    {"step_length_errors", mt.step_length_errors},
                    {"optimized_step_length_errors", problem.step_length_errors(y)},
                    {"control_energy", mt.control_energy},
                    {"max_tracking_error", mt.max_tracking_error},
                    {"max_constraint_drift", tr.max_constraint_drift},
                    {"saturated_samples", saturated},
                    {"samples", tr.t.size()},
                    {"events", events}};
    write_file(out / "metrics.json", m.dump(2) + "\n");

    log << "simulate: " << tr.steps_completed << " of " << a.steps.value_or(cfg.L) << " steps"
        << (tr.fell ? ", FELL" : "") << ", control energy " << mt.control_energy << " N·m, max tracking error "
        << mt.max_tracking_error << " rad\n";
    for (size_t k = 0; k < mt.step_length_errors.size(); ++k)
      log << "  step " << k + 1 << " length error " << mt.step_length_errors[k] << " m\n";
    log << "wrote " << (out / "sim_trace.csv").string() << " and metrics.json\n";
    return kOk;
  });
}

// ---------------------------------------------------------------------------
// check

CheckSetup::CheckSetup(RobotModel model, std::optional<GaitConfig> config, std::ostream& log)
    : model_(std::move(model)) {
  const int na = model_.n_a();
  lo_.resize(na);
  hi_.resize(na);
  if (model_.floating_base() >= 0 && model_.has_contacts()) {
    const GaitConfig c = config.value_or(GaitConfig{});
    const Eigen::VectorXd center = c.seed_qa.value_or(Eigen::VectorXd::Zero(na));
    if (center.size() != na) throw std::invalid_argument("seed_qa has the wrong size for this model");
    left_ = std::make_unique<IkSurrogate>(cached_surrogate(model_, Side::Left, kSurrogateSamples, kSurrogateOrder, log));
    right_ = std::make_unique<IkSurrogate>(cached_surrogate(model_, Side::Right, kSurrogateSamples, kSurrogateOrder, log));
    gait_ = std::make_unique<GaitProblem>(model_, c, *left_, *right_);
    stance_ = gait_->stance(0);
    stance_surrogate_ = stance_.side == Side::Left ? left_.get() : right_.get();
    for (int k = 0; k < na; ++k) {
      const int i = model_.actuated()[k];
      lo_[k] = std::max(model_.lower_limits()[i], center[k] - 0.3);
      hi_[k] = std::min(model_.upper_limits()[i], center[k] + 0.3);
    }
  } else {
    left_ = std::make_unique<IkSurrogate>(cached_surrogate(model_, Side::Left, kSurrogateSamples, kSurrogateOrder, log));
    stance_surrogate_ = left_.get();
    for (int k = 0; k < na; ++k) {
      const int i = model_.actuated()[k];
      const double mid = 0.5 * (model_.lower_limits()[i] + model_.upper_limits()[i]);
      const double half = std::min(0.45 * (model_.upper_limits()[i] - model_.lower_limits()[i]), std::numbers::pi);
      lo_[k] = mid - half;
      hi_[k] = mid + half;
    }
  }
}

Eigen::VectorXd CheckSetup::random_qa(std::mt19937& rng) const {
  Eigen::VectorXd qa(lo_.size());
  for (Eigen::Index k = 0; k < qa.size(); ++k) qa[k] = std::uniform_real_distribution<double>(lo_[k], hi_[k])(rng);
  return qa;
}

std::vector<CheckLine> check_theorem1(const CheckSetup& setup, int samples, std::mt19937& rng) {
  const RobotModel& m = setup.model();
  double dyn = 0.0, vel = 0.0, acc = 0.0;
  int failures = 0;
  for (int s = 0; s < samples; ++s) {
    const Eigen::VectorXd qa = setup.random_qa(rng);
    const Eigen::VectorXd qda = uniform(m.n_a(), rng, 2.0), qdda = uniform(m.n_a(), rng, 10.0);
    try {
      const Eigen::VectorXd guess = setup.surrogate().evaluate(m, setup.stance(), qa);
      const ConstrainedIdResult r = constrained_inverse_dynamics(m, setup.stance(), qa, qda, qdda, guess);
      const ConstraintEval ce = constraint_eval(m, setup.stance(), r.q, r.qd);
      const Eigen::VectorXd eq = mass_matrix(m, r.q) * r.qdd + nonlinear_effects(m, r.q, r.qd) -
                                 m.transmission() * r.u - ce.J.transpose() * r.lambda;
      dyn = std::max(dyn, inf_norm(eq));
      vel = std::max(vel, inf_norm(ce.J * r.qd));
      acc = std::max(acc, inf_norm(ce.J * r.qdd + ce.Jdot * r.qd));
    } catch (const IkError&) {
      ++failures;
    }
  }
  return {line("theorem1 dynamics residual", dyn, 1e-8), line("theorem1 J qd residual", vel, 1e-8),
          line("theorem1 J qdd + Jdot qd residual", acc, 1e-8), line("theorem1 reconstruction failures", failures, 0)};
}

std::vector<CheckLine> check_gradients(const CheckSetup& setup, int points, std::mt19937& rng) {
  const RobotModel& m = setup.model();
  const StanceSpec& st = setup.stance();
  const int n = m.n(), na = m.n_a();
  double id = 0.0, jac = 0.0, cid = 0.0, cost = 0.0, cons = 0.0;
  for (int p = 0; p < points; ++p) {
    // Inverse dynamics at an arbitrary state.
    Eigen::VectorXd q(n);
    for (int i = 0; i < n; ++i) {
      const double lo = std::max(m.lower_limits()[i], -1.0), hi = std::min(m.upper_limits()[i], 1.0);
      q[i] = lo < hi ? std::uniform_real_distribution<double>(lo, hi)(rng) : 0.5 * (lo + hi);
    }
    const Eigen::VectorXd qd = uniform(n, rng, 2.0), qdd = uniform(n, rng, 5.0);
    const IdPartials P = id_partials(m, q, qd, qdd);
    id = std::max({id, relative(P.dtau_dq, central_differences([&](const auto& x) { return inverse_dynamics(m, x, qd, qdd); }, q)),
                   relative(P.dtau_dqd, central_differences([&](const auto& x) { return inverse_dynamics(m, q, x, qdd); }, qd)),
                   relative(P.dtau_dqdd, central_differences([&](const auto& x) { return inverse_dynamics(m, q, qd, x); }, qdd))});

    // Constraints and the reconstruction at a feasible state.
    const Eigen::VectorXd qa = setup.random_qa(rng);
    const Eigen::VectorXd qda = uniform(na, rng, 2.0), qdda = uniform(na, rng, 10.0);
    const CidPartials C = cid_partials(m, st, qa, qda, qdda, setup.surrogate().evaluate(m, st, qa));
    if (constraint_count(m, st) > 0)
      jac = std::max(jac, relative(constraint_jacobian(m, st, C.value.q),
                                   central_differences([&](const auto& x) { return constraint_residual(m, st, x); },
                                                       C.value.q)));
    const Eigen::VectorXd qu0 = unactuated_part(m, C.value.q);
    Eigen::VectorXd x(3 * na);
    x << qa, qda, qdda;
    const Eigen::MatrixXd fd = central_differences(
        [&](const Eigen::VectorXd& v) {
          const ConstrainedIdResult r =
              constrained_inverse_dynamics(m, st, v.head(na), v.segment(na, na), v.tail(na), qu0);
          Eigen::VectorXd out(3 * n + r.lambda.size() + na);
          out << r.q, r.qd, r.qdd, r.lambda, r.u;
          return out;
        },
        x);
    const int nc = static_cast<int>(C.value.lambda.size());
    cid = std::max({cid, relative(C.dq, fd.middleRows(0, n)), relative(C.dqd, fd.middleRows(n, n)),
                    relative(C.dqdd, fd.middleRows(2 * n, n)), relative(C.dlambda, fd.middleRows(3 * n, nc)),
                    relative(C.du, fd.middleRows(3 * n + nc, na))});

    // Gait cost and constraints around a perturbed standing seed.
    if (const GaitProblem* g = setup.gait()) {
      const DecisionLayout& lay = g->layout();
      Eigen::VectorXd y = g->initial_guess();
      for (int l = 0; l < lay.L; ++l) {
        y.segment(lay.bezier_offset(l), lay.bezier_size()) += uniform(lay.bezier_size(), rng, 0.05);
        y.segment(lay.qdr_offset(l), lay.n) = uniform(lay.n, rng, 0.2);
        y.segment(lay.lambda_offset(l), lay.n_u) = uniform(lay.n_u, rng, 2.0);
      }
      const GaitProblem::Evaluation e = g->evaluate(y, true);
      const Eigen::MatrixXd fg = central_differences(
          [&](const Eigen::VectorXd& v) {
            const GaitProblem::Evaluation ev = g->evaluate(v, false);
            Eigen::VectorXd out(ev.g.size() + 1);
            out << ev.cost, ev.g;
            return out;
          },
          y);
      cost = std::max(cost, worst_row(e.grad.transpose(), fg.topRows(1)));
      cons = std::max(cons, worst_row(e.jac, fg.bottomRows(fg.rows() - 1)));
    }
  }
  std::vector<CheckLine> lines = {line("gradient inverse dynamics", id, 1e-5),
                                  line("gradient constraint jacobian", jac, 1e-5),
                                  line("gradient constrained inverse dynamics", cid, 1e-5)};
  if (setup.gait()) {
    lines.push_back(line("gradient gait cost", cost, 1e-5));
    lines.push_back(line("gradient gait constraints", cons, 1e-5));
  }
  return lines;
}

std::vector<CheckLine> check_ik(const CheckSetup& setup, int samples, int probe_poses, int probe_guesses,
                                std::mt19937& rng) {
  const RobotModel& m = setup.model();
  const StanceSpec& st = setup.stance();
  int fast = 0, worst = 0;
  for (int s = 0; s < samples; ++s) {
    const Eigen::VectorXd qa = setup.random_qa(rng);
    try {
      const IkResult r = solve_ik_detailed(m, st, qa, setup.surrogate().evaluate(m, st, qa));
      worst = std::max(worst, r.iterations);
      fast += r.iterations <= 10;
    } catch (const IkError&) {
      worst = std::max(worst, IkOptions{}.max_iterations);
    }
  }
  // Newton from random starts either fails or lands on the same root.
  int ambiguous = 0, converged = 0;
  for (int s = 0; s < probe_poses; ++s) {
    const Eigen::VectorXd qa = setup.random_qa(rng);
    std::vector<Eigen::VectorXd> roots;
    for (int g = 0; g < probe_guesses; ++g) {
      Eigen::VectorXd guess(m.n_u());
      for (int k = 0; k < m.n_u(); ++k) {
        const int i = m.unactuated()[k];
        const double lo = std::max(m.lower_limits()[i], -std::numbers::pi);
        const double hi = std::min(m.upper_limits()[i], std::numbers::pi);
        guess[k] = std::uniform_real_distribution<double>(lo, hi)(rng);
      }
      try {
        roots.push_back(solve_ik(m, st, qa, guess));
      } catch (const IkError&) {
      }
    }
    converged += static_cast<int>(roots.size());
    for (size_t k = 1; k < roots.size(); ++k) {
      if (inf_norm(roots[k] - roots[0]) > 1e-6) {
        ++ambiguous;
        break;
      }
    }
  }
  const double share = samples > 0 ? static_cast<double>(fast) / samples : 1.0;
  return {line("ik warm starts within 10 iterations (share)", share, 0.99, true),
          line("ik worst warm-start iterations", worst, IkOptions{}.max_iterations),
          line("ik poses with distinct roots", ambiguous, 0),
          line("ik probe starts that converged", converged, probe_poses > 0 ? 1 : 0, true)};
}

void print_check_lines(std::ostream& out, const std::vector<CheckLine>& lines) {
  for (const CheckLine& l : lines)
    out << (l.pass ? "PASS " : "FAIL ") << l.name << " = " << format_shortest(l.value) << " ("
        << (l.at_least ? ">= " : "<= ") << format_shortest(l.threshold) << ")\n";
}

int cmd_check(const CheckArgs& a, std::ostream& log) {
  return guarded(log, [&] {
    if (a.mode != "all" && a.mode != "gradients" && a.mode != "theorem1" && a.mode != "ik")
      throw InputError("mode must be gradients, theorem1, ik or all");
    std::optional<GaitConfig> cfg;
    if (a.gait_config) cfg = load_gait_config(*a.gait_config);
    const CheckSetup setup(load_model(a.model), cfg, log);
    std::mt19937 rng(a.seed);
    std::vector<CheckLine> lines;
    auto add = [&](std::vector<CheckLine> more) { lines.insert(lines.end(), more.begin(), more.end()); };
    if (a.mode == "all" || a.mode == "theorem1") add(check_theorem1(setup, 200, rng));
    if (a.mode == "all" || a.mode == "gradients") add(check_gradients(setup, 5, rng));
    if (a.mode == "all" || a.mode == "ik") add(check_ik(setup, 1000, 100, 20, rng));
    print_check_lines(log, lines);
    const bool ok = std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.pass; });
    return ok ? kOk : kNumeric;
  });
}

// ---------------------------------------------------------------------------
// fit-ik

int cmd_fit_ik(const FitIkArgs& a, std::ostream& log) {
  return guarded(log, [&] {
    const RobotModel model = load_model(a.model);
    const Side side = parse_side(a.side);
    if (a.samples < 2) throw InputError("grid too small: need at least 2 samples per axis");
    const std::string key = surrogate_cache_key(model, side, a.samples, a.order);
    fs::path file;
    if (a.cache) {
      file = *a.cache;
    } else {
      const fs::path dir = cache_dir();
      if (dir.empty()) throw InputError("no cache location: set GAITFORGE_CACHE_DIR or pass --cache");
      file = dir / (key + ".ik");
    }
    if (a.reuse && fs::exists(file)) {
      IkSurrogate s;
      std::ifstream in(file);
      bool ok = false;
      try {
        ok = s.load(in, key);
      } catch (const std::runtime_error&) {
      }
      if (ok) {
        log << "cache hit: " << file.string() << " (max fit residual " << s.max_fit_residual() << ")\n";
        return kOk;
      }
      log << "cache at " << file.string() << " is stale or unreadable, refitting\n";
    }
    const IkSurrogate s = build_ik_surrogate(model, side, a.samples, a.order);
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ostringstream text;
    s.save(text, key);
    write_file(file, text.str());
    const json report = {{"key", key},
                         {"model_sha256", model_hash(model)},
                         {"side", to_string(side)},
                         {"samples_per_axis", a.samples},
                         {"order", a.order},
                         {"series", s.series().size()},
                         {"max_fit_residual", s.max_fit_residual()},
                         {"cache", fs::absolute(file).lexically_normal().string()}};
    write_file(file.string() + ".json", report.dump(2) + "\n");
    log << "fitted " << s.series().size() << " series, max fit residual " << s.max_fit_residual() << " rad\n"
        << "wrote " << file.string() << "\n";
    return kOk;
  });
}

// ---------------------------------------------------------------------------
// argument parsing

int run(int argc, char** argv) {
  CLI::App app{"Periodic gait optimization for floating-base robots with closed kinematic loops", "gaitforge"};
  app.set_version_flag("--version", GAITFORGE_VERSION);
  app.require_subcommand(1);

  OptimizeArgs opt;
  CLI::App* optimize = app.add_subcommand("optimize", "Optimize an L-step periodic gait");
  optimize->add_option("--model", opt.model, "Robot model file")->required();
  optimize->add_option("--gait-config", opt.gait_config, "Gait config file (key = value)");
  optimize->add_option("--out", opt.out, "Output directory")->required();
  optimize->add_option("--max-iter", opt.max_iter, "Outer iteration cap");
  optimize->add_option("--tol", opt.tol, "Constraint violation tolerance");
  optimize->add_option("--steps", opt.steps, "Number of steps L");
  optimize->add_option("--step-length", opt.step_length, "Desired step length [m]");
  optimize->add_option("--threads", opt.threads, "Workers for node evaluation");
  optimize->add_option("--time-limit", opt.time_limit, "Wall-clock limit [s]");

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Track an optimized gait in forward simulation");
  simulate->add_option("--model", sim.model, "Robot model file")->required();
  simulate->add_option("--gait", sim.gait_dir, "Output directory of optimize")->required();
  simulate->add_option("--out", sim.out, "Output directory (default: the gait directory)");
  simulate->add_option("--steps", sim.steps, "Steps to simulate (default: L)");
  simulate->add_option("--kp", sim.kp, "Position gain")->capture_default_str();
  simulate->add_option("--kd", sim.kd, "Velocity gain")->capture_default_str();
  simulate->add_flag("--force", sim.force, "Simulate a gait that did not converge");

  CheckArgs chk;
  CLI::App* check = app.add_subcommand("check", "Run the derivative and reconstruction checks on a model");
  check->add_option("--model", chk.model, "Robot model file")->required();
  check->add_option("--mode", chk.mode, "gradients, theorem1, ik or all")->capture_default_str();
  check->add_option("--gait-config", chk.gait_config, "Gait config (seed pose for legged models)");
  check->add_option("--seed", chk.seed, "Random seed")->capture_default_str();

  FitIkArgs fit;
  CLI::App* fit_ik = app.add_subcommand("fit-ik", "Fit and cache the IK warm-start surrogate");
  fit_ik->add_option("--model", fit.model, "Robot model file")->required();
  fit_ik->add_option("--side", fit.side, "Stance side: left or right")->capture_default_str();
  fit_ik->add_option("--samples", fit.samples, "Grid samples per actuated axis")->capture_default_str();
  fit_ik->add_option("--order", fit.order, "Trigonometric series order")->capture_default_str();
  fit_ik->add_option("--cache", fit.cache, "Cache file (default: under GAITFORGE_CACHE_DIR)");
  fit_ik->add_flag("--reuse", fit.reuse, "Keep a valid cache instead of refitting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }
  if (*optimize) return cmd_optimize(opt, std::cerr);
  if (*simulate) return cmd_simulate(sim, std::cerr);
  if (*check) return cmd_check(chk, std::cout);
  return cmd_fit_ik(fit, std::cerr);
}

}  // namespace gaitforge::cli
