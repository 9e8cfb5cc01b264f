#pragma once

// Subcommands of the gaitforge tool. The numeric checks are exposed so the
// acceptance runner can share them.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaitforge/closure.hpp"
#include "gaitforge/gaitopt.hpp"
#include "gaitforge/model.hpp"
#include "gaitforge/solver.hpp"

namespace gaitforge::cli {

// Stable exit codes.
enum Exit : int { kOk = 0, kNumeric = 1, kInput = 2, kConsistency = 3 };

/// $GAITFORGE_CACHE_DIR, else $XDG_CACHE_HOME/gaitforge, else ~/.cache/gaitforge.
/// Empty when none of them is set.
std::filesystem::path cache_dir();

/// Surrogate from the cache, fitted and stored on a miss.
IkSurrogate cached_surrogate(const RobotModel& model, Side side, int samples, int order, std::ostream& log,
                             bool* hit = nullptr);

struct OptimizeArgs {
  std::string model;
  std::optional<std::string> gait_config;
  std::string out;
  std::optional<int> max_iter;
  std::optional<double> tol;
  std::optional<int> steps;
  std::optional<double> step_length;
  std::optional<int> threads;
  std::optional<double> time_limit;
};

struct SimulateArgs {
  std::string model;
  std::string gait_dir;
  std::optional<std::string> out;  // defaults to gait_dir
  std::optional<int> steps;
  double kp = 80.0;
  double kd = 5.0;
  bool force = false;
};

struct CheckArgs {
  std::string model;
  std::string mode = "all";  // gradients, theorem1, ik or all
  std::optional<std::string> gait_config;
  unsigned seed = 1;
};

struct FitIkArgs {
  std::string model;
  std::string side = "left";
  int samples = 100;
  int order = 4;
  std::optional<std::string> cache;
  bool reuse = false;
};

int cmd_optimize(const OptimizeArgs& args, std::ostream& log);
int cmd_simulate(const SimulateArgs& args, std::ostream& log);
int cmd_check(const CheckArgs& args, std::ostream& log);
int cmd_fit_ik(const FitIkArgs& args, std::ostream& log);

/// Parses argv and dispatches; returns the exit code.
int run(int argc, char** argv);

// ---------------------------------------------------------------------------
// Numeric checks

struct CheckLine {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool at_least = false;  // pass when value >= threshold instead of <=
  bool pass = false;
};

/// Model plus everything needed to draw feasible states: a stance (the
/// first gait stance for legged models), a sampling box in actuated space and
/// the matching surrogate.
class CheckSetup {
 public:
  CheckSetup(RobotModel model, std::optional<GaitConfig> config, std::ostream& log);
  CheckSetup(const CheckSetup&) = delete;
  CheckSetup& operator=(const CheckSetup&) = delete;

  const RobotModel& model() const { return model_; }
  const StanceSpec& stance() const { return stance_; }
  const IkSurrogate& surrogate() const { return *stance_surrogate_; }
  /// Null for models without a floating base and two contacts.
  const GaitProblem* gait() const { return gait_.get(); }

  Eigen::VectorXd random_qa(std::mt19937& rng) const;

 private:
  RobotModel model_;
  StanceSpec stance_;
  Eigen::VectorXd lo_, hi_;
  std::unique_ptr<IkSurrogate> left_, right_;
  const IkSurrogate* stance_surrogate_ = nullptr;
  std::unique_ptr<GaitProblem> gait_;
};

/// Dynamics and velocity/acceleration constraint residuals of the
/// reconstruction over `samples` random states (threshold 1e-8).
std::vector<CheckLine> check_theorem1(const CheckSetup& setup, int samples, std::mt19937& rng);

/// Analytic partials against central differences at `points` random points
/// (threshold 1e-5 relative).
std::vector<CheckLine> check_gradients(const CheckSetup& setup, int points, std::mt19937& rng);

/// Surrogate warm-start iteration counts over `samples` random actuated poses
/// and the multiple-root probe (`probe_poses` × `probe_guesses` random starts).
std::vector<CheckLine> check_ik(const CheckSetup& setup, int samples, int probe_poses, int probe_guesses,
                                std::mt19937& rng);

void print_check_lines(std::ostream& out, const std::vector<CheckLine>& lines);

}  // namespace gaitforge::cli
