#pragma once

#include "tvmpc/models.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace tvmpc {

enum class MpcMode { TimeVarying, MultiStep };
enum class ScheduleSearch { Enumerate, BranchAndBound };

struct MpcConfig
{
  int horizon = 1;
  int initial_phase = 0;
  MpcMode mode = MpcMode::TimeVarying;
  bool warm_start = false;
  ScheduleSearch search = ScheduleSearch::BranchAndBound;
  /// Subproblem values within this distance of the optimum count as ties.
  double tie_tolerance = 1e-9;

  /// Throws ConfigError.
  void validate(int period) const;
  /// Index of the terminal set and cost used at time k.
  int terminal_phase(long k, int period) const;
};

/// A fixed integer schedule with the optimum of the convex problem attached to it.
struct SchedulePlan
{
  std::vector<int> schedule;   ///< gamma_i (token bucket) or sigma_i (actuator scheduling)
  std::vector<Vector> inputs;  ///< u_c(i|k); zero where nothing is transmitted
  std::vector<Vector> states;  ///< predicted (x_p, u_s) or x_p, horizon + 1 entries
  std::vector<int> levels;     ///< predicted bucket levels, horizon + 1 entries (token bucket only)
  double value = std::numeric_limits<double>::infinity();
  bool feasible = false;
};

struct MpcSolution
{
  SchedulePlan plan;
  double value = std::numeric_limits<double>::infinity();
  double solve_seconds = 0.0;
  /// Number of convex subproblems solved, including bounding problems.
  long nodes = 0;
  /// Terminal phase used by this solve.
  int terminal_phase = 0;

  bool feasible() const { return plan.feasible; }
};

// ---- token bucket ----------------------------------------------------------------------------

struct BucketTrajectory
{
  std::vector<int> levels;  ///< beta(0..n) up to the first infeasible step
  int infeasible_step = -1;

  bool feasible() const { return infeasible_step < 0; }
};

/// Integer bucket recursion along a transmission sequence; a transmission needs beta + g >= c.
BucketTrajectory bucket_trajectory(int beta0, const std::vector<int>& gamma, const TokenBucketParams& p);

/// Calls `visit` for every bucket-feasible transmission sequence of length n in lexicographic
/// order (0 before 1). Stops early when `visit` returns false.
void for_each_feasible_schedule(int beta0, int n, const TokenBucketParams& p,
                                const std::function<bool(const std::vector<int>&)>& visit);

/// All bucket-feasible transmission sequences of length n in lexicographic order.
std::vector<std::vector<int>> feasible_schedules_tb(int beta0, int n, const TokenBucketParams& p);

/// Optimal inputs for a fixed transmission sequence with the terminal ingredients of
/// phase `phase`. Returns an infeasible plan when the constraints cannot be met.
SchedulePlan solve_fixed_schedule_tb(const TokenBucketState& x, const std::vector<int>& gamma, int phase,
                                     const PeriodicTerminalIngredients& ing, const TokenBucketParams& p);

/// Time-varying MPC step at time k. `previous` (the solution at k - 1) supplies the warm start
/// candidate when cfg.warm_start is set.
MpcSolution solve_tv_mpc_tb(const TokenBucketState& x, long k, const MpcConfig& cfg,
                            const PeriodicTerminalIngredients& ing, const TokenBucketParams& p,
                            const MpcSolution* previous = nullptr);

/// Multi-step MPC solve (terminal set S_0 and cost F_0). Only valid at k = 0 mod M.
MpcSolution solve_multistep_mpc_tb(const TokenBucketState& x, long k, const MpcConfig& cfg,
                                   const PeriodicTerminalIngredients& ing, const TokenBucketParams& p);

/// Shifted plan of the previous solution completed by the terminal controller move.
std::vector<int> shifted_schedule_tb(const MpcSolution& previous, const TokenBucketParams& p);

// ---- actuator scheduling ---------------------------------------------------------------------

/// Exact optimum for a fixed actuator sequence by backward Riccati recursion with terminal
/// cost matrix P_phase.
SchedulePlan solve_fixed_schedule_act(const Vector& x, const std::vector<int>& sigma, int phase,
                                      const PeriodicTerminalIngredients& ing, const ActuatorParams& p);

MpcSolution solve_tv_mpc_act(const Vector& x, long k, const MpcConfig& cfg, const PeriodicTerminalIngredients& ing,
                             const ActuatorParams& p, const MpcSolution* previous = nullptr);

/// Stateful controllers used by the closed loop. The multi-step controller replays its stored
/// plan between solve instants.
class TokenBucketController
{
public:
  TokenBucketController(MpcConfig cfg, PeriodicTerminalIngredients ing, TokenBucketParams p);

  /// Solution of the step at time k. For the multi-step mode between solve instants this is the
  /// stored plan and `solved` is false.
  struct Step
  {
    TokenBucketInput input;
    std::optional<MpcSolution> solution;
    bool solved = false;
  };
  Step step(const TokenBucketState& x, long k);

  const MpcConfig& config() const { return cfg_; }
  const PeriodicTerminalIngredients& ingredients() const { return ing_; }
  const TokenBucketParams& params() const { return p_; }

private:
  MpcConfig cfg_;
  PeriodicTerminalIngredients ing_;
  TokenBucketParams p_;
  std::optional<MpcSolution> last_;
  long last_solve_k_ = 0;
};

}  // namespace tvmpc
