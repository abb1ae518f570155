#pragma once

#include "tvmpc/models.hpp"
#include "tvmpc/mpc.hpp"
#include "tvmpc/synthesis.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace tvmpc {

enum class ExperimentKind { TokenBucket, Actuator };

/// Thresholds of the closed-loop certificate checks.
struct CertificateOptions
{
  /// V*(k+1) - V*(k) + l(k) must not exceed this.
  double descent_tolerance = 1e-6;
  /// l + lambda(x) - lambda(x+) must not fall below minus this.
  double dissipation_tolerance = 1e-9;
  /// Terminal decrease margins must not fall below minus this.
  double margin_tolerance = 1e-6;
  /// Constraint rows may be exceeded by this much.
  double constraint_tolerance = 1e-7;
  /// Strictness margin: steps with dissipation slack below epsilon |x|^2 are counted, not failed.
  double epsilon = 1e-8;
};

/// One experiment as read from a JSON config file.
struct ExperimentConfig
{
  ExperimentKind kind = ExperimentKind::TokenBucket;
  TokenBucketParams tb;
  TokenBucketState tb_start;
  ActuatorParams act;
  Vector act_start;
  MpcConfig mpc;
  SynthesisOptions synthesis;
  CertificateOptions certificates;
  int steps = 60;
  /// Amplitude of a uniform random perturbation of the initial plant state (drawn from --seed).
  double initial_perturbation = 0.0;
  int benchmark_repetitions = 3;
  /// The parsed document, embedded in certificates so that `verify` can rebuild the model.
  nlohmann::json source;

  int period() const { return kind == ExperimentKind::TokenBucket ? tb.period() : act.period(); }
  std::string kind_name() const { return kind == ExperimentKind::TokenBucket ? "token_bucket" : "actuator"; }
};

/// Throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

/// Synthesizes and verifies the terminal ingredients of the experiment.
Certificate synthesize_certificate(const ExperimentConfig& cfg);

/// Certificate plus the config it was synthesized for.
nlohmann::json certificate_document(const Certificate& cert, const ExperimentConfig& cfg);
/// Reads a certificate document. Throws ConfigError on malformed input.
std::pair<Certificate, ExperimentConfig> load_certificate(const std::string& path);
/// Throws ConfigError when the certificate was synthesized for different model data.
void require_matching_certificate(const Certificate& cert, const ExperimentConfig& cfg);

struct TraceRow
{
  long k = 0;
  /// Token bucket: (x_p, u_s, beta). Actuator scheduling: x.
  Vector state;
  /// Transmitted (token bucket) or stacked applied (actuator) input; NaN on the final row.
  Vector input;
  /// gamma or sigma; -1 on the final row.
  int schedule = -1;
  double v_star = 0.0;
  double stage_cost = 0.0;
  double solve_ms = 0.0;
  long nodes = 0;
  double descent_slack = 0.0;
  double dissipation_slack = 0.0;
};

/// Closed-loop record with one row per state x(0..steps).
struct ClosedLoopTrace
{
  ExperimentKind kind = ExperimentKind::TokenBucket;
  Eigen::Index n = 0;  ///< plant states
  Eigen::Index m = 0;  ///< inputs
  std::vector<TraceRow> rows;

  std::vector<std::string> columns() const;
};

/// Initial state of the experiment with the seeded perturbation applied.
TokenBucketState initial_tb_state(const ExperimentConfig& cfg, std::uint64_t seed);
Vector initial_act_state(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs the receding horizon loop for `steps` steps. Throws InfeasibleProblem with the step index.
ClosedLoopTrace run_closed_loop(const ExperimentConfig& cfg, const PeriodicTerminalIngredients& ing, int steps,
                                std::uint64_t seed = 0);

/// Columns: k, state components, input components, schedule, V_star, stage_cost, solve_ms, nodes,
/// descent_slack, dissipation_slack. Numbers use 17 significant digits.
void write_trace_csv(const ClosedLoopTrace& trace, std::ostream& out);
ClosedLoopTrace read_trace_csv(std::istream& in);

struct CertificateReport
{
  bool passed = true;
  std::vector<double> margins;
  double min_margin = 0.0;
  double max_descent_slack = -std::numeric_limits<double>::infinity();
  double min_dissipation_slack = std::numeric_limits<double>::infinity();
  double min_constraint_margin = std::numeric_limits<double>::infinity();
  int descent_violations = 0;
  int dissipation_violations = 0;
  int constraint_violations = 0;
  /// Steps whose dissipation slack is below epsilon |x|^2 (reported only).
  int strictness_shortfalls = 0;
  std::vector<std::string> messages;
};

/// Recomputes the terminal decrease margins from the certificate.
CertificateReport check_certificate(const Certificate& cert, const ExperimentConfig& cfg);

/// Margins plus the per-step slacks, recomputed from the states, inputs and optimal values
/// stored in the trace (the slack columns of the trace are not trusted).
CertificateReport check_certificates(const ClosedLoopTrace& trace, const Certificate& cert,
                                     const ExperimentConfig& cfg);

struct BenchmarkRow
{
  std::string mode;  ///< "time_varying" or "multi_step"
  int horizon = 0;
  double mean_ms = 0.0;
  /// Percent of the reference row.
  double relative = 0.0;
  double mean_nodes = 0.0;
  bool feasible = false;
  std::string error;
};

using BenchmarkTable = std::vector<BenchmarkRow>;

/// Time-varying rows average the first M solves of the closed loop with warm start off;
/// multi-step rows time the solve at k = 0. Each measurement is repeated and the median of the
/// repetitions is reported. The relative column refers to (time_varying, N = 8) when present,
/// otherwise to the first row. Invalid configs yield a row carrying the error message.
BenchmarkTable run_benchmark(const ExperimentConfig& cfg, const PeriodicTerminalIngredients& ing,
                             const std::vector<MpcConfig>& configs, int repetitions, std::uint64_t seed = 0);

/// Time-varying rows for every horizon and multi-step rows for horizons of at least M.
std::vector<MpcConfig> benchmark_configs(const ExperimentConfig& cfg, const std::vector<int>& horizons);

void write_benchmark_csv(const BenchmarkTable& table, std::ostream& out);

/// One two-column CSV (k, value) per trace column except k, written into `dir`. Returns the
/// file names.
std::vector<std::string> write_plot_series(const ClosedLoopTrace& trace, const std::string& dir);

/// Entry point of the command line tool. Exit codes: 0 success, 1 malformed input,
/// 2 infeasible problem, 3 certificate violation.
int cli_main(int argc, char** argv);

}  // namespace tvmpc
