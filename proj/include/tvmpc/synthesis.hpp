#pragma once

#include "tvmpc/models.hpp"
#include "tvmpc/sdp.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace tvmpc {

enum class RegionMode { Polytopic, Ellipsoidal };

/// Which strictly feasible point of the LMIs is returned.
enum class SdpObjective {
  AnalyticCenter,  ///< maximizer of the log-det barrier of all blocks
  MaxMargin,       ///< largest common eigenvalue margin of all blocks
  Trace,           ///< largest margin plus trace_weight * trace(sum X_j)
};

struct SynthesisOptions
{
  RegionMode region_mode = RegionMode::Polytopic;
  /// Unset selects MaxMargin for the token bucket (the analytic center zeroes the held-input
  /// columns of K, which makes the sets Z_j, j >= 1, lower dimensional) and AnalyticCenter for
  /// actuator scheduling.
  std::optional<SdpObjective> objective;
  /// Weight of trace(sum X_j) for SdpObjective::Trace. A solve that loses strict feasibility is
  /// repeated with the plain margin objective.
  double trace_weight = 1e-4;
  SdpOptions sdp;
  /// Verification threshold for the decrease margins.
  double margin_tolerance = 1e-6;
  /// Slack accepted by the region inclusion checks.
  double inclusion_tolerance = 1e-8;
  /// Iteration cap of the invariant set computation.
  int max_invariant_iterations = 200;
  /// Relative accuracy of the ellipsoid level bisection.
  double bisection_tolerance = 1e-4;
};

/// SDP carrying the token bucket terminal ingredient conditions.
struct TbLmiProblem
{
  SemidefiniteProgram sdp;
  std::vector<SdpVar> x;  ///< X_0..X_{M-1}
  SdpVar y;               ///< Y
  int period = 1;
  /// Labels of the blocks in creation order.
  std::vector<std::string> labels;
};

/// Assembles the decrease LMIs for all phases. When `ellipsoid_alpha` is positive the region
/// containment blocks for Z_j = {z' X_j^{-1} z <= alpha} and for the terminal input are added.
/// Appends the decrease LMI of phase j; j is reduced modulo the period.
void add_tb_decrease_lmi(TbLmiProblem& lp, const TokenBucketParams& p, long j);

TbLmiProblem build_tb_lmis(const TokenBucketParams& p, double ellipsoid_alpha = 0.0, double trace_weight = 0.0);

/// Solves the LMIs, recovers P_j = X_j^{-1} and K = Y X_0^{-1}, builds the terminal regions and
/// verifies everything. Throws SdpInfeasible or VerificationFailed.
PeriodicTerminalIngredients synthesize_tb(const TokenBucketParams& p, const SynthesisOptions& opt = {});

/// Margins min_eig(-LHS_j) of the condensed decrease inequalities for j = 0..M-1.
std::vector<double> verify_tb(const std::vector<Matrix>& pj, const Matrix& k, const TokenBucketParams& p);

/// Checks the region chain of polytopic token bucket ingredients (and containment in
/// X_p x U_p); throws VerificationFailed.
void verify_tb_regions(const PeriodicTerminalIngredients& ing, const TokenBucketParams& p, double tol = 1e-8);

struct ActLmiProblem
{
  SemidefiniteProgram sdp;
  std::vector<SdpVar> x;  ///< X_0..X_{M-1}
  std::vector<SdpVar> y;  ///< Y_0..Y_{M-1}
  int period = 1;
  std::vector<std::string> labels;
};

/// Appends the decrease LMI of phase j; j is reduced modulo the period.
void add_act_decrease_lmi(ActLmiProblem& lp, const ActuatorParams& p, long j);

ActLmiProblem build_act_lmis(const ActuatorParams& p, double trace_weight = 0.0);

/// Solves the actuator scheduling LMIs; P_j = X_j^{-1}, K_j = Y_j X_j^{-1}, unbounded regions.
PeriodicTerminalIngredients synthesize_act(const ActuatorParams& p, const SynthesisOptions& opt = {});

/// Margins of (A + B Om K_j)' P_{j+1} (A + B Om K_j) - P_j + Q + K_j' Om R K_j <= 0.
std::vector<double> verify_act(const std::vector<Matrix>& pj, const std::vector<Matrix>& kj, const ActuatorParams& p);

/// Offline synthesis result as stored on disk and loaded by the online controller.
struct Certificate
{
  std::string kind;  ///< "token_bucket" or "actuator"
  PeriodicTerminalIngredients ingredients;
  std::vector<double> margins;
  std::string parameter_hash;
};

/// Stable 64-bit FNV-1a hash (hex) of the model data the ingredients depend on.
std::string parameter_hash(const TokenBucketParams& p);
std::string parameter_hash(const ActuatorParams& p);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, const char* what = "matrix");

void to_json(nlohmann::json& j, const Certificate& c);
void from_json(const nlohmann::json& j, Certificate& c);

}  // namespace tvmpc
