#pragma once

#include "tvmpc/numerics.hpp"
#include "tvmpc/polytope.hpp"

#include <vector>

namespace tvmpc {

/// Linear plant whose actuator is fed over a token-bucket shaped network link.
struct TokenBucketParams
{
  Matrix a;
  Matrix b;
  Matrix q;
  Matrix r;
  int g = 1;       ///< tokens added per step
  int c = 1;       ///< tokens consumed per transmission
  int bucket = 1;  ///< bucket capacity
  Polytope xp;     ///< plant state constraint set
  Polytope up;     ///< input constraint set

  Eigen::Index n() const { return a.rows(); }
  Eigen::Index m() const { return b.cols(); }
  /// Size of the augmented state (x_p, u_s).
  Eigen::Index nz() const { return n() + m(); }
  /// Period ceil(c / g) of the terminal ingredients.
  int period() const { return (c + g - 1) / g; }
  /// Bucket level from which the terminal region of phase j is the polytopic branch.
  int threshold(int j) const { return j == 0 ? c - g : (j - 1) * g; }

  /// [[A, 0], [0, 0]]
  Matrix a_tilde() const;
  /// [B; I]
  Matrix b_tilde() const;
  /// [[A, B], [0, I]]
  Matrix a_prime() const;
  /// X_p x U_p as a polytope over (x_p, u_s).
  Polytope state_input_box() const;

  /// Throws InvalidModel on inconsistent dimensions or parameters.
  void validate() const;
};

struct TokenBucketState
{
  Vector xp;
  Vector us;
  int beta = 0;

  /// Stacked (x_p, u_s).
  Vector z() const;
};

struct TokenBucketInput
{
  Vector uc;
  int gamma = 0;
};

/// Plant with several actuators of which one is updated per step (others receive zero).
struct ActuatorParams
{
  Matrix a;
  Matrix b;
  Matrix q;
  Matrix r;                        ///< block diagonal with one block per actuator
  std::vector<int> widths;         ///< input dimension of each actuator
  std::vector<int> base_schedule;  ///< periodic actuator sequence followed by the terminal controllers

  Eigen::Index n() const { return a.rows(); }
  Eigen::Index m() const { return b.cols(); }
  int period() const { return static_cast<int>(widths.size()); }
  /// Offset of actuator sigma inside the stacked input.
  Eigen::Index offset(int sigma) const;
  /// Diagonal block R_sigma.
  Matrix r_block(int sigma) const;

  void validate() const;
};

/// Representative of j modulo period in [0, period).
inline int wrap_phase(long j, int period)
{
  const long r = j % period;
  return static_cast<int>(r < 0 ? r + period : r);
}

enum class RegionKind { Polytopic, Ellipsoidal, Unbounded };

/// Periodic terminal costs, controllers and regions.
struct PeriodicTerminalIngredients
{
  int period = 1;
  std::vector<Matrix> p;      ///< terminal cost matrices P_0..P_{M-1}
  Matrix k;                   ///< token bucket: shared gain acting on (x_p, u_s)
  std::vector<Matrix> gains;  ///< actuator scheduling: gains K_0..K_{M-1}
  RegionKind region = RegionKind::Unbounded;
  PeriodicPolytopeFamily family;  ///< when region == Polytopic
  double alpha = 0.0;             ///< when region == Ellipsoidal: Z_j = {z : z' P_j z <= alpha}

  const Matrix& cost_matrix(int j) const { return p.at(static_cast<std::size_t>(j)); }
  /// Terminal cost z' P_j z.
  double cost(int j, const Vector& z) const;
  /// z in Z_j (tolerance on the normalized rows or on the ellipsoid level).
  bool in_region(int j, const Vector& z, double tol = 1e-9) const;
};

/// Successor state. Throws InsufficientTokens when a transmission would drive the bucket level
/// below zero, that is when beta + g < c.
TokenBucketState tb_step(const TokenBucketState& s, const TokenBucketInput& u, const TokenBucketParams& p);

/// x_p' Q x_p + (1 - gamma) u_s' R u_s + gamma u_c' R u_c
double tb_stage_cost(const TokenBucketState& s, const TokenBucketInput& u, const TokenBucketParams& p);

/// Membership in the terminal set of phase j: either the origin with a bucket level below the
/// phase threshold, or (x_p, u_s) in Z_j with a level at or above it.
bool tb_terminal_membership(const TokenBucketState& s, int j, const PeriodicTerminalIngredients& ing,
                            const TokenBucketParams& p, double zero_tol = 1e-9);

/// Terminal controller: transmit K (x_p, u_s) at phase 0 on the polytopic branch, else nothing.
/// Throws NotInTerminalSet when s is outside the terminal set of phase j.
TokenBucketInput tb_terminal_controller(const TokenBucketState& s, int j, const PeriodicTerminalIngredients& ing,
                                        const TokenBucketParams& p, double zero_tol = 1e-9);

/// Storage function ||u_s||_R^2 used in the dissipation check.
double tb_storage(const TokenBucketState& s, const TokenBucketParams& p);

/// m_p x m_p selector of actuator sigma.
Matrix act_omega(int sigma, const std::vector<int>& widths);
/// m_{p,sigma} x m_p extractor of actuator sigma.
Matrix act_pi(int sigma, const std::vector<int>& widths);

/// A x + B Omega_sigma u
Vector act_step(const Vector& x, const Vector& u, int sigma, const ActuatorParams& p);
/// x' Q x + u' Omega_sigma R u
double act_stage_cost(const Vector& x, const Vector& u, int sigma, const ActuatorParams& p);

/// Continuous-time linearized batch reactor (4 states, 2 inputs).
std::pair<Matrix, Matrix> batch_reactor_continuous();
/// Batch reactor discretized with zero-order hold at sampling period h.
std::pair<Matrix, Matrix> batch_reactor(double h = 0.1);
/// Two decoupled batch reactors with each of the four inputs treated as a separate actuator.
std::pair<Matrix, Matrix> two_batch_reactors(double h = 0.1);

}  // namespace tvmpc
