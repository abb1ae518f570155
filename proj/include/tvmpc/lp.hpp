#pragma once

#include "tvmpc/numerics.hpp"

namespace tvmpc {

/// maximize c^T z  s.t.  A_ineq z <= b_ineq,  A_eq z = b_eq,  z free.
struct LinearProgram
{
  Vector objective;
  Matrix a_ineq;
  Vector b_ineq;
  Matrix a_eq;
  Vector b_eq;

  LinearProgram() = default;
  LinearProgram(Vector c, Matrix a, Vector b);

  Eigen::Index num_vars() const { return objective.size(); }
  /// Throws SolverError on inconsistent dimensions.
  void validate() const;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult
{
  LpStatus status = LpStatus::Infeasible;
  Vector z;
  double value = 0.0;
  int pivots = 0;
};

/// Standard form: minimize c^T x  s.t.  A x = b,  x >= 0.
struct StandardFormLp
{
  Vector cost;
  Matrix a;
  Vector b;
};

struct StandardFormResult
{
  LpStatus status = LpStatus::Infeasible;
  Vector x;
  /// Simplex multipliers y = B^{-T} c_B at the optimal basis (zero on redundant rows).
  Vector duals;
  double value = 0.0;
  int pivots = 0;
};

/// Two-phase dense tableau simplex (Dantzig pricing with a Bland fallback on degenerate runs).
StandardFormResult solve_standard_lp(const StandardFormLp& p, int max_pivots = 20000);

/// Solves a LinearProgram through its dual, which has one row per primal variable and stays
/// small for polytopes with many facets.
LpResult solve_lp(const LinearProgram& p);

}  // namespace tvmpc
