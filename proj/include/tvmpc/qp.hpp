#pragma once

#include "tvmpc/numerics.hpp"

#include <vector>

namespace tvmpc {

/// minimize 1/2 z^T H z + f^T z  s.t.  A_ineq z <= b_ineq,  A_eq z = b_eq.
struct QuadraticProgram
{
  Matrix hessian;
  Vector linear;
  Matrix a_ineq;
  Vector b_ineq;
  Matrix a_eq;
  Vector b_eq;

  QuadraticProgram() = default;
  /// Unconstrained program with Hessian h and linear term f.
  QuadraticProgram(Matrix h, Vector f);

  Eigen::Index num_vars() const { return linear.size(); }
  void validate() const;
  double objective(const Vector& z) const { return 0.5 * z.dot(hessian * z) + linear.dot(z); }
};

enum class QpStatus { Optimal, Infeasible };

struct QpResult
{
  QpStatus status = QpStatus::Infeasible;
  Vector z;
  double value = 0.0;
  /// Multipliers of the inequality rows (>= 0) and of the equality rows.
  Vector ineq_multipliers;
  Vector eq_multipliers;
  int iterations = 0;
};

/// Dense dual active-set solver (Goldfarb-Idnani) with equality constraints eliminated through
/// an SVD null-space basis. Positive semidefinite Hessians are handled by proximal-point
/// outer iterations.
QpResult solve_qp(const QuadraticProgram& p);

/// Infinity norm of the KKT residual (stationarity, primal feasibility, complementarity and
/// dual sign) at a returned solution.
double kkt_residual(const QuadraticProgram& p, const QpResult& r);

}  // namespace tvmpc
