#pragma once

#include <Eigen/Dense>

#include <utility>

namespace tvmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Solver and check tolerances. The defaults are used throughout the library and may be
/// overridden per call through the configuration file.
struct Tolerances
{
  double symmetry = 1e-12;       ///< relative asymmetry accepted by SymmetricMatrix checks
  double lp_feasibility = 1e-8;  ///< primal residual accepted for LP solutions
  double qp_feasibility = 1e-7;  ///< primal residual accepted for QP solutions
  double sdp_block = 1e-7;       ///< minimum eigenvalue accepted for an LMI block
  double sdp_strict = 1e-9;      ///< minimum eigenvalue of a strictly positive variable
  double inclusion = 1e-8;       ///< slack accepted by polytope inclusion checks
  double margin = 1e-6;          ///< slack accepted for decrease-condition margins
  double zero_state = 1e-9;      ///< absolute tolerance for "state is at the origin"
};

/// Throws InvalidMatrix if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what = "matrix");

/// True if max|S - S^T| <= tol * (1 + max|S|).
bool is_symmetric(const Matrix& s, double tol = 1e-12);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Matrix& s);

/// True iff min_eigenvalue(s) >= -tol.
bool is_psd(const Matrix& s, double tol);

/// Symmetric part (S + S^T) / 2.
Matrix sym(const Matrix& s);

/// Zero-order-hold discretization via the augmented matrix exponential
/// exp([[Ac, Bc], [0, 0]] h) = [[A, B], [0, I]].
std::pair<Matrix, Matrix> zoh_discretize(const Matrix& ac, const Matrix& bc, double h);

/// Spectral radius of a square matrix.
double spectral_radius(const Matrix& a);

/// Block diagonal concatenation.
Matrix block_diag(const Matrix& a, const Matrix& b);

/// Inverse of a symmetric positive definite matrix with a condition number check.
/// Throws InvalidModel when the matrix is not positive definite or cond > max_cond.
Matrix spd_inverse(const Matrix& m, double max_cond = 1e12, const char* what = "matrix");

}  // namespace tvmpc
