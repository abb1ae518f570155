#include "tvmpc/numerics.hpp"

#include "tvmpc/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <limits>
#include <string>

namespace tvmpc {

void require_finite(const Matrix& m, const char* what)
{
  if (!m.allFinite()) { throw InvalidMatrix(std::string(what) + " has non-finite entries"); }
}

bool is_symmetric(const Matrix& s, double tol)
{
  if (s.rows() != s.cols()) { return false; }
  if (s.size() == 0) { return true; }
  const double scale = s.cwiseAbs().maxCoeff();
  return (s - s.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + scale);
}

double min_eigenvalue(const Matrix& s)
{
  require_finite(s, "symmetric matrix");
  if (s.rows() != s.cols()) { throw InvalidMatrix("min_eigenvalue: matrix is not square"); }
  if (s.size() == 0) { return std::numeric_limits<double>::infinity(); }
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(s), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) { throw InvalidMatrix("min_eigenvalue: eigensolver failed"); }
  return es.eigenvalues()(0);
}

bool is_psd(const Matrix& s, double tol) { return min_eigenvalue(s) >= -tol; }

Matrix sym(const Matrix& s) { return 0.5 * (s + s.transpose()); }

std::pair<Matrix, Matrix> zoh_discretize(const Matrix& ac, const Matrix& bc, double h)
{
  if (ac.rows() != ac.cols()) { throw InvalidModel("zoh_discretize: Ac must be square"); }
  if (bc.rows() != ac.rows()) { throw InvalidModel("zoh_discretize: Bc rows must match Ac"); }
  if (!(h > 0.0)) { throw InvalidModel("zoh_discretize: sampling period must be positive"); }
  require_finite(ac, "Ac");
  require_finite(bc, "Bc");

  const auto n = ac.rows();
  const auto m = bc.cols();
  Matrix aug = Matrix::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = ac * h;
  aug.topRightCorner(n, m) = bc * h;
  const Matrix e = aug.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

double spectral_radius(const Matrix& a)
{
  if (a.size() == 0) { return 0.0; }
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix block_diag(const Matrix& a, const Matrix& b)
{
  Matrix out = Matrix::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

Matrix spd_inverse(const Matrix& m, double max_cond, const char* what)
{
  require_finite(m, what);
  if (!is_symmetric(m, 1e-9)) { throw InvalidModel(std::string(what) + " is not symmetric"); }
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(m));
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) { throw InvalidModel(std::string(what) + " is not positive definite"); }
  if (hi / lo > max_cond) {
    throw InvalidModel(std::string(what) + " is ill-conditioned (cond > " + std::to_string(max_cond) + ")");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace tvmpc
