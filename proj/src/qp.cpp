#include "tvmpc/qp.hpp"

#include "tvmpc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tvmpc {

QuadraticProgram::QuadraticProgram(Matrix h, Vector f)
    : hessian(std::move(h)), linear(std::move(f)), a_ineq(0, linear.size()), b_ineq(0),
      a_eq(0, linear.size()), b_eq(0)
{}

void QuadraticProgram::validate() const
{
  const auto n = linear.size();
  if (hessian.rows() != n || hessian.cols() != n) { throw SolverError("QP: Hessian dimension mismatch"); }
  if (a_ineq.rows() > 0 && a_ineq.cols() != n) { throw SolverError("QP: inequality matrix has wrong column count"); }
  if (a_ineq.rows() != b_ineq.size()) { throw SolverError("QP: inequality rows and rhs differ in size"); }
  if (a_eq.rows() > 0 && a_eq.cols() != n) { throw SolverError("QP: equality matrix has wrong column count"); }
  if (a_eq.rows() != b_eq.size()) { throw SolverError("QP: equality rows and rhs differ in size"); }
  if (!hessian.allFinite() || !linear.allFinite() || !a_ineq.allFinite() || !b_ineq.allFinite() ||
      !a_eq.allFinite() || !b_eq.allFinite()) {
    throw SolverError("QP: non-finite data");
  }
}

namespace {

struct GiResult
{
  bool feasible = false;
  Vector x;
  std::vector<Eigen::Index> active;
  Vector multipliers;  // aligned with `active`
  int iterations = 0;
};

void givens(double a, double b, double& c, double& s)
{
  const double h = std::hypot(a, b);
  if (h == 0.0) {
    c = 1.0;
    s = 0.0;
  } else {
    c = a / h;
    s = b / h;
  }
}

// Rotates columns j and k of m so that (d_j, d_k) -> (h, 0).
void rotate_cols(Matrix& m, Eigen::Index j, Eigen::Index k, double c, double s)
{
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double a = m(r, j);
    const double b = m(r, k);
    m(r, j) = c * a + s * b;
    m(r, k) = -s * a + c * b;
  }
}

// minimize 1/2 x^T G x + a^T x  s.t.  C x <= d, with G positive definite (given by its Cholesky).
GiResult goldfarb_idnani(const Eigen::LLT<Matrix>& llt, const Vector& a, const Matrix& cmat, const Vector& dvec)
{
  const Eigen::Index n = a.size();
  const Eigen::Index m = cmat.rows();
  GiResult out;

  // J = L^{-T}, so J J^T = G^{-1}.
  const Matrix l = llt.matrixL();
  Matrix jmat = l.transpose().triangularView<Eigen::Upper>().solve(Matrix::Identity(n, n));
  Matrix rmat = Matrix::Zero(n, n);
  Eigen::Index q = 0;

  Vector x = -llt.solve(a);
  std::vector<Eigen::Index> active;
  std::vector<double> u;
  std::vector<bool> is_active(static_cast<std::size_t>(m), false);

  Vector row_norm(m);
  for (Eigen::Index i = 0; i < m; ++i) { row_norm(i) = std::max(1e-300, cmat.row(i).norm()); }

  const int max_iter = static_cast<int>(50 * (n + m) + 100);
  const double feas_tol = 1e-12;

  auto add_constraint = [&](Vector d) {
    for (Eigen::Index j = n - 1; j > q; --j) {
      double c = 0.0;
      double s = 0.0;
      givens(d(j - 1), d(j), c, s);
      if (s == 0.0) { continue; }
      d(j - 1) = c * d(j - 1) + s * d(j);
      d(j) = 0.0;
      rotate_cols(jmat, j - 1, j, c, s);
    }
    rmat.col(q).head(q + 1) = d.head(q + 1);
    ++q;
  };

  auto drop_constraint = [&](Eigen::Index l_idx) {
    for (Eigen::Index j = l_idx; j < q - 1; ++j) { rmat.col(j).head(q) = rmat.col(j + 1).head(q); }
    rmat.col(q - 1).setZero();
    for (Eigen::Index j = l_idx; j < q - 1; ++j) {
      double c = 0.0;
      double s = 0.0;
      givens(rmat(j, j), rmat(j + 1, j), c, s);
      for (Eigen::Index k = j; k < q - 1; ++k) {
        const double r1 = rmat(j, k);
        const double r2 = rmat(j + 1, k);
        rmat(j, k) = c * r1 + s * r2;
        rmat(j + 1, k) = -s * r1 + c * r2;
      }
      rotate_cols(jmat, j, j + 1, c, s);
    }
    rmat.row(q - 1).setZero();
    --q;
    is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(l_idx)])] = false;
    active.erase(active.begin() + l_idx);
    u.erase(u.begin() + l_idx);
  };

  int iter = 0;
  while (true) {
    // Select the most violated inequality (normalized).
    Eigen::Index p = -1;
    double worst = -feas_tol;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (is_active[static_cast<std::size_t>(i)]) { continue; }
      const double viol = (dvec(i) - cmat.row(i).dot(x)) / (row_norm(i) * (1.0 + std::abs(dvec(i)) / row_norm(i)));
      if (viol < worst) {
        worst = viol;
        p = i;
      }
    }
    if (p < 0) { break; }

    // Constraint in ">=" form: np^T x >= bp.
    const Vector np = -cmat.row(p).transpose();
    const double bp = -dvec(p);
    double up = 0.0;

    while (true) {
      if (++iter > max_iter) { throw SolverError("QP: active-set iteration limit exceeded"); }
      const Vector d = jmat.transpose() * np;
      const Vector z = jmat.rightCols(n - q) * d.tail(n - q);
      Vector r(q);
      if (q > 0) { r = rmat.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q)); }

      double t1 = std::numeric_limits<double>::infinity();
      Eigen::Index l_idx = -1;
      for (Eigen::Index j = 0; j < q; ++j) {
        if (r(j) > 0.0) {
          const double ratio = u[static_cast<std::size_t>(j)] / r(j);
          if (ratio < t1) {
            t1 = ratio;
            l_idx = j;
          }
        }
      }
      double t2 = std::numeric_limits<double>::infinity();
      const double znp = z.dot(np);
      if (z.norm() > 1e-14 * (1.0 + np.norm()) && znp > 0.0) { t2 = (bp - np.dot(x)) / znp; }
      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        out.feasible = false;
        out.iterations = iter;
        return out;
      }
      if (!std::isfinite(t2)) {
        for (Eigen::Index j = 0; j < q; ++j) { u[static_cast<std::size_t>(j)] -= t1 * r(j); }
        up += t1;
        drop_constraint(l_idx);
        continue;
      }
      const double t = std::min(t1, t2);
      x += t * z;
      for (Eigen::Index j = 0; j < q; ++j) { u[static_cast<std::size_t>(j)] -= t * r(j); }
      up += t;
      if (t2 <= t1) {
        add_constraint(d);
        active.push_back(p);
        u.push_back(up);
        is_active[static_cast<std::size_t>(p)] = true;
        break;
      }
      drop_constraint(l_idx);
    }
  }

  out.feasible = true;
  out.x = x;
  out.active = active;
  out.multipliers = Vector::Zero(static_cast<Eigen::Index>(u.size()));
  for (std::size_t i = 0; i < u.size(); ++i) { out.multipliers(static_cast<Eigen::Index>(i)) = std::max(0.0, u[i]); }
  out.iterations = iter;
  return out;
}

// Inequality-only strictly or weakly convex program in the reduced coordinates.
GiResult solve_reduced(const Matrix& h, const Vector& f, const Matrix& c, const Vector& d)
{
  const Eigen::Index n = f.size();
  Eigen::LLT<Matrix> llt(h);
  const double hscale = h.size() > 0 ? h.cwiseAbs().maxCoeff() : 0.0;
  bool pd = llt.info() == Eigen::Success;
  if (pd) {
    const Vector diag = Matrix(llt.matrixL()).diagonal();
    pd = diag.minCoeff() > 1e-10 * std::sqrt(1.0 + hscale);
  }
  if (pd) { return goldfarb_idnani(llt, f, c, d); }

  // Proximal point iterations: minimize f(x) + rho/2 |x - x_k|^2.
  const double rho = 1e-3 * (1.0 + hscale);
  const Matrix hr = h + rho * Matrix::Identity(n, n);
  Eigen::LLT<Matrix> llt_r(hr);
  if (llt_r.info() != Eigen::Success) { throw SolverError("QP: Hessian is not positive semidefinite"); }
  Vector xk = Vector::Zero(n);
  GiResult res;
  int total = 0;
  for (int k = 0; k < 5000; ++k) {
    res = goldfarb_idnani(llt_r, f - rho * xk, c, d);
    total += res.iterations;
    if (!res.feasible) { return res; }
    const double step = (res.x - xk).norm();
    xk = res.x;
    if (step <= 1e-12 * (1.0 + xk.norm())) {
      res.iterations = total;
      return res;
    }
    if (!std::isfinite(xk.norm()) || xk.norm() > 1e12) { throw SolverError("QP: objective appears unbounded below"); }
  }
  throw SolverError("QP: proximal iterations did not converge");
}

}  // namespace

QpResult solve_qp(const QuadraticProgram& p)
{
  p.validate();
  const Eigen::Index n = p.num_vars();
  const Eigen::Index mi = p.a_ineq.rows();
  const Eigen::Index me = p.a_eq.rows();
  if (!is_symmetric(p.hessian, 1e-9)) { throw SolverError("QP: Hessian is not symmetric"); }
  const Matrix h = sym(p.hessian);

  QpResult out;
  out.ineq_multipliers = Vector::Zero(mi);
  out.eq_multipliers = Vector::Zero(me);

  // z = z0 + N w  parametrizes {E z = e}.
  Vector z0 = Vector::Zero(n);
  Matrix nullspace = Matrix::Identity(n, n);
  if (me > 0) {
    Eigen::JacobiSVD<Matrix> svd(p.a_eq, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    const double tol = 1e-11 * std::max<double>(1.0, sv.size() > 0 ? sv(0) : 0.0) * static_cast<double>(std::max(n, me));
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > tol) { ++rank; }
    const Matrix ur = svd.matrixU().leftCols(rank);
    const Matrix vr = svd.matrixV().leftCols(rank);
    z0 = vr * (sv.head(rank).cwiseInverse().asDiagonal() * (ur.transpose() * p.b_eq));
    const double eres = (p.a_eq * z0 - p.b_eq).cwiseAbs().maxCoeff();
    if (eres > 1e-9 * (1.0 + p.b_eq.cwiseAbs().maxCoeff())) {
      out.status = QpStatus::Infeasible;
      return out;
    }
    nullspace = svd.matrixV().rightCols(n - rank);
  }

  const Eigen::Index nw = nullspace.cols();
  Vector w = Vector::Zero(nw);
  Vector mult_reduced = Vector::Zero(mi);
  if (nw == 0) {
    if (mi > 0 && (p.a_ineq * z0 - p.b_ineq).maxCoeff() > 1e-9 * (1.0 + p.b_ineq.cwiseAbs().maxCoeff())) {
      out.status = QpStatus::Infeasible;
      return out;
    }
  } else {
    const Matrix hw = nullspace.transpose() * h * nullspace;
    const Vector fw = nullspace.transpose() * (h * z0 + p.linear);
    const Matrix cw = mi > 0 ? Matrix(p.a_ineq * nullspace) : Matrix(0, nw);
    const Vector dw = mi > 0 ? Vector(p.b_ineq - p.a_ineq * z0) : Vector(0);
    const GiResult gi = solve_reduced(sym(hw), fw, cw, dw);
    out.iterations = gi.iterations;
    if (!gi.feasible) {
      out.status = QpStatus::Infeasible;
      return out;
    }
    w = gi.x;
    for (std::size_t i = 0; i < gi.active.size(); ++i) {
      mult_reduced(gi.active[i]) = gi.multipliers(static_cast<Eigen::Index>(i));
    }
  }

  out.status = QpStatus::Optimal;
  out.z = z0 + nullspace * w;
  out.value = p.objective(out.z);
  out.ineq_multipliers = mult_reduced;
  if (me > 0) {
    // Equality multipliers from stationarity in the least-squares sense.
    Vector g = h * out.z + p.linear;
    if (mi > 0) { g += p.a_ineq.transpose() * out.ineq_multipliers; }
    out.eq_multipliers = -p.a_eq.transpose().completeOrthogonalDecomposition().solve(g);
  }
  return out;
}

double kkt_residual(const QuadraticProgram& p, const QpResult& r)
{
  if (r.status != QpStatus::Optimal) { return std::numeric_limits<double>::infinity(); }
  Vector g = p.hessian * r.z + p.linear;
  double res = 0.0;
  if (p.a_ineq.rows() > 0) {
    g += p.a_ineq.transpose() * r.ineq_multipliers;
    const Vector slack = p.b_ineq - p.a_ineq * r.z;
    res = std::max(res, (-slack).maxCoeff());
    res = std::max(res, (-r.ineq_multipliers).maxCoeff());
    res = std::max(res, slack.cwiseProduct(r.ineq_multipliers).cwiseAbs().maxCoeff());
  }
  if (p.a_eq.rows() > 0) {
    g += p.a_eq.transpose() * r.eq_multipliers;
    res = std::max(res, (p.a_eq * r.z - p.b_eq).cwiseAbs().maxCoeff());
  }
  if (g.size() > 0) { res = std::max(res, g.cwiseAbs().maxCoeff()); }
  return res;
}

}  // namespace tvmpc
