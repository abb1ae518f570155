#include "tvmpc/lp.hpp"

#include "tvmpc/errors.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace tvmpc {

LinearProgram::LinearProgram(Vector c, Matrix a, Vector b)
    : objective(std::move(c)), a_ineq(std::move(a)), b_ineq(std::move(b)),
      a_eq(0, objective.size()), b_eq(0)
{}

void LinearProgram::validate() const
{
  const auto n = objective.size();
  if (a_ineq.rows() > 0 && a_ineq.cols() != n) { throw SolverError("LP: inequality matrix has wrong column count"); }
  if (a_ineq.rows() != b_ineq.size()) { throw SolverError("LP: inequality rows and rhs differ in size"); }
  if (a_eq.rows() > 0 && a_eq.cols() != n) { throw SolverError("LP: equality matrix has wrong column count"); }
  if (a_eq.rows() != b_eq.size()) { throw SolverError("LP: equality rows and rhs differ in size"); }
  if (!objective.allFinite() || !a_ineq.allFinite() || !b_ineq.allFinite() || !a_eq.allFinite() ||
      !b_eq.allFinite()) {
    throw SolverError("LP: non-finite data");
  }
}

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-10;

class Tableau
{
public:
  // Rows 0..m-1 are constraints, row m is the objective (reduced costs); last column is the rhs.
  Tableau(Eigen::Index m, Eigen::Index ncols) : t_(Matrix::Zero(m + 1, ncols + 1)), basis_(m, -1) {}

  Matrix& data() { return t_; }
  std::vector<Eigen::Index>& basis() { return basis_; }
  Eigen::Index rows() const { return t_.rows() - 1; }
  Eigen::Index cols() const { return t_.cols() - 1; }
  double rhs(Eigen::Index i) const { return t_(i, t_.cols() - 1); }

  void pivot(Eigen::Index r, Eigen::Index c)
  {
    t_.row(r) /= t_(r, c);
    for (Eigen::Index i = 0; i < t_.rows(); ++i) {
      if (i == r) { continue; }
      const double f = t_(i, c);
      if (f != 0.0) { t_.row(i) -= f * t_.row(r); }
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  /// Runs primal simplex over columns [0, active_cols). Returns false when unbounded.
  bool optimize(Eigen::Index active_cols, int& pivots, int max_pivots)
  {
    const Eigen::Index obj = rows();
    int degenerate_run = 0;
    while (true) {
      const bool bland = degenerate_run > 50;
      Eigen::Index enter = -1;
      double best = -kCostTol;
      for (Eigen::Index j = 0; j < active_cols; ++j) {
        const double rc = t_(obj, j);
        if (rc < best) {
          enter = j;
          if (bland) { break; }
          best = rc;
        }
      }
      if (enter < 0) { return true; }

      Eigen::Index leave = -1;
      double ratio = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < obj; ++i) {
        const double a = t_(i, enter);
        if (a > kPivotTol) {
          const double r = rhs(i) / a;
          if (r < ratio - 1e-12 ||
              (r <= ratio + 1e-12 && leave >= 0 && basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
            ratio = std::min(ratio, r);
            leave = i;
          }
        }
      }
      if (leave < 0) { return false; }
      degenerate_run = ratio <= 1e-12 ? degenerate_run + 1 : 0;
      pivot(leave, enter);
      if (++pivots > max_pivots) { throw SolverError("simplex: pivot limit exceeded"); }
    }
  }

private:
  Matrix t_;
  std::vector<Eigen::Index> basis_;
};

}  // namespace

StandardFormResult solve_standard_lp(const StandardFormLp& p, int max_pivots)
{
  const Eigen::Index m = p.a.rows();
  const Eigen::Index n = p.a.cols();
  if (p.cost.size() != n || p.b.size() != m) { throw SolverError("standard LP: inconsistent dimensions"); }

  StandardFormResult res;
  if (m == 0) {
    // Only bounds x >= 0: optimal at 0 unless some cost is negative.
    if ((p.cost.array() < 0.0).any()) {
      res.status = LpStatus::Unbounded;
    } else {
      res.status = LpStatus::Optimal;
      res.x = Vector::Zero(n);
      res.duals = Vector::Zero(0);
    }
    return res;
  }

  // Phase 1 with one artificial per row.
  Tableau tab(m, n + m);
  Matrix& t = tab.data();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = p.b(i) < 0.0 ? -1.0 : 1.0;
    t.row(i).head(n) = s * p.a.row(i);
    t(i, n + i) = 1.0;
    t(i, n + m) = s * p.b(i);
    tab.basis()[static_cast<std::size_t>(i)] = n + i;
  }
  for (Eigen::Index i = 0; i < m; ++i) { t.row(m) -= t.row(i); }
  t.row(m).segment(n, m).setZero();

  int pivots = 0;
  tab.optimize(n + m, pivots, max_pivots);
  const double infeas = -t(m, n + m);
  const double scale = 1.0 + p.b.cwiseAbs().maxCoeff();
  if (infeas > 1e-9 * scale) {
    res.status = LpStatus::Infeasible;
    res.pivots = pivots;
    return res;
  }

  // Drive remaining artificials out of the basis; rows where that is impossible are redundant.
  std::vector<bool> redundant(static_cast<std::size_t>(m), false);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (tab.basis()[static_cast<std::size_t>(i)] < n) { continue; }
    Eigen::Index col = -1;
    double best = 1e-9;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(t(i, j)) > best) {
        best = std::abs(t(i, j));
        col = j;
      }
    }
    if (col >= 0) {
      tab.pivot(i, col);
      ++pivots;
    } else {
      redundant[static_cast<std::size_t>(i)] = true;
    }
  }

  // Phase 2: reduced costs of the original objective; artificials are excluded from pricing.
  t.row(m).setZero();
  t.row(m).head(n) = p.cost.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bcol = tab.basis()[static_cast<std::size_t>(i)];
    if (bcol < n) { t.row(m) -= p.cost(bcol) * t.row(i); }
  }
  if (!tab.optimize(n, pivots, max_pivots)) {
    res.status = LpStatus::Unbounded;
    res.pivots = pivots;
    return res;
  }

  // Recover x and the multipliers from the basis with the original (unflipped) data.
  std::vector<Eigen::Index> rows_kept;
  std::vector<Eigen::Index> cols_basic;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (redundant[static_cast<std::size_t>(i)]) { continue; }
    rows_kept.push_back(i);
    cols_basic.push_back(tab.basis()[static_cast<std::size_t>(i)]);
  }
  const auto k = static_cast<Eigen::Index>(rows_kept.size());
  Matrix bmat(k, k);
  Vector rhs(k);
  Vector cb(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) { bmat(r, c) = p.a(rows_kept[static_cast<std::size_t>(r)], cols_basic[static_cast<std::size_t>(c)]); }
    rhs(r) = p.b(rows_kept[static_cast<std::size_t>(r)]);
    cb(r) = p.cost(cols_basic[static_cast<std::size_t>(r)]);
  }
  Eigen::PartialPivLU<Matrix> lu(bmat);
  const Vector xb = lu.solve(rhs);
  const Vector yk = lu.transpose().solve(cb);

  res.x = Vector::Zero(n);
  for (Eigen::Index c = 0; c < k; ++c) { res.x(cols_basic[static_cast<std::size_t>(c)]) = std::max(0.0, xb(c)); }
  res.duals = Vector::Zero(m);
  for (Eigen::Index r = 0; r < k; ++r) { res.duals(rows_kept[static_cast<std::size_t>(r)]) = yk(r); }
  if (!res.x.allFinite() || !res.duals.allFinite()) { throw SolverError("simplex: singular basis during recovery"); }
  res.value = p.cost.dot(res.x);
  res.status = LpStatus::Optimal;
  res.pivots = pivots;
  return res;
}

LpResult solve_lp(const LinearProgram& p)
{
  p.validate();
  const Eigen::Index n = p.num_vars();
  const Eigen::Index mi = p.a_ineq.rows();
  const Eigen::Index me = p.a_eq.rows();

  // Dual: minimize b^T lambda + e^T (mu+ - mu-)  s.t.  A^T lambda + E^T (mu+ - mu-) = c.
  StandardFormLp dual;
  dual.a.resize(n, mi + 2 * me);
  dual.cost.resize(mi + 2 * me);
  if (mi > 0) {
    dual.a.leftCols(mi) = p.a_ineq.transpose();
    dual.cost.head(mi) = p.b_ineq;
  }
  if (me > 0) {
    dual.a.middleCols(mi, me) = p.a_eq.transpose();
    dual.a.rightCols(me) = -p.a_eq.transpose();
    dual.cost.segment(mi, me) = p.b_eq;
    dual.cost.tail(me) = -p.b_eq;
  }
  dual.b = p.objective;

  LpResult res;
  if (n == 0) {
    // No variables: feasible iff 0 <= b and 0 = e.
    const bool ok = (mi == 0 || p.b_ineq.minCoeff() >= -1e-12) && (me == 0 || p.b_eq.cwiseAbs().maxCoeff() <= 1e-12);
    res.status = ok ? LpStatus::Optimal : LpStatus::Infeasible;
    res.z = Vector::Zero(0);
    return res;
  }

  const auto d = solve_standard_lp(dual);
  res.pivots = d.pivots;
  switch (d.status) {
    case LpStatus::Optimal: {
      res.status = LpStatus::Optimal;
      res.z = d.duals;
      res.value = p.objective.dot(res.z);
      const double scale = 1.0 + (mi > 0 ? p.b_ineq.cwiseAbs().maxCoeff() : 0.0);
      double viol = 0.0;
      if (mi > 0) { viol = std::max(viol, (p.a_ineq * res.z - p.b_ineq).maxCoeff()); }
      if (me > 0) { viol = std::max(viol, (p.a_eq * res.z - p.b_eq).cwiseAbs().maxCoeff()); }
      if (viol > 1e-7 * scale) {
        throw SolverError("LP: recovered primal point violates constraints by " + std::to_string(viol));
      }
      return res;
    }
    case LpStatus::Unbounded:
      res.status = LpStatus::Infeasible;
      return res;
    case LpStatus::Infeasible: {
      // Dual infeasible: primal is unbounded if feasible. Feasibility test via the zero-objective dual.
      StandardFormLp feas = dual;
      feas.b.setZero();
      const auto f = solve_standard_lp(feas);
      res.status = f.status == LpStatus::Unbounded ? LpStatus::Infeasible : LpStatus::Unbounded;
      return res;
    }
  }
  return res;
}

}  // namespace tvmpc
