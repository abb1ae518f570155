#include "tvmpc/polytope.hpp"

#include "tvmpc/errors.hpp"
#include "tvmpc/lp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tvmpc {

namespace {

constexpr double kRedundancyTol = 1e-9;

void require_dim(const Polytope& p, Eigen::Index n, const char* what)
{
  if (p.dim != n) {
    throw InvalidModel(std::string(what) + ": dimension mismatch (" + std::to_string(p.dim) + " vs " +
                       std::to_string(n) + ")");
  }
}

}  // namespace

Polytope::Polytope(Eigen::Index n, Matrix r) : dim(n), rows(std::move(r))
{
  if (rows.size() == 0) { rows.resize(0, n); }
  if (rows.cols() != n) { throw InvalidModel("polytope: row length does not match dimension"); }
  require_finite(rows, "polytope rows");
}

Polytope Polytope::box(const Vector& lo, const Vector& hi)
{
  if (lo.size() != hi.size()) { throw InvalidModel("box: bound vectors differ in size"); }
  const Eigen::Index n = lo.size();
  Matrix r = Matrix::Zero(2 * n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lo(i) < 0.0 && hi(i) > 0.0)) { throw InvalidModel("box: bounds must satisfy lo < 0 < hi"); }
    r(2 * i, i) = 1.0 / hi(i);
    r(2 * i + 1, i) = 1.0 / lo(i);
  }
  return Polytope(n, r);
}

Polytope Polytope::box(const Vector& half_widths) { return box(-half_widths, half_widths); }

Polytope Polytope::scaled(double s) const
{
  if (!(s > 0.0)) { throw InvalidModel("polytope: scale factor must be positive"); }
  return Polytope(dim, rows / s);
}

Polytope cartesian(const Polytope& p, const Polytope& q)
{
  Matrix r = Matrix::Zero(p.num_rows() + q.num_rows(), p.dim + q.dim);
  r.topLeftCorner(p.num_rows(), p.dim) = p.rows;
  r.bottomRightCorner(q.num_rows(), q.dim) = q.rows;
  return Polytope(p.dim + q.dim, r);
}

Polytope intersect(const Polytope& p, const Polytope& q)
{
  require_dim(q, p.dim, "intersect");
  Matrix r(p.num_rows() + q.num_rows(), p.dim);
  r << p.rows, q.rows;
  return Polytope(p.dim, r);
}

bool contains(const Polytope& p, const Vector& x, double tol)
{
  require_dim(p, x.size(), "contains");
  if (p.num_rows() == 0) { return true; }
  return (p.rows * x).maxCoeff() <= 1.0 + tol;
}

double support(const Polytope& p, const Vector& c)
{
  require_dim(p, c.size(), "support");
  const auto r = solve_lp(LinearProgram(c, p.rows, Vector::Ones(p.num_rows())));
  if (r.status == LpStatus::Unbounded) { throw UnboundedError("support: polytope is unbounded in the given direction"); }
  if (r.status == LpStatus::Infeasible) { throw SolverError("support: polytope reported empty although it contains the origin"); }
  return r.value;
}

double image_excess(const Matrix& amap, const Polytope& p, const Polytope& q)
{
  if (amap.cols() != p.dim || amap.rows() != q.dim) { throw InvalidModel("image_contained: map has inconsistent shape"); }
  double worst = -1.0;
  for (Eigen::Index i = 0; i < q.num_rows(); ++i) {
    const Vector dir = (q.rows.row(i) * amap).transpose();
    worst = std::max(worst, support(p, dir) - 1.0);
  }
  return worst;
}

bool image_contained(const Matrix& amap, const Polytope& p, const Polytope& q, double tol)
{
  return image_excess(amap, p, q) <= tol;
}

Polytope remove_redundant(const Polytope& p)
{
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < p.num_rows(); ++i) { kept.push_back(i); }
  // Zero rows never bind.
  std::erase_if(kept, [&](Eigen::Index i) { return p.rows.row(i).cwiseAbs().maxCoeff() == 0.0; });

  for (std::size_t pos = 0; pos < kept.size();) {
    const Eigen::Index i = kept[pos];
    Matrix others(static_cast<Eigen::Index>(kept.size()) - 1, p.dim);
    Eigen::Index r = 0;
    for (const Eigen::Index k : kept) {
      if (k != i) { others.row(r++) = p.rows.row(k); }
    }
    // Capping the objective at 2 keeps the LP bounded; a value above 1 already proves the row is needed.
    Matrix a(others.rows() + 1, p.dim);
    Vector b(others.rows() + 1);
    a << others, p.rows.row(i);
    b.setOnes();
    b(others.rows()) = 2.0;
    const auto res = solve_lp(LinearProgram(p.rows.row(i).transpose(), a, b));
    if (res.status == LpStatus::Optimal && res.value <= 1.0 + kRedundancyTol) {
      kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(pos));
    } else {
      ++pos;
    }
  }
  Matrix out(static_cast<Eigen::Index>(kept.size()), p.dim);
  for (std::size_t k = 0; k < kept.size(); ++k) { out.row(static_cast<Eigen::Index>(k)) = p.rows.row(kept[k]); }
  return Polytope(p.dim, out);
}

Polytope max_invariant_polytope(const Matrix& acl, const Polytope& x0, int max_iter)
{
  if (acl.rows() != acl.cols()) { throw InvalidModel("max_invariant_polytope: map must be square"); }
  require_dim(x0, acl.rows(), "max_invariant_polytope");

  Polytope z = remove_redundant(x0);
  const Matrix base = z.rows;
  Matrix power = acl;
  for (int it = 1; it <= max_iter; ++it) {
    const Matrix candidates = base * power;
    std::vector<Eigen::Index> added;
    for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
      const Vector c = candidates.row(i).transpose();
      if (c.cwiseAbs().maxCoeff() == 0.0) { continue; }
      if (support(z, c) > 1.0 + kRedundancyTol) { added.push_back(i); }
    }
    if (added.empty()) {
      if (!image_contained(acl, z, z)) {
        throw NotConverged("max_invariant_polytope: fixed point reached but invariance check failed", it);
      }
      return z;
    }
    Matrix grown(z.num_rows() + static_cast<Eigen::Index>(added.size()), z.dim);
    grown.topRows(z.num_rows()) = z.rows;
    for (std::size_t k = 0; k < added.size(); ++k) {
      grown.row(z.num_rows() + static_cast<Eigen::Index>(k)) = candidates.row(added[k]);
    }
    z = remove_redundant(Polytope(z.dim, grown));
    power = acl * power;
    if (!power.allFinite()) { throw NotConverged("max_invariant_polytope: map powers diverged", it); }
  }
  throw NotConverged("max_invariant_polytope: no fixed point after " + std::to_string(max_iter) + " iterations",
                     max_iter);
}

double max_scaling(const std::vector<Matrix>& maps, const Polytope& z, const Polytope& box)
{
  double alpha = 1.0;
  for (const Matrix& l : maps) {
    if (l.cols() != z.dim || l.rows() != box.dim) { throw InvalidModel("max_scaling: map has inconsistent shape"); }
    for (Eigen::Index i = 0; i < box.num_rows(); ++i) {
      const double h = support(z, (box.rows.row(i) * l).transpose());
      if (h > 0.0) { alpha = std::min(alpha, 1.0 / h); }
    }
  }
  return std::clamp(alpha, 0.0, 1.0);
}

namespace {

// H-representation of {L x : x in P}.
Polytope linear_image(const Matrix& l, const Polytope& p)
{
  const Eigen::Index n = l.rows();
  Eigen::FullPivLU<Matrix> lu(l);
  if (l.rows() == l.cols() && lu.isInvertible() && lu.rcond() > 1e-12) {
    return Polytope(n, p.rows * lu.inverse());
  }
  // Outer approximation: supporting half-spaces in the coordinate directions, along the rows of
  // P pulled back through the pseudo-inverse, and along the diagonals of the coordinate planes.
  std::vector<Vector> dirs;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector e = Vector::Zero(n);
    e(i) = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      for (const double s : {1.0, -1.0}) {
        Vector d = Vector::Zero(n);
        d(i) = 1.0;
        d(j) = s;
        dirs.push_back(d);
        dirs.push_back(-d);
      }
    }
  }
  const Matrix pinv = l.completeOrthogonalDecomposition().pseudoInverse();
  for (Eigen::Index i = 0; i < p.num_rows(); ++i) {
    const Vector d = (p.rows.row(i) * pinv).transpose();
    if (d.norm() > 0.0) { dirs.push_back(d); }
  }
  // Directions in which the image is flat get a small positive offset so that the row can be
  // written as c x <= 1 while still enclosing the image.
  constexpr double kFlat = 1e-9;
  Matrix rows(static_cast<Eigen::Index>(dirs.size()), n);
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    const double h = support(p, (dirs[k].transpose() * l).transpose());
    rows.row(static_cast<Eigen::Index>(k)) = dirs[k].transpose() / std::max(h, kFlat * dirs[k].norm());
  }
  return remove_redundant(Polytope(n, rows));
}

}  // namespace

PeriodicPolytopeFamily build_periodic_family(const Polytope& z, double alpha, const Matrix& a2, const Matrix& a1,
                                             int m)
{
  if (!(alpha > 0.0 && alpha <= 1.0)) { throw InvalidModel("build_periodic_family: alpha must lie in (0, 1]"); }
  if (m < 1) { throw InvalidModel("build_periodic_family: period must be at least 1"); }
  require_dim(z, a2.rows(), "build_periodic_family");
  if (a2.rows() != a2.cols() || a1.rows() != a1.cols() || a1.rows() != a2.rows()) {
    throw InvalidModel("build_periodic_family: maps must be square and of equal size");
  }
  const Polytope z0 = z.scaled(alpha);
  PeriodicPolytopeFamily f;
  f.sets.push_back(z0);
  Matrix l = a2;
  for (int j = 1; j < m; ++j) {
    f.sets.push_back(linear_image(l, z0));
    l = a1 * l;
  }
  verify_periodic_family(f, a2, a1);
  return f;
}

void verify_periodic_family(const PeriodicPolytopeFamily& f, const Matrix& a2, const Matrix& a1, const Polytope* box,
                            double tol)
{
  const int m = static_cast<int>(f.sets.size());
  if (m == 0) { throw InvalidModel("periodic family is empty"); }
  for (int j = 0; j < m; ++j) {
    const Matrix& map = j == 0 ? a2 : a1;
    const Polytope& next = f.sets[static_cast<std::size_t>((j + 1) % m)];
    const double excess = image_excess(map, f.sets[static_cast<std::size_t>(j)], next);
    if (excess > tol) {
      throw VerificationFailed("periodic family: inclusion from set " + std::to_string(j) + " into set " +
                                   std::to_string((j + 1) % m) + " violated by " + std::to_string(excess),
                               j);
    }
  }
  if (box != nullptr) {
    for (int j = 0; j < m; ++j) {
      const Polytope& s = f.sets[static_cast<std::size_t>(j)];
      const double excess = image_excess(Matrix::Identity(s.dim, s.dim), s, *box);
      if (excess > tol) {
        throw VerificationFailed("periodic family: set " + std::to_string(j) + " leaves the constraint set by " +
                                     std::to_string(excess),
                                 j);
      }
    }
  }
}

void to_json(nlohmann::json& j, const Polytope& p)
{
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < p.num_rows(); ++i) {
    std::vector<double> r;
    for (Eigen::Index k = 0; k < p.dim; ++k) { r.push_back(p.rows(i, k)); }
    rows.push_back(r);
  }
  j = nlohmann::json{{"dim", p.dim}, {"rows", rows}};
}

void from_json(const nlohmann::json& j, Polytope& p)
{
  const auto n = j.at("dim").get<Eigen::Index>();
  const auto& rows = j.at("rows");
  Matrix r(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(n)) { throw ConfigError("polytope row length does not match dim"); }
    for (Eigen::Index k = 0; k < n; ++k) { r(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)].get<double>(); }
  }
  p = Polytope(n, r);
}

}  // namespace tvmpc
