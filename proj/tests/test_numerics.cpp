#include "doctest.h"

#include "tvmpc/errors.hpp"
#include "tvmpc/lp.hpp"
#include "tvmpc/numerics.hpp"
#include "tvmpc/qp.hpp"
#include "tvmpc/sdp.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

using namespace tvmpc;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows)
{
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) { m(i, j++) = v; }
    ++i;
  }
  return m;
}

// Enumerates all vertices of {z in R^2 : A z <= b} and returns the best objective, or -inf if empty.
// Assumes the feasible region is bounded.
double lp_vertex_oracle(const Vector& c, const Matrix& a, const Vector& b)
{
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) {
      Matrix m(2, 2);
      m.row(0) = a.row(i);
      m.row(1) = a.row(j);
      if (std::abs(m.determinant()) < 1e-12) { continue; }
      const Vector v = m.partialPivLu().solve(Vector{{b(i), b(j)}});
      if (((a * v - b).array() <= 1e-9).all()) { best = std::max(best, c.dot(v)); }
    }
  }
  return best;
}

// Minimum of a bounded 2-variable QP by enumerating every set of at most two active
// inequalities, solving the equality-constrained stationarity system and keeping feasible points.
double qp_active_set_oracle(const QuadraticProgram& p)
{
  const Eigen::Index m = p.a_ineq.rows();
  double best = std::numeric_limits<double>::infinity();
  auto try_set = [&](const std::vector<Eigen::Index>& act) {
    const auto k = static_cast<Eigen::Index>(act.size());
    Matrix kkt = Matrix::Zero(2 + k, 2 + k);
    Vector rhs = Vector::Zero(2 + k);
    kkt.topLeftCorner(2, 2) = p.hessian;
    rhs.head(2) = -p.linear;
    for (Eigen::Index i = 0; i < k; ++i) {
      kkt.block(0, 2 + i, 2, 1) = p.a_ineq.row(act[static_cast<std::size_t>(i)]).transpose();
      kkt.block(2 + i, 0, 1, 2) = p.a_ineq.row(act[static_cast<std::size_t>(i)]);
      rhs(2 + i) = p.b_ineq(act[static_cast<std::size_t>(i)]);
    }
    const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    if ((kkt * sol - rhs).norm() > 1e-9) { return; }
    const Vector z = sol.head(2);
    if ((p.a_ineq * z - p.b_ineq).maxCoeff() > 1e-9) { return; }
    best = std::min(best, p.objective(z));
  };
  try_set({});
  for (Eigen::Index i = 0; i < m; ++i) {
    try_set({i});
    for (Eigen::Index j = i + 1; j < m; ++j) { try_set({i, j}); }
  }
  return best;
}

}  // namespace

TEST_CASE("min_eigenvalue on small symmetric matrices")
{
  CHECK(min_eigenvalue(Matrix::Identity(2, 2)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(min_eigenvalue(mat({{3, 0}, {0, -2}})) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(min_eigenvalue(mat({{2, 1}, {1, 2}})) == doctest::Approx(1.0).epsilon(1e-12));
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(min_eigenvalue(bad), InvalidMatrix);
}

TEST_CASE("is_psd thresholds")
{
  CHECK(is_psd(Matrix::Identity(2, 2), 0.0));
  CHECK_FALSE(is_psd(mat({{1, 0}, {0, -1e-3}}), 1e-6));
  CHECK(is_psd(Matrix::Zero(3, 3), 0.0));
}

TEST_CASE("zoh_discretize closed forms")
{
  {
    auto [a, b] = zoh_discretize(Matrix::Zero(1, 1), Matrix::Ones(1, 1), 0.1);
    CHECK(a(0, 0) == doctest::Approx(1.0));
    CHECK(b(0, 0) == doctest::Approx(0.1));
  }
  {
    auto [a, b] = zoh_discretize(Matrix::Ones(1, 1), Matrix::Zero(1, 1), 1.0);
    CHECK(a(0, 0) == doctest::Approx(2.718281828459045).epsilon(1e-12));
    CHECK(b(0, 0) == 0.0);
  }
  {
    auto [a, b] = zoh_discretize(mat({{0, 1}, {0, 0}}), mat({{0}, {1}}), 0.1);
    CHECK((a - mat({{1, 0.1}, {0, 1}})).norm() < 1e-12);
    CHECK((b - mat({{0.005}, {0.1}})).norm() < 1e-12);
  }
  CHECK_THROWS_AS(zoh_discretize(Matrix::Zero(2, 3), Matrix::Zero(2, 1), 0.1), InvalidModel);
}

TEST_CASE("zoh_discretize: two half steps equal one full step" * doctest::test_suite("properties"))
{
  std::mt19937 rng(7);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix ac = Matrix::NullaryExpr(3, 3, [&] { return nd(rng); });
    ac -= (spectral_radius(ac) + 0.5) * Matrix::Identity(3, 3);
    const Matrix bc = Matrix::NullaryExpr(3, 1, [&] { return nd(rng); });
    const auto [a1, b1] = zoh_discretize(ac, bc, 0.05);
    const auto [a2, b2] = zoh_discretize(ac, bc, 0.1);
    CHECK((a1 * a1 - a2).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((a1 * b1 + b1 - b2).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("solve_lp small programs")
{
  {
    LinearProgram p(Vector::Ones(1), mat({{1}}), Vector::Ones(1));
    const auto r = solve_lp(p);
    REQUIRE(r.status == LpStatus::Optimal);
    CHECK(r.z(0) == doctest::Approx(1.0));
    CHECK(r.value == doctest::Approx(1.0));
  }
  {
    LinearProgram p(Vector::Ones(1), mat({{-1}, {1}}), Vector{{-2, 1}});
    CHECK(solve_lp(p).status == LpStatus::Infeasible);
  }
  {
    LinearProgram p(Vector::Ones(2), mat({{1, 0}, {0, 1}, {1, 1}}), Vector{{1, 1, 1.5}});
    const auto r = solve_lp(p);
    REQUIRE(r.status == LpStatus::Optimal);
    CHECK(r.value == doctest::Approx(1.5).epsilon(1e-10));
    CHECK(r.value == doctest::Approx(lp_vertex_oracle(p.objective, p.a_ineq, p.b_ineq)));
  }
  {
    LinearProgram p(Vector::Ones(1), mat({{-1}}), Vector::Ones(1));
    CHECK(solve_lp(p).status == LpStatus::Unbounded);
  }
  {
    // Equality row: max x s.t. x + y = 1, y >= 0.25, x <= 5.
    LinearProgram p(Vector{{1, 0}}, mat({{0, -1}, {1, 0}}), Vector{{-0.25, 5}});
    p.a_eq = mat({{1, 1}});
    p.b_eq = Vector::Ones(1);
    const auto r = solve_lp(p);
    REQUIRE(r.status == LpStatus::Optimal);
    CHECK(r.value == doctest::Approx(0.75));
  }
}

TEST_CASE("solve_lp agrees with vertex enumeration on random bounded 2-variable programs" * doctest::test_suite("properties"))
{
  std::mt19937 rng(11);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.1, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 3 + trial % 8;
    Matrix a(m + 4, 2);
    Vector b(m + 4);
    for (int i = 0; i < m; ++i) {
      a(i, 0) = nd(rng);
      a(i, 1) = nd(rng);
      b(i) = trial % 5 == 0 ? nd(rng) : ud(rng);
    }
    a.bottomRows(4) = mat({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    b.tail(4).setConstant(3.0);
    const Vector c{{nd(rng), nd(rng)}};
    const double oracle = lp_vertex_oracle(c, a, b);
    const auto r = solve_lp(LinearProgram(c, a, b));
    if (std::isinf(oracle)) {
      CHECK(r.status == LpStatus::Infeasible);
    } else {
      REQUIRE(r.status == LpStatus::Optimal);
      CHECK(std::abs(r.value - oracle) < 1e-6);
      CHECK((a * r.z - b).maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("solve_qp small programs")
{
  {
    QuadraticProgram p(mat({{2}}), Vector::Zero(1));
    p.a_ineq = mat({{-1}});
    p.b_ineq = Vector{{-1}};
    const auto r = solve_qp(p);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(r.z(0) == doctest::Approx(1.0));
    CHECK(r.value == doctest::Approx(1.0));
    CHECK(kkt_residual(p, r) < 1e-7);
  }
  {
    const auto r = solve_qp(QuadraticProgram(mat({{2}}), Vector::Zero(1)));
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(std::abs(r.z(0)) < 1e-12);
    CHECK(std::abs(r.value) < 1e-12);
  }
  {
    // (z-2)^2 = z^2 - 4z + 4; the constant is added back for the comparison.
    QuadraticProgram p(mat({{2}}), Vector{{-4}});
    p.a_ineq = mat({{1}, {-1}});
    p.b_ineq = Vector{{1, 0}};
    const auto r = solve_qp(p);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(r.z(0) == doctest::Approx(1.0));
    CHECK(r.value + 4.0 == doctest::Approx(1.0));
  }
  {
    QuadraticProgram p(mat({{2}}), Vector::Zero(1));
    p.a_ineq = mat({{1}, {-1}});
    p.b_ineq = Vector{{-1, -1}};
    CHECK(solve_qp(p).status == QpStatus::Infeasible);
  }
  {
    QuadraticProgram p(Matrix::Identity(2, 2) * 2, Vector::Zero(2));
    p.a_eq = mat({{1, 1}, {2, 2}});
    p.b_eq = Vector{{1, 3}};
    CHECK(solve_qp(p).status == QpStatus::Infeasible);
  }
}

TEST_CASE("solve_qp agrees with active-set enumeration on random 2-variable programs" * doctest::test_suite("properties"))
{
  std::mt19937 rng(5);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.2, 1.5);
  for (int trial = 0; trial < 40; ++trial) {
    Matrix l = Matrix::NullaryExpr(2, 2, [&] { return nd(rng); });
    Matrix h = l * l.transpose() + 0.1 * Matrix::Identity(2, 2);
    if (trial % 4 == 0) {
      const Vector v{{nd(rng), nd(rng)}};
      h = v * v.transpose();  // PSD only
    }
    const Vector f{{nd(rng), nd(rng)}};
    Matrix a(6, 2);
    Vector b(6);
    for (int i = 0; i < 2; ++i) {
      a(i, 0) = nd(rng);
      a(i, 1) = nd(rng);
      b(i) = ud(rng);
    }
    a.bottomRows(4) = mat({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    b.tail(4).setConstant(1.0);
    QuadraticProgram p(h, f);
    p.a_ineq = a;
    p.b_ineq = b;
    const auto r = solve_qp(p);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(kkt_residual(p, r) < 1e-7);
    CHECK((a * r.z - b).maxCoeff() < 1e-7);

    const double best = qp_active_set_oracle(p);
    CHECK(r.value <= best + 1e-6);
    CHECK(r.value >= best - 1e-6);
  }
}

TEST_CASE("solve_sdp basic cases")
{
  {
    SemidefiniteProgram p;
    const auto x = p.add_symmetric("x", 1);
    p.add_lmi("x", AffineExpr{}.add(x, Matrix::Ones(1, 1), Matrix::Ones(1, 1)));
    p.add_lmi("x-1", AffineExpr::constant_of(-Matrix::Ones(1, 1)).add(x, Matrix::Ones(1, 1), Matrix::Ones(1, 1)));
    const auto r = solve_sdp(p);
    REQUIRE(r.status == SdpStatus::Feasible);
    CHECK(r.values[0](0, 0) >= 1.0 - 1e-7);
  }
  {
    SemidefiniteProgram p;
    const auto x = p.add_symmetric("x", 1);
    p.add_lmi("x", AffineExpr{}.add(x, Matrix::Ones(1, 1), Matrix::Ones(1, 1)));
    p.add_lmi("-x-1", AffineExpr::constant_of(-Matrix::Ones(1, 1)).add(x, Matrix::Ones(1, 1), Matrix::Ones(1, 1), -1.0));
    CHECK(solve_sdp(p).status == SdpStatus::Infeasible);
  }
  {
    // Discrete Lyapunov block [[X, aX], [aX, X]] >= 0 with a = 0.5 and X > 0.
    SemidefiniteProgram p;
    const auto x = p.add_symmetric("X", 1, true);
    const Matrix one = Matrix::Ones(1, 1);
    p.add_block_lmi("lyap", {1, 1},
                    {{AffineExpr{}.add(x, one, one), AffineExpr{}.add(x, one, one, 0.5)},
                     {AffineExpr{}, AffineExpr{}.add(x, one, one)}});
    const auto r = solve_sdp(p);
    REQUIRE(r.status == SdpStatus::Feasible);
    CHECK(r.values[0](0, 0) > 0.0);
    CHECK(r.min_block_eigenvalue >= -1e-7);
  }
}

TEST_CASE("solve_sdp: matrix Lyapunov inequality and independent re-check" * doctest::test_suite("properties"))
{
  std::mt19937 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 8; ++trial) {
    Matrix a = Matrix::NullaryExpr(3, 3, [&] { return nd(rng); });
    const double rho = spectral_radius(a);
    const bool stable = trial % 2 == 0;
    a *= (stable ? 0.8 : 1.2) / rho;
    // X - A X A^T - I >= 0 in Schur form [[X - I, A X], [X A^T, X]] >= 0.
    SemidefiniteProgram p;
    const auto x = p.add_symmetric("X", 3, true);
    const Matrix id = Matrix::Identity(3, 3);
    p.add_block_lmi("lyap", {3, 3},
                    {{AffineExpr::constant_of(-id).add(x, id, id), AffineExpr{}.add(x, a, id)},
                     {AffineExpr{}, AffineExpr{}.add(x, id, id)}});
    const auto r = solve_sdp(p);
    CHECK((r.status == SdpStatus::Feasible) == stable);
    for (const auto& blk : p.blocks()) {
      if (r.status == SdpStatus::Feasible) { CHECK(min_eigenvalue(blk.evaluate(r.flat)) >= -1e-6); }
    }
  }
}

TEST_CASE("SemidefiniteProgram flatten and value round trip")
{
  SemidefiniteProgram p;
  const auto s = p.add_symmetric("S", 3);
  const auto y = p.add_matrix("Y", 2, 3);
  const Matrix sv = mat({{1, 2, 3}, {2, 4, 5}, {3, 5, 6}});
  const Matrix yv = mat({{1, -1, 2}, {0.5, 7, -3}});
  const Vector flat = p.flatten({sv, yv});
  CHECK(flat.size() == 12);
  CHECK((p.value(s, flat) - sv).norm() == 0.0);
  CHECK((p.value(y, flat) - yv).norm() == 0.0);
  CHECK_THROWS_AS(p.add_lmi("bad", AffineExpr::constant_of(Matrix::Identity(2, 2)).add(y, Matrix::Identity(2, 2), Matrix::Identity(3, 3))),
                  InvalidModel);
}
