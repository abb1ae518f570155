#include "doctest.h"

#include "tvmpc/errors.hpp"
#include "tvmpc/polytope.hpp"

#include <random>

using namespace tvmpc;

namespace {

Polytope interval(double lo, double hi) { return Polytope::box(Vector::Constant(1, lo), Vector::Constant(1, hi)); }

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

TEST_CASE("contains on the unit interval")
{
  const Polytope p = interval(-1, 1);
  CHECK(contains(p, Vector::Zero(1)));
  CHECK_FALSE(contains(p, Vector::Constant(1, 1.0000001), 1e-9));
  CHECK(contains(p, Vector::Constant(1, 1.0), 0.0));
  CHECK_THROWS_AS(contains(p, Vector::Zero(2)), InvalidModel);
}

TEST_CASE("image_contained on intervals")
{
  const Polytope p = interval(-1, 1);
  CHECK(image_contained(scalar(0.5), p, p));
  CHECK_FALSE(image_contained(scalar(2.0), p, p));
  CHECK(image_contained(scalar(1.0), interval(-0.5, 0.5), p));
  const Polytope half_line(1, Matrix::Constant(1, 1, 1.0));
  CHECK_THROWS_AS(image_contained(scalar(1.0), half_line, p), UnboundedError);
}

TEST_CASE("remove_redundant drops implied rows")
{
  {
    const Polytope p(1, (Matrix(2, 1) << 1.0, 0.5).finished());
    const Polytope r = remove_redundant(p);
    REQUIRE(r.num_rows() == 1);
    CHECK(r.rows(0, 0) == 1.0);
  }
  {
    const Polytope box = Polytope::box(Vector::Ones(2));
    Matrix dup(8, 2);
    dup << box.rows, box.rows;
    CHECK(remove_redundant(Polytope(2, dup)).num_rows() == 4);
  }
  {
    // x <= 1, -x <= 1, x <= 3, |y| <= 1: the third row is implied by the first.
    Matrix rows(5, 2);
    rows << 1, 0, -1, 0, 1.0 / 3.0, 0, 0, 1, 0, -1;
    const Polytope r = remove_redundant(Polytope(2, rows));
    CHECK(r.num_rows() == 4);
    for (Eigen::Index i = 0; i < r.num_rows(); ++i) { CHECK(r.rows.row(i).norm() == doctest::Approx(1.0)); }
  }
}

TEST_CASE("max_invariant_polytope examples")
{
  {
    const Polytope z = max_invariant_polytope(scalar(0.5), interval(-1, 1));
    CHECK(z.num_rows() == 2);
    CHECK(contains(z, Vector::Constant(1, 1.0), 1e-12));
  }
  {
    // Nilpotent shift: preimages of the unit box add nothing, so the box itself is returned.
    Matrix acl(2, 2);
    acl << 0, 1, 0, 0;
    const Polytope box = Polytope::box(Vector::Ones(2));
    const Polytope z = max_invariant_polytope(acl, box, 2);
    CHECK(z.num_rows() == 4);
    CHECK(image_contained(acl, z, z));
  }
  {
    // x1+ = x2, x2+ = 0 with the rotated box |x1 + x2| <= 1, |x2| <= 1 needs one preimage round.
    Matrix acl(2, 2);
    acl << 0, 1, 0, 0;
    Matrix rows(4, 2);
    rows << 1, 1, -1, -1, 0, 0.5, 0, -0.5;
    const Polytope z = max_invariant_polytope(acl, Polytope(2, rows), 2);
    CHECK(image_contained(acl, z, z));
    // |x2| <= 1 comes from the preimage of |x1 + x2| <= 1.
    CHECK_FALSE(contains(z, Vector{{0.0, 1.5}}, 1e-9));
    CHECK(contains(z, Vector{{0.0, 1.0}}, 1e-9));
  }
  CHECK_THROWS_AS(max_invariant_polytope(scalar(1.1), interval(-1, 1), 30), NotConverged);
}

TEST_CASE("max_invariant_polytope property: invariant, inside X0, and a fixed point" * doctest::test_suite("properties"))
{
  std::mt19937 rng(17);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 12; ++trial) {
    const Eigen::Index n = 2 + trial % 2;
    Matrix acl = Matrix::NullaryExpr(n, n, [&] { return nd(rng); });
    acl *= 0.9 / spectral_radius(acl);
    const Polytope x0 = Polytope::box(-Vector::Constant(n, 1.0), Vector::Constant(n, 2.0));
    const Polytope z = max_invariant_polytope(acl, x0);
    CHECK(image_contained(acl, z, z));
    CHECK(image_contained(Matrix::Identity(n, n), z, x0));
    // One more preimage round keeps the same set.
    const Polytope next = remove_redundant(intersect(z, Polytope(n, z.rows * acl)));
    CHECK(image_contained(Matrix::Identity(n, n), z, next));
    CHECK(image_contained(Matrix::Identity(n, n), next, z));
  }
}

TEST_CASE("max_scaling examples")
{
  const Polytope p = interval(-1, 1);
  CHECK(max_scaling({scalar(2.0)}, p, p) == doctest::Approx(0.5));
  CHECK(max_scaling({scalar(1.0)}, interval(-0.5, 0.5), p) == doctest::Approx(1.0));
  CHECK(max_scaling({scalar(1.25), scalar(2.0)}, p, p) == doctest::Approx(0.5));
}

TEST_CASE("build_periodic_family examples")
{
  {
    const auto f = build_periodic_family(interval(-1, 1), 1.0, scalar(0.5), scalar(1.0), 1);
    REQUIRE(f.sets.size() == 1);
    CHECK(image_contained(scalar(0.5), f.sets[0], f.sets[0]));
  }
  {
    const auto f = build_periodic_family(interval(-1, 1), 1.0, scalar(0.5), scalar(1.0), 2);
    REQUIRE(f.sets.size() == 2);
    CHECK(support(f.sets[0], Vector::Ones(1)) == doctest::Approx(1.0));
    CHECK(support(f.sets[1], Vector::Ones(1)) == doctest::Approx(0.5));
    CHECK(support(f.sets[1], -Vector::Ones(1)) == doctest::Approx(0.5));
    CHECK(image_contained(scalar(1.0), f.sets[1], f.sets[0]));
  }
  {
    PeriodicPolytopeFamily f{{interval(-1, 1), interval(-0.5, 0.5)}};
    try {
      verify_periodic_family(f, scalar(0.5), scalar(3.0));
      FAIL("expected VerificationFailed");
    } catch (const VerificationFailed& e) {
      CHECK(e.index() == 1);
    }
  }
  CHECK_THROWS_AS(build_periodic_family(interval(-1, 1), 0.0, scalar(0.5), scalar(1.0), 2), InvalidModel);
}

TEST_CASE("build_periodic_family with a singular map uses an enclosing approximation")
{
  Matrix a2(2, 2);
  a2 << 0.5, 0.5, 0.0, 0.0;
  const Matrix a1 = 0.5 * Matrix::Identity(2, 2);
  const Polytope z = Polytope::box(Vector::Ones(2));
  const auto f = build_periodic_family(z, 1.0, a2, a1, 3);
  REQUIRE(f.sets.size() == 3);
  CHECK(image_contained(a2, f.sets[0], f.sets[1]));
  CHECK(image_contained(a1, f.sets[1], f.sets[2]));
  CHECK(image_contained(a1, f.sets[2], f.sets[0]));
}

TEST_CASE("family property: Assumption-style chain on random stable closed loops" * doctest::test_suite("properties"))
{
  std::mt19937 rng(23);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 6; ++trial) {
    const Eigen::Index n = 2;
    const int m = 2 + trial % 3;
    // Build a2, a1 so that a1^{m-1} a2 is a contraction.
    Matrix a1 = Matrix::NullaryExpr(n, n, [&] { return nd(rng); });
    a1 *= 1.05 / spectral_radius(a1);
    Matrix a2 = Matrix::NullaryExpr(n, n, [&] { return nd(rng); });
    Matrix acl = a2;
    for (int j = 1; j < m; ++j) { acl = a1 * acl; }
    a2 *= 0.8 / std::pow(spectral_radius(acl), 1.0);
    acl = a2;
    for (int j = 1; j < m; ++j) { acl = a1 * acl; }
    const Polytope box = Polytope::box(Vector::Constant(n, 2.0));
    const Polytope zmax = max_invariant_polytope(acl, box);
    std::vector<Matrix> maps;
    Matrix l = a2;
    for (int j = 1; j < m; ++j) {
      maps.push_back(l);
      l = a1 * l;
    }
    const double alpha = max_scaling(maps, zmax, box);
    REQUIRE(alpha > 0.0);
    const auto f = build_periodic_family(zmax, alpha, a2, a1, m);
    CHECK_NOTHROW(verify_periodic_family(f, a2, a1, &box));
    for (const auto& s : f.sets) { CHECK(contains(s, Vector::Zero(n))); }
  }
}

TEST_CASE("polytope JSON round trip" * doctest::test_suite("properties"))
{
  const Polytope p = Polytope::box(Vector{{-1.0, -2.0}}, Vector{{3.0, 0.5}});
  nlohmann::json j = p;
  CHECK(j.at("dim") == 2);
  CHECK(j.at("rows").size() == 4);
  const auto q = j.get<Polytope>();
  CHECK((q.rows - p.rows).norm() == 0.0);
}
