#include "doctest.h"

#include "fixtures.hpp"
#include "tvmpc/errors.hpp"
#include "tvmpc/synthesis.hpp"

#include <cmath>
#include <random>

using namespace tvmpc;
using namespace tvmpc::testing;

namespace {

TokenBucketParams scalar_bucket(double a, double b, int c)
{
  TokenBucketParams p;
  p.a = scalar(a);
  p.b = scalar(b);
  p.q = scalar(1.0);
  p.r = scalar(1.0);
  p.g = 1;
  p.c = c;
  p.bucket = c + 2;
  p.xp = Polytope::box(vec1(4.0));
  p.up = Polytope::box(vec1(2.0));
  return p;
}

ActuatorParams scalar_actuator(double a, double b)
{
  ActuatorParams p;
  p.a = scalar(a);
  p.b = scalar(b);
  p.q = scalar(1.0);
  p.r = scalar(1.0);
  p.widths = {1};
  p.base_schedule = {0};
  return p;
}

/// Smallest eigenvalue of a symmetric 2 x 2 matrix in closed form.
double min_eig2(double a, double b, double d)
{
  const double mean = 0.5 * (a + d);
  return mean - std::sqrt(0.25 * (a - d) * (a - d) + b * b);
}

Matrix random_spd(Eigen::Index n, std::mt19937& rng, double scale)
{
  std::normal_distribution<double> nd;
  Matrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) { g(i, j) = nd(rng); }
  }
  return scale * (g * g.transpose() + 0.1 * Matrix::Identity(n, n));
}

}  // namespace

TEST_CASE("token bucket LMI structure")
{
  {
    const TbLmiProblem lp = build_tb_lmis(scalar_bucket(0.5, 1.0, 2));
    REQUIRE(lp.sdp.blocks().size() == 2);
    CHECK(lp.labels == std::vector<std::string>{"decrease phase 0", "decrease phase 1"});
    // Phase 0 rows: X_1, Q^-1, R^-1, X_0. Other phases: X_{j+1}, diag(Q^-1, R^-1), X_j.
    CHECK(lp.sdp.blocks()[0].size() == 2 + 1 + 1 + 2);
    CHECK(lp.sdp.blocks()[1].size() == 3 * 2);
    CHECK(lp.sdp.num_vars() == 3);
  }
  {
    const TbLmiProblem lp = build_tb_lmis(scalar_bucket(0.5, 1.0, 1));
    REQUIRE(lp.sdp.blocks().size() == 1);
    CHECK(lp.x.size() == 1);
  }
  {
    const TbLmiProblem lp = build_tb_lmis(reactor_token_bucket());
    REQUIRE(lp.sdp.blocks().size() == 8);
    CHECK(lp.x.size() == 8);
    CHECK(lp.sdp.shape(lp.x[3]) == std::make_pair(Eigen::Index{6}, Eigen::Index{6}));
    CHECK(lp.sdp.shape(lp.y) == std::make_pair(Eigen::Index{2}, Eigen::Index{6}));
    CHECK(lp.sdp.blocks()[0].size() == 6 + 4 + 2 + 6);
    for (std::size_t j = 1; j < 8; ++j) { CHECK(lp.sdp.blocks()[j].size() == 18); }
  }
  {
    const TbLmiProblem lp = build_tb_lmis(scalar_bucket(0.5, 1.0, 2), 1.0);
    // Two phases, two box rows per coordinate of (x_p, u_s), plus two terminal input rows.
    CHECK(lp.sdp.blocks().size() == 2 + 2 * 4 + 2);
  }
}

TEST_CASE("phase index wraps modulo the period" * doctest::test_suite("properties"))
{
  const TokenBucketParams p = reactor_token_bucket();
  TbLmiProblem base = build_tb_lmis(p);
  TbLmiProblem shifted;
  shifted.period = base.period;
  for (int j = 0; j < base.period; ++j) { shifted.x.push_back(shifted.sdp.add_symmetric("X" + std::to_string(j), p.nz(), true)); }
  shifted.y = shifted.sdp.add_matrix("Y", p.m(), p.nz());
  for (long j = base.period; j < 2L * base.period; ++j) { add_tb_decrease_lmi(shifted, p, j); }
  REQUIRE(shifted.sdp.blocks().size() == base.sdp.blocks().size());
  CHECK(shifted.labels == base.labels);
  for (std::size_t b = 0; b < base.sdp.blocks().size(); ++b) {
    const LmiBlock& x = base.sdp.blocks()[b];
    const LmiBlock& y = shifted.sdp.blocks()[b];
    CHECK(x.constant == y.constant);
    REQUIRE(x.terms.size() == y.terms.size());
    for (std::size_t t = 0; t < x.terms.size(); ++t) {
      CHECK(x.terms[t].first == y.terms[t].first);
      CHECK(x.terms[t].second == y.terms[t].second);
    }
  }

  const ActuatorParams q = reactor_actuators();
  ActLmiProblem abase = build_act_lmis(q);
  ActLmiProblem ashift;
  ashift.period = abase.period;
  for (int j = 0; j < abase.period; ++j) { ashift.x.push_back(ashift.sdp.add_symmetric("X" + std::to_string(j), q.n(), true)); }
  for (int j = 0; j < abase.period; ++j) { ashift.y.push_back(ashift.sdp.add_matrix("Y" + std::to_string(j), q.m(), q.n())); }
  for (long j = -abase.period; j < 0; ++j) { add_act_decrease_lmi(ashift, q, j); }
  REQUIRE(ashift.sdp.blocks().size() == abase.sdp.blocks().size());
  for (std::size_t b = 0; b < abase.sdp.blocks().size(); ++b) {
    CHECK(abase.sdp.blocks()[b].constant == ashift.sdp.blocks()[b].constant);
    CHECK(abase.sdp.blocks()[b].terms == ashift.sdp.blocks()[b].terms);
  }
}

TEST_CASE("condensed margins of a hand-built scalar solution")
{
  // M = 2, z = (x, u_s). Decrease inequalities written out entry by entry.
  const double a = 0.8;
  const double b = 0.5;
  const TokenBucketParams p = scalar_bucket(a, b, 2);
  const Matrix p0 = (Matrix(2, 2) << 6.0, 1.0, 1.0, 3.0).finished();
  const Matrix p1 = (Matrix(2, 2) << 5.0, 0.5, 0.5, 2.0).finished();
  const double kx = -0.9;
  const double ku = 0.1;
  const auto margins = verify_tb({p0, p1}, (Matrix(1, 2) << kx, ku).finished(), p);
  REQUIRE(margins.size() == 2);

  // Phase 0: z+ = (a x + b (kx x + ku u), kx x + ku u).
  const double f11 = a + b * kx, f12 = b * ku, f21 = kx, f22 = ku;
  auto quad = [](double g11, double g12, double g21, double g22, const Matrix& pm, int r, int c) {
    const double g[2][2] = {{g11, g12}, {g21, g22}};
    double s = 0.0;
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) { s += g[i][r] * pm(i, j) * g[j][c]; }
    }
    return s;
  };
  double l11 = quad(f11, f12, f21, f22, p1, 0, 0) - p0(0, 0) + 1.0 + kx * kx;
  double l12 = quad(f11, f12, f21, f22, p1, 0, 1) - p0(0, 1) + kx * ku;
  double l22 = quad(f11, f12, f21, f22, p1, 1, 1) - p0(1, 1) + ku * ku;
  CHECK(margins[0] == doctest::Approx(min_eig2(-l11, -l12, -l22)).epsilon(1e-12));

  // Phase 1: z+ = (a x + b u, u), next cost P_0.
  l11 = quad(a, b, 0.0, 1.0, p0, 0, 0) - p1(0, 0) + 1.0;
  l12 = quad(a, b, 0.0, 1.0, p0, 0, 1) - p1(0, 1);
  l22 = quad(a, b, 0.0, 1.0, p0, 1, 1) - p1(1, 1) + 1.0;
  CHECK(margins[1] == doctest::Approx(min_eig2(-l11, -l12, -l22)).epsilon(1e-12));

  // A zero cost cannot decrease.
  const auto zero = verify_tb({Matrix::Zero(2, 2), Matrix::Zero(2, 2)}, Matrix::Zero(1, 2), p);
  CHECK(zero[0] < 0.0);
  CHECK(zero[1] < 0.0);
}

TEST_CASE("scalar token bucket synthesis")
{
  const TokenBucketParams p = scalar_bucket(0.5, 1.0, 2);
  const PeriodicTerminalIngredients ing = synthesize_tb(p);
  REQUIRE(ing.period == 2);
  for (const auto& pj : ing.p) { CHECK(min_eigenvalue(pj) > 0.0); }
  for (const double m : verify_tb(ing.p, ing.k, p)) { CHECK(m >= -1e-6); }
  CHECK(ing.region == RegionKind::Polytopic);
  CHECK_NOTHROW(verify_tb_regions(ing, p));
}

TEST_CASE("synthesis failures")
{
  CHECK_THROWS_AS(synthesize_tb(scalar_bucket(2.0, 0.0, 2)), SdpInfeasible);
  CHECK_THROWS_AS(synthesize_act(scalar_actuator(2.0, 0.0)), SdpInfeasible);
  ActuatorParams bad = scalar_actuator(0.5, 1.0);
  bad.widths = {0};
  CHECK_THROWS_AS(build_act_lmis(bad), InvalidModel);
  TokenBucketParams shape = scalar_bucket(0.5, 1.0, 2);
  shape.b = Matrix::Ones(2, 1);
  CHECK_THROWS_AS(build_tb_lmis(shape), InvalidModel);
}

TEST_CASE("block LMIs and condensed inequalities agree (Schur complement)" * doctest::test_suite("properties"))
{
  const TokenBucketParams p = scalar_bucket(1.2, 0.7, 3);
  const TbLmiProblem lp = build_tb_lmis(p);
  std::mt19937 rng(5);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  int feasible = 0;
  int infeasible = 0;
  for (int t = 0; t < 300; ++t) {
    std::vector<Matrix> xs;
    for (int j = 0; j < lp.period; ++j) { xs.push_back(random_spd(2, rng, scale(rng))); }
    Matrix y(1, 2);
    y << nd(rng), nd(rng);
    std::vector<Matrix> values = xs;
    values.push_back(y);
    const Vector flat = lp.sdp.flatten(values);
    std::vector<Matrix> pj;
    for (const auto& x : xs) { pj.push_back(x.inverse()); }
    const auto margins = verify_tb(pj, y * pj[0], p);
    for (int j = 0; j < lp.period; ++j) {
      const double block = min_eigenvalue(lp.sdp.blocks()[static_cast<std::size_t>(j)].evaluate(flat));
      if (std::abs(block) < 1e-8 || std::abs(margins[static_cast<std::size_t>(j)]) < 1e-8) { continue; }
      CHECK((block > 0.0) == (margins[static_cast<std::size_t>(j)] > 0.0));
      (block > 0.0 ? feasible : infeasible) += 1;
    }
  }
  // Also at the synthesized solution, where every block is positive.
  const PeriodicTerminalIngredients ing = synthesize_tb(p);
  std::vector<Matrix> values;
  for (const auto& pm : ing.p) { values.push_back(pm.inverse()); }
  values.push_back(ing.k * values[0]);
  const Vector flat = lp.sdp.flatten(values);
  for (std::size_t j = 0; j < lp.sdp.blocks().size(); ++j) {
    CHECK(min_eigenvalue(lp.sdp.blocks()[j].evaluate(flat)) > -1e-7);
    ++feasible;
  }
  CHECK(feasible > 0);
  CHECK(infeasible > 0);
}

TEST_CASE("ellipsoidal regions satisfy the containment bounds in closed form" * doctest::test_suite("properties"))
{
  const TokenBucketParams p = scalar_bucket(1.1, 1.0, 2);
  SynthesisOptions opt;
  opt.region_mode = RegionMode::Ellipsoidal;
  const PeriodicTerminalIngredients ing = synthesize_tb(p, opt);
  REQUIRE(ing.region == RegionKind::Ellipsoidal);
  REQUIRE(ing.alpha > 0.0);
  const Polytope box = p.state_input_box();
  for (int j = 0; j < ing.period; ++j) {
    const Matrix pinv = ing.p[static_cast<std::size_t>(j)].inverse();
    for (Eigen::Index i = 0; i < box.num_rows(); ++i) {
      const Vector c = box.rows.row(i).transpose();
      CHECK(ing.alpha * c.dot(pinv * c) <= 1.0 + 1e-6);
    }
  }
  const Matrix p0inv = ing.p[0].inverse();
  for (Eigen::Index i = 0; i < p.up.num_rows(); ++i) {
    const Vector d = (p.up.rows.row(i) * ing.k).transpose();
    CHECK(ing.alpha * d.dot(p0inv * d) <= 1.0 + 1e-6);
  }
  for (const double m : verify_tb(ing.p, ing.k, p)) { CHECK(m >= -1e-6); }
}

TEST_CASE("scalar actuator synthesis against the closed-form inequality")
{
  const double a = 1.3;
  const double b = 0.6;
  const ActuatorParams p = scalar_actuator(a, b);
  const PeriodicTerminalIngredients ing = synthesize_act(p);
  REQUIRE(ing.p.size() == 1);
  REQUIRE(ing.gains.size() == 1);
  const double pp = ing.p[0](0, 0);
  const double k = ing.gains[0](0, 0);
  CHECK(pp > 0.0);
  CHECK(std::abs(a + b * k) < 1.0);
  const double lhs = (a + b * k) * (a + b * k) * pp - pp + 1.0 + k * k;
  CHECK(lhs <= 1e-6);
  CHECK(verify_act(ing.p, ing.gains, p)[0] == doctest::Approx(-lhs).epsilon(1e-9));
  // The unique stabilizing Riccati solution is the smallest feasible P.
  double riccati = 1.0;
  for (int i = 0; i < 10000; ++i) { riccati = 1.0 + a * a * riccati - a * a * b * b * riccati * riccati / (1.0 + b * b * riccati); }
  CHECK(pp >= riccati - 1e-6);
  // Zero gain on an unstable plant gives no decrease.
  CHECK(verify_act(ing.p, {Matrix::Zero(1, 1)}, p)[0] < 0.0);
}

TEST_CASE("two reactor actuator synthesis")
{
  const ActuatorParams p = reactor_actuators();
  const PeriodicTerminalIngredients& ing = reactor_actuator_ingredients();
  REQUIRE(ing.period == 4);
  REQUIRE(ing.gains.size() == 4);
  for (const auto& pj : ing.p) { CHECK(min_eigenvalue(pj) > 0.0); }
  for (const double m : verify_act(ing.p, ing.gains, p)) { CHECK(m >= -1e-6); }
  CHECK(ing.region == RegionKind::Unbounded);
  CHECK_THROWS_AS(verify_act(ing.p, {ing.gains[0]}, p), InvalidModel);
}

TEST_CASE("certificate JSON round trip" * doctest::test_suite("properties"))
{
  const TokenBucketParams p = scalar_bucket(0.5, 1.0, 2);
  Certificate c;
  c.kind = "token_bucket";
  c.ingredients = synthesize_tb(p);
  c.margins = verify_tb(c.ingredients.p, c.ingredients.k, p);
  c.parameter_hash = parameter_hash(p);
  const nlohmann::json j = c;
  const Certificate back = j.get<Certificate>();
  CHECK(back.kind == c.kind);
  CHECK(back.parameter_hash == c.parameter_hash);
  CHECK(back.margins == c.margins);
  REQUIRE(back.ingredients.p.size() == c.ingredients.p.size());
  for (std::size_t i = 0; i < c.ingredients.p.size(); ++i) { CHECK(back.ingredients.p[i] == c.ingredients.p[i]); }
  CHECK(back.ingredients.k == c.ingredients.k);
  REQUIRE(back.ingredients.family.sets.size() == c.ingredients.family.sets.size());
  CHECK(back.ingredients.family.sets[1].rows == c.ingredients.family.sets[1].rows);
  TokenBucketParams other = p;
  other.c = 3;
  CHECK(parameter_hash(other) != parameter_hash(p));
}
