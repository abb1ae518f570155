#include "doctest.h"

#include "fixtures.hpp"
#include "tvmpc/errors.hpp"
#include "tvmpc/lp.hpp"
#include "tvmpc/models.hpp"
#include "tvmpc/synthesis.hpp"

#include <random>

using namespace tvmpc;
using namespace tvmpc::testing;

namespace {

TokenBucketParams scalar_bucket(int g, int c, int b)
{
  TokenBucketParams p;
  p.a = scalar(0.9);
  p.b = scalar(1.0);
  p.q = scalar(1.0);
  p.r = scalar(1.0);
  p.g = g;
  p.c = c;
  p.bucket = b;
  p.xp = Polytope::box(vec1(5.0));
  p.up = Polytope::box(vec1(1.0));
  return p;
}

TokenBucketState scalar_state(double x, double us, int beta) { return {vec1(x), vec1(us), beta}; }

/// Terminal ingredients whose regions are the box |z_i| <= 1 in every phase.
PeriodicTerminalIngredients unit_box_ingredients(const TokenBucketParams& p)
{
  PeriodicTerminalIngredients ing;
  ing.period = p.period();
  ing.region = RegionKind::Polytopic;
  ing.k = Matrix::Constant(p.m(), p.nz(), -0.25);
  for (int j = 0; j < ing.period; ++j) {
    ing.p.push_back(Matrix::Identity(p.nz(), p.nz()));
    ing.family.sets.push_back(Polytope::box(Vector::Ones(p.nz())));
  }
  return ing;
}

/// Maximizer of a random linear function over the polytope: a vertex.
Vector random_vertex(const Polytope& z, std::mt19937& rng)
{
  std::normal_distribution<double> nd;
  Vector c(z.dim);
  for (Eigen::Index i = 0; i < c.size(); ++i) { c(i) = nd(rng); }
  const LpResult r = solve_lp(LinearProgram(c, z.rows, Vector::Ones(z.num_rows())));
  REQUIRE(r.status == LpStatus::Optimal);
  return r.z;
}

}  // namespace

TEST_CASE("bucket level examples")
{
  const TokenBucketParams p = scalar_bucket(1, 8, 22);
  CHECK(p.period() == 8);
  CHECK(tb_step(scalar_state(0, 0, 22), {vec1(0), 1}, p).beta == 15);
  CHECK(tb_step(scalar_state(0, 0, 22), {vec1(0), 0}, p).beta == 22);
  CHECK(tb_step(scalar_state(0, 0, 21), {vec1(0), 0}, p).beta == 22);
  CHECK(tb_step(scalar_state(0, 0, 7), {vec1(0), 1}, p).beta == 0);
  CHECK_THROWS_AS(tb_step(scalar_state(0, 0, 5), {vec1(0), 1}, p), InsufficientTokens);
  CHECK_THROWS_AS(tb_step(scalar_state(0, 0, 0), {vec1(0), 1}, p), InsufficientTokens);
  CHECK_THROWS_AS(tb_step(scalar_state(0, 0, 10), {vec1(0), 2}, p), InvalidModel);
  CHECK(scalar_bucket(3, 8, 10).period() == 3);
  CHECK(scalar_bucket(2, 2, 4).period() == 1);
}

TEST_CASE("plant update uses the new held input")
{
  const TokenBucketParams p = scalar_bucket(1, 2, 4);
  const TokenBucketState held = tb_step(scalar_state(1.0, 0.5, 0), {vec1(-3.0), 0}, p);
  CHECK(held.us(0) == 0.5);
  CHECK(held.xp(0) == doctest::Approx(0.9 + 0.5));
  const TokenBucketState sent = tb_step(scalar_state(1.0, 0.5, 3), {vec1(-0.25), 1}, p);
  CHECK(sent.us(0) == -0.25);
  CHECK(sent.xp(0) == doctest::Approx(0.9 - 0.25));
  CHECK(sent.beta == 2);
}

TEST_CASE("bucket levels stay in range over all levels and decisions" * doctest::test_suite("properties"))
{
  for (int g = 1; g <= 3; ++g) {
    for (int c = g; c <= 9; ++c) {
      for (int b = c; b <= c + 4; ++b) {
        const TokenBucketParams p = scalar_bucket(g, c, b);
        for (int beta = 0; beta <= b; ++beta) {
          for (int gamma = 0; gamma <= 1; ++gamma) {
            const TokenBucketState s = scalar_state(0, 0, beta);
            if (gamma == 1 && beta + g < c) {
              CHECK_THROWS_AS(tb_step(s, {vec1(0), 1}, p), InsufficientTokens);
              continue;
            }
            const int next = tb_step(s, {vec1(0), gamma}, p).beta;
            CHECK(next >= 0);
            CHECK(next <= b);
            CHECK(next == std::min(beta + g - gamma * c, b));
          }
        }
      }
    }
  }
}

TEST_CASE("stage cost examples")
{
  TokenBucketParams p = scalar_bucket(1, 2, 4);
  p.q = scalar(2.0);
  p.r = scalar(3.0);
  CHECK(tb_stage_cost(scalar_state(1.0, 0.5, 0), {vec1(7.0), 0}, p) == doctest::Approx(2.0 + 3.0 * 0.25));
  CHECK(tb_stage_cost(scalar_state(1.0, 0.5, 4), {vec1(-1.0), 1}, p) == doctest::Approx(2.0 + 3.0));
  CHECK(tb_stage_cost(scalar_state(0.0, 0.0, 4), {vec1(0.0), 1}, p) == 0.0);
  CHECK(tb_storage(scalar_state(4.0, 2.0, 0), p) == doctest::Approx(12.0));
}

TEST_CASE("stage cost is nonnegative and zero only at the origin" * doctest::test_suite("properties"))
{
  const TokenBucketParams p = reactor_token_bucket();
  std::mt19937 rng(7);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 500; ++t) {
    TokenBucketState s{Vector(4), Vector(2), 22};
    TokenBucketInput u{Vector(2), t % 2};
    for (int i = 0; i < 4; ++i) { s.xp(i) = nd(rng); }
    for (int i = 0; i < 2; ++i) {
      s.us(i) = nd(rng);
      u.uc(i) = nd(rng);
    }
    CHECK(tb_stage_cost(s, u, p) > 0.0);
  }
  CHECK(tb_stage_cost({Vector::Zero(4), Vector::Zero(2), 0}, {Vector::Ones(2), 0}, p) == 0.0);
  CHECK(tb_stage_cost({Vector::Zero(4), Vector::Ones(2), 22}, {Vector::Zero(2), 1}, p) == 0.0);
}

TEST_CASE("dissipation inequality with storage u_s' R u_s" * doctest::test_suite("properties"))
{
  const TokenBucketParams p = reactor_token_bucket();
  std::mt19937 rng(11);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 1000; ++t) {
    TokenBucketState s{Vector(4), Vector(2), 22};
    TokenBucketInput u{Vector(2), t % 2};
    for (int i = 0; i < 4; ++i) { s.xp(i) = (t % 5 == 0) ? 0.0 : nd(rng); }
    for (int i = 0; i < 2; ++i) {
      s.us(i) = (t % 7 == 0) ? 0.0 : nd(rng);
      u.uc(i) = nd(rng);
    }
    const TokenBucketState next = tb_step(s, u, p);
    const double slack = tb_stage_cost(s, u, p) + tb_storage(s, p) - tb_storage(next, p);
    // The slack telescopes to x_p' Q x_p + u_s' R u_s with the held input before the step.
    const double expected = s.xp.dot(p.q * s.xp) + s.us.dot(p.r * s.us);
    CHECK(slack >= -1e-9);
    CHECK(slack == doctest::Approx(expected).epsilon(1e-12));
    if (t % 35 == 0) { CHECK(std::abs(slack) <= 1e-12); }
  }
}

TEST_CASE("terminal membership and controller on unit boxes")
{
  const TokenBucketParams p = scalar_bucket(1, 3, 5);
  const PeriodicTerminalIngredients ing = unit_box_ingredients(p);
  REQUIRE(p.period() == 3);
  CHECK(p.threshold(0) == 2);
  CHECK(p.threshold(1) == 0);
  CHECK(p.threshold(2) == 1);

  // Phase 0, enough tokens: box branch, controller transmits K z.
  const TokenBucketState in0 = scalar_state(0.5, -0.5, 2);
  CHECK(tb_terminal_membership(in0, 0, ing, p));
  const TokenBucketInput u0 = tb_terminal_controller(in0, 0, ing, p);
  CHECK(u0.gamma == 1);
  CHECK(u0.uc(0) == doctest::Approx(-0.25 * 0.5 + -0.25 * -0.5));
  // Phase 0, too few tokens: only the origin.
  CHECK_FALSE(tb_terminal_membership(scalar_state(0.5, 0.0, 1), 0, ing, p));
  CHECK(tb_terminal_membership(scalar_state(0.0, 0.0, 1), 0, ing, p));
  CHECK(tb_terminal_controller(scalar_state(0.0, 0.0, 1), 0, ing, p).gamma == 0);
  CHECK_THROWS_AS(tb_terminal_controller(scalar_state(0.5, 0.0, 1), 0, ing, p), NotInTerminalSet);
  // Other phases never transmit.
  CHECK(tb_terminal_membership(scalar_state(0.9, 0.9, 0), 1, ing, p));
  CHECK(tb_terminal_controller(scalar_state(0.9, 0.9, 0), 1, ing, p).gamma == 0);
  CHECK_FALSE(tb_terminal_membership(scalar_state(1.5, 0.0, 5), 2, ing, p));
  CHECK_FALSE(tb_terminal_membership(scalar_state(0.1, 0.0, 0), 2, ing, p));
  CHECK_THROWS_AS(tb_terminal_membership(scalar_state(0, 0, 0), 3, ing, p), InvalidModel);
}

TEST_CASE("actuator selector algebra" * doctest::test_suite("properties"))
{
  const std::vector<int> widths{2, 1, 3};
  for (int s = 0; s < 3; ++s) {
    const Matrix omega = act_omega(s, widths);
    const Matrix pi = act_pi(s, widths);
    CHECK(omega.rows() == 6);
    CHECK(pi.rows() == widths[static_cast<std::size_t>(s)]);
    CHECK((omega * omega - omega).norm() == 0.0);
    CHECK((pi * pi.transpose() - Matrix::Identity(pi.rows(), pi.rows())).norm() == 0.0);
    CHECK((pi.transpose() * pi - omega).norm() == 0.0);
  }
  Matrix sum = Matrix::Zero(6, 6);
  for (int s = 0; s < 3; ++s) { sum += act_omega(s, widths); }
  CHECK((sum - Matrix::Identity(6, 6)).norm() == 0.0);
  CHECK_THROWS_AS(act_omega(3, widths), InvalidModel);
  CHECK_THROWS_AS(act_pi(-1, widths), InvalidModel);
}

TEST_CASE("actuator step and cost examples")
{
  ActuatorParams p;
  p.a = Matrix::Identity(2, 2);
  p.b = Matrix::Identity(2, 2);
  p.q = Matrix::Identity(2, 2);
  p.r = Eigen::Vector2d(2.0, 5.0).asDiagonal().toDenseMatrix();
  p.widths = {1, 1};
  p.base_schedule = {0, 1};
  const Vector x = Eigen::Vector2d(1.0, -1.0);
  const Vector u = Eigen::Vector2d(0.5, 3.0);
  const Vector x0 = act_step(x, u, 0, p);
  CHECK(x0(0) == doctest::Approx(1.5));
  CHECK(x0(1) == doctest::Approx(-1.0));
  const Vector x1 = act_step(x, u, 1, p);
  CHECK(x1(0) == doctest::Approx(1.0));
  CHECK(x1(1) == doctest::Approx(2.0));
  CHECK(act_stage_cost(x, u, 0, p) == doctest::Approx(2.0 + 2.0 * 0.25));
  CHECK(act_stage_cost(x, u, 1, p) == doctest::Approx(2.0 + 5.0 * 9.0));

  ActuatorParams s;
  s.a = scalar(1.0);
  s.b = scalar(1.0);
  s.q = scalar(1.0);
  s.r = scalar(1.0);
  s.widths = {1};
  s.base_schedule = {0};
  CHECK(act_step(vec1(1.0), vec1(-0.5), 0, s)(0) == doctest::Approx(0.5));
  CHECK(act_stage_cost(vec1(1.0), vec1(-0.5), 0, s) == doctest::Approx(1.25));
}

TEST_CASE("wrap_phase" * doctest::test_suite("properties"))
{
  for (int m = 1; m <= 5; ++m) {
    for (long j = -3L * m; j <= 3L * m; ++j) {
      const int w = wrap_phase(j, m);
      CHECK(w >= 0);
      CHECK(w < m);
      CHECK(wrap_phase(j + m, m) == w);
      CHECK((j - w) % m == 0);
    }
  }
}

TEST_CASE("batch reactor discretization")
{
  const auto [a, b] = batch_reactor(0.1);
  CHECK(a.rows() == 4);
  CHECK(b.cols() == 2);
  CHECK(spectral_radius(a) > 1.0);
  const auto [a2, b2] = two_batch_reactors(0.1);
  CHECK(a2.rows() == 8);
  CHECK(b2.cols() == 4);
  CHECK((a2.topLeftCorner(4, 4) - a).norm() == 0.0);
  CHECK((a2.bottomRightCorner(4, 4) - a).norm() == 0.0);
  CHECK(a2.topRightCorner(4, 4).norm() == 0.0);
}

TEST_CASE("periodic invariance of the synthesized terminal sets" * doctest::test_suite("properties"))
{
  TokenBucketParams p = scalar_bucket(1, 3, 5);
  p.a = scalar(1.1);
  const PeriodicTerminalIngredients ing = synthesize_tb(p);
  REQUIRE(ing.period == 3);
  REQUIRE(ing.region == RegionKind::Polytopic);
  std::mt19937 rng(3);
  for (int j = 0; j < ing.period; ++j) {
    const int jn = wrap_phase(j + 1, ing.period);
    for (int trial = 0; trial < 12; ++trial) {
      const Vector z = random_vertex(ing.family.sets[static_cast<std::size_t>(j)], rng);
      for (int beta = 0; beta <= p.bucket; ++beta) {
        TokenBucketState s = scalar_state(z(0), z(1), beta);
        if (beta < p.threshold(j)) {
          s.xp.setZero();
          s.us.setZero();
        }
        REQUIRE(tb_terminal_membership(s, j, ing, p, 1e-9));
        const TokenBucketInput u = tb_terminal_controller(s, j, ing, p);
        const TokenBucketState next = tb_step(s, u, p);
        CHECK(contains(p.xp, next.xp, 1e-9));
        CHECK(contains(p.up, next.us, 1e-9));
        if (next.beta >= p.threshold(jn)) {
          CHECK(ing.family.sets[static_cast<std::size_t>(jn)].dim == 2);
          CHECK(contains(ing.family.sets[static_cast<std::size_t>(jn)], next.z(), 1e-7));
        } else {
          CHECK(next.z().cwiseAbs().maxCoeff() == 0.0);
        }
      }
    }
  }
}
