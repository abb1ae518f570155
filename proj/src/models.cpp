#include "tvmpc/models.hpp"

#include "tvmpc/errors.hpp"

#include <numeric>
#include <string>

namespace tvmpc {

namespace {

void require_square(const Matrix& m, Eigen::Index n, const char* what)
{
  if (m.rows() != n || m.cols() != n) {
    throw InvalidModel(std::string(what) + " must be " + std::to_string(n) + "x" + std::to_string(n));
  }
}

void require_pd(const Matrix& m, const char* what)
{
  if (!is_symmetric(m, 1e-12)) { throw InvalidModel(std::string(what) + " is not symmetric"); }
  if (m.size() > 0 && min_eigenvalue(m) <= 0.0) { throw InvalidModel(std::string(what) + " is not positive definite"); }
}

}  // namespace

Matrix TokenBucketParams::a_tilde() const
{
  Matrix out = Matrix::Zero(nz(), nz());
  out.topLeftCorner(n(), n()) = a;
  return out;
}

Matrix TokenBucketParams::b_tilde() const
{
  Matrix out(nz(), m());
  out << b, Matrix::Identity(m(), m());
  return out;
}

Matrix TokenBucketParams::a_prime() const
{
  Matrix out = Matrix::Zero(nz(), nz());
  out.topLeftCorner(n(), n()) = a;
  out.topRightCorner(n(), m()) = b;
  out.bottomRightCorner(m(), m()) = Matrix::Identity(m(), m());
  return out;
}

Polytope TokenBucketParams::state_input_box() const { return cartesian(xp, up); }

void TokenBucketParams::validate() const
{
  require_finite(a, "A");
  require_finite(b, "B");
  require_square(a, a.rows(), "A");
  if (b.rows() != n()) { throw InvalidModel("B must have as many rows as A"); }
  require_square(q, n(), "Q");
  require_square(r, m(), "R");
  require_pd(q, "Q");
  require_pd(r, "R");
  if (g < 1) { throw InvalidModel("token rate g must be at least 1"); }
  if (c < g) { throw InvalidModel("transmission cost c must be at least g"); }
  if (bucket < c) { throw InvalidModel("bucket capacity b must be at least c"); }
  if (xp.dim != n()) { throw InvalidModel("state constraint set has wrong dimension"); }
  if (up.dim != m()) { throw InvalidModel("input constraint set has wrong dimension"); }
}

Vector TokenBucketState::z() const
{
  Vector out(xp.size() + us.size());
  out << xp, us;
  return out;
}

Eigen::Index ActuatorParams::offset(int sigma) const
{
  if (sigma < 0 || sigma >= period()) { throw InvalidModel("actuator index " + std::to_string(sigma) + " out of range"); }
  return std::accumulate(widths.begin(), widths.begin() + sigma, Eigen::Index{0});
}

Matrix ActuatorParams::r_block(int sigma) const
{
  const Eigen::Index w = widths.at(static_cast<std::size_t>(sigma));
  return r.block(offset(sigma), offset(sigma), w, w);
}

void ActuatorParams::validate() const
{
  require_finite(a, "A");
  require_finite(b, "B");
  require_square(a, a.rows(), "A");
  if (b.rows() != n()) { throw InvalidModel("B must have as many rows as A"); }
  require_square(q, n(), "Q");
  require_square(r, m(), "R");
  require_pd(q, "Q");
  require_pd(r, "R");
  if (widths.empty()) { throw InvalidModel("at least one actuator is required"); }
  for (const int w : widths) {
    if (w < 1) { throw InvalidModel("actuator widths must be at least 1"); }
  }
  if (std::accumulate(widths.begin(), widths.end(), Eigen::Index{0}) != m()) {
    throw InvalidModel("actuator widths do not add up to the input dimension");
  }
  if (base_schedule.size() != widths.size()) { throw InvalidModel("base schedule length must equal the number of actuators"); }
  for (const int s : base_schedule) {
    if (s < 0 || s >= period()) { throw InvalidModel("base schedule entry out of range"); }
  }
  // R must not couple different actuators.
  for (int s = 0; s < period(); ++s) {
    for (int t = 0; t < period(); ++t) {
      if (s == t) { continue; }
      const auto ws = widths[static_cast<std::size_t>(s)];
      const auto wt = widths[static_cast<std::size_t>(t)];
      if (r.block(offset(s), offset(t), ws, wt).cwiseAbs().maxCoeff() != 0.0) {
        throw InvalidModel("R must be block diagonal with respect to the actuator widths");
      }
    }
  }
}

double PeriodicTerminalIngredients::cost(int j, const Vector& z) const { return z.dot(cost_matrix(j) * z); }

bool PeriodicTerminalIngredients::in_region(int j, const Vector& z, double tol) const
{
  switch (region) {
    case RegionKind::Polytopic: return contains(family.sets.at(static_cast<std::size_t>(j)), z, tol);
    case RegionKind::Ellipsoidal: return cost(j, z) <= alpha * (1.0 + tol);
    case RegionKind::Unbounded: return true;
  }
  return false;
}

TokenBucketState tb_step(const TokenBucketState& s, const TokenBucketInput& u, const TokenBucketParams& p)
{
  if (u.gamma != 0 && u.gamma != 1) { throw InvalidModel("transmission bit must be 0 or 1"); }
  // Tokens arriving during the step count towards the transmission, so the level may not drop
  // below zero.
  if (u.gamma == 1 && s.beta + p.g < p.c) {
    throw InsufficientTokens("transmission requested with " + std::to_string(s.beta) + " tokens, " +
                             std::to_string(p.c - p.g) + " required");
  }
  TokenBucketState next;
  next.us = u.gamma == 1 ? u.uc : s.us;
  next.xp = p.a * s.xp + p.b * next.us;
  next.beta = std::min(s.beta + p.g - u.gamma * p.c, p.bucket);
  return next;
}

double tb_stage_cost(const TokenBucketState& s, const TokenBucketInput& u, const TokenBucketParams& p)
{
  const Vector& applied = u.gamma == 1 ? u.uc : s.us;
  return s.xp.dot(p.q * s.xp) + applied.dot(p.r * applied);
}

double tb_storage(const TokenBucketState& s, const TokenBucketParams& p) { return s.us.dot(p.r * s.us); }

bool tb_terminal_membership(const TokenBucketState& s, int j, const PeriodicTerminalIngredients& ing,
                            const TokenBucketParams& p, double zero_tol)
{
  if (j < 0 || j >= p.period()) { throw InvalidModel("terminal phase out of range"); }
  const Vector z = s.z();
  const int tau = p.threshold(j);
  if (s.beta < tau) { return z.cwiseAbs().maxCoeff() <= zero_tol; }
  return ing.in_region(j, z);
}

TokenBucketInput tb_terminal_controller(const TokenBucketState& s, int j, const PeriodicTerminalIngredients& ing,
                                        const TokenBucketParams& p, double zero_tol)
{
  if (!tb_terminal_membership(s, j, ing, p, zero_tol)) {
    throw NotInTerminalSet("state is not in the terminal set of phase " + std::to_string(j));
  }
  TokenBucketInput u{Vector::Zero(p.m()), 0};
  if (j == 0 && s.beta >= p.threshold(0)) {
    u.uc = ing.k * s.z();
    u.gamma = 1;
  }
  return u;
}

Matrix act_pi(int sigma, const std::vector<int>& widths)
{
  if (sigma < 0 || static_cast<std::size_t>(sigma) >= widths.size()) {
    throw InvalidModel("actuator index " + std::to_string(sigma) + " out of range");
  }
  const Eigen::Index m = std::accumulate(widths.begin(), widths.end(), Eigen::Index{0});
  const Eigen::Index off = std::accumulate(widths.begin(), widths.begin() + sigma, Eigen::Index{0});
  const Eigen::Index w = widths[static_cast<std::size_t>(sigma)];
  Matrix pi = Matrix::Zero(w, m);
  pi.middleCols(off, w) = Matrix::Identity(w, w);
  return pi;
}

Matrix act_omega(int sigma, const std::vector<int>& widths)
{
  const Matrix pi = act_pi(sigma, widths);
  return pi.transpose() * pi;
}

Vector act_step(const Vector& x, const Vector& u, int sigma, const ActuatorParams& p)
{
  return p.a * x + p.b * (act_omega(sigma, p.widths) * u);
}

double act_stage_cost(const Vector& x, const Vector& u, int sigma, const ActuatorParams& p)
{
  const Vector v = act_omega(sigma, p.widths) * u;
  return x.dot(p.q * x) + v.dot(p.r * v);
}

std::pair<Matrix, Matrix> batch_reactor_continuous()
{
  Matrix ac(4, 4);
  ac << 1.38, -0.2077, 6.715, -5.676,  //
      -0.5814, -4.29, 0.0, 0.675,      //
      1.067, 4.273, -6.654, 5.893,     //
      0.048, 4.273, 1.343, -2.104;
  Matrix bc(4, 2);
  bc << 0.0, 0.0,  //
      5.679, 0.0,  //
      1.136, -3.146,  //
      1.136, 0.0;
  return {ac, bc};
}

std::pair<Matrix, Matrix> batch_reactor(double h)
{
  const auto [ac, bc] = batch_reactor_continuous();
  return zoh_discretize(ac, bc, h);
}

std::pair<Matrix, Matrix> two_batch_reactors(double h)
{
  const auto [a, b] = batch_reactor(h);
  return {block_diag(a, a), block_diag(b, b)};
}

}  // namespace tvmpc
