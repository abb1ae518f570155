#include "tvmpc/mpc.hpp"

#include "tvmpc/errors.hpp"
#include "tvmpc/qp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

namespace tvmpc {

void MpcConfig::validate(int period) const
{
  if (horizon < 1) { throw ConfigError("mpc.N must be at least 1"); }
  if (initial_phase < 0 || initial_phase >= period) {
    throw ConfigError("mpc.j0 must lie in [0, " + std::to_string(period - 1) + "]");
  }
  if (mode == MpcMode::MultiStep && horizon < period) {
    throw ConfigError("mpc.N must be at least the period " + std::to_string(period) + " for the multi-step mode");
  }
  if (!(tie_tolerance >= 0.0)) { throw ConfigError("mpc.tie_tolerance must be nonnegative"); }
}

int MpcConfig::terminal_phase(long k, int period) const
{
  if (mode == MpcMode::MultiStep) { return 0; }
  return wrap_phase(static_cast<long>(initial_phase) + k, period);
}

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Depth-first search over integer schedules shared by both setups.
struct SearchSpec
{
  int horizon = 1;
  int alphabet = 2;
  /// Cheap admissibility test of a prefix (bucket feasibility).
  std::function<bool(const std::vector<int>&)> admissible;
  /// Lower bound on the value of every completion of a strict prefix; +inf when none is feasible.
  std::function<double(const std::vector<int>&)> bound;
  std::function<SchedulePlan(const std::vector<int>&)> leaf;
  /// Child tried first at each depth (branch-and-bound only).
  std::vector<int> preferred;
};

class Search
{
public:
  Search(const SearchSpec& spec, ScheduleSearch mode, double tol) : spec_(spec), mode_(mode), tol_(tol) {}

  void offer(SchedulePlan plan)
  {
    if (!plan.feasible) { return; }
    if (plan.value < best_) { best_ = plan.value; }
    if (plan.value <= best_ + tol_) { near_.push_back(std::move(plan)); }
  }

  void run()
  {
    std::vector<int> prefix;
    prefix.reserve(static_cast<std::size_t>(spec_.horizon));
    visit(prefix);
  }

  /// Lexicographically smallest schedule among those within the tie tolerance of the optimum.
  SchedulePlan result() const
  {
    const SchedulePlan* pick = nullptr;
    for (const auto& plan : near_) {
      if (plan.value > best_ + tol_) { continue; }
      if (pick == nullptr || plan.schedule < pick->schedule) { pick = &plan; }
    }
    return pick != nullptr ? *pick : SchedulePlan{};
  }

  long nodes = 0;

private:
  void visit(std::vector<int>& prefix)
  {
    if (static_cast<int>(prefix.size()) == spec_.horizon) {
      ++nodes;
      offer(spec_.leaf(prefix));
      return;
    }
    const auto depth = prefix.size();
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(spec_.alphabet));
    if (mode_ == ScheduleSearch::BranchAndBound && depth < spec_.preferred.size()) {
      order.push_back(spec_.preferred[depth]);
    }
    for (int a = 0; a < spec_.alphabet; ++a) {
      if (std::find(order.begin(), order.end(), a) == order.end()) { order.push_back(a); }
    }
    for (const int a : order) {
      prefix.push_back(a);
      if (!spec_.admissible || spec_.admissible(prefix)) {
        bool keep = true;
        if (mode_ == ScheduleSearch::BranchAndBound && spec_.bound && static_cast<int>(prefix.size()) < spec_.horizon) {
          ++nodes;
          keep = !(spec_.bound(prefix) > best_ + tol_);
        }
        if (keep) { visit(prefix); }
      }
      prefix.pop_back();
    }
  }

  const SearchSpec& spec_;
  ScheduleSearch mode_;
  double tol_;
  double best_ = kInf;
  std::vector<SchedulePlan> near_;
};

// ---- token bucket condensing -------------------------------------------------------------------

/// Predicted (x_p, u_s) as affine functions z(i) = off[i] + gain[i] v of the stacked transmitted
/// inputs v.
struct TbCondensed
{
  std::vector<Vector> off;
  std::vector<Matrix> gain;
  Eigen::Index nv = 0;
};

TbCondensed condense_tb(const Vector& z0, const std::vector<int>& gamma, const TokenBucketParams& p)
{
  const Eigen::Index m = p.m();
  const Eigen::Index nz = p.nz();
  TbCondensed c;
  c.nv = m * std::count(gamma.begin(), gamma.end(), 1);
  c.off.push_back(z0);
  c.gain.push_back(Matrix::Zero(nz, c.nv));
  const Matrix at = p.a_tilde();
  const Matrix bt = p.b_tilde();
  const Matrix ap = p.a_prime();
  Eigen::Index slot = 0;
  for (const int g : gamma) {
    if (g == 1) {
      c.off.push_back(at * c.off.back());
      Matrix next = at * c.gain.back();
      next.middleCols(slot, m) += bt;
      c.gain.push_back(std::move(next));
      slot += m;
    } else {
      c.off.push_back(ap * c.off.back());
      c.gain.push_back(ap * c.gain.back());
    }
  }
  return c;
}

/// Collects inequality rows a v <= b, dropping constant rows that hold and flagging those that
/// do not. Rows are normalized so the solver tolerance acts on comparable scales.
class RowCollector
{
public:
  explicit RowCollector(Eigen::Index nv) : nv_(nv) {}

  void add(const Matrix& a, const Vector& b)
  {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double norm = a.row(i).norm();
      if (norm < 1e-12) {
        if (b(i) < -1e-9) { violated_ = true; }
        continue;
      }
      const double s = std::max(1.0, norm);
      rows_.push_back(a.row(i).transpose() / s);
      rhs_.push_back(b(i) / s);
    }
  }

  bool violated() const { return violated_; }
  Matrix matrix() const
  {
    Matrix out(static_cast<Eigen::Index>(rows_.size()), nv_);
    for (std::size_t i = 0; i < rows_.size(); ++i) { out.row(static_cast<Eigen::Index>(i)) = rows_[i].transpose(); }
    return out;
  }
  Vector rhs() const { return Eigen::Map<const Vector>(rhs_.data(), static_cast<Eigen::Index>(rhs_.size())); }

private:
  Eigen::Index nv_;
  std::vector<Vector> rows_;
  std::vector<double> rhs_;
  bool violated_ = false;
};

/// Either the optimal value and minimizer of a token bucket subproblem or infeasibility.
struct TbSubproblem
{
  bool feasible = false;
  Vector v;
  double value = kInf;
};

enum class TerminalBranch { None, Region, Origin };

TbSubproblem solve_tb_subproblem(const TbCondensed& c, const TokenBucketParams& p, TerminalBranch branch,
                                 const PeriodicTerminalIngredients& ing, int phase)
{
  const Eigen::Index n = p.n();
  const Eigen::Index m = p.m();
  const Eigen::Index nz = p.nz();
  const auto t = c.off.size() - 1;
  Matrix qz = Matrix::Zero(nz, nz);
  qz.topLeftCorner(n, n) = p.q;
  Matrix ru = Matrix::Zero(nz, nz);
  ru.bottomRightCorner(m, m) = p.r;

  const Polytope box = p.state_input_box();
  TbSubproblem out;
  if (!contains(box, c.off[0], 1e-9)) { return out; }

  Matrix h = Matrix::Zero(c.nv, c.nv);
  Vector f = Vector::Zero(c.nv);
  double constant = 0.0;
  auto add_quadratic = [&](const Matrix& w, std::size_t i) {
    const Matrix wg = w * c.gain[i];
    h += 2.0 * c.gain[i].transpose() * wg;
    f += 2.0 * wg.transpose() * c.off[i];
    constant += c.off[i].dot(w * c.off[i]);
  };
  for (std::size_t i = 0; i < t; ++i) {
    add_quadratic(qz, i);
    add_quadratic(ru, i + 1);
  }
  const bool terminal = branch != TerminalBranch::None;
  if (terminal) { add_quadratic(ing.cost_matrix(phase), t); }

  RowCollector rows(c.nv);
  for (std::size_t i = 1; i <= t; ++i) {
    rows.add(box.rows * c.gain[i], Vector::Ones(box.num_rows()) - box.rows * c.off[i]);
  }
  Matrix a_eq(0, c.nv);
  Vector b_eq(0);
  if (branch == TerminalBranch::Origin) {
    a_eq = c.gain[t];
    b_eq = -c.off[t];
  } else if (branch == TerminalBranch::Region && ing.region == RegionKind::Polytopic) {
    const Polytope& zp = ing.family.sets.at(static_cast<std::size_t>(phase));
    rows.add(zp.rows * c.gain[t], Vector::Ones(zp.num_rows()) - zp.rows * c.off[t]);
  }
  if (rows.violated()) { return out; }

  QuadraticProgram qp(h, f);
  qp.a_ineq = rows.matrix();
  qp.b_ineq = rows.rhs();
  qp.a_eq = a_eq;
  qp.b_eq = b_eq;

  auto finish = [&](const Vector& v) {
    out.feasible = true;
    out.v = v;
    out.value = 0.5 * v.dot(h * v) + f.dot(v) + constant;
    return out;
  };

  if (c.nv == 0) {
    if (branch == TerminalBranch::Origin && c.off[t].cwiseAbs().maxCoeff() > 1e-9) { return out; }
    if (branch == TerminalBranch::Region && !ing.in_region(phase, c.off[t])) { return out; }
    return finish(Vector::Zero(0));
  }

  if (branch == TerminalBranch::Region && ing.region == RegionKind::Ellipsoidal) {
    // Convex quadratic terminal constraint handled through its Lagrange multiplier: the
    // terminal level decreases monotonically in the multiplier.
    const Matrix& pt = ing.cost_matrix(phase);
    const Matrix gpg = c.gain[t].transpose() * pt * c.gain[t];
    const Vector gpo = c.gain[t].transpose() * pt * c.off[t];
    auto level = [&](const Vector& v) {
      const Vector z = c.off[t] + c.gain[t] * v;
      return z.dot(pt * z);
    };
    auto solve_with = [&](double lambda) {
      QuadraticProgram q = qp;
      q.hessian = h + 2.0 * lambda * gpg;
      q.linear = f + 2.0 * lambda * gpo;
      return solve_qp(q);
    };
    const QpResult r0 = solve_with(0.0);
    if (r0.status != QpStatus::Optimal) { return out; }
    if (level(r0.z) <= ing.alpha) { return finish(r0.z); }
    double lo = 0.0;
    double hi = 1.0;
    QpResult rhi = solve_with(hi);
    while (rhi.status == QpStatus::Optimal && level(rhi.z) > ing.alpha) {
      lo = hi;
      hi *= 4.0;
      if (hi > 1e14) { return out; }
      rhi = solve_with(hi);
    }
    if (rhi.status != QpStatus::Optimal) { return out; }
    for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      QpResult r = solve_with(mid);
      if (r.status != QpStatus::Optimal) { return out; }
      if (level(r.z) > ing.alpha) {
        lo = mid;
      } else {
        hi = mid;
        rhi = std::move(r);
      }
    }
    return finish(rhi.z);
  }

  const QpResult r = solve_qp(qp);
  if (r.status != QpStatus::Optimal) { return out; }
  return finish(r.z);
}

TerminalBranch terminal_branch_tb(int beta_n, int phase, const TokenBucketParams& p)
{
  return beta_n >= p.threshold(phase) ? TerminalBranch::Region : TerminalBranch::Origin;
}

SearchSpec tb_search_spec(const TokenBucketState& x, int horizon, int phase, const PeriodicTerminalIngredients& ing,
                          const TokenBucketParams& p)
{
  SearchSpec spec;
  spec.horizon = horizon;
  spec.alphabet = 2;
  const Vector z0 = x.z();
  spec.admissible = [beta0 = x.beta, &p](const std::vector<int>& prefix) {
    return bucket_trajectory(beta0, prefix, p).feasible();
  };
  spec.bound = [z0, &ing, &p](const std::vector<int>& prefix) {
    const TbSubproblem s = solve_tb_subproblem(condense_tb(z0, prefix, p), p, TerminalBranch::None, ing, 0);
    return s.feasible ? s.value : kInf;
  };
  spec.leaf = [&x, phase, &ing, &p](const std::vector<int>& gamma) {
    return solve_fixed_schedule_tb(x, gamma, phase, ing, p);
  };
  return spec;
}

MpcSolution run_tb_search(const TokenBucketState& x, int phase, const MpcConfig& cfg,
                          const PeriodicTerminalIngredients& ing, const TokenBucketParams& p,
                          const std::vector<int>* candidate)
{
  const auto start = Clock::now();
  SearchSpec spec = tb_search_spec(x, cfg.horizon, phase, ing, p);
  Search search(spec, cfg.search, cfg.tie_tolerance);
  if (candidate != nullptr) {
    spec.preferred = *candidate;
    if (bucket_trajectory(x.beta, *candidate, p).feasible()) {
      ++search.nodes;
      search.offer(solve_fixed_schedule_tb(x, *candidate, phase, ing, p));
    }
  }
  search.run();
  MpcSolution sol;
  sol.plan = search.result();
  sol.value = sol.plan.value;
  sol.nodes = search.nodes;
  sol.terminal_phase = phase;
  sol.solve_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return sol;
}

}  // namespace

// ---- token bucket --------------------------------------------------------------------------------

BucketTrajectory bucket_trajectory(int beta0, const std::vector<int>& gamma, const TokenBucketParams& p)
{
  BucketTrajectory out;
  out.levels.reserve(gamma.size() + 1);
  out.levels.push_back(beta0);
  int beta = beta0;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    if (gamma[i] == 1 && beta + p.g < p.c) {
      out.infeasible_step = static_cast<int>(i);
      return out;
    }
    beta = std::min(beta + p.g - gamma[i] * p.c, p.bucket);
    out.levels.push_back(beta);
  }
  return out;
}

void for_each_feasible_schedule(int beta0, int n, const TokenBucketParams& p,
                                const std::function<bool(const std::vector<int>&)>& visit)
{
  std::vector<int> gamma;
  gamma.reserve(static_cast<std::size_t>(n));
  bool go_on = true;
  std::function<void(int)> rec = [&](int beta) {
    if (!go_on) { return; }
    if (static_cast<int>(gamma.size()) == n) {
      go_on = visit(gamma);
      return;
    }
    for (int g = 0; g <= 1 && go_on; ++g) {
      if (g == 1 && beta + p.g < p.c) { continue; }
      gamma.push_back(g);
      rec(std::min(beta + p.g - g * p.c, p.bucket));
      gamma.pop_back();
    }
  };
  rec(beta0);
}

std::vector<std::vector<int>> feasible_schedules_tb(int beta0, int n, const TokenBucketParams& p)
{
  std::vector<std::vector<int>> out;
  for_each_feasible_schedule(beta0, n, p, [&](const std::vector<int>& g) {
    out.push_back(g);
    return true;
  });
  return out;
}

SchedulePlan solve_fixed_schedule_tb(const TokenBucketState& x, const std::vector<int>& gamma, int phase,
                                     const PeriodicTerminalIngredients& ing, const TokenBucketParams& p)
{
  SchedulePlan plan;
  plan.schedule = gamma;
  const BucketTrajectory bt = bucket_trajectory(x.beta, gamma, p);
  if (!bt.feasible()) { return plan; }
  plan.levels = bt.levels;
  const TbCondensed c = condense_tb(x.z(), gamma, p);
  const TbSubproblem s = solve_tb_subproblem(c, p, terminal_branch_tb(bt.levels.back(), phase, p), ing, phase);
  if (!s.feasible) { return plan; }
  plan.feasible = true;
  plan.value = s.value;
  Eigen::Index slot = 0;
  for (const int g : gamma) {
    if (g == 1) {
      plan.inputs.push_back(s.v.segment(slot, p.m()));
      slot += p.m();
    } else {
      plan.inputs.push_back(Vector::Zero(p.m()));
    }
  }
  for (std::size_t i = 0; i < c.off.size(); ++i) { plan.states.push_back(c.off[i] + c.gain[i] * s.v); }
  return plan;
}

std::vector<int> shifted_schedule_tb(const MpcSolution& previous, const TokenBucketParams& p)
{
  const auto& s = previous.plan.schedule;
  std::vector<int> out(s.begin() + (s.empty() ? 0 : 1), s.end());
  const int beta_n = previous.plan.levels.empty() ? 0 : previous.plan.levels.back();
  out.push_back(previous.terminal_phase == 0 && beta_n >= p.threshold(0) ? 1 : 0);
  return out;
}

MpcSolution solve_tv_mpc_tb(const TokenBucketState& x, long k, const MpcConfig& cfg,
                            const PeriodicTerminalIngredients& ing, const TokenBucketParams& p,
                            const MpcSolution* previous)
{
  if (cfg.mode != MpcMode::TimeVarying) { throw ConfigError("solve_tv_mpc_tb requires the time-varying mode"); }
  cfg.validate(p.period());
  const int phase = cfg.terminal_phase(k, p.period());
  std::vector<int> candidate;
  const bool warm = cfg.warm_start && previous != nullptr && previous->feasible() &&
                    static_cast<int>(previous->plan.schedule.size()) == cfg.horizon;
  if (warm) { candidate = shifted_schedule_tb(*previous, p); }
  return run_tb_search(x, phase, cfg, ing, p, warm ? &candidate : nullptr);
}

MpcSolution solve_multistep_mpc_tb(const TokenBucketState& x, long k, const MpcConfig& cfg,
                                   const PeriodicTerminalIngredients& ing, const TokenBucketParams& p)
{
  if (cfg.mode != MpcMode::MultiStep) { throw ConfigError("solve_multistep_mpc_tb requires the multi-step mode"); }
  cfg.validate(p.period());
  if (k % p.period() != 0) { throw ConfigError("the multi-step MPC is only solved at multiples of the period"); }
  return run_tb_search(x, 0, cfg, ing, p, nullptr);
}

TokenBucketController::TokenBucketController(MpcConfig cfg, PeriodicTerminalIngredients ing, TokenBucketParams p)
    : cfg_(cfg), ing_(std::move(ing)), p_(std::move(p))
{
  cfg_.validate(p_.period());
}

TokenBucketController::Step TokenBucketController::step(const TokenBucketState& x, long k)
{
  Step out;
  const bool solve_now = cfg_.mode == MpcMode::TimeVarying || k % p_.period() == 0 || !last_;
  if (solve_now) {
    MpcSolution sol = cfg_.mode == MpcMode::TimeVarying
                          ? solve_tv_mpc_tb(x, k, cfg_, ing_, p_, last_ ? &*last_ : nullptr)
                          : solve_multistep_mpc_tb(x, k, cfg_, ing_, p_);
    if (!sol.feasible()) { throw InfeasibleProblem("MPC problem infeasible at step " + std::to_string(k), k); }
    last_ = std::move(sol);
    last_solve_k_ = k;
    out.solved = true;
  }
  const auto i = static_cast<std::size_t>(k - last_solve_k_);
  if (i >= last_->plan.schedule.size()) { throw InfeasibleProblem("stored plan exhausted at step " + std::to_string(k), k); }
  out.input.gamma = last_->plan.schedule[i];
  out.input.uc = last_->plan.inputs[i];
  out.solution = last_;
  return out;
}

// ---- actuator scheduling -------------------------------------------------------------------------

namespace {

/// Backward recursion for a fixed sequence; returns P-bar_0 and the gains L_i.
Matrix act_riccati(const std::vector<int>& sigma, const Matrix& terminal, const ActuatorParams& p,
                   std::vector<Matrix>* gains)
{
  Matrix pbar = terminal;
  if (gains != nullptr) { gains->assign(sigma.size(), Matrix()); }
  for (std::size_t ii = sigma.size(); ii-- > 0;) {
    const Matrix bbar = p.b * act_pi(sigma[ii], p.widths).transpose();
    const Matrix pb = pbar * bbar;
    const Matrix s = p.r_block(sigma[ii]) + bbar.transpose() * pb;
    const Matrix l = s.llt().solve(pb.transpose() * p.a);
    pbar = sym(p.q + p.a.transpose() * pbar * p.a - p.a.transpose() * pb * l);
    if (gains != nullptr) { (*gains)[ii] = l; }
  }
  return pbar;
}

}  // namespace

SchedulePlan solve_fixed_schedule_act(const Vector& x, const std::vector<int>& sigma, int phase,
                                      const PeriodicTerminalIngredients& ing, const ActuatorParams& p)
{
  for (const int s : sigma) {
    if (s < 0 || s >= p.period()) { throw InvalidModel("actuator index " + std::to_string(s) + " out of range"); }
  }
  SchedulePlan plan;
  plan.schedule = sigma;
  std::vector<Matrix> gains;
  const Matrix p0 = act_riccati(sigma, ing.cost_matrix(phase), p, &gains);
  plan.value = x.dot(p0 * x);
  plan.feasible = true;
  Vector xi = x;
  plan.states.push_back(xi);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const Matrix pit = act_pi(sigma[i], p.widths).transpose();
    const Vector u = -(gains[i] * xi);
    plan.inputs.push_back(pit * u);
    xi = p.a * xi + p.b * (pit * u);
    plan.states.push_back(xi);
  }
  return plan;
}

MpcSolution solve_tv_mpc_act(const Vector& x, long k, const MpcConfig& cfg, const PeriodicTerminalIngredients& ing,
                             const ActuatorParams& p, const MpcSolution* previous)
{
  const auto start = Clock::now();
  if (cfg.mode != MpcMode::TimeVarying) { throw ConfigError("the actuator scheduling MPC supports the time-varying mode only"); }
  cfg.validate(p.period());
  const int phase = cfg.terminal_phase(k, p.period());
  SearchSpec spec;
  spec.horizon = cfg.horizon;
  spec.alphabet = p.period();
  const Matrix zero = Matrix::Zero(p.n(), p.n());
  spec.bound = [&](const std::vector<int>& prefix) { return x.dot(act_riccati(prefix, zero, p, nullptr) * x); };
  spec.leaf = [&](const std::vector<int>& sigma) { return solve_fixed_schedule_act(x, sigma, phase, ing, p); };
  Search search(spec, cfg.search, cfg.tie_tolerance);
  std::vector<int> candidate;
  if (cfg.warm_start && previous != nullptr && static_cast<int>(previous->plan.schedule.size()) == cfg.horizon) {
    const auto& s = previous->plan.schedule;
    candidate.assign(s.begin() + 1, s.end());
    candidate.push_back(p.base_schedule[static_cast<std::size_t>(previous->terminal_phase)]);
    spec.preferred = candidate;
    ++search.nodes;
    search.offer(solve_fixed_schedule_act(x, candidate, phase, ing, p));
  }
  search.run();
  MpcSolution sol;
  sol.plan = search.result();
  sol.value = sol.plan.value;
  sol.nodes = search.nodes;
  sol.terminal_phase = phase;
  sol.solve_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return sol;
}

}  // namespace tvmpc
