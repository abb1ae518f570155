#include "tvmpc/synthesis.hpp"

#include "tvmpc/errors.hpp"
#include "tvmpc/polytope.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

namespace tvmpc {

namespace {

Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

AffineExpr var(SdpVar v, const Matrix& left, const Matrix& right, double scale = 1.0)
{
  return AffineExpr{}.add(v, left, right, scale);
}

std::vector<Matrix> inverses(const std::vector<Matrix>& xs, const char* what)
{
  std::vector<Matrix> out;
  out.reserve(xs.size());
  for (const auto& x : xs) { out.push_back(sym(spd_inverse(sym(x), 1e14, what))); }
  return out;
}

class Fnv1a
{
public:
  void add(const std::string& s)
  {
    for (const unsigned char ch : s) {
      h_ ^= ch;
      h_ *= 1099511628211ULL;
    }
  }
  void add(double v)
  {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g;", v);
    add(std::string(buf));
  }
  void add(const Matrix& m)
  {
    add(std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ":");
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) { add(m(i, j)); }
    }
  }
  std::string hex() const
  {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h_);
    return buf;
  }

private:
  std::uint64_t h_ = 14695981039346656037ULL;
};

}  // namespace

void add_tb_decrease_lmi(TbLmiProblem& lp, const TokenBucketParams& p, long j)
{
  const Eigen::Index n = p.n();
  const Eigen::Index m = p.m();
  const Eigen::Index nz = p.nz();
  const int period = p.period();
  if (lp.period != period || static_cast<int>(lp.x.size()) != period) {
    throw InvalidModel("add_tb_decrease_lmi: problem was set up for a different period");
  }
  const int jj = wrap_phase(j, period);
  const SdpVar xj = lp.x[static_cast<std::size_t>(jj)];
  const SdpVar xn = lp.x[static_cast<std::size_t>(wrap_phase(j + 1, period))];
  const AffineExpr none;
  const std::string label = "decrease phase " + std::to_string(jj);
  if (jj == 0) {
    // Transmission with u_c = K z.
    Matrix sel = Matrix::Zero(n, nz);
    sel.leftCols(n) = identity(n);
    AffineExpr top_right = var(xj, p.a_tilde(), identity(nz));
    top_right.add(lp.y, p.b_tilde(), identity(nz));
    lp.sdp.add_block_lmi(label, {nz, n, m, nz},
                         {{var(xn, identity(nz), identity(nz)), none, none, top_right},
                          {none, AffineExpr::constant_of(spd_inverse(p.q, 1e12, "Q")), none, var(xj, sel, identity(nz))},
                          {none, none, AffineExpr::constant_of(spd_inverse(p.r, 1e12, "R")),
                           var(lp.y, identity(m), identity(nz))},
                          {none, none, none, var(xj, identity(nz), identity(nz))}});
  } else {
    // Input held.
    Matrix qr = Matrix::Zero(nz, nz);
    qr.topLeftCorner(n, n) = spd_inverse(p.q, 1e12, "Q");
    qr.bottomRightCorner(m, m) = spd_inverse(p.r, 1e12, "R");
    lp.sdp.add_block_lmi(label, {nz, nz, nz},
                         {{var(xn, identity(nz), identity(nz)), none, var(xj, p.a_prime(), identity(nz))},
                          {none, AffineExpr::constant_of(qr), var(xj, identity(nz), identity(nz))},
                          {none, none, var(xj, identity(nz), identity(nz))}});
  }
  lp.labels.push_back(label);
}

TbLmiProblem build_tb_lmis(const TokenBucketParams& p, double ellipsoid_alpha, double trace_weight)
{
  p.validate();
  const Eigen::Index nz = p.nz();
  const int period = p.period();

  TbLmiProblem lp;
  lp.period = period;
  for (int j = 0; j < period; ++j) { lp.x.push_back(lp.sdp.add_symmetric("X" + std::to_string(j), nz, true)); }
  lp.y = lp.sdp.add_matrix("Y", p.m(), nz);
  if (trace_weight != 0.0) {
    for (const auto& x : lp.x) { lp.sdp.add_trace_objective(x, trace_weight); }
  }
  for (int j = 0; j < period; ++j) { add_tb_decrease_lmi(lp, p, j); }

  if (ellipsoid_alpha > 0.0) {
    const Polytope box = p.state_input_box();
    const Matrix one = Matrix::Ones(1, 1);
    for (int j = 0; j < period; ++j) {
      const SdpVar xj = lp.x[static_cast<std::size_t>(j)];
      for (Eigen::Index i = 0; i < box.num_rows(); ++i) {
        const Matrix cbar = box.rows.row(i);
        const std::string label = "region " + std::to_string(j) + " row " + std::to_string(i);
        lp.sdp.add_block_lmi(label, {1, nz},
                             {{AffineExpr::constant_of(one), var(xj, cbar, identity(nz))},
                              {AffineExpr{}, var(xj, identity(nz), identity(nz), 1.0 / ellipsoid_alpha)}});
        lp.labels.push_back(label);
      }
    }
    for (Eigen::Index i = 0; i < p.up.num_rows(); ++i) {
      const Matrix d = p.up.rows.row(i);
      const std::string label = "terminal input row " + std::to_string(i);
      lp.sdp.add_block_lmi(label, {1, nz},
                           {{AffineExpr::constant_of(one), var(lp.y, d, identity(nz))},
                            {AffineExpr{}, var(lp.x[0], identity(nz), identity(nz), 1.0 / ellipsoid_alpha)}});
      lp.labels.push_back(label);
    }
  }
  return lp;
}

std::vector<double> verify_tb(const std::vector<Matrix>& pj, const Matrix& k, const TokenBucketParams& p)
{
  const int period = p.period();
  if (static_cast<int>(pj.size()) != period) { throw InvalidModel("verify_tb: expected one cost matrix per phase"); }
  const Eigen::Index n = p.n();
  const Eigen::Index m = p.m();
  const Eigen::Index nz = p.nz();
  if (k.rows() != m || k.cols() != nz) { throw InvalidModel("verify_tb: gain has wrong shape"); }
  const Matrix a2 = p.a_tilde() + p.b_tilde() * k;
  const Matrix ap = p.a_prime();
  Matrix q0 = Matrix::Zero(nz, nz);
  q0.topLeftCorner(n, n) = p.q;
  Matrix qr = q0;
  qr.bottomRightCorner(m, m) = p.r;

  std::vector<double> margins;
  {
    const Matrix& p1 = pj[static_cast<std::size_t>(wrap_phase(1, period))];
    const Matrix lhs = a2.transpose() * p1 * a2 - pj[0] + q0 + k.transpose() * p.r * k;
    margins.push_back(min_eigenvalue(sym(-lhs)));
  }
  for (int j = 1; j < period; ++j) {
    const Matrix& pn = pj[static_cast<std::size_t>(wrap_phase(j + 1, period))];
    const Matrix lhs = ap.transpose() * pn * ap - pj[static_cast<std::size_t>(j)] + qr;
    margins.push_back(min_eigenvalue(sym(-lhs)));
  }
  return margins;
}

void verify_tb_regions(const PeriodicTerminalIngredients& ing, const TokenBucketParams& p, double tol)
{
  const Polytope box = p.state_input_box();
  const Matrix a2 = p.a_tilde() + p.b_tilde() * ing.k;
  if (ing.region == RegionKind::Polytopic) {
    if (static_cast<int>(ing.family.sets.size()) != p.period()) {
      throw VerificationFailed("terminal region family has the wrong length", 0);
    }
    verify_periodic_family(ing.family, a2, p.a_prime(), &box, tol);
    // The transmitted terminal input must be admissible as well.
    const Polytope in_box(p.m(), p.up.rows);
    const double excess = image_excess(ing.k, ing.family.sets[0], in_box);
    if (excess > tol) { throw VerificationFailed("terminal input leaves the input constraint set", 0); }
  } else if (ing.region == RegionKind::Ellipsoidal) {
    for (int j = 0; j < p.period(); ++j) {
      const Matrix pinv = spd_inverse(ing.cost_matrix(j), 1e14, "P_j");
      for (Eigen::Index i = 0; i < box.num_rows(); ++i) {
        const double v = ing.alpha * box.rows.row(i).dot(pinv * box.rows.row(i).transpose());
        if (v > 1.0 + tol) { throw VerificationFailed("ellipsoidal region " + std::to_string(j) + " leaves the constraint set", j); }
      }
      if (j == 0) {
        for (Eigen::Index i = 0; i < p.up.num_rows(); ++i) {
          const Vector dk = (p.up.rows.row(i) * ing.k).transpose();
          if (ing.alpha * dk.dot(pinv * dk) > 1.0 + tol) {
            throw VerificationFailed("terminal input leaves the input constraint set", 0);
          }
        }
      }
    }
  }
}

namespace {

struct TbSolution
{
  std::vector<Matrix> x;
  Matrix y;
};

// Strictly feasible solution of the LMIs built by `build(trace_weight)` under the configured
// objective; std::nullopt when none exists. `feasibility_only` skips the refinement step.
template <typename Build>
std::optional<SdpResult> solve_lmis(Build build, const SynthesisOptions& opt, SdpObjective objective,
                                    bool feasibility_only = false)
{
  if (objective == SdpObjective::Trace && !feasibility_only) {
    const auto lp = build(opt.trace_weight);
    SdpResult r = solve_sdp(lp.sdp, opt.sdp);
    if (r.status == SdpStatus::Feasible && r.margin > 0.0) { return r; }
  }
  const auto lp = build(0.0);
  SdpResult r = solve_sdp(lp.sdp, opt.sdp);
  if (r.status != SdpStatus::Feasible || !(r.margin > 0.0)) { return std::nullopt; }
  if (objective == SdpObjective::AnalyticCenter && !feasibility_only) {
    SdpResult c = analytic_center(lp.sdp, r.flat, opt.sdp);
    if (c.status == SdpStatus::Feasible && c.margin > 0.0) { return c; }
  }
  return r;
}

bool solve_tb(const TokenBucketParams& p, double alpha, const SynthesisOptions& opt, TbSolution& out,
              bool feasibility_only = false)
{
  const TbLmiProblem lp = build_tb_lmis(p, alpha, 0.0);
  const auto res = solve_lmis([&](double w) { return build_tb_lmis(p, alpha, w); }, opt,
                              opt.objective.value_or(SdpObjective::MaxMargin), feasibility_only);
  if (!res) { return false; }
  const SdpResult& r = *res;
  out.x.clear();
  for (const auto& v : lp.x) { out.x.push_back(r.values[static_cast<std::size_t>(v.id)]); }
  out.y = r.values[static_cast<std::size_t>(lp.y.id)];
  return true;
}

}  // namespace

PeriodicTerminalIngredients synthesize_tb(const TokenBucketParams& p, const SynthesisOptions& opt)
{
  p.validate();
  const int period = p.period();
  TbSolution sol;
  PeriodicTerminalIngredients ing;
  ing.period = period;

  if (opt.region_mode == RegionMode::Ellipsoidal) {
    // Feasibility is monotone in alpha: find a feasible level, then bisect on log(alpha).
    double lo = 0.0;
    double hi = 0.0;
    TbSolution best;
    double alpha = 1.0;
    if (solve_tb(p, alpha, opt, sol, true)) {
      lo = alpha;
      best = sol;
      while (alpha < 1e8) {
        alpha *= 4.0;
        if (!solve_tb(p, alpha, opt, sol, true)) {
          hi = alpha;
          break;
        }
        lo = alpha;
        best = sol;
      }
      if (hi == 0.0) { hi = lo; }
    } else {
      hi = alpha;
      while (alpha > 1e-8) {
        alpha *= 0.25;
        if (solve_tb(p, alpha, opt, sol, true)) {
          lo = alpha;
          best = sol;
          break;
        }
        hi = alpha;
      }
      if (lo == 0.0) { throw SdpInfeasible("token bucket LMIs with ellipsoidal regions are infeasible"); }
    }
    while (hi / lo - 1.0 > opt.bisection_tolerance) {
      const double mid = std::sqrt(lo * hi);
      if (solve_tb(p, mid, opt, sol, true)) {
        lo = mid;
        best = sol;
      } else {
        hi = mid;
      }
    }
    if (!solve_tb(p, lo, opt, sol)) { sol = best; }
    ing.region = RegionKind::Ellipsoidal;
    ing.alpha = lo;
  } else if (!solve_tb(p, 0.0, opt, sol)) {
    throw SdpInfeasible("token bucket decrease LMIs are infeasible");
  }

  ing.p = inverses(sol.x, "X_j");
  ing.k = sol.y * spd_inverse(sym(sol.x[0]), 1e14, "X_0");

  if (opt.region_mode == RegionMode::Polytopic) {
    const Matrix a2 = p.a_tilde() + p.b_tilde() * ing.k;
    const Matrix ap = p.a_prime();
    Matrix acl = a2;
    for (int j = 1; j < period; ++j) { acl = ap * acl; }
    const Polytope box = p.state_input_box();
    const Polytope z = max_invariant_polytope(acl, box, opt.max_invariant_iterations);
    std::vector<Matrix> maps;
    Matrix l = a2;
    for (int j = 1; j < period; ++j) {
      maps.push_back(l);
      l = ap * l;
    }
    const double alpha = max_scaling(maps, z, box);
    if (!(alpha > 0.0)) { throw VerificationFailed("terminal region scaling collapsed to zero", 0); }
    ing.region = RegionKind::Polytopic;
    ing.family = build_periodic_family(z, alpha, a2, ap, period);
    ing.alpha = alpha;
  }

  const auto margins = verify_tb(ing.p, ing.k, p);
  for (std::size_t j = 0; j < margins.size(); ++j) {
    if (margins[j] < -opt.margin_tolerance) {
      throw VerificationFailed("decrease condition " + std::to_string(j) + " violated by " + std::to_string(-margins[j]),
                               static_cast<int>(j));
    }
  }
  verify_tb_regions(ing, p, opt.inclusion_tolerance);
  return ing;
}

void add_act_decrease_lmi(ActLmiProblem& lp, const ActuatorParams& p, long j)
{
  const Eigen::Index n = p.n();
  const int period = p.period();
  if (lp.period != period || static_cast<int>(lp.x.size()) != period || static_cast<int>(lp.y.size()) != period) {
    throw InvalidModel("add_act_decrease_lmi: problem was set up for a different period");
  }
  const int jj = wrap_phase(j, period);
  const int sigma = p.base_schedule[static_cast<std::size_t>(jj)];
  const Matrix omega = act_omega(sigma, p.widths);
  const Matrix pi = act_pi(sigma, p.widths);
  const Eigen::Index w = pi.rows();
  const Matrix rinv = spd_inverse(p.r_block(sigma), 1e12, "R_sigma");
  const SdpVar xj = lp.x[static_cast<std::size_t>(jj)];
  const SdpVar xn = lp.x[static_cast<std::size_t>(wrap_phase(j + 1, period))];
  const SdpVar yj = lp.y[static_cast<std::size_t>(jj)];
  AffineExpr top_right = var(xj, p.a, identity(n));
  top_right.add(yj, p.b * omega, identity(n));
  const AffineExpr none;
  const std::string label = "decrease phase " + std::to_string(jj);
  lp.sdp.add_block_lmi(label, {n, n, w, n},
                       {{var(xn, identity(n), identity(n)), none, none, top_right},
                        {none, AffineExpr::constant_of(spd_inverse(p.q, 1e12, "Q")), none, var(xj, identity(n), identity(n))},
                        {none, none, AffineExpr::constant_of(rinv), var(yj, pi, identity(n))},
                        {none, none, none, var(xj, identity(n), identity(n))}});
  lp.labels.push_back(label);
}

ActLmiProblem build_act_lmis(const ActuatorParams& p, double trace_weight)
{
  p.validate();
  const Eigen::Index n = p.n();
  const int period = p.period();

  ActLmiProblem lp;
  lp.period = period;
  for (int j = 0; j < period; ++j) { lp.x.push_back(lp.sdp.add_symmetric("X" + std::to_string(j), n, true)); }
  for (int j = 0; j < period; ++j) { lp.y.push_back(lp.sdp.add_matrix("Y" + std::to_string(j), p.m(), n)); }
  if (trace_weight != 0.0) {
    for (const auto& x : lp.x) { lp.sdp.add_trace_objective(x, trace_weight); }
  }
  for (int j = 0; j < period; ++j) { add_act_decrease_lmi(lp, p, j); }
  return lp;
}

std::vector<double> verify_act(const std::vector<Matrix>& pj, const std::vector<Matrix>& kj, const ActuatorParams& p)
{
  const int period = p.period();
  if (static_cast<int>(pj.size()) != period || static_cast<int>(kj.size()) != period) {
    throw InvalidModel("verify_act: expected one cost matrix and one gain per phase");
  }
  std::vector<double> margins;
  for (int j = 0; j < period; ++j) {
    const int sigma = p.base_schedule[static_cast<std::size_t>(j)];
    const Matrix omega = act_omega(sigma, p.widths);
    const Matrix& k = kj[static_cast<std::size_t>(j)];
    if (k.rows() != p.m() || k.cols() != p.n()) { throw InvalidModel("verify_act: gain has wrong shape"); }
    const Matrix acl = p.a + p.b * omega * k;
    const Matrix& pn = pj[static_cast<std::size_t>(wrap_phase(j + 1, period))];
    const Matrix lhs = acl.transpose() * pn * acl - pj[static_cast<std::size_t>(j)] + p.q + k.transpose() * omega * p.r * omega * k;
    margins.push_back(min_eigenvalue(sym(-lhs)));
  }
  return margins;
}

PeriodicTerminalIngredients synthesize_act(const ActuatorParams& p, const SynthesisOptions& opt)
{
  const ActLmiProblem lp = build_act_lmis(p, 0.0);
  const auto res = solve_lmis([&](double w) { return build_act_lmis(p, w); }, opt,
                              opt.objective.value_or(SdpObjective::AnalyticCenter));
  if (!res) { throw SdpInfeasible("actuator scheduling LMIs are infeasible"); }
  const SdpResult& r = *res;
  PeriodicTerminalIngredients ing;
  ing.period = lp.period;
  ing.region = RegionKind::Unbounded;
  std::vector<Matrix> xs;
  for (const auto& v : lp.x) { xs.push_back(r.values[static_cast<std::size_t>(v.id)]); }
  ing.p = inverses(xs, "X_j");
  for (int j = 0; j < lp.period; ++j) {
    const Matrix& y = r.values[static_cast<std::size_t>(lp.y[static_cast<std::size_t>(j)].id)];
    const int sigma = p.base_schedule[static_cast<std::size_t>(j)];
    // Rows of unselected actuators never act on the plant; they are stored as zero.
    ing.gains.push_back(act_omega(sigma, p.widths) * y * ing.p[static_cast<std::size_t>(j)]);
  }
  const auto margins = verify_act(ing.p, ing.gains, p);
  for (std::size_t j = 0; j < margins.size(); ++j) {
    if (margins[j] < -opt.margin_tolerance) {
      throw VerificationFailed("decrease condition " + std::to_string(j) + " violated by " + std::to_string(-margins[j]),
                               static_cast<int>(j));
    }
  }
  return ing;
}

std::string parameter_hash(const TokenBucketParams& p)
{
  Fnv1a h;
  h.add(std::string("token_bucket:"));
  h.add(p.a);
  h.add(p.b);
  h.add(p.q);
  h.add(p.r);
  h.add(std::to_string(p.g) + "," + std::to_string(p.c) + "," + std::to_string(p.bucket) + ";");
  h.add(p.xp.rows);
  h.add(p.up.rows);
  return h.hex();
}

std::string parameter_hash(const ActuatorParams& p)
{
  Fnv1a h;
  h.add(std::string("actuator:"));
  h.add(p.a);
  h.add(p.b);
  h.add(p.q);
  h.add(p.r);
  for (const int w : p.widths) { h.add(std::to_string(w) + ","); }
  h.add(std::string(";"));
  for (const int s : p.base_schedule) { h.add(std::to_string(s) + ","); }
  return h.hex();
}

nlohmann::json matrix_to_json(const Matrix& m)
{
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) { row.push_back(m(i, j)); }
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, const char* what)
{
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ConfigError(std::string(what) + ": expected a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(std::string(what) + ": rows have different lengths");
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      const auto& v = row[static_cast<std::size_t>(k)];
      if (!v.is_number()) { throw ConfigError(std::string(what) + ": entries must be numbers"); }
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

void to_json(nlohmann::json& j, const Certificate& c)
{
  const auto& ing = c.ingredients;
  nlohmann::json pj = nlohmann::json::array();
  for (const auto& p : ing.p) { pj.push_back(matrix_to_json(p)); }
  j = nlohmann::json{{"kind", c.kind}, {"period", ing.period}, {"P", pj}, {"margins", c.margins},
                     {"parameter_hash", c.parameter_hash}};
  if (ing.k.size() > 0) { j["K"] = matrix_to_json(ing.k); }
  if (!ing.gains.empty()) {
    nlohmann::json gj = nlohmann::json::array();
    for (const auto& k : ing.gains) { gj.push_back(matrix_to_json(k)); }
    j["gains"] = gj;
  }
  switch (ing.region) {
    case RegionKind::Polytopic: j["region"] = {{"kind", "polytopic"}, {"alpha", ing.alpha}, {"sets", ing.family.sets}}; break;
    case RegionKind::Ellipsoidal: j["region"] = {{"kind", "ellipsoidal"}, {"alpha", ing.alpha}}; break;
    case RegionKind::Unbounded: j["region"] = {{"kind", "unbounded"}}; break;
  }
}

void from_json(const nlohmann::json& j, Certificate& c)
{
  try {
    c.kind = j.at("kind").get<std::string>();
    if (c.kind != "token_bucket" && c.kind != "actuator") { throw ConfigError("certificate: unknown kind '" + c.kind + "'"); }
    auto& ing = c.ingredients;
    ing.period = j.at("period").get<int>();
    ing.p.clear();
    for (const auto& p : j.at("P")) { ing.p.push_back(matrix_from_json(p, "certificate P")); }
    if (static_cast<int>(ing.p.size()) != ing.period) { throw ConfigError("certificate: number of P matrices differs from period"); }
    ing.k = j.contains("K") ? matrix_from_json(j.at("K"), "certificate K") : Matrix();
    ing.gains.clear();
    if (j.contains("gains")) {
      for (const auto& k : j.at("gains")) { ing.gains.push_back(matrix_from_json(k, "certificate gains")); }
    }
    const auto& region = j.at("region");
    const auto kind = region.at("kind").get<std::string>();
    ing.family.sets.clear();
    if (kind == "polytopic") {
      ing.region = RegionKind::Polytopic;
      ing.alpha = region.at("alpha").get<double>();
      ing.family.sets = region.at("sets").get<std::vector<Polytope>>();
    } else if (kind == "ellipsoidal") {
      ing.region = RegionKind::Ellipsoidal;
      ing.alpha = region.at("alpha").get<double>();
    } else if (kind == "unbounded") {
      ing.region = RegionKind::Unbounded;
    } else {
      throw ConfigError("certificate: unknown region kind '" + kind + "'");
    }
    c.margins = j.at("margins").get<std::vector<double>>();
    c.parameter_hash = j.at("parameter_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("certificate: ") + e.what());
  }
}

}  // namespace tvmpc
