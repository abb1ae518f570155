#include "tvmpc/simcli.hpp"

#include "tvmpc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace tvmpc {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---- config parsing --------------------------------------------------------------------------

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const json& member(const json& obj, const std::string& key, const std::string& path)
{
  if (!obj.is_object()) { throw ConfigError(path + ": expected an object"); }
  const auto it = obj.find(key);
  if (it == obj.end()) { throw ConfigError(join(path, key) + ": missing"); }
  return *it;
}

void allow_only(const json& obj, const std::string& path, std::initializer_list<const char*> keys)
{
  if (!obj.is_object()) { throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object"); }
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& item : obj.items()) {
    if (allowed.count(item.key()) == 0) { throw ConfigError(join(path, item.key()) + ": unknown field"); }
  }
}

double number(const json& j, const std::string& path)
{
  if (!j.is_number()) { throw ConfigError(path + ": expected a number"); }
  const double v = j.get<double>();
  if (!std::isfinite(v)) { throw ConfigError(path + ": must be finite"); }
  return v;
}

int integer(const json& j, const std::string& path)
{
  if (!j.is_number_integer()) { throw ConfigError(path + ": expected an integer"); }
  return j.get<int>();
}

bool boolean(const json& j, const std::string& path)
{
  if (!j.is_boolean()) { throw ConfigError(path + ": expected true or false"); }
  return j.get<bool>();
}

std::string text(const json& j, const std::string& path)
{
  if (!j.is_string()) { throw ConfigError(path + ": expected a string"); }
  return j.get<std::string>();
}

Vector vector_of(const json& j, const std::string& path)
{
  if (!j.is_array() || j.empty()) { throw ConfigError(path + ": expected a non-empty array of numbers"); }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) { v(static_cast<Eigen::Index>(i)) = number(j[i], path + "[" + std::to_string(i) + "]"); }
  return v;
}

std::vector<int> ints_of(const json& j, const std::string& path)
{
  if (!j.is_array() || j.empty()) { throw ConfigError(path + ": expected a non-empty array of integers"); }
  std::vector<int> v;
  for (std::size_t i = 0; i < j.size(); ++i) { v.push_back(integer(j[i], path + "[" + std::to_string(i) + "]")); }
  return v;
}

/// Nested rows, or {"diag": [...]}.
Matrix matrix_of(const json& j, const std::string& path)
{
  if (j.is_object()) {
    allow_only(j, path, {"diag"});
    return vector_of(member(j, "diag", path), path + ".diag").asDiagonal();
  }
  const Matrix m = matrix_from_json(j, path.c_str());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) { throw ConfigError(path + ": entries must be finite"); }
  }
  return m;
}

/// {"box": h}, {"lower": l, "upper": u} or {"rows": C, "rhs": d} for C x <= d with d > 0.
Polytope polytope_of(const json& j, const std::string& path, Eigen::Index dim)
{
  allow_only(j, path, {"box", "lower", "upper", "rows", "rhs"});
  Polytope p;
  if (j.contains("box")) {
    const Vector h = vector_of(j.at("box"), path + ".box");
    if ((h.array() <= 0.0).any()) { throw ConfigError(path + ".box: half widths must be positive"); }
    p = Polytope::box(h);
  } else if (j.contains("lower") || j.contains("upper")) {
    const Vector lo = vector_of(member(j, "lower", path), path + ".lower");
    const Vector hi = vector_of(member(j, "upper", path), path + ".upper");
    if (lo.size() != hi.size()) { throw ConfigError(path + ": lower and upper differ in length"); }
    if ((lo.array() >= 0.0).any() || (hi.array() <= 0.0).any()) {
      throw ConfigError(path + ": bounds must satisfy lower < 0 < upper");
    }
    p = Polytope::box(lo, hi);
  } else if (j.contains("rows")) {
    const Matrix c = matrix_of(j.at("rows"), path + ".rows");
    const Vector d = vector_of(member(j, "rhs", path), path + ".rhs");
    if (d.size() != c.rows()) { throw ConfigError(path + ".rhs: one entry per row required"); }
    if ((d.array() <= 0.0).any()) { throw ConfigError(path + ".rhs: entries must be positive (the origin must be interior)"); }
    p = Polytope(c.cols(), d.cwiseInverse().asDiagonal() * c);
  } else {
    throw ConfigError(path + ": expected box, lower/upper or rows/rhs");
  }
  if (p.dim != dim) {
    throw ConfigError(path + ": dimension " + std::to_string(p.dim) + " does not match " + std::to_string(dim));
  }
  return p;
}

void parse_plant(const json& j, Matrix& a, Matrix& b)
{
  const std::string path = "plant";
  allow_only(j, path, {"fixture", "sampling_period", "copies", "A", "B"});
  if (j.contains("fixture")) {
    const std::string name = text(j.at("fixture"), "plant.fixture");
    if (name != "walsh_batch_reactor") { throw ConfigError("plant.fixture: unknown fixture '" + name + "'"); }
    const double h = j.contains("sampling_period") ? number(j.at("sampling_period"), "plant.sampling_period") : 0.1;
    if (h <= 0.0) { throw ConfigError("plant.sampling_period: must be positive"); }
    const int copies = j.contains("copies") ? integer(j.at("copies"), "plant.copies") : 1;
    if (copies == 1) {
      std::tie(a, b) = batch_reactor(h);
    } else if (copies == 2) {
      std::tie(a, b) = two_batch_reactors(h);
    } else {
      throw ConfigError("plant.copies: must be 1 or 2");
    }
    return;
  }
  a = matrix_of(member(j, "A", path), "plant.A");
  b = matrix_of(member(j, "B", path), "plant.B");
  if (a.rows() != a.cols()) { throw ConfigError("plant.A: must be square"); }
  if (b.rows() != a.rows()) { throw ConfigError("plant.B: must have as many rows as plant.A"); }
}

void parse_mpc(const json& j, MpcConfig& mpc)
{
  allow_only(j, "mpc", {"N", "mode", "j0", "search", "warm_start", "tie_tolerance"});
  if (j.contains("N")) { mpc.horizon = integer(j.at("N"), "mpc.N"); }
  if (j.contains("j0")) { mpc.initial_phase = integer(j.at("j0"), "mpc.j0"); }
  if (j.contains("mode")) {
    const std::string m = text(j.at("mode"), "mpc.mode");
    if (m == "time_varying") {
      mpc.mode = MpcMode::TimeVarying;
    } else if (m == "multi_step") {
      mpc.mode = MpcMode::MultiStep;
    } else {
      throw ConfigError("mpc.mode: expected time_varying or multi_step");
    }
  }
  if (j.contains("search")) {
    const std::string s = text(j.at("search"), "mpc.search");
    if (s == "enumerate") {
      mpc.search = ScheduleSearch::Enumerate;
    } else if (s == "branch_and_bound") {
      mpc.search = ScheduleSearch::BranchAndBound;
    } else {
      throw ConfigError("mpc.search: expected enumerate or branch_and_bound");
    }
  }
  if (j.contains("warm_start")) { mpc.warm_start = boolean(j.at("warm_start"), "mpc.warm_start"); }
  if (j.contains("tie_tolerance")) { mpc.tie_tolerance = number(j.at("tie_tolerance"), "mpc.tie_tolerance"); }
}

void parse_synthesis(const json& j, SynthesisOptions& s)
{
  allow_only(j, "synthesis", {"region_mode", "objective", "trace_weight", "margin_tolerance", "inclusion_tolerance",
                              "max_invariant_iterations", "bisection_tolerance", "sdp"});
  if (j.contains("region_mode")) {
    const std::string m = text(j.at("region_mode"), "synthesis.region_mode");
    if (m == "polytopic") {
      s.region_mode = RegionMode::Polytopic;
    } else if (m == "ellipsoidal") {
      s.region_mode = RegionMode::Ellipsoidal;
    } else {
      throw ConfigError("synthesis.region_mode: expected polytopic or ellipsoidal");
    }
  }
  if (j.contains("objective")) {
    const std::string o = text(j.at("objective"), "synthesis.objective");
    if (o == "analytic_center") {
      s.objective = SdpObjective::AnalyticCenter;
    } else if (o == "max_margin") {
      s.objective = SdpObjective::MaxMargin;
    } else if (o == "trace") {
      s.objective = SdpObjective::Trace;
    } else {
      throw ConfigError("synthesis.objective: expected analytic_center, max_margin or trace");
    }
  }
  auto positive = [&](const char* key, double& out) {
    if (!j.contains(key)) { return; }
    const std::string path = std::string("synthesis.") + key;
    out = number(j.at(key), path);
    if (out <= 0.0) { throw ConfigError(path + ": must be positive"); }
  };
  positive("trace_weight", s.trace_weight);
  positive("margin_tolerance", s.margin_tolerance);
  positive("inclusion_tolerance", s.inclusion_tolerance);
  positive("bisection_tolerance", s.bisection_tolerance);
  if (j.contains("max_invariant_iterations")) {
    s.max_invariant_iterations = integer(j.at("max_invariant_iterations"), "synthesis.max_invariant_iterations");
    if (s.max_invariant_iterations < 1) { throw ConfigError("synthesis.max_invariant_iterations: must be at least 1"); }
  }
  if (j.contains("sdp")) {
    const json& sj = j.at("sdp");
    allow_only(sj, "synthesis.sdp", {"variable_bound", "max_iterations", "tolerance", "block_tolerance", "strict_tolerance"});
    auto pos = [&](const char* key, double& out) {
      if (!sj.contains(key)) { return; }
      const std::string path = std::string("synthesis.sdp.") + key;
      out = number(sj.at(key), path);
      if (out <= 0.0) { throw ConfigError(path + ": must be positive"); }
    };
    pos("variable_bound", s.sdp.variable_bound);
    pos("tolerance", s.sdp.tolerance);
    pos("block_tolerance", s.sdp.block_tolerance);
    pos("strict_tolerance", s.sdp.strict_tolerance);
    if (sj.contains("max_iterations")) {
      s.sdp.max_iterations = integer(sj.at("max_iterations"), "synthesis.sdp.max_iterations");
      if (s.sdp.max_iterations < 1) { throw ConfigError("synthesis.sdp.max_iterations: must be at least 1"); }
    }
  }
}

void parse_certificate_options(const json& j, CertificateOptions& c)
{
  allow_only(j, "certificates",
             {"descent_tolerance", "dissipation_tolerance", "margin_tolerance", "constraint_tolerance", "epsilon"});
  auto nonneg = [&](const char* key, double& out) {
    if (!j.contains(key)) { return; }
    const std::string path = std::string("certificates.") + key;
    out = number(j.at(key), path);
    if (out < 0.0) { throw ConfigError(path + ": must be nonnegative"); }
  };
  nonneg("descent_tolerance", c.descent_tolerance);
  nonneg("dissipation_tolerance", c.dissipation_tolerance);
  nonneg("margin_tolerance", c.margin_tolerance);
  nonneg("constraint_tolerance", c.constraint_tolerance);
  nonneg("epsilon", c.epsilon);
}

template <class F>
void with_context(const char* context, F&& f)
{
  try {
    f();
  } catch (const InvalidModel& e) {
    throw ConfigError(std::string(context) + ": " + e.what());
  }
}

// ---- trace helpers ---------------------------------------------------------------------------

std::string format_number(double v)
{
  if (std::isnan(v)) { return "nan"; }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TokenBucketState tb_state_of(const TraceRow& row, Eigen::Index n, Eigen::Index m)
{
  TokenBucketState s;
  s.xp = row.state.head(n);
  s.us = row.state.segment(n, m);
  s.beta = static_cast<int>(std::lround(row.state(n + m)));
  return s;
}

double median(std::vector<double> v)
{
  if (v.empty()) { return kNaN; }
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

// ---- config ------------------------------------------------------------------------------------

ExperimentConfig parse_config(const json& doc)
{
  allow_only(doc, "", {"plant", "network", "cost", "constraints", "initial_state", "mpc", "synthesis", "simulation",
                       "benchmark", "certificates", "description"});
  ExperimentConfig cfg;
  cfg.source = doc;
  Matrix a;
  Matrix b;
  parse_plant(member(doc, "plant", ""), a, b);

  const json& net = member(doc, "network", "");
  if (net.is_object() && (net.contains("g") || net.contains("c") || net.contains("b"))) {
    cfg.kind = ExperimentKind::TokenBucket;
  } else if (net.is_object() && net.contains("widths")) {
    cfg.kind = ExperimentKind::Actuator;
  } else {
    throw ConfigError("network: expected g, c, b (token bucket) or widths, base_schedule (actuator scheduling)");
  }

  const json& cost = member(doc, "cost", "");
  allow_only(cost, "cost", {"Q", "R"});
  const Matrix q = matrix_of(member(cost, "Q", "cost"), "cost.Q");
  const Matrix r = matrix_of(member(cost, "R", "cost"), "cost.R");
  if (q.rows() != a.rows() || q.cols() != a.rows()) {
    throw ConfigError("cost.Q: expected a " + std::to_string(a.rows()) + "x" + std::to_string(a.rows()) + " matrix");
  }
  if (r.rows() != b.cols() || r.cols() != b.cols()) {
    throw ConfigError("cost.R: expected a " + std::to_string(b.cols()) + "x" + std::to_string(b.cols()) + " matrix");
  }

  const json& init = member(doc, "initial_state", "");
  if (cfg.kind == ExperimentKind::TokenBucket) {
    allow_only(net, "network", {"g", "c", "b"});
    auto& p = cfg.tb;
    p.a = a;
    p.b = b;
    p.q = q;
    p.r = r;
    p.g = integer(member(net, "g", "network"), "network.g");
    p.c = integer(member(net, "c", "network"), "network.c");
    p.bucket = integer(member(net, "b", "network"), "network.b");
    if (p.g < 1) { throw ConfigError("network.g: must be at least 1"); }
    if (p.c < p.g) { throw ConfigError("network.c: must be at least network.g"); }
    if (p.bucket < p.c) { throw ConfigError("network.b: must be at least network.c"); }
    const json& cons = member(doc, "constraints", "");
    allow_only(cons, "constraints", {"state", "input"});
    p.xp = polytope_of(member(cons, "state", "constraints"), "constraints.state", p.n());
    p.up = polytope_of(member(cons, "input", "constraints"), "constraints.input", p.m());
    with_context("model", [&] { p.validate(); });

    allow_only(init, "initial_state", {"x_p", "u_s", "beta"});
    cfg.tb_start.xp = vector_of(member(init, "x_p", "initial_state"), "initial_state.x_p");
    cfg.tb_start.us = init.contains("u_s") ? vector_of(init.at("u_s"), "initial_state.u_s") : Vector::Zero(p.m());
    cfg.tb_start.beta = integer(member(init, "beta", "initial_state"), "initial_state.beta");
    if (cfg.tb_start.xp.size() != p.n()) { throw ConfigError("initial_state.x_p: expected " + std::to_string(p.n()) + " entries"); }
    if (cfg.tb_start.us.size() != p.m()) { throw ConfigError("initial_state.u_s: expected " + std::to_string(p.m()) + " entries"); }
    if (cfg.tb_start.beta < 0 || cfg.tb_start.beta > p.bucket) {
      throw ConfigError("initial_state.beta: must lie in [0, network.b]");
    }
  } else {
    allow_only(net, "network", {"widths", "base_schedule"});
    auto& p = cfg.act;
    p.a = a;
    p.b = b;
    p.q = q;
    p.r = r;
    p.widths = ints_of(member(net, "widths", "network"), "network.widths");
    if (net.contains("base_schedule")) {
      p.base_schedule = ints_of(net.at("base_schedule"), "network.base_schedule");
    } else {
      for (int s = 0; s < static_cast<int>(p.widths.size()); ++s) { p.base_schedule.push_back(s); }
    }
    if (doc.contains("constraints")) { throw ConfigError("constraints: not supported for actuator scheduling"); }
    with_context("model", [&] { p.validate(); });
    allow_only(init, "initial_state", {"x"});
    cfg.act_start = vector_of(member(init, "x", "initial_state"), "initial_state.x");
    if (cfg.act_start.size() != p.n()) { throw ConfigError("initial_state.x: expected " + std::to_string(p.n()) + " entries"); }
  }

  if (doc.contains("mpc")) { parse_mpc(doc.at("mpc"), cfg.mpc); }
  if (cfg.kind == ExperimentKind::Actuator && cfg.mpc.mode == MpcMode::MultiStep) {
    throw ConfigError("mpc.mode: multi_step is only available for the token bucket");
  }
  cfg.mpc.validate(cfg.period());
  if (doc.contains("synthesis")) { parse_synthesis(doc.at("synthesis"), cfg.synthesis); }
  if (doc.contains("certificates")) { parse_certificate_options(doc.at("certificates"), cfg.certificates); }
  if (doc.contains("simulation")) {
    const json& sim = doc.at("simulation");
    allow_only(sim, "simulation", {"steps", "initial_perturbation"});
    if (sim.contains("steps")) {
      cfg.steps = integer(sim.at("steps"), "simulation.steps");
      if (cfg.steps < 0) { throw ConfigError("simulation.steps: must be nonnegative"); }
    }
    if (sim.contains("initial_perturbation")) {
      cfg.initial_perturbation = number(sim.at("initial_perturbation"), "simulation.initial_perturbation");
      if (cfg.initial_perturbation < 0.0) { throw ConfigError("simulation.initial_perturbation: must be nonnegative"); }
    }
  }
  if (doc.contains("benchmark")) {
    const json& bj = doc.at("benchmark");
    allow_only(bj, "benchmark", {"repetitions"});
    if (bj.contains("repetitions")) {
      cfg.benchmark_repetitions = integer(bj.at("repetitions"), "benchmark.repetitions");
      if (cfg.benchmark_repetitions < 1) { throw ConfigError("benchmark.repetitions: must be at least 1"); }
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError(path + ": cannot open file"); }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
  }
  return parse_config(doc);
}

// ---- certificates ------------------------------------------------------------------------------

Certificate synthesize_certificate(const ExperimentConfig& cfg)
{
  Certificate c;
  c.kind = cfg.kind_name();
  if (cfg.kind == ExperimentKind::TokenBucket) {
    c.ingredients = synthesize_tb(cfg.tb, cfg.synthesis);
    c.margins = verify_tb(c.ingredients.p, c.ingredients.k, cfg.tb);
    c.parameter_hash = parameter_hash(cfg.tb);
  } else {
    c.ingredients = synthesize_act(cfg.act, cfg.synthesis);
    c.margins = verify_act(c.ingredients.p, c.ingredients.gains, cfg.act);
    c.parameter_hash = parameter_hash(cfg.act);
  }
  return c;
}

nlohmann::json certificate_document(const Certificate& cert, const ExperimentConfig& cfg)
{
  json j = cert;
  j["config"] = cfg.source;
  return j;
}

std::pair<Certificate, ExperimentConfig> load_certificate(const std::string& path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError(path + ": cannot open file"); }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
  }
  if (!doc.is_object() || !doc.contains("config")) { throw ConfigError("certificate.config: missing"); }
  Certificate cert;
  try {
    cert = doc.get<Certificate>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("certificate: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    cfg = parse_config(doc.at("config"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("certificate.config.") + e.what());
  }
  return {std::move(cert), std::move(cfg)};
}

void require_matching_certificate(const Certificate& cert, const ExperimentConfig& cfg)
{
  if (cert.kind != cfg.kind_name()) { throw ConfigError("certificate.kind: '" + cert.kind + "' does not match the config"); }
  const std::string h = cfg.kind == ExperimentKind::TokenBucket ? parameter_hash(cfg.tb) : parameter_hash(cfg.act);
  if (cert.parameter_hash != h) { throw ConfigError("certificate.parameter_hash: synthesized for different model data"); }
  if (cert.ingredients.period != cfg.period()) { throw ConfigError("certificate.period: does not match the config"); }
}

// ---- closed loop -------------------------------------------------------------------------------

std::vector<std::string> ClosedLoopTrace::columns() const
{
  std::vector<std::string> c{"k"};
  for (Eigen::Index i = 0; i < n; ++i) { c.push_back("x" + std::to_string(i)); }
  if (kind == ExperimentKind::TokenBucket) {
    for (Eigen::Index i = 0; i < m; ++i) { c.push_back("us" + std::to_string(i)); }
    c.emplace_back("beta");
  }
  for (Eigen::Index i = 0; i < m; ++i) { c.push_back("u" + std::to_string(i)); }
  for (const char* s : {"schedule", "V_star", "stage_cost", "solve_ms", "nodes", "descent_slack", "dissipation_slack"}) {
    c.emplace_back(s);
  }
  return c;
}

TokenBucketState initial_tb_state(const ExperimentConfig& cfg, std::uint64_t seed)
{
  TokenBucketState s = cfg.tb_start;
  if (cfg.initial_perturbation > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(-cfg.initial_perturbation, cfg.initial_perturbation);
    for (Eigen::Index i = 0; i < s.xp.size(); ++i) { s.xp(i) += ud(rng); }
  }
  return s;
}

Vector initial_act_state(const ExperimentConfig& cfg, std::uint64_t seed)
{
  Vector x = cfg.act_start;
  if (cfg.initial_perturbation > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(-cfg.initial_perturbation, cfg.initial_perturbation);
    for (Eigen::Index i = 0; i < x.size(); ++i) { x(i) += ud(rng); }
  }
  return x;
}

ClosedLoopTrace run_closed_loop(const ExperimentConfig& cfg, const PeriodicTerminalIngredients& ing, int steps,
                                std::uint64_t seed)
{
  if (steps < 0) { throw ConfigError("steps: must be nonnegative"); }
  ClosedLoopTrace trace;
  trace.kind = cfg.kind;

  auto finish_row = [](TraceRow& row, const std::optional<MpcSolution>& sol, bool solved) {
    row.v_star = solved ? sol->value : kNaN;
    row.solve_ms = solved ? 1e3 * sol->solve_seconds : 0.0;
    row.nodes = solved ? sol->nodes : 0;
  };

  if (cfg.kind == ExperimentKind::TokenBucket) {
    const TokenBucketParams& p = cfg.tb;
    trace.n = p.n();
    trace.m = p.m();
    TokenBucketController ctl(cfg.mpc, ing, p);
    TokenBucketState x = initial_tb_state(cfg, seed);
    for (long k = 0; k <= steps; ++k) {
      TraceRow row;
      row.k = k;
      row.state.resize(p.n() + p.m() + 1);
      row.state << x.xp, x.us, static_cast<double>(x.beta);
      const auto st = ctl.step(x, k);
      finish_row(row, st.solution, st.solved);
      if (k == steps) {
        row.input = Vector::Constant(p.m(), kNaN);
        row.stage_cost = kNaN;
        row.descent_slack = kNaN;
        row.dissipation_slack = kNaN;
      } else {
        row.input = st.input.uc;
        row.schedule = st.input.gamma;
        row.stage_cost = tb_stage_cost(x, st.input, p);
        const TokenBucketState next = tb_step(x, st.input, p);
        row.dissipation_slack = row.stage_cost + tb_storage(x, p) - tb_storage(next, p);
        x = next;
      }
      trace.rows.push_back(std::move(row));
    }
  } else {
    const ActuatorParams& p = cfg.act;
    trace.n = p.n();
    trace.m = p.m();
    Vector x = initial_act_state(cfg, seed);
    std::optional<MpcSolution> prev;
    for (long k = 0; k <= steps; ++k) {
      TraceRow row;
      row.k = k;
      row.state = x;
      MpcSolution sol = solve_tv_mpc_act(x, k, cfg.mpc, ing, p, prev ? &*prev : nullptr);
      if (!sol.feasible()) { throw InfeasibleProblem("MPC problem infeasible at step " + std::to_string(k), k); }
      prev = sol;
      finish_row(row, prev, true);
      if (k == steps) {
        row.input = Vector::Constant(p.m(), kNaN);
        row.stage_cost = kNaN;
        row.descent_slack = kNaN;
        row.dissipation_slack = kNaN;
      } else {
        row.schedule = sol.plan.schedule[0];
        row.input = sol.plan.inputs[0];
        row.stage_cost = act_stage_cost(x, row.input, row.schedule, p);
        row.dissipation_slack = row.stage_cost;
        x = act_step(x, row.input, row.schedule, p);
      }
      trace.rows.push_back(std::move(row));
    }
  }
  for (std::size_t i = 0; i + 1 < trace.rows.size(); ++i) {
    auto& r = trace.rows[i];
    r.descent_slack = trace.rows[i + 1].v_star - r.v_star + r.stage_cost;
  }
  return trace;
}

// ---- trace CSV ---------------------------------------------------------------------------------

void write_trace_csv(const ClosedLoopTrace& trace, std::ostream& out)
{
  const auto cols = trace.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) { out << (i ? "," : "") << cols[i]; }
  out << "\n";
  for (const auto& r : trace.rows) {
    out << r.k;
    for (Eigen::Index i = 0; i < r.state.size(); ++i) {
      const bool is_beta = trace.kind == ExperimentKind::TokenBucket && i == r.state.size() - 1;
      out << "," << (is_beta ? std::to_string(std::lround(r.state(i))) : format_number(r.state(i)));
    }
    for (Eigen::Index i = 0; i < r.input.size(); ++i) { out << "," << format_number(r.input(i)); }
    out << "," << r.schedule << "," << format_number(r.v_star) << "," << format_number(r.stage_cost) << ","
        << format_number(r.solve_ms) << "," << r.nodes << "," << format_number(r.descent_slack) << ","
        << format_number(r.dissipation_slack) << "\n";
  }
}

ClosedLoopTrace read_trace_csv(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line)) { throw ConfigError("trace: empty file"); }
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) { header.push_back(cell); }
  }
  ClosedLoopTrace trace;
  for (const auto& h : header) {
    if (h.size() > 1 && h[0] == 'x' && std::isdigit(static_cast<unsigned char>(h[1]))) { ++trace.n; }
    if (h.size() > 1 && h[0] == 'u' && std::isdigit(static_cast<unsigned char>(h[1]))) { ++trace.m; }
  }
  trace.kind = std::find(header.begin(), header.end(), "beta") != header.end() ? ExperimentKind::TokenBucket
                                                                                 : ExperimentKind::Actuator;
  if (header != trace.columns()) { throw ConfigError("trace: unexpected columns in the header"); }
  const Eigen::Index ns = trace.kind == ExperimentKind::TokenBucket ? trace.n + trace.m + 1 : trace.n;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) { continue; }
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double d = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw ConfigError("trace: line " + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
      v.push_back(d);
    }
    if (v.size() != header.size()) { throw ConfigError("trace: line " + std::to_string(lineno) + ": wrong number of fields"); }
    TraceRow r;
    std::size_t i = 0;
    r.k = static_cast<long>(v[i++]);
    r.state.resize(ns);
    for (Eigen::Index s = 0; s < ns; ++s) { r.state(s) = v[i++]; }
    r.input.resize(trace.m);
    for (Eigen::Index s = 0; s < trace.m; ++s) { r.input(s) = v[i++]; }
    r.schedule = static_cast<int>(v[i++]);
    r.v_star = v[i++];
    r.stage_cost = v[i++];
    r.solve_ms = v[i++];
    r.nodes = static_cast<long>(v[i++]);
    r.descent_slack = v[i++];
    r.dissipation_slack = v[i++];
    trace.rows.push_back(std::move(r));
  }
  return trace;
}

// ---- certificate checks ------------------------------------------------------------------------

CertificateReport check_certificate(const Certificate& cert, const ExperimentConfig& cfg)
{
  CertificateReport rep;
  const auto& ing = cert.ingredients;
  if (cfg.kind == ExperimentKind::TokenBucket) {
    rep.margins = verify_tb(ing.p, ing.k, cfg.tb);
  } else {
    rep.margins = verify_act(ing.p, ing.gains, cfg.act);
  }
  rep.min_margin = *std::min_element(rep.margins.begin(), rep.margins.end());
  for (std::size_t j = 0; j < rep.margins.size(); ++j) {
    if (rep.margins[j] < -cfg.certificates.margin_tolerance) {
      rep.passed = false;
      rep.messages.push_back("terminal decrease margin of phase " + std::to_string(j) + " is " +
                             format_number(rep.margins[j]));
    }
  }
  for (std::size_t j = 0; j < ing.p.size(); ++j) {
    if (!(min_eigenvalue(sym(ing.p[j])) > 0.0)) {
      rep.passed = false;
      rep.messages.push_back("terminal cost matrix of phase " + std::to_string(j) + " is not positive definite");
    }
  }
  return rep;
}

CertificateReport check_certificates(const ClosedLoopTrace& trace, const Certificate& cert, const ExperimentConfig& cfg)
{
  CertificateReport rep = check_certificate(cert, cfg);
  if (trace.kind != cfg.kind) { throw ConfigError("trace: kind does not match the certificate"); }
  const auto& opt = cfg.certificates;
  const bool tb = cfg.kind == ExperimentKind::TokenBucket;
  const Eigen::Index n = trace.n;
  const Eigen::Index m = trace.m;
  if (n != (tb ? cfg.tb.n() : cfg.act.n()) || m != (tb ? cfg.tb.m() : cfg.act.m())) {
    throw ConfigError("trace: dimensions do not match the certificate");
  }
  auto fail = [&](int& counter, const std::string& msg) {
    rep.passed = false;
    if (counter++ < 5) { rep.messages.push_back(msg); }
  };

  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const TraceRow& r = trace.rows[i];
    const std::string at = "k = " + std::to_string(r.k) + ": ";
    if (tb) {
      const TokenBucketState s = tb_state_of(r, n, m);
      double margin = std::min(1.0 - (cfg.tb.xp.rows * s.xp).maxCoeff(), 1.0 - (cfg.tb.up.rows * s.us).maxCoeff());
      margin = std::min(margin, static_cast<double>(std::min(s.beta, cfg.tb.bucket - s.beta)));
      rep.min_constraint_margin = std::min(rep.min_constraint_margin, margin);
      if (margin < -opt.constraint_tolerance) { fail(rep.constraint_violations, at + "constraint violated by " + format_number(-margin)); }
    }
    if (i + 1 == trace.rows.size()) { break; }
    const TraceRow& nx = trace.rows[i + 1];
    double ell;
    double slack;
    double size2;
    if (tb) {
      const TokenBucketState s = tb_state_of(r, n, m);
      const TokenBucketState t = tb_state_of(nx, n, m);
      ell = tb_stage_cost(s, {r.input, r.schedule}, cfg.tb);
      slack = ell + tb_storage(s, cfg.tb) - tb_storage(t, cfg.tb);
      size2 = s.xp.squaredNorm() + s.us.squaredNorm();
    } else {
      ell = act_stage_cost(r.state, r.input, r.schedule, cfg.act);
      slack = ell;
      size2 = r.state.squaredNorm();
    }
    rep.min_dissipation_slack = std::min(rep.min_dissipation_slack, slack);
    if (slack < -opt.dissipation_tolerance) { fail(rep.dissipation_violations, at + "dissipation slack " + format_number(slack)); }
    if (slack < opt.epsilon * size2) { ++rep.strictness_shortfalls; }
    if (std::isfinite(r.v_star) && std::isfinite(nx.v_star)) {
      const double d = nx.v_star - r.v_star + ell;
      rep.max_descent_slack = std::max(rep.max_descent_slack, d);
      if (d > opt.descent_tolerance) { fail(rep.descent_violations, at + "descent slack " + format_number(d)); }
    }
  }
  return rep;
}

// ---- benchmark ---------------------------------------------------------------------------------

std::vector<MpcConfig> benchmark_configs(const ExperimentConfig& cfg, const std::vector<int>& horizons)
{
  std::vector<MpcConfig> out;
  for (const int n : horizons) {
    MpcConfig c = cfg.mpc;
    c.horizon = n;
    c.warm_start = false;
    c.initial_phase = 0;
    if (cfg.kind == ExperimentKind::TokenBucket && n >= cfg.period()) {
      c.mode = MpcMode::MultiStep;
      out.push_back(c);
    }
    c.mode = MpcMode::TimeVarying;
    out.push_back(c);
  }
  return out;
}

BenchmarkTable run_benchmark(const ExperimentConfig& cfg, const PeriodicTerminalIngredients& ing,
                             const std::vector<MpcConfig>& configs, int repetitions, std::uint64_t seed)
{
  if (repetitions < 1) { throw ConfigError("benchmark.repetitions: must be at least 1"); }
  BenchmarkTable table;
  const int period = cfg.period();
  for (const MpcConfig& base : configs) {
    BenchmarkRow row;
    row.mode = base.mode == MpcMode::TimeVarying ? "time_varying" : "multi_step";
    row.horizon = base.horizon;
    MpcConfig c = base;
    c.warm_start = false;
    try {
      c.validate(period);
      if (cfg.kind == ExperimentKind::Actuator && c.mode == MpcMode::MultiStep) {
        throw ConfigError("mpc.mode: multi_step is only available for the token bucket");
      }
      std::vector<double> times;
      std::vector<double> nodes;
      row.feasible = true;
      for (int rep = 0; rep < repetitions; ++rep) {
        double total = 0.0;
        double node_total = 0.0;
        int solves = 0;
        if (cfg.kind == ExperimentKind::TokenBucket) {
          TokenBucketState x = initial_tb_state(cfg, seed);
          const int count = c.mode == MpcMode::MultiStep ? 1 : period;
          for (long k = 0; k < count; ++k) {
            const MpcSolution sol = c.mode == MpcMode::MultiStep ? solve_multistep_mpc_tb(x, k, c, ing, cfg.tb)
                                                                 : solve_tv_mpc_tb(x, k, c, ing, cfg.tb);
            total += sol.solve_seconds;
            node_total += static_cast<double>(sol.nodes);
            ++solves;
            if (!sol.feasible()) {
              row.feasible = false;
              row.error = "infeasible at step " + std::to_string(k);
              break;
            }
            x = tb_step(x, {sol.plan.inputs[0], sol.plan.schedule[0]}, cfg.tb);
          }
        } else {
          Vector x = initial_act_state(cfg, seed);
          for (long k = 0; k < period; ++k) {
            const MpcSolution sol = solve_tv_mpc_act(x, k, c, ing, cfg.act);
            total += sol.solve_seconds;
            node_total += static_cast<double>(sol.nodes);
            ++solves;
            x = act_step(x, sol.plan.inputs[0], sol.plan.schedule[0], cfg.act);
          }
        }
        times.push_back(1e3 * total / solves);
        nodes.push_back(node_total / solves);
        if (!row.feasible) { break; }
      }
      row.mean_ms = median(times);
      row.mean_nodes = median(nodes);
    } catch (const ConfigError& e) {
      row.feasible = false;
      row.error = e.what();
      row.mean_ms = kNaN;
      row.mean_nodes = kNaN;
    }
    table.push_back(row);
  }
  const BenchmarkRow* ref = nullptr;
  for (const auto& r : table) {
    if (r.mode == "time_varying" && r.horizon == 8 && r.error.empty()) { ref = &r; }
  }
  if (ref == nullptr && !table.empty()) { ref = &table.front(); }
  const double ref_ms = ref != nullptr ? ref->mean_ms : kNaN;
  for (auto& r : table) { r.relative = 100.0 * r.mean_ms / ref_ms; }
  return table;
}

void write_benchmark_csv(const BenchmarkTable& table, std::ostream& out)
{
  out << "mode,N,mean_ms,relative_percent,mean_nodes,feasible,error\n";
  for (const auto& r : table) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out << r.mode << "," << r.horizon << "," << format_number(r.mean_ms) << "," << format_number(r.relative) << ","
        << format_number(r.mean_nodes) << "," << (r.feasible ? 1 : 0) << "," << err << "\n";
  }
}

// ---- plot series -------------------------------------------------------------------------------

std::vector<std::string> write_plot_series(const ClosedLoopTrace& trace, const std::string& dir)
{
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto cols = trace.columns();
  std::vector<std::vector<double>> values(cols.size());
  for (const auto& r : trace.rows) {
    std::vector<double> v{static_cast<double>(r.k)};
    for (Eigen::Index i = 0; i < r.state.size(); ++i) { v.push_back(r.state(i)); }
    for (Eigen::Index i = 0; i < r.input.size(); ++i) { v.push_back(r.input(i)); }
    for (const double d : {static_cast<double>(r.schedule), r.v_star, r.stage_cost, r.solve_ms,
                           static_cast<double>(r.nodes), r.descent_slack, r.dissipation_slack}) {
      v.push_back(d);
    }
    for (std::size_t c = 0; c < cols.size(); ++c) { values[c].push_back(v[c]); }
  }
  std::vector<std::string> files;
  for (std::size_t c = 1; c < cols.size(); ++c) {
    const std::string name = cols[c] + ".csv";
    std::ofstream out(fs::path(dir) / name);
    if (!out) { throw ConfigError(dir + ": cannot write " + name); }
    out << "k," << cols[c] << "\n";
    for (std::size_t i = 0; i < trace.rows.size(); ++i) {
      const double v = values[c][i];
      if (std::isnan(v) || (cols[c] == "schedule" && v < 0.0)) { continue; }
      out << trace.rows[i].k << "," << format_number(v) << "\n";
    }
    files.push_back(name);
  }
  return files;
}

}  // namespace tvmpc
