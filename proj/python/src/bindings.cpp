#include "tvmpc/errors.hpp"
#include "tvmpc/models.hpp"
#include "tvmpc/mpc.hpp"
#include "tvmpc/numerics.hpp"
#include "tvmpc/simcli.hpp"
#include "tvmpc/synthesis.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace tvmpc;

namespace {

ExperimentConfig config_from_string(const std::string& text)
{
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON (") + e.what() + ")");
  }
  return parse_config(doc);
}

std::string certificate_to_string(const Certificate& cert, const ExperimentConfig& cfg)
{
  return certificate_document(cert, cfg).dump(2);
}

py::dict trace_to_dict(const ClosedLoopTrace& t)
{
  const auto cols = t.columns();
  std::vector<std::vector<double>> values(cols.size());
  for (const auto& r : t.rows) {
    std::size_t c = 0;
    values[c++].push_back(static_cast<double>(r.k));
    for (Eigen::Index i = 0; i < r.state.size(); ++i) { values[c++].push_back(r.state(i)); }
    for (Eigen::Index i = 0; i < r.input.size(); ++i) { values[c++].push_back(r.input(i)); }
    for (const double v : {static_cast<double>(r.schedule), r.v_star, r.stage_cost, r.solve_ms,
                           static_cast<double>(r.nodes), r.descent_slack, r.dissipation_slack}) {
      values[c++].push_back(v);
    }
  }
  py::dict out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out[py::str(cols[c])] = Vector(Eigen::Map<const Vector>(values[c].data(), static_cast<Eigen::Index>(values[c].size())));
  }
  return out;
}

py::dict report_to_dict(const CertificateReport& r)
{
  py::dict d;
  d["passed"] = r.passed;
  d["margins"] = r.margins;
  d["min_margin"] = r.min_margin;
  d["max_descent_slack"] = r.max_descent_slack;
  d["min_dissipation_slack"] = r.min_dissipation_slack;
  d["min_constraint_margin"] = r.min_constraint_margin;
  d["descent_violations"] = r.descent_violations;
  d["dissipation_violations"] = r.dissipation_violations;
  d["constraint_violations"] = r.constraint_violations;
  d["strictness_shortfalls"] = r.strictness_shortfalls;
  d["messages"] = r.messages;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
  m.doc() = "Co-design of transmission schedules and control inputs by time-varying MPC";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InvalidModel>(m, "InvalidModel", base.ptr());
  py::register_exception<SdpInfeasible>(m, "SdpInfeasible", base.ptr());
  py::register_exception<InfeasibleProblem>(m, "InfeasibleProblem", base.ptr());
  py::register_exception<InsufficientTokens>(m, "InsufficientTokens", base.ptr());
  py::register_exception<VerificationFailed>(m, "VerificationFailed", base.ptr());

  // ---- numerics and models -------------------------------------------------------------------

  m.def("zoh_discretize", &zoh_discretize, py::arg("ac"), py::arg("bc"), py::arg("h"),
        "Zero-order-hold discretization; returns (A, B).");
  m.def("batch_reactor", &batch_reactor, py::arg("h") = 0.1, "Discretized batch reactor; returns (A, B).");
  m.def("two_batch_reactors", &two_batch_reactors, py::arg("h") = 0.1,
        "Two decoupled batch reactors; returns (A, B).");
  m.def("spectral_radius", &spectral_radius, py::arg("a"));

  py::class_<TokenBucketState>(m, "TokenBucketState")
      .def(py::init([](const Vector& xp, const Vector& us, int beta) {
             return TokenBucketState{xp, us, beta};
           }),
           py::arg("x_p"), py::arg("u_s"), py::arg("beta"))
      .def_readwrite("x_p", &TokenBucketState::xp)
      .def_readwrite("u_s", &TokenBucketState::us)
      .def_readwrite("beta", &TokenBucketState::beta)
      .def("__repr__", [](const TokenBucketState& s) {
        std::ostringstream os;
        os << "TokenBucketState(x_p=" << s.xp.transpose() << ", u_s=" << s.us.transpose() << ", beta=" << s.beta
           << ")";
        return os.str();
      });

  m.def(
      "bucket_trajectory",
      [](int beta0, const std::vector<int>& gamma, int g, int c, int b) {
        TokenBucketParams p;
        p.g = g;
        p.c = c;
        p.bucket = b;
        const BucketTrajectory t = bucket_trajectory(beta0, gamma, p);
        return py::make_tuple(t.levels, t.infeasible_step);
      },
      py::arg("beta0"), py::arg("gamma"), py::arg("g"), py::arg("c"), py::arg("b"),
      "Bucket levels along a transmission sequence and the first infeasible step (-1 if none).");

  m.def("wrap_phase", &wrap_phase, py::arg("j"), py::arg("period"));

  // ---- experiments -----------------------------------------------------------------------------

  py::class_<ExperimentConfig>(m, "Config")
      .def_property_readonly("kind", &ExperimentConfig::kind_name)
      .def_property_readonly("period", &ExperimentConfig::period)
      .def_property(
          "horizon", [](const ExperimentConfig& c) { return c.mpc.horizon; },
          [](ExperimentConfig& c, int n) {
            c.mpc.horizon = n;
            c.mpc.validate(c.period());
          })
      .def_property(
          "mode",
          [](const ExperimentConfig& c) {
            return c.mpc.mode == MpcMode::TimeVarying ? std::string("time_varying") : std::string("multi_step");
          },
          [](ExperimentConfig& c, const std::string& mode) {
            if (mode == "time_varying") {
              c.mpc.mode = MpcMode::TimeVarying;
            } else if (mode == "multi_step" && c.kind == ExperimentKind::TokenBucket) {
              c.mpc.mode = MpcMode::MultiStep;
            } else {
              throw ConfigError("mpc.mode: expected time_varying or multi_step (token bucket only)");
            }
            c.mpc.validate(c.period());
          })
      .def_readwrite("steps", &ExperimentConfig::steps)
      .def_readwrite("initial_perturbation", &ExperimentConfig::initial_perturbation)
      .def_property_readonly("A", [](const ExperimentConfig& c) {
        return c.kind == ExperimentKind::TokenBucket ? c.tb.a : c.act.a;
      })
      .def_property_readonly("B", [](const ExperimentConfig& c) {
        return c.kind == ExperimentKind::TokenBucket ? c.tb.b : c.act.b;
      });

  m.def("load_config", &load_config, py::arg("path"), "Reads an experiment config (JSON file).");
  m.def("parse_config", &config_from_string, py::arg("text"), "Parses an experiment config from a JSON string.");

  py::class_<Certificate>(m, "Certificate")
      .def_readonly("kind", &Certificate::kind)
      .def_readonly("margins", &Certificate::margins)
      .def_readonly("parameter_hash", &Certificate::parameter_hash)
      .def_property_readonly("period", [](const Certificate& c) { return c.ingredients.period; })
      .def_property_readonly("P", [](const Certificate& c) { return c.ingredients.p; })
      .def_property_readonly("K", [](const Certificate& c) { return c.ingredients.k; })
      .def_property_readonly("gains", [](const Certificate& c) { return c.ingredients.gains; })
      .def("to_json", &certificate_to_string, py::arg("config"),
           "Certificate document (with the embedded config) as a JSON string.");

  m.def("synthesize", &synthesize_certificate, py::arg("config"),
        "Synthesizes and verifies the periodic terminal ingredients.");
  m.def(
      "load_certificate",
      [](const std::string& path) {
        auto [cert, cfg] = load_certificate(path);
        return py::make_tuple(cert, cfg);
      },
      py::arg("path"), "Reads a certificate document; returns (certificate, config).");

  py::class_<ClosedLoopTrace>(m, "Trace")
      .def_property_readonly("columns", &ClosedLoopTrace::columns)
      .def_property_readonly("kind", [](const ClosedLoopTrace& t) {
        return t.kind == ExperimentKind::TokenBucket ? "token_bucket" : "actuator";
      })
      .def("__len__", [](const ClosedLoopTrace& t) { return t.rows.size(); })
      .def("as_dict", &trace_to_dict, "Columns as a dict of numpy arrays.")
      .def("to_csv", [](const ClosedLoopTrace& t) {
        std::ostringstream os;
        write_trace_csv(t, os);
        return os.str();
      });

  m.def("trace_from_csv", [](const std::string& text) {
    std::istringstream in(text);
    return read_trace_csv(in);
  });

  m.def(
      "simulate",
      [](const ExperimentConfig& cfg, const Certificate& cert, std::optional<int> steps, std::uint64_t seed) {
        require_matching_certificate(cert, cfg);
        py::gil_scoped_release release;
        return run_closed_loop(cfg, cert.ingredients, steps.value_or(cfg.steps), seed);
      },
      py::arg("config"), py::arg("certificate"), py::arg("steps") = py::none(), py::arg("seed") = 0,
      "Runs the receding horizon loop.");

  m.def(
      "check_certificates",
      [](const ClosedLoopTrace& trace, const Certificate& cert, const ExperimentConfig& cfg) {
        return report_to_dict(check_certificates(trace, cert, cfg));
      },
      py::arg("trace"), py::arg("certificate"), py::arg("config"));

  m.def(
      "benchmark",
      [](const ExperimentConfig& cfg, const Certificate& cert, const std::vector<int>& horizons, int repetitions,
         std::uint64_t seed) {
        BenchmarkTable table;
        {
          py::gil_scoped_release release;
          table = run_benchmark(cfg, cert.ingredients, benchmark_configs(cfg, horizons), repetitions, seed);
        }
        py::list rows;
        for (const auto& r : table) {
          py::dict d;
          d["mode"] = r.mode;
          d["N"] = r.horizon;
          d["mean_ms"] = r.mean_ms;
          d["relative_percent"] = r.relative;
          d["mean_nodes"] = r.mean_nodes;
          d["feasible"] = r.feasible;
          d["error"] = r.error;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("certificate"), py::arg("horizons") = std::vector<int>{2, 4, 6, 8, 10, 12},
      py::arg("repetitions") = 1, py::arg("seed") = 0,
      "Solve time table: time-varying rows for every horizon, multi-step rows from the period on.");

  m.def(
      "solve_token_bucket",
      [](const ExperimentConfig& cfg, const Certificate& cert, const TokenBucketState& x, long k) {
        if (cfg.kind != ExperimentKind::TokenBucket) { throw ConfigError("config: not a token bucket experiment"); }
        const MpcSolution s = cfg.mpc.mode == MpcMode::MultiStep
                                  ? solve_multistep_mpc_tb(x, k, cfg.mpc, cert.ingredients, cfg.tb)
                                  : solve_tv_mpc_tb(x, k, cfg.mpc, cert.ingredients, cfg.tb);
        py::dict d;
        d["feasible"] = s.feasible();
        d["value"] = s.value;
        d["schedule"] = s.plan.schedule;
        d["inputs"] = s.plan.inputs;
        d["nodes"] = s.nodes;
        d["terminal_phase"] = s.terminal_phase;
        return d;
      },
      py::arg("config"), py::arg("certificate"), py::arg("state"), py::arg("k") = 0,
      "One MPC solve for the token bucket experiment.");

  m.def(
      "solve_actuator",
      [](const ExperimentConfig& cfg, const Certificate& cert, const Vector& x, long k) {
        if (cfg.kind != ExperimentKind::Actuator) { throw ConfigError("config: not an actuator experiment"); }
        const MpcSolution s = solve_tv_mpc_act(x, k, cfg.mpc, cert.ingredients, cfg.act);
        py::dict d;
        d["feasible"] = s.feasible();
        d["value"] = s.value;
        d["schedule"] = s.plan.schedule;
        d["inputs"] = s.plan.inputs;
        d["nodes"] = s.nodes;
        d["terminal_phase"] = s.terminal_phase;
        return d;
      },
      py::arg("config"), py::arg("certificate"), py::arg("x"), py::arg("k") = 0,
      "One MPC solve for the actuator scheduling experiment.");

  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "tvmpc");
        std::vector<char*> argv;
        for (auto& a : args) { argv.push_back(a.data()); }
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command line tool with the given arguments; returns the exit code.");
}
