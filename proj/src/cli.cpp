#include "tvmpc/errors.hpp"
#include "tvmpc/simcli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tvmpc {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitMalformed = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitViolation = 3;

std::ofstream open_output(const std::string& path)
{
  std::ofstream out(path);
  if (!out) { throw ConfigError(path + ": cannot open for writing"); }
  return out;
}

std::vector<int> parse_horizons(const std::string& list)
{
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(item, &used);
      if (used != item.size() || n < 1) { throw std::invalid_argument(item); }
      out.push_back(n);
    } catch (const std::logic_error&) {
      throw ConfigError("--horizons: '" + item + "' is not a positive integer");
    }
  }
  if (out.empty()) { throw ConfigError("--horizons: empty list"); }
  return out;
}

void print_margins(const CertificateReport& rep)
{
  std::printf("terminal decrease margins:");
  for (const double m : rep.margins) { std::printf(" %.6e", m); }
  std::printf("\nminimum margin: %.6e\n", rep.min_margin);
}

int report_exit(const CertificateReport& rep)
{
  for (const auto& msg : rep.messages) { std::fprintf(stderr, "violation: %s\n", msg.c_str()); }
  if (!rep.passed) {
    std::printf("certificate check FAILED\n");
    return kExitViolation;
  }
  std::printf("certificate check passed\n");
  return kExitOk;
}

int cmd_synthesize(const std::string& config, const std::string& output)
{
  const ExperimentConfig cfg = load_config(config);
  const Certificate cert = synthesize_certificate(cfg);
  open_output(output) << certificate_document(cert, cfg).dump(2) << "\n";
  const CertificateReport rep = check_certificate(cert, cfg);
  print_margins(rep);
  return report_exit(rep);
}

int cmd_simulate(const std::string& config, const std::string& cert_path, int steps, const std::string& output,
                 std::uint64_t seed)
{
  const ExperimentConfig cfg = load_config(config);
  const Certificate cert = load_certificate(cert_path).first;
  require_matching_certificate(cert, cfg);
  const ClosedLoopTrace trace = run_closed_loop(cfg, cert.ingredients, steps < 0 ? cfg.steps : steps, seed);
  auto out = open_output(output);
  write_trace_csv(trace, out);
  const CertificateReport rep = check_certificates(trace, cert, cfg);
  std::printf("simulated %zu steps, max descent slack %.3e, min dissipation slack %.3e\n", trace.rows.size() - 1,
              rep.max_descent_slack, rep.min_dissipation_slack);
  return report_exit(rep);
}

int cmd_verify(const std::string& cert_path, const std::string& trace_path)
{
  const auto [cert, cfg] = load_certificate(cert_path);
  require_matching_certificate(cert, cfg);
  CertificateReport rep;
  if (trace_path.empty()) {
    rep = check_certificate(cert, cfg);
  } else {
    std::ifstream in(trace_path);
    if (!in) { throw ConfigError(trace_path + ": cannot open file"); }
    rep = check_certificates(read_trace_csv(in), cert, cfg);
    std::printf("max descent slack: %.6e\nmin dissipation slack: %.6e\n", rep.max_descent_slack,
                rep.min_dissipation_slack);
    if (cfg.kind == ExperimentKind::TokenBucket) {
      std::printf("min constraint margin: %.6e\n", rep.min_constraint_margin);
    }
    std::printf("strictness shortfalls: %d\n", rep.strictness_shortfalls);
  }
  print_margins(rep);
  return report_exit(rep);
}

int cmd_benchmark(const std::string& config, const std::string& horizons, const std::string& output, int repetitions,
                  std::uint64_t seed)
{
  const ExperimentConfig cfg = load_config(config);
  const std::vector<int> hs = parse_horizons(horizons);
  const Certificate cert = synthesize_certificate(cfg);
  const CertificateReport crep = check_certificate(cert, cfg);
  if (!crep.passed) { return report_exit(crep); }
  const BenchmarkTable table = run_benchmark(cfg, cert.ingredients, benchmark_configs(cfg, hs),
                                             repetitions > 0 ? repetitions : cfg.benchmark_repetitions, seed);
  auto out = open_output(output);
  write_benchmark_csv(table, out);
  write_benchmark_csv(table, std::cout);
  return kExitOk;
}

int cmd_plotdata(const std::string& trace_path, const std::string& dir)
{
  std::ifstream in(trace_path);
  if (!in) { throw ConfigError(trace_path + ": cannot open file"); }
  const auto files = write_plot_series(read_trace_csv(in), dir);
  std::printf("wrote %zu series to %s\n", files.size(), dir.c_str());
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv)
{
  CLI::App app{"Co-design of transmission schedules and control inputs by time-varying MPC"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed of the initial state perturbation")->capture_default_str();

  std::string config;
  std::string output;
  std::string cert_path;
  std::string trace_path;
  std::string horizons = "2,4,6,8,10,12";
  int steps = -1;
  int repetitions = 0;

  auto* syn = app.add_subcommand("synthesize", "Synthesize and verify the periodic terminal ingredients");
  syn->add_option("config", config, "Experiment config (JSON)")->required();
  syn->add_option("-o,--output", output, "Certificate file")->required();

  auto* sim = app.add_subcommand("simulate", "Run the closed loop and write a trace");
  sim->add_option("config", config, "Experiment config (JSON)")->required();
  sim->add_option("--cert", cert_path, "Certificate file")->required();
  sim->add_option("--steps", steps, "Number of closed-loop steps (default from the config)");
  sim->add_option("-o,--output", output, "Trace CSV")->required();

  auto* ver = app.add_subcommand("verify", "Check a certificate and optionally a trace");
  ver->add_option("--cert", cert_path, "Certificate file")->required();
  ver->add_option("--trace", trace_path, "Trace CSV");

  auto* ben = app.add_subcommand("benchmark", "Time the MPC solves over several horizons");
  ben->add_option("config", config, "Experiment config (JSON)")->required();
  ben->add_option("--horizons", horizons, "Comma separated horizons")->capture_default_str();
  ben->add_option("--repetitions", repetitions, "Repetitions per row (default from the config)");
  ben->add_option("-o,--output", output, "Table CSV")->required();

  auto* plt = app.add_subcommand("plotdata", "Split a trace into one CSV per signal");
  plt->add_option("trace", trace_path, "Trace CSV")->required();
  plt->add_option("-o,--output", output, "Output directory")->required();

  for (auto* sub : {syn, sim, ver, ben, plt}) {
    sub->add_option("--seed", seed, "Seed of the initial state perturbation");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitMalformed;
  }

  try {
    if (*syn) { return cmd_synthesize(config, output); }
    if (*sim) { return cmd_simulate(config, cert_path, steps, output, seed); }
    if (*ver) { return cmd_verify(cert_path, trace_path); }
    if (*ben) { return cmd_benchmark(config, horizons, output, repetitions, seed); }
    if (*plt) { return cmd_plotdata(trace_path, output); }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMalformed;
  } catch (const InfeasibleProblem& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return kExitInfeasible;
  } catch (const SdpInfeasible& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return kExitInfeasible;
  } catch (const VerificationFailed& e) {
    std::fprintf(stderr, "certificate violation: %s\n", e.what());
    return kExitViolation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMalformed;
  }
  return kExitMalformed;
}

}  // namespace tvmpc
