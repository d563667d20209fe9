#pragma once

// Command-line front end. `run` executes one scenario; `batch` runs one
// scenario per line of a file, optionally in parallel, printing results in
// input order.
//
// Exit codes: 0 resolved / success, 1 input or model error, 2 iteration cap
// or oscillation, 3 infeasible (uncontrollable bus).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ovc/caseio.hpp"
#include "ovc/controller.hpp"
#include "ovc/netmodel.hpp"
#include "ovc/powerflow.hpp"
#include "ovc/sensitivity.hpp"

#ifndef OVC_DEFAULT_DATA_DIR
#define OVC_DEFAULT_DATA_DIR "data"
#endif

namespace ovc::cli {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kInputError = 1;
inline constexpr int kNotResolved = 2;
inline constexpr int kInfeasible = 3;
}  // namespace exit_code

enum class Method { Ovc, Svc, Compare, Solve, Sens };
enum class OutputFormat { Table, Csv, Json };

struct Disturbance {
  int bus = 0;
  double mvar = 0.0;
};

struct RunSpec {
  std::string case_path;
  std::vector<Disturbance> disturbances;
  Method method = Method::Ovc;
  std::optional<double> flat_setpoints;
  ControlConfig config;
  OutputFormat output = OutputFormat::Table;
  std::string trace_path;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Disturbance parse_disturbance(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
    throw UsageError("disturbance '" + text + "' must look like BUS:MVAR, e.g. 9:+70");
  const std::string bus = text.substr(0, colon);
  const std::string amount = text.substr(colon + 1);
  char* end = nullptr;
  const long id = std::strtol(bus.c_str(), &end, 10);
  if (end != bus.c_str() + bus.size() || id <= 0 || id > 2000000000L)
    throw UsageError("disturbance '" + text + "': bad bus id");
  const double q = std::strtod(amount.c_str(), &end);
  if (end != amount.c_str() + amount.size() || !std::isfinite(q))
    throw UsageError("disturbance '" + text + "': bad MVAr amount");
  return {static_cast<int>(id), q};
}

inline std::filesystem::path data_dir() {
  if (const char* env = std::getenv("OVC_DATA_DIR"); env && *env) return env;
  return OVC_DEFAULT_DATA_DIR;
}

/// A literal path if it exists, otherwise a bundled case looked up by name
/// (with or without the `.m` extension) in the data directory.
inline std::filesystem::path resolve_case(const std::string& name) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(name)) return name;
  const fs::path dir = data_dir();
  for (const fs::path& candidate : {dir / name, dir / (name + ".m"), dir / (name + ".json")})
    if (fs::is_regular_file(candidate)) return candidate;
  throw CaseError("case file not found: " + name);
}

/// Registers the `run` options on `app`, writing into `spec`. Call
/// `finish_run_spec` after parsing.
struct RunArgs {
  std::vector<std::string> disturb;
  std::string method = "ovc";
  std::string output = "table";
  std::string mode = "powerflow";
  std::string solver = "newton";
  std::string bpp = "reactance";
  std::string slack = "include";
  double flat = 1.0;
  bool no_clamp = false;
  CLI::Option* flat_opt = nullptr;
};

inline void add_run_options(CLI::App& app, RunSpec& spec, RunArgs& args) {
  app.add_option("--case", spec.case_path, "Case file path or bundled case name (case9, case14, case30)")
      ->required();
  app.add_option("--disturb", args.disturb, "Reactive load change BUS:MVAR (positive = inductive); repeatable");
  app.add_option("--method", args.method, "ovc | svc | compare | solve | sens")
      ->check(CLI::IsMember({"ovc", "svc", "compare", "solve", "sens"}));
  args.flat_opt = app.add_option("--flat-setpoints", args.flat, "Set every generator voltage set-point to V pu");
  app.add_option("--vref", spec.config.v_ref, "Reference voltage (pu)");
  app.add_option("--vmin", spec.config.v_min, "Lower voltage limit (pu)");
  app.add_option("--vmax", spec.config.v_max, "Upper voltage limit (pu)");
  app.add_option("--max-iter", spec.config.max_iterations, "Control iteration cap");
  app.add_option("--mode", args.mode, "powerflow | linear")->check(CLI::IsMember({"powerflow", "linear"}));
  app.add_flag("--no-clamp", args.no_clamp, "Do not clamp set-points to the voltage limits");
  app.add_option("--bpp", args.bpp, "Sensitivity matrix: reactance (series reactance only) | full")
      ->check(CLI::IsMember({"reactance", "full"}));
  app.add_option("--slack", args.slack, "Slack magnitude as a control coordinate: include | exclude")
      ->check(CLI::IsMember({"include", "exclude"}));
  app.add_option("--solver", args.solver, "newton | fdlf")->check(CLI::IsMember({"newton", "fdlf"}));
  app.add_option("--output", args.output, "table | csv | json")->check(CLI::IsMember({"table", "csv", "json"}));
  app.add_option("--trace", spec.trace_path, "Write the per-iteration voltage trace CSV here");
}

inline void finish_run_spec(RunSpec& spec, const RunArgs& args) {
  for (const std::string& d : args.disturb) spec.disturbances.push_back(parse_disturbance(d));
  if (args.method == "ovc") spec.method = Method::Ovc;
  else if (args.method == "svc") spec.method = Method::Svc;
  else if (args.method == "compare") spec.method = Method::Compare;
  else if (args.method == "solve") spec.method = Method::Solve;
  else spec.method = Method::Sens;
  spec.output = args.output == "csv" ? OutputFormat::Csv : args.output == "json" ? OutputFormat::Json : OutputFormat::Table;
  if (args.flat_opt && args.flat_opt->count() > 0) spec.flat_setpoints = args.flat;
  spec.config.evaluation_mode = args.mode == "linear" ? EvaluationMode::Linear : EvaluationMode::PowerFlow;
  spec.config.solver = args.solver == "fdlf" ? PowerFlowSolver::Fdlf : PowerFlowSolver::Newton;
  spec.config.clamp_pv = !args.no_clamp;
  spec.config.sensitivity.bpp = args.bpp == "full" ? BppVariant::Full : BppVariant::SeriesReactance;
  spec.config.sensitivity.slack = args.slack == "exclude" ? SlackCoordinate::Excluded : SlackCoordinate::Included;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline Network prepare_network(const RunSpec& spec) {
  Network net = load_case(resolve_case(spec.case_path));
  if (spec.flat_setpoints) net = set_flat_setpoints(std::move(net), *spec.flat_setpoints);
  for (const Disturbance& d : spec.disturbances) net = apply_disturbance(std::move(net), d.bus, d.mvar);
  require_valid(net);
  return net;
}

inline std::vector<std::size_t> id_order(const std::vector<int>& ids) {
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  return order;
}

inline void print_solution(const Network& net, const PowerFlowSolution& sol, OutputFormat fmt_kind,
                           std::ostream& out) {
  const auto order = id_order(sol.bus_ids);
  if (fmt_kind == OutputFormat::Json) {
    nlohmann::json doc;
    doc["converged"] = sol.converged;
    doc["iterations"] = sol.iterations;
    doc["max_mismatch_pu"] = sol.max_mismatch;
    doc["buses"] = nlohmann::json::array();
    for (std::size_t i : order)
      doc["buses"].push_back({{"bus", sol.bus_ids[i]},
                              {"kind", to_string(net.buses[i].kind)},
                              {"vm_pu", sol.vm[i]},
                              {"va_deg", sol.va[i] * 180.0 / std::numbers::pi}});
    out << doc.dump(2) << "\n";
    return;
  }
  if (fmt_kind == OutputFormat::Csv) {
    out << "bus,kind,vm_pu,va_deg\n";
    for (std::size_t i : order)
      out << sol.bus_ids[i] << "," << to_string(net.buses[i].kind) << "," << fmt("%.6f", sol.vm[i]) << ","
          << fmt("%.4f", sol.va[i] * 180.0 / std::numbers::pi) << "\n";
    return;
  }
  out << "power flow: converged in " << sol.iterations << " iterations, max mismatch "
      << fmt("%.2e", sol.max_mismatch) << " pu\n";
  out << "  bus  kind     vm_pu    va_deg\n";
  for (std::size_t i : order) {
    char line[96];
    std::snprintf(line, sizeof line, "%5d  %-5s  %8.4f  %8.3f\n", sol.bus_ids[i], to_string(net.buses[i].kind),
                  sol.vm[i], sol.va[i] * 180.0 / std::numbers::pi);
    out << line;
  }
}

inline void print_matrix_csv(const std::string& name, const DenseMatrix& m, const std::vector<int>& row_ids,
                             const std::vector<int>& col_ids, std::ostream& out) {
  out << name;
  for (int c : col_ids) out << "," << c;
  out << "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << row_ids[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out << "," << fmt("%.10g", m(i, j));
    out << "\n";
  }
}

inline void print_trace_table(const ControlTrace& t, std::ostream& out) {
  const auto order = id_order(t.bus_ids);
  out << (t.method == ControlMethod::Ovc ? "OVC" : "SVC") << ": " << to_string(t.outcome) << " after "
      << t.iterations.size() << " iteration" << (t.iterations.size() == 1 ? "" : "s") << "\n";
  out << "  bus  kind     before";
  for (std::size_t k = 1; k <= t.iterations.size(); ++k) {
    char h[32];
    std::snprintf(h, sizeof h, "  %8s", ("iter-" + std::to_string(k)).c_str());
    out << h;
  }
  out << "\n";
  for (std::size_t i : order) {
    char line[64];
    std::snprintf(line, sizeof line, "%5d  %-5s  %8.4f", t.bus_ids[i], to_string(t.bus_kinds[i]),
                  t.initial_solution.vm[i]);
    out << line;
    for (const IterationRecord& r : t.iterations) {
      const double v = r.vm_after[i];
      const bool out_of_limits = t.bus_kinds[i] == BusKind::PQ && (v < t.config.v_min || v > t.config.v_max);
      std::snprintf(line, sizeof line, "  %8.4f%s", v, out_of_limits ? "*" : "");
      out << line;
    }
    out << "\n";
  }
  for (const IterationRecord& r : t.iterations) {
    out << "iter-" << r.index << ": controlled bus " << r.controlled_bus << ", dV " << fmt("%+.4f", r.dv_cb_target)
        << ", sigma1 " << fmt("%.4f", r.sigma1) << ", alpha " << fmt("%+.4f", r.alpha) << ", J "
        << fmt("%.6f", r.j_achieved) << " (predicted " << fmt("%.6f", r.j_predicted) << ")";
    if (!r.clamped.empty()) {
      out << ", clamped";
      for (int b : r.clamped) out << " " << b;
    }
    out << "\n";
  }
  out << "final set-points:";
  for (std::size_t k = 0; k < t.pv_ids.size(); ++k) out << " " << t.pv_ids[k] << "=" << fmt("%.4f", t.final_setpoints[k]);
  out << "\n";
}

inline int outcome_code(Outcome o) {
  switch (o) {
    case Outcome::Resolved: return exit_code::kOk;
    case Outcome::IterationCapHit:
    case Outcome::Oscillating: return exit_code::kNotResolved;
    case Outcome::Infeasible: return exit_code::kInfeasible;
  }
  return exit_code::kInputError;
}

inline void write_trace_file(const std::string& path, const ControlTrace& t) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CaseError("cannot write trace file " + path);
  f << write_trace_csv(t);
}

}  // namespace detail

/// Executes one run; rendered results go to `out`, diagnostics to `err`.
inline int run(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  try {
    const Network net = detail::prepare_network(spec);
    switch (spec.method) {
      case Method::Solve: {
        spec.config.validate();
        detail::print_solution(net, evaluate_power_flow(net, spec.config), spec.output, out);
        return exit_code::kOk;
      }
      case Method::Sens: {
        const SensitivityModel m = build_model(net, spec.config.sensitivity);
        std::vector<int> all = m.pv_ids;
        all.insert(all.end(), m.pq_ids.begin(), m.pq_ids.end());
        detail::print_matrix_csv("s_vq", m.s_vq, all, all, out);
        out << "\n";
        detail::print_matrix_csv("a_ctrl", m.a_ctrl, m.pq_ids, m.pv_ids, out);
        return exit_code::kOk;
      }
      case Method::Ovc:
      case Method::Svc: {
        const ControlTrace t = run_control(net, spec.config, spec.method == Method::Ovc ? ControlMethod::Ovc : ControlMethod::Svc);
        if (spec.output == OutputFormat::Csv) out << write_trace_csv(t);
        else if (spec.output == OutputFormat::Json) out << trace_to_json(t).dump(2) << "\n";
        else detail::print_trace_table(t, out);
        detail::write_trace_file(spec.trace_path, t);
        return detail::outcome_code(t.outcome);
      }
      case Method::Compare: {
        const ComparisonReport r = compare_ovc_svc(net, spec.config);
        if (spec.output == OutputFormat::Json) {
          out << nlohmann::json{{"controlled_bus", r.controlled_bus}, {"j_ovc", r.j_ovc}, {"j_svc", r.j_svc}}.dump(2)
              << "\n";
        } else if (spec.output == OutputFormat::Csv) {
          out << "controlled_bus,j_ovc,j_svc\n"
              << r.controlled_bus << "," << detail::fmt("%.6f", r.j_ovc) << "," << detail::fmt("%.6f", r.j_svc) << "\n";
        } else {
          out << "controlled bus " << r.controlled_bus << " (first iteration)\n";
          out << "  method  J\n";
          out << "  OVC     " << detail::fmt("%.6f", r.j_ovc) << "\n";
          out << "  SVC     " << detail::fmt("%.6f", r.j_svc) << "\n";
        }
        detail::write_trace_file(spec.trace_path, r.ovc);
        return exit_code::kOk;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kInputError;
  }
  return exit_code::kInputError;
}

/// Parses the arguments of one `run` (without the subcommand name).
inline RunSpec parse_run_args(const std::vector<std::string>& args) {
  CLI::App app{"ovc run"};
  RunSpec spec;
  RunArgs raw;
  add_run_options(app, spec, raw);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  finish_run_spec(spec, raw);
  return spec;
}

inline std::vector<std::string> split_words(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

/// One scenario per non-empty, non-`#` line; output blocks follow input order
/// regardless of `jobs`. Returns the largest exit code.
inline int run_batch(const std::string& path, unsigned jobs, std::ostream& out, std::ostream& err) {
  std::ifstream in(path);
  if (!in) {
    err << "error: cannot open batch file " << path << "\n";
    return exit_code::kInputError;
  }
  std::vector<std::pair<int, std::string>> lines;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.emplace_back(lineno, line);
  }

  struct Result {
    std::string out, err;
    int code = 0;
  };
  std::vector<Result> results(lines.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < lines.size();) {
      std::ostringstream o, e;
      try {
        results[i].code = run(parse_run_args(split_words(lines[i].second)), o, e);
      } catch (const std::exception& ex) {
        e << "error: " << ex.what() << "\n";
        results[i].code = exit_code::kInputError;
      }
      results[i].out = o.str();
      results[i].err = e.str();
    }
  };
  jobs = std::clamp<unsigned>(jobs, 1, std::max<unsigned>(1, static_cast<unsigned>(lines.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  int worst = exit_code::kOk;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out << "== line " << lines[i].first << ": " << lines[i].second << "\n" << results[i].out;
    out << "exit " << results[i].code << "\n";
    if (!results[i].err.empty()) err << "line " << lines[i].first << ": " << results[i].err;
    worst = std::max(worst, results[i].code);
  }
  return worst;
}

/// Full command line entry point.
inline int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Voltage set-point control for power networks"};
  app.require_subcommand(1);
  CLI::App* run_cmd = app.add_subcommand("run", "Run one scenario");
  RunSpec spec;
  RunArgs raw;
  add_run_options(*run_cmd, spec, raw);
  CLI::App* batch_cmd = app.add_subcommand("batch", "Run one scenario per line of FILE");
  std::string batch_file;
  unsigned jobs = 1;
  batch_cmd->add_option("file", batch_file, "Scenario list")->required();
  batch_cmd->add_option("--jobs", jobs, "Parallel workers")->check(CLI::Range(1u, 256u));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kInputError;
  }

  if (batch_cmd->parsed()) return run_batch(batch_file, jobs, out, err);
  try {
    finish_run_spec(spec, raw);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kInputError;
  }
  return run(spec, out, err);
}

}  // namespace ovc::cli
