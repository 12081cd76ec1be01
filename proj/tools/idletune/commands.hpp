#pragma once

// Subcommand implementations for the idletune executable. run_cli() is the
// whole program minus process plumbing, so tests can drive it in-process.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "idletune/idletune.hpp"
#include "idletune/sinks.hpp"

namespace idletune::cli {

enum ExitCode : int {
  kOk = 0,
  kInternalError = 1,
  kUsageError = 2,
  kInfeasible = 3,
  kInputError = 4,  // malformed record or out-of-order timestamps
  kSinkFailure = 5,
  kCannotInitialize = 6,
};

inline constexpr const char* kSeedEnv = "IDLETUNE_SEED";

inline StepSchedule parse_schedule(const std::string& s) {
  if (s == "harmonic") return StepSchedule::harmonic();
  const auto colon = s.find(':');
  if (colon != std::string::npos) {
    const std::string kind = s.substr(0, colon);
    double v = 0.0;
    try {
      v = std::stod(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw DomainError("bad schedule parameter in \"" + s + "\"");
    }
    if (kind == "power") return StepSchedule::power(v);
    if (kind == "constant") return StepSchedule::constant(v);
  }
  throw DomainError("unknown schedule \"" + s + "\" (expected harmonic, power:A or constant:C)");
}

inline SolverPolicy make_policy(const std::string& mode, std::uint64_t threshold) {
  SolverPolicy p;
  p.large_n_threshold = threshold;
  if (mode == "auto")
    p.mode = SolverPolicy::Mode::Auto;
  else if (mode == "exact")
    p.mode = SolverPolicy::Mode::ForceExact;
  else if (mode == "largen")
    p.mode = SolverPolicy::Mode::ForceLargeN;
  else
    throw DomainError("unknown policy \"" + mode + "\" (expected auto, exact or largen)");
  return p;
}

struct Streams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

struct ModelFlags {
  std::uint64_t users = 1;
  double beta = 0.0;
  double xi = 0.0;

  void add(CLI::App* sub, bool with_beta = true) {
    sub->add_option("--users,-N", users, "Number of proxy users N")->required();
    if (with_beta) sub->add_option("--beta", beta, "Per-user request rate (requests/s)")->required();
    sub->add_option("--xi", xi, "Probability that a request is marked (produces a bind)")->required();
  }
  ModelParams params() const { return {users, beta, xi}; }
};

struct Options {
  ModelFlags model;
  double eps = 0.1;
  double timeout = 0.0;
  std::string policy = "auto";
  std::uint64_t threshold = 500;
  std::uint64_t trials = 100000;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  double duration = 0.0;
  std::uint64_t processes = 1;
  std::uint64_t process_life = 0;
  std::string dispatch = "random";
  std::string in_path = "-";
  std::string out_path = "-";
  std::string windows_out;
  double window = 1200.0;
  double delta = 5.0;
  std::string schedule = "harmonic";
  std::string sink = "stdout";
};

inline void print(std::ostream& out, const nlohmann::ordered_json& j) { out << j.dump() << '\n'; }

inline int cmd_solve(const Options& o, Streams io) {
  try {
    const TimeoutSolution sol = solve_timeout(o.model.params(), o.eps, make_policy(o.policy, o.threshold));
    print(io.out, to_json(sol));
    io.err << "recommended nsslapd-idletimeout: " << sol.timeout_s << " s (" << to_string(sol.expression)
           << " expression)\n";
    return kOk;
  } catch (const InfeasibleTarget& e) {
    nlohmann::ordered_json j;
    j["error"] = "infeasible";
    j["feasibility_bound"] = e.bound();
    j["target_eps"] = o.eps;
    print(io.out, j);
    io.err << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  }
}

inline int cmd_prob(const Options& o, Streams io) {
  nlohmann::ordered_json j;
  j["failure_probability"] = failure_probability(o.model.params(), o.timeout);
  print(io.out, j);
  return kOk;
}

inline int cmd_bound(const Options& o, Streams io) {
  // beta does not enter the bound; any valid rate satisfies validation.
  ModelParams p = o.model.params();
  p.beta = 1.0;
  nlohmann::ordered_json j;
  j["feasibility_bound"] = feasibility_bound(p);
  print(io.out, j);
  return kOk;
}

inline int cmd_simulate(const Options& o, Streams io) {
  const SimResult r = simulate_failure_prob(o.model.params(), o.timeout, o.trials, o.seed, o.threads);
  print(io.out, to_json(r));
  io.err << "p_hat = " << r.p_hat << " +/- " << r.std_err << " (closed form "
         << failure_probability(o.model.params(), o.timeout) << ")\n";
  return kOk;
}

inline int cmd_sim_system(const Options& o, Streams io) {
  SystemConfig c;
  c.n_users = o.model.users;
  c.beta = o.model.beta;
  c.xi = o.model.xi;
  c.n_processes = o.processes;
  c.process_life = o.process_life;
  c.idle_timeout_s = o.timeout;
  c.duration_s = o.duration;
  if (o.dispatch == "random")
    c.dispatch = SystemConfig::Dispatch::UniformRandom;
  else if (o.dispatch == "round-robin")
    c.dispatch = SystemConfig::Dispatch::RoundRobin;
  else
    throw DomainError("unknown dispatch \"" + o.dispatch + "\" (expected random or round-robin)");
  const SystemReport r = simulate_system(c, o.seed);
  print(io.out, to_json(r));
  io.err << r.failed_binds << " of " << r.marked_requests << " binds failed\n";
  return kOk;
}

inline int cmd_gen_log(const Options& o, Streams io) {
  const std::vector<Event> events = generate_event_log(o.model.params(), o.duration, o.seed);
  std::ofstream file;
  std::ostream* out = &io.out;
  if (o.out_path != "-") {
    file.open(o.out_path, std::ios::trunc);
    if (!file) {
      io.err << "cannot open " << o.out_path << " for writing\n";
      return kInputError;
    }
    out = &file;
  }
  for (const Event& e : events) *out << format_event(e) << '\n';
  io.err << "wrote " << events.size() << " events\n";
  return kOk;
}

inline int cmd_tune(const Options& o, Streams io) {
  TunerConfig cfg;
  cfg.window_s = o.window;
  cfg.target_eps = o.eps;
  cfg.n_users = o.model.users;
  cfg.publish_delta_s = o.delta;
  cfg.schedule = parse_schedule(o.schedule);
  cfg.solver_policy = make_policy(o.policy, o.threshold);

  PublishSink sink;
  try {
    sink = make_sink(o.sink, io.out);
  } catch (const SinkError& e) {
    io.err << e.what() << '\n';
    return kSinkFailure;
  }

  std::ifstream file;
  std::istream* in = &io.in;
  if (o.in_path != "-") {
    file.open(o.in_path);
    if (!file) {
      io.err << "cannot open " << o.in_path << '\n';
      return kInputError;
    }
    in = &file;
  }
  std::ofstream windows_out;
  if (!o.windows_out.empty()) {
    windows_out.open(o.windows_out, std::ios::trunc);
    if (!windows_out) {
      io.err << "cannot open " << o.windows_out << " for writing\n";
      return kInputError;
    }
  }

  Tuner tuner(cfg, sink);
  Windowizer windowizer(cfg.window_s, cfg.n_users);
  std::vector<WindowStats> ready;
  auto drain = [&] {
    for (const WindowStats& w : ready) {
      if (windows_out.is_open()) windows_out << to_json(w).dump() << '\n';
      if (auto rec = tuner.observe(w)) {
        print(io.out, to_json(*rec));
        if (rec->error) io.err << "iteration " << rec->iteration << ": " << *rec->error << '\n';
      } else {
        io.err << "skipping zero-traffic window at ts=" << w.window_start_ts << '\n';
      }
    }
    ready.clear();
  };

  read_events(*in, [&](const Event& e) {
    windowizer.push(e, ready);
    drain();
  });
  windowizer.finish(ready);
  drain();

  const TunerReport report = tuner.finish();
  const EstimatorState& st = *tuner.state();
  io.err << "windows: " << report.iterations.size() + report.skipped_windows << " (" << report.skipped_windows
         << " without traffic); xi_hat=" << st.xi_hat << " beta_hat=" << st.beta_hat
         << "; publishes: " << report.publishes << ", failed: " << report.publish_failures << '\n';
  return report.publish_failures > 0 ? kSinkFailure : kOk;
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, Streams io) {
  detail::Options o;
  CLI::App app{"Idle-timeout modelling and tuning for pooled LDAP connections"};
  app.set_config("--config", "", "Read flags from a TOML/INI file; command-line flags take precedence");
  app.require_subcommand(1);

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "RNG seed")->envname(kSeedEnv)->capture_default_str();
  };
  auto add_policy = [&](CLI::App* sub) {
    sub->add_option("--policy", o.policy, "Solver expression: auto, exact or largen")->capture_default_str();
    sub->add_option("--large-n-threshold", o.threshold, "auto switches to the large-N form above this N")
        ->capture_default_str();
  };

  auto* solve = app.add_subcommand("solve", "Idle timeout that achieves a target failure probability");
  o.model.add(solve);
  solve->add_option("--eps", o.eps, "Target failure probability")->capture_default_str();
  add_policy(solve);

  auto* prob = app.add_subcommand("prob", "Failure probability for a given idle timeout");
  o.model.add(prob);
  prob->add_option("--timeout", o.timeout, "Idle timeout in seconds")->required();

  auto* bound = app.add_subcommand("bound", "Lowest attainable failure probability (1 - xi)^N");
  o.model.add(bound, false);

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo estimate of the failure probability");
  o.model.add(simulate);
  simulate->add_option("--timeout", o.timeout, "Idle timeout in seconds")->required();
  simulate->add_option("--trials", o.trials, "Number of trials")->capture_default_str();
  simulate->add_option("--threads", o.threads, "Worker threads (0: hardware concurrency)");
  add_seed(simulate);

  auto* sim_system = app.add_subcommand("sim-system", "Event-driven simulation of the proxy connection pool");
  o.model.add(sim_system);
  sim_system->add_option("--processes", o.processes, "Child processes, one pooled connection each")
      ->capture_default_str();
  sim_system->add_option("--process-life", o.process_life, "Requests served before a respawn (0: never)")
      ->capture_default_str();
  sim_system->add_option("--idle-timeout", o.timeout, "Directory idle timeout in seconds (0: never drop)")
      ->capture_default_str();
  sim_system->add_option("--duration", o.duration, "Simulated seconds")->required();
  sim_system->add_option("--dispatch", o.dispatch, "random or round-robin")->capture_default_str();
  add_seed(sim_system);

  auto* gen_log = app.add_subcommand("gen-log", "Synthetic request/bind event log");
  o.model.add(gen_log);
  gen_log->add_option("--duration", o.duration, "Log duration in seconds")->required();
  gen_log->add_option("--out,-o", o.out_path, "Output path, - for stdout")->capture_default_str();
  add_seed(gen_log);

  auto* tune = app.add_subcommand("tune", "Track (xi, beta) from an event log and publish timeouts");
  tune->add_option("--users,-N", o.model.users, "Number of proxy users N")->required();
  tune->add_option("--in,-i", o.in_path, "Event log path, - for stdin")->capture_default_str();
  tune->add_option("--window,-T", o.window, "Averaging period in seconds")->capture_default_str();
  tune->add_option("--eps", o.eps, "Target failure probability")->capture_default_str();
  tune->add_option("--delta", o.delta, "Minimum timeout change (s) that triggers a publish")
      ->capture_default_str();
  tune->add_option("--schedule", o.schedule, "harmonic, power:A or constant:C")->capture_default_str();
  tune->add_option("--sink", o.sink, "stdout, file:PATH, ldif:PATH or webhook:URL")->capture_default_str();
  tune->add_option("--windows-out", o.windows_out, "Also write per-window statistics to this path");
  add_policy(tune);

  std::vector<const char*> argv;
  argv.push_back("idletune");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, io.out, io.err);
    return rc == 0 ? kOk : kUsageError;
  }

  try {
    if (*solve) return detail::cmd_solve(o, io);
    if (*prob) return detail::cmd_prob(o, io);
    if (*bound) return detail::cmd_bound(o, io);
    if (*simulate) return detail::cmd_simulate(o, io);
    if (*sim_system) return detail::cmd_sim_system(o, io);
    if (*gen_log) return detail::cmd_gen_log(o, io);
    if (*tune) return detail::cmd_tune(o, io);
  } catch (const DomainError& e) {
    io.err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const InfeasibleTarget& e) {
    io.err << "infeasible: " << e.what() << '\n';
    return kInfeasible;
  } catch (const ParseError& e) {
    io.err << "parse error: " << e.what() << '\n';
    return kInputError;
  } catch (const SequencingError& e) {
    io.err << "sequencing error: " << e.what() << '\n';
    return kInputError;
  } catch (const CannotInitialize& e) {
    io.err << "cannot initialize: " << e.what() << '\n';
    return kCannotInitialize;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kInternalError;
  }
  return kUsageError;
}

}  // namespace idletune::cli
