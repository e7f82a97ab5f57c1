#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "castel/check.hpp"
#include "castel/delivery.hpp"
#include "castel/net_json.hpp"
#include "castel/reach.hpp"
#include "castel/sweep.hpp"
#include "castel/unfold.hpp"

namespace castel::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kConfigError = 2;

struct Options {
  std::string command;
  std::string scenario;
  std::string formula;
  std::string grid;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<double> horizon;
  bool exact = false;
  bool no_jmp = false;
  bool unfold = false;
  unsigned jobs = 1;
  std::string out = ".";
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline std::size_t state_limit() {
  const char* env = std::getenv("CASTEL_STATE_LIMIT");
  if (!env || !*env) return kDefaultStateLimit;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || v == 0) throw ConfigError(std::string("CASTEL_STATE_LIMIT must be a positive integer, got '") +
                                                env + "'");
  return static_cast<std::size_t>(v);
}

inline Scenario load(const Options& o) {
  Scenario s = o.scenario.empty() ? scenario_from_json(Json::object()) : load_scenario(o.scenario);
  if (o.seed) s.seed = *o.seed;
  if (o.horizon) {
    if (!(*o.horizon > 0) || !std::isfinite(*o.horizon)) throw ConfigError("--horizon must be positive");
    s.horizon = *o.horizon;
  }
  if (o.runs) {
    if (*o.runs == 0) throw ConfigError("--runs must be at least 1");
    s.runs = *o.runs;
    s.samples = *o.runs;
  }
  if (o.no_jmp) {
    if (s.model != "deadspot") throw ConfigError("--no-jmp applies to the deadspot model only");
    s.params.jmp = false;
  }
  return s;
}

inline std::filesystem::path out_dir(const Options& o) {
  std::filesystem::path dir(o.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + o.out + "': " + ec.message());
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = false) {
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  return f;
}

template <typename F>
void write_file(const std::filesystem::path& p, F&& body) {
  auto f = open_out(p);
  body(f);
}

inline void write_json(const std::filesystem::path& p, const Json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

// Wall-clock data goes to a sidecar so the primary output stays reproducible.
inline void write_meta(const std::filesystem::path& primary, const Options& o, Clock::time_point start) {
  const double wall = std::chrono::duration<double>(Clock::now() - start).count();
  Json j;
  j["command"] = o.command;
  j["version"] = kVersion;
  j["jobs"] = o.jobs;
  j["wall_time_s"] = wall;
  std::filesystem::path meta = primary;
  meta.replace_extension(".meta.json");
  write_json(meta, j);
}

inline Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json interval_json(const stats::Interval& ci) {
  return Json::array({number_or_null(ci.lo), number_or_null(ci.hi)});
}

inline Json summary_json(const deadspot::DeliverySummary& s) {
  Json j;
  j["runs"] = s.runs;
  j["created"] = s.created;
  j["delivered"] = s.delivered;
  j["censored"] = s.censored;
  j["jumps"] = s.jumps;
  j["noop_jumps"] = s.noop_jumps;
  j["empty"] = s.empty;
  j["mean_delay"] = number_or_null(s.mean_delay);
  j["mean_delay_ci"] = interval_json(s.mean_delay_ci);
  j["mean_ratio"] = number_or_null(s.mean_ratio);
  j["mean_ratio_ci"] = interval_json(s.mean_ratio_ci);
  j["half_time_fraction"] = number_or_null(s.half_time_fraction);
  j["half_time_ci"] = interval_json(s.half_time_ci);
  return j;
}

inline std::vector<std::string> read_formulas(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open formula file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError("formula file '" + path + "' has no formulas");
  return out;
}

inline void report_overflow(const StateLimitError& e, std::ostream& err) {
  err << "error: " << e.what() << '\n'
      << "frontier: " << e.frontier() << " unexplored states after " << e.explored()
      << " (raise CASTEL_STATE_LIMIT to explore further)\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Simulates `runs` seeded runs. Writes trace.csv, trace.bin and
/// summary.json; deadspot scenarios add messages.csv and runs.csv.
inline int cmd_simulate(const Options& o, std::ostream& out) {
  const auto start = detail::Clock::now();
  const Scenario sc = detail::load(o);
  auto [net, init] = sc.build();
  const auto dir = detail::out_dir(o);
  const bool ds = net.name() == "deadspot";
  SimOptions so;
  if (ds) so.observer = deadspot::message_tracker();

  auto csv = detail::open_out(dir / "trace.csv");
  auto bin = detail::open_out(dir / "trace.bin", true);
  std::vector<deadspot::RunDelivery> per_run;
  std::vector<deadspot::DeliveryRecord> records;
  std::size_t events = 0;
  std::map<std::string, std::size_t> firings;
  for (const auto& t : net.transitions()) firings[t.name] = 0;

  // Chunks keep memory bounded; output order is by seed.
  const std::size_t chunk = 64;
  for (std::size_t first = 0; first < sc.runs; first += chunk) {
    const std::size_t n = std::min(chunk, sc.runs - first);
    std::vector<Trace> traces(n);
    parallel_for(n, o.jobs, [&](std::size_t i) { traces[i] = simulate(net, init, sc.horizon, sc.seed + first + i, so); });
    for (const auto& t : traces) {
      write_trace_csv(net, t, csv);
      write_trace_binary(t, bin);
      events += t.events.size();
      for (const auto& ev : t.events) ++firings[net.transitions()[ev.transition].name];
      if (ds) {
        auto recs = deadspot::delivery_records(t);
        per_run.push_back(deadspot::run_delivery(t, recs));
        records.insert(records.end(), recs.begin(), recs.end());
      }
    }
  }

  Json j;
  j["command"] = "simulate";
  j["model"] = sc.model;
  j["net"] = net.name();
  j["seed"] = sc.seed;
  j["runs"] = sc.runs;
  j["horizon"] = sc.horizon;
  j["events"] = events;
  j["firings"] = firings;
  if (ds) {
    j["params"] = deadspot::to_json(sc.params);
    const auto s = deadspot::summarize_delivery(std::move(per_run), std::move(records), sc.level);
    j["delivery"] = detail::summary_json(s);
    detail::write_file(dir / "messages.csv", [&](std::ostream& os) { deadspot::write_delivery_csv(s.records, os); });
    detail::write_file(dir / "runs.csv", [&](std::ostream& os) { deadspot::write_run_csv(s.per_run, os); });
    out << "runs: " << sc.runs << "  events: " << events << "  created: " << s.created
        << "  delivered: " << s.delivered << "  jumps: " << s.jumps << '\n';
  } else {
    out << "runs: " << sc.runs << "  events: " << events << '\n';
  }
  detail::write_json(dir / "summary.json", j);
  detail::write_meta(dir / "summary.json", o, start);
  return kOk;
}

/// Checks every formula of the formula file; writes report.json.
inline int cmd_check(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = detail::Clock::now();
  if (o.formula.empty()) throw ConfigError("check needs --formula");
  const auto texts = detail::read_formulas(o.formula);
  std::vector<std::shared_ptr<const StateFormula>> formulas;
  for (const auto& t : texts) {
    try {
      formulas.push_back(parse_formula(t));
    } catch (const ParseError& e) {
      throw ConfigError("formula '" + t + "': " + e.what());
    }
    castel::detail::require_checkable(*formulas.back());
  }
  const Scenario sc = detail::load(o);
  auto [net, init] = sc.build();
  const auto dir = detail::out_dir(o);

  std::optional<Net> basic;
  Marking basic_init;
  if (o.exact && o.unfold) {
    basic.emplace(castel::unfold(net));
    basic_init = unfold_marking(net, *basic, init);
  }

  SmcOptions so;
  so.samples = sc.samples;
  so.level = sc.level;
  so.horizon = sc.horizon;
  so.seed = sc.seed;
  so.jobs = o.jobs;

  Json results = Json::array();
  for (std::size_t i = 0; i < formulas.size(); ++i) {
    const auto& f = *formulas[i];
    const CheckResult r = smc_check(net, init, f, so);
    Json j;
    j["formula"] = r.formula;
    j["estimate"] = r.estimate;
    j["ci"] = detail::interval_json(r.ci);
    j["level"] = r.level;
    j["samples"] = r.samples;
    j["successes"] = r.successes;
    j["truncated"] = r.truncated;
    j["verdict"] = verdict_name(r.verdict);
    out << r.formula << "\n  smc: " << format_number(r.estimate) << " [" << format_number(r.ci.lo) << ", "
        << format_number(r.ci.hi) << "] " << verdict_name(r.verdict) << '\n';
    if (o.exact) {
      ExactOptions eo;
      eo.state_limit = detail::state_limit();
      eo.epsilon = sc.epsilon;
      ExactResult x;
      try {
        if (basic) {
          eo.coloured = &net;
          x = exact_check(*basic, basic_init, f, eo);
        } else {
          x = exact_check(net, init, f, eo);
        }
      } catch (const StateLimitError& e) {
        detail::report_overflow(e, err);
        return kRuntimeError;
      }
      Json e;
      e["probability"] = x.probability;
      e["states"] = x.states;
      e["transitions"] = x.transitions;
      e["epsilon"] = eo.epsilon;
      e["unfolded"] = basic.has_value();
      if (f.kind == StateFormula::Kind::Prob && !f.query) {
        const bool holds = compare(x.probability, f.cmp, f.value);
        e["verdict"] = holds ? "holds" : "fails";
      }
      j["exact"] = e;
      out << "  exact: " << format_number(x.probability) << " (" << x.states << " states)\n";
    }
    results.push_back(j);
  }

  Json rep;
  rep["command"] = "check";
  rep["model"] = sc.model;
  rep["net"] = net.name();
  rep["seed"] = sc.seed;
  rep["samples"] = sc.samples;
  rep["horizon"] = sc.horizon;
  rep["results"] = results;
  detail::write_json(dir / "report.json", rep);
  detail::write_meta(dir / "report.json", o, start);
  return kOk;
}

/// Grid sweep (sweep.csv, sweep_long.csv) or satellite sweep (satellite.csv).
inline int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = detail::Clock::now();
  if (o.grid.empty()) throw ConfigError("sweep needs --grid");
  const Json g = read_json_file(o.grid);
  castel::detail::only_keys(g, {"mode", "grid", "n", "runs", "metrics"}, "grid file");
  const Scenario sc = detail::load(o);
  const std::string mode = castel::detail::get_or<std::string>(g, "mode", "grid", "grid file");
  std::size_t runs = castel::detail::get_or<std::size_t>(g, "runs", 10, "grid file");
  if (o.runs) runs = *o.runs;
  const auto dir = detail::out_dir(o);
  const std::string stamp =
      "# castel sweep seed=" + std::to_string(sc.seed) + " runs=" + std::to_string(runs) + " horizon=" +
      format_number(sc.horizon) + '\n';

  if (mode == "satellite") {
    if (sc.model != "deadspot") throw ConfigError("satellite sweeps need the deadspot model");
    const auto ns = castel::detail::get<std::vector<int>>(castel::detail::member(g, "n", "grid file"), "grid file.n");
    deadspot::SweepRunOptions ro;
    ro.horizon = sc.horizon;
    ro.base_seed = sc.seed;
    ro.jobs = o.jobs;
    const auto r = deadspot::satellite_sweep(sc.params, ns, runs, ro);
    auto f = detail::open_out(dir / "satellite.csv");
    f << stamp;
    write_satellite_csv(r, f);
    out << "A=" << format_number(r.fit.slope) << " B=" << format_number(r.fit.intercept)
        << " R2=" << format_number(r.fit.r2) << '\n';
    detail::write_meta(dir / "satellite.csv", o, start);
    return kOk;
  }
  if (mode != "grid") throw ConfigError("grid file: unknown mode '" + mode + "'");

  SweepSpec spec;
  for (const auto& [name, values] : castel::detail::member(g, "grid", "grid file").items())
    spec.grid.emplace_back(name, castel::detail::get<std::vector<double>>(values, "grid file.grid." + name));
  spec.runs = runs;
  spec.base_seed = sc.seed;
  spec.horizon = sc.horizon;
  spec.jobs = o.jobs;
  if (g.contains("metrics")) spec.metrics = castel::detail::get<std::vector<std::string>>(g.at("metrics"), "metrics");
  else spec.metrics = sc.model == "deadspot" ? std::vector<std::string>{"events", "mean_cars", "mean_delay"}
                                             : std::vector<std::string>{"events"};

  NetBuilder builder;
  if (sc.model == "deadspot") {
    builder = [&](const Cell& cell) {
      deadspot::Params p = sc.params;
      for (const auto& [name, v] : cell) deadspot::set_param(p, name, v);
      return deadspot::build(p);
    };
  } else {
    // Grid parameters override net constants of the same name.
    builder = [&](const Cell& cell) {
      Scenario s = sc;
      for (const auto& [name, v] : cell) {
        auto it = std::find_if(s.net->constants.begin(), s.net->constants.end(),
                               [&](const auto& c) { return c.first == name; });
        if (it == s.net->constants.end()) throw ConfigError("net has no constant '" + name + "'");
        it->second = v;
      }
      return s.build();
    };
  }
  const SweepTable t = sweep(builder, spec);
  for (const auto& w : t.warnings) err << "warning: " << w << '\n';
  std::size_t failed = 0;
  for (const auto& r : t.rows) failed += r.failed;
  {
    auto f = detail::open_out(dir / "sweep.csv");
    f << stamp;
    write_sweep_csv(t, f);
  }
  detail::write_file(dir / "sweep_long.csv", [&](std::ostream& os) { write_sweep_long_csv(t, os); });
  out << "cells: " << t.rows.size() / spec.metrics.size() << "  rows: " << t.rows.size() << "  failed rows: " << failed
      << '\n';
  detail::write_meta(dir / "sweep.csv", o, start);
  return kOk;
}

/// Reachability graph and CTMC export; `--unfold` also exports the basic
/// net and compares the two graphs.
inline int cmd_reach(const Options& o, std::ostream& out, std::ostream& err) {
  const auto start = detail::Clock::now();
  const Scenario sc = detail::load(o);
  auto [net, init] = sc.build();
  const auto dir = detail::out_dir(o);
  const std::size_t limit = detail::state_limit();
  try {
    const ReachGraph g = reachability(net, init, limit);
    const Ctmc c = to_ctmc(g);
    detail::write_file(dir / "reach.dot", [&](std::ostream& os) { write_dot(net, g, os); });
    detail::write_file(dir / "reach.tra", [&](std::ostream& os) { write_tra(c, os); });
    detail::write_file(dir / "reach.lab", [&](std::ostream& os) { write_lab(c, os); });
    detail::write_file(dir / "reach.sta", [&](std::ostream& os) { write_sta(net, g, os); });
    out << "states: " << g.states.size() << "\nedges: " << g.edges.size() << "\nctmc transitions: "
        << c.entries.size() << '\n';
    if (o.unfold) {
      const Net basic = castel::unfold(net);
      detail::write_json(dir / "unfolded.json", to_json(basic.spec()));
      const ReachGraph gb = reachability(basic, unfold_marking(net, basic, init), limit);
      detail::write_file(dir / "reach_unfolded.dot", [&](std::ostream& os) { write_dot(basic, gb, os); });
      detail::write_file(dir / "reach_unfolded.tra", [&](std::ostream& os) { write_tra(to_ctmc(gb), os); });
      const auto rep = compare_unfolded(net, g, basic, gb);
      out << "unfolded places: " << basic.places().size() << "\nunfolded transitions: " << basic.transitions().size()
          << "\nunfolded states: " << gb.states.size() << "\nisomorphic: " << (rep.isomorphic ? "true" : "false")
          << '\n';
      if (!rep.isomorphic) {
        err << "error: " << rep.reason << '\n';
        return kRuntimeError;
      }
    }
  } catch (const StateLimitError& e) {
    detail::report_overflow(e, err);
    return kRuntimeError;
  }
  detail::write_meta(dir / "reach.tra", o, start);
  return kOk;
}

/// Parses arguments and dispatches; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Coloured stochastic Petri net simulator and model checker"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1, 1);
  Options o;
  std::uint64_t seed = 0;
  std::size_t runs = 0;
  double horizon = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--scenario", o.scenario, "scenario JSON file (default: deadspot defaults)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "base seed");
    sub->add_option("--horizon", horizon, "simulation horizon");
    sub->add_option("--jobs", o.jobs, "worker threads (0: all cores)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--no-jmp", o.no_jmp, "build the deadspot net without jmp");
  };
  auto* sim = app.add_subcommand("simulate", "simulate seeded runs");
  common(sim);
  sim->add_option("--runs", runs, "number of runs");
  auto* chk = app.add_subcommand("check", "check formulas statistically (and exactly with --exact)");
  common(chk);
  chk->add_option("--formula", o.formula, "formula file, one formula per line")->required()->check(CLI::ExistingFile);
  chk->add_option("--runs", runs, "number of SMC samples");
  chk->add_flag("--exact", o.exact, "also compute exact probabilities on the explicit chain");
  chk->add_flag("--unfold", o.unfold, "run the exact check on the unfolded net");
  auto* swp = app.add_subcommand("sweep", "parameter sweep");
  common(swp);
  swp->add_option("--grid", o.grid, "grid JSON file")->required()->check(CLI::ExistingFile);
  swp->add_option("--runs", runs, "runs per cell");
  auto* rch = app.add_subcommand("reach", "reachability graph and CTMC export");
  common(rch);
  rch->add_flag("--unfold", o.unfold, "also unfold the net and compare reachability graphs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string(kVersion) + "\n" : app.help());
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  for (auto* sub : {sim, chk, swp, rch}) {
    if (!sub->parsed()) continue;
    o.command = sub->get_name();
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--horizon")) o.horizon = horizon;
    if (sub->get_option_no_throw("--runs") && sub->count("--runs")) o.runs = runs;
  }

  try {
    if (o.command == "simulate") return cmd_simulate(o, out);
    if (o.command == "check") return cmd_check(o, out, err);
    if (o.command == "sweep") return cmd_sweep(o, out, err);
    return cmd_reach(o, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const StateLimitError& e) {
    detail::report_overflow(e, err);
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace castel::cli
