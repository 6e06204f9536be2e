// watch_cli: run monitors over event files, simulate shift scenarios,
// recompute metrics from logs, and prepare calibration sets.
//
// Exit codes: 0 success, 1 configuration error, 2 data error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "watch/watch.hpp"

namespace fs = std::filesystem;
using namespace watch;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2 };

std::string metrics_line(const MetricsReport& m) {
  std::string s = "runs=" + std::to_string(m.wctm.runs) + " wctm_alarm_rate=" + io::format_double(m.wctm.alarm_rate);
  if (m.shift == ShiftClass::harmful) s += " wctm_add=" + io::format_double(m.wctm.add.add);
  s += " unnecessary=" + std::to_string(m.wctm.unnecessary_alarms) + " missed=" + std::to_string(m.wctm.missed_alarms);
  if (m.baseline) {
    s += " ctm_alarm_rate=" + io::format_double(m.baseline->alarm_rate);
    if (m.shift == ShiftClass::harmful) s += " ctm_add=" + io::format_double(m.baseline->add.add);
    s += " ctm_unnecessary=" + std::to_string(m.baseline->unnecessary_alarms);
  }
  for (const auto& [k, v] : m.verdicts) s += " verdict[" + k + "]=" + std::to_string(v);
  return s;
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string baseline;
  bool conservative = false;
  std::string out = "watch_out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override one config key (key=value); repeatable");
  cmd->add_option("--baseline", c.baseline, "run a standard CTM side by side")->check(CLI::IsMember({"ctm", "none"}));
  cmd->add_flag("--conservative-p", c.conservative, "use u = 1 instead of random tie-breaking");
  cmd->add_option("--out", c.out, "output directory");
}

io::RunConfig resolve(const Common& c) {
  io::RunConfig rc;
  if (!c.config_path.empty()) rc = io::load_run_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
    io::apply_config_value(rc, std::string(io::trim(std::string_view(kv).substr(0, eq))),
                           std::string_view(kv).substr(eq + 1));
  }
  if (!c.baseline.empty()) rc.monitor.baseline_ctm = c.baseline == "ctm";
  if (c.conservative) rc.monitor.conservative_p = true;
  rc.monitor.validate();
  return rc;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw invalid_input("cannot write " + p.string());
  return os;
}

void write_common_outputs(const fs::path& dir, const io::RunConfig& rc, const json& report) {
  {
    auto os = open_out(dir / "config.resolved");
    io::write_resolved(os, rc);
  }
  auto os = open_out(dir / "report.json");
  os << report.dump(2) << '\n';
}

json rejected_json(const std::vector<io::RowError>& rows) {
  json j = json::array();
  for (const auto& r : rows) j.push_back({{"line", r.line}, {"message", r.message}});
  return j;
}

// --------------------------------------------------------------------------

int cmd_run(const Common& c, const std::string& input, const std::string& calibration) {
  io::RunConfig rc = resolve(c);
  if (!calibration.empty()) rc.calibration = calibration;
  if (rc.calibration.empty()) throw config_error("run needs a calibration set (--calibration or 'calibration' key)");
  if (rc.monitor.estimator.mode == EstimatorMode::oracle) {
    throw config_error("the oracle estimator is only available to simulate");
  }

  const auto cal = io::load_calibration(rc.calibration);
  const auto parsed = io::load_events(input);
  for (const auto& r : parsed.rejected) std::cerr << input << ":" << r.line << ": rejected: " << r.message << '\n';

  const fs::path dir(c.out);
  fs::create_directories(dir);
  auto log = open_out(dir / "events.jsonl");
  const RunSummary s = run_stream(rc.monitor, cal, parsed.events, rc.changepoint, rc.trace_window, true, {},
                                  [&](const StreamEvent& ev, const StepOutcome& o) {
                                    log << io::log_record(ev, o).dump() << '\n';
                                  });
  {
    auto tr = open_out(dir / "trace.csv");
    io::write_trace_header(tr);
    io::write_trace(tr, "run", s);
  }
  const auto metrics = aggregate({s}, rc.shift, rc.changepoint, rc.monitor.baseline_ctm);
  json report = {{"config", io::config_json(rc)},
                 {"input", input},
                 {"accepted_rows", parsed.events.size()},
                 {"rejected_rows", rejected_json(parsed.rejected)},
                 {"run", io::to_json(s)},
                 {"metrics", io::to_json(metrics)}};
  write_common_outputs(dir, rc, report);
  return kOk;
}

// --------------------------------------------------------------------------

Scenario load_scenario(const std::string& spec) {
  if (fs::is_regular_file(spec)) {
    std::ifstream in(spec);
    return io::parse_scenario(in, preset("none"));
  }
  return preset(spec);
}

void export_stream(const fs::path& dir, std::size_t k, const SimulatedStream& s) {
  const std::size_t d = s.calibration.front().x.size();
  auto header = [&](std::ostream& os) {
    for (std::size_t j = 0; j < d; ++j) os << "x_" << j << ',';
    os << "prediction,label\n";
  };
  auto row = [](std::ostream& os, const feature_vector& x, double p, double y) {
    for (double v : x) os << io::format_double(v) << ',';
    os << io::format_double(p) << ',' << io::format_double(y) << '\n';
  };
  auto cal = open_out(dir / ("seed_" + std::to_string(k) + "_calibration.csv"));
  header(cal);
  for (const auto& p : s.calibration) row(cal, p.x, p.prediction, p.label);
  auto ev = open_out(dir / ("seed_" + std::to_string(k) + "_events.csv"));
  header(ev);
  for (const auto& e : s.events) row(ev, e.x, e.prediction, e.label);
}

int cmd_simulate(const Common& c, const std::string& scenario, std::size_t seeds, std::uint64_t scenario_seed,
                 bool export_streams, bool write_logs, std::size_t threads) {
  io::RunConfig rc = resolve(c);
  SeedPlan plan;
  plan.scenario = load_scenario(scenario);
  plan.scenario.seed = scenario_seed;
  if (rc.changepoint) plan.scenario.changepoint = *rc.changepoint;
  rc.changepoint = plan.scenario.changepoint;
  rc.shift = shift_class_of(plan.scenario.kind);
  plan.config = rc.monitor;
  plan.seeds = seeds;
  plan.trace_window = rc.trace_window;
  plan.keep_traces = true;
  plan.threads = threads;
  if (seeds == 0) throw config_error("--seeds must be >= 1");

  const fs::path dir(c.out);
  fs::create_directories(dir);
  if (export_streams) fs::create_directories(dir / "streams");
  if (write_logs) fs::create_directories(dir / "events");

  std::vector<RunSummary> runs(seeds);
  parallel_for(seeds, threads, [&](std::size_t k) {
    const Scenario sc = scenario_for_seed(plan, k);
    const MonitorConfig cfg = config_for_seed(plan, k);
    const SimulatedStream s = generate_stream(sc);
    if (export_streams) export_stream(dir / "streams", k, s);
    std::ofstream log;
    if (write_logs) log = open_out(dir / "events" / ("seed_" + std::to_string(k) + ".jsonl"));
    runs[k] = run_stream(cfg, s.calibration, s.events, sc.changepoint, plan.trace_window, true, oracle_for(cfg, sc, s),
                         [&](const StreamEvent& ev, const StepOutcome& o) {
                           if (write_logs) log << io::log_record(ev, o).dump() << '\n';
                         });
  });

  {
    auto tr = open_out(dir / "trace.csv");
    io::write_trace_header(tr);
    for (std::size_t k = 0; k < seeds; ++k) io::write_trace(tr, "seed_" + std::to_string(k), runs[k]);
  }
  json per_run = json::array();
  for (const auto& r : runs) per_run.push_back(io::to_json(r));
  const auto metrics = aggregate(runs, rc.shift, rc.changepoint, rc.monitor.baseline_ctm);
  json report = {{"config", io::config_json(rc)},
                 {"scenario", {{"name", plan.scenario.name},
                               {"kind", std::string(to_string(plan.scenario.kind))},
                               {"changepoint", plan.scenario.changepoint},
                               {"horizon", plan.scenario.horizon},
                               {"lambda", plan.scenario.tilt_lambda},
                               {"seed", scenario_seed}}},
                 {"seeds", seeds},
                 {"runs", per_run},
                 {"metrics", io::to_json(metrics)}};
  write_common_outputs(dir, rc, report);
  std::cout << metrics_line(metrics) << '\n';
  return kOk;
}

// --------------------------------------------------------------------------

int cmd_eval(const Common& c, const std::vector<std::string>& logs) {
  io::RunConfig rc = resolve(c);
  std::vector<RunSummary> runs;
  bool any_baseline = false;
  for (const auto& path : logs) {
    std::ifstream in(path);
    if (!in) throw invalid_input("cannot open log " + path);
    RunRecorder rec(rc.changepoint, rc.trace_window, true);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (io::trim(line).empty()) continue;
      try {
        const StepOutcome o = io::outcome_from_record(json::parse(line));
        any_baseline = any_baseline || o.baseline.has_value();
        rec.record(o);
      } catch (const std::exception& e) {
        throw invalid_input(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    runs.push_back(rec.finish());
  }
  const fs::path dir(c.out);
  fs::create_directories(dir);
  {
    auto tr = open_out(dir / "trace.csv");
    io::write_trace_header(tr);
    for (std::size_t k = 0; k < runs.size(); ++k) io::write_trace(tr, fs::path(logs[k]).stem().string(), runs[k]);
  }
  json per_run = json::array();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    json r = io::to_json(runs[k]);
    r["log"] = logs[k];
    per_run.push_back(r);
  }
  const auto metrics = aggregate(runs, rc.shift, rc.changepoint, any_baseline);
  json report = {{"config", io::config_json(rc)}, {"runs", per_run}, {"metrics", io::to_json(metrics)}};
  write_common_outputs(dir, rc, report);
  std::cout << metrics_line(metrics) << '\n';
  return kOk;
}

// --------------------------------------------------------------------------

int cmd_calibrate(const std::string& input, const std::string& out) {
  const auto parsed = io::load_events(input);
  if (!parsed.rejected.empty()) {
    for (const auto& r : parsed.rejected) std::cerr << input << ":" << r.line << ": rejected: " << r.message << '\n';
    throw invalid_input("calibration input has malformed rows");
  }
  if (parsed.events.empty()) throw invalid_input("calibration input is empty");
  std::vector<LabeledPoint> pts;
  for (const auto& e : parsed.events) pts.push_back({e.x, e.prediction, e.label});
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  auto os = open_out(out);
  os << io::calibration_json(pts).dump(2) << '\n';
  std::cout << "wrote " << pts.size() << " calibration points to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted conformal test martingale monitor"};
  app.require_subcommand(1);

  Common common;
  std::string input, calibration, scenario = "none";
  std::size_t seeds = 1, threads = 0;
  std::uint64_t scenario_seed = 1000;
  bool export_streams = false, write_logs = false;
  std::vector<std::string> logs;
  std::string cal_out = "calibration.json";

  auto* run = app.add_subcommand("run", "monitor an event file");
  add_common(run, common);
  run->add_option("--input", input, "CSV or JSON-lines events")->required()->check(CLI::ExistingFile);
  run->add_option("--calibration", calibration, "calibration rows (CSV, JSON lines, or calibrate output)")
      ->check(CLI::ExistingFile);

  auto* sim = app.add_subcommand("simulate", "run a shift scenario over several seeds");
  add_common(sim, common);
  sim->add_option("--scenario", scenario, "preset name or scenario file");
  sim->add_option("--seeds", seeds, "number of seeds");
  sim->add_option("--scenario-seed", scenario_seed, "seed of the first generated stream");
  sim->add_option("--threads", threads, "worker threads (0 = all cores)");
  sim->add_flag("--export-streams", export_streams, "write generated streams as CSV");
  sim->add_flag("--logs", write_logs, "write one event log per seed");

  auto* ev = app.add_subcommand("eval", "recompute metrics from event logs");
  add_common(ev, common);
  ev->add_option("logs", logs, "event logs, one per run")->required()->check(CLI::ExistingFile);

  auto* cal = app.add_subcommand("calibrate", "fit the score standardizer and store a calibration set");
  cal->add_option("--input", input, "labeled rows (CSV or JSON lines)")->required()->check(CLI::ExistingFile);
  cal->add_option("--out", cal_out, "output JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(common, input, calibration);
    if (*sim) return cmd_simulate(common, scenario, seeds, scenario_seed, export_streams, write_logs, threads);
    if (*ev) return cmd_eval(common, logs);
    if (*cal) return cmd_calibrate(input, cal_out);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
