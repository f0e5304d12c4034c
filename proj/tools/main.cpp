// qpst: run transfer scenarios, suites of them, and emit plot scripts.
//
//   qpst run <config.yaml> [--out DIR] [--threads N] [--allow-imprecise]
//   qpst suite <dir>       [--out DIR] [--threads N] [--allow-imprecise]
//   qpst plot <curve.csv>  [--logx|--linx] [--dual|--single]

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "qpst/scenario.hpp"

namespace sc = qpst::scenario;

namespace {

int report_one(const sc::ScenarioResult& r) {
  if (r.status == sc::ExitCode::ConfigInvalid) {
    std::cerr << r.error << '\n';
    return static_cast<int>(r.status);
  }
  std::cout << (r.pass() ? "PASS " : "FAIL ") << r.id << '\n';
  for (const auto& [k, v] : r.metrics) std::printf("  %-24s %.10g\n", k.c_str(), v);
  for (const auto& c : r.checks) {
    std::printf("  expect %-16s %s = %s\n", c.expectation.metric.c_str(), c.pass ? "ok  " : "FAIL",
                c.value ? sc::detail::fmt17(*c.value).c_str() : "n/a");
  }
  for (const auto& w : r.warnings) std::cout << "  warning: " << w << '\n';
  for (const auto& n : r.notes) std::cout << "  note: " << n << '\n';
  if (!r.error.empty()) std::cerr << r.id << ": " << r.error << '\n';
  if (!r.csv_path.empty()) std::cout << "  csv: " << r.csv_path.string() << '\n';
  if (!r.summary_path.empty()) std::cout << "  summary: " << r.summary_path.string() << '\n';
  return static_cast<int>(r.status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum state transfer scenarios for oscillator networks"};
  app.require_subcommand(1);

  sc::RunOptions opt;
  std::string out = "out";
  unsigned threads = 0;
  bool allow_imprecise = false;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
    sub->add_flag("--allow-imprecise", allow_imprecise, "Keep results beyond the double-precision phase budget");
  };

  std::string config;
  auto* run = app.add_subcommand("run", "Run one scenario file");
  run->add_option("config", config, "Scenario YAML")->required();
  add_run_flags(run);

  std::string dir;
  auto* suite = app.add_subcommand("suite", "Run every scenario in a directory");
  suite->add_option("dir", dir, "Directory of scenario YAML files")->required();
  add_run_flags(suite);

  std::string csv;
  bool logx = false, linx = false, dual = false, single = false;
  auto* plot = app.add_subcommand("plot", "Write a matplotlib script for a curve CSV");
  plot->add_option("csv", csv, "Curve CSV written by run/suite")->required();
  auto* fl = plot->add_flag("--logx", logx, "Logarithmic tau axis");
  plot->add_flag("--linx", linx, "Linear tau axis")->excludes(fl);
  auto* fd = plot->add_flag("--dual", dual, "Exchange and recurrence panels");
  plot->add_flag("--single", single, "Exchange panel only")->excludes(fd);

  CLI11_PARSE(app, argc, argv);
  opt.out_dir = out;
  opt.threads = threads;
  opt.allow_imprecise = allow_imprecise;

  try {
    if (*run) return report_one(sc::run_scenario_file(config, opt));
    if (*suite) {
      const auto rep = sc::run_suite(dir, opt);
      std::cout << sc::human_summary(rep);
      std::cout << "report: " << rep.json_path.string() << ", " << rep.text_path.string() << '\n';
      return rep.pass() ? 0 : static_cast<int>(sc::ExitCode::ExpectationFailed);
    }
    if (*plot) {
      sc::PlotOptions po;
      if (logx || linx) po.logx = logx;
      if (dual || single) po.dual = dual;
      std::cout << sc::emit_plot_script(csv, po).string() << '\n';
      return 0;
    }
  } catch (const sc::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(sc::ExitCode::ConfigInvalid);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(sc::ExitCode::RuntimeFailure);
  }
  return 0;
}
