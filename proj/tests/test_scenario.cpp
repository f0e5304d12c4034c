#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "qpst/scenario.hpp"

namespace fs = std::filesystem;
namespace sc = qpst::scenario;

namespace {

// Three-site engineered chain: omega = N - 1 makes the corner element real at
// tau = pi/2, so the exchange peak is exactly 1.
constexpr const char* kSmall = R"(schema: 1
id: small
chain:
  topology: pst
  n: 3
  omega: 2
initial:
  alpha: 1.2
grid:
  tau_min: 0
  tau_max: 3.2
  samples: 33
expect:
  - metric: peak_p_ex
    window: [1.4, 1.8]
    min: 0.999999
)";

// Long-time sweep of a weakly coupled chain; beyond the phase budget.
constexpr const char* kImprecise = R"(schema: 1
id: overflow
chain:
  n: 10
  omega: 10
  Omega: 10010
  epsilon: 800
  Gamma: 1.0e-3
initial:
  alpha: 5
grid:
  tau_min: 1
  tau_max: 1.0e13
  samples: 27
  spacing: log
)";

class ScenarioTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("qpst_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    fs::create_directories(p.parent_path());
    std::ofstream(p) << text;
    return p;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream o;
    o << in.rdbuf();
    return o.str();
  }

  static std::string config_error(const std::string& text) {
    try {
      sc::parse_scenario(YAML::Load(text), "cfg.yaml");
    } catch (const sc::ConfigError& e) {
      return e.what();
    }
    return "";
  }

  static int cli(const std::string& args) {
    const std::string cmd = std::string(QPST_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  sc::RunOptions options(const std::string& sub, unsigned threads = 1) const { return {.allow_imprecise = false, .threads = threads, .out_dir = dir_ / sub}; }

  fs::path dir_;
};

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  if (at != std::string::npos) s.replace(at, from.size(), to);
  return s;
}

}  // namespace

TEST_F(ScenarioTest, ParsesSmallConfig) {
  const auto s = sc::parse_scenario(YAML::Load(kSmall), "small.yaml");
  EXPECT_EQ(s.id, "small");
  EXPECT_EQ(s.chain.topology, "pst");
  EXPECT_EQ(s.chain.n, 3u);
  EXPECT_EQ(s.grid.samples, 33u);
  ASSERT_EQ(s.expect.size(), 1u);
  EXPECT_EQ(s.expect[0].metric, "peak_p_ex");
}

TEST_F(ScenarioTest, MissingEpsilonNamesFieldAndLine) {
  const std::string cfg = "schema: 1\nid: x\nchain:\n  n: 5\n  omega: 10\n  Omega: 10010\ninitial:\n  alpha: 1\ngrid:\n  tau_min: 0\n  tau_max: 1\n  samples: 3\n";
  const auto msg = config_error(cfg);
  EXPECT_NE(msg.find("epsilon"), std::string::npos) << msg;
  EXPECT_NE(msg.find("cfg.yaml:4:"), std::string::npos) << msg;
}

TEST_F(ScenarioTest, UnknownKeyRejectedWithLocation) {
  const auto msg = config_error(replace(kSmall, "  omega: 2\n", "  omega: 2\n  omgea: 3\n"));
  EXPECT_NE(msg.find("unknown key 'omgea'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("cfg.yaml:7:"), std::string::npos) << msg;
}

TEST_F(ScenarioTest, SchemaVersionChecked) {
  EXPECT_FALSE(config_error(replace(kSmall, "schema: 1", "schema: 2")).empty());
  EXPECT_NE(config_error(replace(kSmall, "schema: 1\n", "")).find("schema"), std::string::npos);
}

TEST_F(ScenarioTest, BadValuesRejected) {
  EXPECT_NE(config_error(replace(kSmall, "samples: 33", "samples: many")).find("grid.samples"), std::string::npos);
  EXPECT_FALSE(config_error(replace(kSmall, "tau_max: 3.2", "tau_max: -1")).empty());
  EXPECT_FALSE(config_error(replace(kSmall, "n: 3", "n: 1")).empty());
}

TEST_F(ScenarioTest, RunWritesCurveAndSummary) {
  const auto r = sc::run_scenario_file(write("small.yaml", kSmall).string(), options("out"));
  ASSERT_TRUE(r.pass()) << r.error;
  ASSERT_EQ(r.checks.size(), 1u);
  EXPECT_TRUE(r.checks[0].pass);
  EXPECT_TRUE(fs::exists(r.summary_path));

  std::ifstream in(r.csv_path);
  std::string line;
  int rows = 0;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.starts_with("#")) continue;
    if (!header) {
      EXPECT_EQ(line, "tau,p_ex,p_rec,precision_flag");
      header = true;
      continue;
    }
    int commas = 0;
    for (char ch : line) commas += ch == ',' ? 1 : 0;
    EXPECT_EQ(commas, 3) << line;
    EXPECT_TRUE(line.ends_with(",0")) << line;
    ++rows;
  }
  EXPECT_TRUE(header);
  EXPECT_EQ(rows, 33);
  const auto text = slurp(r.csv_path);
  EXPECT_NE(text.find("# version: "), std::string::npos);
  EXPECT_NE(text.find("# n: 3"), std::string::npos);
}

TEST_F(ScenarioTest, OutputIsBitIdenticalAcrossRunsAndThreads) {
  const auto cfg = write("small.yaml", replace(kSmall, "  samples: 33\n", "  samples: 101\n  mode: envelope\n"));
  const auto a = sc::run_scenario_file(cfg.string(), options("a", 1));
  const auto b = sc::run_scenario_file(cfg.string(), options("b", 1));
  const auto c = sc::run_scenario_file(cfg.string(), options("c", 3));
  ASSERT_TRUE(a.pass() && b.pass() && c.pass());
  EXPECT_EQ(slurp(a.csv_path), slurp(b.csv_path));
  EXPECT_EQ(slurp(a.csv_path), slurp(c.csv_path));
}

TEST_F(ScenarioTest, PrecisionOverflowNeedsOptIn) {
  const auto cfg = write("overflow.yaml", kImprecise);
  const auto strict = sc::run_scenario_file(cfg.string(), options("strict"));
  EXPECT_EQ(strict.status, sc::ExitCode::PrecisionOverflow);
  EXPECT_NE(strict.error.find("--allow-imprecise"), std::string::npos) << strict.error;

  auto lenient_opt = options("lenient");
  lenient_opt.allow_imprecise = true;
  const auto lenient = sc::run_scenario_file(cfg.string(), lenient_opt);
  EXPECT_TRUE(lenient.pass()) << lenient.error;
  EXPECT_TRUE(lenient.precision_flag);
  EXPECT_NE(slurp(lenient.csv_path).find(",1\n"), std::string::npos);
}

TEST_F(ScenarioTest, FailedExpectationReported) {
  const auto cfg = write("strict.yaml", replace(kSmall, "min: 0.999999", "min: 1.5"));
  const auto r = sc::run_scenario_file(cfg.string(), options("out"));
  EXPECT_EQ(r.status, sc::ExitCode::ExpectationFailed);
  ASSERT_EQ(r.checks.size(), 1u);
  EXPECT_FALSE(r.checks[0].pass);
}

TEST_F(ScenarioTest, SuiteIsolatesFailures) {
  write("suite/a_good.yaml", kSmall);
  write("suite/b_broken.yaml", replace(kSmall, "id: small", "id: broken\nbogus: 1"));
  write("suite/c_good.yaml", replace(kSmall, "id: small", "id: other"));
  write("suite/notes.txt", "not a scenario");
  const auto rep = sc::run_suite(dir_ / "suite", options("suite_out"));
  ASSERT_EQ(rep.results.size(), 3u);
  EXPECT_TRUE(rep.results[0].pass());
  EXPECT_EQ(rep.results[1].status, sc::ExitCode::ConfigInvalid);
  EXPECT_TRUE(rep.results[2].pass());
  EXPECT_FALSE(rep.pass());
  EXPECT_TRUE(fs::exists(rep.json_path));
  EXPECT_NE(slurp(rep.text_path).find("2/3 scenarios passed"), std::string::npos);
}

TEST_F(ScenarioTest, SuiteFlagsDuplicateIds) {
  write("dup/a.yaml", kSmall);
  write("dup/b.yaml", kSmall);
  const auto rep = sc::run_suite(dir_ / "dup", options("dup_out"));
  ASSERT_EQ(rep.results.size(), 2u);
  EXPECT_TRUE(rep.results[0].pass());
  EXPECT_EQ(rep.results[1].status, sc::ExitCode::ConfigInvalid);
}

TEST_F(ScenarioTest, EmptySuiteDirectoryIsAnError) {
  fs::create_directories(dir_ / "empty");
  try {
    sc::run_suite(dir_ / "empty", options("x"));
    FAIL() << "expected ConfigError";
  } catch (const sc::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no scenarios"), std::string::npos);
  }
}

TEST_F(ScenarioTest, PlotScriptFollowsHeaderAndOverrides) {
  const auto cfg = write("small.yaml", replace(kSmall, "expect:", "plot:\n  logx: true\n  panels: dual\nexpect:"));
  const auto r = sc::run_scenario_file(cfg.string(), options("out"));
  ASSERT_TRUE(r.pass()) << r.error;

  const auto script = sc::emit_plot_script(r.csv_path);
  EXPECT_EQ(script.filename(), "small_plot.py");
  auto text = slurp(script);
  EXPECT_NE(text.find("LOGX = True"), std::string::npos);
  EXPECT_NE(text.find("DUAL = True"), std::string::npos);
  EXPECT_NE(text.find("small.png"), std::string::npos);

  text = slurp(sc::emit_plot_script(r.csv_path, {.logx = false, .dual = false}));
  EXPECT_NE(text.find("LOGX = False"), std::string::npos);
  EXPECT_NE(text.find("DUAL = False"), std::string::npos);
}

TEST_F(ScenarioTest, PlotRejectsMissingOrForeignCsv) {
  EXPECT_THROW(sc::emit_plot_script(dir_ / "absent.csv"), qpst::Error);
  EXPECT_THROW(sc::emit_plot_script(write("foreign.csv", "a,b\n1,2\n")), qpst::Error);
}

TEST_F(ScenarioTest, CliExitCodes) {
  const auto good = write("small.yaml", kSmall);
  const auto out = (dir_ / "cli").string();
  EXPECT_EQ(cli("run " + good.string() + " --out " + out), 0);
  EXPECT_TRUE(fs::exists(dir_ / "cli" / "small.csv"));
  EXPECT_EQ(cli("run " + write("fail.yaml", replace(kSmall, "min: 0.999999", "min: 1.5")).string() + " --out " + out), 1);
  EXPECT_EQ(cli("run " + write("bad.yaml", "schema: 1\nid: [\n").string() + " --out " + out), 2);
  const auto overflow = write("overflow.yaml", kImprecise);
  EXPECT_EQ(cli("run " + overflow.string() + " --out " + out), 3);
  EXPECT_EQ(cli("run " + overflow.string() + " --allow-imprecise --out " + out), 0);
  EXPECT_EQ(cli("plot " + (dir_ / "cli" / "small.csv").string() + " --logx --dual"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "cli" / "small_plot.py"));
  EXPECT_NE(cli("plot " + (dir_ / "cli" / "missing.csv").string()), 0);
  fs::create_directories(dir_ / "nothing");
  EXPECT_EQ(cli("suite " + (dir_ / "nothing").string() + " --out " + out), 2);
}

TEST_F(ScenarioTest, ShippedScenariosPass) {
  const auto rep = sc::run_suite(QPST_SCENARIO_DIR, options("shipped"));
  EXPECT_GE(rep.results.size(), 8u);
  for (const auto& r : rep.results) EXPECT_TRUE(r.pass()) << r.id << ": " << r.error;
}

TEST_F(ScenarioTest, SiUnitsMatchScaledRun) {
  std::string si = replace(kSmall, "schema: 1\n", "schema: 1\nunits: si\n");
  si = replace(si, "  omega: 2\n", "  omega: 4\n  lambda: 2\n");
  si = replace(si, "tau_max: 3.2", "tau_max: 1.6");
  si = replace(si, "window: [1.4, 1.8]", "window: [0.7, 0.9]");
  const auto a = sc::run_scenario_file(write("scaled.yaml", kSmall).string(), options("scaled"));
  const auto b = sc::run_scenario_file(write("si.yaml", si).string(), options("si"));
  ASSERT_TRUE(a.pass() && b.pass()) << b.error;
  auto rows = [](const std::string& text) { return text.substr(text.find("tau,p_ex")); };
  EXPECT_EQ(rows(slurp(a.csv_path)), rows(slurp(b.csv_path)));
  EXPECT_NE(slurp(b.csv_path).find("converted from si input"), std::string::npos);
}
