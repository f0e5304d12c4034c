#pragma once

// Scenario runner: YAML scenario files -> curve CSV + summary JSON, plus
// suites over a directory and matplotlib script emission. Needs yaml-cpp
// and nlohmann/json on top of the core library.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "qpst/coherent.hpp"
#include "qpst/propagator.hpp"
#include "qpst/topology.hpp"
#include "qpst/transfer.hpp"
#include "qpst/version.hpp"

namespace qpst::scenario {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Schema or value problem in a scenario file; what() is "file:line:col: message".
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// tau value out of the double-precision phase budget and not allowed.
class PrecisionError : public Error {
 public:
  using Error::Error;
};

enum class ExitCode : int { Ok = 0, ExpectationFailed = 1, ConfigInvalid = 2, PrecisionOverflow = 3, RuntimeFailure = 4 };

struct ChainConfig {
  std::string topology = "tunneling";  // tunneling | pst
  std::size_t n = 0;
  double omega = 0.0;   // sender and receiver (all sites for pst)
  double Omega = 0.0;   // transmitters, tunneling only
  double lambda = 1.0;  // end coupling (tunneling) or pst scale
  double epsilon = 1.0;
  double gamma = 0.0;   // transmitter decay
};

struct GridConfig {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t samples = 0;
  bool log_spacing = false;
  bool envelope = false;  // peak-hold over one carrier period per sample
};

struct Expectation {
  std::string metric;
  std::optional<double> min;
  std::optional<double> max;
  std::optional<bool> equals;
  std::optional<std::pair<double, double>> window;
  int line = 0;
};

struct Scenario {
  std::string id;
  std::string description;
  std::string source;  // config path, empty when built in code
  bool si_units = false;
  ChainConfig chain;
  std::size_t mode = 1;
  cplx alpha{0.0, 0.0};
  cplx transmitter_beta{0.0, 0.0};
  GridConfig grid;
  std::optional<std::pair<double, double>> search;
  double threshold = 0.5;
  bool plot_logx = false;
  bool plot_dual = false;
  bool allow_imprecise = false;
  std::vector<Expectation> expect;

  /// Converts a config time to scaled tau (tau = lambda t for SI input).
  [[nodiscard]] double to_tau(double t) const { return si_units ? chain.lambda * t : t; }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string where(const std::string& path, const YAML::Mark& m) {
  if (m.is_null()) return path;
  return path + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

class Reader {
 public:
  explicit Reader(std::string path) : path_(std::move(path)) {}

  [[noreturn]] void fail(const YAML::Mark& m, const std::string& msg) const { throw ConfigError(where(path_, m) + ": " + msg); }

  void only_keys(const YAML::Node& map, const std::string& section, std::initializer_list<const char*> allowed) const {
    if (!map.IsMap()) fail(map.Mark(), "'" + section + "' must be a mapping");
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
        fail(kv.first.Mark(), "unknown key '" + key + "' in '" + section + "'");
    }
  }

  YAML::Node require(const YAML::Node& map, const std::string& key, const std::string& section) const {
    const YAML::Node v = map[key];
    if (!v) fail(map.Mark(), "missing required key '" + key + "' in '" + section + "'");
    return v;
  }

  double number(const YAML::Node& v, const std::string& key) const {
    if (!v.IsScalar()) fail(v.Mark(), "'" + key + "' must be a number");
    try {
      const double x = v.as<double>();
      if (!std::isfinite(x)) fail(v.Mark(), "'" + key + "' must be finite");
      return x;
    } catch (const YAML::BadConversion&) {
      fail(v.Mark(), "'" + key + "' must be a number, got '" + v.Scalar() + "'");
    }
  }

  double number(const YAML::Node& map, const std::string& key, const std::string& section, double fallback) const {
    const YAML::Node v = map[key];
    return v ? number(v, section + "." + key) : fallback;
  }

  double required_number(const YAML::Node& map, const std::string& key, const std::string& section) const {
    return number(require(map, key, section), section + "." + key);
  }

  std::size_t count(const YAML::Node& v, const std::string& key) const {
    const double x = number(v, key);
    if (x < 0.0 || x != std::floor(x)) fail(v.Mark(), "'" + key + "' must be a non-negative integer");
    return static_cast<std::size_t>(x);
  }

  bool boolean(const YAML::Node& v, const std::string& key) const {
    try {
      return v.as<bool>();
    } catch (const YAML::BadConversion&) {
      fail(v.Mark(), "'" + key + "' must be true or false");
    }
  }

  std::string string(const YAML::Node& v, const std::string& key) const {
    if (!v.IsScalar()) fail(v.Mark(), "'" + key + "' must be a string");
    return v.Scalar();
  }

  /// Scalar or [re, im].
  cplx complex(const YAML::Node& v, const std::string& key) const {
    if (v.IsSequence()) {
      if (v.size() != 2) fail(v.Mark(), "'" + key + "' must be a number or [re, im]");
      return {number(v[0], key), number(v[1], key)};
    }
    return {number(v, key), 0.0};
  }

  std::pair<double, double> window(const YAML::Node& v, const std::string& key) const {
    if (!v.IsSequence() || v.size() != 2) fail(v.Mark(), "'" + key + "' must be [lo, hi]");
    const double lo = number(v[0], key), hi = number(v[1], key);
    if (!(hi > lo)) fail(v.Mark(), "'" + key + "' needs hi > lo");
    return {lo, hi};
  }

 private:
  std::string path_;
};

}  // namespace detail

/// Parses one scenario document. `path` is used for diagnostics and the
/// default id.
inline Scenario parse_scenario(const YAML::Node& root, const std::string& path) {
  const detail::Reader rd(path);
  if (!root || !root.IsMap()) throw ConfigError(path + ": scenario file must be a YAML mapping");
  rd.only_keys(root, "scenario", {"schema", "id", "description", "units", "chain", "initial", "grid", "search", "plot", "expect", "options"});

  const YAML::Node schema = rd.require(root, "schema", "scenario");
  if (rd.number(schema, "schema") != kSchemaVersion)
    rd.fail(schema.Mark(), "unsupported schema " + schema.Scalar() + " (this build reads schema " + std::to_string(kSchemaVersion) + ")");

  Scenario s;
  s.source = path;
  s.id = root["id"] ? rd.string(root["id"], "id") : fs::path(path).stem().string();
  if (s.id.empty() || s.id.find_first_of("/\\ ") != std::string::npos) rd.fail(root["id"].Mark(), "'id' must be a non-empty name without spaces or slashes");
  if (root["description"]) s.description = rd.string(root["description"], "description");
  if (const YAML::Node u = root["units"]) {
    const auto units = rd.string(u, "units");
    if (units != "scaled" && units != "si") rd.fail(u.Mark(), "'units' must be 'scaled' or 'si'");
    s.si_units = units == "si";
  }

  // chain
  const YAML::Node chain = rd.require(root, "chain", "scenario");
  rd.only_keys(chain, "chain", {"topology", "n", "omega", "Omega", "lambda", "epsilon", "Gamma"});
  if (const YAML::Node t = chain["topology"]) {
    s.chain.topology = rd.string(t, "chain.topology");
    if (s.chain.topology != "tunneling" && s.chain.topology != "pst") rd.fail(t.Mark(), "'chain.topology' must be 'tunneling' or 'pst'");
  }
  const bool pst = s.chain.topology == "pst";
  const YAML::Node n = rd.require(chain, "n", "chain");
  s.chain.n = rd.count(n, "chain.n");
  if (s.chain.n < 2) rd.fail(n.Mark(), "'chain.n' must be at least 2");
  s.chain.omega = rd.required_number(chain, "omega", "chain");
  if (pst) {
    for (const char* k : {"Omega", "epsilon"})
      if (chain[k]) rd.fail(chain[k].Mark(), std::string("'chain.") + k + "' is not used by topology 'pst'");
  } else {
    s.chain.Omega = rd.required_number(chain, "Omega", "chain");
    s.chain.epsilon = rd.required_number(chain, "epsilon", "chain");
    if (s.chain.epsilon < 0.0) rd.fail(chain["epsilon"].Mark(), "'chain.epsilon' must be non-negative");
  }
  if (s.si_units) {
    s.chain.lambda = rd.required_number(chain, "lambda", "chain");
  } else {
    s.chain.lambda = rd.number(chain, "lambda", "chain", 1.0);
    if (s.chain.lambda != 1.0) rd.fail(chain["lambda"].Mark(), "'chain.lambda' must be 1 in scaled units (use units: si for dimensional input)");
  }
  if (!(s.chain.lambda > 0.0)) rd.fail(chain["lambda"].Mark(), "'chain.lambda' must be positive");
  s.chain.gamma = rd.number(chain, "Gamma", "chain", 0.0);
  if (s.chain.gamma < 0.0) rd.fail(chain["Gamma"].Mark(), "'chain.Gamma' must be non-negative");

  // initial
  const YAML::Node init = rd.require(root, "initial", "scenario");
  rd.only_keys(init, "initial", {"mode", "alpha", "transmitter_beta"});
  if (const YAML::Node m = init["mode"]) {
    s.mode = rd.count(m, "initial.mode");
    if (s.mode < 1 || s.mode > s.chain.n) rd.fail(m.Mark(), "'initial.mode' must be in 1.." + std::to_string(s.chain.n));
  }
  s.alpha = rd.complex(rd.require(init, "alpha", "initial"), "initial.alpha");
  if (const YAML::Node b = init["transmitter_beta"]) s.transmitter_beta = rd.complex(b, "initial.transmitter_beta");

  // grid
  const YAML::Node grid = rd.require(root, "grid", "scenario");
  rd.only_keys(grid, "grid", {"tau_min", "tau_max", "samples", "spacing", "mode"});
  s.grid.lo = s.to_tau(rd.number(grid, "tau_min", "grid", 0.0));
  s.grid.hi = s.to_tau(rd.required_number(grid, "tau_max", "grid"));
  if (s.grid.lo < 0.0) rd.fail(grid["tau_min"].Mark(), "'grid.tau_min' must be non-negative");
  if (!(s.grid.hi > s.grid.lo)) rd.fail(grid["tau_max"].Mark(), "grid window must be positive (tau_max > tau_min)");
  const YAML::Node samples = rd.require(grid, "samples", "grid");
  s.grid.samples = rd.count(samples, "grid.samples");
  if (s.grid.samples < 2) rd.fail(samples.Mark(), "'grid.samples' must be at least 2");
  if (const YAML::Node sp = grid["spacing"]) {
    const auto v = rd.string(sp, "grid.spacing");
    if (v != "linear" && v != "log") rd.fail(sp.Mark(), "'grid.spacing' must be 'linear' or 'log'");
    s.grid.log_spacing = v == "log";
    if (s.grid.log_spacing && !(s.grid.lo > 0.0)) rd.fail(sp.Mark(), "log spacing needs tau_min > 0");
  }
  if (const YAML::Node md = grid["mode"]) {
    const auto v = rd.string(md, "grid.mode");
    if (v != "raw" && v != "envelope") rd.fail(md.Mark(), "'grid.mode' must be 'raw' or 'envelope'");
    s.grid.envelope = v == "envelope";
  }

  if (const YAML::Node sr = root["search"]) {
    rd.only_keys(sr, "search", {"window", "threshold"});
    if (sr["window"]) {
      auto w = rd.window(sr["window"], "search.window");
      if (w.first < 0.0) rd.fail(sr["window"].Mark(), "'search.window' must start at tau >= 0");
      s.search = std::pair{s.to_tau(w.first), s.to_tau(w.second)};
    }
    s.threshold = rd.number(sr, "threshold", "search", 0.5);
    if (!(s.threshold > 0.0 && s.threshold <= 1.0)) rd.fail(sr["threshold"].Mark(), "'search.threshold' must be in (0, 1]");
  }

  if (const YAML::Node pl = root["plot"]) {
    rd.only_keys(pl, "plot", {"logx", "panels"});
    if (pl["logx"]) s.plot_logx = rd.boolean(pl["logx"], "plot.logx");
    if (const YAML::Node p = pl["panels"]) {
      const auto v = rd.string(p, "plot.panels");
      if (v != "single" && v != "dual") rd.fail(p.Mark(), "'plot.panels' must be 'single' or 'dual'");
      s.plot_dual = v == "dual";
    }
  }

  if (const YAML::Node op = root["options"]) {
    rd.only_keys(op, "options", {"allow_imprecise"});
    if (op["allow_imprecise"]) s.allow_imprecise = rd.boolean(op["allow_imprecise"], "options.allow_imprecise");
  }

  if (const YAML::Node ex = root["expect"]) {
    if (!ex.IsSequence()) rd.fail(ex.Mark(), "'expect' must be a list");
    for (const auto& e : ex) {
      rd.only_keys(e, "expect", {"metric", "min", "max", "equals", "window"});
      Expectation x;
      x.line = e.Mark().line + 1;
      x.metric = rd.string(rd.require(e, "metric", "expect"), "expect.metric");
      if (e["min"]) x.min = rd.number(e["min"], "expect.min");
      if (e["max"]) x.max = rd.number(e["max"], "expect.max");
      if (e["equals"]) x.equals = rd.boolean(e["equals"], "expect.equals");
      if (e["window"]) {
        const auto w = rd.window(e["window"], "expect.window");
        x.window = std::pair{s.to_tau(w.first), s.to_tau(w.second)};
      }
      if (!x.min && !x.max && !x.equals) rd.fail(e.Mark(), "expectation on '" + x.metric + "' needs min, max or equals");
      s.expect.push_back(std::move(x));
    }
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open scenario file");
  try {
    return parse_scenario(YAML::Load(in), path);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(detail::where(path, e.mark) + ": " + e.msg);
  }
}

// ---------------------------------------------------------------------------
// Model construction

inline ChainSpec chain_spec(const Scenario& s) {
  const ChainConfig& c = s.chain;
  return ChainSpec{.n = c.n, .omega_end = c.omega, .omega_mid = c.Omega, .lambda_end = c.lambda, .epsilon = c.epsilon, .gamma_mid = c.gamma}.scaled();
}

inline NetworkTopology build_topology(const Scenario& s) {
  const ChainConfig& c = s.chain;
  const double l = c.lambda;
  if (c.topology == "pst") {
    NetworkTopology t = build_pst_chain(c.n, 1.0, c.omega / l);
    for (std::size_t m = 1; m + 1 < c.n; ++m) t.gamma(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)) = c.gamma / l;
    return t;
  }
  return build_chain(chain_spec(s));
}

/// The mirror image of the sender receives.
inline Mode receiver_mode(const Scenario& s) { return Mode(s.chain.n + 1 - s.mode); }

inline CoherentSuperposition initial_state(const Scenario& s) {
  return make_cat(s.chain.n, Mode(s.mode), s.alpha, s.transmitter_beta);
}

// ---------------------------------------------------------------------------
// Sampling

/// Runs f(i) for i in [0, n) over `threads` workers in contiguous blocks.
/// The first exception is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = n * w / workers; i < n * (w + 1) / workers; ++i) f(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Curve {
  std::vector<double> tau;
  std::vector<double> p_ex;
  std::vector<double> p_rec;
  std::vector<bool> precise;
};

inline Curve sample_curve(const Scenario& s, const TransferEvaluator& ev, double carrier, unsigned threads) {
  const auto taus = s.grid.log_spacing ? log_grid(s.grid.lo, s.grid.hi, s.grid.samples) : linear_grid(s.grid.lo, s.grid.hi, s.grid.samples);
  Curve c;
  if (!s.grid.envelope) {
    const auto tc = transfer_curve(ev, taus, threads);
    c.tau = tc.tau;
    c.p_ex = tc.p_ex;
    c.p_rec = tc.p_rec;
    c.precise = tc.precise;
    return c;
  }
  const double period = carrier > 0.0 ? 2.0 * std::numbers::pi / carrier : 0.0;
  const std::size_t n = taus.size();
  std::vector<HeldSample> ex(n), rec(n);
  parallel_for(n, threads, [&](std::size_t i) {
    ex[i] = peak_hold(ev, Fidelity::Exchange, taus[i], period, s.grid.lo, s.grid.hi);
    rec[i] = peak_hold(ev, Fidelity::Recurrence, taus[i], period, s.grid.lo, s.grid.hi);
  });
  c.tau = taus;
  for (std::size_t i = 0; i < n; ++i) {
    c.p_ex.push_back(ex[i].p);
    c.p_rec.push_back(rec[i].p);
    c.precise.push_back(ex[i].precise && rec[i].precise);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  bool allow_imprecise = false;
  unsigned threads = 0;
  fs::path out_dir = "out";
};

struct CheckResult {
  Expectation expectation;
  std::optional<double> value;
  bool pass = false;
  std::string note;
};

struct ScenarioResult {
  std::string id;
  std::string source;
  ExitCode status = ExitCode::Ok;
  std::string error;
  std::map<std::string, double> metrics;
  std::vector<CheckResult> checks;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;
  bool precision_flag = false;
  double runtime_s = 0.0;
  fs::path csv_path;
  fs::path summary_path;
  json summary;

  [[nodiscard]] bool pass() const { return status == ExitCode::Ok; }
};

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt_complex(cplx z) { return fmt17(z.real()) + (z.imag() < 0.0 ? "" : "+") + fmt17(z.imag()) + "i"; }

inline json nullable(const std::map<std::string, double>& m, const std::string& key) {
  const auto it = m.find(key);
  return it == m.end() ? json(nullptr) : json(it->second);
}

}  // namespace detail

/// Curve CSV: '#' header block with parameters and code version, then
/// tau,p_ex,p_rec,precision_flag (1 marks a sample beyond the phase budget).
inline void write_csv(const fs::path& path, const Scenario& s, const Curve& c) {
  std::ostringstream o;
  const ChainSpec spec = s.chain.topology == "pst" ? ChainSpec{} : chain_spec(s);
  o << "# qpst transfer curve\n";
  o << "# version: " << kVersion << "\n";
  o << "# id: " << s.id << "\n";
  if (!s.description.empty()) o << "# description: " << s.description << "\n";
  o << "# topology: " << s.chain.topology << "\n";
  o << "# n: " << s.chain.n << "\n";
  o << "# omega: " << detail::fmt17(s.chain.omega / s.chain.lambda) << "\n";
  if (s.chain.topology != "pst") {
    o << "# Omega: " << detail::fmt17(spec.omega_mid) << "\n";
    o << "# epsilon: " << detail::fmt17(spec.epsilon) << "\n";
  }
  o << "# lambda: 1\n";
  o << "# Gamma: " << detail::fmt17(s.chain.gamma / s.chain.lambda) << "\n";
  o << "# mode: " << s.mode << "\n";
  o << "# alpha: " << detail::fmt_complex(s.alpha) << "\n";
  o << "# transmitter_beta: " << detail::fmt_complex(s.transmitter_beta) << "\n";
  o << "# units: scaled (tau = lambda t, rates in units of lambda)";
  if (s.si_units) o << "; converted from si input with lambda = " << detail::fmt17(s.chain.lambda);
  o << "\n";
  o << "# grid: " << (s.grid.log_spacing ? "log" : "linear") << " " << detail::fmt17(s.grid.lo) << " .. " << detail::fmt17(s.grid.hi) << ", "
    << s.grid.samples << " samples, " << (s.grid.envelope ? "envelope" : "raw") << "\n";
  o << "# plot_logx: " << (s.plot_logx ? "true" : "false") << "\n";
  o << "# plot_panels: " << (s.plot_dual ? "dual" : "single") << "\n";
  o << "tau,p_ex,p_rec,precision_flag\n";
  for (std::size_t i = 0; i < c.tau.size(); ++i)
    o << detail::fmt17(c.tau[i]) << ',' << detail::fmt17(c.p_ex[i]) << ',' << detail::fmt17(c.p_rec[i]) << ',' << (c.precise[i] ? 0 : 1) << '\n';
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << o.str();
}

inline std::optional<double> metric_value(const ScenarioResult& r, const Expectation& e, const TransferEvaluator& ev, double carrier) {
  if (e.window && (e.metric == "peak_p_ex" || e.metric == "peak_p_rec" || e.metric == "peak_tau_ex" || e.metric == "peak_tau_rec")) {
    const bool ex = e.metric == "peak_p_ex" || e.metric == "peak_tau_ex";
    const auto h = windowed_peak(ev, ex ? Fidelity::Exchange : Fidelity::Recurrence, e.window->first, e.window->second, carrier);
    return e.metric.starts_with("peak_p") ? h.p : h.tau;
  }
  if (e.metric == "precision_flag") return r.precision_flag ? 1.0 : 0.0;
  const auto it = r.metrics.find(e.metric);
  if (it == r.metrics.end()) return std::nullopt;
  return it->second;
}

inline CheckResult check(const Expectation& e, std::optional<double> value) {
  CheckResult c{e, value, false, ""};
  if (!value) {
    c.note = "metric unavailable";
    return c;
  }
  c.pass = true;
  if (e.min && !(*value >= *e.min)) c.pass = false;
  if (e.max && !(*value <= *e.max)) c.pass = false;
  if (e.equals && ((*value != 0.0) != *e.equals)) c.pass = false;
  return c;
}

/// Runs one scenario and writes <out>/<id>.csv and <out>/<id>.summary.json.
/// Never throws for scenario-level problems; they are reported in the result.
inline ScenarioResult run_scenario(const Scenario& s, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioResult r;
  r.id = s.id;
  r.source = s.source;
  json summary;
  summary["id"] = s.id;
  summary["source"] = s.source;
  summary["version"] = kVersion;
  summary["description"] = s.description;
  try {
    const NetworkTopology topo = build_topology(s);
    const PropagatorEngine engine(build_general(topo));
    if (!engine.spectral()) r.warnings.push_back("spectral path unavailable: " + engine.fallback_reason());
    const Mode sender(s.mode);
    const Mode receiver = receiver_mode(s);
    const TransferEvaluator ev(engine, initial_state(s), sender, receiver);
    for (const auto& w : ev.warnings()) r.warnings.push_back(w);
    for (const auto& w : topo.warnings) r.warnings.push_back(w);

    const auto window = s.search.value_or(std::pair{s.grid.lo, s.grid.hi});
    // The carrier sets the sampling scale for peak searches; without it they
    // fall back to fixed subdivisions of the window.
    std::optional<EnvelopeScanner> carrier_probe;
    try {
      carrier_probe.emplace(engine, receiver, sender, window.first, window.second);
    } catch (const Error& e) {
      r.notes.push_back(std::string("carrier: ") + e.what());
    }
    const double carrier = carrier_probe ? carrier_probe->carrier_frequency() : 0.0;
    r.metrics["carrier_frequency"] = carrier;

    // exchange times
    try {
      const auto rep = exchange_time_numeric(engine, {.lo = window.first, .hi = window.second, .threshold = s.threshold, .row = receiver, .col = sender});
      r.metrics["tau_ex_numeric"] = rep.tau_ex;
      r.metrics["theta_corner_sq"] = rep.peak_p;
      r.metrics["ripple_bound"] = rep.ripple_bound;
      if (!rep.precise) r.precision_flag = true;
      for (const auto& w : rep.warnings) r.warnings.push_back("numeric tau_ex: " + w);
    } catch (const NoTransferError& e) {
      r.notes.push_back(std::string("numeric tau_ex: ") + e.what());
      if (carrier_probe && !carrier_probe->resolved()) r.precision_flag = true;
    } catch (const Error& e) {
      r.notes.push_back(std::string("numeric tau_ex: ") + e.what());
    }
    if (engine.spectral() && engine.spectral()->ideal && s.mode == 1) {
      try {
        const auto rep = exchange_time_spectral(engine, window.first, window.second);
        r.metrics["tau_ex_spectral"] = rep.tau_ex;
        if (!rep.precise) r.precision_flag = true;
      } catch (const Error& e) {
        r.notes.push_back(std::string("spectral tau_ex: ") + e.what());
      }
    }
    json regime = nullptr;
    if (s.chain.topology == "tunneling" && s.chain.Omega != s.chain.omega) {
      const ChainSpec spec = chain_spec(s);
      const ScaledParams p = scaled_params(spec);
      regime = json{{"mu", p.mu},           {"eta", p.eta},
                    {"varpi", p.varpi},     {"epsilon_mu_sq", std::pow(p.epsilon * p.mu, 2)},
                    {"mu_small", p.mu_small}, {"eta_small", p.eta_small},
                    {"eps_mu_sq_small", p.eps_mu_sq_small}, {"perturbative", p.perturbative()}};
      try {
        const auto a = analytic_tau_ex(spec.n, p, spec.epsilon, TauOrder::Corrected);
        const auto lead = analytic_tau_ex(spec.n, p, spec.epsilon, TauOrder::Leading);
        r.metrics["tau_ex_analytic"] = a.value;
        r.metrics["tau_ex_analytic_leading"] = lead.value;
        for (const auto& w : a.warnings) r.warnings.push_back("analytic tau_ex: " + w);
      } catch (const Error& e) {
        r.notes.push_back(std::string("analytic tau_ex: ") + e.what());
      }
    }

    // curve
    const Curve curve = sample_curve(s, ev, carrier, opt.threads);
    std::size_t first_imprecise = curve.tau.size();
    for (std::size_t i = 0; i < curve.tau.size(); ++i) {
      if (!curve.precise[i] && first_imprecise == curve.tau.size()) first_imprecise = i;
    }
    if (first_imprecise < curve.tau.size()) r.precision_flag = true;
    const auto ex_max = std::max_element(curve.p_ex.begin(), curve.p_ex.end()) - curve.p_ex.begin();
    const auto rec_max = std::max_element(curve.p_rec.begin(), curve.p_rec.end()) - curve.p_rec.begin();
    r.metrics["curve_max_p_ex"] = curve.p_ex[static_cast<std::size_t>(ex_max)];
    r.metrics["curve_max_p_ex_tau"] = curve.tau[static_cast<std::size_t>(ex_max)];
    r.metrics["curve_max_p_rec"] = curve.p_rec[static_cast<std::size_t>(rec_max)];
    r.metrics["p_ex_final"] = curve.p_ex.back();
    r.metrics["p_rec_final"] = curve.p_rec.back();

    // Transmitter excitation adds ripple far faster than the carrier; a grid
    // sample can land on a crest the carrier-resolved search steps over.
    auto peak_ex = windowed_peak(ev, Fidelity::Exchange, s.grid.lo, s.grid.hi, carrier);
    if (curve.p_ex[static_cast<std::size_t>(ex_max)] > peak_ex.p) {
      peak_ex = {curve.tau[static_cast<std::size_t>(ex_max)], curve.p_ex[static_cast<std::size_t>(ex_max)],
                 static_cast<bool>(curve.precise[static_cast<std::size_t>(ex_max)])};
    }
    r.metrics["peak_p_ex"] = peak_ex.p;
    r.metrics["peak_tau_ex"] = peak_ex.tau;
    if (!peak_ex.precise) r.precision_flag = true;

    if (r.precision_flag && !(opt.allow_imprecise || s.allow_imprecise)) {
      std::string where = first_imprecise < curve.tau.size() ? " from tau = " + detail::fmt17(curve.tau[first_imprecise]) : "";
      throw PrecisionError("precision overflow: results lose double-precision accuracy" + where +
                           " (phase budget or eigenvalue resolution); rerun with --allow-imprecise to keep them");
    }

    fs::create_directories(opt.out_dir);
    r.csv_path = opt.out_dir / (s.id + ".csv");
    write_csv(r.csv_path, s, curve);

    for (const auto& e : s.expect) {
      auto c = check(e, metric_value(r, e, ev, carrier));
      r.checks.push_back(std::move(c));
    }
    if (std::any_of(r.checks.begin(), r.checks.end(), [](const CheckResult& c) { return !c.pass; })) r.status = ExitCode::ExpectationFailed;

    summary["parameters"] = json{{"topology", s.chain.topology},
                                 {"n", s.chain.n},
                                 {"omega", s.chain.omega / s.chain.lambda},
                                 {"Omega", s.chain.topology == "pst" ? json(nullptr) : json(s.chain.Omega / s.chain.lambda)},
                                 {"epsilon", s.chain.topology == "pst" ? json(nullptr) : json(s.chain.epsilon)},
                                 {"Gamma", s.chain.gamma / s.chain.lambda},
                                 {"mode", s.mode},
                                 {"alpha", {s.alpha.real(), s.alpha.imag()}},
                                 {"transmitter_beta", {s.transmitter_beta.real(), s.transmitter_beta.imag()}}};
    summary["units"] = json{{"output", "scaled"}, {"input", s.si_units ? "si" : "scaled"}, {"lambda", s.chain.lambda}};
    summary["tau_ex"] = json{{"numeric", detail::nullable(r.metrics, "tau_ex_numeric")},
                             {"spectral", detail::nullable(r.metrics, "tau_ex_spectral")},
                             {"analytic", detail::nullable(r.metrics, "tau_ex_analytic")},
                             {"analytic_leading", detail::nullable(r.metrics, "tau_ex_analytic_leading")}};
    summary["peak"] = json{{"p_ex", peak_ex.p}, {"tau", peak_ex.tau}};
    summary["regime"] = regime;
  } catch (const ConfigError& e) {
    r.status = ExitCode::ConfigInvalid;
    r.error = e.what();
  } catch (const PrecisionError& e) {
    r.status = ExitCode::PrecisionOverflow;
    r.error = e.what();
  } catch (const std::exception& e) {
    r.status = ExitCode::RuntimeFailure;
    r.error = e.what();
  }
  r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  summary["metrics"] = r.metrics;
  json checks = json::array();
  for (const auto& c : r.checks) {
    json j{{"metric", c.expectation.metric}, {"line", c.expectation.line}, {"value", c.value ? json(*c.value) : json(nullptr)}, {"pass", c.pass}};
    if (c.expectation.min) j["min"] = *c.expectation.min;
    if (c.expectation.max) j["max"] = *c.expectation.max;
    if (c.expectation.equals) j["equals"] = *c.expectation.equals;
    if (c.expectation.window) j["window"] = {c.expectation.window->first, c.expectation.window->second};
    if (!c.note.empty()) j["note"] = c.note;
    checks.push_back(std::move(j));
  }
  summary["expectations"] = checks;
  summary["precision_flag"] = r.precision_flag;
  summary["warnings"] = r.warnings;
  summary["notes"] = r.notes;
  summary["error"] = r.error.empty() ? json(nullptr) : json(r.error);
  summary["status"] = static_cast<int>(r.status);
  summary["pass"] = r.pass();
  summary["runtime_s"] = r.runtime_s;
  r.summary = summary;

  if (r.status != ExitCode::ConfigInvalid) {
    try {
      fs::create_directories(opt.out_dir);
      r.summary_path = opt.out_dir / (s.id + ".summary.json");
      std::ofstream(r.summary_path) << summary.dump(2) << '\n';
    } catch (const std::exception& e) {
      r.status = ExitCode::RuntimeFailure;
      r.error += std::string(r.error.empty() ? "" : "; ") + e.what();
    }
  }
  return r;
}

inline ScenarioResult run_scenario_file(const std::string& path, const RunOptions& opt) {
  Scenario s;
  try {
    s = load_scenario(path);
  } catch (const ConfigError& e) {
    ScenarioResult r;
    r.id = fs::path(path).stem().string();
    r.source = path;
    r.status = ExitCode::ConfigInvalid;
    r.error = e.what();
    return r;
  }
  return run_scenario(s, opt);
}

// ---------------------------------------------------------------------------
// Suites

struct SuiteReport {
  std::vector<ScenarioResult> results;
  fs::path json_path;
  fs::path text_path;

  [[nodiscard]] bool pass() const {
    return !results.empty() && std::all_of(results.begin(), results.end(), [](const ScenarioResult& r) { return r.pass(); });
  }
};

inline std::vector<fs::path> scenario_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".yaml" || ext == ".yml")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::string human_summary(const SuiteReport& rep) {
  std::ostringstream o;
  std::size_t passed = 0;
  for (const auto& r : rep.results) {
    passed += r.pass() ? 1 : 0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%7.2fs", r.runtime_s);
    o << (r.pass() ? "PASS " : "FAIL ") << r.id << "  " << buf;
    if (!r.error.empty()) o << "  " << r.error;
    o << '\n';
    for (const auto& c : r.checks) {
      o << "    " << (c.pass ? "ok   " : "FAIL ") << c.expectation.metric;
      if (c.expectation.window) o << " in [" << detail::fmt17(c.expectation.window->first) << ", " << detail::fmt17(c.expectation.window->second) << "]";
      o << " = " << (c.value ? detail::fmt17(*c.value) : std::string("n/a"));
      if (c.expectation.min) o << "  (min " << detail::fmt17(*c.expectation.min) << ")";
      if (c.expectation.max) o << "  (max " << detail::fmt17(*c.expectation.max) << ")";
      if (c.expectation.equals) o << "  (equals " << (*c.expectation.equals ? "true" : "false") << ")";
      o << '\n';
    }
  }
  o << passed << "/" << rep.results.size() << " scenarios passed\n";
  return o.str();
}

/// Runs every *.yaml / *.yml in `dir`, scenarios in parallel; writes
/// suite.json and suite.txt under opt.out_dir even when scenarios fail.
inline SuiteReport run_suite(const fs::path& dir, const RunOptions& opt) {
  const auto files = scenario_files(dir);
  if (files.empty()) throw ConfigError(dir.string() + ": no scenarios (*.yaml) found");
  SuiteReport rep;
  rep.results.resize(files.size());
  // Scenarios get the worker pool; sampling inside each stays single-threaded.
  RunOptions inner = opt;
  inner.threads = 1;
  parallel_for(files.size(), opt.threads, [&](std::size_t i) { rep.results[i] = run_scenario_file(files[i].string(), inner); });

  // Ids must be unique or outputs would collide; flag duplicates.
  std::map<std::string, int> seen;
  for (auto& r : rep.results) {
    if (++seen[r.id] > 1 && r.pass()) {
      r.status = ExitCode::ConfigInvalid;
      r.error = "duplicate scenario id '" + r.id + "'";
    }
  }

  json agg;
  agg["version"] = kVersion;
  agg["directory"] = dir.string();
  json list = json::array();
  std::size_t passed = 0;
  for (const auto& r : rep.results) {
    passed += r.pass() ? 1 : 0;
    json j{{"id", r.id},
           {"source", r.source},
           {"pass", r.pass()},
           {"status", static_cast<int>(r.status)},
           {"error", r.error.empty() ? json(nullptr) : json(r.error)},
           {"metrics", r.metrics},
           {"expectations", r.summary.contains("expectations") ? r.summary["expectations"] : json::array()},
           {"precision_flag", r.precision_flag},
           {"csv", r.csv_path.string()},
           {"runtime_s", r.runtime_s}};
    list.push_back(std::move(j));
  }
  agg["scenarios"] = list;
  agg["passed"] = passed;
  agg["total"] = rep.results.size();
  fs::create_directories(opt.out_dir);
  rep.json_path = opt.out_dir / "suite.json";
  rep.text_path = opt.out_dir / "suite.txt";
  std::ofstream(rep.json_path) << agg.dump(2) << '\n';
  std::ofstream(rep.text_path) << human_summary(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Plot scripts

struct PlotOptions {
  std::optional<bool> logx;  // default: CSV header
  std::optional<bool> dual;
};

/// Writes <csv stem>_plot.py next to the CSV. The script locates the CSV
/// relative to itself and saves <csv stem>.png.
inline fs::path emit_plot_script(const fs::path& csv, const PlotOptions& opt = {}) {
  std::ifstream in(csv);
  if (!in) throw Error(csv.string() + ": curve CSV not found");
  bool logx = false, dual = false, has_header = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.starts_with("# plot_logx:")) logx = line.find("true") != std::string::npos;
    if (line.starts_with("# plot_panels:")) dual = line.find("dual") != std::string::npos;
    if (line == "tau,p_ex,p_rec,precision_flag") {
      has_header = true;
      break;
    }
  }
  if (!has_header) throw Error(csv.string() + ": not a transfer curve CSV (missing tau,p_ex,p_rec,precision_flag header)");
  logx = opt.logx.value_or(logx);
  dual = opt.dual.value_or(dual);

  const std::string name = csv.filename().string();
  const std::string stem = csv.stem().string();
  const fs::path script = csv.parent_path() / (stem + "_plot.py");
  std::ofstream o(script);
  if (!o) throw Error("cannot write " + script.string());
  o << "#!/usr/bin/env python3\n"
    << "\"\"\"Plot " << name << " (exchange" << (dual ? " and recurrence" : "") << " probability vs tau).\"\"\"\n"
    << "import os\n\n"
    << "import matplotlib\n"
    << "matplotlib.use(\"Agg\")\n"
    << "import matplotlib.pyplot as plt\n"
    << "import numpy as np\n\n"
    << "HERE = os.path.dirname(os.path.abspath(__file__))\n"
    << "CSV = os.path.join(HERE, \"" << name << "\")\n"
    << "LOGX = " << (logx ? "True" : "False") << "\n"
    << "DUAL = " << (dual ? "True" : "False") << "\n\n"
    << "data = np.genfromtxt(CSV, delimiter=\",\", comments=\"#\", names=True)\n"
    << "tau = data[\"tau\"]\n"
    << "keep = tau > 0 if LOGX else np.ones_like(tau, dtype=bool)\n"
    << "series = [(\"p_ex\", r\"$P_{ex}$\")] + ([(\"p_rec\", r\"$P_{rec}$\")] if DUAL else [])\n"
    << "fig, axes = plt.subplots(len(series), 1, sharex=True, figsize=(7, 3 * len(series)), squeeze=False)\n"
    << "for ax, (col, label) in zip(axes[:, 0], series):\n"
    << "    ax.plot(tau[keep], data[col][keep], lw=0.8)\n"
    << "    bad = keep & (data[\"precision_flag\"] > 0)\n"
    << "    if bad.any():\n"
    << "        ax.plot(tau[bad], data[col][bad], \"r.\", ms=2, label=\"precision lost\")\n"
    << "        ax.legend(loc=\"best\")\n"
    << "    ax.set_ylabel(label)\n"
    << "    ax.set_ylim(-0.02, 1.02)\n"
    << "    if LOGX:\n"
    << "        ax.set_xscale(\"log\")\n"
    << "axes[-1, 0].set_xlabel(r\"$\\tau = \\lambda t$\")\n"
    << "fig.tight_layout()\n"
    << "fig.savefig(os.path.join(HERE, \"" << stem << ".png\"), dpi=150)\n";
  return script;
}

}  // namespace qpst::scenario
