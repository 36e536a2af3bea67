#include "pefa/toolchain.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pefa/digest.hpp"
#include "pefa/error.hpp"
#include "pefa/process.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pefa {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::WorkdirError, "cannot write " + path.string());
  f << content;
  if (!f) throw Error(ErrorCode::WorkdirError, "short write to " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void prepare_workdir(const fs::path& workdir) {
  std::error_code ec;
  fs::create_directories(workdir, ec);
  if (ec) throw Error(ErrorCode::WorkdirError, workdir.string() + ": " + ec.message());
}

std::string stage_log_name(Stage s) { return "stage_" + lower(to_string(s)) + ".log"; }

void save_stage_log(const fs::path& workdir, Stage s, std::string_view log) {
  // Best effort: the report already carries the log.
  std::ofstream f(workdir / stage_log_name(s), std::ios::binary | std::ios::trunc);
  f << log;
}

ToolchainReport from_process(Stage stage, const ProcessResult& pr, const std::string& tool) {
  if (pr.timed_out) {
    throw Error(ErrorCode::Timeout, tool + " exceeded " + std::to_string(pr.duration.count()) + " ms");
  }
  ToolchainReport r;
  r.stage = stage;
  r.log = pr.output;
  r.exit_code = pr.signaled ? 128 + pr.term_signal : pr.exit_code;
  r.ok = !pr.signaled && pr.exit_code == 0;
  r.duration_ms = pr.duration.count();
  return r;
}

StageOutcome outcome_from(const ToolchainReport& r) { return StageOutcome{r.exit_code, r.log, std::nullopt}; }

json outcome_json(const StageOutcome& o) {
  json j{{"exit_code", o.exit_code}, {"log", o.log}};
  if (o.vcd_text) j["vcd_text"] = *o.vcd_text;
  return j;
}

StageOutcome outcome_from_json(const json& j, const fs::path& base) {
  StageOutcome o;
  o.exit_code = j.value("exit_code", 0);
  o.log = j.value("log", "");
  if (j.contains("vcd_text")) o.vcd_text = j.at("vcd_text").get<std::string>();
  if (j.contains("vcd")) o.vcd_text = read_file(base / j.at("vcd").get<std::string>());
  return o;
}

std::string rtl_key(const std::string& text) { return sha256_hex(text); }

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Lint: return "Lint";
    case Stage::Compile: return "Compile";
    case Stage::Simulate: return "Simulate";
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  const auto l = lower(s);
  if (l == "lint") return Stage::Lint;
  if (l == "compile") return Stage::Compile;
  if (l == "simulate") return Stage::Simulate;
  throw Error(ErrorCode::ConfigError, "unknown stage '" + std::string(s) + "'");
}

bool PassCriterion::passes(std::string_view log) const {
  switch (kind) {
    case Kind::AbsentSubstring: return lower(log).find(lower(pattern)) == std::string::npos;
    case Kind::PresentSubstring: return lower(log).find(lower(pattern)) != std::string::npos;
    case Kind::ZeroMismatchCount: {
      auto mc = parse_mismatch_count(log);
      return mc && mc->mismatches == 0;
    }
  }
  return false;
}

std::optional<MismatchCount> parse_mismatch_count(std::string_view log) {
  static const std::regex re(R"(Mismatches:\s*(\d+)\s+in\s+(\d+)\s+samples)", std::regex::icase);
  std::optional<MismatchCount> last;
  const std::string s(log);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    last = MismatchCount{std::stoll((*it)[1]), std::stoll((*it)[2])};
  }
  return last;
}

ToolchainReport run_pipeline(Toolchain& tools, const RtlSource& rtl, const InstrumentedTestbench& tb,
                             const fs::path& workdir) {
  auto lint = tools.lint(rtl, workdir);
  if (!lint.ok) return lint;
  auto compiled = tools.compile(rtl, tb, workdir);
  if (!compiled.ok) return compiled;
  return tools.simulate(workdir / "sim.out", workdir / tb.vcd_path);
}

// ---------------------------------------------------------------------------

ToolchainReport ExternalToolchain::lint(const RtlSource& rtl, const fs::path& workdir) {
  prepare_workdir(workdir);
  write_file(workdir / "dut.v", rtl.text);
  std::vector<std::string> argv{cfg_.linter};
  argv.insert(argv.end(), cfg_.lint_flags.begin(), cfg_.lint_flags.end());
  argv.emplace_back("dut.v");
  auto report = from_process(Stage::Lint, run_process(argv, workdir, cfg_.lint_timeout), cfg_.linter);
  save_stage_log(workdir, Stage::Lint, report.log);
  return report;
}

ToolchainReport ExternalToolchain::compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                                           const fs::path& workdir) {
  prepare_workdir(workdir);
  write_file(workdir / "dut.v", rtl.text);
  write_file(workdir / "tb.v", tb.text);
  std::error_code ec;
  fs::remove(workdir / "sim.out", ec);

  std::vector<std::string> argv{cfg_.compiler};
  argv.insert(argv.end(), cfg_.compile_flags.begin(), cfg_.compile_flags.end());
  if (cfg_.flavor == SimulatorFlavor::Icarus) {
    argv.insert(argv.end(), {"-s", tb.top_module, "-o", "sim.out", "dut.v", "tb.v"});
  } else {
    argv.insert(argv.end(), {"--top-module", tb.top_module, "-Mdir", "obj_dir", "-o", "sim.out", "dut.v", "tb.v"});
  }
  auto report = from_process(Stage::Compile, run_process(argv, workdir, cfg_.compile_timeout), cfg_.compiler);
  if (cfg_.flavor == SimulatorFlavor::Verilator && report.ok) {
    fs::rename(workdir / "obj_dir" / "sim.out", workdir / "sim.out", ec);
    if (ec) {
      report.ok = false;
      report.log += "\nsimulation binary missing: " + ec.message() + "\n";
    }
  }
  if (report.ok && !fs::exists(workdir / "sim.out")) {
    report.ok = false;
    report.log += "\ncompiler exited 0 but produced no sim.out\n";
  }
  save_stage_log(workdir, Stage::Compile, report.log);
  return report;
}

ToolchainReport ExternalToolchain::simulate(const fs::path& compiled, const fs::path& vcd_path) {
  if (!fs::exists(compiled)) throw Error(ErrorCode::MissingFile, compiled.string());
  const fs::path workdir = compiled.parent_path();
  std::error_code ec;
  fs::remove(vcd_path, ec);
  std::vector<std::string> argv;
  std::string tool;
  if (cfg_.flavor == SimulatorFlavor::Icarus) {
    argv.push_back(cfg_.runtime);
    argv.insert(argv.end(), cfg_.runtime_flags.begin(), cfg_.runtime_flags.end());
    argv.push_back(compiled.filename().string());
    tool = cfg_.runtime;
  } else {
    argv.push_back(fs::absolute(compiled).string());
    tool = compiled.filename().string();
  }
  auto pr = run_process(argv, workdir, cfg_.simulate_timeout);
  if (pr.timed_out) throw Error(ErrorCode::Timeout, tool + " exceeded " + std::to_string(pr.duration.count()) + " ms");
  if (pr.signaled) {
    save_stage_log(workdir, Stage::Simulate, pr.output);
    throw Error(ErrorCode::RuntimeCrash, tool + " killed by signal " + std::to_string(pr.term_signal));
  }
  auto report = from_process(Stage::Simulate, pr, tool);
  report.ok = report.ok && cfg_.pass_criterion.passes(report.log);
  if (fs::exists(vcd_path)) report.vcd_path = vcd_path;
  save_stage_log(workdir, Stage::Simulate, report.log);
  return report;
}

// ---------------------------------------------------------------------------

ReplayToolchain::ReplayToolchain(std::vector<CandidateOutcome> fixture, PassCriterion criterion)
    : criterion_(std::move(criterion)) {
  for (auto& c : fixture) {
    std::string key = c.rtl;
    try {
      key = extract_rtl(c.rtl).text;
    } catch (const Error&) {
    }
    by_digest_[rtl_key(key)] = std::move(c);
  }
}

ToolchainConfig verilator_toolchain_config(std::string verilator) {
  ToolchainConfig tc;
  tc.linter = verilator;
  tc.flavor = SimulatorFlavor::Verilator;
  tc.compiler = std::move(verilator);
  tc.compile_flags = {"--binary", "--trace", "-Wno-fatal", "-CFLAGS", "-fcoroutines"};
  tc.runtime_flags.clear();
  tc.compile_timeout = std::chrono::milliseconds(300'000);
  return tc;
}

ReplayToolchain::ReplayToolchain(ReplayToolchain&& other) noexcept {
  std::lock_guard lock(other.mu_);
  by_digest_ = std::move(other.by_digest_);
  criterion_ = std::move(other.criterion_);
  calls_ = std::move(other.calls_);
}

ReplayToolchain ReplayToolchain::load(const fs::path& fixture_file, PassCriterion criterion) {
  json j;
  try {
    j = json::parse(read_file(fixture_file));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, fixture_file.string() + ": " + e.what());
  }
  const auto base = fixture_file.parent_path();
  std::vector<CandidateOutcome> cands;
  for (const auto& c : j.at("candidates")) {
    CandidateOutcome o;
    o.rtl = c.at("rtl").get<std::string>();
    if (c.contains("lint")) o.lint = outcome_from_json(c["lint"], base);
    if (c.contains("compile")) o.compile = outcome_from_json(c["compile"], base);
    if (c.contains("simulate")) o.simulate = outcome_from_json(c["simulate"], base);
    cands.push_back(std::move(o));
  }
  return ReplayToolchain(std::move(cands), std::move(criterion));
}

const CandidateOutcome& ReplayToolchain::find(const std::string& rtl_text) const {
  auto it = by_digest_.find(rtl_key(rtl_text));
  if (it == by_digest_.end()) {
    throw Error(ErrorCode::ReplayMiss, "no toolchain fixture for candidate " + rtl_key(rtl_text).substr(0, 16));
  }
  return it->second;
}

void ReplayToolchain::count(Stage s) {
  std::lock_guard lock(mu_);
  ++calls_[s];
}

std::size_t ReplayToolchain::stage_calls(Stage s) const {
  std::lock_guard lock(mu_);
  auto it = calls_.find(s);
  return it == calls_.end() ? 0 : it->second;
}

ToolchainReport ReplayToolchain::lint(const RtlSource& rtl, const fs::path& workdir) {
  count(Stage::Lint);
  prepare_workdir(workdir);
  write_file(workdir / "dut.v", rtl.text);
  const auto& c = find(rtl.text);
  StageOutcome o = c.lint.value_or(StageOutcome{});
  save_stage_log(workdir, Stage::Lint, o.log);
  return ToolchainReport{Stage::Lint, o.exit_code == 0, o.log, o.exit_code, std::nullopt, 0};
}

ToolchainReport ReplayToolchain::compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                                         const fs::path& workdir) {
  count(Stage::Compile);
  prepare_workdir(workdir);
  write_file(workdir / "dut.v", rtl.text);
  write_file(workdir / "tb.v", tb.text);
  const auto& c = find(rtl.text);
  StageOutcome o = c.compile.value_or(StageOutcome{});
  // The "executable" names the candidate so simulate() can find its outcome.
  if (o.exit_code == 0) write_file(workdir / "sim.out", rtl_key(rtl.text));
  save_stage_log(workdir, Stage::Compile, o.log);
  return ToolchainReport{Stage::Compile, o.exit_code == 0, o.log, o.exit_code, std::nullopt, 0};
}

ToolchainReport ReplayToolchain::simulate(const fs::path& compiled, const fs::path& vcd_path) {
  count(Stage::Simulate);
  if (!fs::exists(compiled)) throw Error(ErrorCode::MissingFile, compiled.string());
  const auto key = read_file(compiled);
  auto it = by_digest_.find(key);
  if (it == by_digest_.end()) throw Error(ErrorCode::ReplayMiss, "no simulate fixture for " + key.substr(0, 16));
  StageOutcome o = it->second.simulate.value_or(StageOutcome{});
  ToolchainReport r{Stage::Simulate, false, o.log, o.exit_code, std::nullopt, 0};
  if (o.vcd_text) {
    write_file(vcd_path, *o.vcd_text);
    r.vcd_path = vcd_path;
  }
  r.ok = o.exit_code == 0 && criterion_.passes(o.log);
  save_stage_log(compiled.parent_path(), Stage::Simulate, o.log);
  return r;
}

// ---------------------------------------------------------------------------

ToolchainReport RecordingToolchain::lint(const RtlSource& rtl, const fs::path& workdir) {
  auto r = inner_.lint(rtl, workdir);
  std::lock_guard lock(mu_);
  auto [it, fresh] = by_rtl_.try_emplace(rtl.text, outcomes_.size());
  if (fresh) outcomes_.push_back(CandidateOutcome{rtl.text, {}, {}, {}});
  outcomes_[it->second].lint = outcome_from(r);
  return r;
}

ToolchainReport RecordingToolchain::compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                                            const fs::path& workdir) {
  auto r = inner_.compile(rtl, tb, workdir);
  std::lock_guard lock(mu_);
  auto [it, fresh] = by_rtl_.try_emplace(rtl.text, outcomes_.size());
  if (fresh) outcomes_.push_back(CandidateOutcome{rtl.text, {}, {}, {}});
  outcomes_[it->second].compile = outcome_from(r);
  by_compiled_[(workdir / "sim.out").lexically_normal().string()] = it->second;
  return r;
}

ToolchainReport RecordingToolchain::simulate(const fs::path& compiled, const fs::path& vcd_path) {
  auto r = inner_.simulate(compiled, vcd_path);
  std::lock_guard lock(mu_);
  auto it = by_compiled_.find(compiled.lexically_normal().string());
  if (it != by_compiled_.end()) {
    StageOutcome o = outcome_from(r);
    if (r.vcd_path) o.vcd_text = read_file(*r.vcd_path);
    outcomes_[it->second].simulate = std::move(o);
  }
  return r;
}

std::vector<CandidateOutcome> RecordingToolchain::outcomes() const {
  std::lock_guard lock(mu_);
  return outcomes_;
}

void RecordingToolchain::save(const fs::path& fixture_file) const {
  json cands = json::array();
  for (const auto& o : outcomes()) {
    json c{{"rtl", o.rtl}};
    if (o.lint) c["lint"] = outcome_json(*o.lint);
    if (o.compile) c["compile"] = outcome_json(*o.compile);
    if (o.simulate) c["simulate"] = outcome_json(*o.simulate);
    cands.push_back(std::move(c));
  }
  std::ofstream f(fixture_file);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + fixture_file.string());
  f << json{{"candidates", cands}}.dump(2) << '\n';
}

fs::path make_unique_dir(const fs::path& base, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(base, ec);
  if (ec) throw Error(ErrorCode::WorkdirError, base.string() + ": " + ec.message());
  for (int i = 0; i < 100000; ++i) {
    fs::path p = base / (i == 0 ? stem : stem + "-" + std::to_string(i));
    if (fs::create_directory(p, ec)) return p;
    if (ec) throw Error(ErrorCode::WorkdirError, p.string() + ": " + ec.message());
  }
  throw Error(ErrorCode::WorkdirError, "no free directory for " + stem + " under " + base.string());
}

}  // namespace pefa
