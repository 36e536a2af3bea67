#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pefa/rtl.hpp"

namespace pefa {

enum class Stage { Lint, Compile, Simulate };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

struct ToolchainReport {
  Stage stage = Stage::Lint;
  bool ok = false;
  std::string log;
  int exit_code = -1;
  std::optional<std::filesystem::path> vcd_path;  // Simulate only
  std::int64_t duration_ms = 0;
};

/// Decides whether a simulation log counts as a pass (on top of exit 0).
struct PassCriterion {
  enum class Kind {
    AbsentSubstring,    // pass iff `pattern` does not occur (case-insensitive)
    PresentSubstring,   // pass iff `pattern` occurs (case-insensitive)
    ZeroMismatchCount,  // pass iff the log reports "Mismatches: 0 in N samples"
  };
  Kind kind = Kind::AbsentSubstring;
  std::string pattern = "mismatch";

  [[nodiscard]] bool passes(std::string_view log) const;

  static PassCriterion absent(std::string pattern) { return {Kind::AbsentSubstring, std::move(pattern)}; }
  static PassCriterion present(std::string pattern) { return {Kind::PresentSubstring, std::move(pattern)}; }
  static PassCriterion zero_mismatch_count() { return {Kind::ZeroMismatchCount, {}}; }
};

/// Testbench-reported score, parsed from a "Mismatches: M in N samples" line.
struct MismatchCount {
  std::int64_t mismatches = 0;
  std::int64_t samples = 0;
};
std::optional<MismatchCount> parse_mismatch_count(std::string_view log);

/// Stage driver. `run_pipeline` sequences the three stages.
class Toolchain {
 public:
  virtual ~Toolchain() = default;
  virtual ToolchainReport lint(const RtlSource& rtl, const std::filesystem::path& workdir) = 0;
  virtual ToolchainReport compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                                  const std::filesystem::path& workdir) = 0;
  virtual ToolchainReport simulate(const std::filesystem::path& compiled, const std::filesystem::path& vcd_path) = 0;
};

/// Lint -> Compile -> Simulate, stopping at the first failing stage. Returns
/// that stage's report, or the Simulate report when everything passes.
ToolchainReport run_pipeline(Toolchain& tools, const RtlSource& rtl, const InstrumentedTestbench& tb,
                             const std::filesystem::path& workdir);

enum class SimulatorFlavor { Icarus, Verilator };

struct ToolchainConfig {
  std::string linter = "verilator";
  std::vector<std::string> lint_flags{"--lint-only", "-Wall", "-Wno-fatal"};
  SimulatorFlavor flavor = SimulatorFlavor::Icarus;
  std::string compiler = "iverilog";
  std::vector<std::string> compile_flags{"-g2012"};
  std::string runtime = "vvp";  // Icarus only; Verilator builds a native binary
  std::vector<std::string> runtime_flags{"-n"};
  std::chrono::milliseconds lint_timeout{60'000};
  std::chrono::milliseconds compile_timeout{60'000};
  std::chrono::milliseconds simulate_timeout{120'000};
  PassCriterion pass_criterion;
};

/// Verilator for lint and a `--binary --trace` simulation build.
ToolchainConfig verilator_toolchain_config(std::string verilator = "verilator");

/// Drives real tools. Files land in the workdir as dut.v, tb.v, sim.out,
/// dump.vcd and stage_<name>.log. Stateless; safe to share across threads
/// as long as runs use distinct workdirs.
class ExternalToolchain : public Toolchain {
 public:
  explicit ExternalToolchain(ToolchainConfig cfg) : cfg_(std::move(cfg)) {}

  ToolchainReport lint(const RtlSource& rtl, const std::filesystem::path& workdir) override;
  ToolchainReport compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                          const std::filesystem::path& workdir) override;
  ToolchainReport simulate(const std::filesystem::path& compiled, const std::filesystem::path& vcd_path) override;

  [[nodiscard]] const ToolchainConfig& config() const { return cfg_; }

 private:
  ToolchainConfig cfg_;
};

/// One canned stage outcome inside a toolchain fixture.
struct StageOutcome {
  int exit_code = 0;
  std::string log;
  std::optional<std::string> vcd_text;  // Simulate only
};

struct CandidateOutcome {
  std::string rtl;  // normalized candidate text (extract_rtl form)
  std::optional<StageOutcome> lint, compile, simulate;
};

/// Deterministic stand-in for the external tools, keyed by the candidate's
/// text. Fixture file (JSON):
///   {"candidates": [{"rtl": "...", "lint": {"exit_code": 0, "log": ""},
///                    "compile": {...}, "simulate": {..., "vcd": "dump.vcd"}}]}
/// `vcd` is a path relative to the fixture file; `vcd_text` inlines it.
/// Simulate pass/fail is still decided by the configured PassCriterion.
class ReplayToolchain : public Toolchain {
 public:
  explicit ReplayToolchain(std::vector<CandidateOutcome> fixture, PassCriterion criterion = {});
  ReplayToolchain(ReplayToolchain&& other) noexcept;
  static ReplayToolchain load(const std::filesystem::path& fixture_file, PassCriterion criterion = {});

  ToolchainReport lint(const RtlSource& rtl, const std::filesystem::path& workdir) override;
  ToolchainReport compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                          const std::filesystem::path& workdir) override;
  ToolchainReport simulate(const std::filesystem::path& compiled, const std::filesystem::path& vcd_path) override;

  void set_pass_criterion(PassCriterion c) { criterion_ = std::move(c); }
  [[nodiscard]] std::size_t stage_calls(Stage s) const;

 private:
  const CandidateOutcome& find(const std::string& rtl_text) const;
  void count(Stage s);

  std::map<std::string, CandidateOutcome> by_digest_;
  PassCriterion criterion_;
  mutable std::mutex mu_;
  std::map<Stage, std::size_t> calls_;
};

/// Wraps a real toolchain and captures every stage outcome so it can be
/// written out as a ReplayToolchain fixture.
class RecordingToolchain : public Toolchain {
 public:
  explicit RecordingToolchain(Toolchain& inner) : inner_(inner) {}

  ToolchainReport lint(const RtlSource& rtl, const std::filesystem::path& workdir) override;
  ToolchainReport compile(const RtlSource& rtl, const InstrumentedTestbench& tb,
                          const std::filesystem::path& workdir) override;
  ToolchainReport simulate(const std::filesystem::path& compiled, const std::filesystem::path& vcd_path) override;

  /// Writes the fixture JSON with VCDs inlined.
  void save(const std::filesystem::path& fixture_file) const;
  [[nodiscard]] std::vector<CandidateOutcome> outcomes() const;

 private:
  Toolchain& inner_;
  mutable std::mutex mu_;
  std::vector<CandidateOutcome> outcomes_;
  std::map<std::string, std::size_t> by_compiled_;  // compiled path -> outcome index
  std::map<std::string, std::size_t> by_rtl_;
};

/// Creates `<base>/<stem>`, or `<stem>-1`, `<stem>-2`, ... when taken, so
/// concurrent runs never share a directory. Throws WorkdirError.
std::filesystem::path make_unique_dir(const std::filesystem::path& base, const std::string& stem);

}  // namespace pefa
