#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pefa/llm.hpp"
#include "pefa/mcts.hpp"
#include "pefa/orchestrator.hpp"
#include "pefa/toolchain.hpp"

namespace pefa {

/// A loaded benchmark. Dataset roots hold a `manifest.json`:
///
///   {"name": "...", "subset": "spec_to_rtl",
///    "pass_criterion": {"kind": "absent" | "present" | "mismatch_count", "pattern": "..."},
///    "problems": [{"id": "...", "prompt": "rel/path", "testbench": "rel/path",
///                  "ports": ["a", "b"], "subset": "...",
///                  "pairing": {"ref_suffix": "_ref", "dut_suffix": "", "pairs": [["ref", "dut"]]}}]}
///
/// `ports` are the testbench-side names of the DUT connections; when absent
/// they are read from the named port connections in the testbench.
struct Dataset {
  std::string name;
  Subset subset = Subset::SpecToRtl;
  PassCriterion pass_criterion;
  std::vector<DesignProblem> problems;  // sorted by id
  std::size_t excluded = 0;
  std::vector<std::string> warnings;    // skipped problems, one line each
  std::vector<std::string> untestable;  // ids without a testbench
};

/// One id per line; blank lines and `#` comments ignored. Throws MissingFile.
std::vector<std::string> load_exclusions(const std::filesystem::path& file);

/// Problems of `subset` from a manifest dataset, minus `exclusions`.
/// Throws MissingFile / ConfigError for an unusable manifest; a problem with
/// missing files is skipped with a warning.
Dataset load_verilogeval(const std::filesystem::path& root, Subset subset, std::span<const std::string> exclusions = {});

/// RTLLM-style layout: one directory per design holding
/// `design_description.txt`, `testbench.v` and optionally `meta.json`
/// ({"ports": [...], "pairing": {...}}). Designs without `testbench.v` are
/// listed as untestable. A `manifest.json` at the root takes precedence.
Dataset load_rtllm(const std::filesystem::path& root);

/// Testbench signal names wired to named DUT port connections, in order.
std::vector<std::string> infer_ports(std::string_view testbench);

/// 1 - C(M-C, N) / C(M, N), evaluated as a running product. Throws DomainError
/// unless 0 <= C <= M and 1 <= N <= M.
double pass_at_n(std::int64_t M, std::int64_t C, std::int64_t N);

struct EvalRecord {
  std::string problem_id;
  Subset subset = Subset::SpecToRtl;
  std::string mode;
  bool passed = false;
  std::string status;
  int loops_used = 0;
  std::size_t llm_calls = 0;
  llm::Usage usage;
  bool usage_estimated = false;
  std::size_t summarizer_calls = 0;
  llm::Usage summarizer_usage;
  std::optional<std::int64_t> mismatches_initial;
  std::optional<std::int64_t> mismatches_final;
  std::int64_t samples = 1;  // generations scored for pass@N
  std::int64_t correct = 0;
  std::optional<int> rollouts;  // mcts only
  bool binary_reward = false;   // mcts only
  std::vector<std::string> errors;
  std::int64_t wall_ms = 0;

  [[nodiscard]] std::string to_json_line() const;
};

struct MismatchReduction {
  std::size_t improved = 0;
  std::size_t failed = 0;
  double avg_reduction = 0.0;
  bool operator==(const MismatchReduction&) const = default;
};

/// failed = records not passed; improved = failed records whose final count
/// is below the initial one; avg over improved of (initial - final).
MismatchReduction mismatch_reduction(std::span<const EvalRecord> records);

enum class Mode { Agentic, NonAgentic, Mcts };
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct MetricsReport {
  std::string dataset;
  std::string subset;
  std::string mode;
  std::size_t problems = 0;
  std::size_t passed = 0;
  double pass_rate = 0.0;  // percent
  std::size_t excluded = 0;
  std::size_t skipped = 0;
  std::size_t errored = 0;
  llm::Usage usage;  // generator, summed over problems
  llm::Usage summarizer_usage;
  std::size_t llm_calls = 0;
  double avg_tokens_per_problem = 0.0;
  double avg_tokens_per_call = 0.0;
  bool usage_estimated = false;
  std::vector<std::pair<int, double>> pass_at;  // (N, mean pass@N)
  MismatchReduction reduction;
  std::size_t rollouts = 0;
  bool binary_reward = false;

  bool operator==(const MetricsReport&) const = default;
  [[nodiscard]] std::string to_text() const;
};

/// Aggregates records (already sorted by id) into a report.
MetricsReport make_report(const Dataset& dataset, Mode mode, std::span<const EvalRecord> records);

struct BenchmarkConfig {
  Mode mode = Mode::Agentic;
  PefaConfig pefa;
  llm::GenerationConfig generator;
  std::optional<llm::GenerationConfig> summarizer;  // agentic only
  int samples = 4;                                  // non-agentic generations per problem
  mcts::MctsConfig mcts;
  std::size_t workers = 1;
};

/// Evaluates one problem in the configured mode. Never throws; failures land
/// in the record's errors.
EvalRecord evaluate_problem(const DesignProblem& problem, const BenchmarkConfig& cfg, llm::LlmClient& client,
                            Toolchain& tools);

struct BenchmarkResult {
  MetricsReport report;
  std::vector<EvalRecord> records;  // sorted by id
};

/// Runs every problem on a pool of `cfg.workers` threads.
BenchmarkResult run_benchmark(const Dataset& dataset, const BenchmarkConfig& cfg, llm::LlmClient& client,
                              Toolchain& tools);

/// Writes records.jsonl, report.csv and report.txt into `out_dir`. Throws IoError.
void emit_report(const BenchmarkResult& result, const std::filesystem::path& out_dir);

}  // namespace pefa
