#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pefa/llm.hpp"
#include "pefa/rtl.hpp"
#include "pefa/toolchain.hpp"
#include "pefa/vcd.hpp"

namespace pefa {

enum class Subset { CodeComplete, SpecToRtl, Rtllm };
std::string_view to_string(Subset s);
Subset subset_from_string(std::string_view s);

/// One benchmark task. The testbench never reaches an LLM.
struct DesignProblem {
  std::string id;
  std::string prompt;
  std::string testbench;
  Subset subset = Subset::SpecToRtl;
  std::vector<std::string> dut_ports;
  std::optional<vcd::PairingRule> pairing;
};

enum class FeedbackKind { SyntaxSummary, VcdWindow, LlmLogSummary };
std::string_view to_string(FeedbackKind k);

/// Which feedback a failed candidate gets. `loop_index` is the feedback loop
/// number counted from the first successful compile (>= 1).
FeedbackKind decide_feedback(bool compile_ok, int loop_index);

/// Every string the agents send, versioned so runs are reproducible.
/// Placeholders: {feedback}, {log}, {history}.
struct PromptTemplates {
  std::string version = "pefa-prompts/1";
  std::string system =
      "You are a Verilog RTL designer. Respond with complete synthesizable Verilog inside a fenced code block.";
  std::string feedback = "{feedback}\nFix the module accordingly. Return the full corrected module.";
  std::string summarizer_system = "You are a concise hardware debugging assistant.";
  std::string syntax_summary =
      "Summarize the following Verilog lint/compile errors in a few lines. Name each offending construct "
      "and the fix it needs.\n\n{log}";
  std::string log_summary =
      "Summarize the following log from a failing Verilog simulation in a few lines. Say which outputs are "
      "wrong, for which inputs, and from what time.\n\n{log}";
  std::string run_summary =
      "Summarize this RTL generation session for the user. State whether it succeeded or failed and the "
      "main problems encountered.\n\n{history}";
  std::string extraction_failure =
      "No Verilog module was found in your previous response. Respond with the complete module inside a "
      "fenced code block.";
  std::string continuation = "Continue the Verilog module exactly where it stops. Output only the remaining code.";

  /// Loads a JSON object with the same keys; missing keys keep defaults.
  static PromptTemplates load(const std::filesystem::path& file);
  [[nodiscard]] std::string to_json() const;
};

std::string fill(std::string_view tmpl, std::string_view key, std::string_view value);

enum class RunStatus { Running, Passed, Exhausted };
std::string_view to_string(RunStatus s);

/// One generator call and what the toolchain made of it.
struct Candidate {
  std::size_t call_index = 0;  // 1-based
  std::string completion;      // raw LLM text
  std::optional<RtlSource> rtl;
  ToolchainReport report;
  std::optional<std::int64_t> mismatches;

  [[nodiscard]] bool compiled() const { return rtl && report.stage == Stage::Simulate; }
  [[nodiscard]] const std::string& code() const { return rtl ? rtl->text : completion; }
};

struct LoopState {
  int loop_index = 0;  // feedback loops since the first successful compile
  bool counter_started = false;
  int max_loops = 4;
  int feedback_count = 0;  // feedback messages built so far (<= max_loops)
  std::deque<Candidate> candidate_queue;
  std::optional<RtlSource> best_compiling;
  std::optional<std::string> latest_feedback;
  RunStatus status = RunStatus::Running;
};

/// [system, user prompt] plus, once feedback exists, [assistant: best
/// compiling candidate (else the latest one), user: wrapped feedback].
std::vector<llm::ChatMessage> prune_context(const LoopState& state, std::span<const llm::ChatMessage> base_prompt,
                                            const PromptTemplates& templates = {});

struct FeedbackOptions {
  vcd::PairingRule pairing;
  std::size_t window_radius = vcd::kDefaultWindowRadius;
  std::size_t char_budget = 2400;
  std::size_t fallback_head_lines = 20;
  std::size_t fallback_tail_lines = 20;
  std::size_t summarizer_input_chars = 12000;
};

struct FeedbackContext {
  const PromptTemplates& templates;
  const FeedbackOptions& options;
  llm::ChatSession* summarizer = nullptr;  // null: summarizer unavailable
  std::string_view testbench;              // for log redaction
  std::vector<std::string> dut_ports;
};

struct Feedback {
  FeedbackKind kind = FeedbackKind::SyntaxSummary;
  std::string text;
  bool used_fallback = false;
  std::optional<std::size_t> vcd_mismatches;
};

/// Builds the feedback message for a failed report. Summarizer failures fall
/// back to the first/last lines of the log. The text is soft-capped at
/// options.char_budget characters.
Feedback build_feedback(FeedbackKind kind, const ToolchainReport& report, FeedbackContext& ctx);

/// First `head` and last `tail` lines of `log`, with an elision marker.
std::string truncate_lines(std::string_view log, std::size_t head, std::size_t tail);

/// Cuts `text` at a line boundary so it fits `budget` characters.
std::string soft_cap(std::string_view text, std::size_t budget);

/// Drops lines of `log` that quote the testbench (share any `window`-byte
/// run with it).
std::string redact_testbench(std::string_view log, std::string_view testbench, std::size_t window = 24);

struct HistoryEntry {
  std::string label;
  std::string text;
};

struct RunFacts {
  bool passed = false;
  int loops_used = 0;
  std::size_t llm_calls = 0;
  std::string last_error;
};

/// Summarizer-written account of the run, or a templated one when the
/// summarizer is unavailable. Never throws.
std::string summarize_run(const std::vector<HistoryEntry>& history, llm::ChatSession* summarizer,
                          const PromptTemplates& templates, const RunFacts& facts);

struct RunSummary {
  bool passed = false;
  RunStatus status = RunStatus::Running;
  int loops_used = 0;  // feedback loops built
  std::size_t llm_calls = 0;  // generator calls
  llm::Usage usage;           // generator only
  bool usage_estimated = false;
  std::size_t summarizer_calls = 0;
  llm::Usage summarizer_usage;
  std::optional<RtlSource> final_code;
  std::string chat_summary;
  std::vector<std::optional<std::int64_t>> mismatch_counts;  // per candidate
  std::vector<FeedbackKind> feedback_kinds;
  std::vector<std::string> errors;
  std::filesystem::path artifact_dir;

  [[nodiscard]] std::string to_json() const;  // excludes artifact_dir
  [[nodiscard]] std::string to_text() const;
};

struct PefaConfig {
  int max_loops = 4;
  FeedbackOptions feedback;
  PromptTemplates templates;
  std::filesystem::path artifacts_root;  // empty: system temp dir
};

/// The base conversation: system template plus the problem prompt.
std::vector<llm::ChatMessage> base_prompt(const DesignProblem& problem, const PromptTemplates& templates);

/// Runs the progressive feedback loop for one problem. Writes every
/// candidate, stage log, feedback message and the summary into a fresh
/// directory under cfg.artifacts_root. Stage errors are recorded, not thrown.
RunSummary run_pefa(const DesignProblem& problem, const PefaConfig& cfg, Toolchain& tools, llm::ChatSession& generator,
                    llm::ChatSession* summarizer);

/// Mismatch count for a compiled candidate: the testbench's own counter when
/// it prints one, else the number of differing rows in the VCD.
std::optional<std::int64_t> candidate_mismatches(const ToolchainReport& report, const vcd::PairingRule& pairing);

}  // namespace pefa
