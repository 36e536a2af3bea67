#include "pefa/orchestrator.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "pefa/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pefa {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string head_chars(std::string_view s, std::size_t n) { return std::string(s.substr(0, n)); }
std::string tail_chars(std::string_view s, std::size_t n) { return std::string(s.size() > n ? s.substr(s.size() - n) : s); }

void write_text(const fs::path& p, std::string_view content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << content;
}

std::string safe_name(std::string_view id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') ? c : '_';
  return out.empty() ? "problem" : out;
}

// Remembers which stage is running so a thrown stage error can be attributed.
class StageTracker : public Toolchain {
 public:
  explicit StageTracker(Toolchain& inner) : inner_(inner) {}
  Stage current = Stage::Lint;

  ToolchainReport lint(const RtlSource& rtl, const fs::path& workdir) override {
    current = Stage::Lint;
    return inner_.lint(rtl, workdir);
  }
  ToolchainReport compile(const RtlSource& rtl, const InstrumentedTestbench& tb, const fs::path& workdir) override {
    current = Stage::Compile;
    return inner_.compile(rtl, tb, workdir);
  }
  ToolchainReport simulate(const fs::path& compiled, const fs::path& vcd_path) override {
    current = Stage::Simulate;
    return inner_.simulate(compiled, vcd_path);
  }

 private:
  Toolchain& inner_;
};

std::string summarize_or_truncate(FeedbackContext& ctx, const std::string& tmpl, const std::string& log,
                                  bool keep_tail, bool& fallback) {
  if (ctx.summarizer != nullptr) {
    const auto cap = ctx.options.summarizer_input_chars;
    const std::string input = keep_tail ? tail_chars(log, cap) : head_chars(log, cap);
    const std::vector<llm::ChatMessage> msgs{{llm::Role::System, ctx.templates.summarizer_system},
                                             {llm::Role::User, fill(tmpl, "log", input)}};
    try {
      auto c = ctx.summarizer->complete(msgs);
      if (!trim(c.text()).empty()) return std::string(trim(c.text()));
    } catch (const Error&) {
      // Summarizer unavailable; use the rule-based excerpt below.
    }
  }
  fallback = true;
  return truncate_lines(log, ctx.options.fallback_head_lines, ctx.options.fallback_tail_lines);
}

bool is_top_scope(std::string_view name) { return std::count(name.begin(), name.end(), '.') <= 1; }

std::string_view leaf(std::string_view name) {
  auto dot = name.rfind('.');
  return dot == std::string_view::npos ? name : name.substr(dot + 1);
}

struct WindowText {
  std::string text;
  std::size_t mismatches = 0;
};

std::optional<WindowText> vcd_window_text(const ToolchainReport& report, const FeedbackContext& ctx) {
  if (!report.vcd_path) return std::nullopt;
  std::ifstream in(*report.vcd_path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    auto table = vcd::to_signal_table(vcd::parse_vcd(ss.str()));
    auto mm = vcd::find_mismatches(table, ctx.options.pairing, ctx.options.window_radius);
    if (!mm.first_mismatch_time) return std::nullopt;

    // Show the paired signals and the DUT ports at testbench scope only.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      const auto& name = table.columns[i].name;
      bool wanted = std::any_of(mm.pairs.begin(), mm.pairs.end(),
                                [&](const auto& p) { return p.first == name || p.second == name; });
      if (!wanted && is_top_scope(name)) {
        wanted = std::find(ctx.dut_ports.begin(), ctx.dut_ports.end(), leaf(name)) != ctx.dut_ports.end();
      }
      if (wanted) keep.push_back(i);
    }
    std::vector<vcd::Column> cols;
    std::vector<vcd::Row> rows;
    if (keep.empty()) {
      cols = table.columns;
      rows = mm.window;
    } else {
      for (auto i : keep) cols.push_back(table.columns[i]);
      for (const auto& r : mm.window) {
        vcd::Row row{r.time, {}};
        for (auto i : keep) row.values.push_back(r.values[i]);
        rows.push_back(std::move(row));
      }
    }
    std::string text = "Simulation mismatch: " + std::to_string(mm.total_mismatches) + " of " +
                       std::to_string(table.rows.size()) +
                       " recorded time points differ between reference and DUT outputs; first mismatch at time " +
                       std::to_string(*mm.first_mismatch_time) + ".\n";
    text += vcd::render_text(cols, rows);
    return WindowText{std::move(text), mm.total_mismatches};
  } catch (const Error&) {
    return std::nullopt;
  }
}

json usage_json(const llm::Usage& u) {
  return json{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}, {"total_tokens", u.total}};
}

llm::Usage usage_delta(const llm::Usage& after, const llm::Usage& before) {
  return llm::Usage{after.prompt_tokens - before.prompt_tokens, after.completion_tokens - before.completion_tokens,
                    after.total - before.total};
}

}  // namespace

std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::CodeComplete: return "code_complete";
    case Subset::SpecToRtl: return "spec_to_rtl";
    case Subset::Rtllm: return "rtllm";
  }
  return "?";
}

Subset subset_from_string(std::string_view s) {
  std::string l(s);
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return c == '-' ? '_' : std::tolower(c); });
  if (l == "code_complete" || l == "codecomplete" || l == "completion") return Subset::CodeComplete;
  if (l == "spec_to_rtl" || l == "spectortl") return Subset::SpecToRtl;
  if (l == "rtllm") return Subset::Rtllm;
  throw Error(ErrorCode::ConfigError, "unknown subset '" + std::string(s) + "'");
}

std::string_view to_string(FeedbackKind k) {
  switch (k) {
    case FeedbackKind::SyntaxSummary: return "SyntaxSummary";
    case FeedbackKind::VcdWindow: return "VcdWindow";
    case FeedbackKind::LlmLogSummary: return "LlmLogSummary";
  }
  return "?";
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Running: return "Running";
    case RunStatus::Passed: return "Passed";
    case RunStatus::Exhausted: return "Exhausted";
  }
  return "?";
}

FeedbackKind decide_feedback(bool compile_ok, int loop_index) {
  if (!compile_ok) return FeedbackKind::SyntaxSummary;
  return loop_index <= 1 ? FeedbackKind::VcdWindow : FeedbackKind::LlmLogSummary;
}

std::string fill(std::string_view tmpl, std::string_view key, std::string_view value) {
  const std::string needle = "{" + std::string(key) + "}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto hit = tmpl.find(needle, pos);
    if (hit == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      return out;
    }
    out.append(tmpl.substr(pos, hit - pos));
    out.append(value);
    pos = hit + needle.size();
  }
}

PromptTemplates PromptTemplates::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, file.string() + ": " + e.what());
  }
  PromptTemplates t;
  auto take = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  take("version", t.version);
  take("system", t.system);
  take("feedback", t.feedback);
  take("summarizer_system", t.summarizer_system);
  take("syntax_summary", t.syntax_summary);
  take("log_summary", t.log_summary);
  take("run_summary", t.run_summary);
  take("extraction_failure", t.extraction_failure);
  take("continuation", t.continuation);
  return t;
}

std::string PromptTemplates::to_json() const {
  json j{{"version", version},
         {"system", system},
         {"feedback", feedback},
         {"summarizer_system", summarizer_system},
         {"syntax_summary", syntax_summary},
         {"log_summary", log_summary},
         {"run_summary", run_summary},
         {"extraction_failure", extraction_failure},
         {"continuation", continuation}};
  return j.dump(2);
}

std::vector<llm::ChatMessage> prune_context(const LoopState& state, std::span<const llm::ChatMessage> base_prompt,
                                            const PromptTemplates& templates) {
  std::vector<llm::ChatMessage> msgs;
  for (const auto& m : base_prompt) {
    if (msgs.size() == 2) break;
    msgs.push_back(m);
  }
  if (!state.latest_feedback) return msgs;
  if (state.best_compiling) {
    msgs.push_back({llm::Role::Assistant, state.best_compiling->text});
  } else if (!state.candidate_queue.empty()) {
    msgs.push_back({llm::Role::Assistant, state.candidate_queue.back().code()});
  }
  msgs.push_back({llm::Role::User, fill(templates.feedback, "feedback", *state.latest_feedback)});
  return msgs;
}

std::string truncate_lines(std::string_view log, std::size_t head, std::size_t tail) {
  auto lines = split_lines(log);
  std::string out;
  if (lines.size() <= head + tail) {
    for (auto l : lines) {
      out.append(l);
      out += '\n';
    }
    return out;
  }
  for (std::size_t i = 0; i < head; ++i) {
    out.append(lines[i]);
    out += '\n';
  }
  out += "... [" + std::to_string(lines.size() - head - tail) + " lines omitted] ...\n";
  for (std::size_t i = lines.size() - tail; i < lines.size(); ++i) {
    out.append(lines[i]);
    out += '\n';
  }
  return out;
}

std::string soft_cap(std::string_view text, std::size_t budget) {
  if (text.size() <= budget) return std::string(text);
  static constexpr std::string_view kMarker = "\n[truncated]";
  const std::size_t room = budget > kMarker.size() ? budget - kMarker.size() : 0;
  auto cut = text.substr(0, room);
  auto nl = cut.rfind('\n');
  if (nl != std::string_view::npos && nl > room / 2) cut = cut.substr(0, nl);
  return std::string(cut) + std::string(kMarker);
}

std::string redact_testbench(std::string_view log, std::string_view testbench, std::size_t window) {
  if (testbench.size() < window || window == 0) return std::string(log);
  std::unordered_set<std::string_view> runs;
  runs.reserve(testbench.size());
  for (std::size_t i = 0; i + window <= testbench.size(); ++i) {
    auto run = testbench.substr(i, window);
    if (trim(run).empty()) continue;
    runs.insert(run);
  }
  std::string out;
  bool last_redacted = false;
  for (auto line : split_lines(log)) {
    bool quoted = false;
    for (std::size_t i = 0; !quoted && i + window <= line.size(); ++i) quoted = runs.count(line.substr(i, window)) > 0;
    if (quoted) {
      if (!last_redacted) out += "[testbench excerpt removed]\n";
      last_redacted = true;
      continue;
    }
    last_redacted = false;
    out.append(line);
    out += '\n';
  }
  return out;
}

Feedback build_feedback(FeedbackKind kind, const ToolchainReport& report, FeedbackContext& ctx) {
  Feedback fb;
  fb.kind = kind;
  const std::string log = redact_testbench(report.log, ctx.testbench);
  switch (kind) {
    case FeedbackKind::SyntaxSummary: {
      std::string stage = report.stage == Stage::Lint ? "lint" : report.stage == Stage::Compile ? "compile" : "simulate";
      fb.text = "The module failed the " + stage + " stage.\n" +
                summarize_or_truncate(ctx, ctx.templates.syntax_summary, log, false, fb.used_fallback);
      break;
    }
    case FeedbackKind::VcdWindow: {
      if (auto w = vcd_window_text(report, ctx)) {
        fb.text = std::move(w->text);
        fb.vcd_mismatches = w->mismatches;
      } else {
        fb.used_fallback = true;
        fb.text = "Simulation failed (exit " + std::to_string(report.exit_code) +
                  ") without a locatable waveform mismatch. Log excerpt:\n" +
                  truncate_lines(log, ctx.options.fallback_head_lines, ctx.options.fallback_tail_lines);
      }
      break;
    }
    case FeedbackKind::LlmLogSummary: {
      fb.text = "Simulation still fails.\n" +
                summarize_or_truncate(ctx, ctx.templates.log_summary, log, true, fb.used_fallback);
      break;
    }
  }
  fb.text = soft_cap(fb.text, ctx.options.char_budget);
  return fb;
}

std::string summarize_run(const std::vector<HistoryEntry>& history, llm::ChatSession* summarizer,
                          const PromptTemplates& templates, const RunFacts& facts) {
  if (history.empty()) return "Run summary: no activity.";
  if (summarizer != nullptr) {
    std::string transcript;
    for (const auto& h : history) transcript += "[" + h.label + "]\n" + h.text + "\n";
    const std::vector<llm::ChatMessage> msgs{
        {llm::Role::System, templates.summarizer_system},
        {llm::Role::User, fill(templates.run_summary, "history", tail_chars(transcript, 12000))}};
    try {
      auto c = summarizer->complete(msgs);
      if (!trim(c.text()).empty()) return std::string(trim(c.text()));
    } catch (const Error&) {
    }
  }
  std::string text = std::string("Run ") + (facts.passed ? "PASSED" : "FAILED") + " after " +
                     std::to_string(facts.loops_used) + " feedback loop(s) and " + std::to_string(facts.llm_calls) +
                     " generator call(s).";
  if (!facts.passed && !facts.last_error.empty()) text += " Last error: " + facts.last_error;
  return text;
}

std::vector<llm::ChatMessage> base_prompt(const DesignProblem& problem, const PromptTemplates& templates) {
  return {{llm::Role::System, templates.system}, {llm::Role::User, problem.prompt}};
}

std::optional<std::int64_t> candidate_mismatches(const ToolchainReport& report, const vcd::PairingRule& pairing) {
  if (report.stage != Stage::Simulate) return std::nullopt;
  if (auto mc = parse_mismatch_count(report.log)) return mc->mismatches;
  if (report.vcd_path) {
    try {
      std::ifstream in(*report.vcd_path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      auto mm = vcd::find_mismatches(vcd::to_signal_table(vcd::parse_vcd(ss.str())), pairing);
      if (!mm.pairs.empty()) return static_cast<std::int64_t>(mm.total_mismatches);
    } catch (const Error&) {
    }
  }
  if (report.ok) return 0;
  return std::nullopt;
}

RunSummary run_pefa(const DesignProblem& problem, const PefaConfig& cfg, Toolchain& tools,
                    llm::ChatSession& generator, llm::ChatSession* summarizer) {
  RunSummary out;
  const auto gen_calls0 = generator.calls();
  const auto gen_usage0 = generator.usage();
  const auto sum_calls0 = summarizer ? summarizer->calls() : 0;
  const auto sum_usage0 = summarizer ? summarizer->usage() : llm::Usage{};

  const fs::path root = cfg.artifacts_root.empty() ? fs::temp_directory_path() / "pefa-runs" : cfg.artifacts_root;
  std::vector<HistoryEntry> history;
  LoopState state;
  state.max_loops = cfg.max_loops;
  const auto& tmpl = cfg.templates;
  std::string last_error;

  auto finish = [&]() {
    if (state.status == RunStatus::Running) state.status = RunStatus::Exhausted;
    out.status = state.status;
    out.passed = state.status == RunStatus::Passed;
    out.loops_used = state.feedback_count;
    out.llm_calls = generator.calls() - gen_calls0;
    out.usage = usage_delta(generator.usage(), gen_usage0);
    out.usage_estimated = generator.any_estimated();
    RunFacts facts{out.passed, out.loops_used, out.llm_calls, last_error};
    out.chat_summary = summarize_run(history, summarizer, tmpl, facts);
    if (summarizer) {
      out.summarizer_calls = summarizer->calls() - sum_calls0;
      out.summarizer_usage = usage_delta(summarizer->usage(), sum_usage0);
    }
    if (!out.artifact_dir.empty()) {
      write_text(out.artifact_dir / "summary.json", out.to_json());
      write_text(out.artifact_dir / "summary.txt", out.to_text());
    }
    return out;
  };

  try {
    out.artifact_dir = make_unique_dir(root, safe_name(problem.id));
  } catch (const Error& e) {
    out.errors.emplace_back(e.what());
    return finish();
  }

  InstrumentedTestbench tb;
  try {
    tb = instrument_testbench(problem.testbench, problem.dut_ports);
  } catch (const Error& e) {
    out.errors.emplace_back(e.what());
    last_error = e.what();
    return finish();
  }

  FeedbackOptions fopts = cfg.feedback;
  if (problem.pairing) fopts.pairing = *problem.pairing;
  FeedbackContext ctx{tmpl, fopts, summarizer, problem.testbench, problem.dut_ports};
  const auto base = base_prompt(problem, tmpl);
  history.push_back({"prompt", problem.prompt});

  while (state.status == RunStatus::Running) {
    const auto msgs = prune_context(state, base, tmpl);
    llm::Completion completion;
    try {
      completion = generator.complete(msgs);
    } catch (const Error& e) {
      out.errors.emplace_back(e.what());
      last_error = e.what();
      state.status = RunStatus::Exhausted;
      break;
    }

    Candidate cand;
    cand.call_index = state.candidate_queue.size() + 1;
    cand.completion = completion.text();
    const std::string k = std::to_string(cand.call_index);
    bool fatal = false;
    try {
      cand.rtl = extract_rtl(cand.completion);
    } catch (const Error& e) {
      cand.report = ToolchainReport{Stage::Lint, false, e.what(), -1, std::nullopt, 0};
    }
    write_text(out.artifact_dir / ("cand_" + k + ".v"), cand.code());

    if (cand.rtl) {
      StageTracker tracker(tools);
      try {
        cand.report = run_pipeline(tracker, *cand.rtl, tb, out.artifact_dir / ("work_" + k));
      } catch (const Error& e) {
        cand.report = ToolchainReport{tracker.current, false, e.what(), -1, std::nullopt, 0};
        out.errors.emplace_back(std::string(to_string(tracker.current)) + ": " + e.what());
        fatal = e.code() == ErrorCode::ToolNotFound || e.code() == ErrorCode::WorkdirError;
      }
    }
    if (cand.compiled()) cand.mismatches = candidate_mismatches(cand.report, fopts.pairing);
    out.mismatch_counts.push_back(cand.mismatches);

    history.push_back({"candidate " + k, cand.code()});
    history.push_back({"result " + k, std::string(to_string(cand.report.stage)) + (cand.report.ok ? " ok" : " failed") +
                                          "\n" + soft_cap(redact_testbench(cand.report.log, problem.testbench), 2000)});

    const bool compile_ok = cand.compiled();
    const bool passed = compile_ok && cand.report.ok;
    if (compile_ok) state.best_compiling = *cand.rtl;
    if (!passed) {
      auto first_line = trim(std::string_view(cand.report.log).substr(0, cand.report.log.find('\n')));
      last_error = std::string(to_string(cand.report.stage)) + ": " + std::string(first_line);
    }
    const ToolchainReport report = cand.report;
    const bool extracted = cand.rtl.has_value();
    state.candidate_queue.push_back(std::move(cand));

    if (passed) {
      state.status = RunStatus::Passed;
      out.final_code = state.candidate_queue.back().rtl;
      break;
    }
    if (fatal || state.feedback_count >= state.max_loops) {
      state.status = RunStatus::Exhausted;
      break;
    }

    if (compile_ok) state.counter_started = true;
    if (state.counter_started) ++state.loop_index;
    ++state.feedback_count;
    const FeedbackKind kind = decide_feedback(compile_ok, std::max(1, state.loop_index));
    Feedback fb;
    if (!extracted) {
      fb.kind = kind;
      fb.text = tmpl.extraction_failure;
    } else {
      fb = build_feedback(kind, report, ctx);
    }
    out.feedback_kinds.push_back(fb.kind);
    state.latest_feedback = fb.text;
    write_text(out.artifact_dir / ("feedback_" + std::to_string(state.feedback_count) + ".txt"), fb.text);
    history.push_back({"feedback " + std::to_string(state.feedback_count) + " (" + std::string(to_string(fb.kind)) + ")",
                       fb.text});
  }
  if (!out.final_code && state.best_compiling) out.final_code = state.best_compiling;
  return finish();
}

std::string RunSummary::to_json() const {
  json mm = json::array();
  for (const auto& m : mismatch_counts) mm.push_back(m ? json(*m) : json(nullptr));
  json kinds = json::array();
  for (auto k : feedback_kinds) kinds.push_back(to_string(k));
  json j{{"passed", passed},
         {"status", to_string(status)},
         {"loops_used", loops_used},
         {"llm_calls", llm_calls},
         {"usage", usage_json(usage)},
         {"usage_estimated", usage_estimated},
         {"summarizer_calls", summarizer_calls},
         {"summarizer_usage", usage_json(summarizer_usage)},
         {"final_code", final_code ? json(final_code->text) : json(nullptr)},
         {"chat_summary", chat_summary},
         {"mismatch_counts", mm},
         {"feedback_kinds", kinds},
         {"errors", errors}};
  return j.dump(2);
}

std::string RunSummary::to_text() const {
  std::ostringstream os;
  os << "status:        " << to_string(status) << (passed ? " (pass)" : " (fail)") << '\n'
     << "feedback loops " << loops_used << ", generator calls " << llm_calls << '\n'
     << "tokens:        " << usage.total << " (prompt " << usage.prompt_tokens << ", completion "
     << usage.completion_tokens << ")" << (usage_estimated ? " [estimated]" : "") << '\n'
     << "summarizer:    " << summarizer_calls << " call(s), " << summarizer_usage.total << " tokens\n";
  os << "mismatches:   ";
  for (const auto& m : mismatch_counts) os << ' ' << (m ? std::to_string(*m) : "-");
  os << "\nfeedback:     ";
  for (auto k : feedback_kinds) os << ' ' << to_string(k);
  os << "\n\n" << chat_summary << '\n';
  for (const auto& e : errors) os << "error: " << e << '\n';
  if (final_code) os << "\nfinal code:\n" << final_code->text << '\n';
  return os.str();
}

}  // namespace pefa
