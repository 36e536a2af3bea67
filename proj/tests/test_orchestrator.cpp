#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "pefa/error.hpp"
#include "pefa/orchestrator.hpp"
#include "test_util.hpp"

using namespace pefa;
using nlohmann::json;
using pefa::testing::slurp;
using pefa::testing::TempDir;
namespace fs = std::filesystem;

TEST(DecideFeedback, TruthTable) {
  for (int loop = 1; loop <= 4; ++loop) {
    EXPECT_EQ(decide_feedback(false, loop), FeedbackKind::SyntaxSummary) << loop;
    EXPECT_EQ(decide_feedback(true, loop), loop == 1 ? FeedbackKind::VcdWindow : FeedbackKind::LlmLogSummary) << loop;
  }
}

TEST(Fill, ReplacesEveryOccurrence) {
  EXPECT_EQ(fill("a {x} b {x} {y}", "x", "1"), "a 1 b 1 {y}");
  EXPECT_EQ(fill("none", "x", "1"), "none");
}

TEST(Templates, JsonRoundTripAndPartialLoad) {
  TempDir dir;
  PromptTemplates t;
  pefa::testing::spit(dir / "t.json", t.to_json());
  auto back = PromptTemplates::load(dir / "t.json");
  EXPECT_EQ(back.to_json(), t.to_json());
  pefa::testing::spit(dir / "p.json", R"({"version": "custom/2", "system": "S"})");
  auto p = PromptTemplates::load(dir / "p.json");
  EXPECT_EQ(p.version, "custom/2");
  EXPECT_EQ(p.system, "S");
  EXPECT_EQ(p.feedback, t.feedback);
  EXPECT_THROW(PromptTemplates::load(dir / "missing.json"), Error);
}

TEST(PruneContext, Shapes) {
  const std::vector<llm::ChatMessage> base{{llm::Role::System, "sys"}, {llm::Role::User, "spec"}, {llm::Role::User, "x"}};
  LoopState s;
  auto m = prune_context(s, base);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[1].content, "spec");

  Candidate c1;
  c1.completion = "prose only";
  s.candidate_queue.push_back(c1);
  s.latest_feedback = "FB";
  m = prune_context(s, base);
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m[2].role, llm::Role::Assistant);
  EXPECT_EQ(m[2].content, "prose only");
  EXPECT_EQ(m[3].content, fill(PromptTemplates{}.feedback, "feedback", "FB"));

  s.best_compiling = extract_rtl("module good(input a); endmodule");
  Candidate c2;
  c2.rtl = extract_rtl("module later(input a); endmodule");
  s.candidate_queue.push_back(c2);
  m = prune_context(s, base);
  EXPECT_EQ(m[2].content, "module good(input a); endmodule");
}

TEST(TruncateLines, HeadTailMarker) {
  std::string log;
  for (int i = 1; i <= 50; ++i) log += "line" + std::to_string(i) + "\n";
  EXPECT_EQ(truncate_lines(log, 2, 2), "line1\nline2\n... [46 lines omitted] ...\nline49\nline50\n");
  EXPECT_EQ(truncate_lines("a\nb", 2, 2), "a\nb\n");
}

TEST(SoftCap, FitsBudget) {
  EXPECT_EQ(soft_cap("short", 100), "short");
  std::string text;
  for (int i = 0; i < 100; ++i) text += "row " + std::to_string(i) + "\n";
  auto capped = soft_cap(text, 120);
  EXPECT_LE(capped.size(), 120u);
  EXPECT_TRUE(capped.ends_with("\n[truncated]"));
  EXPECT_TRUE(text.starts_with(capped.substr(0, capped.size() - 12)));
}

TEST(RedactTestbench, DropsQuotedLines) {
  const std::string tb = "module tb;\n  localparam [15:0] TABLE = 16'h8bd7;\n  assign out_ref = TABLE[{a, b, c, d}];\nendmodule\n";
  const std::string log =
      "%Warning: tb.v:2: localparam [15:0] TABLE = 16'h8bd7;\n"
      "    assign out_ref = TABLE[{a, b, c, d}];\n"
      "Mismatches: 3 in 16 samples\n";
  auto r = redact_testbench(log, tb);
  EXPECT_EQ(r, "[testbench excerpt removed]\nMismatches: 3 in 16 samples\n");
  EXPECT_EQ(redact_testbench("anything", "tiny"), "anything");
}

namespace {

struct Ctx {
  PromptTemplates templates;
  FeedbackOptions options;
  std::unique_ptr<llm::ScriptedLlmClient> client;
  std::unique_ptr<llm::ChatSession> session;
  FeedbackContext ctx{templates, options, nullptr, "", {}};

  explicit Ctx(std::vector<std::string> script = {}) {
    if (!script.empty()) {
      std::vector<llm::Completion> cs;
      for (auto& s : script) cs.push_back(llm::Completion{{s}, llm::Usage::of(10, 5), false});
      client = std::make_unique<llm::ScriptedLlmClient>(cs);
      llm::GenerationConfig g;
      g.model_id = "sum";
      session = std::make_unique<llm::ChatSession>(*client, g);
      ctx.summarizer = session.get();
    }
  }
};

ToolchainReport failed(Stage s, std::string log) {
  ToolchainReport r;
  r.stage = s;
  r.ok = false;
  r.exit_code = 1;
  r.log = std::move(log);
  return r;
}

}  // namespace

TEST(BuildFeedback, SyntaxSummaryWithAndWithoutSummarizer) {
  Ctx with({"  Port 'carry' does not exist; use cout.  "});
  auto fb = build_feedback(FeedbackKind::SyntaxSummary, failed(Stage::Compile, "%Error: dut.v:3: carry\n"), with.ctx);
  EXPECT_EQ(fb.text, "The module failed the compile stage.\nPort 'carry' does not exist; use cout.");
  EXPECT_FALSE(fb.used_fallback);
  EXPECT_EQ(with.session->calls(), 1u);

  Ctx without;
  fb = build_feedback(FeedbackKind::SyntaxSummary, failed(Stage::Lint, "%Error: x\n"), without.ctx);
  EXPECT_EQ(fb.text, "The module failed the lint stage.\n%Error: x\n");
  EXPECT_TRUE(fb.used_fallback);

  Ctx empty({"   "});
  fb = build_feedback(FeedbackKind::SyntaxSummary, failed(Stage::Lint, "e\n"), empty.ctx);
  EXPECT_TRUE(fb.used_fallback);
}

TEST(BuildFeedback, VcdWindowLocatesFirstMismatch) {
  Ctx c;
  c.ctx.dut_ports = {"sel", "in", "out", "out_ref", "acc", "acc_ref"};
  auto r = failed(Stage::Simulate, "done\n");
  r.vcd_path = pefa::testing::fixtures_dir() / "vcd" / "divergence.vcd";
  auto fb = build_feedback(FeedbackKind::VcdWindow, r, c.ctx);
  EXPECT_FALSE(fb.used_fallback);
  ASSERT_TRUE(fb.vcd_mismatches);
  EXPECT_EQ(*fb.vcd_mismatches, 3u);
  EXPECT_TRUE(fb.text.starts_with("Simulation mismatch: 3 of 12 recorded time points differ between reference and DUT "
                                  "outputs; first mismatch at time 35.\n"))
      << fb.text;
  EXPECT_NE(fb.text.find("tb.out_ref"), std::string::npos);
  EXPECT_EQ(fb.text.find("\n0 "), std::string::npos);  // window starts at 10
}

TEST(BuildFeedback, VcdWindowFallsBackToLog) {
  Ctx c;
  auto fb = build_feedback(FeedbackKind::VcdWindow, failed(Stage::Simulate, "assertion failed\n"), c.ctx);
  EXPECT_TRUE(fb.used_fallback);
  EXPECT_EQ(fb.text, "Simulation failed (exit 1) without a locatable waveform mismatch. Log excerpt:\nassertion failed\n");
}

TEST(BuildFeedback, LogSummaryRedactsAndCaps) {
  Ctx c({"out is inverted for every input"});
  c.options.char_budget = 60;
  const std::string tb = "module tb; assign out_ref = golden_lookup_table_value; endmodule";
  c.ctx.testbench = tb;
  std::string seen_body;
  c.client->set_observer([&](const llm::GenerationConfig&, const std::string& b) { seen_body = b; });
  auto fb = build_feedback(FeedbackKind::LlmLogSummary,
                           failed(Stage::Simulate, "assign out_ref = golden_lookup_table_value;\nMismatches: 9 in 9 samples\n"),
                           c.ctx);
  EXPECT_EQ(fb.text, "Simulation still fails.\nout is inverted for every input");
  EXPECT_EQ(seen_body.find("golden_lookup"), std::string::npos);
  EXPECT_NE(seen_body.find("Mismatches: 9 in 9 samples"), std::string::npos);

  Ctx small;
  small.options.char_budget = 40;
  std::string log;
  for (int i = 0; i < 30; ++i) log += "error line " + std::to_string(i) + "\n";
  fb = build_feedback(FeedbackKind::LlmLogSummary, failed(Stage::Simulate, log), small.ctx);
  EXPECT_LE(fb.text.size(), 40u);
  EXPECT_TRUE(fb.used_fallback);
}

TEST(SummarizeRun, FallbacksAndSummarizer) {
  EXPECT_EQ(summarize_run({}, nullptr, {}, {}), "Run summary: no activity.");
  std::vector<HistoryEntry> h{{"prompt", "p"}};
  EXPECT_EQ(summarize_run(h, nullptr, {}, RunFacts{true, 2, 3, ""}),
            "Run PASSED after 2 feedback loop(s) and 3 generator call(s).");
  EXPECT_EQ(summarize_run(h, nullptr, {}, RunFacts{false, 4, 5, "Lint: boom"}),
            "Run FAILED after 4 feedback loop(s) and 5 generator call(s). Last error: Lint: boom");
  Ctx c({"It worked."});
  EXPECT_EQ(summarize_run(h, c.session.get(), {}, RunFacts{true, 0, 1, ""}), "It worked.");
}

TEST(CandidateMismatches, Sources) {
  ToolchainReport r;
  r.stage = Stage::Lint;
  EXPECT_FALSE(candidate_mismatches(r, {}));
  r.stage = Stage::Simulate;
  r.log = "Mismatches: 4 in 32 samples";
  EXPECT_EQ(candidate_mismatches(r, {}), 4);
  r.log = "";
  r.vcd_path = pefa::testing::fixtures_dir() / "vcd" / "divergence.vcd";
  EXPECT_EQ(candidate_mismatches(r, {}), 3);
  r.vcd_path.reset();
  r.ok = true;
  EXPECT_EQ(candidate_mismatches(r, {}), 0);
  r.ok = false;
  EXPECT_FALSE(candidate_mismatches(r, {}));
}

namespace {

RunSummary run_fixture(pefa::testing::ReplayFixture& f, const std::string& id, const fs::path& artifacts) {
  auto cfg = pefa::testing::fixture_config(Mode::Agentic, artifacts);
  llm::ChatSession gen(*f.client, cfg.generator);
  llm::ChatSession sum(*f.client, *cfg.summarizer);
  const auto& p = f.problem(id);
  PefaConfig pc = cfg.pefa;
  if (p.pairing) pc.feedback.pairing = *p.pairing;
  return run_pefa(p, pc, *f.tools, gen, &sum);
}

}  // namespace

TEST(RunPefa, KmapConvergesViaWaveformFeedback) {
  auto f = pefa::testing::load_replay("agentic");
  TempDir art;
  auto s = run_fixture(f, "kmap", art.path());
  EXPECT_TRUE(s.passed);
  EXPECT_EQ(s.status, RunStatus::Passed);
  EXPECT_EQ(s.llm_calls, 3u);
  EXPECT_EQ(s.loops_used, 2);
  EXPECT_EQ(s.feedback_kinds, (std::vector<FeedbackKind>{FeedbackKind::VcdWindow, FeedbackKind::LlmLogSummary}));
  ASSERT_EQ(s.mismatch_counts.size(), 3u);
  EXPECT_EQ(s.mismatch_counts.back(), 0);
  ASSERT_TRUE(s.final_code);
  EXPECT_TRUE(s.errors.empty());

  const auto dir = s.artifact_dir;
  EXPECT_EQ(dir.parent_path(), art.path());
  for (const char* name : {"cand_1.v", "cand_2.v", "cand_3.v", "feedback_1.txt", "feedback_2.txt", "summary.json",
                           "summary.txt"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  EXPECT_TRUE(fs::exists(dir / "work_1" / "dump.vcd"));
  EXPECT_NE(slurp(dir / "feedback_1.txt").find("first mismatch at time 70000"), std::string::npos);
  auto j = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(j["status"], "Passed");
  EXPECT_EQ(j["llm_calls"], 3);
  EXPECT_EQ(j["final_code"], s.final_code->text);
}

TEST(RunPefa, RegressionSequenceOfKinds) {
  auto f = pefa::testing::load_replay("agentic");
  TempDir art;
  auto s = run_fixture(f, "regress", art.path());
  EXPECT_TRUE(s.passed);
  EXPECT_EQ(s.llm_calls, 4u);
  EXPECT_EQ(s.loops_used, 3);
  EXPECT_EQ(s.feedback_kinds, (std::vector<FeedbackKind>{FeedbackKind::VcdWindow, FeedbackKind::SyntaxSummary,
                                                         FeedbackKind::LlmLogSummary}));
}

TEST(RunPefa, ExhaustsAfterFourLoops) {
  auto f = pefa::testing::load_replay("agentic");
  TempDir art;
  auto s = run_fixture(f, "exhaust", art.path());
  EXPECT_FALSE(s.passed);
  EXPECT_EQ(s.status, RunStatus::Exhausted);
  EXPECT_EQ(s.llm_calls, 5u);
  EXPECT_EQ(s.loops_used, 4);
  EXPECT_EQ(s.feedback_kinds.size(), 4u);
  EXPECT_TRUE(s.final_code.has_value());  // best compiling candidate
  EXPECT_FALSE(fs::exists(s.artifact_dir / "feedback_5.txt"));
}

TEST(RunPefa, ExtractionFailureGetsTemplateFeedback) {
  auto f = pefa::testing::load_replay("agentic");
  TempDir art;
  auto s = run_fixture(f, "noextract", art.path());
  EXPECT_TRUE(s.passed);
  EXPECT_EQ(s.llm_calls, 2u);
  EXPECT_EQ(slurp(s.artifact_dir / "feedback_1.txt").find(PromptTemplates{}.extraction_failure), 0u);
  EXPECT_FALSE(s.mismatch_counts.front().has_value());
}

TEST(RunPefa, FirstPassAndTokenTotals) {
  auto f = pefa::testing::load_replay("agentic");
  TempDir art;
  auto s = run_fixture(f, "first_pass", art.path());
  EXPECT_TRUE(s.passed);
  EXPECT_EQ(s.llm_calls, 1u);
  EXPECT_EQ(s.loops_used, 0);
  EXPECT_EQ(s.usage.total, 440);
  auto t = run_fixture(f, "tokens", art.path());
  EXPECT_EQ(t.llm_calls, 4u);
  EXPECT_EQ(t.usage.total, 3560);
  EXPECT_EQ(t.usage, llm::Usage::of(390 + 990 * 3, 200));
}

TEST(RunPefa, DeterministicAcrossRepeats) {
  auto f = pefa::testing::load_replay("agentic");
  TempDir a, b;
  for (const auto& p : f.dataset.problems) {
    auto s1 = run_fixture(f, p.id, a.path());
    auto s2 = run_fixture(f, p.id, b.path());
    EXPECT_EQ(s1.to_json(), s2.to_json()) << p.id;
  }
}

TEST(RunPefa, ToolchainMissReportedNotThrown) {
  auto f = pefa::testing::load_replay("agentic");
  ReplayToolchain empty({}, f.dataset.pass_criterion);
  auto cfg = pefa::testing::fixture_config(Mode::Agentic, {});
  TempDir art;
  cfg.pefa.artifacts_root = art.path();
  llm::ChatSession gen(*f.client, cfg.generator);
  auto s = run_pefa(f.problem("first_pass"), cfg.pefa, empty, gen, nullptr);
  EXPECT_FALSE(s.passed);
  ASSERT_FALSE(s.errors.empty());
  EXPECT_NE(s.errors.front().find("ReplayMiss"), std::string::npos);
}

TEST(LiveVerilator, KmapLoopWithRealTools) {
  const auto v = pefa::testing::live_verilator();
  if (v.empty()) GTEST_SKIP() << "verilator not installed";
  auto f = pefa::testing::load_replay("agentic");
  auto tc = verilator_toolchain_config(v);
  tc.pass_criterion = f.dataset.pass_criterion;
  ExternalToolchain tools(tc);
  auto cfg = pefa::testing::fixture_config(Mode::Agentic, {});
  TempDir art;
  cfg.pefa.artifacts_root = art.path();
  // Scripted rather than replayed: live simulator logs carry wall-clock noise.
  auto script = json::parse(slurp(pefa::testing::fixtures_dir() / "datasets" / "agentic" / "kmap" / "script.json"));
  auto completions = [&](const char* key) {
    std::vector<llm::Completion> out;
    for (const auto& e : script[key]) {
      out.push_back(llm::Completion{{e["text"].get<std::string>()},
                                    llm::Usage::of(e["usage"][0].get<std::int64_t>(), e["usage"][1].get<std::int64_t>()),
                                    false});
    }
    return out;
  };
  llm::ScriptedLlmClient gen_client(completions("generator"));
  llm::ScriptedLlmClient sum_client(completions("summarizer"));
  llm::ChatSession gen(gen_client, cfg.generator);
  llm::ChatSession sum(sum_client, *cfg.summarizer);
  auto s = run_pefa(f.problem("kmap"), cfg.pefa, tools, gen, &sum);
  EXPECT_TRUE(s.passed) << (s.errors.empty() ? s.chat_summary : s.errors.front());
  EXPECT_LE(s.loops_used, 4);
  EXPECT_EQ(s.llm_calls, 3u);
  ASSERT_FALSE(s.feedback_kinds.empty());
  EXPECT_EQ(s.feedback_kinds.front(), FeedbackKind::VcdWindow);
  EXPECT_NE(slurp(s.artifact_dir / "feedback_1.txt").find("first mismatch at time 70000"), std::string::npos);
}
