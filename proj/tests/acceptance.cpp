// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pefa/harness.hpp"
#include "pefa/mcts.hpp"
#include "pefa/vcd.hpp"
#include "test_util.hpp"

using namespace pefa;
using nlohmann::json;
using pefa::testing::slurp;
using pefa::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int failures = 0;

struct Check {
  bool ok = true;
  std::string detail;
  void expect(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

void report(int n, const std::string& title, const std::function<Check()>& body, double limit_s) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  try {
    c = body();
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_s) {
    c.ok = false;
    c.detail += (c.detail.empty() ? "" : "; ") + std::string("took ") + std::to_string(secs) + " s";
  }
  if (!c.ok) ++failures;
  std::printf("%s criterion %d: %s (%.2f s)%s%s\n", c.ok ? "PASS" : "FAIL", n, title.c_str(), secs,
              c.detail.empty() ? "" : " - ", c.detail.c_str());
  std::fflush(stdout);
}

/// Forwards to another client, keeping every request body and usage.
class Tap : public llm::LlmClient {
 public:
  struct Call {
    std::string model;
    std::string body;
    std::int64_t total_tokens = 0;
  };
  explicit Tap(llm::LlmClient& inner) : inner_(inner) {}

  llm::Completion complete(std::span<const llm::ChatMessage> messages, const llm::GenerationConfig& cfg, int n,
                           std::size_t occurrence) override {
    auto body = llm::build_request_body(messages, cfg, n);
    auto c = inner_.complete(messages, cfg, n, occurrence);
    std::lock_guard lock(mu_);
    calls.push_back({cfg.model_id, std::move(body), c.usage.total});
    return c;
  }

  std::vector<Call> calls;

 private:
  llm::LlmClient& inner_;
  std::mutex mu_;
};

Mode mode_of(const std::string& dataset) {
  if (dataset == "agentic") return Mode::Agentic;
  if (dataset == "mcts") return Mode::Mcts;
  return Mode::NonAgentic;
}

std::vector<std::vector<std::string>> csv_cells(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

int main() {
  report(1, "feedback state machine truth table", [] {
    Check c;
    // (compile_ok, loop) -> expected kind
    const struct {
      bool compile_ok;
      int loop;
      FeedbackKind kind;
    } table[] = {
        {false, 1, FeedbackKind::SyntaxSummary}, {false, 2, FeedbackKind::SyntaxSummary},
        {false, 3, FeedbackKind::SyntaxSummary}, {false, 4, FeedbackKind::SyntaxSummary},
        {true, 1, FeedbackKind::VcdWindow},      {true, 2, FeedbackKind::LlmLogSummary},
        {true, 3, FeedbackKind::LlmLogSummary},  {true, 4, FeedbackKind::LlmLogSummary},
    };
    for (const auto& row : table) {
      c.expect(decide_feedback(row.compile_ok, row.loop) == row.kind,
               "compile_ok=" + std::to_string(row.compile_ok) + " loop=" + std::to_string(row.loop));
    }
    return c;
  }, 1.0);

  report(2, "pass@N against Monte Carlo and exhaustive enumeration", [] {
    Check c;
    std::mt19937_64 rng(20241016);
    constexpr int kTrials = 100000;
    double worst = 0.0;
    std::vector<int> items;
    for (int M = 1; M <= 20; ++M) {
      for (int C = 0; C <= M; ++C) {
        // One shuffled draw order per trial; position of the first correct
        // item decides pass for every N at once.
        std::vector<long> first_hit(M + 1, 0);
        items.resize(M);
        for (int t = 0; t < kTrials; ++t) {
          for (int i = 0; i < M; ++i) items[i] = i;
          int pos = M;
          for (int i = 0; i < M; ++i) {
            std::uniform_int_distribution<int> pick(i, M - 1);
            std::swap(items[i], items[pick(rng)]);
            if (items[i] < C) {
              pos = i;
              break;
            }
          }
          ++first_hit[pos];
        }
        long cum = 0;
        for (int N = 1; N <= M; ++N) {
          cum += first_hit[N - 1];
          const double mc = static_cast<double>(cum) / kTrials;
          const double f = pass_at_n(M, C, N);
          worst = std::max(worst, std::abs(mc - f));
          c.expect(std::abs(mc - f) <= 0.01, "M=" + std::to_string(M) + " C=" + std::to_string(C) +
                                                 " N=" + std::to_string(N));
        }
      }
    }
    long hit = 0, total = 0;
    for (int a = 0; a < 10; ++a) {
      for (int b = a + 1; b < 10; ++b) {
        ++total;
        if (a < 3 || b < 3) ++hit;
      }
    }
    c.expect(total == 45 && hit == 24, "enumeration count");
    c.expect(std::abs(pass_at_n(10, 3, 2) - static_cast<double>(hit) / total) <= 1e-9, "(10,3,2) exact");
    c.expect(std::abs(pass_at_n(10, 3, 2) - 0.5333333333333333) <= 1e-9, "(10,3,2) = 0.5333...");
    if (c.ok) c.detail = "max |MC - formula| = " + std::to_string(worst);
    return c;
  }, 30.0);

  report(3, "token arithmetic 440 + 3 x 1040 = 3560", [] {
    Check c;
    auto f = pefa::testing::load_replay("agentic");
    Tap tap(*f.client);
    TempDir art;
    auto cfg = pefa::testing::fixture_config(Mode::Agentic, art.path());
    auto rec = evaluate_problem(f.problem("tokens"), cfg, tap, *f.tools);
    std::vector<std::int64_t> per_call;
    for (const auto& call : tap.calls) {
      if (call.model == pefa::testing::kGeneratorModel) per_call.push_back(call.total_tokens);
    }
    c.expect(per_call == std::vector<std::int64_t>{440, 1040, 1040, 1040}, "per-call usages");
    c.expect(rec.llm_calls == 4, "4 generator calls");
    c.expect(rec.usage.total == 3560, "total " + std::to_string(rec.usage.total));
    return c;
  }, 1.0);

  report(4, "call budget: <= 5 generator calls and <= 4 feedback messages", [] {
    Check c;
    auto f = pefa::testing::load_replay("agentic");
    Tap tap(*f.client);
    TempDir art;
    auto cfg = pefa::testing::fixture_config(Mode::Agentic, art.path());
    std::size_t runs = 0;
    for (const auto& p : f.dataset.problems) {
      llm::ChatSession gen(tap, cfg.generator);
      llm::ChatSession sum(tap, *cfg.summarizer);
      PefaConfig pc = cfg.pefa;
      if (p.pairing) pc.feedback.pairing = *p.pairing;
      auto s = run_pefa(p, pc, *f.tools, gen, &sum);
      std::size_t feedback_files = 0;
      for (const auto& e : fs::directory_iterator(s.artifact_dir)) {
        if (e.path().filename().string().starts_with("feedback_")) ++feedback_files;
      }
      c.expect(gen.calls() <= 5, p.id + ": " + std::to_string(gen.calls()) + " calls");
      c.expect(s.feedback_kinds.size() <= 4 && feedback_files <= 4 && s.loops_used <= 4, p.id + ": feedback count");
      c.expect(s.errors.empty(), p.id + ": run errors");
      ++runs;
    }
    c.expect(runs == 6, "expected 6 fixture runs");
    return c;
  }, 5.0);

  report(5, "VCD round trip, reference table, injected divergence", [] {
    Check c;
    const char* golden[] = {"verilator_kmap", "verilator_half_adder", "icarus_counter", "scopes_xz", "aliased",
                            "divergence"};
    std::size_t cells = 0;
    for (const char* stem : golden) {
      const auto dir = pefa::testing::fixtures_dir() / "vcd";
      auto doc = vcd::parse_vcd(slurp(dir / (std::string(stem) + ".vcd")));
      c.expect(vcd::parse_vcd(vcd::serialize_vcd(doc)) == doc, std::string(stem) + ": round trip");
      auto table = vcd::to_signal_table(doc);
      auto ours = csv_cells(vcd::render_csv(table.columns, table.rows));
      auto ref = csv_cells(slurp(dir / (std::string(stem) + ".csv")));
      c.expect(ours.size() == ref.size(), std::string(stem) + ": row count");
      for (std::size_t r = 0; r < std::min(ours.size(), ref.size()); ++r) {
        c.expect(ours[r] == ref[r], std::string(stem) + ": row " + std::to_string(r));
        cells += ref[r].size();
      }
    }
    auto div = vcd::to_signal_table(vcd::parse_vcd(slurp(pefa::testing::fixtures_dir() / "vcd" / "divergence.vcd")));
    auto mm = vcd::find_mismatches(div, vcd::PairingRule{});
    c.expect(mm.first_mismatch_time == vcd::Time{35}, "divergence not at t=35");
    if (c.ok) c.detail = std::to_string(cells) + " cells compared";
    return c;
  }, 5.0);

  report(6, "waveform-feedback replay converges deterministically", [] {
    Check c;
    std::optional<std::string> first;
    for (int rep = 0; rep < 3; ++rep) {
      for (std::size_t workers : {std::size_t{1}, std::size_t{4}}) {
        auto f = pefa::testing::load_replay("agentic");
        TempDir art;
        auto cfg = pefa::testing::fixture_config(Mode::Agentic, art.path());
        cfg.workers = workers;
        auto res = run_benchmark(f.dataset, cfg, *f.client, *f.tools);
        auto it = std::find_if(res.records.begin(), res.records.end(), [](auto& r) { return r.problem_id == "kmap"; });
        c.expect(it != res.records.end(), "kmap missing");
        if (it == res.records.end()) return c;
        c.expect(it->passed && it->status == "Passed", "kmap did not pass");
        c.expect(it->loops_used <= 4, "loops " + std::to_string(it->loops_used));
        auto j = json::parse(it->to_json_line());
        j.erase("wall_ms");
        if (!first) first = j.dump();
        c.expect(*first == j.dump(), "record differs across runs / worker counts");
        // the first feedback is the waveform window around the first mismatch
        fs::path run_dir;
        for (const auto& e : fs::directory_iterator(art.path())) {
          if (e.path().filename().string().starts_with("kmap")) run_dir = e.path();
        }
        c.expect(slurp(run_dir / "feedback_1.txt").find("first mismatch at time 70000") != std::string::npos,
                 "feedback_1 is not the VCD window");
      }
    }
    return c;
  }, 10.0);

  report(7, "reward and PUCT oracles, MCTS toy search", [] {
    Check c;
    for (int t = 1; t <= 10; ++t) {
      for (int p = 0; p <= t; ++p) {
        const double expected = p == 0 ? -1.0 : static_cast<double>(p) / t;
        c.expect(mcts::reward(p, t) == expected, "reward(" + std::to_string(p) + "," + std::to_string(t) + ")");
      }
    }
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> nkids(1, 8), visits(0, 15);
    std::uniform_real_distribution<double> prior(0.01, 1.0), cdist(0.1, 3.0), avg(-1.0, 1.0);
    std::bernoulli_distribution fresh(0.2);
    for (int trial = 0; trial < 1000; ++trial) {
      mcts::Node parent;
      for (int i = nkids(rng); i > 0; --i) {
        auto ch = std::make_unique<mcts::Node>();
        ch->prior = prior(rng);
        ch->visits = fresh(rng) ? 0 : visits(rng);
        ch->total_reward = ch->visits * avg(rng);
        parent.children.push_back(std::move(ch));
      }
      const double cp = cdist(rng);
      int sum = 0;
      for (const auto& ch : parent.children) sum += ch->visits;
      const double root_n = std::sqrt(static_cast<double>(std::max(sum, 1)));
      std::size_t best = 0;
      double best_s = -INFINITY;
      for (std::size_t i = 0; i < parent.children.size(); ++i) {
        const auto& ch = *parent.children[i];
        const double q = ch.visits > 0 ? ch.total_reward / ch.visits : 0.0;
        const double s = q + cp * ch.prior * root_n / (1.0 + ch.visits);
        if (s > best_s) {
          best_s = s;
          best = i;
        }
      }
      c.expect(mcts::puct_select(parent, cp) == best, "puct trial " + std::to_string(trial));
    }

    auto f = pefa::testing::load_replay("mcts");
    auto cfg = pefa::testing::fixture_config(Mode::Mcts, {});
    llm::ChatSession gen(*f.client, cfg.generator);
    TempDir work;
    auto res = mcts::mcts_search(f.problem("and4"), cfg.mcts, gen, *f.tools, work.path());
    c.expect(res.status == mcts::SearchStatus::Solved, "toy search not solved");
    c.expect(res.rollouts <= 4, "rollouts " + std::to_string(res.rollouts));
    double sum = 0;
    for (double r : res.rewards) sum += r;
    c.expect(res.root->visits == res.rollouts && res.root->total_reward == sum, "root W/N");
    double child_w = 0;
    int child_n = 0;
    for (const auto& ch : res.root->children) {
      child_w += ch->total_reward;
      child_n += ch->visits;
    }
    c.expect(child_n == res.rollouts && child_w == sum, "children W/N");
    c.expect(res.rewards == std::vector<double>{-1, -1, -1, 1}, "reward sequence");
    return c;
  }, 30.0);

  report(8, "mismatch-reduction statistic", [] {
    Check c;
    auto rec = [](bool passed, std::int64_t init, std::int64_t fin) {
      EvalRecord r;
      r.passed = passed;
      r.mismatches_initial = init;
      r.mismatches_final = fin;
      return r;
    };
    std::vector<EvalRecord> two{rec(false, 60, 50), rec(false, 80, 30)};
    c.expect(mismatch_reduction(two) == MismatchReduction{2, 2, 30.0}, "10 and 50 -> avg 30");
    std::vector<EvalRecord> passed{rec(true, 5, 0), rec(true, 9, 0)};
    c.expect(mismatch_reduction(passed) == MismatchReduction{0, 0, 0.0}, "all passed");
    std::vector<EvalRecord> none{rec(false, 5, 5), rec(false, 3, 7)};
    c.expect(mismatch_reduction(none) == MismatchReduction{0, 2, 0.0}, "improved=0 -> avg 0");
    std::vector<EvalRecord> anchor;
    const std::int64_t cuts[] = {10, 20, 25, 30, 35, 40, 40, 40};
    for (int i = 0; i < 58; ++i) anchor.push_back(rec(false, 100, i < 8 ? 100 - cuts[i] : 100));
    Dataset ds;
    auto rep = make_report(ds, Mode::Agentic, anchor);
    c.expect(rep.reduction == MismatchReduction{8, 58, 30.0}, "8/58, 30");
    c.expect(rep.to_text().find("improved 8/58, avg reduction 30.00") != std::string::npos, "report format");
    return c;
  }, 1.0);

  report(9, "no request body quotes the testbench", [] {
    Check c;
    constexpr std::size_t kWindow = 48;
    std::size_t bodies = 0;
    for (const char* name : pefa::testing::kReplayDatasets) {
      auto f = pefa::testing::load_replay(name);
      Tap tap(*f.client);
      TempDir art;
      auto cfg = pefa::testing::fixture_config(mode_of(name), art.path());
      auto res = run_benchmark(f.dataset, cfg, tap, *f.tools);
      for (const auto& r : res.records) c.expect(r.errors.empty(), std::string(name) + "/" + r.problem_id + " errored");
      std::set<std::string> windows;
      for (const auto& p : f.dataset.problems) {
        for (const auto& tb : {p.testbench, instrument_testbench(p.testbench, p.dut_ports).text}) {
          for (std::size_t i = 0; i + kWindow <= tb.size(); ++i) windows.insert(tb.substr(i, kWindow));
        }
      }
      // message contents with JSON escapes undone
      auto decode = [](const std::string& body) {
        std::string out;
        const auto j = json::parse(body);
        for (const auto& m : j.at("messages")) out += m["content"].get<std::string>() + "\n";
        return out;
      };
      auto quotes = [&](const std::string& text) {
        for (std::size_t i = 0; i + kWindow <= text.size(); ++i) {
          if (windows.count(text.substr(i, kWindow))) return true;
        }
        return false;
      };
      // the detector itself must flag a planted leak
      const auto& tb0 = f.dataset.problems.front().testbench;
      const std::vector<llm::ChatMessage> planted{{llm::Role::User, "see:\n" + tb0.substr(tb0.size() / 2, 60)}};
      c.expect(quotes(decode(llm::build_request_body(planted, cfg.generator))),
               std::string("leak detector missed a planted excerpt in ") + name);
      for (const auto& call : tap.calls) {
        ++bodies;
        c.expect(!quotes(call.body) && !quotes(decode(call.body)), std::string(name) + ": a " + call.model + " request quotes the testbench");
      }
    }
    c.expect(bodies > 0, "no requests observed");
    if (c.ok) c.detail = std::to_string(bodies) + " request bodies checked";
    return c;
  }, 30.0);

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures == 0 ? 0 : 1;
}
