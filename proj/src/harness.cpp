#include "pefa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "pefa/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pefa {
namespace {

std::optional<std::string> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

vcd::PairingRule parse_pairing(const json& j) {
  vcd::PairingRule p;
  p.ref_suffix = j.value("ref_suffix", p.ref_suffix);
  p.dut_suffix = j.value("dut_suffix", p.dut_suffix);
  if (j.contains("pairs")) {
    for (const auto& pr : j.at("pairs")) p.explicit_pairs.emplace_back(pr.at(0).get<std::string>(), pr.at(1).get<std::string>());
  }
  return p;
}

PassCriterion parse_criterion(const json& j) {
  const auto kind = j.value("kind", std::string("absent"));
  if (kind == "absent") return PassCriterion::absent(j.value("pattern", std::string("mismatch")));
  if (kind == "present") return PassCriterion::present(j.at("pattern").get<std::string>());
  if (kind == "mismatch_count") return PassCriterion::zero_mismatch_count();
  throw Error(ErrorCode::ConfigError, "unknown pass_criterion kind '" + kind + "'");
}

// Fills prompt, testbench and ports; returns a warning when the problem is unusable.
std::optional<std::string> load_problem_files(DesignProblem& p, const fs::path& prompt, const fs::path& tb) {
  auto prompt_text = read_file(prompt);
  if (!prompt_text) return p.id + ": missing prompt file " + prompt.string();
  auto tb_text = read_file(tb);
  if (!tb_text) return p.id + ": missing testbench file " + tb.string();
  if (blank(*prompt_text)) return p.id + ": empty prompt";
  if (blank(*tb_text)) return p.id + ": empty testbench";
  p.prompt = std::move(*prompt_text);
  p.testbench = std::move(*tb_text);
  if (p.dut_ports.empty()) p.dut_ports = infer_ports(p.testbench);
  if (p.dut_ports.empty()) return p.id + ": no DUT ports given or found in the testbench";
  return std::nullopt;
}

Dataset load_manifest(const fs::path& root, std::optional<Subset> subset, std::span<const std::string> exclusions) {
  const fs::path manifest = root / "manifest.json";
  auto text = read_file(manifest);
  if (!text) throw Error(ErrorCode::MissingFile, manifest.string());
  json j;
  try {
    j = json::parse(*text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, manifest.string() + ": " + e.what());
  }

  Dataset ds;
  try {
    ds.name = j.value("name", root.filename().string());
    ds.subset = subset_from_string(j.value("subset", std::string("spec_to_rtl")));
    if (subset) ds.subset = *subset;
    if (j.contains("pass_criterion")) ds.pass_criterion = parse_criterion(j.at("pass_criterion"));
    const std::set<std::string> excl(exclusions.begin(), exclusions.end());
    std::set<std::string> ids;
    for (const auto& e : j.at("problems")) {
      DesignProblem p;
      p.id = e.at("id").get<std::string>();
      p.subset = e.contains("subset") ? subset_from_string(e.at("subset").get<std::string>())
                                      : subset_from_string(j.value("subset", std::string("spec_to_rtl")));
      if (subset && p.subset != *subset) continue;
      if (excl.count(p.id)) {
        ++ds.excluded;
        continue;
      }
      if (!ids.insert(p.id).second) {
        ds.warnings.push_back(p.id + ": duplicate id skipped");
        continue;
      }
      if (e.contains("ports")) p.dut_ports = e.at("ports").get<std::vector<std::string>>();
      if (e.contains("pairing")) p.pairing = parse_pairing(e.at("pairing"));
      if (!e.contains("testbench")) {
        ds.untestable.push_back(p.id);
        continue;
      }
      auto warn = load_problem_files(p, root / e.at("prompt").get<std::string>(),
                                     root / e.at("testbench").get<std::string>());
      if (warn) {
        ds.warnings.push_back(*warn);
        continue;
      }
      ds.problems.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, manifest.string() + ": " + e.what());
  }
  std::sort(ds.problems.begin(), ds.problems.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return ds;
}

std::string fmt_double(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

json opt_json(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

json usage_json(const llm::Usage& u) {
  return json{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}, {"total_tokens", u.total}};
}

fs::path artifacts_root(const BenchmarkConfig& cfg) {
  return cfg.pefa.artifacts_root.empty() ? fs::temp_directory_path() / "pefa-runs" : cfg.pefa.artifacts_root;
}

std::string dir_stem(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') ? c : '_';
  return out.empty() ? "problem" : out;
}

void write_text(const fs::path& p, std::string_view content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << content;
}

void run_agentic(const DesignProblem& problem, const BenchmarkConfig& cfg, llm::LlmClient& client, Toolchain& tools,
                 EvalRecord& rec) {
  llm::ChatSession generator(client, cfg.generator);
  std::optional<llm::ChatSession> summarizer;
  if (cfg.summarizer) summarizer.emplace(client, *cfg.summarizer);
  auto s = run_pefa(problem, cfg.pefa, tools, generator, summarizer ? &*summarizer : nullptr);
  rec.passed = s.passed;
  rec.status = std::string(to_string(s.status));
  rec.loops_used = s.loops_used;
  rec.llm_calls = s.llm_calls;
  rec.usage = s.usage;
  rec.usage_estimated = s.usage_estimated;
  rec.summarizer_calls = s.summarizer_calls;
  rec.summarizer_usage = s.summarizer_usage;
  rec.errors = s.errors;
  for (const auto& m : s.mismatch_counts) {
    if (!m) continue;
    if (!rec.mismatches_initial) rec.mismatches_initial = m;
    rec.mismatches_final = m;
  }
  rec.samples = 1;
  rec.correct = s.passed ? 1 : 0;
}

void run_nonagentic(const DesignProblem& problem, const BenchmarkConfig& cfg, llm::LlmClient& client,
                    Toolchain& tools, EvalRecord& rec) {
  llm::ChatSession generator(client, cfg.generator);
  const auto dir = make_unique_dir(artifacts_root(cfg), dir_stem(problem.id));
  const auto tb = instrument_testbench(problem.testbench, problem.dut_ports);
  const auto pairing = problem.pairing.value_or(cfg.pefa.feedback.pairing);
  const auto msgs = base_prompt(problem, cfg.pefa.templates);
  const int n = std::max(1, cfg.samples);
  rec.samples = n;
  json per_sample = json::array();
  for (int k = 1; k <= n; ++k) {
    llm::Completion c;
    try {
      c = generator.complete(msgs);
    } catch (const Error& e) {
      rec.errors.emplace_back(e.what());
      rec.samples = k - 1;
      break;
    }
    std::optional<std::int64_t> mm;
    bool ok = false;
    try {
      auto rtl = extract_rtl(c.text());
      write_text(dir / ("cand_" + std::to_string(k) + ".v"), rtl.text);
      auto report = run_pipeline(tools, rtl, tb, dir / ("work_" + std::to_string(k)));
      ok = report.stage == Stage::Simulate && report.ok;
      mm = candidate_mismatches(report, pairing);
    } catch (const Error& e) {
      write_text(dir / ("cand_" + std::to_string(k) + ".v"), c.text());
      rec.errors.emplace_back("sample " + std::to_string(k) + ": " + e.what());
    }
    if (ok) ++rec.correct;
    if (mm) {
      if (!rec.mismatches_initial) rec.mismatches_initial = mm;
      if (!rec.mismatches_final || *mm < *rec.mismatches_final) rec.mismatches_final = mm;
    }
    per_sample.push_back({{"sample", k}, {"passed", ok}, {"mismatches", opt_json(mm)}});
  }
  rec.passed = rec.correct > 0;
  rec.status = rec.passed ? "Passed" : "Exhausted";
  rec.llm_calls = generator.calls();
  rec.usage = generator.usage();
  rec.usage_estimated = generator.any_estimated();
  write_text(dir / "summary.json", json{{"samples", per_sample}, {"correct", rec.correct}}.dump(2));
}

void run_mcts(const DesignProblem& problem, const BenchmarkConfig& cfg, llm::LlmClient& client, Toolchain& tools,
              EvalRecord& rec) {
  llm::ChatSession generator(client, cfg.generator);
  const auto dir = make_unique_dir(artifacts_root(cfg), dir_stem(problem.id));
  auto res = mcts::mcts_search(problem, cfg.mcts, generator, tools, dir, cfg.pefa.templates);
  rec.passed = res.status == mcts::SearchStatus::Solved;
  rec.status = std::string(mcts::to_string(res.status));
  rec.rollouts = res.rollouts;
  rec.binary_reward = res.binary_reward;
  rec.llm_calls = res.llm_calls;
  rec.usage = res.usage;
  rec.usage_estimated = generator.any_estimated();
  rec.errors = res.errors;
  rec.mismatches_initial = res.first_mismatches;
  rec.mismatches_final = res.best_mismatches;
  rec.samples = 1;
  rec.correct = rec.passed ? 1 : 0;
  json rewards = res.rewards;
  write_text(dir / "summary.json", json{{"status", rec.status},
                                        {"rollouts", res.rollouts},
                                        {"best_q", res.best_q},
                                        {"rewards", rewards},
                                        {"binary_reward", res.binary_reward},
                                        {"best", res.best ? json(res.best->text) : json(nullptr)}}
                                       .dump(2));
}

}  // namespace

std::vector<std::string> load_exclusions(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, file.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  return ids;
}

std::vector<std::string> infer_ports(std::string_view testbench) {
  static const std::regex conn(R"(\.\s*([A-Za-z_]\w*)\s*\(\s*([A-Za-z_]\w*)\s*\))");
  std::vector<std::string> ports;
  const std::string tb(testbench);
  for (auto it = std::sregex_iterator(tb.begin(), tb.end(), conn); it != std::sregex_iterator(); ++it) {
    auto name = (*it)[2].str();
    if (std::find(ports.begin(), ports.end(), name) == ports.end()) ports.push_back(std::move(name));
  }
  return ports;
}

Dataset load_verilogeval(const fs::path& root, Subset subset, std::span<const std::string> exclusions) {
  return load_manifest(root, subset, exclusions);
}

Dataset load_rtllm(const fs::path& root) {
  if (fs::exists(root / "manifest.json")) return load_manifest(root, std::nullopt, {});
  if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, root.string());
  Dataset ds;
  ds.name = root.filename().string();
  ds.subset = Subset::Rtllm;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    DesignProblem p;
    p.id = d.filename().string();
    p.subset = Subset::Rtllm;
    if (!fs::exists(d / "testbench.v")) {
      ds.untestable.push_back(p.id);
      continue;
    }
    if (auto meta = read_file(d / "meta.json")) {
      try {
        auto j = json::parse(*meta);
        if (j.contains("ports")) p.dut_ports = j.at("ports").get<std::vector<std::string>>();
        if (j.contains("pairing")) p.pairing = parse_pairing(j.at("pairing"));
      } catch (const json::exception& e) {
        ds.warnings.push_back(p.id + ": bad meta.json: " + e.what());
        continue;
      }
    }
    if (auto warn = load_problem_files(p, d / "design_description.txt", d / "testbench.v")) {
      ds.warnings.push_back(*warn);
      continue;
    }
    ds.problems.push_back(std::move(p));
  }
  return ds;
}

double pass_at_n(std::int64_t M, std::int64_t C, std::int64_t N) {
  if (M < 0 || C < 0 || C > M || N < 1 || N > M) {
    throw Error(ErrorCode::DomainError, "pass_at_n(" + std::to_string(M) + ", " + std::to_string(C) + ", " +
                                            std::to_string(N) + ")");
  }
  if (N > M - C) return 1.0;
  double fail = 1.0;
  for (std::int64_t i = 0; i < N; ++i) fail *= static_cast<double>(M - C - i) / static_cast<double>(M - i);
  return 1.0 - fail;
}

std::string EvalRecord::to_json_line() const {
  json j{{"problem_id", problem_id},
         {"subset", to_string(subset)},
         {"mode", mode},
         {"passed", passed},
         {"status", status},
         {"loops_used", loops_used},
         {"llm_calls", llm_calls},
         {"usage", usage_json(usage)},
         {"usage_estimated", usage_estimated},
         {"summarizer_calls", summarizer_calls},
         {"summarizer_usage", usage_json(summarizer_usage)},
         {"mismatches_initial", opt_json(mismatches_initial)},
         {"mismatches_final", opt_json(mismatches_final)},
         {"samples", samples},
         {"correct", correct},
         {"errors", errors},
         {"wall_ms", wall_ms}};
  if (rollouts) {
    j["rollouts"] = *rollouts;
    j["binary_reward"] = binary_reward;
  }
  return j.dump();
}

MismatchReduction mismatch_reduction(std::span<const EvalRecord> records) {
  MismatchReduction r;
  std::int64_t sum = 0;
  for (const auto& rec : records) {
    if (rec.passed) continue;
    ++r.failed;
    if (rec.mismatches_initial && rec.mismatches_final && *rec.mismatches_final < *rec.mismatches_initial) {
      ++r.improved;
      sum += *rec.mismatches_initial - *rec.mismatches_final;
    }
  }
  r.avg_reduction = r.improved == 0 ? 0.0 : static_cast<double>(sum) / static_cast<double>(r.improved);
  return r;
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Agentic: return "agentic";
    case Mode::NonAgentic: return "nonagentic";
    case Mode::Mcts: return "mcts";
  }
  return "?";
}

Mode mode_from_string(std::string_view s) {
  if (s == "agentic") return Mode::Agentic;
  if (s == "nonagentic" || s == "non-agentic") return Mode::NonAgentic;
  if (s == "mcts") return Mode::Mcts;
  throw Error(ErrorCode::ConfigError, "unknown mode '" + std::string(s) + "'");
}

MetricsReport make_report(const Dataset& dataset, Mode mode, std::span<const EvalRecord> records) {
  MetricsReport r;
  r.dataset = dataset.name;
  r.subset = std::string(to_string(dataset.subset));
  r.mode = std::string(to_string(mode));
  r.problems = records.size();
  r.excluded = dataset.excluded;
  r.skipped = dataset.warnings.size() + dataset.untestable.size();
  std::int64_t min_samples = -1;
  for (const auto& rec : records) {
    if (rec.passed) ++r.passed;
    if (!rec.errors.empty()) ++r.errored;
    r.usage = r.usage + rec.usage;
    r.summarizer_usage = r.summarizer_usage + rec.summarizer_usage;
    r.llm_calls += rec.llm_calls;
    r.usage_estimated = r.usage_estimated || rec.usage_estimated;
    if (rec.rollouts) r.rollouts += static_cast<std::size_t>(*rec.rollouts);
    r.binary_reward = r.binary_reward || rec.binary_reward;
    if (min_samples < 0 || rec.samples < min_samples) min_samples = rec.samples;
  }
  if (r.problems > 0) {
    r.pass_rate = 100.0 * static_cast<double>(r.passed) / static_cast<double>(r.problems);
    r.avg_tokens_per_problem = static_cast<double>(r.usage.total) / static_cast<double>(r.problems);
  }
  if (r.llm_calls > 0) r.avg_tokens_per_call = static_cast<double>(r.usage.total) / static_cast<double>(r.llm_calls);
  for (std::int64_t n = 1; n <= min_samples; ++n) {
    double sum = 0.0;
    for (const auto& rec : records) sum += pass_at_n(rec.samples, rec.correct, n);
    r.pass_at.emplace_back(static_cast<int>(n), sum / static_cast<double>(records.size()));
  }
  r.reduction = mismatch_reduction(records);
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "dataset " << dataset << " / " << subset << " / " << mode << '\n'
     << "problems " << problems << " (excluded " << excluded << ", skipped " << skipped << ", with errors " << errored
     << ")\n"
     << "pass rate " << fmt_double(pass_rate, 2) << "% (" << passed << "/" << problems << ")\n"
     << "generator calls " << llm_calls << ", tokens " << usage.total << " (prompt " << usage.prompt_tokens
     << ", completion " << usage.completion_tokens << ")" << (usage_estimated ? " [partly estimated]" : "") << '\n'
     << "avg tokens per problem " << fmt_double(avg_tokens_per_problem, 1) << ", per call "
     << fmt_double(avg_tokens_per_call, 1) << '\n';
  if (summarizer_usage.total > 0) os << "summarizer tokens " << summarizer_usage.total << '\n';
  for (const auto& [n, v] : pass_at) os << "pass@" << n << " " << fmt_double(100.0 * v, 2) << "%\n";
  os << "mismatch reduction: improved " << reduction.improved << "/" << reduction.failed << ", avg reduction "
     << fmt_double(reduction.avg_reduction, 2) << '\n';
  if (mode == "mcts") {
    os << "rollouts " << rollouts << ", priors uniform";
    if (binary_reward) os << ", binary reward (no per-sample counts)";
    os << '\n';
  }
  return os.str();
}

EvalRecord evaluate_problem(const DesignProblem& problem, const BenchmarkConfig& cfg, llm::LlmClient& client,
                            Toolchain& tools) {
  EvalRecord rec;
  rec.problem_id = problem.id;
  rec.subset = problem.subset;
  rec.mode = std::string(to_string(cfg.mode));
  const auto t0 = std::chrono::steady_clock::now();
  try {
    switch (cfg.mode) {
      case Mode::Agentic: run_agentic(problem, cfg, client, tools, rec); break;
      case Mode::NonAgentic: run_nonagentic(problem, cfg, client, tools, rec); break;
      case Mode::Mcts: run_mcts(problem, cfg, client, tools, rec); break;
    }
  } catch (const std::exception& e) {
    rec.errors.emplace_back(e.what());
    rec.passed = false;
    if (rec.status.empty()) rec.status = "Error";
  }
  if (rec.passed) rec.mismatches_final = 0;
  rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

BenchmarkResult run_benchmark(const Dataset& dataset, const BenchmarkConfig& cfg, llm::LlmClient& client,
                              Toolchain& tools) {
  BenchmarkResult out;
  out.records.resize(dataset.problems.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < dataset.problems.size(); i = next++) {
      out.records[i] = evaluate_problem(dataset.problems[i], cfg, client, tools);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(cfg.workers, dataset.problems.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::sort(out.records.begin(), out.records.end(),
            [](const auto& a, const auto& b) { return a.problem_id < b.problem_id; });
  out.report = make_report(dataset, cfg.mode, out.records);
  return out;
}

void emit_report(const BenchmarkResult& result, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, out_dir.string() + ": " + ec.message());

  std::ofstream jsonl(out_dir / "records.jsonl", std::ios::trunc);
  std::ofstream csv(out_dir / "report.csv", std::ios::trunc);
  std::ofstream txt(out_dir / "report.txt", std::ios::trunc);
  if (!jsonl || !csv || !txt) throw Error(ErrorCode::IoError, "cannot write reports under " + out_dir.string());

  auto opt = [](const std::optional<std::int64_t>& v) { return v ? std::to_string(*v) : std::string(); };
  csv << "problem_id,subset,mode,passed,status,loops_used,llm_calls,prompt_tokens,completion_tokens,total_tokens,"
         "mismatches_initial,mismatches_final,samples,correct,rollouts\n";
  for (const auto& r : result.records) {
    jsonl << r.to_json_line() << '\n';
    csv << r.problem_id << ',' << to_string(r.subset) << ',' << r.mode << ',' << (r.passed ? 1 : 0) << ',' << r.status
        << ',' << r.loops_used << ',' << r.llm_calls << ',' << r.usage.prompt_tokens << ','
        << r.usage.completion_tokens << ',' << r.usage.total << ',' << opt(r.mismatches_initial) << ','
        << opt(r.mismatches_final) << ',' << r.samples << ',' << r.correct << ','
        << (r.rollouts ? std::to_string(*r.rollouts) : "") << '\n';
  }

  txt << result.report.to_text() << '\n';
  char line[256];
  std::snprintf(line, sizeof line, "%-32s %-6s %-10s %5s %5s %8s %8s %8s\n", "problem", "pass", "status", "loops",
                "calls", "tokens", "mm_init", "mm_final");
  txt << line;
  for (const auto& r : result.records) {
    std::snprintf(line, sizeof line, "%-32s %-6s %-10s %5d %5zu %8lld %8s %8s\n", r.problem_id.c_str(),
                  r.passed ? "yes" : "no", r.status.c_str(), r.loops_used, r.llm_calls,
                  static_cast<long long>(r.usage.total), opt(r.mismatches_initial).c_str(),
                  opt(r.mismatches_final).c_str());
    txt << line;
  }
  if (!jsonl || !csv || !txt) throw Error(ErrorCode::IoError, "write failed under " + out_dir.string());
}

}  // namespace pefa
