// pefa: run the feedback-loop generator, the sampling baseline or the MCTS
// baseline over a dataset, or convert a VCD to CSV.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "pefa/error.hpp"
#include "pefa/harness.hpp"
#include "pefa/vcd.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string dataset;
  std::string subset = "spec_to_rtl";
  std::string mode = "agentic";
  int max_loops = 4;
  std::string model = "llama3-70b";
  std::string base_url = "http://localhost:8000/v1";
  std::string provider = "openai";
  double temperature = 0.8;
  int top_k = 30;
  bool no_top_k = false;
  int max_tokens = 1024;
  double temperature_cap = 0;
  int samples_per_call = 1;
  std::size_t workers = 1;
  std::string replay;
  std::string record;
  std::string out = "pefa-out";
  std::string exclusions;
  std::string summarizer_model;
  int samples = 4;
  std::string templates;
  std::string toolchain_replay;
  std::string simulator = "icarus";
  std::string linter = "verilator";
  std::string compiler;
  std::string runtime = "vvp";
  int budget = 10;
  double c_puct = 1.0;
  int width = 4;
  std::string vcd_in;
  std::string csv_out;
};

void add_shared(CLI::App& app, Options& o) {
  app.add_option("--dataset", o.dataset, "Dataset root (holds manifest.json or per-design dirs)");
  app.add_option("--subset", o.subset, "code_complete | spec_to_rtl | rtllm")->capture_default_str();
  app.add_option("--max-loops", o.max_loops, "Feedback loops per problem")->capture_default_str();
  app.add_option("--model", o.model, "Generator model id")->capture_default_str();
  app.add_option("--base-url", o.base_url, "OpenAI-compatible endpoint")->capture_default_str();
  app.add_option("--provider", o.provider, "Provider tag; the key is read from PEFA_API_KEY_<PROVIDER>")
      ->capture_default_str();
  app.add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
  app.add_option("--top-k", o.top_k, "Top-k sampling")->capture_default_str();
  app.add_flag("--no-top-k", o.no_top_k, "Do not send top_k (for endpoints that reject it)");
  app.add_option("--max-tokens", o.max_tokens, "Completion token limit")->capture_default_str();
  app.add_option("--temperature-cap", o.temperature_cap, "Provider temperature ceiling; 0 for none");
  app.add_option("--samples-per-call", o.samples_per_call, "Completions the provider returns per request (n)")
      ->capture_default_str();
  app.add_option("--workers", o.workers, "Concurrent problems")->capture_default_str();
  app.add_option("--replay", o.replay, "Serve completions from this transcript");
  app.add_option("--record", o.record, "Append live completions to this transcript");
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--exclusions", o.exclusions, "File of problem ids to skip");
  app.add_option("--summarizer-model", o.summarizer_model, "Model for log and run summaries; empty disables");
  app.add_option("--samples", o.samples, "Generations per problem in nonagentic mode")->capture_default_str();
  app.add_option("--templates", o.templates, "Prompt template JSON");
  app.add_option("--toolchain-replay", o.toolchain_replay, "Toolchain fixture instead of the real tools");
  app.add_option("--simulator", o.simulator, "icarus | verilator")->capture_default_str();
  app.add_option("--linter", o.linter, "Linter executable")->capture_default_str();
  app.add_option("--compiler", o.compiler, "Compiler executable (default: iverilog or verilator)");
  app.add_option("--runtime", o.runtime, "Simulation runtime for icarus")->capture_default_str();
  app.add_option("--mode", o.mode, "agentic | nonagentic")->capture_default_str();
  app.add_option("--budget", o.budget, "MCTS rollout budget")->capture_default_str();
  app.add_option("--c-puct", o.c_puct, "MCTS exploration constant")->capture_default_str();
  app.add_option("--width", o.width, "MCTS children per expansion")->capture_default_str();
}

pefa::Dataset load_dataset(const Options& o) {
  if (o.dataset.empty()) throw pefa::Error(pefa::ErrorCode::ConfigError, "--dataset is required");
  const auto subset = pefa::subset_from_string(o.subset);
  if (subset == pefa::Subset::Rtllm) return pefa::load_rtllm(o.dataset);
  std::vector<std::string> excl;
  if (!o.exclusions.empty()) excl = pefa::load_exclusions(o.exclusions);
  return pefa::load_verilogeval(o.dataset, subset, excl);
}

std::unique_ptr<pefa::Toolchain> make_toolchain(const Options& o, const pefa::PassCriterion& criterion) {
  if (!o.toolchain_replay.empty()) {
    return std::make_unique<pefa::ReplayToolchain>(pefa::ReplayToolchain::load(o.toolchain_replay, criterion));
  }
  pefa::ToolchainConfig tc;
  if (o.simulator == "verilator") {
    tc = pefa::verilator_toolchain_config(o.compiler.empty() ? "verilator" : o.compiler);
  } else if (o.simulator == "icarus") {
    tc.compiler = o.compiler.empty() ? "iverilog" : o.compiler;
    tc.runtime = o.runtime;
  } else {
    throw pefa::Error(pefa::ErrorCode::ConfigError, "unknown simulator '" + o.simulator + "'");
  }
  tc.pass_criterion = criterion;
  tc.linter = o.linter;
  return std::make_unique<pefa::ExternalToolchain>(tc);
}

int run_sweep(const Options& o, pefa::Mode mode) {
  auto dataset = load_dataset(o);
  for (const auto& w : dataset.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& id : dataset.untestable) std::cerr << "untestable (no testbench): " << id << '\n';

  pefa::BenchmarkConfig cfg;
  cfg.mode = mode;
  cfg.workers = o.workers;
  cfg.samples = o.samples;
  cfg.pefa.max_loops = o.max_loops;
  cfg.pefa.artifacts_root = fs::path(o.out) / "runs";
  if (!o.templates.empty()) cfg.pefa.templates = pefa::PromptTemplates::load(o.templates);
  cfg.generator.model_id = o.model;
  cfg.generator.base_url = o.base_url;
  cfg.generator.provider = o.provider;
  cfg.generator.temperature = o.temperature;
  cfg.generator.top_k = o.top_k;
  cfg.generator.send_top_k = !o.no_top_k;
  cfg.generator.max_tokens = o.max_tokens;
  if (o.temperature_cap > 0) cfg.generator.temperature_cap = o.temperature_cap;
  cfg.generator.max_samples_per_call = o.samples_per_call;
  if (!o.summarizer_model.empty()) {
    auto s = cfg.generator;
    s.model_id = o.summarizer_model;
    cfg.summarizer = s;
  }
  cfg.mcts.rollout_budget = o.budget;
  cfg.mcts.c_puct = o.c_puct;
  cfg.mcts.expansion_width = o.width;
  if (mode == pefa::Mode::Mcts) cfg.mcts.validate();

  auto tools = make_toolchain(o, dataset.pass_criterion);

  std::unique_ptr<pefa::llm::LlmClient> live;
  std::unique_ptr<pefa::llm::LlmClient> client;
  if (!o.replay.empty() && !o.record.empty()) {
    throw pefa::Error(pefa::ErrorCode::ConfigError, "--replay and --record are exclusive");
  }
  if (!o.replay.empty()) {
    auto store = std::make_shared<pefa::llm::TranscriptStore>(pefa::llm::TranscriptStore::load(o.replay));
    client = std::make_unique<pefa::llm::ReplayLlmClient>(store);
  } else if (!o.record.empty()) {
    auto store = std::make_shared<pefa::llm::TranscriptStore>();
    store->attach_file(o.record);
    live = std::make_unique<pefa::llm::HttpLlmClient>();
    client = std::make_unique<pefa::llm::RecordingLlmClient>(*live, store);
  } else {
    client = std::make_unique<pefa::llm::HttpLlmClient>();
  }

  auto result = pefa::run_benchmark(dataset, cfg, *client, *tools);
  pefa::emit_report(result, o.out);
  std::cout << result.report.to_text();
  std::cout << "reports written to " << o.out << '\n';
  return 0;
}

int vcd_to_csv(const Options& o) {
  std::ifstream in(o.vcd_in, std::ios::binary);
  if (!in) throw pefa::Error(pefa::ErrorCode::MissingFile, o.vcd_in);
  std::stringstream ss;
  ss << in.rdbuf();
  auto table = pefa::vcd::to_signal_table(pefa::vcd::parse_vcd(ss.str()));
  auto csv = pefa::vcd::render_csv(table.columns, table.rows);
  if (o.csv_out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream(o.csv_out, std::ios::binary) << csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic RTL generation with progressive error feedback"};
  app.set_config("--config", "", "TOML/INI file with option values; flags override it");
  app.require_subcommand(1);
  Options o;
  add_shared(app, o);

  auto* run = app.add_subcommand("run", "Run a dataset sweep (agentic or nonagentic)");
  run->fallthrough();
  auto* mcts = app.add_subcommand("mcts", "Run the MCTS baseline over a dataset");
  mcts->fallthrough();
  auto* v2c = app.add_subcommand("vcd2csv", "Convert a VCD file to a forward-filled CSV table");
  v2c->add_option("vcd", o.vcd_in, "Input VCD")->required();
  v2c->add_option("-o,--output", o.csv_out, "Output CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_sweep(o, pefa::mode_from_string(o.mode));
    if (*mcts) return run_sweep(o, pefa::Mode::Mcts);
    if (*v2c) return vcd_to_csv(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
