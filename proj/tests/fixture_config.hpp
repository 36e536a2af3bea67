#pragma once

#include <filesystem>
#include <memory>

#include "pefa/harness.hpp"

namespace pefa::testing {

inline constexpr const char* kGeneratorModel = "fixture-generator";
inline constexpr const char* kSummarizerModel = "fixture-summarizer";

/// The run configuration the replay fixtures were recorded under.
inline BenchmarkConfig fixture_config(Mode mode, const std::filesystem::path& artifacts) {
  BenchmarkConfig cfg;
  cfg.mode = mode;
  cfg.generator.model_id = kGeneratorModel;
  cfg.generator.temperature = 0.8;
  cfg.generator.top_k = 30;
  if (mode == Mode::Agentic) {
    auto s = cfg.generator;
    s.model_id = kSummarizerModel;
    cfg.summarizer = s;
  }
  cfg.pefa.max_loops = 4;
  cfg.pefa.artifacts_root = artifacts;
  cfg.samples = 4;
  cfg.mcts.c_puct = 1.0;
  cfg.mcts.rollout_budget = 4;
  cfg.mcts.expansion_width = 4;
  return cfg;
}

inline std::filesystem::path fixtures_dir() { return PEFA_FIXTURES_DIR; }

/// A replay dataset with its recorded LLM transcript and toolchain outcomes.
struct ReplayFixture {
  Dataset dataset;
  std::shared_ptr<llm::TranscriptStore> store;
  std::unique_ptr<llm::ReplayLlmClient> client;
  std::unique_ptr<ReplayToolchain> tools;

  [[nodiscard]] const DesignProblem& problem(const std::string& id) const {
    for (const auto& p : dataset.problems) {
      if (p.id == id) return p;
    }
    throw std::out_of_range(id);
  }
};

inline ReplayFixture load_replay(const std::string& name) {
  const auto dir = fixtures_dir() / "datasets" / name;
  ReplayFixture f;
  f.dataset = load_verilogeval(dir, Subset::SpecToRtl);
  f.store = std::make_shared<llm::TranscriptStore>(llm::TranscriptStore::load(dir / "transcript.jsonl"));
  f.client = std::make_unique<llm::ReplayLlmClient>(f.store);
  f.tools = std::make_unique<ReplayToolchain>(ReplayToolchain::load(dir / "toolchain.json", f.dataset.pass_criterion));
  return f;
}

inline const char* const kReplayDatasets[] = {"agentic", "nonagentic", "mcts"};

}  // namespace pefa::testing
