#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pefa/llm.hpp"
#include "pefa/orchestrator.hpp"
#include "pefa/toolchain.hpp"

namespace pefa::mcts {

/// A search-tree node. `state` is candidate program text, possibly partial.
struct Node {
  std::string state;
  double prior = 1.0;
  int visits = 0;
  double total_reward = 0.0;
  bool terminal = false;  // state is a complete module
  Node* parent = nullptr;
  std::vector<std::unique_ptr<Node>> children;

  /// Mean reward; 0 for an unvisited node.
  [[nodiscard]] double q() const { return visits > 0 ? total_reward / visits : 0.0; }
};

struct MctsConfig {
  double c_puct = 1.0;
  int rollout_budget = 10;
  int expansion_width = 4;

  /// Throws ConfigError unless every field is positive.
  void validate() const;
};

/// n_pass / n_total when any test passes, otherwise -1. Throws DomainError
/// unless 0 <= n_pass <= n_total and n_total >= 1.
double reward(std::int64_t n_pass, std::int64_t n_total);

/// Q + c * P * sqrt(sum_visits) / (1 + N).
double puct_score(const Node& child, double c, int sum_visits);

/// Highest-scoring child; the lowest index wins ties. The visit sum is taken
/// as at least 1, so unvisited siblings are ordered by prior. Throws NoChildren.
std::size_t puct_select(const Node& parent, double c);

/// Asks the generator for `cfg.expansion_width` continuations of `node` and
/// attaches them as children with uniform priors. Throws TerminalNode.
std::vector<Node*> expand(Node& node, llm::ChatSession& generator, const MctsConfig& cfg,
                          const std::vector<llm::ChatMessage>& base, const PromptTemplates& templates = {});

/// Adds `value` to W and 1 to N on every node of `path`.
void backprop(const std::vector<Node*>& path, double value);

struct Evaluation {
  double reward = -1.0;
  bool passed = false;
  bool binary = false;  // testbench exposed no per-sample counts
  std::optional<std::int64_t> mismatches;
};

/// Scores a toolchain report: per-sample reward from the testbench's
/// "Mismatches: M in N samples" line when present, else 1.0 / -1.
Evaluation evaluate_report(const ToolchainReport& report);

enum class SearchStatus { Solved, BudgetExhausted };
std::string_view to_string(SearchStatus s);

struct SearchResult {
  SearchStatus status = SearchStatus::BudgetExhausted;
  std::optional<RtlSource> best;  // highest-Q complete candidate seen
  double best_q = -1.0;
  std::optional<std::int64_t> best_mismatches;
  std::optional<std::int64_t> first_mismatches;
  int rollouts = 0;
  std::size_t llm_calls = 0;
  llm::Usage usage;
  bool binary_reward = false;
  std::vector<double> rewards;  // one per rollout
  std::vector<std::string> errors;
  std::unique_ptr<Node> root;
};

/// PUCT search over full candidates until a rollout passes or the budget is
/// spent. Rollouts run in `workdir/rollout_<k>`.
SearchResult mcts_search(const DesignProblem& problem, const MctsConfig& cfg, llm::ChatSession& generator,
                         Toolchain& tools, const std::filesystem::path& workdir, const PromptTemplates& templates = {});

}  // namespace pefa::mcts
