#include "pefa/mcts.hpp"

#include <algorithm>
#include <cmath>

#include "pefa/error.hpp"

namespace fs = std::filesystem;

namespace pefa::mcts {
namespace {

// Candidate text for a node: the extracted module when complete, else the raw text.
void set_state(Node& n, std::string text) {
  try {
    n.state = extract_rtl(text).text;
    n.terminal = true;
  } catch (const Error&) {
    n.state = std::move(text);
    n.terminal = false;
  }
}

std::vector<llm::ChatMessage> continuation_prompt(const std::vector<llm::ChatMessage>& base, const std::string& partial,
                                                  const PromptTemplates& templates) {
  auto msgs = base;
  if (!partial.empty()) {
    msgs.push_back({llm::Role::Assistant, partial});
    msgs.push_back({llm::Role::User, templates.continuation});
  }
  return msgs;
}

}  // namespace

void MctsConfig::validate() const {
  if (!(c_puct > 0) || rollout_budget < 1 || expansion_width < 1) {
    throw Error(ErrorCode::ConfigError, "c_puct, rollout_budget and expansion_width must be positive");
  }
}

double reward(std::int64_t n_pass, std::int64_t n_total) {
  if (n_total < 1 || n_pass < 0 || n_pass > n_total) {
    throw Error(ErrorCode::DomainError,
                "reward(" + std::to_string(n_pass) + ", " + std::to_string(n_total) + ")");
  }
  if (n_pass == 0) return -1.0;
  return static_cast<double>(n_pass) / static_cast<double>(n_total);
}

double puct_score(const Node& child, double c, int sum_visits) {
  return child.q() + c * child.prior * std::sqrt(static_cast<double>(sum_visits)) / (1.0 + child.visits);
}

std::size_t puct_select(const Node& parent, double c) {
  if (parent.children.empty()) throw Error(ErrorCode::NoChildren, "puct_select on a leaf");
  int sum = 0;
  for (const auto& ch : parent.children) sum += ch->visits;
  sum = std::max(sum, 1);  // all unvisited: rank by prior
  std::size_t best = 0;
  double best_score = puct_score(*parent.children[0], c, sum);
  for (std::size_t i = 1; i < parent.children.size(); ++i) {
    const double s = puct_score(*parent.children[i], c, sum);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

std::vector<Node*> expand(Node& node, llm::ChatSession& generator, const MctsConfig& cfg,
                          const std::vector<llm::ChatMessage>& base, const PromptTemplates& templates) {
  if (node.terminal) throw Error(ErrorCode::TerminalNode, "cannot expand a complete candidate");
  const auto msgs = continuation_prompt(base, node.state, templates);
  auto c = generator.complete(msgs, cfg.expansion_width);
  std::vector<Node*> out;
  const double prior = 1.0 / static_cast<double>(c.choices.size());
  for (auto& text : c.choices) {
    auto child = std::make_unique<Node>();
    child->prior = prior;
    child->parent = &node;
    set_state(*child, node.state.empty() ? text : node.state + "\n" + text);
    out.push_back(child.get());
    node.children.push_back(std::move(child));
  }
  return out;
}

void backprop(const std::vector<Node*>& path, double value) {
  for (Node* n : path) {
    n->total_reward += value;
    n->visits += 1;
  }
}

Evaluation evaluate_report(const ToolchainReport& report) {
  Evaluation e;
  if (report.stage != Stage::Simulate) return e;
  e.passed = report.ok;
  if (auto mc = parse_mismatch_count(report.log); mc && mc->samples >= 1 && mc->mismatches <= mc->samples &&
                                                     mc->mismatches >= 0) {
    e.mismatches = mc->mismatches;
    e.reward = reward(mc->samples - mc->mismatches, mc->samples);
    return e;
  }
  e.binary = true;
  e.reward = report.ok ? 1.0 : -1.0;
  return e;
}

std::string_view to_string(SearchStatus s) {
  return s == SearchStatus::Solved ? "Solved" : "BudgetExhausted";
}

SearchResult mcts_search(const DesignProblem& problem, const MctsConfig& cfg, llm::ChatSession& generator,
                         Toolchain& tools, const fs::path& workdir, const PromptTemplates& templates) {
  cfg.validate();
  SearchResult res;
  res.root = std::make_unique<Node>();
  const auto calls0 = generator.calls();
  const auto usage0 = generator.usage();
  const auto tb = instrument_testbench(problem.testbench, problem.dut_ports);
  const auto base = base_prompt(problem, templates);
  std::map<std::string, Evaluation> cache;
  struct Seen {
    RtlSource rtl;
    const Node* node;
    std::optional<std::int64_t> mismatches;
  };
  std::map<std::string, Seen> seen;

  auto finish = [&]() -> SearchResult {
    res.llm_calls = generator.calls() - calls0;
    res.usage = llm::Usage{generator.usage().prompt_tokens - usage0.prompt_tokens,
                           generator.usage().completion_tokens - usage0.completion_tokens,
                           generator.usage().total - usage0.total};
    return std::move(res);
  };

  while (res.rollouts < cfg.rollout_budget) {
    std::vector<Node*> path{res.root.get()};
    Node* node = res.root.get();
    try {
      while (!node->children.empty()) {
        node = node->children[puct_select(*node, cfg.c_puct)].get();
        path.push_back(node);
      }
      if (!node->terminal && (node == res.root.get() || node->visits > 0)) {
        expand(*node, generator, cfg, base, templates);
        node = node->children[puct_select(*node, cfg.c_puct)].get();
        path.push_back(node);
      }
    } catch (const Error& e) {
      res.errors.emplace_back(e.what());
      break;
    }

    ++res.rollouts;
    std::string candidate = node->state;
    std::optional<RtlSource> rtl;
    if (node->terminal) {
      rtl = extract_rtl(candidate);
    } else {
      // Complete a partial leaf with one continuation call.
      try {
        auto c = generator.complete(continuation_prompt(base, node->state, templates));
        rtl = extract_rtl(node->state.empty() ? c.text() : node->state + "\n" + c.text());
      } catch (const Error& e) {
        res.errors.emplace_back(e.what());
      }
    }

    Evaluation ev;
    if (rtl) {
      if (auto hit = cache.find(rtl->text); hit != cache.end()) {
        ev = hit->second;
      } else {
        try {
          auto report = run_pipeline(tools, *rtl, tb, workdir / ("rollout_" + std::to_string(res.rollouts)));
          ev = evaluate_report(report);
        } catch (const Error& e) {
          res.errors.emplace_back(e.what());
        }
        cache.emplace(rtl->text, ev);
      }
    }
    res.binary_reward = res.binary_reward || ev.binary;
    res.rewards.push_back(ev.reward);
    if (res.rollouts == 1) res.first_mismatches = ev.mismatches;
    backprop(path, ev.reward);

    if (rtl) seen.emplace(rtl->text, Seen{*rtl, node, ev.mismatches});
    if (ev.passed) {
      res.status = SearchStatus::Solved;
      res.best = rtl;
      res.best_q = node->q();
      res.best_mismatches = ev.mismatches;
      return finish();
    }
  }
  for (const auto& [text, s] : seen) {
    if (!res.best || s.node->q() > res.best_q) {
      res.best = s.rtl;
      res.best_q = s.node->q();
      res.best_mismatches = s.mismatches;
    }
  }
  return finish();
}

}  // namespace pefa::mcts
