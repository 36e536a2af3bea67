#include "pefa/llm.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pefa/digest.hpp"
#include "pefa/error.hpp"

using nlohmann::json;

namespace pefa::llm {
namespace {

json usage_json(const Usage& u) {
  return json{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}, {"total_tokens", u.total}};
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

Endpoint split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "base_url needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

std::optional<std::string> api_key_for(const std::string& provider) {
  std::string var = "PEFA_API_KEY_";
  for (char c : provider) var += static_cast<char>(std::isalnum(static_cast<unsigned char>(c)) ? std::toupper(c) : '_');
  if (const char* v = std::getenv(var.c_str()); v != nullptr && *v != '\0') return std::string(v);
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

double effective_temperature(const GenerationConfig& cfg) {
  if (cfg.temperature_cap && cfg.temperature > *cfg.temperature_cap) return cfg.temperature * 0.5;
  return cfg.temperature;
}

Usage operator+(const Usage& a, const Usage& b) {
  return Usage{a.prompt_tokens + b.prompt_tokens, a.completion_tokens + b.completion_tokens, a.total + b.total};
}

Usage accumulate_usage(std::span<const Usage> usages) {
  Usage sum;
  for (const auto& u : usages) sum = sum + u;
  return sum;
}

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

std::string request_digest(std::string_view model_id, std::span<const ChatMessage> messages, double temperature) {
  constexpr char kRs = '\x1e';
  char temp[64];
  std::snprintf(temp, sizeof temp, "%.4f", temperature);
  std::string s(model_id);
  s += kRs;
  s += temp;
  for (const auto& m : messages) {
    s += kRs;
    s += to_string(m.role);
    s += '\n';
    s += m.content;
  }
  return sha256_hex(s);
}

std::string build_request_body(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  json body{{"model", cfg.model_id},
            {"messages", std::move(msgs)},
            {"temperature", effective_temperature(cfg)},
            {"max_tokens", cfg.max_tokens}};
  if (cfg.top_k && cfg.send_top_k) body["top_k"] = *cfg.top_k;
  if (n > 1) body["n"] = n;
  return body.dump();
}

Completion parse_response_body(std::string_view body, std::span<const ChatMessage> messages) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("not JSON: ") + e.what());
  }
  Completion c;
  try {
    for (const auto& ch : j.at("choices")) c.choices.push_back(ch.at("message").at("content").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("choices[].message.content: ") + e.what());
  }
  if (c.choices.empty()) throw Error(ErrorCode::MalformedResponse, "empty choices");

  const auto usage = j.find("usage");
  if (usage != j.end() && usage->is_object() && usage->contains("prompt_tokens") &&
      usage->contains("completion_tokens")) {
    c.usage = Usage::of(usage->at("prompt_tokens").get<std::int64_t>(), usage->at("completion_tokens").get<std::int64_t>());
  } else {
    std::int64_t prompt = 0, completion = 0;
    for (const auto& m : messages) prompt += estimate_tokens(m.content);
    for (const auto& t : c.choices) completion += estimate_tokens(t);
    c.usage = Usage::of(prompt, completion);
    c.usage_estimated = true;
  }
  return c;
}

// ---------------------------------------------------------------------------

TranscriptStore::TranscriptStore(TranscriptStore&& other) noexcept {
  std::unique_lock lock(other.mu_);
  entries_ = std::move(other.entries_);
  index_ = std::move(other.index_);
  sink_ = std::move(other.sink_);
}

TranscriptStore TranscriptStore::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::IoError, "cannot read transcript " + file.string());
  TranscriptStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      Entry e;
      e.digest = j.at("digest").get<std::string>();
      e.model = j.value("model", "");
      if (j.contains("choices")) {
        e.completion.choices = j.at("choices").get<std::vector<std::string>>();
      } else {
        e.completion.choices.push_back(j.at("completion").get<std::string>());
      }
      const auto& u = j.at("usage");
      e.completion.usage = Usage::of(u.at("prompt_tokens").get<std::int64_t>(), u.at("completion_tokens").get<std::int64_t>());
      e.completion.usage_estimated = j.value("usage_estimated", false);
      store.add(std::move(e));
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::MalformedResponse, file.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return store;
}

std::string TranscriptStore::to_line(const Entry& e) {
  json j{{"digest", e.digest}, {"model", e.model}, {"completion", e.completion.text()}};
  if (e.completion.choices.size() > 1) j["choices"] = e.completion.choices;
  j["usage"] = usage_json(e.completion.usage);
  if (e.completion.usage_estimated) j["usage_estimated"] = true;
  return j.dump();
}

void TranscriptStore::add(Entry entry) {
  std::unique_lock lock(mu_);
  if (sink_) {
    *sink_ << to_line(entry) << '\n';
    sink_->flush();
  }
  index_[entry.digest].push_back(entries_.size());
  entries_.push_back(std::move(entry));
}

std::optional<Completion> TranscriptStore::find(const std::string& digest, std::size_t occurrence) const {
  std::shared_lock lock(mu_);
  auto it = index_.find(digest);
  if (it == index_.end() || occurrence >= it->second.size()) return std::nullopt;
  return entries_[it->second[occurrence]].completion;
}

std::size_t TranscriptStore::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::vector<TranscriptStore::Entry> TranscriptStore::entries() const {
  std::shared_lock lock(mu_);
  return entries_;
}

void TranscriptStore::attach_file(const std::filesystem::path& file) {
  std::unique_lock lock(mu_);
  sink_ = std::make_unique<std::ofstream>(file, std::ios::app);
  if (!*sink_) throw Error(ErrorCode::IoError, "cannot append to transcript " + file.string());
}

void TranscriptStore::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write transcript " + file.string());
  for (const auto& e : entries()) out << to_line(e) << '\n';
}

// ---------------------------------------------------------------------------

Completion HttpLlmClient::complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                                   std::size_t /*occurrence*/) {
  const auto endpoint = split_url(cfg.base_url);
  const std::string body = build_request_body(messages, cfg, n);
  observe(cfg, body);

  httplib::Client cli(endpoint.origin);
  cli.set_connection_timeout(std::chrono::seconds(10));
  cli.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (auto key = api_key_for(cfg.provider)) headers.emplace("Authorization", "Bearer " + *key);

  auto backoff = retry_.initial_backoff;
  int last_status = 0;
  std::string last_detail;
  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    auto res = cli.Post(endpoint.prefix + "/chat/completions", headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return parse_response_body(res->body, messages);
    if (res) {
      last_status = res->status;
      last_detail = res->body.substr(0, 512);
      const bool retryable = res->status == 429 || res->status >= 500;
      if (!retryable) throw HttpStatusError(ErrorCode::HttpError, res->status, last_detail);
    } else {
      last_status = 0;
      last_detail = httplib::to_string(res.error());
    }
    if (attempt < retry_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<std::int64_t>(backoff.count() * retry_.multiplier));
    }
  }
  if (last_status == 429) throw HttpStatusError(ErrorCode::RateLimited, 429, last_detail);
  throw HttpStatusError(ErrorCode::HttpError, last_status, last_detail);
}

Completion ReplayLlmClient::complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                                     std::size_t occurrence) {
  observe(cfg, build_request_body(messages, cfg, n));
  const auto digest = request_digest(cfg.model_id, messages, cfg.temperature);
  auto hit = store_->find(digest, occurrence);
  if (!hit) {
    throw Error(ErrorCode::ReplayMiss, "digest " + digest + " occurrence " + std::to_string(occurrence) +
                                           " (model " + cfg.model_id + ")");
  }
  return *hit;
}

Completion RecordingLlmClient::complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                                        std::size_t occurrence) {
  auto c = inner_.complete(messages, cfg, n, occurrence);
  store_->add(TranscriptStore::Entry{request_digest(cfg.model_id, messages, cfg.temperature), cfg.model_id, c});
  return c;
}

Completion ScriptedLlmClient::complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                                       std::size_t /*occurrence*/) {
  observe(cfg, build_request_body(messages, cfg, n));
  std::lock_guard lock(mu_);
  if (next_ >= script_.size()) throw Error(ErrorCode::ReplayMiss, "script exhausted after " + std::to_string(next_) + " calls");
  Completion c = script_[next_++];
  if (static_cast<int>(c.choices.size()) > n) c.choices.resize(static_cast<std::size_t>(n));
  return c;
}

std::size_t ScriptedLlmClient::calls() const {
  std::lock_guard lock(mu_);
  return next_;
}

Completion ChatSession::complete(std::span<const ChatMessage> messages, int n) {
  const auto digest = request_digest(cfg_.model_id, messages, cfg_.temperature);
  const int per_call = std::max(1, cfg_.max_samples_per_call);
  Completion out;
  while (static_cast<int>(out.choices.size()) < n) {
    const int want = std::min(per_call, n - static_cast<int>(out.choices.size()));
    auto c = client_.complete(messages, cfg_, want, seen_[digest]++);
    ++calls_;
    usage_ = usage_ + c.usage;
    estimated_ = estimated_ || c.usage_estimated;
    out.usage = out.usage + c.usage;
    out.usage_estimated = out.usage_estimated || c.usage_estimated;
    out.choices.insert(out.choices.end(), c.choices.begin(), c.choices.end());
  }
  out.choices.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace pefa::llm
