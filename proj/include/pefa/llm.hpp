#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pefa::llm {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct GenerationConfig {
  std::string model_id;
  double temperature = 0.8;
  std::optional<int> top_k = 30;
  int max_tokens = 1024;
  std::string base_url = "http://localhost:8000/v1";
  std::string provider = "openai";  // selects PEFA_API_KEY_<PROVIDER>
  /// Some providers only accept temperatures up to a ceiling (e.g. 1.0).
  std::optional<double> temperature_cap;
  /// Whether the endpoint accepts the non-standard `top_k` body field.
  bool send_top_k = true;
  /// Completions per request the provider supports (`n`); 1 disables batching.
  int max_samples_per_call = 1;
};

/// Temperature actually sent: unchanged unless it exceeds the declared cap,
/// in which case the [0, 2] range is halved onto [0, 1].
double effective_temperature(const GenerationConfig& cfg);

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total = 0;
  bool operator==(const Usage&) const = default;

  static Usage of(std::int64_t prompt, std::int64_t completion) { return {prompt, completion, prompt + completion}; }
};

Usage accumulate_usage(std::span<const Usage> usages);
Usage operator+(const Usage& a, const Usage& b);

/// ceil(chars / 4); a fallback when a provider reports no usage.
std::int64_t estimate_tokens(std::string_view text);

struct Completion {
  std::vector<std::string> choices;  // at least one
  Usage usage;
  bool usage_estimated = false;

  [[nodiscard]] const std::string& text() const { return choices.front(); }
};

/// SHA-256 over: model_id, RS, temperature ("%.4f"), then for each message
/// RS, role ("system"/"user"/"assistant"), LF, content. RS is 0x1E.
std::string request_digest(std::string_view model_id, std::span<const ChatMessage> messages, double temperature);

/// OpenAI-compatible chat.completions request body.
std::string build_request_body(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n = 1);

/// Parses choices[].message.content and usage.{prompt_tokens, completion_tokens}.
/// Throws MalformedResponse.
Completion parse_response_body(std::string_view body, std::span<const ChatMessage> messages);

/// Recorded completions keyed by request digest. One digest may hold several
/// entries: identical requests are replayed in the order they were recorded
/// (the `occurrence` index). Lookups are exact.
class TranscriptStore {
 public:
  struct Entry {
    std::string digest;
    std::string model;
    Completion completion;
  };

  TranscriptStore() = default;
  TranscriptStore(TranscriptStore&& other) noexcept;
  /// Loads a JSON-lines transcript. Throws IoError / MalformedResponse.
  static TranscriptStore load(const std::filesystem::path& file);

  /// Appends to the in-memory store and, when attached, to the backing file.
  void add(Entry entry);
  [[nodiscard]] std::optional<Completion> find(const std::string& digest, std::size_t occurrence) const;
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::vector<Entry> entries() const;

  /// Subsequent add() calls also append a line to `file`.
  void attach_file(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  static std::string to_line(const Entry& e);

 private:
  mutable std::shared_mutex mu_;
  std::vector<Entry> entries_;
  std::map<std::string, std::vector<std::size_t>> index_;
  std::unique_ptr<std::ofstream> sink_;
};

using RequestObserver = std::function<void(const GenerationConfig&, const std::string& body)>;

/// Chat completion backend. Implementations are safe to share across threads.
class LlmClient {
 public:
  virtual ~LlmClient() = default;

  /// `n` completions for one prompt. `occurrence` disambiguates repeated
  /// identical requests within one session (used by replay).
  virtual Completion complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                              std::size_t occurrence) = 0;

  /// Every request body is passed here before it is sent (or replayed).
  void set_observer(RequestObserver obs) { observer_ = std::move(obs); }

 protected:
  void observe(const GenerationConfig& cfg, const std::string& body) const {
    if (observer_) observer_(cfg, body);
  }

 private:
  RequestObserver observer_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

/// Live HTTP client for `POST <base_url>/chat/completions`. 429 and 5xx
/// responses are retried with exponential backoff.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(RetryPolicy retry = {}, std::chrono::seconds timeout = std::chrono::seconds(300))
      : retry_(retry), timeout_(timeout) {}

  Completion complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                      std::size_t occurrence) override;

 private:
  RetryPolicy retry_;
  std::chrono::seconds timeout_;
};

/// Serves completions from a TranscriptStore; absent digests raise ReplayMiss.
class ReplayLlmClient : public LlmClient {
 public:
  explicit ReplayLlmClient(std::shared_ptr<const TranscriptStore> store) : store_(std::move(store)) {}

  Completion complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                      std::size_t occurrence) override;

 private:
  std::shared_ptr<const TranscriptStore> store_;
};

/// Forwards to another client and writes each result into a store.
class RecordingLlmClient : public LlmClient {
 public:
  RecordingLlmClient(LlmClient& inner, std::shared_ptr<TranscriptStore> store)
      : inner_(inner), store_(std::move(store)) {}

  Completion complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                      std::size_t occurrence) override;

 private:
  LlmClient& inner_;
  std::shared_ptr<TranscriptStore> store_;
};

/// Returns scripted completions in order, ignoring the request. Used to
/// author transcripts and in tests.
class ScriptedLlmClient : public LlmClient {
 public:
  explicit ScriptedLlmClient(std::vector<Completion> script) : script_(std::move(script)) {}

  Completion complete(std::span<const ChatMessage> messages, const GenerationConfig& cfg, int n,
                      std::size_t occurrence) override;
  [[nodiscard]] std::size_t calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<Completion> script_;
  std::size_t next_ = 0;
};

/// Per-run view of a client: counts repeated identical requests so replay
/// stays exact, and tallies usage. Not thread-safe; one per run.
class ChatSession {
 public:
  ChatSession(LlmClient& client, GenerationConfig cfg) : client_(client), cfg_(std::move(cfg)) {}

  Completion complete(std::span<const ChatMessage> messages, int n = 1);

  [[nodiscard]] const GenerationConfig& config() const { return cfg_; }
  [[nodiscard]] std::size_t calls() const { return calls_; }
  [[nodiscard]] const Usage& usage() const { return usage_; }
  [[nodiscard]] bool any_estimated() const { return estimated_; }

 private:
  LlmClient& client_;
  GenerationConfig cfg_;
  std::map<std::string, std::size_t> seen_;
  std::size_t calls_ = 0;
  Usage usage_;
  bool estimated_ = false;
};

}  // namespace pefa::llm
