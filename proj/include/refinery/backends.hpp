#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "refinery/gateway.hpp"

namespace refinery {

struct HttpBackendOptions {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string api_key;
  std::string model;
  int timeout_seconds = 300;
  bool supports_logprobs = true;
};

// OpenAI-compatible chat-completions / embeddings / completions client.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options);

  Completion chat(const GenerationRequest& request) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  // Scores via /completions with echo=true and prompt logprobs.
  LogprobResult score_logprob(std::string_view prefix, std::string_view continuation) override;
  std::string id() const override { return options_.model; }

 private:
  Json post(const std::string& endpoint, const Json& body);

  HttpBackendOptions options_;
  std::string host_;         // scheme://host[:port]
  std::string path_prefix_;  // e.g. /v1
};

// Test double driven by plain callables.
class CallbackBackend final : public Backend {
 public:
  using ChatFn = std::function<std::string(const GenerationRequest&)>;
  using EmbedFn = std::function<std::vector<double>(const std::string&)>;
  using ScoreFn = std::function<LogprobResult(std::string_view, std::string_view)>;

  explicit CallbackBackend(ChatFn chat, EmbedFn embed = {}, ScoreFn score = {},
                           std::string id = "callback");

  Completion chat(const GenerationRequest& request) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  LogprobResult score_logprob(std::string_view prefix, std::string_view continuation) override;
  std::string id() const override { return id_; }

 private:
  ChatFn chat_;
  EmbedFn embed_;
  ScoreFn score_;
  std::string id_;
};

// Deterministic pseudo-embedding from a text hash (unit Gaussian entries).
std::vector<double> hashed_embedding(std::string_view text, std::size_t dim);

// Whitespace token count, used by the mocks for usage accounting.
int count_whitespace_tokens(std::string_view text);

/// Mock backend scripted by JSONL rules. Rules are matched in file order;
/// the first rule whose match fields all agree wins.
///
/// Match fields (all optional): purpose, sample, call, contains,
/// prompt_hash (16 hex digits of FNV-1a over the flattened prompt), text
/// (embedding input, exact).
/// Action fields: response, responses (picked by how often this rule has
/// already fired for the same sample), fail_first (inject that many
/// transport failures per call before answering), error
/// ("transport" | "context_overflow" | "protocol"), embedding,
/// logprob_per_token.
///
/// An optional first line {"config": {...}} sets id, embedding_dim and
/// logprobs (capability flag).
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::vector<Json> rules);
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  Completion chat(const GenerationRequest& request) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  LogprobResult score_logprob(std::string_view prefix, std::string_view continuation) override;
  std::string id() const override { return id_; }

  static std::string prompt_hash(std::span<const Message> messages);

 private:
  struct Rule {
    std::optional<Purpose> purpose;
    std::optional<std::string> sample;
    std::optional<int> call;
    std::optional<std::string> contains;
    std::optional<std::string> hash;
    std::optional<std::string> text;
    Json action;
    std::size_t index = 0;
  };

  const Rule* match(Purpose purpose, const std::string& sample, int call,
                    const std::string& flat, const std::string& hash,
                    const std::string* text) const;

  std::vector<Rule> rules_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_sample_;
  std::vector<std::size_t> unscoped_;
  std::string id_ = "mock";
  std::size_t dim_ = 16;
  bool logprobs_ = true;

  std::mutex mu_;
  std::map<std::string, int> failures_;  // (rule, sample, call) -> injected so far
  std::map<std::string, int> fired_;     // (rule, sample) -> times answered
};

}  // namespace refinery
