#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/common.hpp"
#include "refinery/templates.hpp"

namespace refinery {

enum class Purpose { kInitial, kPrinciple, kCritique, kRefine, kJudge, kExtrinsic, kEmbed, kScore };

std::string_view purpose_name(Purpose p);
Purpose parse_purpose(std::string_view name);

// Identifies a call within one sample's sequential call chain. The pair
// (sample_id, call_index) orders the ledger and keys the mock backend.
struct CallContext {
  std::string sample_id;
  int call_index = 0;
};

struct GenerationRequest {
  std::vector<Message> messages;
  double temperature = 0.7;
  int max_tokens = 500;
  std::optional<std::int64_t> seed;
  Purpose purpose = Purpose::kInitial;
  CallContext context;
};

struct Completion {
  std::string text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct LogprobResult {
  double total_logprob = 0.0;  // natural log, <= 0
  int token_count = 0;
};

// exp(-total / count).
double perplexity(const LogprobResult& r);

// Transport abstraction. Implementations throw TransportError for
// retryable failures and ContextOverflowError / CapabilityError /
// ProtocolError otherwise.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Completion chat(const GenerationRequest& request) = 0;
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
  virtual LogprobResult score_logprob(std::string_view prefix, std::string_view continuation) = 0;
  virtual std::string id() const = 0;
};

struct PurposeDefaults {
  double temperature = 0.7;
  int max_tokens = 500;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
};

struct LedgerEntry {
  std::string sample_id;
  int call_index = 0;
  Purpose purpose = Purpose::kInitial;
  int attempts = 0;
  bool ok = false;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  double latency_ms = 0.0;
  std::string error;
};

// Append-only, thread-safe record of every logical backend call.
class CallLedger {
 public:
  void append(LedgerEntry entry);
  // Sorted by (sample_id, call_index, purpose).
  std::vector<LedgerEntry> entries() const;
  std::vector<LedgerEntry> entries_for(std::string_view sample_id) const;
  std::map<Purpose, std::size_t> counts_by_purpose() const;
  std::map<Purpose, std::size_t> counts_for(std::string_view sample_id) const;
  std::size_t total_attempts() const;
  double total_latency_ms() const;
  void clear();
  // Deterministic JSONL rendering (latency omitted).
  std::string to_jsonl() const;

 private:
  mutable std::mutex mu_;
  std::vector<LedgerEntry> entries_;
};

struct GatewayOptions {
  RetryPolicy retry;
  std::size_t max_in_flight = 16;
  std::map<Purpose, PurposeDefaults> defaults = default_purpose_settings();
  std::optional<std::int64_t> seed;

  static std::map<Purpose, PurposeDefaults> default_purpose_settings();
};

// Shared front door to the policy, embedding and judge backends.
class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(std::shared_ptr<Backend> policy, std::shared_ptr<Backend> embedder,
          std::shared_ptr<Backend> judge, GatewayOptions options = {});
  explicit Gateway(std::shared_ptr<Backend> all, GatewayOptions options = {});

  GenerationRequest make_request(Purpose purpose, std::vector<Message> messages,
                                 CallContext context) const;

  // Retries TransportError with exponential backoff; anything else propagates
  // immediately. Judge-purpose requests go to the judge backend.
  std::string complete(const GenerationRequest& request);

  std::vector<std::vector<double>> embed(std::span<const std::string> texts,
                                         CallContext context = {});
  // Throws ValidationError for an empty continuation.
  LogprobResult score_logprob(std::string_view prefix, std::string_view continuation,
                              CallContext context = {});

  CallLedger& ledger() { return ledger_; }
  const CallLedger& ledger() const { return ledger_; }
  const GatewayOptions& options() const { return options_; }
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

  std::string policy_id() const { return policy_->id(); }
  std::string embedder_id() const { return embedder_->id(); }
  std::string judge_id() const { return judge_->id(); }

 private:
  template <typename Fn>
  auto with_retries(Purpose purpose, const CallContext& context, Fn&& fn);

  void acquire();
  void release();

  std::shared_ptr<Backend> policy_;
  std::shared_ptr<Backend> embedder_;
  std::shared_ptr<Backend> judge_;
  GatewayOptions options_;
  CallLedger ledger_;
  Sleeper sleeper_;

  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  std::size_t in_flight_ = 0;
};

}  // namespace refinery
