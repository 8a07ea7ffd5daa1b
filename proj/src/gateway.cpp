#include "refinery/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace refinery {

namespace {

constexpr std::pair<Purpose, std::string_view> kPurposeNames[] = {
    {Purpose::kInitial, "initial"},   {Purpose::kPrinciple, "principle"},
    {Purpose::kCritique, "critique"}, {Purpose::kRefine, "refine"},
    {Purpose::kJudge, "judge"},       {Purpose::kExtrinsic, "extrinsic"},
    {Purpose::kEmbed, "embed"},       {Purpose::kScore, "score"},
};

bool entry_less(const LedgerEntry& a, const LedgerEntry& b) {
  if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
  if (a.call_index != b.call_index) return a.call_index < b.call_index;
  return a.purpose < b.purpose;
}

}  // namespace

std::string_view purpose_name(Purpose p) {
  for (const auto& [k, v] : kPurposeNames) {
    if (k == p) return v;
  }
  return "unknown";
}

Purpose parse_purpose(std::string_view name) {
  for (const auto& [k, v] : kPurposeNames) {
    if (v == name) return k;
  }
  throw ValidationError("unknown purpose '" + std::string(name) + "'");
}

double perplexity(const LogprobResult& r) {
  if (r.token_count <= 0) throw ValidationError("perplexity of an empty sequence is undefined");
  return std::exp(-r.total_logprob / static_cast<double>(r.token_count));
}

void CallLedger::append(LedgerEntry entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(std::move(entry));
}

std::vector<LedgerEntry> CallLedger::entries() const {
  std::vector<LedgerEntry> out;
  {
    std::lock_guard lock(mu_);
    out = entries_;
  }
  std::stable_sort(out.begin(), out.end(), entry_less);
  return out;
}

std::vector<LedgerEntry> CallLedger::entries_for(std::string_view sample_id) const {
  auto all = entries();
  std::erase_if(all, [&](const LedgerEntry& e) { return e.sample_id != sample_id; });
  return all;
}

std::map<Purpose, std::size_t> CallLedger::counts_by_purpose() const {
  std::map<Purpose, std::size_t> out;
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) ++out[e.purpose];
  return out;
}

std::map<Purpose, std::size_t> CallLedger::counts_for(std::string_view sample_id) const {
  std::map<Purpose, std::size_t> out;
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e.sample_id == sample_id) ++out[e.purpose];
  }
  return out;
}

std::size_t CallLedger::total_attempts() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.attempts);
  return n;
}

double CallLedger::total_latency_ms() const {
  std::lock_guard lock(mu_);
  double t = 0.0;
  for (const auto& e : entries_) t += e.latency_ms;
  return t;
}

void CallLedger::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

std::string CallLedger::to_jsonl() const {
  std::string out;
  for (const auto& e : entries()) {
    Json j;
    j["sample_id"] = e.sample_id;
    j["call_index"] = e.call_index;
    j["purpose"] = purpose_name(e.purpose);
    j["attempts"] = e.attempts;
    j["ok"] = e.ok;
    j["prompt_tokens"] = e.prompt_tokens;
    j["completion_tokens"] = e.completion_tokens;
    if (!e.error.empty()) j["error"] = e.error;
    out += dump_compact(j);
    out.push_back('\n');
  }
  return out;
}

std::map<Purpose, PurposeDefaults> GatewayOptions::default_purpose_settings() {
  return {
      {Purpose::kInitial, {0.7, 1024}},
      {Purpose::kPrinciple, {0.7, 500}},
      {Purpose::kCritique, {0.7, 500}},
      {Purpose::kRefine, {0.7, 1024}},
      {Purpose::kJudge, {0.0, 500}},
      {Purpose::kExtrinsic, {0.7, 1024}},
  };
}

Gateway::Gateway(std::shared_ptr<Backend> policy, std::shared_ptr<Backend> embedder,
                 std::shared_ptr<Backend> judge, GatewayOptions options)
    : policy_(std::move(policy)),
      embedder_(std::move(embedder)),
      judge_(std::move(judge)),
      options_(std::move(options)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (!policy_ || !embedder_ || !judge_) throw ContractViolation("gateway: null backend");
  if (options_.max_in_flight == 0) options_.max_in_flight = 1;
}

Gateway::Gateway(std::shared_ptr<Backend> all, GatewayOptions options)
    : Gateway(all, all, all, std::move(options)) {}

GenerationRequest Gateway::make_request(Purpose purpose, std::vector<Message> messages,
                                        CallContext context) const {
  GenerationRequest r;
  r.messages = std::move(messages);
  r.purpose = purpose;
  r.context = std::move(context);
  if (auto it = options_.defaults.find(purpose); it != options_.defaults.end()) {
    r.temperature = it->second.temperature;
    r.max_tokens = it->second.max_tokens;
  }
  if (options_.seed) {
    // Per-call seed so replays are reproducible on backends that honour it.
    r.seed = static_cast<std::int64_t>(
        mix_seed(static_cast<std::uint64_t>(*options_.seed),
                 r.context.sample_id + "#" + std::to_string(r.context.call_index)) >> 1);
  }
  return r;
}

void Gateway::acquire() {
  std::unique_lock lock(slot_mu_);
  slot_cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
  ++in_flight_;
}

void Gateway::release() {
  {
    std::lock_guard lock(slot_mu_);
    --in_flight_;
  }
  slot_cv_.notify_one();
}

template <typename Fn>
auto Gateway::with_retries(Purpose purpose, const CallContext& context, Fn&& fn) {
  LedgerEntry entry;
  entry.sample_id = context.sample_id;
  entry.call_index = context.call_index;
  entry.purpose = purpose;
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&](bool ok, std::string error) {
    entry.ok = ok;
    entry.error = std::move(error);
    entry.latency_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    ledger_.append(entry);
  };

  const int attempts = std::max(1, options_.retry.attempts);
  auto backoff = options_.retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    entry.attempts = attempt;
    acquire();
    try {
      auto result = fn(entry);
      release();
      finish(true, {});
      return result;
    } catch (const TransportError& e) {
      release();
      if (attempt >= attempts) {
        finish(false, e.what());
        throw TransportError("transport failure after " + std::to_string(attempt) +
                             " attempts: " + e.what());
      }
    } catch (const std::exception& e) {
      release();
      finish(false, e.what());
      throw;
    }
    sleeper_(backoff);
    backoff = std::chrono::milliseconds(
        static_cast<long long>(static_cast<double>(backoff.count()) * options_.retry.multiplier));
  }
}

std::string Gateway::complete(const GenerationRequest& request) {
  Backend& backend = request.purpose == Purpose::kJudge ? *judge_ : *policy_;
  return with_retries(request.purpose, request.context, [&](LedgerEntry& entry) {
    auto c = backend.chat(request);
    entry.prompt_tokens = c.prompt_tokens;
    entry.completion_tokens = c.completion_tokens;
    return std::move(c.text);
  });
}

std::vector<std::vector<double>> Gateway::embed(std::span<const std::string> texts,
                                                CallContext context) {
  if (texts.empty()) throw ContractViolation("embed: empty batch");
  return with_retries(Purpose::kEmbed, context, [&](LedgerEntry&) {
    auto vecs = embedder_->embed(texts);
    if (vecs.size() != texts.size()) {
      throw ProtocolError("embedding backend returned " + std::to_string(vecs.size()) +
                          " vectors for " + std::to_string(texts.size()) + " texts");
    }
    for (const auto& v : vecs) {
      if (v.size() != vecs.front().size() || v.empty()) {
        throw ProtocolError("embedding dimension mismatch within a batch");
      }
    }
    return vecs;
  });
}

LogprobResult Gateway::score_logprob(std::string_view prefix, std::string_view continuation,
                                     CallContext context) {
  if (trim(continuation).empty()) {
    throw ValidationError("score_logprob: empty continuation");
  }
  return with_retries(Purpose::kScore, context, [&](LedgerEntry& entry) {
    auto r = policy_->score_logprob(prefix, continuation);
    if (r.token_count <= 0) throw ProtocolError("score_logprob: backend returned no tokens");
    if (r.total_logprob > 0.0) throw ProtocolError("score_logprob: positive log-probability");
    entry.completion_tokens = r.token_count;
    return r;
  });
}

}  // namespace refinery
