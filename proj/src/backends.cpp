#include "refinery/backends.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <httplib.h>

namespace refinery {

namespace {

bool looks_like_context_overflow(const std::string& body) {
  const auto lower = to_lower_ascii(body);
  return lower.find("context length") != std::string::npos ||
         lower.find("context_length") != std::string::npos ||
         lower.find("maximum context") != std::string::npos ||
         lower.find("too many tokens") != std::string::npos;
}

}  // namespace

// ---------------------------------------------------------------------------
// HttpBackend

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  const auto scheme_end = options_.base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("backend base URL must include a scheme: " + options_.base_url);
  }
  const auto path_start = options_.base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    host_ = options_.base_url;
  } else {
    host_ = options_.base_url.substr(0, path_start);
    path_prefix_ = options_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

Json HttpBackend::post(const std::string& endpoint, const Json& body) {
  httplib::Client client(host_);
  client.set_connection_timeout(std::chrono::seconds(30));
  client.set_read_timeout(std::chrono::seconds(options_.timeout_seconds));
  client.set_write_timeout(std::chrono::seconds(options_.timeout_seconds));
  httplib::Headers headers;
  if (!options_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + options_.api_key);
  }
  auto res = client.Post(path_prefix_ + endpoint, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + endpoint + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("POST " + endpoint + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status >= 400) {
    if (looks_like_context_overflow(res->body)) {
      throw ContextOverflowError("context overflow: " + utf8_truncate(res->body, 300));
    }
    throw ProtocolError("POST " + endpoint + " returned HTTP " + std::to_string(res->status) +
                        ": " + utf8_truncate(res->body, 300));
  }
  auto doc = Json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) throw ProtocolError("POST " + endpoint + ": response is not JSON");
  return doc;
}

Completion HttpBackend::chat(const GenerationRequest& request) {
  Json body;
  body["model"] = options_.model;
  body["messages"] = Json::array();
  for (const auto& m : request.messages) {
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  }
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  if (request.seed) body["seed"] = *request.seed;

  const auto doc = post("/chat/completions", body);
  try {
    Completion c;
    const auto& choice = doc.at("choices").at(0);
    if (choice.value("finish_reason", std::string{}) == "length" &&
        choice.at("message").value("content", std::string{}).empty()) {
      throw ContextOverflowError("generation truncated before any content");
    }
    c.text = choice.at("message").value("content", std::string{});
    if (doc.contains("usage")) {
      c.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
      c.completion_tokens = doc["usage"].value("completion_tokens", 0);
    }
    return c;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed chat completion: ") + e.what());
  }
}

std::vector<std::vector<double>> HttpBackend::embed(std::span<const std::string> texts) {
  Json body;
  body["model"] = options_.model;
  body["input"] = Json::array();
  for (const auto& t : texts) body["input"].push_back(t);
  const auto doc = post("/embeddings", body);
  try {
    std::vector<std::vector<double>> out(texts.size());
    const auto& data = doc.at("data");
    if (data.size() != texts.size()) throw ProtocolError("embedding count mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto idx = data[i].value("index", i);
      if (idx >= out.size()) throw ProtocolError("embedding index out of range");
      out[idx] = data[i].at("embedding").get<std::vector<double>>();
    }
    return out;
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("malformed embeddings response: ") + e.what());
  }
}

LogprobResult HttpBackend::score_logprob(std::string_view prefix, std::string_view continuation) {
  if (!options_.supports_logprobs) {
    throw CapabilityError("backend '" + options_.model + "' does not expose token log-probabilities");
  }
  Json body;
  body["model"] = options_.model;
  body["prompt"] = std::string(prefix) + std::string(continuation);
  body["max_tokens"] = 1;
  body["temperature"] = 0.0;
  body["echo"] = true;
  body["logprobs"] = 0;
  const auto doc = post("/completions", body);
  try {
    const auto& lp = doc.at("choices").at(0).at("logprobs");
    if (lp.is_null()) throw CapabilityError("backend returned no logprobs");
    const auto& tokens = lp.at("token_logprobs");
    const auto& offsets = lp.at("text_offset");
    const std::size_t boundary = prefix.size();
    const std::size_t end = prefix.size() + continuation.size();
    LogprobResult r;
    for (std::size_t i = 0; i < tokens.size() && i < offsets.size(); ++i) {
      const auto off = offsets[i].get<std::size_t>();
      // Echo also includes the one generated token past the prompt.
      if (off < boundary || off >= end || tokens[i].is_null()) continue;
      r.total_logprob += tokens[i].get<double>();
      ++r.token_count;
    }
    if (r.token_count == 0) throw ProtocolError("no scored tokens in continuation");
    return r;
  } catch (const Json::exception& e) {
    throw CapabilityError(std::string("logprob scoring unsupported or malformed: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CallbackBackend

int count_whitespace_tokens(std::string_view text) {
  int n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

std::vector<double> hashed_embedding(std::string_view text, std::size_t dim) {
  std::vector<double> v(dim);
  std::uint64_t state = fnv1a64(text);
  for (std::size_t i = 0; i < dim; ++i) {
    state = splitmix64(state);
    const double u1 = std::max(unit_double(state), 0x1.0p-53);
    state = splitmix64(state);
    const double u2 = unit_double(state);
    v[i] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  return v;
}

CallbackBackend::CallbackBackend(ChatFn chat, EmbedFn embed, ScoreFn score, std::string id)
    : chat_(std::move(chat)), embed_(std::move(embed)), score_(std::move(score)), id_(std::move(id)) {}

Completion CallbackBackend::chat(const GenerationRequest& request) {
  if (!chat_) throw CapabilityError("callback backend has no chat handler");
  Completion c;
  c.text = chat_(request);
  c.prompt_tokens = count_whitespace_tokens(flatten_messages(request.messages));
  c.completion_tokens = count_whitespace_tokens(c.text);
  return c;
}

std::vector<std::vector<double>> CallbackBackend::embed(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_ ? embed_(t) : hashed_embedding(t, 16));
  return out;
}

LogprobResult CallbackBackend::score_logprob(std::string_view prefix, std::string_view continuation) {
  if (!score_) throw CapabilityError("callback backend has no logprob handler");
  return score_(prefix, continuation);
}

// ---------------------------------------------------------------------------
// ScriptedBackend

std::string ScriptedBackend::prompt_hash(std::span<const Message> messages) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(flatten_messages(messages))));
  return buf;
}

ScriptedBackend::ScriptedBackend(std::vector<Json> rules) {
  for (auto& j : rules) {
    if (!j.is_object()) throw ParseError("mock rule must be an object");
    if (j.contains("config")) {
      const auto& c = j["config"];
      id_ = c.value("id", id_);
      dim_ = c.value("embedding_dim", dim_);
      logprobs_ = c.value("logprobs", logprobs_);
      continue;
    }
    Rule r;
    r.index = rules_.size();
    if (j.contains("purpose") && j["purpose"] != "*") r.purpose = parse_purpose(j["purpose"].get<std::string>());
    if (j.contains("sample")) r.sample = j["sample"].get<std::string>();
    if (j.contains("call")) r.call = j["call"].get<int>();
    if (j.contains("contains")) r.contains = j["contains"].get<std::string>();
    if (j.contains("prompt_hash")) r.hash = j["prompt_hash"].get<std::string>();
    if (j.contains("text")) r.text = j["text"].get<std::string>();
    r.action = std::move(j);
    if (r.sample) by_sample_[*r.sample].push_back(r.index);
    else unscoped_.push_back(r.index);
    rules_.push_back(std::move(r));
  }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  return std::make_shared<ScriptedBackend>(read_jsonl(path));
}

const ScriptedBackend::Rule* ScriptedBackend::match(Purpose purpose, const std::string& sample,
                                                    int call, const std::string& flat,
                                                    const std::string& hash,
                                                    const std::string* text) const {
  static const std::vector<std::size_t> kEmpty;
  const auto it = by_sample_.find(sample);
  const auto& scoped = it == by_sample_.end() ? kEmpty : it->second;
  auto matches = [&](const Rule& r) {
    if (r.purpose && *r.purpose != purpose) return false;
    if (r.call && *r.call != call) return false;
    if (r.contains && flat.find(*r.contains) == std::string::npos) return false;
    if (r.hash && *r.hash != hash) return false;
    if (r.text && (!text || *r.text != *text)) return false;
    return true;
  };
  // Merge the two sorted index lists to honour file order.
  std::size_t a = 0, b = 0;
  while (a < scoped.size() || b < unscoped_.size()) {
    std::size_t idx;
    if (b >= unscoped_.size() || (a < scoped.size() && scoped[a] < unscoped_[b])) idx = scoped[a++];
    else idx = unscoped_[b++];
    if (matches(rules_[idx])) return &rules_[idx];
  }
  return nullptr;
}

Completion ScriptedBackend::chat(const GenerationRequest& request) {
  const auto flat = flatten_messages(request.messages);
  const Rule* rule = match(request.purpose, request.context.sample_id, request.context.call_index,
                           flat, prompt_hash(request.messages), nullptr);
  if (!rule) {
    throw ProtocolError("mock: no scripted response for purpose=" +
                        std::string(purpose_name(request.purpose)) + " sample=" +
                        request.context.sample_id + " call=" +
                        std::to_string(request.context.call_index));
  }
  const auto& act = rule->action;
  const std::string key = std::to_string(rule->index) + "|" + request.context.sample_id;
  {
    std::lock_guard lock(mu_);
    if (const int fail_first = act.value("fail_first", 0); fail_first > 0) {
      int& n = failures_[key + "|" + std::to_string(request.context.call_index)];
      if (n < fail_first) {
        ++n;
        throw TransportError("mock: injected transport failure");
      }
    }
  }
  if (act.contains("error")) {
    const auto kind = act["error"].get<std::string>();
    if (kind == "transport") throw TransportError("mock: scripted transport failure");
    if (kind == "context_overflow") throw ContextOverflowError("mock: scripted context overflow");
    throw ProtocolError("mock: scripted protocol error");
  }
  Completion c;
  if (act.contains("responses")) {
    const auto& list = act["responses"];
    if (!list.is_array() || list.empty()) throw ParseError("mock: 'responses' must be a non-empty array");
    std::size_t k;
    {
      std::lock_guard lock(mu_);
      k = static_cast<std::size_t>(fired_[key]++);
    }
    c.text = list[std::min(k, list.size() - 1)].get<std::string>();
  } else {
    c.text = act.value("response", std::string{});
  }
  c.prompt_tokens = count_whitespace_tokens(flat);
  c.completion_tokens = count_whitespace_tokens(c.text);
  return c;
}

std::vector<std::vector<double>> ScriptedBackend::embed(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const Rule* rule = match(Purpose::kEmbed, "", -1, t, {}, &t);
    if (rule && rule->action.contains("embedding")) {
      out.push_back(rule->action["embedding"].get<std::vector<double>>());
    } else {
      out.push_back(hashed_embedding(t, dim_));
    }
  }
  return out;
}

LogprobResult ScriptedBackend::score_logprob(std::string_view prefix, std::string_view continuation) {
  if (!logprobs_) throw CapabilityError("mock: logprob scoring disabled");
  const std::string flat = std::string(prefix) + std::string(continuation);
  const Rule* rule = match(Purpose::kScore, "", -1, flat, {}, nullptr);
  const double per_token = rule ? rule->action.value("logprob_per_token", -1.0) : -1.0;
  LogprobResult r;
  r.token_count = count_whitespace_tokens(continuation);
  r.total_logprob = per_token * r.token_count;
  return r;
}

}  // namespace refinery
