#include "refinery/config.hpp"

#include <charconv>
#include <sstream>

namespace refinery {

namespace {

constexpr Purpose kTunablePurposes[] = {Purpose::kInitial, Purpose::kPrinciple, Purpose::kCritique,
                                        Purpose::kRefine,  Purpose::kJudge,     Purpose::kExtrinsic};

Json endpoint_to_json(const EndpointConfig& e) {
  return Json{{"base_url", e.base_url}, {"model", e.model}, {"logprobs", e.logprobs}};
}

EndpointConfig endpoint_from_json(const Json& j) {
  return EndpointConfig{j.at("base_url").get<std::string>(), j.at("model").get<std::string>(),
                        j.at("logprobs").get<bool>()};
}

std::string_view corpus_format_name(CorpusFormat f) {
  return f == CorpusFormat::kPreferencePair ? "preference_pair" : "prompt_gold";
}

// Every key in `patch` must exist in `schema`, recursively through objects.
void check_known_keys(const Json& patch, const Json& schema, const std::string& where) {
  if (!patch.is_object()) return;
  for (const auto& [key, value] : patch.items()) {
    if (!schema.contains(key)) throw ValidationError("config: unknown key '" + where + key + "'");
    if (value.is_object() && schema[key].is_object()) {
      check_known_keys(value, schema[key], where + key + ".");
    }
  }
}

void merge(Json& into, const Json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && into.contains(key) && into[key].is_object()) {
      merge(into[key], value);
    } else {
      into[key] = value;
    }
  }
}

}  // namespace

DiscoveryConfig RunConfig::discovery(int iteration) const {
  DiscoveryConfig d;
  d.tau = tau;
  d.n_principles = n_principles;
  d.validator_mode = validator_mode;
  d.judge_threshold = judge_threshold;
  d.selection = selection;
  d.soft_temperature = soft_temperature;
  d.seed = mix_seed(seed, "estep:" + std::to_string(iteration));
  d.iteration = iteration;
  return d;
}

GatewayOptions RunConfig::gateway_options() const {
  GatewayOptions o;
  o.retry.attempts = retry_attempts;
  o.retry.initial_backoff = std::chrono::milliseconds(retry_backoff_ms);
  o.max_in_flight = max_in_flight;
  for (const auto& [p, d] : purposes) o.defaults[p] = d;
  o.seed = static_cast<std::int64_t>(seed & 0x7fffffffffffffffULL);
  return o;
}

Json config_to_json(const RunConfig& c) {
  Json j;
  j["tau"] = c.tau;
  j["n_principles"] = c.n_principles;
  j["delta"] = c.delta ? Json(*c.delta) : Json("auto");
  j["lambda"] = c.lambda;
  j["tau_ppl"] = c.tau_ppl;
  j["scheme"] = scheme_name(c.scheme);
  j["linkage"] = linkage_name(c.linkage);
  j["validator_mode"] = c.validator_mode == ValidatorMode::kJudge ? "judge" : "rouge";
  j["judge_threshold"] = c.judge_threshold;
  j["selection"] = c.selection == SelectionMode::kSoft ? "soft" : "best_of_n";
  j["soft_temperature"] = c.soft_temperature;
  Json purposes = Json::object();
  for (auto p : kTunablePurposes) {
    const auto& d = c.purposes.at(p);
    purposes[std::string(purpose_name(p))] = {{"temperature", d.temperature},
                                              {"max_tokens", d.max_tokens}};
  }
  j["purposes"] = std::move(purposes);
  j["search"] = {{"lo", c.search_lo}, {"hi", c.search_hi}, {"budget", c.search_budget}};
  j["copy_threshold"] = c.copy_threshold;
  j["corpus"] = {{"path", c.corpus_path}, {"format", corpus_format_name(c.corpus_format)}};
  j["iteration_sizes"] = c.iteration_sizes;
  j["seed"] = c.seed;
  j["backends"] = {{"policy", endpoint_to_json(c.policy)},
                   {"embedder", endpoint_to_json(c.embedder)},
                   {"judge", endpoint_to_json(c.judge)},
                   {"mock_script", c.mock_script},
                   {"retry_attempts", c.retry_attempts},
                   {"retry_backoff_ms", c.retry_backoff_ms},
                   {"max_in_flight", c.max_in_flight},
                   {"request_timeout_s", c.request_timeout_s}};
  j["review"] = {{"gate", c.review_gate}, {"samples", c.review_samples}};
  j["training"] = {{"hook", c.training_hook},
                   {"epochs", c.training.epochs},
                   {"learning_rate", c.training.learning_rate},
                   {"max_seq_length", c.training.max_seq_length},
                   {"optimizer", c.training.optimizer}};
  j["runtime"] = {{"out_dir", c.out_dir},
                  {"workers", c.workers},
                  {"checkpoint_every", c.checkpoint_every},
                  {"review_poll_ms", c.review_poll_ms},
                  {"review_timeout_s", c.review_timeout_s}};
  return j;
}

RunConfig config_from_json(const Json& patch) {
  if (!patch.is_object()) throw ValidationError("config: expected a JSON object");
  Json j = config_to_json(RunConfig{});
  check_known_keys(patch, j, "");
  merge(j, patch);
  RunConfig c;
  try {
    c.tau = j.at("tau").get<double>();
    c.n_principles = j.at("n_principles").get<int>();
    if (j.at("delta").is_string()) {
      if (j["delta"] != "auto") throw ValidationError("config: delta must be a number or \"auto\"");
      c.delta.reset();
    } else {
      c.delta = j["delta"].get<double>();
    }
    c.lambda = j.at("lambda").get<double>();
    c.tau_ppl = j.at("tau_ppl").get<double>();
    c.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.linkage = parse_linkage(j.at("linkage").get<std::string>());
    const auto vm = j.at("validator_mode").get<std::string>();
    if (vm != "rouge" && vm != "judge") throw ValidationError("config: unknown validator_mode '" + vm + "'");
    c.validator_mode = vm == "judge" ? ValidatorMode::kJudge : ValidatorMode::kRouge;
    c.judge_threshold = j.at("judge_threshold").get<int>();
    const auto sel = j.at("selection").get<std::string>();
    if (sel != "best_of_n" && sel != "soft") throw ValidationError("config: unknown selection '" + sel + "'");
    c.selection = sel == "soft" ? SelectionMode::kSoft : SelectionMode::kBestOfN;
    c.soft_temperature = j.at("soft_temperature").get<double>();
    for (auto p : kTunablePurposes) {
      const auto& pj = j.at("purposes").at(std::string(purpose_name(p)));
      c.purposes[p] = {pj.at("temperature").get<double>(), pj.at("max_tokens").get<int>()};
    }
    c.search_lo = j.at("search").at("lo").get<double>();
    c.search_hi = j.at("search").at("hi").get<double>();
    c.search_budget = j.at("search").at("budget").get<std::size_t>();
    c.copy_threshold = j.at("copy_threshold").get<double>();
    c.corpus_path = j.at("corpus").at("path").get<std::string>();
    c.corpus_format = parse_corpus_format(j.at("corpus").at("format").get<std::string>());
    c.iteration_sizes = j.at("iteration_sizes").get<std::vector<std::size_t>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& b = j.at("backends");
    c.policy = endpoint_from_json(b.at("policy"));
    c.embedder = endpoint_from_json(b.at("embedder"));
    c.judge = endpoint_from_json(b.at("judge"));
    c.mock_script = b.at("mock_script").get<std::string>();
    c.retry_attempts = b.at("retry_attempts").get<int>();
    c.retry_backoff_ms = b.at("retry_backoff_ms").get<int>();
    c.max_in_flight = b.at("max_in_flight").get<std::size_t>();
    c.request_timeout_s = b.at("request_timeout_s").get<double>();
    c.review_gate = j.at("review").at("gate").get<bool>();
    c.review_samples = j.at("review").at("samples").get<std::size_t>();
    const auto& t = j.at("training");
    c.training_hook = t.at("hook").get<std::string>();
    c.training.epochs = t.at("epochs").get<int>();
    c.training.learning_rate = t.at("learning_rate").get<double>();
    c.training.max_seq_length = t.at("max_seq_length").get<int>();
    c.training.optimizer = t.at("optimizer").get<std::string>();
    const auto& r = j.at("runtime");
    c.out_dir = r.at("out_dir").get<std::string>();
    c.workers = r.at("workers").get<std::size_t>();
    c.checkpoint_every = r.at("checkpoint_every").get<std::size_t>();
    c.review_poll_ms = r.at("review_poll_ms").get<int>();
    c.review_timeout_s = r.at("review_timeout_s").get<double>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  if (!(c.tau >= 0.0 && c.tau <= 1.0)) throw ValidationError("config: tau must lie in [0,1]");
  if (c.n_principles < 1) throw ValidationError("config: n_principles must be >= 1");
  if (c.delta && !(*c.delta > 0.0)) throw ValidationError("config: delta must be positive");
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw ValidationError("config: lambda must lie in [0,1]");
  if (!(c.soft_temperature > 0.0)) throw ValidationError("config: soft_temperature must be positive");
  if (!(c.search_lo < c.search_hi)) throw ValidationError("config: search.lo must be below search.hi");
  if (c.search_lo <= 0.0) throw ValidationError("config: search.lo must be positive");
  if (c.search_budget < 5) throw ValidationError("config: search.budget must be >= 5");
  if (!(c.copy_threshold >= 0.0 && c.copy_threshold <= 1.0)) {
    throw ValidationError("config: copy_threshold must lie in [0,1]");
  }
  if (c.retry_attempts < 1) throw ValidationError("config: retry_attempts must be >= 1");
  if (c.max_in_flight < 1) throw ValidationError("config: max_in_flight must be >= 1");
  if (c.judge_threshold < 1 || c.judge_threshold > 10) {
    throw ValidationError("config: judge_threshold must lie in 1..10");
  }
  for (const auto& [p, d] : c.purposes) {
    if (d.temperature < 0.0 || d.max_tokens < 1) {
      throw ValidationError("config: bad sampling settings for " + std::string(purpose_name(p)));
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

std::string config_digest(const RunConfig& c) {
  Json j = config_to_json(c);
  j.erase("runtime");
  j["training"].erase("hook");
  return sha256_hex(j.dump());
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f = {
        {"tau", "/tau", "number", "similarity gate threshold"},
        {"n-principles", "/n_principles", "integer", "principle proposals per sample"},
        {"delta", "/delta", "delta", "clustering distance threshold or 'auto'"},
        {"lambda", "/lambda", "number", "diversity weight of the threshold objective"},
        {"tau-ppl", "/tau_ppl", "number", "perplexity-gap tolerance of the ppl scheme"},
        {"scheme", "/scheme", "string", "label replacement: medoid, mode, ppl, none"},
        {"linkage", "/linkage", "string", "ward, complete or average"},
        {"validator-mode", "/validator_mode", "string", "rouge or judge"},
        {"judge-threshold", "/judge_threshold", "integer", "judge-mode gate score"},
        {"selection", "/selection", "string", "best_of_n or soft"},
        {"soft-temperature", "/soft_temperature", "number", "soft acceptance temperature"},
        {"search-lo", "/search/lo", "number", "lower bound of the threshold search"},
        {"search-hi", "/search/hi", "number", "upper bound of the threshold search"},
        {"search-budget", "/search/budget", "integer", "objective evaluations of the search"},
        {"copy-threshold", "/copy_threshold", "number", "precision threshold of the copy audit"},
        {"corpus", "/corpus/path", "string", "mining corpus JSONL"},
        {"corpus-format", "/corpus/format", "string", "prompt_gold or preference_pair"},
        {"iteration-sizes", "/iteration_sizes", "sizes", "comma-separated slice sizes"},
        {"seed", "/seed", "integer", "run seed"},
        {"policy-base-url", "/backends/policy/base_url", "string", "policy endpoint"},
        {"policy-model", "/backends/policy/model", "string", "policy model id"},
        {"policy-logprobs", "/backends/policy/logprobs", "bool", "policy supports logprobs"},
        {"embedder-base-url", "/backends/embedder/base_url", "string", "embedding endpoint"},
        {"embedder-model", "/backends/embedder/model", "string", "embedding model id"},
        {"embedder-logprobs", "/backends/embedder/logprobs", "bool", "embedder supports logprobs"},
        {"judge-base-url", "/backends/judge/base_url", "string", "judge endpoint"},
        {"judge-model", "/backends/judge/model", "string", "judge model id"},
        {"judge-logprobs", "/backends/judge/logprobs", "bool", "judge supports logprobs"},
        {"mock-script", "/backends/mock_script", "string", "scripted mock backend JSONL"},
        {"retry-attempts", "/backends/retry_attempts", "integer", "attempts per call"},
        {"retry-backoff-ms", "/backends/retry_backoff_ms", "integer", "initial retry backoff"},
        {"max-in-flight", "/backends/max_in_flight", "integer", "concurrent request cap"},
        {"request-timeout", "/backends/request_timeout_s", "number", "HTTP timeout in seconds"},
        {"review-gate", "/review/gate", "bool", "block on human review decisions"},
        {"review-samples", "/review/samples", "integer", "sample trajectories per cluster"},
        {"training-hook", "/training/hook", "string", "command run with the SFT path"},
        {"epochs", "/training/epochs", "integer", "training epochs"},
        {"learning-rate", "/training/learning_rate", "number", "training learning rate"},
        {"max-seq-length", "/training/max_seq_length", "integer", "training sequence length"},
        {"optimizer", "/training/optimizer", "string", "training optimizer"},
        {"out-dir", "/runtime/out_dir", "string", "run directory"},
        {"workers", "/runtime/workers", "integer", "parallel samples"},
        {"checkpoint-every", "/runtime/checkpoint_every", "integer", "samples between checkpoints"},
        {"review-poll-ms", "/runtime/review_poll_ms", "integer", "decisions file poll interval"},
        {"review-timeout", "/runtime/review_timeout_s", "number", "seconds to wait for decisions"},
    };
    for (auto p : kTunablePurposes) {
      const std::string name(purpose_name(p));
      f.push_back({"temperature-" + name, "/purposes/" + name + "/temperature", "number",
                   name + " sampling temperature"});
      f.push_back({"max-tokens-" + name, "/purposes/" + name + "/max_tokens", "integer",
                   name + " token cap"});
    }
    return f;
  }();
  return fields;
}

namespace {

Json parse_field_value(const ConfigField& field, const std::string& raw) {
  auto bad = [&]() { return ValidationError("--" + field.flag + ": invalid value '" + raw + "'"); };
  if (field.kind == "string") return raw;
  if (field.kind == "bool") {
    const auto v = to_lower_ascii(trim(raw));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw bad();
  }
  if (field.kind == "integer") {
    long long v = 0;
    const auto s = trim(raw);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw bad();
    if (field.pointer == "/seed") {
      if (v < 0) throw bad();
      return static_cast<std::uint64_t>(v);
    }
    return v;
  }
  if (field.kind == "number" || field.kind == "delta") {
    const auto s = trim(raw);
    if (field.kind == "delta" && s == "auto") return "auto";
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw bad();
      return v;
    } catch (const std::logic_error&) {
      throw bad();
    }
  }
  if (field.kind == "sizes") {
    Json list = Json::array();
    std::stringstream ss(raw);
    std::string part;
    while (std::getline(ss, part, ',')) {
      const auto s = trim(part);
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) throw bad();
      list.push_back(v);
    }
    return list;
  }
  throw bad();
}

}  // namespace

RunConfig apply_overrides(const RunConfig& base, const std::map<std::string, std::string>& values) {
  Json j = config_to_json(base);
  for (const auto& [flag, raw] : values) {
    const auto& fields = config_fields();
    const auto it = std::find_if(fields.begin(), fields.end(),
                                 [&](const ConfigField& f) { return f.flag == flag; });
    if (it == fields.end()) throw ValidationError("unknown config flag --" + flag);
    j[Json::json_pointer(it->pointer)] = parse_field_value(*it, raw);
  }
  return config_from_json(j);
}

}  // namespace refinery
