#include "refinery/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

#include "refinery/judge.hpp"
#include "refinery/templates.hpp"
#include "refinery/textsim.hpp"

namespace refinery {

std::string_view outcome_status_name(OutcomeStatus s) {
  switch (s) {
    case OutcomeStatus::kNoRefinementNeeded: return "no_refinement_needed";
    case OutcomeStatus::kRefined: return "refined";
    case OutcomeStatus::kDiscarded: return "discarded";
  }
  return "unknown";
}

namespace {

OutcomeStatus parse_status(std::string_view s) {
  if (s == "no_refinement_needed") return OutcomeStatus::kNoRefinementNeeded;
  if (s == "refined") return OutcomeStatus::kRefined;
  if (s == "discarded") return OutcomeStatus::kDiscarded;
  throw ParseError("unknown outcome status '" + std::string(s) + "'");
}

Json candidate_to_json(const CandidateRefinement& c) {
  Json j;
  j["index"] = c.index;
  j["principle_raw"] = c.principle_raw;
  j["principle_label"] = c.principle_label;
  j["critique"] = c.critique;
  j["refined"] = c.refined;
  j["f_refined"] = c.f_refined;
  return j;
}

CandidateRefinement candidate_from_json(const Json& j) {
  CandidateRefinement c;
  c.index = j.at("index").get<int>();
  c.principle_raw = j.at("principle_raw").get<std::string>();
  c.principle_label = j.at("principle_label").get<std::string>();
  c.critique = j.at("critique").get<std::string>();
  c.refined = j.at("refined").get<std::string>();
  c.f_refined = j.at("f_refined").get<double>();
  return c;
}

// How candidate and initial responses are scored in one discovery run.
struct Scorer {
  // Returns f in [0, 1]; may advance the call context (judge mode).
  std::function<double(const std::string&, CallContext&)> score;
  std::function<bool(double f_initial)> needs_refinement;
};

Trajectory make_trajectory(const PromptRecord& record, const DiscoveryConfig& config,
                           const std::string& initial, double f_initial,
                           const CandidateRefinement& c) {
  Trajectory t;
  t.record_id = record.id;
  t.iteration = config.iteration;
  t.prompt = record.prompt;
  t.initial = initial;
  t.principle_label = c.principle_label;
  t.principle_raw = c.principle_raw;
  t.critique = c.critique;
  t.refined = c.refined;
  t.f_initial = f_initial;
  t.f_refined = c.f_refined;
  t.advantage = c.f_refined - f_initial;
  t.golds = record.golds;
  t.candidate_index = c.index;
  return t;
}

std::string generate(Gateway& gateway, Purpose purpose, std::vector<Message> messages,
                     CallContext& ctx) {
  auto req = gateway.make_request(purpose, std::move(messages), ctx);
  ++ctx.call_index;
  return trim(strip_think_blocks(gateway.complete(req)));
}

DiscoveryOutcome run_discovery(const PromptRecord& record, const DiscoveryConfig& config,
                               Gateway& gateway, const Scorer& scorer) {
  if (config.n_principles < 1) throw ContractViolation("discover: N must be >= 1");
  DiscoveryOutcome out;
  out.record_id = record.id;
  CallContext ctx{record.id, 0};

  auto discard = [&](std::string_view reason, std::string detail = {}) {
    out.status = OutcomeStatus::kDiscarded;
    out.reason = std::string(reason);
    out.detail = std::move(detail);
    return out;
  };

  try {
    const auto initial = generate(gateway, Purpose::kInitial, render_initial_prompt(record.prompt), ctx);
    out.f_initial = scorer.score(initial, ctx);
    if (!scorer.needs_refinement(out.f_initial)) {
      out.status = OutcomeStatus::kNoRefinementNeeded;
      return out;
    }

    struct Proposal {
      int index;
      std::string raw;
      std::string label;
    };
    std::vector<Proposal> proposals;
    const auto principle_msgs = render_principle_prompt(record.prompt, initial, record.golds);
    for (int j = 0; j < config.n_principles; ++j) {
      auto raw = generate(gateway, Purpose::kPrinciple, principle_msgs, ctx);
      auto parsed = parse_principle(raw);
      if (auto* p = std::get_if<PrincipleLabel>(&parsed)) {
        proposals.push_back({j, std::move(raw), p->label});
      }
    }
    if (proposals.empty()) return discard(discard_reason::kNoPrinciple);

    for (auto& p : proposals) {
      CandidateRefinement c;
      c.index = p.index;
      c.principle_raw = std::move(p.raw);
      c.principle_label = std::move(p.label);
      c.critique = generate(gateway, Purpose::kCritique,
                            render_critique_prompt(record.prompt, initial, c.principle_label), ctx);
      c.refined = generate(gateway, Purpose::kRefine,
                           render_refine_prompt(record.prompt, initial, c.critique, c.principle_label),
                           ctx);
      out.candidates.push_back(std::move(c));
    }
    for (auto& c : out.candidates) c.f_refined = scorer.score(c.refined, ctx);

    const auto best = select_best(out.candidates);
    if (!(out.candidates[best].f_refined > out.f_initial)) {
      return discard(discard_reason::kNoImprovement);
    }
    out.status = OutcomeStatus::kRefined;
    out.trajectory = make_trajectory(record, config, initial, out.f_initial, out.candidates[best]);

    if (config.selection == SelectionMode::kSoft) {
      std::mt19937_64 rng(mix_seed(config.seed, record.id));
      for (auto pos : soft_accept(out.candidates, out.f_initial, config.soft_temperature, rng)) {
        if (pos == best) continue;
        out.also_accepted.push_back(
            make_trajectory(record, config, initial, out.f_initial, out.candidates[pos]));
      }
    }
    return out;
  } catch (const ContextOverflowError& e) {
    return discard(discard_reason::kContextOverflow, e.what());
  } catch (const TransportError& e) {
    return discard(discard_reason::kTransport, e.what());
  } catch (const JudgeError& e) {
    return discard(discard_reason::kJudge, e.what());
  } catch (const BackendError& e) {
    return discard(discard_reason::kBackend, e.what());
  }
}

}  // namespace

Json trajectory_to_json(const Trajectory& t) {
  Json j;
  j["record_id"] = t.record_id;
  j["iteration"] = t.iteration;
  j["prompt"] = t.prompt;
  j["initial"] = t.initial;
  j["principle_label"] = t.principle_label;
  j["principle_raw"] = t.principle_raw;
  j["critique"] = t.critique;
  j["refined"] = t.refined;
  j["f_initial"] = t.f_initial;
  j["f_refined"] = t.f_refined;
  j["advantage"] = t.advantage;
  j["golds"] = t.golds;
  j["candidate_index"] = t.candidate_index;
  if (t.cluster_id) j["cluster_id"] = *t.cluster_id;
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory t;
  t.record_id = j.at("record_id").get<std::string>();
  t.iteration = j.at("iteration").get<int>();
  t.prompt = j.at("prompt").get<std::string>();
  t.initial = j.at("initial").get<std::string>();
  t.principle_label = j.at("principle_label").get<std::string>();
  t.principle_raw = j.value("principle_raw", std::string{});
  t.critique = j.value("critique", std::string{});
  t.refined = j.at("refined").get<std::string>();
  t.f_initial = j.at("f_initial").get<double>();
  t.f_refined = j.at("f_refined").get<double>();
  t.advantage = j.at("advantage").get<double>();
  if (j.contains("golds")) t.golds = j["golds"].get<std::vector<std::string>>();
  t.candidate_index = j.value("candidate_index", 0);
  if (j.contains("cluster_id")) t.cluster_id = j["cluster_id"].get<int>();
  return t;
}

void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> ts) {
  std::vector<Json> rows;
  rows.reserve(ts.size());
  for (const auto& t : ts) rows.push_back(trajectory_to_json(t));
  write_jsonl(path, rows);
}

std::vector<Trajectory> read_trajectories(const std::filesystem::path& path) {
  std::vector<Trajectory> out;
  for_each_jsonl(path, [&](std::size_t line, Json row) {
    try {
      out.push_back(trajectory_from_json(row));
    } catch (const Json::exception& e) {
      throw ParseError(e.what(), line);
    }
  });
  return out;
}

Json outcome_to_json(const DiscoveryOutcome& o) {
  Json j;
  j["record_id"] = o.record_id;
  j["status"] = outcome_status_name(o.status);
  if (!o.reason.empty()) j["reason"] = o.reason;
  if (!o.detail.empty()) j["detail"] = o.detail;
  j["f_initial"] = o.f_initial;
  if (o.trajectory) j["trajectory"] = trajectory_to_json(*o.trajectory);
  if (!o.also_accepted.empty()) {
    j["also_accepted"] = Json::array();
    for (const auto& t : o.also_accepted) j["also_accepted"].push_back(trajectory_to_json(t));
  }
  j["candidates"] = Json::array();
  for (const auto& c : o.candidates) j["candidates"].push_back(candidate_to_json(c));
  return j;
}

DiscoveryOutcome outcome_from_json(const Json& j) {
  DiscoveryOutcome o;
  o.record_id = j.at("record_id").get<std::string>();
  o.status = parse_status(j.at("status").get<std::string>());
  o.reason = j.value("reason", std::string{});
  o.detail = j.value("detail", std::string{});
  o.f_initial = j.value("f_initial", 0.0);
  if (j.contains("trajectory")) o.trajectory = trajectory_from_json(j["trajectory"]);
  if (j.contains("also_accepted")) {
    for (const auto& t : j["also_accepted"]) o.also_accepted.push_back(trajectory_from_json(t));
  }
  if (j.contains("candidates")) {
    for (const auto& c : j["candidates"]) o.candidates.push_back(candidate_from_json(c));
  }
  return o;
}

std::size_t select_best(std::span<const CandidateRefinement> candidates) {
  if (candidates.empty()) throw ContractViolation("select_best: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (candidates[i].f_refined > candidates[best].f_refined) best = i;
  }
  return best;
}

std::vector<double> soft_accept_probabilities(std::span<const CandidateRefinement> candidates,
                                              double f_initial, double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("soft_accept: temperature must be > 0");
  std::vector<double> gains(candidates.size());
  double s_max = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    gains[i] = std::max(0.0, candidates[i].f_refined - f_initial);
    s_max = std::max(s_max, gains[i]);
  }
  std::vector<double> probs(candidates.size(), 0.0);
  if (s_max <= 0.0) return probs;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (gains[i] > 0.0) probs[i] = std::exp((std::log(gains[i]) - std::log(s_max)) / temperature);
  }
  return probs;
}

std::vector<std::size_t> soft_accept(std::span<const CandidateRefinement> candidates,
                                     double f_initial, double temperature,
                                     std::mt19937_64& rng) {
  const auto probs = soft_accept_probabilities(candidates, f_initial, temperature);
  std::vector<std::size_t> accepted;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    if (unit_double(rng()) < probs[i]) accepted.push_back(i);
  }
  return accepted;
}

DiscoveryOutcome discover_sample(const PromptRecord& record, const DiscoveryConfig& config,
                                 Gateway& gateway) {
  if (config.validator_mode == ValidatorMode::kJudge) {
    return discover_sample_judged(record, config, gateway);
  }
  Scorer scorer;
  scorer.score = [&](const std::string& text, CallContext&) { return similarity(text, record.golds); };
  scorer.needs_refinement = [&](double f) { return f < config.tau; };
  return run_discovery(record, config, gateway, scorer);
}

DiscoveryOutcome discover_sample_judged(const PromptRecord& record,
                                        const DiscoveryConfig& config, Gateway& gateway) {
  std::string reference;
  for (std::size_t i = 0; i < record.golds.size(); ++i) {
    if (i) reference += "\n\n";
    reference += record.golds[i];
  }
  Scorer scorer;
  scorer.score = [&](const std::string& text, CallContext& ctx) {
    return judge_similarity(gateway, record.prompt, reference, text, ctx).score / 10.0;
  };
  scorer.needs_refinement = [&](double f) {
    return static_cast<int>(std::lround(f * 10.0)) < config.judge_threshold;
  };
  return run_discovery(record, config, gateway, scorer);
}

Json estep_stats_to_json(const EstepStats& s) {
  Json j;
  j["total"] = s.total;
  j["no_refinement"] = s.no_refinement;
  j["refined"] = s.refined;
  j["discarded"] = s.discarded;
  j["discarded_by_reason"] = Json::object();
  for (const auto& [k, v] : s.discarded_by_reason) j["discarded_by_reason"][k] = v;
  j["trajectories"] = s.trajectories;
  j["refinement_rate"] = s.refinement_rate;
  return j;
}

EstepStats estep_stats_from_json(const Json& j) {
  EstepStats s;
  s.total = j.at("total").get<std::size_t>();
  s.no_refinement = j.at("no_refinement").get<std::size_t>();
  s.refined = j.at("refined").get<std::size_t>();
  s.discarded = j.at("discarded").get<std::size_t>();
  for (const auto& [k, v] : j.at("discarded_by_reason").items()) {
    s.discarded_by_reason[k] = v.get<std::size_t>();
  }
  s.trajectories = j.value("trajectories", s.refined);
  s.refinement_rate = j.at("refinement_rate").get<double>();
  return s;
}

EstepStats summarize_outcomes(std::span<const DiscoveryOutcome> outcomes) {
  EstepStats s;
  s.total = outcomes.size();
  for (const auto& o : outcomes) {
    switch (o.status) {
      case OutcomeStatus::kNoRefinementNeeded: ++s.no_refinement; break;
      case OutcomeStatus::kRefined:
        ++s.refined;
        s.trajectories += 1 + o.also_accepted.size();
        break;
      case OutcomeStatus::kDiscarded:
        ++s.discarded;
        ++s.discarded_by_reason[o.reason];
        break;
    }
  }
  s.refinement_rate = s.total ? static_cast<double>(s.refined) / static_cast<double>(s.total) : 0.0;
  return s;
}

namespace {

struct Checkpoint {
  std::string slice_digest;
  std::size_t completed = 0;
  std::uint64_t seed = 0;
  std::vector<DiscoveryOutcome> outcomes;
};

void write_checkpoint(const std::filesystem::path& path, const CorpusSlice& slice,
                      const DiscoveryConfig& config,
                      std::span<const std::optional<DiscoveryOutcome>> results,
                      std::size_t prefix) {
  Json j;
  j["slice_digest"] = slice.digest;
  j["completed"] = prefix;
  j["rng_seed"] = config.seed;
  j["outcomes"] = Json::array();
  for (std::size_t i = 0; i < prefix; ++i) j["outcomes"].push_back(outcome_to_json(*results[i]));
  write_file_atomic(path, dump_compact(j) + "\n");
}

std::optional<Checkpoint> load_checkpoint(const std::filesystem::path& path,
                                          const CorpusSlice& slice, const DiscoveryConfig& config) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto j = read_json_file(path);
  Checkpoint cp;
  cp.slice_digest = j.at("slice_digest").get<std::string>();
  cp.completed = j.at("completed").get<std::size_t>();
  cp.seed = j.at("rng_seed").get<std::uint64_t>();
  if (cp.slice_digest != slice.digest || cp.seed != config.seed) return std::nullopt;
  for (const auto& o : j.at("outcomes")) cp.outcomes.push_back(outcome_from_json(o));
  if (cp.outcomes.size() != cp.completed || cp.completed > slice.records.size()) {
    throw ValidationError("corrupt E-step checkpoint " + path.string());
  }
  return cp;
}

}  // namespace

EstepResult run_estep(const CorpusSlice& slice, const DiscoveryConfig& config, Gateway& gateway,
                      const EstepOptions& options) {
  if (slice.records.empty()) throw ContractViolation("run_estep: empty slice");
  const std::size_t n = slice.records.size();
  const std::size_t limit = options.stop_after ? std::min(*options.stop_after, n) : n;

  EstepResult result;
  std::vector<std::optional<DiscoveryOutcome>> results(n);
  std::size_t start = 0;
  if (options.checkpoint_path) {
    if (auto cp = load_checkpoint(*options.checkpoint_path, slice, config)) {
      for (std::size_t i = 0; i < cp->completed; ++i) results[i] = std::move(cp->outcomes[i]);
      start = cp->completed;
      result.resumed_from = start;
    }
  }

  std::mutex mu;
  std::size_t prefix = start;  // contiguous completed prefix
  std::size_t last_checkpoint = start;
  std::atomic<std::size_t> next{start};
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      if (options.cancel && options.cancel->load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= limit) return;
      DiscoveryOutcome outcome;
      try {
        outcome = discover_sample(slice.records[i], config, gateway);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(limit);
        return;
      }
      std::lock_guard lock(mu);
      results[i] = std::move(outcome);
      while (prefix < n && results[prefix]) ++prefix;
      if (options.checkpoint_path && options.checkpoint_every > 0 &&
          prefix >= last_checkpoint + options.checkpoint_every) {
        write_checkpoint(*options.checkpoint_path, slice, config, results, prefix);
        last_checkpoint = prefix;
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  if (options.checkpoint_path && prefix != last_checkpoint) {
    write_checkpoint(*options.checkpoint_path, slice, config, results, prefix);
  }

  result.complete = prefix == n;
  for (std::size_t i = 0; i < prefix; ++i) result.outcomes.push_back(std::move(*results[i]));
  result.stats = summarize_outcomes(result.outcomes);

  for (const auto& o : result.outcomes) {
    if (!o.trajectory) continue;
    result.trajectories.push_back(*o.trajectory);
    for (const auto& t : o.also_accepted) result.trajectories.push_back(t);
  }
  // Primary first within a record (stable), records by id.
  std::stable_sort(result.trajectories.begin(), result.trajectories.end(),
                   [](const Trajectory& a, const Trajectory& b) { return a.record_id < b.record_id; });
  return result;
}

}  // namespace refinery
