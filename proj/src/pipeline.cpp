#include "refinery/pipeline.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "refinery/constitution.hpp"
#include "refinery/discovery.hpp"
#include "refinery/sft.hpp"
#include "refinery/thresholdopt.hpp"

namespace refinery {

namespace fs = std::filesystem;

namespace {

constexpr int kManifestSchemaVersion = 1;

class StageLog {
 public:
  StageLog(fs::path file, std::string config_digest)
      : file_(std::move(file)), digest_(std::move(config_digest)) {
    if (!fs::exists(file_)) return;
    const auto j = read_json_file(file_);
    if (j.value("config_digest", std::string{}) != digest_) {
      throw ValidationError(file_.parent_path().string() +
                            " was produced with a different configuration");
    }
    done_ = j.at("completed").get<std::vector<std::string>>();
  }
  bool has(const std::string& stage) const {
    return std::find(done_.begin(), done_.end(), stage) != done_.end();
  }
  bool any() const { return !done_.empty(); }
  void mark(const std::string& stage) {
    if (!has(stage)) done_.push_back(stage);
    write_json_file(file_, Json{{"config_digest", digest_}, {"completed", done_}});
  }

 private:
  fs::path file_;
  std::string digest_;
  std::vector<std::string> done_;
};

void write_outcomes(const fs::path& path, std::span<const DiscoveryOutcome> outcomes) {
  std::vector<Json> rows;
  rows.reserve(outcomes.size());
  for (const auto& o : outcomes) rows.push_back(outcome_to_json(o));
  write_jsonl(path, rows);
}

struct SeenSets {
  SeenPrincipleSet raw;
  SeenPrincipleSet replaced;
};

SeenSets load_seen(const fs::path& path) {
  SeenSets s;
  if (!fs::exists(path)) return s;
  const auto j = read_json_file(path);
  s.raw = SeenPrincipleSet::from_json(j.at("raw"));
  s.replaced = SeenPrincipleSet::from_json(j.at("replaced"));
  return s;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

void refresh_run_summaries(const RunConfig& config, int upto) {
  std::vector<IterationMetrics> series;
  Json history = Json::array();
  for (int t = 1; t <= upto; ++t) {
    const auto path = iteration_dir(config, t) / "manifest.json";
    if (!fs::exists(path)) continue;
    const auto m = read_json_file(path);
    series.push_back(iteration_metrics_from_json(m.at("metrics")));
    history.push_back({{"iteration", t},
                       {"clusters", m.at("counts").at("clusters")},
                       {"constitution_size", m.at("counts").at("constitution_size")}});
  }
  const fs::path root(config.out_dir);
  write_file_atomic(root / "metrics.csv", metrics_csv(series));
  write_json_file(root / "constitution_history.json", Json{{"iterations", history}});
}

}  // namespace

fs::path iteration_dir(const RunConfig& config, int iteration) {
  char name[32];
  std::snprintf(name, sizeof name, "iter_%03d", iteration);
  return fs::path(config.out_dir) / name;
}

Json manifest_for_comparison(Json manifest) {
  manifest.erase("timing");
  return manifest;
}

std::vector<CorpusSlice> ingest(const RunConfig& config, LoadResult* load) {
  if (config.corpus_path.empty()) throw ValidationError("no corpus path configured");
  auto loaded = load_corpus(config.corpus_path, config.corpus_format);
  const auto unique = dedup_by_prompt(loaded.records);
  auto slices = partition(unique, config.iteration_sizes);
  if (load) *load = std::move(loaded);
  return slices;
}

std::vector<ReviewDecision> wait_for_decisions(
    const fs::path& path, std::chrono::milliseconds poll, std::chrono::milliseconds timeout,
    const std::function<void(std::chrono::milliseconds)>& sleeper) {
  std::chrono::milliseconds waited{0};
  for (;;) {
    if (fs::exists(path)) {
      Json doc;
      bool ready = true;
      try {
        doc = Json::parse(read_file(path));
      } catch (const Json::parse_error&) {
        ready = false;  // possibly mid-write; try again next poll
      }
      if (ready) return parse_decisions(doc);
    }
    if (waited >= timeout) {
      throw ReviewTimeout("no valid decisions at " + path.string() + " after " +
                          std::to_string(waited.count()) + " ms");
    }
    if (sleeper) sleeper(poll);
    else std::this_thread::sleep_for(poll);
    waited += poll;
  }
}

int run_training_hook(const std::string& command, const fs::path& sft_path) {
  const std::string line = command + " " + shell_quote(sft_path.string());
  const int status = std::system(line.c_str());
  if (status == -1) return 127;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return 1;
}

std::optional<Json> run_iteration(const RunConfig& config, int iteration, Gateway& gateway,
                                  const PipelineOptions& options) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  if (iteration < 1) throw ValidationError("iterations are 1-based");
  const fs::path dir = iteration_dir(config, iteration);
  auto log = [&](const std::string& msg) {
    if (options.log) options.log("iteration " + std::to_string(iteration) + ": " + msg);
  };

  if (iteration > 1) {
    const auto prev = iteration_dir(config, iteration - 1) / "manifest.json";
    if (!fs::exists(prev)) {
      throw ValidationError("iteration " + std::to_string(iteration - 1) + " has no manifest");
    }
    if (read_json_file(prev).at("status") != "complete") {
      throw ValidationError("iteration " + std::to_string(iteration - 1) + " did not complete");
    }
  }
  if (fs::exists(dir / "manifest.json")) {
    auto m = read_json_file(dir / "manifest.json");
    if (m.at("status") == "complete") {
      log("already complete");
      return m;
    }
  }
  fs::create_directories(dir);
  const std::string digest = config_digest(config);
  StageLog stages(dir / "stages.json", digest);
  const bool resumed = stages.any();
  gateway.ledger().clear();

  Json timing_stages = Json::object();
  auto stage_start = Clock::now();
  auto finish = [&](const std::string& stage) {
    stages.mark(stage);
    timing_stages[stage] =
        std::chrono::duration<double, std::milli>(Clock::now() - stage_start).count();
    stage_start = Clock::now();
    log(stage + " done");
    return options.stop_after_stage && *options.stop_after_stage == stage;
  };

  // slice
  CorpusSlice slice;
  if (!stages.has("slice")) {
    auto slices = ingest(config);
    if (static_cast<std::size_t>(iteration) > slices.size()) {
      throw ValidationError("no corpus slice configured for iteration " + std::to_string(iteration));
    }
    slice = std::move(slices[iteration - 1]);
    slice.iteration = iteration;
    if (slice.records.empty()) throw ValidationError("slice for iteration is empty");
    write_slice(dir / "slice.jsonl", slice);
    if (finish("slice")) return std::nullopt;
  } else {
    slice = read_slice(dir / "slice.jsonl");
  }

  // estep
  const auto discovery = config.discovery(iteration);
  std::vector<Trajectory> dprime;
  EstepStats stats;
  if (!stages.has("estep")) {
    EstepOptions eo;
    eo.workers = config.workers;
    eo.checkpoint_path = dir / "estep.checkpoint.json";
    eo.checkpoint_every = config.checkpoint_every;
    eo.stop_after = options.estep_stop_after;
    auto r = run_estep(slice, discovery, gateway, eo);
    if (!r.complete) return std::nullopt;
    dprime = std::move(r.trajectories);
    stats = r.stats;
    write_trajectories(dir / "trajectories.jsonl", dprime);
    write_outcomes(dir / "outcomes.jsonl", r.outcomes);
    write_json_file(dir / "estep_stats.json", estep_stats_to_json(stats));
    if (finish("estep")) return std::nullopt;
  } else {
    dprime = read_trajectories(dir / "trajectories.jsonl");
    stats = estep_stats_from_json(read_json_file(dir / "estep_stats.json"));
  }

  const bool constrained = config.scheme != Scheme::kNone;
  std::vector<Embedding> embeddings;
  auto ensure_embeddings = [&] {
    if (embeddings.empty() && !dprime.empty()) embeddings = embed_labels(dprime, gateway);
  };

  // delta
  const std::uint64_t search_seed = mix_seed(config.seed, "delta:" + std::to_string(iteration));
  Json delta_info;
  if (!stages.has("delta")) {
    delta_info = {{"mode", config.delta ? "manual" : "auto"}, {"value", nullptr}};
    if (config.delta) {
      delta_info["value"] = *config.delta;
    } else if (constrained && !dprime.empty()) {
      ensure_embeddings();
      const auto trace = optimize_delta(embeddings, config.search_lo, config.search_hi,
                                        config.search_budget, search_seed, config.lambda,
                                        config.linkage);
      write_json_file(dir / "search_trace.json", search_trace_to_json(trace));
      if (!trace.best_delta) throw ValidationError("threshold search: every evaluation failed");
      delta_info["value"] = *trace.best_delta;
    }
    write_json_file(dir / "delta.json", delta_info);
    if (finish("delta")) return std::nullopt;
  } else {
    delta_info = read_json_file(dir / "delta.json");
  }
  const double delta = delta_info["value"].is_number() ? delta_info["value"].get<double>() : 0.0;

  // cluster
  Constitution constitution;
  if (!stages.has("cluster")) {
    if (constrained) {
      ensure_embeddings();
      constitution = build_constitution(dprime, embeddings, delta, config.scheme, config.linkage,
                                        iteration, gateway.embedder_id());
      write_json_file(dir / "constitution.json", constitution_to_json(constitution));
    }
    if (finish("cluster")) return std::nullopt;
  } else if (constrained) {
    constitution = constitution_from_json(read_json_file(dir / "constitution.json"));
  }

  // replace
  std::vector<Trajectory> replaced;
  if (!stages.has("replace")) {
    if (constrained) {
      ReplaceOptions ro;
      ro.tau_ppl = config.tau_ppl;
      ro.workers = config.workers;
      auto rr = replace_labels(dprime, constitution, &gateway, ro);
      replaced = std::move(rr.trajectories);
      if (config.scheme == Scheme::kPpl) {
        std::vector<Json> rows;
        for (const auto& c : rr.ppl_checks) {
          rows.push_back({{"record_id", c.record_id},
                          {"candidate_index", c.candidate_index},
                          {"original_label", c.original_label},
                          {"representative", c.representative},
                          {"ppl_original", c.ppl_original},
                          {"ppl_representative", c.ppl_representative},
                          {"kept", c.kept}});
        }
        write_jsonl(dir / "ppl_checks.jsonl", rows);
      }
    } else {
      replaced = dprime;
    }
    write_trajectories(dir / "dataset.replaced.jsonl", replaced);
    if (finish("replace")) return std::nullopt;
  } else {
    replaced = read_trajectories(dir / "dataset.replaced.jsonl");
  }

  // review
  const bool reviewed = config.review_gate && constrained;
  Constitution approved = constitution;
  std::vector<Trajectory> dtilde;
  if (!stages.has("review")) {
    if (reviewed) {
      BundleOptions bo;
      bo.samples_per_cluster = config.review_samples;
      export_review_bundle(constitution, dprime, dir / "review_bundle.json", bo);
      log("waiting for " + (dir / "decisions.json").string());
      const auto decisions = wait_for_decisions(
          dir / "decisions.json", std::chrono::milliseconds(config.review_poll_ms),
          std::chrono::milliseconds(static_cast<long long>(config.review_timeout_s * 1000.0)),
          options.sleeper);
      approved = apply_review(constitution, decisions);
      dtilde = apply_review_to_dataset(replaced, approved);
      Json aj = constitution_to_json(approved);
      aj["provenance"] = {{"trajectories_sha256", sha256_hex(read_file(dir / "trajectories.jsonl"))},
                          {"decisions_sha256", sha256_hex(read_file(dir / "decisions.json"))}};
      write_json_file(dir / "constitution.approved.json", aj);
    } else {
      dtilde = replaced;
    }
    write_trajectories(dir / "dataset.jsonl", dtilde);
    if (finish("review")) return std::nullopt;
  } else {
    dtilde = read_trajectories(dir / "dataset.jsonl");
    if (reviewed) approved = constitution_from_json(read_json_file(dir / "constitution.approved.json"));
  }

  // metrics
  IterationMetrics metrics;
  if (!stages.has("metrics")) {
    auto seen = iteration > 1 ? load_seen(iteration_dir(config, iteration - 1) / "seen_principles.json")
                              : SeenSets{};
    metrics.iteration = iteration;
    metrics.refinement_rate = refinement_rate(stats);
    metrics.principle_discovery_rate = principle_discovery_rate(dprime, seen.raw);
    metrics.principle_discovery_rate_replaced = principle_discovery_rate(dtilde, seen.replaced);
    metrics.constitution_size = constrained ? approved.clusters.size() : 0;
    metrics.copy = copy_precision_report(dprime, config.copy_threshold);
    metrics.advantage = advantage_stats(dprime);
    seen.raw.commit(dprime);
    seen.replaced.commit(dtilde);
    write_json_file(dir / "seen_principles.json",
                    Json{{"raw", seen.raw.to_json()}, {"replaced", seen.replaced.to_json()}});
    write_json_file(dir / "metrics.json", iteration_metrics_to_json(metrics));
    if (finish("metrics")) return std::nullopt;
  } else {
    metrics = iteration_metrics_from_json(read_json_file(dir / "metrics.json"));
  }

  // sft
  std::size_t sft_examples = 0;
  if (!stages.has("sft")) {
    if (!dtilde.empty()) sft_examples = export_sft(dtilde, dir / "sft.jsonl", config.training);
    if (finish("sft")) return std::nullopt;
  } else if (fs::exists(dir / "sft.jsonl")) {
    sft_examples = dtilde.size();
  }

  // hook
  std::string status = "complete";
  Json hook = nullptr;
  if (!config.training_hook.empty() && sft_examples > 0) {
    if (!stages.has("hook")) {
      log("running training hook");
      const int code = run_training_hook(config.training_hook, dir / "sft.jsonl");
      hook = {{"exit_code", code}};
      write_json_file(dir / "hook.json", hook);
      if (code != 0) {
        status = "failed_after_export";
      } else if (finish("hook")) {
        return std::nullopt;
      }
    } else {
      hook = read_json_file(dir / "hook.json");
    }
  } else if (!stages.has("hook")) {
    if (finish("hook")) return std::nullopt;
  }

  write_file_atomic(dir / "calls.jsonl", gateway.ledger().to_jsonl());

  Json counts;
  counts["slice"] = slice.records.size();
  counts["no_refinement"] = stats.no_refinement;
  counts["refined"] = stats.refined;
  counts["discarded"] = stats.discarded;
  counts["discarded_by_reason"] = stats.discarded_by_reason;
  counts["trajectories"] = dprime.size();
  counts["dataset"] = dtilde.size();
  counts["sft_examples"] = sft_examples;
  counts["clusters"] = constitution.clusters.size();
  counts["constitution_size"] = metrics.constitution_size;

  Json artifacts;
  auto add = [&](const char* key, const char* file) {
    artifacts[key] = fs::exists(dir / file) ? Json(file) : Json(nullptr);
  };
  add("slice", "slice.jsonl");
  add("trajectories", "trajectories.jsonl");
  add("outcomes", "outcomes.jsonl");
  add("search_trace", "search_trace.json");
  add("constitution", "constitution.json");
  add("review_bundle", "review_bundle.json");
  add("decisions", "decisions.json");
  add("approved_constitution", "constitution.approved.json");
  add("ppl_checks", "ppl_checks.jsonl");
  add("dataset", "dataset.jsonl");
  add("sft", "sft.jsonl");
  add("sft_manifest", "sft.jsonl.manifest.json");
  add("calls", "calls.jsonl");

  Json manifest;
  manifest["schema_version"] = kManifestSchemaVersion;
  manifest["iteration"] = iteration;
  manifest["status"] = status;
  manifest["config_digest"] = digest;
  manifest["slice_digest"] = slice.digest;
  manifest["seeds"] = {{"run", config.seed},
                       {"estep", discovery.seed},
                       {"delta_search", delta_info["mode"] == "auto" ? Json(search_seed) : Json(nullptr)}};
  manifest["delta"] = delta_info;
  manifest["scheme"] = scheme_name(config.scheme);
  manifest["review"] = reviewed ? Json{{"decisions", approved.decisions.size()},
                                       {"status", "approved"}}
                                : Json(nullptr);
  manifest["counts"] = counts;
  manifest["metrics"] = iteration_metrics_to_json(metrics);
  manifest["training_hook"] = hook;
  manifest["artifacts"] = artifacts;
  Json calls = Json::object();
  for (const auto& [p, n] : gateway.ledger().counts_by_purpose()) calls[std::string(purpose_name(p))] = n;
  manifest["timing"] = {
      {"wall_clock_ms", std::chrono::duration<double, std::milli>(Clock::now() - started).count()},
      {"stages_ms", timing_stages},
      {"resumed", resumed},
      {"calls", calls}};
  write_json_file(dir / "manifest.json", manifest);
  refresh_run_summaries(config, iteration);
  log("manifest written, status " + status);
  return manifest;
}

std::vector<Json> run_loop(const RunConfig& config, int iterations, Gateway& gateway,
                           const PipelineOptions& options) {
  std::vector<Json> manifests;
  for (int t = 1; t <= iterations; ++t) {
    auto m = run_iteration(config, t, gateway, options);
    if (!m) break;
    manifests.push_back(*m);
    if (m->at("status") != "complete") break;
  }
  return manifests;
}

}  // namespace refinery
