#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "refinery/backends.hpp"
#include "refinery/config.hpp"
#include "refinery/constitution.hpp"
#include "refinery/corpus.hpp"
#include "refinery/discovery.hpp"
#include "refinery/metrics.hpp"
#include "refinery/pipeline.hpp"
#include "refinery/sft.hpp"
#include "refinery/thresholdopt.hpp"

namespace fs = std::filesystem;
using namespace refinery;

namespace {

std::string env_or(const std::string& role, const std::string& key) {
  if (const char* v = std::getenv(("REFINERY_" + role + "_" + key).c_str()); v && *v) return v;
  if (const char* v = std::getenv(("REFINERY_" + key).c_str()); v && *v) return v;
  return {};
}

std::shared_ptr<Backend> http_backend(const std::string& role, const EndpointConfig& e,
                                      const RunConfig& config) {
  HttpBackendOptions o;
  o.base_url = e.base_url.empty() ? env_or(role, "BASE_URL") : e.base_url;
  o.model = e.model.empty() ? env_or(role, "MODEL") : e.model;
  o.api_key = env_or(role, "API_KEY");
  o.timeout_seconds = static_cast<int>(config.request_timeout_s);
  o.supports_logprobs = e.logprobs;
  if (o.base_url.empty() || o.model.empty()) {
    throw ValidationError("no endpoint for " + role + " (set REFINERY_" + role +
                          "_BASE_URL / _MODEL or use --mock-script)");
  }
  return std::make_shared<HttpBackend>(o);
}

std::unique_ptr<Gateway> make_gateway(const RunConfig& config) {
  if (!config.mock_script.empty()) {
    return std::make_unique<Gateway>(ScriptedBackend::from_file(config.mock_script),
                                     config.gateway_options());
  }
  auto policy = http_backend("POLICY", config.policy, config);
  auto embedder = http_backend("EMBEDDER", config.embedder, config);
  auto judge = config.validator_mode == ValidatorMode::kJudge || !config.judge.base_url.empty() ||
                       !env_or("JUDGE", "BASE_URL").empty()
                   ? http_backend("JUDGE", config.judge, config)
                   : policy;
  return std::make_unique<Gateway>(policy, embedder, judge, config.gateway_options());
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

int exit_code(ExitCode c) { return static_cast<int>(c); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Principle discovery, constitution clustering and SFT export pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "run configuration JSON")->check(CLI::ExistingFile);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");

  std::map<std::string, std::string> overrides;
  for (const auto& f : config_fields()) {
    app.add_option_function<std::string>(
        "--" + f.flag, [&overrides, flag = f.flag](const std::string& v) { overrides[flag] = v; },
        f.help);
  }

  auto* ingest_cmd = app.add_subcommand("ingest", "deduplicate and partition the corpus");
  auto* discover_cmd = app.add_subcommand("discover", "run the E-step over a slice");
  auto* cluster_cmd = app.add_subcommand("cluster", "cluster labels and replace them");
  auto* optimize_cmd = app.add_subcommand("optimize-threshold", "search the clustering threshold");
  auto* export_review_cmd = app.add_subcommand("export-review", "write a review bundle");
  auto* apply_review_cmd = app.add_subcommand("apply-review", "apply review decisions");
  auto* export_sft_cmd = app.add_subcommand("export-sft", "write SFT examples");
  auto* metrics_cmd = app.add_subcommand("metrics", "report metrics");
  auto* run_cmd = app.add_subcommand("run", "run one iteration");
  auto* loop_cmd = app.add_subcommand("loop", "run several iterations");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  int iteration = 1;
  std::string slice_path, trajectories_path, dataset_path, constitution_path, decisions_path, out_path,
      out_dataset, outcomes_path, checkpoint_path;
  int iterations = 1;

  discover_cmd->add_option("--slice", slice_path, "slice JSONL")->required();
  discover_cmd->add_option("--out", out_path, "trajectories JSONL")->required();
  discover_cmd->add_option("--outcomes", outcomes_path, "per-sample outcomes JSONL");
  discover_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file for resume");
  discover_cmd->add_option("--iteration", iteration, "iteration number");

  cluster_cmd->add_option("--trajectories", trajectories_path, "D' JSONL")->required();
  cluster_cmd->add_option("--out", out_path, "constitution JSON")->required();
  cluster_cmd->add_option("--out-dataset", out_dataset, "relabelled dataset JSONL")->required();
  cluster_cmd->add_option("--iteration", iteration, "iteration number");

  optimize_cmd->add_option("--trajectories", trajectories_path, "D' JSONL")->required();
  optimize_cmd->add_option("--out", out_path, "search trace JSON")->required();

  export_review_cmd->add_option("--constitution", constitution_path)->required();
  export_review_cmd->add_option("--trajectories", trajectories_path, "D' JSONL")->required();
  export_review_cmd->add_option("--out", out_path, "bundle JSON")->required();

  apply_review_cmd->add_option("--constitution", constitution_path)->required();
  apply_review_cmd->add_option("--decisions", decisions_path)->required();
  apply_review_cmd->add_option("--dataset", dataset_path, "relabelled dataset JSONL")->required();
  apply_review_cmd->add_option("--out", out_path, "approved constitution JSON")->required();
  apply_review_cmd->add_option("--out-dataset", out_dataset, "reviewed dataset JSONL")->required();

  export_sft_cmd->add_option("--dataset", dataset_path, "dataset JSONL")->required();
  export_sft_cmd->add_option("--out", out_path, "SFT JSONL")->required();

  metrics_cmd->add_option("--trajectories", trajectories_path, "summarise one D' file instead");

  run_cmd->add_option("--iteration", iteration, "iteration number")->required();
  loop_cmd->add_option("--iterations", iterations, "number of iterations")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    config = apply_overrides(config, overrides);
    PipelineOptions popts;
    if (verbose) popts.log = [](const std::string& m) { std::cerr << m << "\n"; };

    if (ingest_cmd->parsed()) {
      LoadResult load;
      const auto slices = ingest(config, &load);
      Json summary{{"records", load.records.size()}, {"skipped", load.skipped}};
      Json sl = Json::array();
      for (std::size_t i = 0; i < slices.size(); ++i) {
        auto s = slices[i];
        s.iteration = static_cast<int>(i) + 1;
        const auto path = fs::path(config.out_dir) / "slices" / ("slice_" + std::to_string(i + 1) + ".jsonl");
        write_slice(path, s);
        sl.push_back({{"iteration", s.iteration}, {"records", s.records.size()},
                      {"digest", s.digest}, {"path", path.string()}});
      }
      summary["slices"] = sl;
      print(summary);
      return 0;
    }
    if (discover_cmd->parsed()) {
      auto gateway = make_gateway(config);
      auto slice = read_slice(slice_path);
      EstepOptions eo;
      eo.workers = config.workers;
      eo.checkpoint_every = config.checkpoint_every;
      if (!checkpoint_path.empty()) eo.checkpoint_path = checkpoint_path;
      const auto r = run_estep(slice, config.discovery(iteration), *gateway, eo);
      write_trajectories(out_path, r.trajectories);
      if (!outcomes_path.empty()) {
        std::vector<Json> rows;
        for (const auto& o : r.outcomes) rows.push_back(outcome_to_json(o));
        write_jsonl(outcomes_path, rows);
      }
      print(estep_stats_to_json(r.stats));
      return 0;
    }
    if (cluster_cmd->parsed()) {
      if (config.scheme == Scheme::kNone) throw ValidationError("cluster: scheme is none");
      auto gateway = make_gateway(config);
      const auto d = read_trajectories(trajectories_path);
      const auto emb = embed_labels(d, *gateway);
      double delta = config.delta.value_or(0.0);
      if (!config.delta) {
        const auto trace = optimize_delta(emb, config.search_lo, config.search_hi, config.search_budget,
                                          config.seed, config.lambda, config.linkage);
        if (!trace.best_delta) throw ValidationError("threshold search: every evaluation failed");
        delta = *trace.best_delta;
      }
      const auto c = build_constitution(d, emb, delta, config.scheme, config.linkage, iteration,
                                        gateway->embedder_id());
      ReplaceOptions ro{config.tau_ppl, config.workers};
      const auto rr = replace_labels(d, c, gateway.get(), ro);
      write_json_file(out_path, constitution_to_json(c));
      write_trajectories(out_dataset, rr.trajectories);
      print(Json{{"clusters", c.clusters.size()}, {"delta", delta},
                 {"trajectories", d.size()}, {"dataset", rr.trajectories.size()}});
      return 0;
    }
    if (optimize_cmd->parsed()) {
      auto gateway = make_gateway(config);
      const auto d = read_trajectories(trajectories_path);
      if (d.empty()) throw ValidationError("optimize-threshold: no trajectories");
      const auto trace = optimize_delta(embed_labels(d, *gateway), config.search_lo, config.search_hi,
                                        config.search_budget, config.seed, config.lambda, config.linkage);
      write_json_file(out_path, search_trace_to_json(trace));
      print(Json{{"best_delta", trace.best_delta ? Json(*trace.best_delta) : Json(nullptr)},
                 {"evaluations", trace.evaluations.size()}});
      return 0;
    }
    if (export_review_cmd->parsed()) {
      const auto c = constitution_from_json(read_json_file(constitution_path));
      BundleOptions bo;
      bo.samples_per_cluster = config.review_samples;
      export_review_bundle(c, read_trajectories(trajectories_path), out_path, bo);
      print(Json{{"clusters", c.clusters.size()}, {"bundle", out_path}});
      return 0;
    }
    if (apply_review_cmd->parsed()) {
      const auto c = constitution_from_json(read_json_file(constitution_path));
      const auto approved = apply_review(c, read_decisions(decisions_path));
      const auto d = apply_review_to_dataset(read_trajectories(dataset_path), approved);
      write_json_file(out_path, constitution_to_json(approved));
      write_trajectories(out_dataset, d);
      print(Json{{"clusters", approved.clusters.size()}, {"dataset", d.size()}});
      return 0;
    }
    if (export_sft_cmd->parsed()) {
      const auto n = export_sft(read_trajectories(dataset_path), out_path, config.training);
      print(Json{{"examples", n}, {"path", out_path}});
      return 0;
    }
    if (metrics_cmd->parsed()) {
      if (!trajectories_path.empty()) {
        const auto d = read_trajectories(trajectories_path);
        IterationMetrics m;
        m.copy = copy_precision_report(d, config.copy_threshold);
        m.advantage = advantage_stats(d);
        print(iteration_metrics_to_json(m));
        return 0;
      }
      std::vector<IterationMetrics> series;
      for (int t = 1;; ++t) {
        const auto p = iteration_dir(config, t) / "manifest.json";
        if (!fs::exists(p)) break;
        series.push_back(iteration_metrics_from_json(read_json_file(p).at("metrics")));
      }
      std::cout << metrics_csv(series);
      return 0;
    }
    if (run_cmd->parsed()) {
      auto gateway = make_gateway(config);
      const auto m = run_iteration(config, iteration, *gateway, popts);
      if (!m) return exit_code(ExitCode::kFailure);
      print(manifest_for_comparison(*m));
      return m->at("status") == "complete" ? 0 : exit_code(ExitCode::kFailure);
    }
    if (loop_cmd->parsed()) {
      auto gateway = make_gateway(config);
      const auto ms = run_loop(config, iterations, *gateway, popts);
      Json out = Json::array();
      for (const auto& m : ms) out.push_back(manifest_for_comparison(m));
      print(out);
      const bool ok = static_cast<int>(ms.size()) == iterations &&
                      ms.back().at("status") == "complete";
      return ok ? 0 : exit_code(ExitCode::kFailure);
    }
  } catch (const ReviewTimeout& e) {
    std::cerr << "review timeout: " << e.what() << "\n";
    return exit_code(ExitCode::kReviewTimeout);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return exit_code(ExitCode::kValidation);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return exit_code(ExitCode::kValidation);
  } catch (const ContractViolation& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return exit_code(ExitCode::kValidation);
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return exit_code(ExitCode::kBackend);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ExitCode::kFailure);
  }
  return 0;
}
