#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "refinery/common.hpp"
#include "refinery/config.hpp"
#include "refinery/gateway.hpp"
#include "refinery/metrics.hpp"

namespace refinery {

// Stage names in execution order; completed ones are recorded in stages.json.
inline const std::vector<std::string> kStages = {"slice",  "estep",  "delta", "cluster", "replace",
                                                 "review", "metrics", "sft",  "hook"};

struct PipelineOptions {
  // Return after this stage completes (simulated interruption).
  std::optional<std::string> stop_after_stage;
  // Passed through to the E-step (interruption inside the stage).
  std::optional<std::size_t> estep_stop_after;
  std::function<void(std::chrono::milliseconds)> sleeper;
  std::function<void(const std::string&)> log;
};

std::filesystem::path iteration_dir(const RunConfig& config, int iteration);

/// Runs (or resumes) one iteration and returns its manifest. Returns an
/// empty optional when stopped early via PipelineOptions. A failing
/// training hook yields a manifest with status "failed_after_export".
std::optional<Json> run_iteration(const RunConfig& config, int iteration, Gateway& gateway,
                                  const PipelineOptions& options = {});

/// Runs iterations 1..T, resuming completed ones; stops at the first
/// iteration whose training hook fails.
std::vector<Json> run_loop(const RunConfig& config, int iterations, Gateway& gateway,
                           const PipelineOptions& options = {});

// Manifest with the timing section removed; stable across reruns.
Json manifest_for_comparison(Json manifest);

// Deduplicated, partitioned corpus slices for the configured sizes.
std::vector<CorpusSlice> ingest(const RunConfig& config, LoadResult* load = nullptr);

/// Blocks until `path` holds a valid decisions document, polling every
/// `poll`. Throws ReviewTimeout after `timeout`.
std::vector<ReviewDecision> wait_for_decisions(
    const std::filesystem::path& path, std::chrono::milliseconds poll,
    std::chrono::milliseconds timeout,
    const std::function<void(std::chrono::milliseconds)>& sleeper = {});

// Runs `command` with the SFT path appended as one shell-quoted argument.
int run_training_hook(const std::string& command, const std::filesystem::path& sft_path);

}  // namespace refinery
