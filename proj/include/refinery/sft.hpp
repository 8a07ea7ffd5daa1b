#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "refinery/common.hpp"
#include "refinery/discovery.hpp"
#include "refinery/gateway.hpp"

namespace refinery {

struct SftExample {
  std::string id;
  std::string prompt;
  std::string prefix;      // loss-masked context: the initial response
  std::string completion;  // loss-active: principle and refined response
};

inline constexpr std::string_view kPrincipleTag = "Principle: ";
inline constexpr std::string_view kRefinedTag = "\n\nRefined Response: ";

/// Throws ValidationError if the trajectory cannot form a valid example.
SftExample make_sft_example(const Trajectory& t);
Json sft_example_to_json(const SftExample& e);

struct TrainingHyperparameters {
  int epochs = 3;
  double learning_rate = 1e-6;
  int max_seq_length = 4096;
  std::string optimizer = "adamw";
};

Json training_manifest(const TrainingHyperparameters& hp, std::size_t examples,
                       std::string_view sft_sha256);

/// Writes one JSONL line per trajectory in record-id order and a sidecar
/// `<path>.manifest.json`. An empty dataset or an invalid trajectory aborts
/// before anything is written. Returns the number of examples.
std::size_t export_sft(std::span<const Trajectory> trajectories, const std::filesystem::path& path,
                       const TrainingHyperparameters& hp = {});

struct SelfCorrection {
  std::string initial;
  std::optional<std::string> principle;
  std::optional<std::string> refined;

  // The text a downstream scorer should see.
  const std::string& final_answer() const { return refined ? *refined : initial; }
};

/// Splits "<initial> Principle: <z> Refined Response: <y2>" when both tags
/// occur in that order; otherwise the whole (think-stripped) text is the
/// answer.
SelfCorrection parse_selfcorrection(std::string_view generation);

struct ExtrinsicResult {
  std::string principle;  // a constitution element or "unmatched"
  std::string refined;
  std::string raw;
};

inline constexpr std::string_view kUnmatched = "unmatched";

// Longest constitution element found verbatim in `text`, else "unmatched".
std::string match_constitution(std::string_view text, std::span<const std::string> constitution);

ExtrinsicResult extrinsic_refine(std::string_view prompt, std::string_view initial,
                                 std::span<const std::string> constitution, Gateway& gateway,
                                 CallContext context = {"extrinsic", 0});

}  // namespace refinery
