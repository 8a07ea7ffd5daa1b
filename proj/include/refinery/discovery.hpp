#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "refinery/common.hpp"
#include "refinery/corpus.hpp"
#include "refinery/gateway.hpp"

namespace refinery {

enum class ValidatorMode { kRouge, kJudge };
enum class SelectionMode { kBestOfN, kSoft };

struct DiscoveryConfig {
  double tau = 0.4;
  int n_principles = 16;
  ValidatorMode validator_mode = ValidatorMode::kRouge;
  int judge_threshold = 9;  // judge-mode gate on the 1..10 scale
  SelectionMode selection = SelectionMode::kBestOfN;
  double soft_temperature = 1.0;
  std::uint64_t seed = 0;
  int iteration = 1;
};

struct CandidateRefinement {
  int index = 0;  // proposal index j in [0, N)
  std::string principle_raw;
  std::string principle_label;
  std::string critique;
  std::string refined;
  double f_refined = 0.0;
};

// One accepted self-correction record.
struct Trajectory {
  std::string record_id;
  int iteration = 1;
  std::string prompt;
  std::string initial;
  std::string principle_label;
  std::string principle_raw;
  std::string critique;  // audit only; never exported for training
  std::string refined;
  double f_initial = 0.0;
  double f_refined = 0.0;
  double advantage = 0.0;
  std::vector<std::string> golds;
  int candidate_index = 0;
  std::optional<int> cluster_id;

  bool operator==(const Trajectory&) const = default;
};

Json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const Json& j);
void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> ts);
std::vector<Trajectory> read_trajectories(const std::filesystem::path& path);

enum class OutcomeStatus { kNoRefinementNeeded, kRefined, kDiscarded };

std::string_view outcome_status_name(OutcomeStatus s);

// Stable discard reasons used as stats keys.
namespace discard_reason {
inline constexpr std::string_view kNoPrinciple = "no principle proposed";
inline constexpr std::string_view kNoImprovement = "no improvement";
inline constexpr std::string_view kTransport = "transport failure";
inline constexpr std::string_view kContextOverflow = "context overflow";
inline constexpr std::string_view kBackend = "backend error";
inline constexpr std::string_view kJudge = "judge error";
}  // namespace discard_reason

struct DiscoveryOutcome {
  std::string record_id;
  OutcomeStatus status = OutcomeStatus::kDiscarded;
  std::string reason;  // set when discarded
  std::string detail;  // backend message, if any
  double f_initial = 0.0;
  std::optional<Trajectory> trajectory;
  // Soft acceptance only: further accepted candidates beyond the argmax.
  std::vector<Trajectory> also_accepted;
  std::vector<CandidateRefinement> candidates;
};

Json outcome_to_json(const DiscoveryOutcome& o);
DiscoveryOutcome outcome_from_json(const Json& j);

/// Index of the maximal f_refined; ties go to the lowest index.
/// Throws ContractViolation on an empty list.
std::size_t select_best(std::span<const CandidateRefinement> candidates);

/// Rejection-sampling acceptance: candidate n with gain s_n > 0 is accepted
/// with probability exp((ln s_n - ln s_max) / temperature). Returns accepted
/// positions in increasing order; empty when nothing improves.
std::vector<std::size_t> soft_accept(std::span<const CandidateRefinement> candidates,
                                     double f_initial, double temperature,
                                     std::mt19937_64& rng);

// Acceptance probability per candidate (0 for non-improving ones).
std::vector<double> soft_accept_probabilities(std::span<const CandidateRefinement> candidates,
                                              double f_initial, double temperature);

DiscoveryOutcome discover_sample(const PromptRecord& record, const DiscoveryConfig& config,
                                 Gateway& gateway);

// Judge-scored variant; f values are judge scores divided by 10.
DiscoveryOutcome discover_sample_judged(const PromptRecord& record,
                                        const DiscoveryConfig& config, Gateway& gateway);

struct EstepStats {
  std::size_t total = 0;
  std::size_t no_refinement = 0;
  std::size_t refined = 0;
  std::size_t discarded = 0;
  std::map<std::string, std::size_t> discarded_by_reason;
  std::size_t trajectories = 0;  // |D'|, differs from refined under soft acceptance
  double refinement_rate = 0.0;
};

Json estep_stats_to_json(const EstepStats& s);
EstepStats estep_stats_from_json(const Json& j);

struct EstepOptions {
  std::size_t workers = 1;
  std::optional<std::filesystem::path> checkpoint_path;
  std::size_t checkpoint_every = 25;
  // Process only records with index < stop_after (simulated interruption).
  std::optional<std::size_t> stop_after;
  const std::atomic<bool>* cancel = nullptr;
};

struct EstepResult {
  std::vector<Trajectory> trajectories;  // D', ordered by record id
  std::vector<DiscoveryOutcome> outcomes;  // slice order
  EstepStats stats;
  bool complete = false;
  std::size_t resumed_from = 0;
};

/// Runs discovery over a slice. With a checkpoint path, progress is written
/// atomically every `checkpoint_every` samples and an existing checkpoint
/// for the same slice digest is resumed.
EstepResult run_estep(const CorpusSlice& slice, const DiscoveryConfig& config, Gateway& gateway,
                      const EstepOptions& options = {});

EstepStats summarize_outcomes(std::span<const DiscoveryOutcome> outcomes);

}  // namespace refinery
