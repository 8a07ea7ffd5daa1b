#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "refinery/common.hpp"
#include "refinery/discovery.hpp"
#include "refinery/gateway.hpp"

namespace refinery {

// Normalized labels seen in earlier iterations. Grows only through commit().
class SeenPrincipleSet {
 public:
  bool contains(std::string_view label) const;
  void commit(std::span<const Trajectory> trajectories);
  std::size_t size() const { return labels_.size(); }
  const std::set<std::string>& labels() const { return labels_; }

  Json to_json() const;
  static SeenPrincipleSet from_json(const Json& j);

 private:
  std::set<std::string> labels_;
};

/// Fraction of trajectories whose normalized label is not in `seen`; 0 for
/// an empty list.
double principle_discovery_rate(std::span<const Trajectory> trajectories,
                                const SeenPrincipleSet& seen);

double refinement_rate(const EstepStats& stats);

struct CopyReport {
  std::size_t count = 0;
  double fraction = 0.0;
  double threshold = 0.9;
};

/// Trajectories whose refinement has Rouge-L precision > threshold against
/// some gold (max over golds).
CopyReport copy_precision_report(std::span<const Trajectory> trajectories, double threshold = 0.9);

struct AdvantageStats {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  // Bin b covers (b/10, (b+1)/10]; values above 1 land in the last bin.
  std::array<std::size_t, 10> histogram{};
};

AdvantageStats advantage_stats(std::span<const Trajectory> trajectories);

struct WinrateItem {
  std::string id;
  std::string prompt;
  std::string principle;
  std::string response_a;
  std::string response_b;
};

struct WinrateResult {
  double fraction = 0.0;  // wins for side A over judged items
  std::size_t n = 0;
  std::size_t skipped = 0;
};

/// Pairwise judge win rate of side A. Presentation order is flipped per item
/// by a coin derived from (seed, item id); unparseable verdicts are skipped.
WinrateResult winrate(std::span<const WinrateItem> items, Gateway& judge, std::uint64_t seed,
                      std::size_t workers = 1);

struct IterationMetrics {
  int iteration = 1;
  double refinement_rate = 0.0;
  double principle_discovery_rate = 0.0;           // raw D' labels
  double principle_discovery_rate_replaced = 0.0;  // D~ labels
  std::size_t constitution_size = 0;
  CopyReport copy;
  AdvantageStats advantage;
  std::map<std::string, WinrateResult> winrates;
};

Json iteration_metrics_to_json(const IterationMetrics& m);
IterationMetrics iteration_metrics_from_json(const Json& j);

// Per-iteration series as CSV with a header row.
std::string metrics_csv(std::span<const IterationMetrics> series);

}  // namespace refinery
