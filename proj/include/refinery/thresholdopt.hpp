#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "refinery/clustering.hpp"
#include "refinery/common.hpp"

namespace refinery {

struct ObjectiveReport {
  double delta = 0.0;
  double j_value = 0.0;
  double diversity_term = 0.0;
  double tightness_term = 0.0;
  std::size_t cluster_count = 0;
  double lambda = 0.5;
};

/// J(delta) = lambda * diversity + (1 - lambda) * tightness, where diversity
/// is the mean (1 - cosine) over medoid pairs (0 with fewer than two
/// clusters) and tightness is the mean over clusters of the mean
/// member-to-medoid cosine similarity.
ObjectiveReport objective_j(std::span<const Embedding> embeddings, double delta,
                            double lambda = 0.5, Linkage linkage = Linkage::kWard);

struct SearchEvaluation {
  double delta = 0.0;
  double value = 0.0;  // NaN when failed
  bool failed = false;
  std::optional<std::size_t> cluster_count;
};

struct SearchTrace {
  std::vector<SearchEvaluation> evaluations;
  std::optional<double> best_delta;  // empty only if every evaluation failed
  double best_value = 0.0;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  double lo = 0.0;
  double hi = 0.0;
};

Json search_trace_to_json(const SearchTrace& t);

struct SearchOptions {
  std::size_t initial_points = 5;
  std::size_t grid_points = 512;
  double noise = 1e-6;
};

/// Maximises `objective` over [lo, hi] with exactly `budget` evaluations:
/// a seeded stratified initial design, then Gaussian-process expected
/// improvement maximised over a dense grid. Non-finite values are recorded
/// as failures and ignored by the surrogate.
SearchTrace optimize_delta(const std::function<double(double)>& objective, double lo, double hi,
                           std::size_t budget, std::uint64_t seed, const SearchOptions& options = {});

// J(delta) over the given embeddings; cluster counts go into the trace.
SearchTrace optimize_delta(std::span<const Embedding> embeddings, double lo, double hi,
                           std::size_t budget, std::uint64_t seed, double lambda = 0.5,
                           Linkage linkage = Linkage::kWard, const SearchOptions& options = {});

}  // namespace refinery
