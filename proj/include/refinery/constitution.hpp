#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/clustering.hpp"
#include "refinery/common.hpp"
#include "refinery/discovery.hpp"
#include "refinery/gateway.hpp"

namespace refinery {

enum class Scheme { kMedoid, kMode, kPpl, kNone };

Scheme parse_scheme(std::string_view name);
std::string_view scheme_name(Scheme s);

struct Cluster {
  int id = 0;
  std::vector<std::size_t> member_indices;  // into D'
  std::string representative_medoid;
  std::string representative_mode;
  std::size_t medoid_index = 0;
};

enum class ReviewStatus { kUnreviewed, kApproved };
enum class ReviewAction { kKeep, kDiscard, kRelabel };

struct ReviewDecision {
  int cluster_id = 0;
  ReviewAction action = ReviewAction::kKeep;
  std::string new_label;  // relabel only
};

struct Constitution {
  int iteration = 1;
  double delta = 0.0;
  Scheme scheme = Scheme::kMedoid;
  Linkage linkage = Linkage::kWard;
  std::string embedder_id;
  std::vector<Cluster> clusters;
  std::vector<std::string> representatives;  // parallel to clusters
  ReviewStatus review_status = ReviewStatus::kUnreviewed;
  std::vector<ReviewDecision> decisions;

  // Representative for a cluster id, if that cluster survives.
  std::optional<std::string> representative_for(int cluster_id) const;
};

inline constexpr int kReviewSchemaVersion = 1;

/// Most frequent label under case-insensitive, trimmed comparison. Frequency
/// ties go to the lexicographically smallest normalized label; the casing of
/// that label's first occurrence is returned.
std::string mode_label(std::span<const std::size_t> members, std::span<const std::string> labels);

// Embeds each trajectory's principle label; unique labels are sent once.
std::vector<Embedding> embed_labels(std::span<const Trajectory> trajectories, Gateway& gateway);

/// Clusters D' by label embedding and fills medoid/mode representatives.
/// Cluster ids follow the order of each cluster's smallest member.
Constitution build_constitution(std::span<const Trajectory> trajectories,
                                std::span<const Embedding> embeddings, double delta, Scheme scheme,
                                Linkage linkage, int iteration, std::string embedder_id);

struct PplCheck {
  std::string record_id;
  int candidate_index = 0;
  std::string original_label;
  std::string representative;
  double ppl_original = 0.0;
  double ppl_representative = 0.0;
  bool kept = false;
};

struct ReplaceOptions {
  double tau_ppl = 0.2;
  std::size_t workers = 1;
};

struct ReplaceResult {
  std::vector<Trajectory> trajectories;  // D~
  std::vector<PplCheck> ppl_checks;      // ppl scheme only
  std::size_t dropped = 0;
};

/// Rewrites every principle label to its cluster representative. Trajectories
/// whose cluster is gone are dropped. Under the ppl scheme each trajectory is
/// kept only if PPL(S with representative) - PPL(S with own label) <= tau_ppl,
/// where the representative's critique is freshly generated; a gateway is
/// required for that scheme.
ReplaceResult replace_labels(std::span<const Trajectory> trajectories,
                             const Constitution& constitution, Gateway* gateway,
                             const ReplaceOptions& options = {});

// Pieces joined by a blank line; the sequence scored under the ppl scheme.
std::string ppl_sequence(std::string_view prompt, std::string_view initial,
                         std::string_view principle, std::string_view critique,
                         std::string_view refined);

// True when every label in the dataset is one of the representatives.
bool labels_within(std::span<const Trajectory> trajectories,
                   std::span<const std::string> representatives);

Json constitution_to_json(const Constitution& c);
Constitution constitution_from_json(const Json& j);

struct BundleOptions {
  std::size_t samples_per_cluster = 3;
  std::size_t excerpt_bytes = 400;
};

Json review_bundle(const Constitution& c, std::span<const Trajectory> trajectories,
                   const BundleOptions& options = {});
void export_review_bundle(const Constitution& c, std::span<const Trajectory> trajectories,
                          const std::filesystem::path& path, const BundleOptions& options = {});

// Accepts a bare list or {"schema_version", "decisions"}.
std::vector<ReviewDecision> parse_decisions(const Json& doc);
Json decisions_to_json(std::span<const ReviewDecision> decisions);
std::vector<ReviewDecision> read_decisions(const std::filesystem::path& path);

/// Approves the constitution: discarded clusters are removed and relabels
/// replace representatives. Unknown or repeated cluster ids are a
/// ValidationError.
Constitution apply_review(const Constitution& c, std::span<const ReviewDecision> decisions);

/// Projects D~ onto an approved constitution: trajectories of removed
/// clusters drop out, the rest carry their cluster's current representative.
std::vector<Trajectory> apply_review_to_dataset(std::span<const Trajectory> trajectories,
                                                const Constitution& approved);

}  // namespace refinery
