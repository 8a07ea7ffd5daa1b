#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace refinery {

using Embedding = std::vector<double>;

enum class Linkage { kWard, kComplete, kAverage };

Linkage parse_linkage(std::string_view name);
std::string_view linkage_name(Linkage l);

double euclidean_distance(std::span<const double> a, std::span<const double> b);
// 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Bottom-up agglomerative clustering over Euclidean distance. Merging stops
/// once the smallest linkage distance is >= delta. Among equal-distance
/// candidates the pair with the lexicographically smallest
/// (min member index, max member index) merges first, where a cluster is
/// identified by its smallest member index.
///
/// Returns clusters as sorted member-index lists, ordered by smallest member.
/// Identical embeddings are collapsed into weighted points up front.
std::vector<std::vector<std::size_t>> agglomerate(std::span<const Embedding> embeddings,
                                                  double delta, Linkage linkage = Linkage::kWard);

/// Member minimising the summed Euclidean distance to the other members;
/// ties go to the lowest index.
std::size_t medoid(std::span<const std::size_t> members, std::span<const Embedding> embeddings);

}  // namespace refinery
