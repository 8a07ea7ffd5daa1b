#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace refinery {

struct SimilarityScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Validator outcome: positive similarity gain of a refinement, else zero.
struct ValidatorResult {
  double score = 0.0;
  bool improved = false;
  double f_initial = 0.0;
  double f_refined = 0.0;
};

/// Lowercase, split on whitespace, strip leading/trailing punctuation from
/// each token, drop empties.
std::vector<std::string> tokenize(std::string_view text);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// Precision/recall/F1 from an LCS length and the two sequence lengths.
SimilarityScore score_from_lcs(std::size_t lcs, std::size_t candidate_len,
                               std::size_t reference_len);

SimilarityScore rouge_l(std::string_view candidate, std::string_view reference);
SimilarityScore rouge_l_tokens(std::span<const std::string> candidate,
                               std::span<const std::string> reference);

/// Mean Rouge-L F1 over all golds. Throws ContractViolation on empty golds.
double similarity(std::string_view candidate, std::span<const std::string> golds);

ValidatorResult validator(std::string_view initial, std::string_view refined,
                          std::span<const std::string> golds);

// Builds the result from precomputed similarities.
ValidatorResult validator_from_scores(double f_initial, double f_refined);

/// True iff similarity(initial, golds) < tau (strict).
bool needs_refinement(std::string_view initial, std::span<const std::string> golds,
                      double tau);

}  // namespace refinery
