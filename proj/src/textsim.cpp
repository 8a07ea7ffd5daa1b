#include "refinery/textsim.hpp"

#include <algorithm>
#include <cctype>

#include "refinery/common.hpp"

namespace refinery {

namespace {

bool is_ascii_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

// Non-ASCII whitespace we split on: NBSP (C2 A0), ideographic space (E3 80 80),
// and the U+2000..U+200A / U+2028 / U+2029 / U+202F / U+205F block (E2 80 xx, E2 81 9F).
std::size_t unicode_space_len(std::string_view s, std::size_t i) {
  auto at = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  if (at(i) == 0xC2 && i + 1 < s.size() && (at(i + 1) == 0xA0 || at(i + 1) == 0x85)) return 2;
  if (i + 2 < s.size()) {
    if (at(i) == 0xE3 && at(i + 1) == 0x80 && at(i + 2) == 0x80) return 3;
    if (at(i) == 0xE2 && at(i + 1) == 0x80) {
      const unsigned char c = at(i + 2);
      if ((c >= 0x80 && c <= 0x8A) || c == 0xA8 || c == 0xA9 || c == 0xAF) return 3;
    }
    if (at(i) == 0xE2 && at(i + 1) == 0x81 && at(i + 2) == 0x9F) return 3;
  }
  return 0;
}

void push_token(std::string_view raw, std::vector<std::string>& out) {
  std::size_t b = 0, e = raw.size();
  while (b < e && is_ascii_punct(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && is_ascii_punct(static_cast<unsigned char>(raw[e - 1]))) --e;
  if (b < e) out.push_back(to_lower_ascii(raw.substr(b, e - b)));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0, i = 0;
  while (i < text.size()) {
    std::size_t sep = is_ascii_space(static_cast<unsigned char>(text[i]))
                          ? 1
                          : unicode_space_len(text, i);
    if (sep == 0) {
      ++i;
      continue;
    }
    push_token(text.substr(start, i - start), out);
    i += sep;
    start = i;
  }
  push_token(text.substr(start), out);
  return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  // Two-row DP over the shorter sequence.
  if (b.size() > a.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

SimilarityScore score_from_lcs(std::size_t lcs, std::size_t candidate_len,
                               std::size_t reference_len) {
  SimilarityScore s;
  s.precision = candidate_len ? static_cast<double>(lcs) / static_cast<double>(candidate_len) : 0.0;
  s.recall = reference_len ? static_cast<double>(lcs) / static_cast<double>(reference_len) : 0.0;
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

SimilarityScore rouge_l_tokens(std::span<const std::string> candidate,
                               std::span<const std::string> reference) {
  return score_from_lcs(lcs_length(candidate, reference), candidate.size(), reference.size());
}

SimilarityScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_l_tokens(c, r);
}

double similarity(std::string_view candidate, std::span<const std::string> golds) {
  if (golds.empty()) throw ContractViolation("similarity: golds must be non-empty");
  const auto c = tokenize(candidate);
  double sum = 0.0;
  for (const auto& g : golds) sum += rouge_l_tokens(c, tokenize(g)).f1;
  return sum / static_cast<double>(golds.size());
}

ValidatorResult validator_from_scores(double f_initial, double f_refined) {
  ValidatorResult v;
  v.f_initial = f_initial;
  v.f_refined = f_refined;
  v.improved = f_refined > f_initial;
  v.score = v.improved ? f_refined - f_initial : 0.0;
  return v;
}

ValidatorResult validator(std::string_view initial, std::string_view refined,
                          std::span<const std::string> golds) {
  return validator_from_scores(similarity(initial, golds), similarity(refined, golds));
}

bool needs_refinement(std::string_view initial, std::span<const std::string> golds,
                      double tau) {
  if (tau < 0.0 || tau > 1.0) throw ContractViolation("needs_refinement: tau outside [0,1]");
  return similarity(initial, golds) < tau;
}

}  // namespace refinery
