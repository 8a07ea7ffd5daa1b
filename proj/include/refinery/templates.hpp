#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace refinery {

struct Message {
  std::string role;
  std::string content;

  bool operator==(const Message&) const = default;
};

// Principle proposal prompt. Multiple golds are joined with a blank line.
std::vector<Message> render_principle_prompt(std::string_view prompt,
                                             std::string_view initial,
                                             std::span<const std::string> golds);

std::vector<Message> render_critique_prompt(std::string_view prompt,
                                            std::string_view current,
                                            std::string_view principle);

std::vector<Message> render_refine_prompt(std::string_view prompt,
                                          std::string_view current,
                                          std::string_view critique,
                                          std::string_view principle);

// Reference-similarity judge: system instruction plus user turn.
std::vector<Message> render_judge_similarity_prompt(std::string_view prompt,
                                                    std::string_view gold,
                                                    std::string_view response);

// Relative grading of two responses with respect to one principle.
std::vector<Message> render_judge_pairwise_prompt(std::string_view prompt,
                                                  std::string_view principle,
                                                  std::string_view first,
                                                  std::string_view second);

// Constitution-in-context refinement.
std::vector<Message> render_extrinsic_prompt(std::string_view prompt,
                                             std::span<const std::string> constitution,
                                             std::string_view initial);

std::vector<Message> render_initial_prompt(std::string_view prompt);

// Outcome of parsing a principle-proposal completion.
struct PrincipleLabel {
  std::string label;
};
struct NoPrinciple {};
struct UnparseablePrinciple {
  std::string raw;
};
using PrincipleParse = std::variant<PrincipleLabel, NoPrinciple, UnparseablePrinciple>;

PrincipleParse parse_principle(std::string_view raw);

/// Removes every <think>...</think> span. An unclosed <think> drops the
/// remainder of the text.
std::string strip_think_blocks(std::string_view text);

struct JudgeScore {
  int score = 0;
  std::string justification;
};

// Extracts the first balanced {...} object that parses as JSON and carries a
// "score". Throws ParseError when none is found, ValidationError when the
// score is outside 1..10.
JudgeScore parse_judge_payload(std::string_view raw);

enum class Preference { kA, kB };

// Verdict for the first/second presented response ("[RESULT] A" style).
std::optional<Preference> parse_pairwise_verdict(std::string_view raw);

// Joined message contents; what the mock backend keys on.
std::string flatten_messages(std::span<const Message> messages);

}  // namespace refinery
