#pragma once

#include <cstdint>
#include <string_view>

#include "refinery/gateway.hpp"
#include "refinery/templates.hpp"

namespace refinery {

// Scores a response against a reference on the 1..10 scale. Re-asks once on
// a malformed or out-of-range payload, then throws JudgeError. Each ask
// consumes one call index from `context` (advanced in place).
JudgeScore judge_similarity(Gateway& gateway, std::string_view prompt, std::string_view gold,
                            std::string_view response, CallContext& context);

struct PairwiseVerdict {
  Preference winner = Preference::kA;  // in terms of the caller's (a, b)
  bool swapped = false;                // presentation order was (b, a)
};

// Which response better reflects the principle. The presentation order is
// decided by a coin drawn from `coin_seed`; the verdict is mapped back to
// the caller's order. One retry on an unparseable verdict, then JudgeError.
PairwiseVerdict judge_pairwise(Gateway& gateway, std::string_view prompt,
                               std::string_view principle, std::string_view response_a,
                               std::string_view response_b, std::uint64_t coin_seed,
                               CallContext& context);

}  // namespace refinery
