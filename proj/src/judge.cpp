#include "refinery/judge.hpp"

namespace refinery {

JudgeScore judge_similarity(Gateway& gateway, std::string_view prompt, std::string_view gold,
                            std::string_view response, CallContext& context) {
  const auto messages = render_judge_similarity_prompt(prompt, gold, response);
  std::string last_error;
  for (int ask = 0; ask < 2; ++ask) {
    auto req = gateway.make_request(Purpose::kJudge, messages, context);
    ++context.call_index;
    const auto raw = gateway.complete(req);
    try {
      return parse_judge_payload(strip_think_blocks(raw));
    } catch (const ParseError& e) {
      last_error = e.what();
    } catch (const ValidationError& e) {
      last_error = e.what();
    }
  }
  throw JudgeError("judge output unusable after re-ask: " + last_error);
}

PairwiseVerdict judge_pairwise(Gateway& gateway, std::string_view prompt,
                               std::string_view principle, std::string_view response_a,
                               std::string_view response_b, std::uint64_t coin_seed,
                               CallContext& context) {
  PairwiseVerdict verdict;
  verdict.swapped = (splitmix64(coin_seed) >> 63) != 0;
  const auto messages =
      verdict.swapped ? render_judge_pairwise_prompt(prompt, principle, response_b, response_a)
                      : render_judge_pairwise_prompt(prompt, principle, response_a, response_b);
  for (int ask = 0; ask < 2; ++ask) {
    auto req = gateway.make_request(Purpose::kJudge, messages, context);
    ++context.call_index;
    const auto shown = parse_pairwise_verdict(strip_think_blocks(gateway.complete(req)));
    if (!shown) continue;
    const bool first_won = *shown == Preference::kA;
    // First shown is b when swapped.
    verdict.winner = (first_won != verdict.swapped) ? Preference::kA : Preference::kB;
    return verdict;
  }
  throw JudgeError("pairwise verdict unparseable after retry");
}

}  // namespace refinery
