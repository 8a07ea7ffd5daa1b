#include "refinery/templates.hpp"

#include <cctype>
#include <map>

#include "refinery/common.hpp"

namespace refinery {

namespace {

constexpr std::string_view kPrincipleTemplate =
    "Prompt: {prompt}\n\n"
    "Here is the previous response: {initial_response}\n\n"
    "Here is the target response: {gold_response}\n\n"
    "Identify a high-level principle that may be useful to improve the quality of this "
    "response to a human reader, to become more similar to the target response. If there "
    "is a principle that you can propose, provide it in the format of 'New Principle: "
    "*[new principle name]*'. Otherwise, if there is no new principle that you can "
    "propose, respond with *[None]* at the end of your response.";

constexpr std::string_view kCritiqueTemplate =
    "Prompt: {prompt}\n"
    "Response: {curr_response}\n\n"
    "Provide feedback on the above response, focusing entirely on how much it addresses "
    "{principle}. Be critical of the response, and how it can improve relative to "
    "addressing {principle}\n\n"
    "Feedback:";

// The stray quote before "Improved Response:" is part of the original prompt.
constexpr std::string_view kRefineTemplate =
    "Prompt: {prompt}\n"
    "Previous Response: {curr_response}\n"
    "Feedback: {feedback}\n\n"
    "Given this feedback on how the previous response addresses {principle}, improve the "
    "response on addressing {principle}\"\n"
    "Improved Response:";

constexpr std::string_view kJudgeSystem =
    "[Instruction]\n\n"
    "Please act as an impartial judge and evaluate the quality of the response provided by "
    "an AI assistant to the user question given the provided document and a reference "
    "answer.\"";

constexpr std::string_view kJudgeUser =
    "Your evaluation should assess the faithfulness, appropriateness, and completeness. "
    "Your evaluation should focus on the assistant\u2019s answer to the question of the "
    "current turn. You will be given the assistant\u2019s answer and a sample reference "
    "answer. You will also be given the user questions and assistant\u2019s answers of the "
    "previous turns of the conversation. You should consider how well the assistant\u2019s "
    "answer captures the key information, knowledge points mentioned in the reference "
    "answer, when appropriate, and how it respects or builds upon the focus and knowledge "
    "points from the previous turns.\n\n"
    "[Appropriateness]: You should evaluate if the assistant\u2019s answer is relevant to "
    "the question of the current turn and if it addresses all the issues raised by the "
    "question without adding extra information.\n\n"
    "[Completeness]: You should evaluate whether the assistant\u2019s answer is complete "
    "with information from the reference. Begin your evaluation by comparing the "
    "assistant\u2019s answer against the reference answer in this turn. Be as objective as "
    "possible, and provide a detailed justification for your rating. You must rate the "
    "response on a scale of 1 to 10 and providing a justification. Return your response "
    "in the following format:\n"
    "{\"score\": your_score, \"justification\": your_justification}\n\n"
    "[INPUT]\n{prompt}\n\n"
    "[REFERENCE]\n{gold}\n\n"
    "[PREDICTION]\n{response}";

constexpr std::string_view kPairwiseSystem =
    "You are a fair judge assistant assigned to deliver insightful feedback that compares "
    "individual performances, highlighting how each stands relative to others within the "
    "same cohort.";

constexpr std::string_view kPairwiseUser =
    "###Task Description:\n"
    "An instruction, two responses to evaluate (denoted as Response A and Response B), and "
    "a principle are given.\n"
    "1. Write a brief comparison of the two responses, strictly in terms of how well each "
    "reflects the principle.\n"
    "2. Decide which response reflects the principle better. Do not consider length or "
    "position.\n"
    "3. Finish with a line in the format: \"[RESULT] A\" or \"[RESULT] B\".\n\n"
    "###Instruction:\n{prompt}\n\n"
    "###Response A:\n{response_a}\n\n"
    "###Response B:\n{response_b}\n\n"
    "###Principle:\n{principle}\n\n"
    "###Feedback:";

constexpr std::string_view kExtrinsicTemplate =
    "Prompt: {prompt}\n\n"
    "Here is your previous response: {initial_response}\n\n"
    "Here is a list of principles for improving a response:\n{constitution}\n\n"
    "Select the single principle from the list that is most relevant to improving the "
    "previous response, then use it to write an improved response. Answer in the format:\n"
    "Principle: <the selected principle>\n\n"
    "Refined Response: <the improved response>";

// Single pass so substituted values are never re-scanned for slots.
std::string fill(std::string_view tmpl,
                 const std::map<std::string_view, std::string_view>& slots) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = slots.find(tmpl.substr(i + 1, close - i - 1));
        if (it != slots.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::string join_golds(std::span<const std::string> golds) {
  std::string out;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (i) out += "\n\n";
    out += golds[i];
  }
  return out;
}

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::vector<Message> render_initial_prompt(std::string_view prompt) {
  return {{"user", std::string(prompt)}};
}

std::vector<Message> render_principle_prompt(std::string_view prompt,
                                             std::string_view initial,
                                             std::span<const std::string> golds) {
  const auto gold = join_golds(golds);
  return {{"user", fill(kPrincipleTemplate, {{"prompt", prompt},
                                              {"initial_response", initial},
                                              {"gold_response", gold}})}};
}

std::vector<Message> render_critique_prompt(std::string_view prompt,
                                            std::string_view current,
                                            std::string_view principle) {
  return {{"user", fill(kCritiqueTemplate, {{"prompt", prompt},
                                             {"curr_response", current},
                                             {"principle", principle}})}};
}

std::vector<Message> render_refine_prompt(std::string_view prompt,
                                          std::string_view current,
                                          std::string_view critique,
                                          std::string_view principle) {
  return {{"user", fill(kRefineTemplate, {{"prompt", prompt},
                                           {"curr_response", current},
                                           {"feedback", critique},
                                           {"principle", principle}})}};
}

std::vector<Message> render_judge_similarity_prompt(std::string_view prompt,
                                                    std::string_view gold,
                                                    std::string_view response) {
  return {{"system", std::string(kJudgeSystem)},
          {"user", fill(kJudgeUser, {{"prompt", prompt}, {"gold", gold}, {"response", response}})}};
}

std::vector<Message> render_judge_pairwise_prompt(std::string_view prompt,
                                                  std::string_view principle,
                                                  std::string_view first,
                                                  std::string_view second) {
  return {{"system", std::string(kPairwiseSystem)},
          {"user", fill(kPairwiseUser, {{"prompt", prompt},
                                         {"principle", principle},
                                         {"response_a", first},
                                         {"response_b", second}})}};
}

std::vector<Message> render_extrinsic_prompt(std::string_view prompt,
                                             std::span<const std::string> constitution,
                                             std::string_view initial) {
  std::string list;
  for (std::size_t i = 0; i < constitution.size(); ++i) {
    if (i) list.push_back('\n');
    list += std::to_string(i + 1) + ". " + constitution[i];
  }
  return {{"user", fill(kExtrinsicTemplate, {{"prompt", prompt},
                                              {"initial_response", initial},
                                              {"constitution", list}})}};
}

std::string flatten_messages(std::span<const Message> messages) {
  std::string out;
  for (const auto& m : messages) {
    out += m.role;
    out += ": ";
    out += m.content;
    out.push_back('\n');
  }
  return out;
}

PrincipleParse parse_principle(std::string_view raw) {
  constexpr std::string_view kMarker = "New Principle:";
  const auto marker = raw.rfind(kMarker);
  if (marker != std::string_view::npos) {
    const auto open = raw.find("*[", marker + kMarker.size());
    if (open != std::string_view::npos) {
      const auto close = raw.find("]*", open + 2);
      if (close != std::string_view::npos) {
        auto label = trim(raw.substr(open + 2, close - open - 2));
        if (iequals(label, "none")) return NoPrinciple{};
        if (!label.empty()) return PrincipleLabel{std::move(label)};
      }
    }
  }
  // The escape hatch may appear without the marker.
  const auto none_at = raw.rfind("*[");
  if (none_at != std::string_view::npos) {
    const auto close = raw.find("]*", none_at + 2);
    if (close != std::string_view::npos &&
        iequals(trim(raw.substr(none_at + 2, close - none_at - 2)), "none")) {
      return NoPrinciple{};
    }
  }
  return UnparseablePrinciple{std::string(raw)};
}

std::string strip_think_blocks(std::string_view text) {
  constexpr std::string_view kOpen = "<think>";
  constexpr std::string_view kClose = "</think>";
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find(kOpen, pos);
    if (open == std::string_view::npos) {
      out += text.substr(pos);
      break;
    }
    out += text.substr(pos, open - pos);
    const auto close = text.find(kClose, open + kOpen.size());
    if (close == std::string_view::npos) break;
    pos = close + kClose.size();
  }
  return out;
}

JudgeScore parse_judge_payload(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos;
       start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        end = i;
        break;
      }
    }
    if (end == std::string_view::npos) break;
    const auto doc = Json::parse(raw.substr(start, end - start + 1), nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("score")) continue;

    const auto& s = doc["score"];
    double value = 0.0;
    if (s.is_number()) {
      value = s.get<double>();
    } else if (s.is_string()) {
      try {
        value = std::stod(s.get<std::string>());
      } catch (const std::exception&) {
        throw ParseError("judge score is not numeric");
      }
    } else {
      throw ParseError("judge score is not numeric");
    }
    if (value != static_cast<double>(static_cast<long long>(value)) || value < 1 || value > 10) {
      throw ValidationError("judge score " + s.dump() + " outside 1..10");
    }
    JudgeScore out;
    out.score = static_cast<int>(value);
    if (doc.contains("justification") && doc["justification"].is_string()) {
      out.justification = doc["justification"].get<std::string>();
    }
    return out;
  }
  throw ParseError("no JSON object with a score found in judge output");
}

std::optional<Preference> parse_pairwise_verdict(std::string_view raw) {
  constexpr std::string_view kTag = "[RESULT]";
  const auto at = raw.rfind(kTag);
  std::string tail = trim(at == std::string_view::npos ? raw : raw.substr(at + kTag.size()));
  // Tolerate "[[A]]", "A.", "Response A".
  std::string letters;
  for (char c : tail) {
    if (std::isalnum(static_cast<unsigned char>(c))) letters.push_back(c);
  }
  if (letters == "A" || letters == "ResponseA") return Preference::kA;
  if (letters == "B" || letters == "ResponseB") return Preference::kB;
  if (at != std::string_view::npos && !tail.empty()) {
    if (tail.front() == 'A') return Preference::kA;
    if (tail.front() == 'B') return Preference::kB;
  }
  return std::nullopt;
}

}  // namespace refinery
