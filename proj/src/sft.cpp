#include "refinery/sft.hpp"

#include <algorithm>
#include <map>

#include "refinery/templates.hpp"

namespace refinery {

SftExample make_sft_example(const Trajectory& t) {
  const auto label = trim(t.principle_label);
  if (label.empty()) throw ValidationError("trajectory " + t.record_id + ": empty principle label");
  if (t.refined.empty()) throw ValidationError("trajectory " + t.record_id + ": empty refinement");
  if (!(t.advantage > 0.0) || !(t.f_refined > t.f_initial)) {
    throw ValidationError("trajectory " + t.record_id + ": non-improving trajectory");
  }
  SftExample e;
  e.id = t.record_id;
  e.prompt = t.prompt;
  e.prefix = t.initial + "\n\n";
  e.completion.append(kPrincipleTag).append(label).append(kRefinedTag).append(t.refined);
  // The refined tag must occur exactly once, right after the label.
  if (e.completion.find(kRefinedTag) != kPrincipleTag.size() + label.size() ||
      e.completion.find(kRefinedTag, kPrincipleTag.size() + label.size() + 1) != std::string::npos) {
    throw ValidationError("trajectory " + t.record_id + ": refined tag appears more than once");
  }
  return e;
}

Json sft_example_to_json(const SftExample& e) {
  return Json{{"id", e.id}, {"prompt", e.prompt}, {"prefix", e.prefix}, {"completion", e.completion}};
}

Json training_manifest(const TrainingHyperparameters& hp, std::size_t examples,
                       std::string_view sft_sha256) {
  return Json{{"examples", examples},
              {"sha256", sft_sha256},
              {"loss_mask", "prefix"},
              {"epochs", hp.epochs},
              {"learning_rate", hp.learning_rate},
              {"max_seq_length", hp.max_seq_length},
              {"optimizer", hp.optimizer}};
}

std::size_t export_sft(std::span<const Trajectory> trajectories, const std::filesystem::path& path,
                       const TrainingHyperparameters& hp) {
  if (trajectories.empty()) throw ValidationError("export_sft: empty dataset");
  std::vector<const Trajectory*> order;
  std::map<std::string, std::size_t> per_record;
  for (const auto& t : trajectories) {
    order.push_back(&t);
    ++per_record[t.record_id];
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Trajectory* a, const Trajectory* b) { return a->record_id < b->record_id; });

  std::string body;
  for (const auto* t : order) {
    auto e = make_sft_example(*t);
    if (per_record[t->record_id] > 1) e.id += "#" + std::to_string(t->candidate_index);
    body += dump_compact(sft_example_to_json(e));
    body += '\n';
  }
  write_file_atomic(path, body);
  auto manifest_path = path;
  manifest_path += ".manifest.json";
  write_json_file(manifest_path, training_manifest(hp, order.size(), sha256_hex(body)));
  return order.size();
}

SelfCorrection parse_selfcorrection(std::string_view generation) {
  const auto text = strip_think_blocks(generation);
  SelfCorrection out;
  static constexpr std::string_view kPrinciple = "Principle:";
  static constexpr std::string_view kRefined = "Refined Response:";
  const auto p = text.find(kPrinciple);
  const auto r = p == std::string::npos ? std::string::npos : text.find(kRefined, p + kPrinciple.size());
  if (r == std::string::npos) {
    out.initial = trim(text);
    return out;
  }
  out.initial = trim(std::string_view(text).substr(0, p));
  out.principle = trim(std::string_view(text).substr(p + kPrinciple.size(), r - p - kPrinciple.size()));
  out.refined = trim(std::string_view(text).substr(r + kRefined.size()));
  return out;
}

std::string match_constitution(std::string_view text, std::span<const std::string> constitution) {
  const auto hay = to_lower_ascii(text);
  const std::string* best = nullptr;
  for (const auto& z : constitution) {
    if (trim(z).empty()) continue;
    if (hay.find(to_lower_ascii(z)) == std::string::npos) continue;
    if (!best || z.size() > best->size()) best = &z;
  }
  return best ? *best : std::string(kUnmatched);
}

ExtrinsicResult extrinsic_refine(std::string_view prompt, std::string_view initial,
                                 std::span<const std::string> constitution, Gateway& gateway,
                                 CallContext context) {
  if (constitution.empty()) throw ContractViolation("extrinsic_refine: empty constitution");
  auto req = gateway.make_request(Purpose::kExtrinsic,
                                  render_extrinsic_prompt(prompt, constitution, initial), context);
  ExtrinsicResult out;
  out.raw = gateway.complete(req);
  const auto parsed = parse_selfcorrection(out.raw);
  out.principle = match_constitution(parsed.principle ? *parsed.principle : parsed.initial, constitution);
  out.refined = parsed.final_answer();
  return out;
}

}  // namespace refinery
