#include "refinery/constitution.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include "refinery/templates.hpp"

namespace refinery {

Scheme parse_scheme(std::string_view name) {
  if (name == "medoid") return Scheme::kMedoid;
  if (name == "mode") return Scheme::kMode;
  if (name == "ppl") return Scheme::kPpl;
  if (name == "none") return Scheme::kNone;
  throw ValidationError("unknown scheme '" + std::string(name) + "'");
}

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kMedoid: return "medoid";
    case Scheme::kMode: return "mode";
    case Scheme::kPpl: return "ppl";
    case Scheme::kNone: return "none";
  }
  return "medoid";
}

namespace {

std::string_view review_status_name(ReviewStatus s) {
  return s == ReviewStatus::kApproved ? "approved" : "unreviewed";
}

ReviewStatus parse_review_status(std::string_view s) {
  if (s == "approved") return ReviewStatus::kApproved;
  if (s == "unreviewed") return ReviewStatus::kUnreviewed;
  throw ValidationError("unknown review status '" + std::string(s) + "'");
}

std::string_view action_name(ReviewAction a) {
  switch (a) {
    case ReviewAction::kKeep: return "keep";
    case ReviewAction::kDiscard: return "discard";
    case ReviewAction::kRelabel: return "relabel";
  }
  return "keep";
}

}  // namespace

std::optional<std::string> Constitution::representative_for(int cluster_id) const {
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    if (clusters[k].id == cluster_id) return representatives[k];
  }
  return std::nullopt;
}

std::string mode_label(std::span<const std::size_t> members, std::span<const std::string> labels) {
  if (members.empty()) throw ContractViolation("mode_label: empty cluster");
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // key -> (count, first)
  for (auto idx : members) {
    auto [it, inserted] = counts.try_emplace(normalize_label(labels[idx]), 0, idx);
    ++it->second.first;
  }
  // Map iteration is ascending by key, so strict > keeps the smallest on ties.
  const std::pair<const std::string, std::pair<std::size_t, std::size_t>>* best = nullptr;
  for (const auto& entry : counts) {
    if (!best || entry.second.first > best->second.first) best = &entry;
  }
  return labels[best->second.second];
}

std::vector<Embedding> embed_labels(std::span<const Trajectory> trajectories, Gateway& gateway) {
  std::vector<std::string> unique;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::size_t> which(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& label = trajectories[i].principle_label;
    auto [it, inserted] = slot.try_emplace(label, unique.size());
    if (inserted) unique.push_back(label);
    which[i] = it->second;
  }
  constexpr std::size_t kBatch = 256;
  std::vector<Embedding> vectors;
  vectors.reserve(unique.size());
  for (std::size_t start = 0; start < unique.size(); start += kBatch) {
    const std::size_t end = std::min(unique.size(), start + kBatch);
    auto batch = gateway.embed(std::span<const std::string>(unique).subspan(start, end - start),
                               CallContext{"embed", static_cast<int>(start / kBatch)});
    for (auto& v : batch) vectors.push_back(std::move(v));
  }
  std::vector<Embedding> out(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) out[i] = vectors[which[i]];
  return out;
}

Constitution build_constitution(std::span<const Trajectory> trajectories,
                                std::span<const Embedding> embeddings, double delta, Scheme scheme,
                                Linkage linkage, int iteration, std::string embedder_id) {
  if (trajectories.size() != embeddings.size()) {
    throw ContractViolation("build_constitution: one embedding per trajectory required");
  }
  Constitution c;
  c.iteration = iteration;
  c.delta = delta;
  c.scheme = scheme;
  c.linkage = linkage;
  c.embedder_id = std::move(embedder_id);
  if (trajectories.empty()) return c;

  std::vector<std::string> labels;
  labels.reserve(trajectories.size());
  for (const auto& t : trajectories) labels.push_back(t.principle_label);

  auto groups = agglomerate(embeddings, delta, linkage);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    Cluster cl;
    cl.id = static_cast<int>(k);
    cl.member_indices = std::move(groups[k]);
    cl.medoid_index = medoid(cl.member_indices, embeddings);
    cl.representative_medoid = labels[cl.medoid_index];
    cl.representative_mode = mode_label(cl.member_indices, labels);
    c.representatives.push_back(scheme == Scheme::kMode ? cl.representative_mode
                                                        : cl.representative_medoid);
    c.clusters.push_back(std::move(cl));
  }
  return c;
}

std::string ppl_sequence(std::string_view prompt, std::string_view initial,
                         std::string_view principle, std::string_view critique,
                         std::string_view refined) {
  std::string s;
  s.reserve(prompt.size() + initial.size() + principle.size() + critique.size() + refined.size() + 8);
  s.append(prompt).append("\n\n").append(initial).append("\n\n").append(principle);
  s.append("\n\n").append(critique).append("\n\n").append(refined);
  return s;
}

namespace {

PplCheck check_ppl(const Trajectory& t, const std::string& representative, Gateway& gateway,
                   double tau_ppl) {
  PplCheck check;
  check.record_id = t.record_id;
  check.candidate_index = t.candidate_index;
  check.original_label = t.principle_label;
  check.representative = representative;
  CallContext ctx{"ppl:" + t.record_id + "#" + std::to_string(t.candidate_index), 0};
  auto req = gateway.make_request(Purpose::kCritique,
                                  render_critique_prompt(t.prompt, t.initial, representative), ctx);
  ++ctx.call_index;
  const auto fresh_critique = trim(strip_think_blocks(gateway.complete(req)));

  const auto original = ppl_sequence(t.prompt, t.initial, t.principle_label, t.critique, t.refined);
  const auto replaced = ppl_sequence(t.prompt, t.initial, representative, fresh_critique, t.refined);
  check.ppl_original = perplexity(gateway.score_logprob("", original, ctx));
  ++ctx.call_index;
  check.ppl_representative = perplexity(gateway.score_logprob("", replaced, ctx));
  check.kept = check.ppl_representative - check.ppl_original <= tau_ppl;
  return check;
}

}  // namespace

ReplaceResult replace_labels(std::span<const Trajectory> trajectories,
                             const Constitution& constitution, Gateway* gateway,
                             const ReplaceOptions& options) {
  if (constitution.scheme == Scheme::kPpl && !gateway) {
    throw ContractViolation("replace_labels: ppl scheme needs a gateway");
  }
  std::vector<int> cluster_of(trajectories.size(), -1);
  std::vector<std::size_t> slot_of(trajectories.size(), 0);
  for (std::size_t k = 0; k < constitution.clusters.size(); ++k) {
    for (auto idx : constitution.clusters[k].member_indices) {
      if (idx >= trajectories.size()) {
        throw ContractViolation("replace_labels: cluster member outside the dataset");
      }
      cluster_of[idx] = constitution.clusters[k].id;
      slot_of[idx] = k;
    }
  }

  ReplaceResult result;
  std::vector<std::optional<PplCheck>> checks(trajectories.size());
  if (constitution.scheme == Scheme::kPpl) {
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr failure;
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= trajectories.size()) return;
        // Labels already equal to their representative need no check.
        if (cluster_of[i] < 0 ||
            trajectories[i].principle_label == constitution.representatives[slot_of[i]]) {
          continue;
        }
        try {
          checks[i] = check_ppl(trajectories[i], constitution.representatives[slot_of[i]],
                                *gateway, options.tau_ppl);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next.store(trajectories.size());
          return;
        }
      }
    };
    const std::size_t workers = std::max<std::size_t>(1, options.workers);
    if (workers == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    if (cluster_of[i] < 0) {
      ++result.dropped;
      continue;
    }
    if (checks[i]) {
      const bool kept = checks[i]->kept;
      result.ppl_checks.push_back(std::move(*checks[i]));
      if (!kept) {
        ++result.dropped;
        continue;
      }
    }
    Trajectory t = trajectories[i];
    t.principle_label = constitution.representatives[slot_of[i]];
    t.cluster_id = cluster_of[i];
    result.trajectories.push_back(std::move(t));
  }
  return result;
}

bool labels_within(std::span<const Trajectory> trajectories,
                   std::span<const std::string> representatives) {
  const std::set<std::string> allowed(representatives.begin(), representatives.end());
  return std::all_of(trajectories.begin(), trajectories.end(),
                     [&](const Trajectory& t) { return allowed.count(t.principle_label) > 0; });
}

Json constitution_to_json(const Constitution& c) {
  Json j;
  j["schema_version"] = kReviewSchemaVersion;
  j["iteration"] = c.iteration;
  j["delta"] = c.delta;
  j["scheme"] = scheme_name(c.scheme);
  j["linkage"] = linkage_name(c.linkage);
  j["embedder_id"] = c.embedder_id;
  j["review_status"] = review_status_name(c.review_status);
  j["representatives"] = c.representatives;
  Json clusters = Json::array();
  for (std::size_t k = 0; k < c.clusters.size(); ++k) {
    const auto& cl = c.clusters[k];
    clusters.push_back({{"id", cl.id},
                        {"size", cl.member_indices.size()},
                        {"representative", c.representatives[k]},
                        {"medoid", cl.representative_medoid},
                        {"mode", cl.representative_mode},
                        {"medoid_index", cl.medoid_index},
                        {"members", cl.member_indices}});
  }
  j["clusters"] = std::move(clusters);
  j["decisions"] = decisions_to_json(c.decisions);
  return j;
}

Constitution constitution_from_json(const Json& j) {
  try {
    Constitution c;
    c.iteration = j.at("iteration").get<int>();
    c.delta = j.at("delta").get<double>();
    c.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.linkage = parse_linkage(j.value("linkage", std::string("ward")));
    c.embedder_id = j.value("embedder_id", std::string{});
    c.review_status = parse_review_status(j.value("review_status", std::string("unreviewed")));
    for (const auto& cj : j.at("clusters")) {
      Cluster cl;
      cl.id = cj.at("id").get<int>();
      cl.member_indices = cj.at("members").get<std::vector<std::size_t>>();
      cl.medoid_index = cj.at("medoid_index").get<std::size_t>();
      cl.representative_medoid = cj.at("medoid").get<std::string>();
      cl.representative_mode = cj.at("mode").get<std::string>();
      c.representatives.push_back(cj.at("representative").get<std::string>());
      c.clusters.push_back(std::move(cl));
    }
    if (j.contains("decisions")) c.decisions = parse_decisions(j["decisions"]);
    return c;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("constitution: ") + e.what());
  }
}

Json review_bundle(const Constitution& c, std::span<const Trajectory> trajectories,
                   const BundleOptions& options) {
  Json j;
  j["schema_version"] = kReviewSchemaVersion;
  j["iteration"] = c.iteration;
  j["delta"] = c.delta;
  j["scheme"] = scheme_name(c.scheme);
  j["embedder_id"] = c.embedder_id;
  Json clusters = Json::array();
  for (const auto& cl : c.clusters) {
    Json samples = Json::array();
    Json labels = Json::array();
    for (auto idx : cl.member_indices) {
      const auto& t = trajectories[idx];
      labels.push_back(t.principle_label);
      if (samples.size() < options.samples_per_cluster) {
        samples.push_back({{"record_id", t.record_id},
                           {"prompt", utf8_truncate(t.prompt, options.excerpt_bytes)},
                           {"initial", utf8_truncate(t.initial, options.excerpt_bytes)},
                           {"refined", utf8_truncate(t.refined, options.excerpt_bytes)}});
      }
    }
    clusters.push_back({{"id", cl.id},
                        {"size", cl.member_indices.size()},
                        {"medoid", cl.representative_medoid},
                        {"mode", cl.representative_mode},
                        {"samples", std::move(samples)},
                        {"labels", std::move(labels)}});
  }
  j["clusters"] = std::move(clusters);
  return j;
}

void export_review_bundle(const Constitution& c, std::span<const Trajectory> trajectories,
                          const std::filesystem::path& path, const BundleOptions& options) {
  write_json_file(path, review_bundle(c, trajectories, options));
}

std::vector<ReviewDecision> parse_decisions(const Json& doc) {
  const Json* list = &doc;
  if (doc.is_object()) {
    if (doc.contains("schema_version") && doc["schema_version"] != kReviewSchemaVersion) {
      throw ValidationError("decisions: unsupported schema_version");
    }
    if (!doc.contains("decisions")) throw ValidationError("decisions: missing 'decisions'");
    list = &doc["decisions"];
  }
  if (!list->is_array()) throw ValidationError("decisions: expected a list");
  std::vector<ReviewDecision> out;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const auto& d = (*list)[i];
    const std::string where = "decisions[" + std::to_string(i) + "]";
    if (!d.is_object() || !d.contains("cluster_id") || !d["cluster_id"].is_number_integer()) {
      throw ValidationError(where + ": integer cluster_id required");
    }
    if (!d.contains("action") || !d["action"].is_string()) {
      throw ValidationError(where + ": action required");
    }
    ReviewDecision r;
    r.cluster_id = d["cluster_id"].get<int>();
    const auto action = d["action"].get<std::string>();
    if (action == "keep") {
      r.action = ReviewAction::kKeep;
    } else if (action == "discard") {
      r.action = ReviewAction::kDiscard;
    } else if (action == "relabel") {
      r.action = ReviewAction::kRelabel;
      if (!d.contains("new_label") || !d["new_label"].is_string() ||
          trim(d["new_label"].get<std::string>()).empty()) {
        throw ValidationError(where + ": relabel needs a non-empty new_label");
      }
      r.new_label = trim(d["new_label"].get<std::string>());
    } else {
      throw ValidationError(where + ": unknown action '" + action + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

Json decisions_to_json(std::span<const ReviewDecision> decisions) {
  Json list = Json::array();
  for (const auto& d : decisions) {
    Json row{{"cluster_id", d.cluster_id}, {"action", action_name(d.action)}};
    if (d.action == ReviewAction::kRelabel) row["new_label"] = d.new_label;
    list.push_back(std::move(row));
  }
  return list;
}

std::vector<ReviewDecision> read_decisions(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("decisions file is not valid JSON: " + std::string(e.what()));
  }
  return parse_decisions(doc);
}

Constitution apply_review(const Constitution& c, std::span<const ReviewDecision> decisions) {
  std::map<int, const ReviewDecision*> by_id;
  for (const auto& d : decisions) {
    if (!c.representative_for(d.cluster_id)) {
      throw ValidationError("decision for unknown cluster id " + std::to_string(d.cluster_id));
    }
    if (!by_id.emplace(d.cluster_id, &d).second) {
      throw ValidationError("duplicate decision for cluster id " + std::to_string(d.cluster_id));
    }
  }
  Constitution out = c;
  out.clusters.clear();
  out.representatives.clear();
  for (std::size_t k = 0; k < c.clusters.size(); ++k) {
    const auto it = by_id.find(c.clusters[k].id);
    std::string rep = c.representatives[k];
    if (it != by_id.end()) {
      if (it->second->action == ReviewAction::kDiscard) continue;
      if (it->second->action == ReviewAction::kRelabel) rep = it->second->new_label;
    }
    out.clusters.push_back(c.clusters[k]);
    out.representatives.push_back(std::move(rep));
  }
  out.review_status = ReviewStatus::kApproved;
  out.decisions.insert(out.decisions.end(), decisions.begin(), decisions.end());
  return out;
}

std::vector<Trajectory> apply_review_to_dataset(std::span<const Trajectory> trajectories,
                                                const Constitution& approved) {
  std::vector<Trajectory> out;
  for (const auto& t : trajectories) {
    if (!t.cluster_id) throw ContractViolation("apply_review_to_dataset: trajectory has no cluster");
    const auto rep = approved.representative_for(*t.cluster_id);
    if (!rep) continue;
    Trajectory copy = t;
    copy.principle_label = *rep;
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace refinery
