#include "fixtures.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <unistd.h>

#include "refinery/corpus.hpp"

namespace fixtures {

using refinery::Json;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("refinery_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::unique_ptr<refinery::Gateway> scripted_gateway(const std::vector<Json>& rules,
                                                  refinery::GatewayOptions options) {
  auto gw = std::make_unique<refinery::Gateway>(std::make_shared<refinery::ScriptedBackend>(rules),
                                              std::move(options));
  gw->set_sleeper([](std::chrono::milliseconds) {});
  return gw;
}

std::unique_ptr<refinery::Gateway> scripted_gateway(const fs::path& script,
                                                  refinery::GatewayOptions options) {
  return scripted_gateway(refinery::read_jsonl(script), std::move(options));
}

std::string first_words(const std::string& text, std::size_t k) {
  std::istringstream in(text);
  std::string w, out;
  for (std::size_t i = 0; i < k && in >> w; ++i) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

namespace {

std::string gold_for(int i) {
  return "item " + std::to_string(i) + " answer alpha bravo charlie delta echo foxtrot golf";
}

const char* kUnrelated = "unrelated filler zulu yankee";

void add_initial(std::vector<Json>& rules, const std::string& id, const std::string& text) {
  rules.push_back({{"purpose", "initial"}, {"sample", id}, {"response", text}});
}

void add_principles(std::vector<Json>& rules, const std::string& id, const std::string& label) {
  rules.push_back({{"purpose", "principle"},
                   {"sample", id},
                   {"response", "The draft misses the reference facts.\nNew Principle: *[" + label + "]*"}});
}

void add_refined(std::vector<Json>& rules, const std::string& id, const std::string& gold,
                 const std::string& label, int n, int winner) {
  add_initial(rules, id, kUnrelated);
  add_principles(rules, id, label);
  rules.push_back({{"purpose", "critique"}, {"sample", id},
                   {"response", "The answer does not address the question."}});
  Json responses = Json::array();
  for (int j = 0; j < n; ++j) responses.push_back(first_words(gold, j == winner ? 8 : 3));
  rules.push_back({{"purpose", "refine"}, {"sample", id}, {"responses", responses}});
}

void add_no_improvement(std::vector<Json>& rules, const std::string& id, const std::string& label) {
  add_initial(rules, id, kUnrelated);
  add_principles(rules, id, label);
  rules.push_back({{"purpose", "critique"}, {"sample", id}, {"response", "Needs work."}});
  rules.push_back({{"purpose", "refine"}, {"sample", id}, {"response", "still zulu yankee xray"}});
}

void add_no_principle(std::vector<Json>& rules, const std::string& id) {
  add_initial(rules, id, kUnrelated);
  rules.push_back({{"purpose", "principle"}, {"sample", id},
                   {"response", "Nothing stands out.\nNew Principle: *[None]*"}});
}

struct LabelGroup {
  std::vector<std::string> labels;
  int axis;
  double sign;
};

// Four well separated groups used in both iterations, plus one that only
// appears in iteration 2.
const std::vector<LabelGroup>& label_groups() {
  static const std::vector<LabelGroup> groups = {
      {{"Clarity and Conciseness", "Conciseness and Clarity", "Clarity"}, 0, 1.0},
      {{"Directness and Specificity", "Directness", "Specificity"}, 1, 1.0},
      {{"Factual Accuracy", "Accuracy and Precision"}, 2, 1.0},
      {{"Completeness", "Thoroughness"}, 3, 1.0},
      {{"Empathy", "Empathetic Tone"}, 0, -1.0},
  };
  return groups;
}

std::vector<std::string> base_labels() {
  std::vector<std::string> out;
  for (std::size_t g = 0; g < 4; ++g) {
    for (const auto& l : label_groups()[g].labels) out.push_back(l);
  }
  return out;
}

void add_embeddings(std::vector<Json>& rules) {
  for (const auto& g : label_groups()) {
    for (std::size_t k = 0; k < g.labels.size(); ++k) {
      std::vector<double> v(4, 0.0);
      v[g.axis] = 10.0 * g.sign;
      v[(g.axis + 1) % 4] += 0.2 * static_cast<double>(k + 1);
      rules.push_back({{"purpose", "embed"}, {"text", g.labels[k]}, {"embedding", v}});
    }
  }
}

}  // namespace

EndToEnd make_end_to_end(const fs::path& dir) {
  fs::create_directories(dir);
  EndToEnd e;
  e.corpus = dir / "corpus.jsonl";
  e.script = dir / "mock.jsonl";

  constexpr int kN = 3;
  std::vector<Json> corpus;
  std::vector<Json> rules;
  rules.push_back({{"config", {{"id", "mock-e2e"}, {"embedding_dim", 4}}}});
  add_embeddings(rules);

  const auto base = base_labels();
  std::size_t refined_ordinal = 0;
  for (int i = 0; i < 200; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "q%03d", i);
    const auto gold = gold_for(i);
    corpus.push_back({{"id", id}, {"prompt", "Question " + std::to_string(i) + ": describe item " +
                                                 std::to_string(i) + "."},
                      {"gold", gold}, {"source", "synthetic"}});
    const int r = i % 10;
    const bool first = i < 100;
    if (first) {
      // 30 gated, 5 without principles, 5 without improvement, 60 refined.
      if (r < 3) add_initial(rules, id, gold);
      else if (r == 3 && (i / 10) % 2 == 0) add_no_principle(rules, id);
      else if (r == 3) add_no_improvement(rules, id, base[0]);
      else {
        add_refined(rules, id, gold, base[refined_ordinal % base.size()], kN, 1);
        ++refined_ordinal;
      }
    } else {
      if (i == 100) refined_ordinal = 0;
      // 50 gated, 5 + 5 discarded, 40 refined of which 5 carry new labels.
      if (r < 5) add_initial(rules, id, gold);
      else if (r == 5 && (i / 10) % 2 == 0) add_no_principle(rules, id);
      else if (r == 5) add_no_improvement(rules, id, base[1]);
      else {
        const bool novel = refined_ordinal % 8 == 7;
        const auto& label = novel ? label_groups()[4].labels[(refined_ordinal / 8) % 2]
                                  : base[refined_ordinal % base.size()];
        add_refined(rules, id, gold, label, kN, static_cast<int>(refined_ordinal % kN));
        ++refined_ordinal;
      }
    }
  }
  refinery::write_jsonl(e.corpus, corpus);
  refinery::write_jsonl(e.script, rules);

  e.config.corpus_path = e.corpus.string();
  e.config.iteration_sizes = {100, 100};
  e.config.mock_script = e.script.string();
  e.config.n_principles = kN;
  e.config.seed = 7;
  e.config.out_dir = (dir / "run").string();

  const Json reasons{{"no improvement", 5}, {"no principle proposed", 5}};
  e.expected_counts.push_back({{"slice", 100}, {"no_refinement", 30}, {"refined", 60},
                               {"discarded", 10}, {"discarded_by_reason", reasons},
                               {"trajectories", 60}, {"dataset", 60}, {"sft_examples", 60},
                               {"clusters", 4}, {"constitution_size", 4}});
  e.expected_counts.push_back({{"slice", 100}, {"no_refinement", 50}, {"refined", 40},
                               {"discarded", 10}, {"discarded_by_reason", reasons},
                               {"trajectories", 40}, {"dataset", 40}, {"sft_examples", 40},
                               {"clusters", 5}, {"constitution_size", 5}});
  e.expected_refinement_rate = {0.60, 0.40};
  e.expected_discovery_rate = {1.0, 5.0 / 40.0};
  return e;
}

ScriptedSlice make_scripted_slice(std::size_t n, int n_principles) {
  ScriptedSlice s;
  const auto labels = base_labels();
  std::vector<refinery::PromptRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "s%03zu", i);
    refinery::PromptRecord r{id, "Prompt number " + std::to_string(i), {gold_for(static_cast<int>(i))},
                           "synthetic"};
    if (i % 3 == 0) {
      add_initial(s.rules, id, r.golds[0]);
      ++s.expected_gated;
    } else if (i % 7 == 0) {
      add_no_improvement(s.rules, id, labels[i % labels.size()]);
    } else {
      add_refined(s.rules, id, r.golds[0], labels[i % labels.size()], n_principles,
                  static_cast<int>(i % static_cast<std::size_t>(n_principles)));
      ++s.expected_refined;
    }
    records.push_back(std::move(r));
  }
  s.slice.iteration = 1;
  s.slice.digest = refinery::slice_digest(records);
  s.slice.records = std::move(records);
  return s;
}

namespace {

refinery::Trajectory sft_traj(const std::string& id, const std::string& label, const std::string& refined,
                            int candidate = 0) {
  refinery::Trajectory t;
  t.record_id = id;
  t.prompt = "Prompt for " + id;
  t.initial = "Initial answer for " + id + ".";
  t.principle_label = label;
  t.principle_raw = "reasoning\nNew Principle: *[" + label + "]*";
  t.critique = "CRITIQUE-TEXT for " + id;
  t.refined = refined;
  t.f_initial = 0.2;
  t.f_refined = 0.6;
  t.advantage = 0.4;
  t.golds = {"gold"};
  t.candidate_index = candidate;
  return t;
}

}  // namespace

std::vector<refinery::Trajectory> sft_fixture() {
  return {sft_traj("q2", "Directness and Specificity", "The capital of France is Paris."),
          sft_traj("q1", "Clarity and Conciseness", "Line one.\nLine two with \"quotes\" and unicode é."),
          sft_traj("q3", "Factual Accuracy", "Second take.", 2),
          sft_traj("q3", "Completeness", "First take.", 0)};
}

}  // namespace fixtures
