#include <gtest/gtest.h>

#include <set>

#include "fixtures.hpp"
#include "refinery/config.hpp"

using namespace refinery;

TEST(Config, DefaultsMatchPublishedSettings) {
  const RunConfig c;
  EXPECT_EQ(c.tau, 0.4);
  EXPECT_EQ(c.n_principles, 16);
  EXPECT_EQ(*c.delta, 8.0);
  EXPECT_EQ(c.lambda, 0.5);
  EXPECT_EQ(c.tau_ppl, 0.2);
  EXPECT_EQ(c.judge_threshold, 9);
  EXPECT_EQ(c.search_budget, 30u);
  EXPECT_EQ(c.training.epochs, 3);
  EXPECT_EQ(c.training.learning_rate, 1e-6);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.delta.reset();
  c.scheme = Scheme::kPpl;
  c.linkage = Linkage::kComplete;
  c.iteration_sizes = {50, 10};
  c.seed = 99;
  c.purposes[Purpose::kRefine].temperature = 0.3;
  c.review_gate = true;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(dump_compact(config_to_json(back)), dump_compact(config_to_json(c)));
  EXPECT_FALSE(back.delta.has_value());
  EXPECT_EQ(config_to_json(c)["delta"], "auto");
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const auto c = config_from_json(Json::parse(R"({"n_principles": 4, "search": {"budget": 12}})"));
  EXPECT_EQ(c.n_principles, 4);
  EXPECT_EQ(c.search_budget, 12u);
  EXPECT_EQ(c.search_lo, 2.0);
  EXPECT_EQ(c.tau, 0.4);
}

TEST(Config, RejectsUnknownAndInvalid) {
  EXPECT_THROW(config_from_json(Json::parse(R"({"n_principle": 4})")), ValidationError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"search": {"bogus": 1}})")), ValidationError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"n_principles": 0})")), ValidationError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"lambda": 1.5})")), ValidationError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"scheme": "centroid"})")), ValidationError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"n_principles": "many"})")), ValidationError);
}

TEST(Config, EveryFieldHasAFlag) {
  const RunConfig c;
  const auto doc = config_to_json(c);
  std::set<std::string> pointers;
  std::set<std::string> flags;
  for (const auto& f : config_fields()) {
    EXPECT_TRUE(flags.insert(f.flag).second) << f.flag;
    pointers.insert(f.pointer);
    EXPECT_TRUE(doc.contains(Json::json_pointer(f.pointer))) << f.pointer;
  }
  const auto flat = doc.flatten();
  for (const auto& [key, value] : flat.items()) {
    // Array elements belong to the array's flag.
    const auto slash = key.find_last_of('/');
    const bool element = slash != std::string::npos && key.find_first_not_of("0123456789", slash + 1) == std::string::npos;
    EXPECT_TRUE(pointers.count(key) || (element && pointers.count(key.substr(0, slash)))) << "no flag for " << key;
  }
}

TEST(Config, OverridesApply) {
  const RunConfig base;
  const auto c = apply_overrides(base, {{"n-principles", "3"},
                                        {"delta", "auto"},
                                        {"iteration-sizes", "100,100"},
                                        {"review-gate", "true"},
                                        {"temperature-refine", "0.2"},
                                        {"scheme", "mode"}});
  EXPECT_EQ(c.n_principles, 3);
  EXPECT_FALSE(c.delta.has_value());
  EXPECT_EQ(c.iteration_sizes, (std::vector<std::size_t>{100, 100}));
  EXPECT_TRUE(c.review_gate);
  EXPECT_EQ(c.purposes.at(Purpose::kRefine).temperature, 0.2);
  EXPECT_EQ(c.scheme, Scheme::kMode);
  EXPECT_EQ(*apply_overrides(base, {{"delta", "4.5"}}).delta, 4.5);
  EXPECT_THROW(apply_overrides(base, {{"n-principles", "x"}}), ValidationError);
  EXPECT_THROW(apply_overrides(base, {{"no-such-flag", "1"}}), ValidationError);
}

TEST(Config, DigestIgnoresRuntimeKnobs) {
  RunConfig a;
  RunConfig b = a;
  b.workers = 8;
  b.out_dir = "elsewhere";
  b.training_hook = "/bin/true";
  EXPECT_EQ(config_digest(a), config_digest(b));
  b.n_principles = 4;
  EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(Config, LoadFromFile) {
  fixtures::TempDir dir("config");
  write_file_atomic(dir / "c.json", R"({"tau": 0.3, "corpus": {"path": "x.jsonl"}})");
  const auto c = load_config(dir / "c.json");
  EXPECT_EQ(c.tau, 0.3);
  EXPECT_EQ(c.corpus_path, "x.jsonl");
  write_file_atomic(dir / "bad.json", "{not json");
  EXPECT_THROW(load_config(dir / "bad.json"), ValidationError);
}
