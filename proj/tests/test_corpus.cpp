#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "refinery/corpus.hpp"

using namespace refinery;

namespace {

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::string body;
  for (const auto& l : lines) body += l + "\n";
  write_file_atomic(p, body);
}

std::vector<PromptRecord> records_with_prompts(const std::vector<std::string>& prompts) {
  std::vector<PromptRecord> out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out.push_back({"r" + std::to_string(i), prompts[i], {"g"}, "t"});
  }
  return out;
}

}  // namespace

TEST(Corpus, PreferencePairKeepsChosenOnly) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"prompt":"p","chosen":"a","rejected":"b"})"});
  const auto r = load_corpus(dir / "c.jsonl", CorpusFormat::kPreferencePair);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].prompt, "p");
  EXPECT_EQ(r.records[0].golds, std::vector<std::string>{"a"});
}

TEST(Corpus, PromptGoldAcceptsReferenceList) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"prompt":"p","gold":["r1","r2"]})", R"({"prompt":"q","gold":"s"})"});
  const auto r = load_corpus(dir / "c.jsonl", CorpusFormat::kPromptGold);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].golds.size(), 2u);
  EXPECT_EQ(r.records[1].golds, std::vector<std::string>{"s"});
}

TEST(Corpus, EmptyGoldIsSkippedAndCounted) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"prompt":"a","gold":"x"})", R"({"prompt":"b","gold":"   "})",
                                R"({"prompt":"c","gold":"z"})"});
  const auto r = load_corpus(dir / "c.jsonl", CorpusFormat::kPromptGold);
  EXPECT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.skipped, 1u);
  ASSERT_EQ(r.skip_reasons.size(), 1u);
  EXPECT_NE(r.skip_reasons[0].find("line 2"), std::string::npos);
}

TEST(Corpus, MalformedLineReportsLineNumber) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"prompt":"a","gold":"x"})", "", R"({"prompt": oops})"});
  try {
    load_corpus(dir / "c.jsonl", CorpusFormat::kPromptGold);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Corpus, MissingFieldIsParseError) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"prompt":"a"})"});
  EXPECT_THROW(load_corpus(dir / "c.jsonl", CorpusFormat::kPromptGold), ParseError);
  EXPECT_THROW(load_corpus(dir / "c.jsonl", CorpusFormat::kPreferencePair), ParseError);
}

TEST(Corpus, MissingIdDerivedFromSourceAndLine) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "mine.jsonl",
              {R"({"prompt":"a","gold":"x","source":"hh"})", R"({"prompt":"b","gold":"y"})"});
  const auto r = load_corpus(dir / "mine.jsonl", CorpusFormat::kPromptGold);
  EXPECT_EQ(r.records[0].id, "hh:1");
  EXPECT_EQ(r.records[1].id, "mine:2");
}

TEST(Corpus, DuplicateIdRejected) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"id":"x","prompt":"a","gold":"x"})",
                                R"({"id":"x","prompt":"b","gold":"y"})"});
  EXPECT_THROW(load_corpus(dir / "c.jsonl", CorpusFormat::kPromptGold), ParseError);
}

TEST(Corpus, DedupKeepsFirstOccurrence) {
  auto recs = records_with_prompts({"p", "p"});
  const auto out = dedup_by_prompt(recs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, "r0");
}

TEST(Corpus, DedupNormalizesWhitespace) {
  EXPECT_EQ(dedup_by_prompt(records_with_prompts({"p ", "p"})).size(), 1u);
  EXPECT_EQ(dedup_by_prompt(records_with_prompts({"a  b\tc", " a b c\n"})).size(), 1u);
  EXPECT_EQ(dedup_by_prompt(records_with_prompts({"ab", "a b"})).size(), 2u);
}

TEST(Corpus, DedupCountsPlantedDuplicates) {
  std::vector<std::string> prompts;
  for (int i = 0; i < 93; ++i) prompts.push_back("prompt " + std::to_string(i));
  // 7 duplicates with whitespace noise, interleaved.
  for (int k = 0; k < 7; ++k) {
    prompts.insert(prompts.begin() + 10 * (k + 1), "  prompt   " + std::to_string(k * 3) + " ");
  }
  ASSERT_EQ(prompts.size(), 100u);
  const auto recs = records_with_prompts(prompts);
  const auto out = dedup_by_prompt(recs);
  EXPECT_EQ(out.size(), 93u);
  EXPECT_EQ(dedup_by_prompt(out), out);
  for (std::size_t i = 1; i < out.size(); ++i) {
    EXPECT_LT(std::stoi(out[i - 1].id.substr(1)), std::stoi(out[i].id.substr(1)));
  }
}

TEST(Corpus, PartitionIsContiguousPrefix) {
  std::vector<std::string> prompts;
  for (int i = 0; i < 60; ++i) prompts.push_back("p" + std::to_string(i));
  const auto recs = records_with_prompts(prompts);
  const std::vector<std::size_t> sizes{50, 10};
  const auto slices = partition(recs, sizes);
  ASSERT_EQ(slices.size(), 2u);
  EXPECT_EQ(slices[0].records.size(), 50u);
  EXPECT_EQ(slices[1].records.size(), 10u);
  EXPECT_EQ(slices[0].iteration, 1);
  EXPECT_EQ(slices[1].iteration, 2);
  EXPECT_EQ(slices[1].records.front().id, "r50");
  EXPECT_NE(slices[0].digest, slices[1].digest);
}

TEST(Corpus, PartitionDegenerateAndShortfall) {
  const auto recs = records_with_prompts({"a", "b", "c", "d", "e"});
  const std::vector<std::size_t> zero{0};
  const auto s = partition(recs, zero);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(s[0].records.empty());
  const std::vector<std::size_t> over{3, 3};
  try {
    partition(recs, over);
    FAIL() << "expected SizingError";
  } catch (const SizingError& e) {
    EXPECT_EQ(e.shortfall(), 1u);
  }
}

TEST(Corpus, SerializeRoundTrip) {
  fixtures::TempDir dir("corpus");
  write_lines(dir / "c.jsonl", {R"({"id":"a","prompt":"p1","gold":["x","y"],"source":"s"})",
                                R"({"id":"b","prompt":"p2 é","gold":"z","source":"s"})"});
  const auto first = load_corpus(dir / "c.jsonl", CorpusFormat::kPromptGold).records;
  std::vector<Json> rows;
  for (const auto& r : first) rows.push_back(record_to_json(r));
  write_jsonl(dir / "again.jsonl", rows);
  EXPECT_EQ(load_corpus(dir / "again.jsonl", CorpusFormat::kPromptGold).records, first);

  CorpusSlice slice{2, first, slice_digest(first)};
  write_slice(dir / "slice.jsonl", slice);
  const auto back = read_slice(dir / "slice.jsonl");
  EXPECT_EQ(back.iteration, 2);
  EXPECT_EQ(back.records, first);
  EXPECT_EQ(back.digest, slice.digest);
}
