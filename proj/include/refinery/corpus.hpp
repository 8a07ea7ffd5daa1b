#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "refinery/common.hpp"

namespace refinery {

// One mining-corpus item: a prompt plus one or more gold references.
struct PromptRecord {
  std::string id;
  std::string prompt;
  std::vector<std::string> golds;
  std::string source;

  bool operator==(const PromptRecord&) const = default;
};

struct CorpusSlice {
  int iteration = 1;  // 1-based
  std::vector<PromptRecord> records;
  std::string digest;
};

enum class CorpusFormat { kPromptGold, kPreferencePair };

CorpusFormat parse_corpus_format(std::string_view name);

struct LoadResult {
  std::vector<PromptRecord> records;
  std::size_t skipped = 0;
  // "line N: reason" for each skipped record.
  std::vector<std::string> skip_reasons;
};

// Streams a JSONL corpus. Malformed lines throw ParseError with the line
// number; records with an empty gold are skipped and counted. A missing
// source defaults to the file stem, a missing id to "<source>:<line>".
LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format);

// First occurrence wins; key is the prompt with whitespace trimmed and
// internal runs collapsed.
std::vector<PromptRecord> dedup_by_prompt(std::span<const PromptRecord> records);

// Contiguous prefix partition; throws SizingError if sizes overrun records.
std::vector<CorpusSlice> partition(std::span<const PromptRecord> records,
                                   std::span<const std::size_t> sizes);

std::string slice_digest(std::span<const PromptRecord> records);

Json record_to_json(const PromptRecord& r);
PromptRecord record_from_json(const Json& j);

void write_slice(const std::filesystem::path& path, const CorpusSlice& slice);
CorpusSlice read_slice(const std::filesystem::path& path);

}  // namespace refinery
