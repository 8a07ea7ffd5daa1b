#include "refinery/corpus.hpp"

#include <numeric>
#include <unordered_set>

namespace refinery {

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "prompt_gold") return CorpusFormat::kPromptGold;
  if (name == "preference_pair") return CorpusFormat::kPreferencePair;
  throw ValidationError("unknown corpus format '" + std::string(name) + "'");
}

namespace {

std::string require_string(const Json& row, const char* key, std::size_t line) {
  auto it = row.find(key);
  if (it == row.end()) throw ParseError(std::string("missing field '") + key + "'", line);
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' is not a string", line);
  return it->get<std::string>();
}

std::string optional_string(const Json& row, const char* key, std::size_t line) {
  auto it = row.find(key);
  if (it == row.end() || it->is_null()) return {};
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' is not a string", line);
  return it->get<std::string>();
}

std::vector<std::string> gold_list(const Json& value, std::size_t line) {
  std::vector<std::string> out;
  if (value.is_string()) {
    out.push_back(value.get<std::string>());
  } else if (value.is_array()) {
    for (const auto& g : value) {
      if (!g.is_string()) throw ParseError("gold entries must be strings", line);
      out.push_back(g.get<std::string>());
    }
  } else {
    throw ParseError("field 'gold' must be a string or an array of strings", line);
  }
  return out;
}

}  // namespace

LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  LoadResult result;
  std::unordered_set<std::string> ids;
  for_each_jsonl(path, [&](std::size_t line, Json row) {
    if (!row.is_object()) throw ParseError("expected a JSON object", line);
    PromptRecord rec;
    rec.prompt = require_string(row, "prompt", line);
    rec.source = optional_string(row, "source", line);
    if (rec.source.empty()) rec.source = path.stem().string();
    if (format == CorpusFormat::kPreferencePair) {
      rec.golds.push_back(require_string(row, "chosen", line));
    } else {
      auto it = row.find("gold");
      if (it == row.end()) throw ParseError("missing field 'gold'", line);
      rec.golds = gold_list(*it, line);
    }
    rec.id = optional_string(row, "id", line);
    if (rec.id.empty()) rec.id = rec.source + ":" + std::to_string(line);

    bool bad_gold = rec.golds.empty();
    for (const auto& g : rec.golds) bad_gold = bad_gold || trim(g).empty();
    if (bad_gold) {
      ++result.skipped;
      result.skip_reasons.push_back("line " + std::to_string(line) + ": empty gold");
      return;
    }
    if (!ids.insert(rec.id).second) {
      throw ParseError("duplicate id '" + rec.id + "'", line);
    }
    result.records.push_back(std::move(rec));
  });
  return result;
}

std::vector<PromptRecord> dedup_by_prompt(std::span<const PromptRecord> records) {
  std::vector<PromptRecord> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(collapse_whitespace(r.prompt)).second) out.push_back(r);
  }
  return out;
}

std::vector<CorpusSlice> partition(std::span<const PromptRecord> records,
                                   std::span<const std::size_t> sizes) {
  const std::size_t need = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (need > records.size()) {
    const std::size_t shortfall = need - records.size();
    throw SizingError("partition needs " + std::to_string(need) + " records but only " +
                          std::to_string(records.size()) + " are available (shortfall " +
                          std::to_string(shortfall) + ")",
                      shortfall);
  }
  std::vector<CorpusSlice> slices;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    CorpusSlice s;
    s.iteration = static_cast<int>(i) + 1;
    s.records.assign(records.begin() + static_cast<std::ptrdiff_t>(offset),
                     records.begin() + static_cast<std::ptrdiff_t>(offset + sizes[i]));
    s.digest = slice_digest(s.records);
    offset += sizes[i];
    slices.push_back(std::move(s));
  }
  return slices;
}

Json record_to_json(const PromptRecord& r) {
  Json j;
  j["id"] = r.id;
  j["prompt"] = r.prompt;
  if (r.golds.size() == 1) {
    j["gold"] = r.golds.front();
  } else {
    j["gold"] = r.golds;
  }
  j["source"] = r.source;
  return j;
}

PromptRecord record_from_json(const Json& j) {
  PromptRecord r;
  r.id = j.at("id").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.golds = gold_list(j.at("gold"), 0);
  r.source = j.value("source", std::string{});
  return r;
}

std::string slice_digest(std::span<const PromptRecord> records) {
  std::string buf;
  for (const auto& r : records) {
    buf += dump_compact(record_to_json(r));
    buf.push_back('\n');
  }
  return sha256_hex(buf);
}

void write_slice(const std::filesystem::path& path, const CorpusSlice& slice) {
  std::vector<Json> rows;
  rows.reserve(slice.records.size());
  for (const auto& r : slice.records) {
    auto j = record_to_json(r);
    j["iteration"] = slice.iteration;
    rows.push_back(std::move(j));
  }
  write_jsonl(path, rows);
}

CorpusSlice read_slice(const std::filesystem::path& path) {
  CorpusSlice slice;
  bool first = true;
  for_each_jsonl(path, [&](std::size_t line, Json row) {
    try {
      slice.records.push_back(record_from_json(row));
    } catch (const Json::exception& e) {
      throw ParseError(e.what(), line);
    }
    const int it = row.value("iteration", 1);
    if (first) slice.iteration = it;
    else if (it != slice.iteration) throw ParseError("mixed iterations in one slice", line);
    first = false;
  });
  slice.digest = slice_digest(slice.records);
  return slice;
}

}  // namespace refinery
