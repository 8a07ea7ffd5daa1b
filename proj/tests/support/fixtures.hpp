#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "refinery/backends.hpp"
#include "refinery/common.hpp"
#include "refinery/config.hpp"
#include "refinery/discovery.hpp"
#include "refinery/gateway.hpp"

namespace fixtures {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Gateway whose retries never actually sleep.
std::unique_ptr<refinery::Gateway> scripted_gateway(const std::vector<refinery::Json>& rules,
                                                  refinery::GatewayOptions options = {});
std::unique_ptr<refinery::Gateway> scripted_gateway(const fs::path& script,
                                                  refinery::GatewayOptions options = {});

// First k tokens of a text, space-joined.
std::string first_words(const std::string& text, std::size_t k);

// Two-iteration scripted run over a 200-prompt corpus. The script fixes the
// category of every prompt, so the expected manifest counts follow from the
// layout alone.
struct EndToEnd {
  fs::path corpus;
  fs::path script;
  refinery::RunConfig config;
  std::vector<refinery::Json> expected_counts;  // per iteration
  std::vector<double> expected_refinement_rate;
  std::vector<double> expected_discovery_rate;
};

EndToEnd make_end_to_end(const fs::path& dir);

// Slice of `n` records whose mock outcomes are known: every third record is
// gated, every seventh of the rest is discarded, the others refine.
struct ScriptedSlice {
  refinery::CorpusSlice slice;
  std::vector<refinery::Json> rules;
  std::size_t expected_refined = 0;
  std::size_t expected_gated = 0;
};

ScriptedSlice make_scripted_slice(std::size_t n, int n_principles);

// Four trajectories behind the SFT golden file.
std::vector<refinery::Trajectory> sft_fixture();

}  // namespace fixtures
