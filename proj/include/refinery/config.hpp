#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/clustering.hpp"
#include "refinery/common.hpp"
#include "refinery/constitution.hpp"
#include "refinery/corpus.hpp"
#include "refinery/discovery.hpp"
#include "refinery/gateway.hpp"
#include "refinery/sft.hpp"

namespace refinery {

struct EndpointConfig {
  std::string base_url;  // empty: taken from the environment
  std::string model;
  bool logprobs = true;
};

struct RunConfig {
  // Algorithm
  double tau = 0.4;
  int n_principles = 16;
  std::optional<double> delta = 8.0;  // nullopt: optimise per iteration
  double lambda = 0.5;
  double tau_ppl = 0.2;
  Scheme scheme = Scheme::kMedoid;
  Linkage linkage = Linkage::kWard;
  ValidatorMode validator_mode = ValidatorMode::kRouge;
  int judge_threshold = 9;
  SelectionMode selection = SelectionMode::kBestOfN;
  double soft_temperature = 1.0;
  std::map<Purpose, PurposeDefaults> purposes = GatewayOptions::default_purpose_settings();
  double search_lo = 2.0;
  double search_hi = 10.0;
  std::size_t search_budget = 30;
  double copy_threshold = 0.9;

  // Data
  std::string corpus_path;
  CorpusFormat corpus_format = CorpusFormat::kPromptGold;
  std::vector<std::size_t> iteration_sizes;
  std::uint64_t seed = 0;

  // Backends
  EndpointConfig policy;
  EndpointConfig embedder;
  EndpointConfig judge;
  std::string mock_script;
  int retry_attempts = 3;
  int retry_backoff_ms = 1000;
  std::size_t max_in_flight = 16;
  double request_timeout_s = 120.0;

  // Review and training
  bool review_gate = false;
  std::size_t review_samples = 3;
  std::string training_hook;
  TrainingHyperparameters training;

  // Runtime knobs; excluded from the digest because they cannot change
  // any artifact.
  std::string out_dir = "runs/default";
  std::size_t workers = 1;
  std::size_t checkpoint_every = 25;
  int review_poll_ms = 1000;
  double review_timeout_s = 3600.0;

  DiscoveryConfig discovery(int iteration) const;
  GatewayOptions gateway_options() const;
};

Json config_to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys are a ValidationError.
RunConfig config_from_json(const Json& j);
RunConfig load_config(const std::filesystem::path& path);

// SHA-256 over the canonical JSON minus the runtime section.
std::string config_digest(const RunConfig& c);

// One overridable field: the flag name and where it lives in the JSON form.
struct ConfigField {
  std::string flag;     // e.g. "n-principles"
  std::string pointer;  // e.g. "/n_principles"
  std::string kind;     // number, integer, string, bool, delta, sizes
  std::string help;
};

const std::vector<ConfigField>& config_fields();

/// Applies string-valued overrides keyed by flag name to a config.
RunConfig apply_overrides(const RunConfig& base, const std::map<std::string, std::string>& values);

}  // namespace refinery
