#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace refinery {

using Json = nlohmann::ordered_json;

// Error hierarchy. Every failure the pipeline can surface to the CLI derives
// from Error so the exit-code mapping lives in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input; carries the 1-based line number when it came from JSONL.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SizingError : public ValidationError {
 public:
  SizingError(const std::string& what, std::size_t shortfall)
      : ValidationError(what), shortfall_(shortfall) {}
  std::size_t shortfall() const { return shortfall_; }

 private:
  std::size_t shortfall_;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// Retryable transport failure (connection refused, 5xx, timeout).
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Non-retryable: the request does not fit the model context.
class ContextOverflowError : public BackendError {
 public:
  using BackendError::BackendError;
};

// The backend cannot serve this kind of request at all (e.g. no logprobs).
class CapabilityError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class JudgeError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ReviewTimeout : public Error {
 public:
  using Error::Error;
};

// CLI exit codes.
enum class ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kValidation = 2,
  kBackend = 3,
  kReviewTimeout = 4,
};

std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a; stable across platforms, used for mock keys and seeding.
std::uint64_t fnv1a64(std::string_view data);

// SplitMix64 step, used to derive independent per-item seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
// Trim and collapse internal whitespace runs to a single space.
std::string collapse_whitespace(std::string_view s);
// Case-insensitive, whitespace-trimmed label key.
std::string normalize_label(std::string_view s);
// Truncate to at most max_bytes without splitting a UTF-8 sequence.
std::string utf8_truncate(std::string_view s, std::size_t max_bytes);

std::string read_file(const std::filesystem::path& path);
// Write to a sibling temp file and rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

// One parsed JSON value per non-blank line; ParseError carries the line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t line, Json row)>& fn);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);

std::string dump_compact(const Json& j);

}  // namespace refinery
