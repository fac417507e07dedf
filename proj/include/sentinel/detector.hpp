#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentinel/backend.hpp"
#include "sentinel/heuristic.hpp"
#include "sentinel/tokenizer.hpp"
#include "sentinel/verdict.hpp"

namespace sentinel {

enum class BackendKind { onnx, remote, stub, heuristic };

std::optional<BackendKind> parse_backend_kind(std::string_view s);
std::string_view to_string(BackendKind kind);

inline constexpr std::size_t kDefaultMaxSequenceLength = 8192;
inline constexpr double kDefaultThreshold = 0.5;

/// Immutable, self-describing detector package. See README for the on-disk layout.
struct ModelBundle {
  std::string model_id;
  std::filesystem::path directory;
  BackendKind backend = BackendKind::heuristic;
  std::array<Label, 2> label_map{Label::benign, Label::jailbreak};  // logit column -> label
  std::size_t max_sequence_length = kDefaultMaxSequenceLength;
  double threshold = kDefaultThreshold;
  Truncation truncation = Truncation::head;
  std::size_t session_pool_size = 1;
  nlohmann::json backend_options = nlohmann::json::object();
  std::shared_ptr<const Tokenizer> tokenizer;  // null for the heuristic backend
  std::shared_ptr<const RuleTable> rules;      // heuristic backend only
  std::string checksum;                        // sha256 over the bundle files

  /// Logit column holding the jailbreak class.
  std::size_t jailbreak_index() const noexcept { return label_map[0] == Label::jailbreak ? 0 : 1; }
};

/// Loads and validates `dir/config.json` plus the files its backend needs.
/// Errors: missing_file (names the file), label_map_not_bijective,
/// invalid_bundle (bad max length / threshold / backend), tokenizer_unparseable.
ModelBundle load_bundle(const std::filesystem::path& dir);

/// Validates a config document; files are resolved against `dir`.
ModelBundle bundle_from_config(const nlohmann::json& config, const std::filesystem::path& dir);

/// The weight-free rule-based bundle, using the compiled-in rule table.
ModelBundle heuristic_bundle();

/// "heuristic" names the built-in bundle; anything else is a directory.
ModelBundle resolve_bundle(std::string_view name_or_path);

/// Either a verdict or the error that prevented one.
struct Outcome {
  std::optional<Verdict> verdict;
  std::optional<Error> error;

  bool ok() const noexcept { return verdict.has_value(); }
};

/// Shareable, reentrant classifier over a loaded bundle. Copies share the
/// bundle and backend sessions.
class Detector {
 public:
  explicit Detector(ModelBundle bundle);
  /// Uses `backend` instead of constructing one from the bundle config.
  Detector(ModelBundle bundle, std::shared_ptr<InferenceBackend> backend);

  const ModelBundle& bundle() const noexcept;

  TokenSequence tokenize(std::string_view text) const;

  /// Throws BackendError on backend failure, Error("invalid_threshold") for a
  /// threshold outside [0, 1].
  Verdict classify(std::string_view text, std::optional<double> threshold = std::nullopt) const;

  /// One outcome per text, order preserved. The batch runs as one backend
  /// call; if that fails, items are retried singly so faults are positioned.
  std::vector<Outcome> classify_batch(std::span<const std::string> texts,
                                      std::optional<double> threshold = std::nullopt) const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

}  // namespace sentinel
