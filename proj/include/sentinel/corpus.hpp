#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentinel/label.hpp"

namespace sentinel::corpus {

enum class SourceFormat { jsonl, csv, columnar };

enum class FilterOp { eq, ne, in, not_in, contains, exists };

/// Row predicate over one raw field. A spec may carry several; all must pass.
struct FieldFilter {
  std::string field;
  FilterOp op = FilterOp::eq;
  nlohmann::json value;
};

struct ConstantLabel {
  Label label = Label::benign;
};

/// Maps the string form of a raw field value to a label. A mapped value of
/// std::nullopt drops the row. Values missing from the mapping are dropped
/// when `drop_unmatched` is set and are row errors otherwise.
struct FromFieldLabel {
  std::string field;
  std::map<std::string, std::optional<Label>> mapping;
  bool drop_unmatched = true;
};

using LabelRule = std::variant<ConstantLabel, FromFieldLabel>;

struct SourceSpec {
  std::string id;
  std::filesystem::path location;
  SourceFormat format = SourceFormat::jsonl;
  std::string text_field = "text";
  std::vector<FieldFilter> filters;
  LabelRule label_rule = ConstantLabel{};
  std::optional<std::size_t> sample_cap;
  std::uint64_t seed = 0;
};

enum class Split { train, test };

struct LabeledPrompt {
  std::string text;
  Label label = Label::benign;
  std::string source;
  std::optional<Split> split;
  std::size_t row = 0;  // row index within the source, used for canonical ordering

  friend bool operator==(const LabeledPrompt&, const LabeledPrompt&) = default;
};

enum class DedupMode { off, normalized_exact };

struct CurationConfig {
  double benign_ratio = 0.70;
  double train_fraction = 0.90;
  std::uint64_t seed = 0;
  DedupMode dedup = DedupMode::normalized_exact;
  bool skip_malformed = false;
};

/// Throws Error("invalid_config") when a ratio is outside (0, 1).
void validate(const CurationConfig& cfg);

/// Keys of the recipe "config" block (also the curate flags, dash-separated).
const std::vector<std::string>& curation_config_keys();
/// Overlays the keys present in `doc` onto `base` and validates. Unknown keys
/// are errors.
CurationConfig apply_config_json(const nlohmann::json& doc, CurationConfig base);
/// Throws Error("invalid_source") on an empty id, zero cap or empty mapping.
void validate(const SourceSpec& spec);

struct RawRecord {
  std::size_t row = 0;
  nlohmann::json fields;  // JSON object: field name -> value
};

// ---------------------------------------------------------------------------
// Ingestion and per-row extraction

struct IngestResult {
  std::vector<RawRecord> records;
  std::size_t malformed = 0;  // only non-zero when skip_malformed is set
};

/// Reads every row of the source in file order. Malformed rows abort with
/// Error("malformed_row") naming the row unless `skip_malformed` is set.
IngestResult ingest_source(const SourceSpec& spec, bool skip_malformed = false);

enum class Rejection { filtered, label_dropped, empty_text };

/// Applies the source's filters and label rule to one raw row.
/// Returns nullopt when the row is rejected; `why` receives the reason.
/// A missing text field or label field is Error("row_error").
std::optional<LabeledPrompt> extract_prompt(const SourceSpec& spec, const RawRecord& raw,
                                            Rejection* why = nullptr);

// ---------------------------------------------------------------------------
// Sampling, dedup, mixture, split

std::vector<LabeledPrompt> cap_samples(std::vector<LabeledPrompt> records, std::size_t cap,
                                       std::uint64_t seed);

struct DedupResult {
  std::vector<LabeledPrompt> records;
  std::size_t duplicates = 0;        // same text, same label, not first occurrence
  std::size_t conflict_groups = 0;   // distinct normalized texts carrying both labels
  std::size_t conflict_records = 0;  // records dropped because of a label conflict
  std::map<std::string, std::size_t> duplicates_by_source;
  std::map<std::string, std::size_t> conflicts_by_source;
};

DedupResult deduplicate(const std::vector<LabeledPrompt>& records);

struct MixtureResult {
  std::vector<LabeledPrompt> records;
  std::map<std::string, std::size_t> downsampled_by_source;
};

/// Downsamples the over-represented class to reach cfg.benign_ratio.
/// Error("degenerate_corpus") when either class is empty.
MixtureResult compose_mixture(const std::vector<LabeledPrompt>& records, const CurationConfig& cfg);

struct SplitResult {
  std::vector<LabeledPrompt> train;
  std::vector<LabeledPrompt> test;
};

/// Stratified split; every emitted record carries its split tag.
SplitResult split_train_test(const std::vector<LabeledPrompt>& records, const CurationConfig& cfg);

/// Sorts by (source id, row index). Applied before any seeded sampling.
void canonical_order(std::vector<LabeledPrompt>& records);

// ---------------------------------------------------------------------------
// Output

struct SourceAccounting {
  std::string id;
  std::size_t ingested = 0;
  std::size_t malformed = 0;
  std::size_t filtered_out = 0;
  std::size_t label_dropped = 0;
  std::size_t empty_text = 0;
  std::size_t capped_away = 0;
  std::size_t deduped = 0;
  std::size_t conflicts = 0;
  std::size_t downsampled = 0;
  std::size_t emitted = 0;

  /// ingested == every loss bucket + emitted
  bool conserved() const noexcept;
};

struct DatasetManifest {
  CurationConfig config;
  std::vector<SourceAccounting> sources;
  std::size_t conflict_groups = 0;
  std::map<std::string, std::map<std::string, std::size_t>> splits;  // split -> label -> count
  std::map<std::string, std::string> checksums;                     // file name -> hex digest
  std::string created_at;

  nlohmann::ordered_json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// One corpus line: {"text":...,"label":...,"source":...}, no trailing newline.
std::string to_jsonl_line(const LabeledPrompt& p);

/// Reads a corpus JSONL file (the format written by write_corpus).
std::vector<LabeledPrompt> read_corpus_file(const std::filesystem::path& path);

/// Writes train.jsonl, test.jsonl and manifest.json under out_dir. `manifest`
/// supplies config and source accounting; split counts and checksums are
/// filled from the emitted bytes.
DatasetManifest write_corpus(const std::vector<LabeledPrompt>& train,
                             const std::vector<LabeledPrompt>& test,
                             const std::filesystem::path& out_dir, DatasetManifest manifest);

/// Recomputes checksums and line counts of the files named in out_dir/manifest.json.
bool verify_manifest(const std::filesystem::path& out_dir, std::string* problem = nullptr);

// ---------------------------------------------------------------------------
// Recipes and the end-to-end pipeline

struct Recipe {
  std::vector<SourceSpec> sources;
  std::optional<CurationConfig> config;
};

/// Parses a recipe document. Relative source locations resolve against base_dir.
Recipe parse_recipe(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
Recipe load_recipe(const std::filesystem::path& path);

/// Full run: concurrent ingestion, extraction, caps, dedup, mixture, split, write.
DatasetManifest curate(const std::vector<SourceSpec>& sources, const CurationConfig& cfg,
                       const std::filesystem::path& out_dir);

}  // namespace sentinel::corpus
