#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentinel/corpus.hpp"
#include "sentinel/detector.hpp"

namespace sentinel::eval {

struct PredictionRecord {
  Label gold = Label::benign;
  Label predicted = Label::benign;
  double jailbreak_probability = 0.0;
  std::string text_hash;
};

/// Positive class is jailbreak.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Accuracy / precision / recall / F1 with jailbreak as the positive class.
/// A 0/0 ratio is reported as 0 with its `*_undefined` flag set.
struct MetricsReport {
  ConfusionCounts counts;
  double accuracy = 0.0;  // reported elsewhere as "AvgAcc"
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool accuracy_undefined = false;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  std::size_t errors = 0;  // items the detector failed on, excluded from counts

  std::size_t support_benign() const noexcept { return counts.fp + counts.tn; }
  std::size_t support_jailbreak() const noexcept { return counts.tp + counts.fn; }

  nlohmann::ordered_json to_json() const;
  std::string to_text(const std::string& title = {}) const;
};

ConfusionCounts confusion(std::span<const PredictionRecord> predictions);
MetricsReport metrics(const ConfusionCounts& counts);

struct ItemError {
  std::size_t index;
  std::string code;
  std::string message;
};

struct EvalResult {
  MetricsReport report;
  std::vector<PredictionRecord> predictions;  // input order, failed items omitted
  std::vector<ItemError> errors;
};

struct EvalOptions {
  std::size_t workers = 1;
  std::size_t batch_size = 16;
  std::optional<double> threshold;
};

/// Keys accepted in an eval/compare/bench config file.
const std::vector<std::string>& eval_option_keys();
/// Overlays the keys present in `doc` onto `base`. Unknown keys are errors.
EvalOptions apply_config_json(const nlohmann::json& doc, EvalOptions base);

/// Classifies every prompt (optionally across worker threads) and scores the
/// result. Predictions are reassembled in input order before aggregation.
EvalResult evaluate(const Detector& detector, std::span<const corpus::LabeledPrompt> dataset,
                    const EvalOptions& options = {});

/// Predictions dump: one `{"text_hash","gold","predicted","p_jailbreak"}` object per line.
void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> predictions);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

struct NamedDataset {
  std::string name;
  std::filesystem::path path;
};

/// Models x datasets binary-F1 table with a trailing average column.
struct ComparisonTable {
  struct Row {
    std::string model_id;
    std::vector<std::optional<double>> cells;  // nullopt: dataset absent
    double average = 0.0;                      // mean of present cells
    bool has_absent = false;
  };
  std::vector<std::string> columns;
  std::vector<Row> rows;

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
};

ComparisonTable compare(std::span<const Detector> detectors, std::span<const NamedDataset> datasets,
                        const EvalOptions& options = {});

/// Milliseconds.
struct LatencyStats {
  std::size_t n = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double min = 0.0;
  double max = 0.0;

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
};

struct BenchOptions {
  std::size_t warmup = 10;
  std::size_t iterations = 100;
};

/// Keys accepted in a bench config file.
const std::vector<std::string>& bench_option_keys();
BenchOptions apply_config_json(const nlohmann::json& doc, BenchOptions base);

/// Nearest-rank percentile (1-based rank ceil(p/100 * n)) of unsorted samples.
double nearest_rank(std::vector<double> samples, double percentile);

/// Summary of raw per-call samples in milliseconds. Throws on an empty sample.
LatencyStats summarize_latency(const std::vector<double>& samples_ms);

/// Runs `warmup` unmeasured calls, then `iterations` sequential single-prompt
/// calls cycling through `prompts`, timed around classify (tokenize + infer +
/// decide). A detector failure aborts and discards partial stats.
LatencyStats bench_latency(const Detector& detector, std::span<const std::string> prompts, std::size_t warmup,
                           std::size_t iterations);

}  // namespace sentinel::eval
