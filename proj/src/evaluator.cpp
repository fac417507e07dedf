#include "sentinel/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "sentinel/error.hpp"
#include "sentinel/hash.hpp"

namespace sentinel::eval {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace

ConfusionCounts confusion(std::span<const PredictionRecord> predictions) {
  ConfusionCounts c;
  for (const auto& p : predictions) {
    const bool gold_pos = p.gold == Label::jailbreak;
    const bool pred_pos = p.predicted == Label::jailbreak;
    if (gold_pos && pred_pos) {
      ++c.tp;
    } else if (!gold_pos && pred_pos) {
      ++c.fp;
    } else if (gold_pos) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

MetricsReport metrics(const ConfusionCounts& c) {
  MetricsReport r;
  r.counts = c;
  const auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.accuracy = ratio(c.tp + c.tn, c.total(), r.accuracy_undefined);
  r.precision = ratio(c.tp, c.tp + c.fp, r.precision_undefined);
  r.recall = ratio(c.tp, c.tp + c.fn, r.recall_undefined);
  r.f1_undefined = r.precision + r.recall == 0.0;
  r.f1 = r.f1_undefined ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["positive_class"] = "jailbreak";
  j["n"] = counts.total();
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["support"] = {{"benign", support_benign()}, {"jailbreak", support_jailbreak()}};
  j["confusion"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}};
  j["degenerate"] = {{"accuracy", accuracy_undefined},
                     {"precision", precision_undefined},
                     {"recall", recall_undefined},
                     {"f1", f1_undefined}};
  j["errors"] = errors;
  j["notes"] = "accuracy is plain accuracy over all scored items (alias: AvgAcc)";
  return j;
}

std::string MetricsReport::to_text(const std::string& title) const {
  std::ostringstream os;
  if (!title.empty()) os << title << '\n';
  os << "positive class: jailbreak    n=" << counts.total() << "    errors=" << errors << '\n';
  auto line = [&](const char* name, double v, bool undefined) {
    os << pad_right(name, 12) << fixed(v, 4) << (undefined ? "  (undefined: 0/0)" : "") << '\n';
  };
  line("accuracy", accuracy, accuracy_undefined);
  line("precision", precision, precision_undefined);
  line("recall", recall, recall_undefined);
  line("f1", f1, f1_undefined);
  os << "tp=" << counts.tp << " fp=" << counts.fp << " fn=" << counts.fn << " tn=" << counts.tn << '\n';
  return os.str();
}

const std::vector<std::string>& eval_option_keys() {
  static const std::vector<std::string> keys{"workers", "batch_size", "threshold"};
  return keys;
}

EvalOptions apply_config_json(const nlohmann::json& doc, EvalOptions opt) {
  if (!doc.is_object()) throw Error("invalid_config", "eval config must be a JSON object");
  const auto& keys = eval_option_keys();
  for (const auto& [key, value] : doc.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error("invalid_config", "unknown eval config key '" + key + "'");
    }
  }
  try {
    opt.workers = doc.value("workers", opt.workers);
    opt.batch_size = doc.value("batch_size", opt.batch_size);
    if (doc.contains("threshold")) {
      opt.threshold = doc["threshold"].is_null() ? std::nullopt : std::optional(doc["threshold"].get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("eval config type error: ") + e.what());
  }
  if (opt.workers == 0 || opt.batch_size == 0) throw Error("invalid_config", "workers and batch_size must be >= 1");
  if (opt.threshold && !(*opt.threshold >= 0.0 && *opt.threshold <= 1.0)) {
    throw Error("invalid_config", "threshold must lie in [0, 1]");
  }
  return opt;
}

const std::vector<std::string>& bench_option_keys() {
  static const std::vector<std::string> keys{"warmup", "iterations"};
  return keys;
}

BenchOptions apply_config_json(const nlohmann::json& doc, BenchOptions opt) {
  if (!doc.is_object()) throw Error("invalid_config", "bench config must be a JSON object");
  const auto& keys = bench_option_keys();
  for (const auto& [key, value] : doc.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error("invalid_config", "unknown bench config key '" + key + "'");
    }
  }
  try {
    opt.warmup = doc.value("warmup", opt.warmup);
    opt.iterations = doc.value("iterations", opt.iterations);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("bench config type error: ") + e.what());
  }
  if (opt.iterations == 0) throw Error("invalid_config", "iterations must be >= 1");
  return opt;
}

EvalResult evaluate(const Detector& detector, std::span<const corpus::LabeledPrompt> dataset,
                    const EvalOptions& options) {
  const std::size_t n = dataset.size();
  std::vector<std::optional<PredictionRecord>> slots(n);
  std::vector<std::optional<ItemError>> failures(n);
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t at = begin; at < end; at += batch) {
      const std::size_t stop = std::min(end, at + batch);
      std::vector<std::string> texts;
      texts.reserve(stop - at);
      for (std::size_t i = at; i < stop; ++i) texts.push_back(dataset[i].text);
      const auto outcomes = detector.classify_batch(texts, options.threshold);
      for (std::size_t k = 0; k < outcomes.size(); ++k) {
        const std::size_t i = at + k;
        if (outcomes[k].ok()) {
          const Verdict& v = *outcomes[k].verdict;
          slots[i] = PredictionRecord{dataset[i].label, v.label, v.jailbreak_probability, sha256_hex(dataset[i].text)};
        } else {
          failures[i] = ItemError{i, outcomes[k].error->code(), outcomes[k].error->what()};
        }
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(1, n));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  EvalResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) result.predictions.push_back(std::move(*slots[i]));
    if (failures[i]) result.errors.push_back(std::move(*failures[i]));
  }
  result.report = metrics(confusion(result.predictions));
  result.report.errors = result.errors.size();
  return result;
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> predictions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("unwritable", "cannot write " + path.string());
  for (const auto& p : predictions) {
    ordered_json j;
    j["text_hash"] = p.text_hash;
    j["gold"] = to_string(p.gold);
    j["predicted"] = to_string(p.predicted);
    j["p_jailbreak"] = p.jailbreak_probability;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("unwritable", "write failed for " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("dataset_unreadable", "cannot read " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error("malformed_row", "bad predictions line in " + path.string());
    const auto gold = parse_label(j.value("gold", std::string()));
    const auto pred = parse_label(j.value("predicted", std::string()));
    if (!gold || !pred) throw Error("malformed_row", "bad label in predictions dump " + path.string());
    out.push_back({*gold, *pred, j.value("p_jailbreak", 0.0), j.value("text_hash", std::string())});
  }
  return out;
}

ComparisonTable compare(std::span<const Detector> detectors, std::span<const NamedDataset> datasets,
                        const EvalOptions& options) {
  ComparisonTable table;
  std::vector<std::optional<std::vector<corpus::LabeledPrompt>>> loaded;
  for (const auto& d : datasets) {
    table.columns.push_back(d.name);
    try {
      loaded.push_back(corpus::read_corpus_file(d.path));
    } catch (const Error&) {
      loaded.push_back(std::nullopt);
    }
  }
  for (const auto& detector : detectors) {
    ComparisonTable::Row row;
    row.model_id = detector.bundle().model_id;
    double sum = 0.0;
    std::size_t present = 0;
    for (const auto& data : loaded) {
      if (!data) {
        row.cells.push_back(std::nullopt);
        row.has_absent = true;
        continue;
      }
      const double f1 = evaluate(detector, *data, options).report.f1;
      row.cells.push_back(f1);
      sum += f1;
      ++present;
    }
    row.average = present ? sum / static_cast<double>(present) : 0.0;
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::ordered_json ComparisonTable::to_json() const {
  ordered_json j;
  j["metric"] = "binary_f1";
  j["positive_class"] = "jailbreak";
  j["columns"] = columns;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    row["model_id"] = r.model_id;
    ordered_json cells = ordered_json::object();
    for (std::size_t i = 0; i < columns.size(); ++i) {
      cells[columns[i]] = r.cells[i] ? ordered_json(*r.cells[i]) : ordered_json(nullptr);
    }
    row["f1"] = std::move(cells);
    row["avg"] = r.average;
    row["avg_excludes_absent"] = r.has_absent;
    j["rows"].push_back(std::move(row));
  }
  return j;
}

std::string ComparisonTable::to_text() const {
  std::size_t model_w = std::string("Model").size();
  for (const auto& r : rows) model_w = std::max(model_w, r.model_id.size());
  std::vector<std::size_t> widths;
  for (const auto& c : columns) widths.push_back(std::max<std::size_t>(c.size(), 6));

  std::ostringstream os;
  os << pad_right("Model", model_w);
  for (std::size_t i = 0; i < columns.size(); ++i) os << "  " << pad_left(columns[i], widths[i]);
  os << "  " << pad_left("Avg", 6) << '\n';
  bool footnote = false;
  for (const auto& r : rows) {
    os << pad_right(r.model_id, model_w);
    for (std::size_t i = 0; i < columns.size(); ++i) {
      os << "  " << pad_left(r.cells[i] ? fixed(*r.cells[i]) : "absent", widths[i]);
    }
    os << "  " << pad_left(fixed(r.average) + (r.has_absent ? "*" : ""), 6) << '\n';
    footnote = footnote || r.has_absent;
  }
  if (footnote) os << "* average over present datasets only\n";
  return os.str();
}

double nearest_rank(std::vector<double> samples, double percentile) {
  if (samples.empty()) throw Error("empty_sample", "percentile of an empty sample");
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

LatencyStats summarize_latency(const std::vector<double>& samples_ms) {
  if (samples_ms.empty()) throw Error("empty_sample", "no latency samples");
  LatencyStats s;
  s.n = samples_ms.size();
  const auto [lo, hi] = std::minmax_element(samples_ms.begin(), samples_ms.end());
  s.min = *lo;
  s.max = *hi;
  s.mean = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(s.n);
  s.mean = std::clamp(s.mean, s.min, s.max);  // guards last-ulp drift on constant samples
  s.p50 = nearest_rank(samples_ms, 50);
  s.p95 = nearest_rank(samples_ms, 95);
  s.p99 = nearest_rank(samples_ms, 99);
  return s;
}

nlohmann::ordered_json LatencyStats::to_json() const {
  return {{"n", n},       {"unit", "ms"}, {"mean", mean}, {"p50", p50}, {"p95", p95},
          {"p99", p99},   {"min", min},   {"max", max}};
}

std::string LatencyStats::to_text() const {
  std::ostringstream os;
  os << "n=" << n << "  mean=" << fixed(mean) << "ms  p50=" << fixed(p50) << "ms  p95=" << fixed(p95)
     << "ms  p99=" << fixed(p99) << "ms  min=" << fixed(min) << "ms  max=" << fixed(max) << "ms\n";
  return os.str();
}

LatencyStats bench_latency(const Detector& detector, std::span<const std::string> prompts, std::size_t warmup,
                           std::size_t iterations) {
  if (iterations < 1) throw Error("invalid_argument", "iterations must be >= 1");
  if (prompts.empty()) throw Error("invalid_argument", "no prompts to benchmark");
  for (std::size_t i = 0; i < warmup; ++i) (void)detector.classify(prompts[i % prompts.size()]);
  std::vector<double> samples;
  samples.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)detector.classify(prompts[i % prompts.size()]);
    samples.push_back(Milliseconds(std::chrono::steady_clock::now() - t0).count());
  }
  return summarize_latency(samples);
}

}  // namespace sentinel::eval
