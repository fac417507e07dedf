// sentinel: curation, evaluation, benchmarking, one-shot classification and
// the screening service behind one command.
//
// Exit status: 0 success, 1 domain error, 2 usage error. Data goes to stdout
// (or --out); diagnostics go to stderr as "sentinel: error[<code>]: <message>".

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <pthread.h>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sentinel/corpus.hpp"
#include "sentinel/detector.hpp"
#include "sentinel/error.hpp"
#include "sentinel/evaluator.hpp"
#include "sentinel/guard.hpp"

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using sentinel::Error;

enum class Format { json, text };

// Exit code 1 with a stable machine-readable code.
struct Failure {
  std::string code;
  std::string message;
};

std::string keys_footer(const std::vector<std::string>& keys) {
  std::string out = "Config file (--config, JSON object; overrides flags) keys:\n ";
  for (const auto& k : keys) out += " " + k;
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config_unreadable", "cannot read config file " + path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error("invalid_config", "config file is not valid JSON: " + path);
  return doc;
}

void emit(const std::string& data, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << data;
    std::cout.flush();
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error("output_unwritable", "cannot write " + out_path);
  out << data;
}

std::string render(const ordered_json& j, const std::string& text, Format f) {
  return f == Format::json ? j.dump(2) + "\n" : text;
}

void add_format(CLI::App* cmd, Format& format) {
  cmd->add_option("--format", format, "Output format")
      ->transform(CLI::CheckedTransformer(std::map<std::string, Format>{{"json", Format::json}, {"text", Format::text}},
                                          CLI::ignore_case))
      ->default_str("json");
}

std::vector<std::string> read_prompt_lines(const std::string& path) {
  // Corpus JSONL is accepted as is; any other file is one prompt per line.
  std::ifstream in(path);
  if (!in) throw Error("source_unreadable", "cannot read " + path);
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("text") && j["text"].is_string()) {
      prompts.push_back(j["text"].get<std::string>());
    } else {
      prompts.push_back(line);
    }
  }
  return prompts;
}

// ---------------------------------------------------------------------------

struct CurateArgs {
  std::string recipe, out, config;
  std::optional<std::uint64_t> seed;
  std::optional<double> benign_ratio, train_fraction;
  std::optional<std::string> dedup;
  bool skip_malformed = false;
  Format format = Format::json;
};

int run_curate(const CurateArgs& a) {
  namespace corpus = sentinel::corpus;
  const corpus::Recipe recipe = corpus::load_recipe(a.recipe);
  corpus::CurationConfig cfg = recipe.config.value_or(corpus::CurationConfig{});
  json flags = json::object();
  if (a.seed) flags["seed"] = *a.seed;
  if (a.benign_ratio) flags["benign_ratio"] = *a.benign_ratio;
  if (a.train_fraction) flags["train_fraction"] = *a.train_fraction;
  if (a.dedup) flags["dedup"] = *a.dedup;
  if (a.skip_malformed) flags["skip_malformed"] = true;
  cfg = corpus::apply_config_json(flags, cfg);
  if (!a.config.empty()) cfg = corpus::apply_config_json(read_json_file(a.config), cfg);

  const corpus::DatasetManifest m = corpus::curate(recipe.sources, cfg, a.out);

  std::ostringstream text;
  text << "wrote " << a.out << "\n";
  for (const auto& [split, counts] : m.splits) {
    text << "  " << split << ":";
    for (const auto& [label, n] : counts) text << " " << label << "=" << n;
    text << "\n";
  }
  for (const auto& s : m.sources) {
    text << "  source " << s.id << ": ingested=" << s.ingested << " emitted=" << s.emitted << "\n";
  }
  const auto j = m.to_json();
  std::cout << render(j, text.str(), a.format);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string bundle, data, out, predictions, config;
  std::optional<std::size_t> workers, batch_size;
  std::optional<double> threshold;
  Format format = Format::json;
};

sentinel::eval::EvalOptions eval_options(const std::optional<std::size_t>& workers,
                                         const std::optional<std::size_t>& batch_size,
                                         const std::optional<double>& threshold, const std::string& config) {
  json flags = json::object();
  if (workers) flags["workers"] = *workers;
  if (batch_size) flags["batch_size"] = *batch_size;
  if (threshold) flags["threshold"] = *threshold;
  auto opt = sentinel::eval::apply_config_json(flags, sentinel::eval::EvalOptions{});
  if (!config.empty()) opt = sentinel::eval::apply_config_json(read_json_file(config), opt);
  return opt;
}

int run_eval(const EvalArgs& a) {
  const auto opt = eval_options(a.workers, a.batch_size, a.threshold, a.config);
  const sentinel::Detector detector(sentinel::resolve_bundle(a.bundle));
  const auto dataset = sentinel::corpus::read_corpus_file(a.data);
  const auto result = sentinel::eval::evaluate(detector, dataset, opt);
  if (!a.predictions.empty()) sentinel::eval::write_predictions(a.predictions, result.predictions);

  auto j = result.report.to_json();
  j["model_id"] = detector.bundle().model_id;
  emit(render(j, result.report.to_text(detector.bundle().model_id), a.format), a.out);
  for (const auto& e : result.errors) {
    std::cerr << "sentinel: item " << e.index << " failed [" << e.code << "]: " << e.message << "\n";
  }
  if (!result.errors.empty()) {
    throw Failure{"eval_incomplete", std::to_string(result.errors.size()) + " item(s) could not be classified"};
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<std::string> bundles, datasets;
  std::string out, config;
  std::optional<std::size_t> workers, batch_size;
  std::optional<double> threshold;
  Format format = Format::json;
};

int run_compare(const CompareArgs& a) {
  const auto opt = eval_options(a.workers, a.batch_size, a.threshold, a.config);
  std::vector<sentinel::Detector> detectors;
  for (const auto& b : a.bundles) detectors.emplace_back(sentinel::resolve_bundle(b));
  std::vector<sentinel::eval::NamedDataset> datasets;
  for (const auto& d : a.datasets) {
    const auto eq = d.find('=');
    if (eq == std::string::npos || eq == 0) {
      datasets.push_back({std::filesystem::path(d).stem().string(), d});
    } else {
      datasets.push_back({d.substr(0, eq), d.substr(eq + 1)});
    }
  }
  const auto table = sentinel::eval::compare(detectors, datasets, opt);
  emit(render(table.to_json(), table.to_text(), a.format), a.out);
  if (std::any_of(table.rows.begin(), table.rows.end(), [](const auto& r) { return r.has_absent; })) {
    std::cerr << "sentinel: some datasets were absent; averages cover present cells only\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string bundle, prompts, out, config;
  std::vector<std::string> texts;
  std::optional<std::size_t> warmup, iterations;
  Format format = Format::json;
};

int run_bench(const BenchArgs& a) {
  json flags = json::object();
  if (a.warmup) flags["warmup"] = *a.warmup;
  if (a.iterations) flags["iterations"] = *a.iterations;
  auto opt = sentinel::eval::apply_config_json(flags, sentinel::eval::BenchOptions{});
  if (!a.config.empty()) opt = sentinel::eval::apply_config_json(read_json_file(a.config), opt);

  std::vector<std::string> prompts = a.texts;
  if (!a.prompts.empty()) {
    auto more = read_prompt_lines(a.prompts);
    prompts.insert(prompts.end(), more.begin(), more.end());
  }
  if (prompts.empty()) prompts.push_back("hi how are you?");

  const sentinel::Detector detector(sentinel::resolve_bundle(a.bundle));
  const auto stats = sentinel::eval::bench_latency(detector, prompts, opt.warmup, opt.iterations);
  auto j = stats.to_json();
  j["model_id"] = detector.bundle().model_id;
  j["warmup"] = opt.warmup;
  emit(render(j, stats.to_text(), a.format), a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct ClassifyArgs {
  std::string bundle = "heuristic", config;
  std::optional<std::string> text;
  std::optional<double> threshold;
  Format format = Format::json;
};

const std::vector<std::string>& classify_config_keys() {
  static const std::vector<std::string> keys{"threshold"};
  return keys;
}

int run_classify(const ClassifyArgs& a) {
  std::optional<double> threshold = a.threshold;
  if (!a.config.empty()) {
    const json doc = read_json_file(a.config);
    if (!doc.is_object()) throw Error("invalid_config", "config file must hold a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (key != "threshold") throw Error("invalid_config", "unknown classify config key '" + key + "'");
      if (!value.is_number()) throw Error("invalid_config", "threshold must be a number");
      threshold = value.get<double>();
    }
  }
  std::string text;
  if (a.text) {
    text = *a.text;
  } else {
    text.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  }
  const sentinel::Detector detector(sentinel::resolve_bundle(a.bundle));
  const auto v = detector.classify(text, threshold);
  ordered_json j;
  j["label"] = to_string(v.label);
  j["score"] = v.score;
  j["p_jailbreak"] = v.jailbreak_probability;
  j["model_id"] = v.model_id;
  j["latency_ms"] = v.latency.count();
  std::ostringstream t;
  t << to_string(v.label) << " score=" << v.score << " p_jailbreak=" << v.jailbreak_probability
    << " model=" << v.model_id << "\n";
  std::cout << (a.format == Format::json ? j.dump() + "\n" : t.str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string config;
  std::optional<std::string> listen, bundle, on_jailbreak, on_error, log, log_level, probe_text;
  std::optional<double> threshold;
  std::optional<std::size_t> max_body_bytes;
  std::optional<long long> health_deadline_ms;
  std::optional<bool> log_raw_text;
};

int run_serve(const ServeArgs& a) {
  namespace guard = sentinel::guard;
  // Precedence: defaults < environment < flags < config file.
  guard::ServiceConfig cfg = guard::apply_env({});
  json flags = json::object();
  if (a.listen) flags["listen"] = *a.listen;
  if (a.bundle) flags["bundle"] = *a.bundle;
  if (a.threshold) flags["threshold"] = *a.threshold;
  if (a.on_jailbreak) flags["on_jailbreak"] = *a.on_jailbreak;
  if (a.on_error) flags["on_error"] = *a.on_error;
  if (a.max_body_bytes) flags["max_body_bytes"] = *a.max_body_bytes;
  if (a.log) flags["log"] = *a.log;
  if (a.log_level) flags["log_level"] = *a.log_level;
  if (a.log_raw_text) flags["log_raw_text"] = *a.log_raw_text;
  if (a.health_deadline_ms) flags["health_deadline_ms"] = *a.health_deadline_ms;
  if (a.probe_text) flags["probe_text"] = *a.probe_text;
  cfg = guard::apply_config_json(flags, cfg);
  if (!a.config.empty()) cfg = guard::apply_config_json(read_json_file(a.config), cfg);

  // Signals are handled synchronously on one thread; block them everywhere
  // else before any worker thread is spawned.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGHUP);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  guard::GuardService service(cfg);
  service.start();
  std::cerr << "sentinel: serving " << cfg.bundle << " on " << cfg.host << ":" << service.port() << "\n";

  std::thread signals([&service, set] {
    for (;;) {
      int sig = 0;
      if (sigwait(&set, &sig) != 0) continue;
      if (sig == SIGHUP) {
        try {
          service.reload_from_config();
          std::cerr << "sentinel: bundle reloaded\n";
        } catch (const std::exception& e) {
          std::cerr << "sentinel: reload failed, keeping current bundle: " << e.what() << "\n";
        }
        continue;
      }
      service.stop();
      return;
    }
  });
  service.wait();
  signals.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-injection detection: corpus curation, evaluation and screening service", "sentinel"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sentinel::guard::kVersion));

  CurateArgs curate;
  auto* c = app.add_subcommand("curate", "Build train/test splits from a source recipe");
  c->add_option("--recipe", curate.recipe, "Recipe JSON (sources and optional config block)")
      ->required()
      ->check(CLI::ExistingFile);
  c->add_option("--out", curate.out, "Output directory for train.jsonl, test.jsonl, manifest.json")->required();
  c->add_option("--config", curate.config, "Curation config JSON");
  c->add_option("--seed", curate.seed, "Sampling seed");
  c->add_option("--benign-ratio", curate.benign_ratio, "Target benign share in (0, 1)");
  c->add_option("--train-fraction", curate.train_fraction, "Train share in (0, 1)");
  c->add_option("--dedup", curate.dedup, "off | normalized_exact");
  c->add_flag("--skip-malformed", curate.skip_malformed, "Skip unparseable rows instead of failing");
  add_format(c, curate.format);
  c->footer(keys_footer(sentinel::corpus::curation_config_keys()));

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a detector on a labeled corpus file");
  e->add_option("--bundle", ev.bundle, "Bundle directory or 'heuristic'")->required();
  e->add_option("--data", ev.data, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Write the report here instead of stdout");
  e->add_option("--predictions", ev.predictions, "Write the per-item predictions dump (JSONL)");
  e->add_option("--config", ev.config, "Eval config JSON");
  e->add_option("--workers", ev.workers, "Concurrent workers");
  e->add_option("--batch-size", ev.batch_size, "Prompts per backend call");
  e->add_option("--threshold", ev.threshold, "Decision threshold override in [0, 1]");
  add_format(e, ev.format);
  e->footer(keys_footer(sentinel::eval::eval_option_keys()));

  CompareArgs cmp;
  auto* m = app.add_subcommand("compare", "Binary F1 table across detectors and datasets");
  m->add_option("--bundle", cmp.bundles, "Bundle directory or 'heuristic' (repeatable)")->required();
  m->add_option("--dataset", cmp.datasets, "name=path to corpus JSONL (repeatable, column order kept)")->required();
  m->add_option("--out", cmp.out, "Write the table here instead of stdout");
  m->add_option("--config", cmp.config, "Eval config JSON");
  m->add_option("--workers", cmp.workers, "Concurrent workers");
  m->add_option("--batch-size", cmp.batch_size, "Prompts per backend call");
  m->add_option("--threshold", cmp.threshold, "Decision threshold override in [0, 1]");
  add_format(m, cmp.format);
  m->footer(keys_footer(sentinel::eval::eval_option_keys()));

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Sequential single-prompt latency benchmark");
  b->add_option("--bundle", bench.bundle, "Bundle directory or 'heuristic'")->required();
  b->add_option("--prompts", bench.prompts, "Prompt file: corpus JSONL or one prompt per line");
  b->add_option("--text", bench.texts, "Prompt (repeatable)");
  b->add_option("--out", bench.out, "Write the stats here instead of stdout");
  b->add_option("--config", bench.config, "Bench config JSON");
  b->add_option("--warmup", bench.warmup, "Unmeasured calls before timing (default 10)");
  b->add_option("--iterations", bench.iterations, "Measured calls (default 100)");
  add_format(b, bench.format);
  b->footer(keys_footer(sentinel::eval::bench_option_keys()));

  ClassifyArgs cls;
  auto* k = app.add_subcommand("classify", "Classify one prompt and print its verdict");
  k->add_option("--bundle", cls.bundle, "Bundle directory or 'heuristic'")->default_str("heuristic");
  k->add_option("--text", cls.text, "Prompt text (read from stdin when omitted)");
  k->add_option("--config", cls.config, "Classify config JSON");
  k->add_option("--threshold", cls.threshold, "Decision threshold override in [0, 1]");
  add_format(k, cls.format);
  k->footer(keys_footer(classify_config_keys()));

  ServeArgs srv;
  auto* s = app.add_subcommand("serve", "Run the HTTP screening service (SIGHUP reloads the bundle)");
  s->add_option("--config", srv.config, "Service config JSON");
  s->add_option("--listen", srv.listen, "host:port (env SENTINEL_LISTEN, default 127.0.0.1:8080)");
  s->add_option("--bundle", srv.bundle, "Bundle directory or 'heuristic' (env SENTINEL_BUNDLE)");
  s->add_option("--threshold", srv.threshold, "Threshold override in [0, 1] (env SENTINEL_THRESHOLD)");
  s->add_option("--on-jailbreak", srv.on_jailbreak, "block | flag (default block)");
  s->add_option("--on-error", srv.on_error, "fail | block (default fail; block = fail closed)");
  s->add_option("--max-body-bytes", srv.max_body_bytes, "Request body limit, >= 1024 (default 65536)");
  s->add_option("--log", srv.log, "stderr | none | file path (default stderr)");
  s->add_option("--log-level", srv.log_level, "debug | info | warn | error | off (env SENTINEL_LOG_LEVEL)");
  s->add_option("--log-raw-text", srv.log_raw_text, "true | false; log prompt text next to its hash");
  s->add_option("--health-deadline-ms", srv.health_deadline_ms, "Self-test deadline for /healthz (default 1000)");
  s->add_option("--probe-text", srv.probe_text, "Self-test prompt for /healthz");
  s->footer(keys_footer(sentinel::guard::config_keys()) +
            "\nPrecedence: defaults < environment < flags < config file.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c) return run_curate(curate);
    if (*e) return run_eval(ev);
    if (*m) return run_compare(cmp);
    if (*b) return run_bench(bench);
    if (*k) return run_classify(cls);
    if (*s) return run_serve(srv);
  } catch (const Failure& f) {
    std::cerr << "sentinel: error[" << f.code << "]: " << f.message << "\n";
    return 1;
  } catch (const Error& err) {
    std::cerr << "sentinel: error[" << err.code() << "]: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "sentinel: error[internal]: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
