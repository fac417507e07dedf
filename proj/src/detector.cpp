#include "sentinel/detector.hpp"

#include <condition_variable>
#include <fstream>
#include <mutex>
#include <set>

#include "sentinel/hash.hpp"

namespace sentinel {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr const char* kConfigFile = "config.json";
constexpr const char* kTokenizerFile = "tokenizer.json";
constexpr const char* kGraphFile = "model.onnx";

[[noreturn]] void invalid(const std::string& why) { throw Error("invalid_bundle", "invalid bundle: " + why); }

std::filesystem::path require_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error("missing_file", "missing file: " + path.string());
  return path;
}

std::array<Label, 2> parse_label_map(const json& j) {
  std::array<std::optional<Label>, 2> slots;
  std::size_t entries = 0;
  auto put = [&](long long index, const json& name) {
    ++entries;
    if (index < 0 || index > 1 || !name.is_string()) return;
    slots[static_cast<std::size_t>(index)] = parse_label(name.get<std::string>());
  };
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) put(static_cast<long long>(i), j[i]);
  } else if (j.is_object()) {
    for (const auto& [key, name] : j.items()) {
      long long index = -1;
      try {
        std::size_t used = 0;
        index = std::stoll(key, &used);
        if (used != key.size()) index = -1;
      } catch (const std::exception&) {
      }
      put(index, name);
    }
  } else {
    throw Error("label_map_not_bijective", "label map not bijective: expected an object or list");
  }
  if (entries != 2 || !slots[0] || !slots[1] || *slots[0] == *slots[1]) {
    throw Error("label_map_not_bijective", "label map not bijective onto {benign, jailbreak}");
  }
  return {*slots[0], *slots[1]};
}

}  // namespace

std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  if (s == "onnx") return BackendKind::onnx;
  if (s == "remote") return BackendKind::remote;
  if (s == "stub") return BackendKind::stub;
  if (s == "heuristic") return BackendKind::heuristic;
  return std::nullopt;
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::onnx: return "onnx";
    case BackendKind::remote: return "remote";
    case BackendKind::stub: return "stub";
    case BackendKind::heuristic: return "heuristic";
  }
  return "unknown";
}

ModelBundle bundle_from_config(const nlohmann::json& config, const std::filesystem::path& dir) try {
  if (!config.is_object()) invalid("config must be a JSON object");
  ModelBundle b;
  b.directory = dir;
  if (!config.contains("model_id") || !config["model_id"].is_string()) invalid("model_id missing");
  b.model_id = config["model_id"].get<std::string>();

  const auto kind = config.value("backend", std::string("onnx"));
  const auto parsed_kind = parse_backend_kind(kind);
  if (!parsed_kind) invalid("unknown backend '" + kind + "'");
  b.backend = *parsed_kind;

  if (config.contains("label_map")) {
    b.label_map = parse_label_map(config["label_map"]);
  } else if (config.contains("id2label")) {
    b.label_map = parse_label_map(config["id2label"]);
  } else if (b.backend != BackendKind::heuristic) {
    throw Error("label_map_not_bijective", "label map not bijective: label_map missing");
  }

  if (config.contains("max_sequence_length")) {
    const auto& m = config["max_sequence_length"];
    if (!m.is_number_integer() || m.get<long long>() < 1) invalid("max_sequence_length must be >= 1");
    b.max_sequence_length = m.get<std::size_t>();
  }
  if (config.contains("threshold")) {
    const auto& t = config["threshold"];
    if (!t.is_number() || t.get<double>() < 0.0 || t.get<double>() > 1.0) invalid("threshold must lie in [0, 1]");
    b.threshold = t.get<double>();
  }
  if (config.contains("truncation")) {
    const auto t = parse_truncation(config["truncation"].get<std::string>());
    if (!t) invalid("truncation must be head, tail or head_tail");
    b.truncation = *t;
  }
  if (config.contains("session_pool_size")) {
    const auto& p = config["session_pool_size"];
    if (!p.is_number_integer() || p.get<long long>() < 1) invalid("session_pool_size must be >= 1");
    b.session_pool_size = p.get<std::size_t>();
  }
  if (config.contains("backend_options")) b.backend_options = config["backend_options"];

  std::string digest_input = std::string(kConfigFile) + ":" + sha256_hex(config.dump()) + "\n";
  auto hash_file = [&](const std::filesystem::path& p) {
    digest_input += p.filename().string() + ":" + sha256_file_hex(p) + "\n";
  };

  if (b.backend == BackendKind::heuristic) {
    if (config.contains("rules")) {
      const auto path = require_file(dir / config["rules"].get<std::string>());
      b.rules = std::make_shared<const RuleTable>(RuleTable::from_file(path));
      hash_file(path);
    } else {
      b.rules = std::shared_ptr<const RuleTable>(&RuleTable::builtin(), [](const RuleTable*) {});
      digest_input += "builtin-rules:" + sha256_hex(builtin_rules_json()) + "\n";
    }
  } else {
    const auto tok_path = require_file(dir / config.value("tokenizer", std::string(kTokenizerFile)));
    b.tokenizer = std::make_shared<const Tokenizer>(Tokenizer::from_file(tok_path));
    hash_file(tok_path);
    if (b.backend == BackendKind::onnx) {
      hash_file(require_file(dir / config.value("graph", std::string(kGraphFile))));
    }
  }
  b.checksum = sha256_hex(digest_input);
  return b;
} catch (const nlohmann::json::exception& e) {
  invalid(e.what());
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  const auto config_path = require_file(dir / kConfigFile);
  std::ifstream in(config_path);
  json config = json::parse(in, nullptr, false);
  if (config.is_discarded()) invalid(config_path.string() + " is not valid JSON");
  return bundle_from_config(config, dir);
}

ModelBundle heuristic_bundle() {
  return bundle_from_config({{"model_id", kHeuristicModelId}, {"backend", "heuristic"}}, {});
}

ModelBundle resolve_bundle(std::string_view name_or_path) {
  if (name_or_path == "heuristic") return heuristic_bundle();
  return load_bundle(std::filesystem::path(name_or_path));
}

// Backend sessions. Thread-safe backends are shared; the rest are leased one
// caller at a time from a fixed pool.
struct Detector::State {
  ModelBundle bundle;
  std::vector<std::shared_ptr<InferenceBackend>> sessions;
  bool pooled = false;
  std::mutex mu;
  std::condition_variable cv;
  std::vector<bool> busy;

  LogitMatrixd run(std::span<const TokenSequence> batch) {
    if (!pooled) return sessions.front()->infer(batch);
    std::size_t slot = 0;
    {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] {
        for (slot = 0; slot < busy.size(); ++slot) {
          if (!busy[slot]) return true;
        }
        return false;
      });
      busy[slot] = true;
    }
    struct Release {
      State* s;
      std::size_t slot;
      ~Release() {
        {
          std::lock_guard lock(s->mu);
          s->busy[slot] = false;
        }
        s->cv.notify_one();
      }
    } release{this, slot};
    return sessions[slot]->infer(batch);
  }

  void adopt(std::vector<std::shared_ptr<InferenceBackend>> backends) {
    sessions = std::move(backends);
    pooled = !sessions.empty() && !sessions.front()->thread_safe();
    busy.assign(sessions.size(), false);
  }
};

Detector::Detector(ModelBundle bundle) : state_(std::make_shared<State>()) {
  state_->bundle = std::move(bundle);
  const ModelBundle& b = state_->bundle;
  const json& opts = b.backend_options;
  auto make_one = [&]() -> std::shared_ptr<InferenceBackend> {
    switch (b.backend) {
      case BackendKind::onnx:
        return make_onnx_backend(b.directory / kGraphFile, opts, b.tokenizer->pad_id());
      case BackendKind::remote: {
        RemoteBackend::Options o;
        o.url = opts.value("url", o.url);
        o.path = opts.value("path", o.path);
        o.timeout = std::chrono::milliseconds(opts.value("timeout_ms", 5000));
        o.pad_id = b.tokenizer->pad_id();
        return std::make_shared<RemoteBackend>(o);
      }
      case BackendKind::stub: {
        Logits2<double> l = Logits2<double>::Zero();
        if (opts.contains("logits")) {
          const auto v = opts["logits"].get<std::vector<double>>();
          if (v.size() != 2) invalid("stub logits must be two numbers");
          l << v[0], v[1];
        }
        return std::make_shared<StubBackend>(l);
      }
      case BackendKind::heuristic:
        return nullptr;
    }
    return nullptr;
  };
  if (b.backend == BackendKind::heuristic) return;
  std::vector<std::shared_ptr<InferenceBackend>> sessions{make_one()};
  if (!sessions.front()->thread_safe()) {
    for (std::size_t i = 1; i < b.session_pool_size; ++i) sessions.push_back(make_one());
  }
  state_->adopt(std::move(sessions));
}

Detector::Detector(ModelBundle bundle, std::shared_ptr<InferenceBackend> backend)
    : state_(std::make_shared<State>()) {
  state_->bundle = std::move(bundle);
  if (!backend) throw Error("invalid_bundle", "null backend");
  if (!state_->bundle.tokenizer) throw Error("invalid_bundle", "a token backend needs a tokenizer");
  state_->adopt({std::move(backend)});
}

const ModelBundle& Detector::bundle() const noexcept { return state_->bundle; }

TokenSequence Detector::tokenize(std::string_view text) const {
  const ModelBundle& b = state_->bundle;
  if (!b.tokenizer) return {};
  return b.tokenizer->encode(text, b.max_sequence_length, b.truncation);
}

namespace {

double effective_threshold(const ModelBundle& b, std::optional<double> override) {
  const double t = override.value_or(b.threshold);
  if (!(t >= 0.0 && t <= 1.0)) throw Error("invalid_threshold", "threshold must lie in [0, 1]");
  return t;
}

}  // namespace

Verdict Detector::classify(std::string_view text, std::optional<double> threshold) const {
  const ModelBundle& b = state_->bundle;
  const double thr = effective_threshold(b, threshold);
  const auto t0 = Clock::now();
  double p = 0.0;
  if (b.backend == BackendKind::heuristic && state_->sessions.empty()) {
    p = b.rules->match(text) ? 1.0 : 0.0;
  } else {
    const TokenSequence seq = tokenize(text);
    try {
      const LogitMatrixd logits = state_->run(std::span<const TokenSequence>(&seq, 1));
      if (logits.rows() != 1) throw BackendError("backend returned " + std::to_string(logits.rows()) + " rows for 1 input");
      p = softmax(Logits2<double>(logits.row(0).transpose()))(static_cast<Eigen::Index>(b.jailbreak_index()));
    } catch (const BackendError&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendError(e.what());
    }
  }
  return make_verdict(p, thr, b.model_id, Clock::now() - t0);
}

std::vector<Outcome> Detector::classify_batch(std::span<const std::string> texts,
                                              std::optional<double> threshold) const {
  std::vector<Outcome> out(texts.size());
  if (texts.empty()) return out;
  const ModelBundle& b = state_->bundle;
  const double thr = effective_threshold(b, threshold);

  auto one_by_one = [&] {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      try {
        out[i].verdict = classify(texts[i], thr);
      } catch (const Error& e) {
        out[i].error = e;
      }
    }
  };
  if (b.backend == BackendKind::heuristic && state_->sessions.empty()) {
    one_by_one();
    return out;
  }

  const auto t0 = Clock::now();
  std::vector<TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(tokenize(t));
  LogitMatrixd probs;
  try {
    const LogitMatrixd logits = state_->run(seqs);
    if (logits.rows() != static_cast<Eigen::Index>(texts.size())) throw BackendError("batch row mismatch");
    probs = softmax_rows(logits);
  } catch (const std::exception&) {
    one_by_one();
    return out;
  }
  const Milliseconds per_item = (Clock::now() - t0) / static_cast<double>(texts.size());
  const auto jcol = static_cast<Eigen::Index>(b.jailbreak_index());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out[i].verdict = make_verdict(probs(static_cast<Eigen::Index>(i), jcol), thr, b.model_id, per_item);
  }
  return out;
}

}  // namespace sentinel
