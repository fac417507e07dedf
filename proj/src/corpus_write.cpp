#include <chrono>
#include <ctime>
#include <fstream>
#include <future>
#include <sstream>

#include "sentinel/corpus.hpp"
#include "sentinel/error.hpp"
#include "sentinel/hash.hpp"

namespace sentinel::corpus {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kTrainFile = "train.jsonl";
constexpr const char* kTestFile = "test.jsonl";
constexpr const char* kManifestFile = "manifest.json";

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_lines(const std::filesystem::path& path, const std::vector<LabeledPrompt>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("unwritable", "cannot write " + path.string());
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  out.flush();
  if (!out) throw Error("unwritable", "write failed for " + path.string());
}

std::size_t count_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

std::string dedup_name(DedupMode m) { return m == DedupMode::off ? "off" : "normalized_exact"; }

}  // namespace

bool SourceAccounting::conserved() const noexcept {
  return ingested == malformed + filtered_out + label_dropped + empty_text + capped_away + deduped +
                         conflicts + downsampled + emitted;
}

nlohmann::ordered_json DatasetManifest::to_json() const {
  ordered_json j;
  j["config"] = {{"benign_ratio", config.benign_ratio},
                 {"train_fraction", config.train_fraction},
                 {"seed", config.seed},
                 {"dedup", dedup_name(config.dedup)},
                 {"skip_malformed", config.skip_malformed}};
  j["sources"] = ordered_json::array();
  for (const auto& s : sources) {
    j["sources"].push_back({{"id", s.id},
                            {"ingested", s.ingested},
                            {"malformed", s.malformed},
                            {"filtered_out", s.filtered_out},
                            {"label_dropped", s.label_dropped},
                            {"empty_text", s.empty_text},
                            {"capped_away", s.capped_away},
                            {"deduped", s.deduped},
                            {"conflicts", s.conflicts},
                            {"downsampled", s.downsampled},
                            {"emitted", s.emitted}});
  }
  j["conflict_groups"] = conflict_groups;
  j["splits"] = ordered_json::object();
  for (const auto& [split, labels] : splits) {
    for (const auto& [label, n] : labels) j["splits"][split][label] = n;
  }
  j["checksums"] = {{"algorithm", kDigestAlgorithm}, {"files", ordered_json::object()}};
  for (const auto& [file, digest] : checksums) j["checksums"]["files"][file] = digest;
  j["created_at"] = created_at;
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    const auto& c = j.at("config");
    m.config.benign_ratio = c.at("benign_ratio").get<double>();
    m.config.train_fraction = c.at("train_fraction").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.dedup = c.at("dedup").get<std::string>() == "off" ? DedupMode::off : DedupMode::normalized_exact;
    m.config.skip_malformed = c.value("skip_malformed", false);
    for (const auto& s : j.at("sources")) {
      SourceAccounting a;
      a.id = s.at("id").get<std::string>();
      a.ingested = s.at("ingested");
      a.malformed = s.at("malformed");
      a.filtered_out = s.at("filtered_out");
      a.label_dropped = s.at("label_dropped");
      a.empty_text = s.at("empty_text");
      a.capped_away = s.at("capped_away");
      a.deduped = s.at("deduped");
      a.conflicts = s.at("conflicts");
      a.downsampled = s.at("downsampled");
      a.emitted = s.at("emitted");
      m.sources.push_back(std::move(a));
    }
    m.conflict_groups = j.value("conflict_groups", std::size_t{0});
    for (const auto& [split, labels] : j.at("splits").items()) {
      for (const auto& [label, n] : labels.items()) m.splits[split][label] = n.get<std::size_t>();
    }
    for (const auto& [file, digest] : j.at("checksums").at("files").items()) {
      m.checksums[file] = digest.get<std::string>();
    }
    m.created_at = j.value("created_at", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_manifest", std::string("manifest schema error: ") + e.what());
  }
  return m;
}

std::string to_jsonl_line(const LabeledPrompt& p) {
  ordered_json j;
  j["text"] = p.text;
  j["label"] = to_string(p.label);
  j["source"] = p.source;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::vector<LabeledPrompt> read_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("dataset_unreadable", "cannot read dataset " + path.string());
  std::vector<LabeledPrompt> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    const auto bad = [&] {
      return Error("malformed_row", path.string() + ": malformed corpus line " + std::to_string(row));
    };
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string() ||
        !j.contains("label") || !j["label"].is_string()) {
      throw bad();
    }
    const auto label = parse_label(j["label"].get<std::string>());
    if (!label) throw bad();
    out.push_back({j["text"].get<std::string>(), *label, j.value("source", std::string()),
                   std::nullopt, row});
    ++row;
  }
  return out;
}

DatasetManifest write_corpus(const std::vector<LabeledPrompt>& train,
                             const std::vector<LabeledPrompt>& test,
                             const std::filesystem::path& out_dir, DatasetManifest manifest) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("unwritable", "cannot create " + out_dir.string() + ": " + ec.message());

  write_lines(out_dir / kTrainFile, train);
  write_lines(out_dir / kTestFile, test);

  manifest.splits.clear();
  for (const auto* split : {"train", "test"}) {
    manifest.splits[split]["benign"] = 0;
    manifest.splits[split]["jailbreak"] = 0;
  }
  for (const auto& r : train) ++manifest.splits["train"][std::string(to_string(r.label))];
  for (const auto& r : test) ++manifest.splits["test"][std::string(to_string(r.label))];
  manifest.checksums[kTrainFile] = sha256_file_hex(out_dir / kTrainFile);
  manifest.checksums[kTestFile] = sha256_file_hex(out_dir / kTestFile);
  if (manifest.created_at.empty()) manifest.created_at = utc_timestamp();

  std::ofstream out(out_dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("unwritable", "cannot write " + (out_dir / kManifestFile).string());
  out << manifest.to_json().dump(2) << '\n';
  if (!out) throw Error("unwritable", "write failed for manifest");
  return manifest;
}

bool verify_manifest(const std::filesystem::path& out_dir, std::string* problem) {
  auto fail = [problem](std::string why) {
    if (problem) *problem = std::move(why);
    return false;
  };
  std::ifstream in(out_dir / kManifestFile);
  if (!in) return fail("manifest missing");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return fail("manifest is not valid JSON");
  DatasetManifest m;
  try {
    m = DatasetManifest::from_json(j);
  } catch (const Error& e) {
    return fail(e.what());
  }
  if (j["checksums"].value("algorithm", std::string()) != kDigestAlgorithm) {
    return fail("unsupported digest algorithm");
  }
  for (const auto& [file, digest] : m.checksums) {
    if (sha256_file_hex(out_dir / file) != digest) return fail("checksum mismatch for " + file);
  }
  for (const auto& [split, file] : {std::pair{"train", kTrainFile}, std::pair{"test", kTestFile}}) {
    std::size_t expected = 0;
    for (const auto& [label, n] : m.splits[split]) expected += n;
    if (count_lines(out_dir / file) != expected) return fail(std::string("line count mismatch for ") + file);
  }
  return true;
}

DatasetManifest curate(const std::vector<SourceSpec>& sources, const CurationConfig& cfg,
                       const std::filesystem::path& out_dir) {
  validate(cfg);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    validate(sources[i]);
    for (std::size_t k = 0; k < i; ++k) {
      if (sources[k].id == sources[i].id) {
        throw Error("invalid_recipe", "duplicate source id '" + sources[i].id + "'");
      }
    }
  }

  struct SourceOutput {
    SourceAccounting acct;
    std::vector<LabeledPrompt> prompts;
  };
  auto run_source = [&cfg](const SourceSpec& spec) {
    SourceOutput out;
    out.acct.id = spec.id;
    auto ingested = ingest_source(spec, cfg.skip_malformed);
    out.acct.ingested = ingested.records.size() + ingested.malformed;
    out.acct.malformed = ingested.malformed;
    for (const auto& raw : ingested.records) {
      Rejection why{};
      if (auto p = extract_prompt(spec, raw, &why)) {
        out.prompts.push_back(std::move(*p));
        continue;
      }
      switch (why) {
        case Rejection::filtered: ++out.acct.filtered_out; break;
        case Rejection::label_dropped: ++out.acct.label_dropped; break;
        case Rejection::empty_text: ++out.acct.empty_text; break;
      }
    }
    if (spec.sample_cap && out.prompts.size() > *spec.sample_cap) {
      out.acct.capped_away = out.prompts.size() - *spec.sample_cap;
      out.prompts = cap_samples(std::move(out.prompts), *spec.sample_cap, spec.seed);
    }
    return out;
  };

  std::vector<std::future<SourceOutput>> pending;
  pending.reserve(sources.size());
  for (const auto& spec : sources) pending.push_back(std::async(std::launch::async, run_source, std::cref(spec)));

  DatasetManifest manifest;
  manifest.config = cfg;
  std::vector<LabeledPrompt> all;
  std::map<std::string, std::size_t> slot;
  for (auto& f : pending) {
    SourceOutput out = f.get();
    slot[out.acct.id] = manifest.sources.size();
    manifest.sources.push_back(out.acct);
    all.insert(all.end(), std::make_move_iterator(out.prompts.begin()),
               std::make_move_iterator(out.prompts.end()));
  }
  canonical_order(all);

  if (cfg.dedup == DedupMode::normalized_exact) {
    DedupResult d = deduplicate(all);
    manifest.conflict_groups = d.conflict_groups;
    for (const auto& [src, n] : d.duplicates_by_source) manifest.sources[slot.at(src)].deduped = n;
    for (const auto& [src, n] : d.conflicts_by_source) manifest.sources[slot.at(src)].conflicts = n;
    all = std::move(d.records);
  }

  MixtureResult mix = compose_mixture(all, cfg);
  for (const auto& [src, n] : mix.downsampled_by_source) manifest.sources[slot.at(src)].downsampled = n;

  SplitResult split = split_train_test(mix.records, cfg);
  for (const auto& r : split.train) ++manifest.sources[slot.at(r.source)].emitted;
  for (const auto& r : split.test) ++manifest.sources[slot.at(r.source)].emitted;

  return write_corpus(split.train, split.test, out_dir, std::move(manifest));
}

}  // namespace sentinel::corpus
