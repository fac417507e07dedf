#include <algorithm>
#include <fstream>
#include <sstream>

#include "sentinel/corpus.hpp"
#include "sentinel/error.hpp"
#include "sentinel/text.hpp"

namespace sentinel::corpus {
namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("source_unreadable", "source unreadable: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error("source_unreadable", "source unreadable: " + path.string());
  return std::move(ss).str();
}

[[noreturn]] void malformed(const SourceSpec& spec, std::size_t row, const std::string& what) {
  throw Error("malformed_row", "source '" + spec.id + "': malformed row " + std::to_string(row) +
                                   ": " + what);
}

IngestResult ingest_jsonl(const SourceSpec& spec, const std::string& bytes, bool skip) {
  IngestResult out;
  std::size_t row = 0;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) eol = bytes.size();
    std::string_view line(bytes.data() + pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (is_blank(line)) continue;
    const std::size_t this_row = row++;
    json parsed = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      if (skip) {
        ++out.malformed;
        continue;
      }
      malformed(spec, this_row, parsed.is_discarded() ? "invalid JSON" : "not a JSON object");
    }
    out.records.push_back({this_row, std::move(parsed)});
  }
  return out;
}

// RFC 4180: comma separated, double-quote quoting with "" as escape, quoted
// fields may span lines. Returns false on an unterminated quote.
bool parse_csv(const std::string& bytes, std::vector<std::vector<std::string>>& rows) {
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const char c = bytes[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_started || !field.empty() || !row.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        field_started = false;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) return false;
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return true;
}

IngestResult ingest_csv(const SourceSpec& spec, const std::string& bytes, bool skip) {
  std::vector<std::vector<std::string>> rows;
  if (!parse_csv(bytes, rows)) {
    throw Error("malformed_row", "source '" + spec.id + "': unterminated quoted field");
  }
  IngestResult out;
  if (rows.empty()) return out;
  const auto& header = rows.front();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t row = r - 1;
    if (rows[r].size() != header.size()) {
      if (skip) {
        ++out.malformed;
        continue;
      }
      malformed(spec, row,
                "expected " + std::to_string(header.size()) + " fields, got " +
                    std::to_string(rows[r].size()));
    }
    json obj = json::object();
    for (std::size_t c = 0; c < header.size(); ++c) obj[header[c]] = rows[r][c];
    out.records.push_back({row, std::move(obj)});
  }
  return out;
}

IngestResult ingest_columnar(const SourceSpec& spec, const std::string& bytes) {
  json doc = json::parse(bytes, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("columns") ||
      !doc["columns"].is_object()) {
    throw Error("malformed_row", "source '" + spec.id + "': columnar document needs a \"columns\" object");
  }
  const json& cols = doc["columns"];
  std::optional<std::size_t> n;
  for (const auto& [name, values] : cols.items()) {
    if (!values.is_array()) {
      throw Error("malformed_row", "source '" + spec.id + "': column '" + name + "' is not an array");
    }
    if (n && *n != values.size()) {
      throw Error("malformed_row", "source '" + spec.id + "': column '" + name + "' length mismatch");
    }
    n = values.size();
  }
  IngestResult out;
  for (std::size_t row = 0; row < n.value_or(0); ++row) {
    json obj = json::object();
    for (const auto& [name, values] : cols.items()) obj[name] = values[row];
    out.records.push_back({row, std::move(obj)});
  }
  return out;
}

std::string value_key(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

bool field_matches(const json& fields, const FieldFilter& f) {
  const auto it = fields.find(f.field);
  const bool present = it != fields.end() && !it->is_null();
  switch (f.op) {
    case FilterOp::exists:
      return present;
    case FilterOp::eq:
      return present && value_key(*it) == value_key(f.value);
    case FilterOp::ne:
      return !present || value_key(*it) != value_key(f.value);
    case FilterOp::in:
    case FilterOp::not_in: {
      bool hit = false;
      if (present) {
        for (const auto& candidate : f.value) {
          if (value_key(*it) == value_key(candidate)) {
            hit = true;
            break;
          }
        }
      }
      return f.op == FilterOp::in ? hit : !hit;
    }
    case FilterOp::contains:
      return present && value_key(*it).find(value_key(f.value)) != std::string::npos;
  }
  return false;
}

SourceFormat parse_format(const std::string& s) {
  if (s == "jsonl") return SourceFormat::jsonl;
  if (s == "csv") return SourceFormat::csv;
  if (s == "columnar") return SourceFormat::columnar;
  throw Error("invalid_recipe", "unknown source format '" + s + "'");
}

FilterOp parse_op(const std::string& s) {
  if (s == "eq" || s == "==") return FilterOp::eq;
  if (s == "ne" || s == "!=") return FilterOp::ne;
  if (s == "in") return FilterOp::in;
  if (s == "not_in") return FilterOp::not_in;
  if (s == "contains") return FilterOp::contains;
  if (s == "exists") return FilterOp::exists;
  throw Error("invalid_recipe", "unknown filter operator '" + s + "'");
}

Label require_label(const std::string& s) {
  auto label = parse_label(s);
  if (!label) throw Error("invalid_recipe", "unknown label '" + s + "'");
  return *label;
}

}  // namespace

void validate(const CurationConfig& cfg) {
  if (!(cfg.benign_ratio > 0.0 && cfg.benign_ratio < 1.0)) {
    throw Error("invalid_config", "benign_ratio must lie in (0, 1)");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw Error("invalid_config", "train_fraction must lie in (0, 1)");
  }
}

void validate(const SourceSpec& spec) {
  if (spec.id.empty()) throw Error("invalid_source", "source id must not be empty");
  if (spec.sample_cap && *spec.sample_cap == 0) {
    throw Error("invalid_source", "source '" + spec.id + "': sample_cap must be > 0");
  }
  if (const auto* rule = std::get_if<FromFieldLabel>(&spec.label_rule)) {
    if (rule->field.empty()) {
      throw Error("invalid_source", "source '" + spec.id + "': label field must not be empty");
    }
    if (rule->mapping.empty() && !rule->drop_unmatched) {
      throw Error("invalid_source", "source '" + spec.id + "': label mapping is empty");
    }
  }
}

IngestResult ingest_source(const SourceSpec& spec, bool skip_malformed) {
  const std::string bytes = read_file(spec.location);
  switch (spec.format) {
    case SourceFormat::jsonl:
      return ingest_jsonl(spec, bytes, skip_malformed);
    case SourceFormat::csv:
      return ingest_csv(spec, bytes, skip_malformed);
    case SourceFormat::columnar:
      return ingest_columnar(spec, bytes);
  }
  throw Error("invalid_source", "unknown format");
}

std::optional<LabeledPrompt> extract_prompt(const SourceSpec& spec, const RawRecord& raw,
                                            Rejection* why) {
  auto reject = [why](Rejection r) -> std::optional<LabeledPrompt> {
    if (why) *why = r;
    return std::nullopt;
  };

  for (const auto& f : spec.filters) {
    if (!field_matches(raw.fields, f)) return reject(Rejection::filtered);
  }

  const auto text_it = raw.fields.find(spec.text_field);
  if (text_it == raw.fields.end()) {
    throw Error("row_error", "source '" + spec.id + "' row " + std::to_string(raw.row) +
                                 ": text field '" + spec.text_field + "' absent");
  }

  Label label = Label::benign;
  if (const auto* constant = std::get_if<ConstantLabel>(&spec.label_rule)) {
    label = constant->label;
  } else {
    const auto& rule = std::get<FromFieldLabel>(spec.label_rule);
    const auto label_it = raw.fields.find(rule.field);
    if (label_it == raw.fields.end()) {
      throw Error("row_error", "source '" + spec.id + "' row " + std::to_string(raw.row) +
                                   ": label field '" + rule.field + "' absent");
    }
    const auto mapped = rule.mapping.find(value_key(*label_it));
    if (mapped == rule.mapping.end()) {
      if (rule.drop_unmatched) return reject(Rejection::label_dropped);
      throw Error("row_error", "source '" + spec.id + "' row " + std::to_string(raw.row) +
                                   ": unmapped label value " + value_key(*label_it));
    }
    if (!mapped->second) return reject(Rejection::label_dropped);
    label = *mapped->second;
  }

  std::string text = text_it->is_null() ? std::string() : value_key(*text_it);
  if (is_blank(text)) return reject(Rejection::empty_text);
  return LabeledPrompt{std::move(text), label, spec.id, std::nullopt, raw.row};
}

static Recipe parse_recipe_impl(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object() || !doc.contains("sources") || !doc["sources"].is_array()) {
    throw Error("invalid_recipe", "recipe must be an object with a \"sources\" array");
  }
  Recipe recipe;
  for (const auto& s : doc["sources"]) {
    SourceSpec spec;
    spec.id = s.at("id").get<std::string>();
    std::filesystem::path loc = s.at("location").get<std::string>();
    spec.location = loc.is_relative() && !base_dir.empty() ? base_dir / loc : loc;
    spec.format = parse_format(s.value("format", std::string("jsonl")));
    spec.text_field = s.value("text_field", std::string("text"));
    if (s.contains("filter")) {
      const json& filters = s["filter"];
      auto add = [&](const json& f) {
        spec.filters.push_back({f.at("field").get<std::string>(),
                                parse_op(f.value("op", std::string("eq"))),
                                f.value("value", json())});
      };
      if (filters.is_array()) {
        for (const auto& f : filters) add(f);
      } else {
        add(filters);
      }
    }
    const json& rule = s.at("label_rule");
    if (rule.contains("constant")) {
      spec.label_rule = ConstantLabel{require_label(rule["constant"].get<std::string>())};
    } else {
      FromFieldLabel ff;
      ff.field = rule.at("from_field").get<std::string>();
      for (const auto& [k, v] : rule.at("mapping").items()) {
        const auto target = v.get<std::string>();
        ff.mapping[k] = target == "drop" ? std::nullopt : std::optional<Label>(require_label(target));
      }
      ff.drop_unmatched = rule.value("unmatched", std::string("drop")) == "drop";
      spec.label_rule = std::move(ff);
    }
    if (s.contains("sample_cap") && !s["sample_cap"].is_null()) {
      const auto cap = s["sample_cap"].get<long long>();
      if (cap <= 0) throw Error("invalid_source", "source '" + spec.id + "': sample_cap must be > 0");
      spec.sample_cap = static_cast<std::size_t>(cap);
    }
    spec.seed = s.value("seed", std::uint64_t{0});
    validate(spec);
    for (const auto& existing : recipe.sources) {
      if (existing.id == spec.id) throw Error("invalid_recipe", "duplicate source id '" + spec.id + "'");
    }
    recipe.sources.push_back(std::move(spec));
  }
  if (doc.contains("config")) recipe.config = apply_config_json(doc["config"], CurationConfig{});
  return recipe;
}

const std::vector<std::string>& curation_config_keys() {
  static const std::vector<std::string> keys{"benign_ratio", "train_fraction", "seed", "dedup", "skip_malformed"};
  return keys;
}

CurationConfig apply_config_json(const nlohmann::json& doc, CurationConfig cfg) {
  if (!doc.is_object()) throw Error("invalid_config", "curation config must be a JSON object");
  const auto& keys = curation_config_keys();
  for (const auto& [key, value] : doc.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error("invalid_config", "unknown curation config key '" + key + "'");
    }
  }
  try {
    cfg.benign_ratio = doc.value("benign_ratio", cfg.benign_ratio);
    cfg.train_fraction = doc.value("train_fraction", cfg.train_fraction);
    cfg.seed = doc.value("seed", cfg.seed);
    if (doc.contains("dedup")) {
      const auto mode = doc["dedup"].get<std::string>();
      if (mode == "off") cfg.dedup = DedupMode::off;
      else if (mode == "normalized_exact") cfg.dedup = DedupMode::normalized_exact;
      else throw Error("invalid_config", "dedup must be off or normalized_exact");
    }
    cfg.skip_malformed = doc.value("skip_malformed", cfg.skip_malformed);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_config", std::string("curation config type error: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

Recipe parse_recipe(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  try {
    return parse_recipe_impl(doc, base_dir);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_recipe", std::string("recipe schema error: ") + e.what());
  }
}

Recipe load_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("recipe_unreadable", "cannot read recipe " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error("invalid_recipe", "recipe is not valid JSON: " + path.string());
  return parse_recipe(doc, path.parent_path());
}

}  // namespace sentinel::corpus
