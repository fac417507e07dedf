#include "sentinel/heuristic.hpp"

#include <fstream>

#include "sentinel/error.hpp"
#include "sentinel/text.hpp"

namespace sentinel {

RuleTable::RuleTable(std::vector<Rule> rules) : rules_(std::move(rules)) {
  for (const auto& rule : rules_) {
    if (rule.kind == Rule::Kind::substring) {
      lowered_.push_back(to_lower(normalize_text(rule.pattern)));
      regexes_.push_back(nullptr);
      continue;
    }
    lowered_.emplace_back();
    try {
      regexes_.push_back(std::make_shared<const std::regex>(
          rule.pattern, std::regex::ECMAScript | std::regex::icase | std::regex::optimize));
    } catch (const std::regex_error& e) {
      throw Error("invalid_rule", "invalid regex rule '" + rule.pattern + "': " + e.what());
    }
  }
}

RuleTable RuleTable::from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw Error("invalid_rule", "rule table must be a JSON list");
  std::vector<Rule> rules;
  for (const auto& r : doc) {
    if (!r.is_object() || !r.contains("pattern") || !r["pattern"].is_string()) {
      throw Error("invalid_rule", "rule needs a string \"pattern\"");
    }
    Rule rule;
    rule.pattern = r["pattern"].get<std::string>();
    if (rule.pattern.empty()) throw Error("invalid_rule", "rule pattern must not be empty");
    const auto kind = r.value("kind", std::string("substring"));
    if (kind == "substring") {
      rule.kind = Rule::Kind::substring;
    } else if (kind == "regex") {
      rule.kind = Rule::Kind::regex;
    } else {
      throw Error("invalid_rule", "unknown rule kind '" + kind + "'");
    }
    rule.note = r.value("note", std::string());
    rules.push_back(std::move(rule));
  }
  return RuleTable(std::move(rules));
}

RuleTable RuleTable::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "missing file: " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error("invalid_rule", path.string() + " is not valid JSON");
  return from_json(doc);
}

const RuleTable& RuleTable::builtin() {
  static const RuleTable table = from_json(nlohmann::json::parse(builtin_rules_json()));
  return table;
}

const Rule* RuleTable::match(std::string_view text) const {
  const std::string haystack = to_lower(normalize_text(text));
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const bool hit = regexes_[i] ? std::regex_search(haystack, *regexes_[i])
                                 : haystack.find(lowered_[i]) != std::string::npos;
    if (hit) return &rules_[i];
  }
  return nullptr;
}

nlohmann::json RuleTable::to_json() const {
  auto out = nlohmann::json::array();
  for (const auto& r : rules_) {
    out.push_back({{"pattern", r.pattern},
                   {"kind", r.kind == Rule::Kind::regex ? "regex" : "substring"},
                   {"note", r.note}});
  }
  return out;
}

Verdict heuristic_classify(std::string_view text, const RuleTable& rules) {
  Verdict v;
  v.model_id = std::string(kHeuristicModelId);
  v.score = 1.0;
  if (rules.match(text)) {
    v.label = Label::jailbreak;
    v.jailbreak_probability = 1.0;
  } else {
    v.label = Label::benign;
    v.jailbreak_probability = 0.0;
  }
  return v;
}

}  // namespace sentinel
