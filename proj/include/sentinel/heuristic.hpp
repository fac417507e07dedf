#pragma once

#include <filesystem>
#include <memory>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentinel/verdict.hpp"

namespace sentinel {

inline constexpr std::string_view kHeuristicModelId = "heuristic-v1";

struct Rule {
  enum class Kind { substring, regex };
  std::string pattern;
  Kind kind = Kind::substring;
  std::string note;
};

// Case-insensitive pattern table. Matching runs on the lower-cased,
// whitespace-normalised prompt, so "Ignore   previous\ninstructions" hits the
// same substring rule as the canonical phrase.
class RuleTable {
 public:
  RuleTable() = default;
  explicit RuleTable(std::vector<Rule> rules);

  /// Parses a JSON list of {pattern, kind, note}. Invalid regexes are load errors.
  static RuleTable from_json(const nlohmann::json& doc);
  static RuleTable from_file(const std::filesystem::path& path);
  /// The shipped table (data/rules/heuristic-v1.json, compiled in).
  static const RuleTable& builtin();

  /// First matching rule, or nullptr.
  const Rule* match(std::string_view text) const;

  const std::vector<Rule>& rules() const noexcept { return rules_; }
  nlohmann::json to_json() const;

 private:
  std::vector<Rule> rules_;
  std::vector<std::string> lowered_;                 // substring rules, lower-cased
  std::vector<std::shared_ptr<const std::regex>> regexes_;  // regex rules, null otherwise
};

/// Jailbreak with score 1.0 when any rule matches, otherwise benign with score 1.0.
Verdict heuristic_classify(std::string_view text, const RuleTable& rules);

/// Text of the compiled-in default rule table.
std::string_view builtin_rules_json();

}  // namespace sentinel
