#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace sentinel {

/// The two classes of the detection task. `jailbreak` is the positive class
/// everywhere metrics are reported.
enum class Label { benign, jailbreak };

constexpr std::string_view to_string(Label label) noexcept {
  return label == Label::benign ? "benign" : "jailbreak";
}

constexpr std::optional<Label> parse_label(std::string_view s) noexcept {
  if (s == "benign") return Label::benign;
  if (s == "jailbreak") return Label::jailbreak;
  return std::nullopt;
}

}  // namespace sentinel
