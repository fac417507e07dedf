#pragma once

#include <string>
#include <string_view>

namespace sentinel {

/// NFC, trim, and collapse every internal whitespace run to one ASCII space.
/// Case is preserved. Invalid UTF-8 is passed through byte-wise.
std::string normalize_text(std::string_view text);

/// Unicode lower-casing (root locale).
std::string to_lower(std::string_view text);

/// True when the text is empty or whitespace-only.
bool is_blank(std::string_view text);

}  // namespace sentinel
