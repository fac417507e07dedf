#include "sentinel/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

namespace sentinel {
namespace {

icu::UnicodeString from_utf8(std::string_view text) {
  return icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
}

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

// ICU replaces ill-formed sequences with U+FFFD; keep the raw bytes instead.
bool is_valid_utf8(std::string_view text) {
  const auto* p = reinterpret_cast<const uint8_t*>(text.data());
  int32_t i = 0;
  const auto n = static_cast<int32_t>(text.size());
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) return false;
  }
  return true;
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string nfc;
  if (is_valid_utf8(text)) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc_norm = icu::Normalizer2::getNFCInstance(status);
    if (U_SUCCESS(status)) {
      icu::UnicodeString normalized = nfc_norm->normalize(from_utf8(text), status);
      if (U_SUCCESS(status)) nfc = to_utf8(normalized);
    }
    if (U_FAILURE(status)) nfc.assign(text);
  } else {
    nfc.assign(text);
  }

  // Collapse whitespace runs (Unicode White_Space) and trim.
  std::string out;
  out.reserve(nfc.size());
  const auto* p = reinterpret_cast<const uint8_t*>(nfc.data());
  const auto n = static_cast<int32_t>(nfc.size());
  int32_t i = 0;
  bool pending_space = false;
  while (i < n) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c >= 0 && u_isUWhiteSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.append(nfc, static_cast<std::size_t>(start), static_cast<std::size_t>(i - start));
  }
  return out;
}

std::string to_lower(std::string_view text) {
  if (!is_valid_utf8(text)) {
    std::string out(text);
    for (auto& ch : out) {
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    return out;
  }
  icu::UnicodeString s = from_utf8(text);
  s.toLower(icu::Locale::getRoot());
  return to_utf8(s);
}

bool is_blank(std::string_view text) {
  const auto* p = reinterpret_cast<const uint8_t*>(text.data());
  const auto n = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0 || !u_isUWhiteSpace(c)) return false;
  }
  return true;
}

}  // namespace sentinel
