#include "sentinel/tokenizer.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include <algorithm>
#include <array>
#include <climits>
#include <fstream>
#include <functional>
#include <unordered_map>

#include "sentinel/error.hpp"

namespace sentinel {
namespace {

using nlohmann::json;

[[noreturn]] void unparseable(const std::string& why) {
  throw Error("tokenizer_unparseable", "tokenizer definition unparseable: " + why);
}

// Code points of a UTF-8 string with their byte offsets. Ill-formed bytes
// are kept as single-byte units with code point -1.
struct Utf8Units {
  std::vector<UChar32> cps;
  std::vector<std::size_t> offsets;  // size cps.size() + 1
};

Utf8Units decode(std::string_view s) {
  Utf8Units u;
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const auto n = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < n) {
    u.offsets.push_back(static_cast<std::size_t>(i));
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) i = start + 1;
    u.cps.push_back(c);
  }
  u.offsets.push_back(s.size());
  return u;
}

void append_utf8(std::string& out, UChar32 c) {
  char buf[4];
  int32_t len = 0;
  UBool err = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, 4, c, err);
  if (!err) out.append(buf, static_cast<std::size_t>(len));
}

bool is_letter(UChar32 c) { return c >= 0 && (U_GET_GC_MASK(c) & U_GC_L_MASK) != 0; }
bool is_number(UChar32 c) { return c >= 0 && (U_GET_GC_MASK(c) & U_GC_N_MASK) != 0; }
bool is_space(UChar32 c) { return c >= 0 && u_isUWhiteSpace(c); }
bool is_word_char(UChar32 c) {
  return c == '_' || (c >= 0 && (u_isalnum(c) || (U_GET_GC_MASK(c) & U_GC_M_MASK) != 0));
}
bool is_bert_punct(UChar32 c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) {
    return true;
  }
  return c >= 0 && u_ispunct(c);
}
bool is_cjk(UChar32 c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2A6DF) ||
         (c >= 0x2A700 && c <= 0x2B73F) || (c >= 0x2B740 && c <= 0x2B81F) ||
         (c >= 0x2B820 && c <= 0x2CEAF) || (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

std::string icu_normalize(std::string_view s, const icu::Normalizer2* norm) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = norm->normalize(in, status);
  if (U_FAILURE(status)) return std::string(s);
  std::string r;
  out.toUTF8String(r);
  return r;
}

std::string lowercase(std::string_view s) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  u.toLower(icu::Locale::getRoot());
  std::string r;
  u.toUTF8String(r);
  return r;
}

// GPT-2 byte <-> printable code point table.
std::array<UChar32, 256> byte_to_unicode_table() {
  std::array<UChar32, 256> table{};
  std::array<bool, 256> direct{};
  for (int b = '!'; b <= '~'; ++b) direct[b] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
  int n = 0;
  for (int b = 0; b < 256; ++b) table[b] = direct[b] ? b : 256 + n++;
  return table;
}

std::string byte_level_map(std::string_view piece) {
  static const auto table = byte_to_unicode_table();
  std::string out;
  out.reserve(piece.size() * 2);
  for (unsigned char b : piece) append_utf8(out, table[b]);
  return out;
}

// Splits like the GPT-2 pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
std::vector<std::string> gpt2_split(std::string_view text) {
  const Utf8Units u = decode(text);
  const std::size_t n = u.cps.size();
  std::vector<std::string> out;
  auto emit = [&](std::size_t a, std::size_t b) {
    out.emplace_back(text.substr(u.offsets[a], u.offsets[b] - u.offsets[a]));
  };
  auto other = [](UChar32 c) { return !is_space(c) && !is_letter(c) && !is_number(c); };

  std::size_t i = 0;
  while (i < n) {
    const UChar32 c = u.cps[i];
    if (c == '\'' && i + 1 < n) {
      const UChar32 a = u.cps[i + 1];
      const UChar32 b = i + 2 < n ? u.cps[i + 2] : 0;
      if (a == 's' || a == 't' || a == 'm' || a == 'd') {
        emit(i, i + 2);
        i += 2;
        continue;
      }
      if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) {
        emit(i, i + 3);
        i += 3;
        continue;
      }
    }
    const std::size_t body = (c == ' ' && i + 1 < n) ? i + 1 : i;
    const UChar32 head = u.cps[body];
    std::size_t j = body;
    if (is_letter(head)) {
      while (j < n && is_letter(u.cps[j])) ++j;
    } else if (is_number(head)) {
      while (j < n && is_number(u.cps[j])) ++j;
    } else if (other(head)) {
      while (j < n && other(u.cps[j])) ++j;
    }
    if (j > body) {
      emit(i, j);
      i = j;
      continue;
    }
    // Whitespace run starting at i.
    std::size_t k = i;
    while (k < n && is_space(u.cps[k])) ++k;
    if (k == i) {  // unreachable for well-formed input; keep progress
      emit(i, i + 1);
      ++i;
      continue;
    }
    if (k < n && k - i >= 2) {
      emit(i, k - 1);
      i = k - 1;
    } else {
      emit(i, k);
      i = k;
    }
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  const Utf8Units u = decode(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < u.cps.size()) {
    while (i < u.cps.size() && is_space(u.cps[i])) ++i;
    std::size_t j = i;
    while (j < u.cps.size() && !is_space(u.cps[j])) ++j;
    if (j > i) out.emplace_back(text.substr(u.offsets[i], u.offsets[j] - u.offsets[i]));
    i = j;
  }
  return out;
}

// \w+|[^\w\s]+
std::vector<std::string> split_word_punct(std::string_view text) {
  const Utf8Units u = decode(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = u.cps.size();
  while (i < n) {
    if (is_space(u.cps[i])) {
      ++i;
      continue;
    }
    const bool word = is_word_char(u.cps[i]);
    std::size_t j = i;
    while (j < n && !is_space(u.cps[j]) && is_word_char(u.cps[j]) == word) ++j;
    out.emplace_back(text.substr(u.offsets[i], u.offsets[j] - u.offsets[i]));
    i = j;
  }
  return out;
}

std::vector<std::string> split_bert(std::string_view text) {
  const Utf8Units u = decode(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = u.cps.size();
  while (i < n) {
    if (is_space(u.cps[i])) {
      ++i;
      continue;
    }
    if (is_bert_punct(u.cps[i])) {
      out.emplace_back(text.substr(u.offsets[i], u.offsets[i + 1] - u.offsets[i]));
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !is_space(u.cps[j]) && !is_bert_punct(u.cps[j])) ++j;
    out.emplace_back(text.substr(u.offsets[i], u.offsets[j] - u.offsets[i]));
    i = j;
  }
  return out;
}

enum class NormKind { lowercase, nfc, nfkc, strip, bert };
struct NormStep {
  NormKind kind;
  bool clean_text = true;
  bool chinese_chars = true;
  bool strip_accents = false;
  bool lower = true;
};

enum class PreKind { byte_level, whitespace, whitespace_split, bert };
struct PreStep {
  PreKind kind;
  bool add_prefix_space = false;
  bool use_regex = true;
};

enum class ModelKind { wordpiece, bpe };

struct TemplatePiece {
  bool is_sequence = false;
  std::vector<std::int64_t> ids;  // special token ids when !is_sequence
};

}  // namespace

std::optional<Truncation> parse_truncation(std::string_view s) {
  if (s == "head") return Truncation::head;
  if (s == "tail") return Truncation::tail;
  if (s == "head_tail" || s == "head+tail") return Truncation::head_tail;
  return std::nullopt;
}

struct Tokenizer::Impl {
  std::vector<NormStep> normalizers;
  std::vector<PreStep> pre;
  ModelKind model = ModelKind::wordpiece;
  std::unordered_map<std::string, std::int64_t> vocab;
  std::optional<std::int64_t> unk_id;
  std::string continuing_prefix = "##";
  std::size_t max_input_chars = 100;
  std::unordered_map<std::string, int> merge_ranks;  // "left\x1fright" -> rank
  bool ignore_merges = false;
  std::vector<std::pair<std::string, std::int64_t>> added;  // longest first
  std::vector<TemplatePiece> single_template;
  std::size_t special_count = 0;
  std::int64_t pad = 0;

  std::string normalize(std::string_view text) const;
  std::vector<std::string> pretokenize(const std::string& text) const;
  void model_encode(const std::string& word, std::vector<std::int64_t>& out) const;
  void wordpiece(const std::string& word, std::vector<std::int64_t>& out) const;
  void bpe(const std::string& word, std::vector<std::int64_t>& out) const;
};

std::string Tokenizer::Impl::normalize(std::string_view text) const {
  std::string s(text);
  for (const auto& step : normalizers) {
    UErrorCode status = U_ZERO_ERROR;
    switch (step.kind) {
      case NormKind::lowercase:
        s = lowercase(s);
        break;
      case NormKind::nfc:
        s = icu_normalize(s, icu::Normalizer2::getNFCInstance(status));
        break;
      case NormKind::nfkc:
        s = icu_normalize(s, icu::Normalizer2::getNFKCInstance(status));
        break;
      case NormKind::strip: {
        const Utf8Units u = decode(s);
        std::size_t a = 0, b = u.cps.size();
        while (a < b && is_space(u.cps[a])) ++a;
        while (b > a && is_space(u.cps[b - 1])) --b;
        s = s.substr(u.offsets[a], u.offsets[b] - u.offsets[a]);
        break;
      }
      case NormKind::bert: {
        const Utf8Units u = decode(s);
        std::string r;
        for (std::size_t i = 0; i < u.cps.size(); ++i) {
          const UChar32 c = u.cps[i];
          if (step.clean_text) {
            if (c == 0 || c == 0xFFFD || c < 0) continue;
            if (c != '\t' && c != '\n' && c != '\r' && u_iscntrl(c)) continue;
            if (is_space(c)) {
              r.push_back(' ');
              continue;
            }
          }
          if (step.chinese_chars && is_cjk(c)) {
            r.push_back(' ');
            append_utf8(r, c);
            r.push_back(' ');
            continue;
          }
          r.append(s, u.offsets[i], u.offsets[i + 1] - u.offsets[i]);
        }
        if (step.strip_accents) {
          r = icu_normalize(r, icu::Normalizer2::getNFDInstance(status));
          const Utf8Units d = decode(r);
          std::string stripped;
          for (std::size_t i = 0; i < d.cps.size(); ++i) {
            if (d.cps[i] >= 0 && u_charType(d.cps[i]) == U_NON_SPACING_MARK) continue;
            stripped.append(r, d.offsets[i], d.offsets[i + 1] - d.offsets[i]);
          }
          r = std::move(stripped);
        }
        if (step.lower) r = lowercase(r);
        s = std::move(r);
        break;
      }
    }
  }
  return s;
}

std::vector<std::string> Tokenizer::Impl::pretokenize(const std::string& text) const {
  std::vector<std::string> pieces{text};
  if (pre.empty()) return pieces;
  for (const auto& step : pre) {
    std::vector<std::string> next;
    for (const auto& piece : pieces) {
      std::vector<std::string> parts;
      switch (step.kind) {
        case PreKind::byte_level: {
          std::string src = piece;
          if (step.add_prefix_space && !src.empty() && src.front() != ' ') src.insert(src.begin(), ' ');
          parts = step.use_regex ? gpt2_split(src) : std::vector<std::string>{src};
          for (auto& p : parts) p = byte_level_map(p);
          break;
        }
        case PreKind::whitespace:
          parts = split_word_punct(piece);
          break;
        case PreKind::whitespace_split:
          parts = split_whitespace(piece);
          break;
        case PreKind::bert:
          parts = split_bert(piece);
          break;
      }
      for (auto& p : parts) {
        if (!p.empty()) next.push_back(std::move(p));
      }
    }
    pieces = std::move(next);
  }
  return pieces;
}

void Tokenizer::Impl::wordpiece(const std::string& word, std::vector<std::int64_t>& out) const {
  const Utf8Units u = decode(word);
  const std::size_t n = u.cps.size();
  auto unk = [&] {
    if (unk_id) out.push_back(*unk_id);
  };
  if (n > max_input_chars) {
    unk();
    return;
  }
  std::vector<std::int64_t> pieces;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = n;
    std::optional<std::int64_t> found;
    while (start < end) {
      std::string sub = word.substr(u.offsets[start], u.offsets[end] - u.offsets[start]);
      if (start > 0) sub = continuing_prefix + sub;
      if (auto it = vocab.find(sub); it != vocab.end()) {
        found = it->second;
        break;
      }
      --end;
    }
    if (!found) {
      unk();
      return;
    }
    pieces.push_back(*found);
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

void Tokenizer::Impl::bpe(const std::string& word, std::vector<std::int64_t>& out) const {
  if (ignore_merges) {
    if (auto it = vocab.find(word); it != vocab.end()) {
      out.push_back(it->second);
      return;
    }
  }
  const Utf8Units u = decode(word);
  std::vector<std::string> symbols;
  symbols.reserve(u.cps.size());
  for (std::size_t i = 0; i < u.cps.size(); ++i) {
    symbols.push_back(word.substr(u.offsets[i], u.offsets[i + 1] - u.offsets[i]));
  }
  std::string key;
  while (symbols.size() > 1) {
    int best = INT_MAX;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      key.assign(symbols[i]).push_back('\x1f');
      key.append(symbols[i + 1]);
      if (auto it = merge_ranks.find(key); it != merge_ranks.end() && it->second < best) {
        best = it->second;
        best_at = i;
      }
    }
    if (best == INT_MAX) break;
    const std::string left = symbols[best_at];
    const std::string right = symbols[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        merged.push_back(left + right);
        ++i;
      } else {
        merged.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(merged);
  }
  for (const auto& s : symbols) {
    if (auto it = vocab.find(s); it != vocab.end()) {
      out.push_back(it->second);
    } else if (unk_id) {
      out.push_back(*unk_id);
    }
  }
}

void Tokenizer::Impl::model_encode(const std::string& word, std::vector<std::int64_t>& out) const {
  if (model == ModelKind::wordpiece) {
    wordpiece(word, out);
  } else {
    bpe(word, out);
  }
}

Tokenizer::Tokenizer(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Tokenizer::Tokenizer(Tokenizer&&) noexcept = default;
Tokenizer& Tokenizer::operator=(Tokenizer&&) noexcept = default;
Tokenizer::~Tokenizer() = default;

Tokenizer Tokenizer::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "missing file: " + path.string());
  json def = json::parse(in, nullptr, false);
  if (def.is_discarded()) unparseable(path.string() + " is not valid JSON");
  return from_json(def);
}

Tokenizer Tokenizer::from_json(const nlohmann::json& def) try {
  auto impl = std::make_unique<Impl>();
  if (!def.is_object() || !def.contains("model") || !def["model"].is_object()) {
    unparseable("missing \"model\" object");
  }

  // Normalizers.
  std::function<void(const json&)> add_norm = [&](const json& n) {
    if (n.is_null()) return;
    const auto type = n.at("type").get<std::string>();
    if (type == "Sequence") {
      for (const auto& sub : n.at("normalizers")) add_norm(sub);
    } else if (type == "Lowercase") {
      impl->normalizers.push_back({NormKind::lowercase});
    } else if (type == "NFC") {
      impl->normalizers.push_back({NormKind::nfc});
    } else if (type == "NFKC") {
      impl->normalizers.push_back({NormKind::nfkc});
    } else if (type == "Strip") {
      impl->normalizers.push_back({NormKind::strip});
    } else if (type == "BertNormalizer") {
      NormStep s{NormKind::bert};
      s.clean_text = n.value("clean_text", true);
      s.chinese_chars = n.value("handle_chinese_chars", true);
      s.lower = n.value("lowercase", true);
      s.strip_accents = n.contains("strip_accents") && !n["strip_accents"].is_null()
                            ? n["strip_accents"].get<bool>()
                            : s.lower;
      impl->normalizers.push_back(s);
    } else {
      unparseable("unsupported normalizer " + type);
    }
  };
  if (def.contains("normalizer")) add_norm(def["normalizer"]);

  std::function<void(const json&)> add_pre = [&](const json& p) {
    if (p.is_null()) return;
    const auto type = p.at("type").get<std::string>();
    if (type == "Sequence") {
      for (const auto& sub : p.at("pretokenizers")) add_pre(sub);
    } else if (type == "ByteLevel") {
      impl->pre.push_back({PreKind::byte_level, p.value("add_prefix_space", false), p.value("use_regex", true)});
    } else if (type == "Whitespace") {
      impl->pre.push_back({PreKind::whitespace});
    } else if (type == "WhitespaceSplit") {
      impl->pre.push_back({PreKind::whitespace_split});
    } else if (type == "BertPreTokenizer") {
      impl->pre.push_back({PreKind::bert});
    } else {
      unparseable("unsupported pre_tokenizer " + type);
    }
  };
  if (def.contains("pre_tokenizer")) add_pre(def["pre_tokenizer"]);

  const json& model = def["model"];
  std::string model_type = model.value("type", std::string());
  if (model_type.empty()) model_type = model.contains("merges") ? "BPE" : "WordPiece";
  if (!model.contains("vocab") || !model["vocab"].is_object()) unparseable("model.vocab must be an object");
  for (const auto& [tok, id] : model["vocab"].items()) impl->vocab.emplace(tok, id.get<std::int64_t>());

  std::optional<std::string> unk;
  if (model.contains("unk_token") && model["unk_token"].is_string()) unk = model["unk_token"].get<std::string>();

  if (model_type == "WordPiece") {
    impl->model = ModelKind::wordpiece;
    impl->continuing_prefix = model.value("continuing_subword_prefix", std::string("##"));
    impl->max_input_chars = model.value("max_input_chars_per_word", std::size_t{100});
  } else if (model_type == "BPE") {
    impl->model = ModelKind::bpe;
    impl->ignore_merges = model.value("ignore_merges", false);
    if (model.contains("continuing_subword_prefix") && !model["continuing_subword_prefix"].is_null()) {
      unparseable("BPE continuing_subword_prefix is not supported");
    }
    if (model.contains("end_of_word_suffix") && !model["end_of_word_suffix"].is_null()) {
      unparseable("BPE end_of_word_suffix is not supported");
    }
    int rank = 0;
    for (const auto& m : model.value("merges", json::array())) {
      std::string left, right;
      if (m.is_string()) {
        const auto s = m.get<std::string>();
        const auto space = s.find(' ');
        if (space == std::string::npos) unparseable("merge without separator: " + s);
        left = s.substr(0, space);
        right = s.substr(space + 1);
      } else if (m.is_array() && m.size() == 2) {
        left = m[0].get<std::string>();
        right = m[1].get<std::string>();
      } else {
        unparseable("merge entries must be \"a b\" strings or [a, b] pairs");
      }
      impl->merge_ranks.emplace(left + '\x1f' + right, rank++);
    }
  } else {
    unparseable("unsupported model " + model_type);
  }

  if (def.contains("added_tokens")) {
    for (const auto& t : def["added_tokens"]) {
      auto content = t.at("content").get<std::string>();
      const auto id = t.at("id").get<std::int64_t>();
      impl->vocab.emplace(content, id);
      impl->added.emplace_back(std::move(content), id);
    }
  }
  std::stable_sort(impl->added.begin(), impl->added.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  if (unk) {
    auto it = impl->vocab.find(*unk);
    if (it == impl->vocab.end()) unparseable("unk_token '" + *unk + "' not in vocabulary");
    impl->unk_id = it->second;
  }

  auto id_of = [&](const std::string& tok) {
    auto it = impl->vocab.find(tok);
    if (it == impl->vocab.end()) unparseable("special token '" + tok + "' not in vocabulary");
    return it->second;
  };

  std::function<void(const json&)> add_post = [&](const json& p) {
    if (p.is_null()) return;
    const auto type = p.at("type").get<std::string>();
    if (type == "Sequence") {
      for (const auto& sub : p.at("processors")) add_post(sub);
    } else if (type == "ByteLevel") {
      // offsets only
    } else if (type == "TemplateProcessing") {
      impl->single_template.clear();
      const json& specials = p.value("special_tokens", json::object());
      for (const auto& piece : p.at("single")) {
        if (piece.contains("Sequence")) {
          impl->single_template.push_back({true, {}});
        } else {
          const auto name = piece.at("SpecialToken").at("id").get<std::string>();
          TemplatePiece tp;
          if (specials.contains(name) && specials[name].contains("ids")) {
            tp.ids = specials[name]["ids"].get<std::vector<std::int64_t>>();
          } else {
            tp.ids = {id_of(name)};
          }
          impl->single_template.push_back(std::move(tp));
        }
      }
    } else if (type == "BertProcessing" || type == "RobertaProcessing") {
      const auto cls = p.at("cls");
      const auto sep = p.at("sep");
      impl->single_template = {{false, {cls.at(1).get<std::int64_t>()}},
                               {true, {}},
                               {false, {sep.at(1).get<std::int64_t>()}}};
    } else {
      unparseable("unsupported post_processor " + type);
    }
  };
  if (def.contains("post_processor")) add_post(def["post_processor"]);
  if (impl->single_template.empty()) impl->single_template.push_back({true, {}});
  for (const auto& tp : impl->single_template) impl->special_count += tp.ids.size();

  if (def.contains("padding") && def["padding"].is_object() && def["padding"].contains("pad_id")) {
    impl->pad = def["padding"]["pad_id"].get<std::int64_t>();
  } else {
    for (const char* name : {"[PAD]", "<pad>", "<|padding|>"}) {
      if (auto it = impl->vocab.find(name); it != impl->vocab.end()) {
        impl->pad = it->second;
        break;
      }
    }
  }
  return Tokenizer(std::move(impl));
} catch (const nlohmann::json::exception& e) {
  unparseable(e.what());
}

std::vector<std::int64_t> Tokenizer::encode_content(std::string_view text) const {
  std::vector<std::int64_t> ids;
  auto encode_plain = [&](std::string_view segment) {
    if (segment.empty()) return;
    for (const auto& word : impl_->pretokenize(impl_->normalize(segment))) impl_->model_encode(word, ids);
  };
  // Added tokens are matched on the raw text before any normalisation.
  std::size_t plain_start = 0;
  std::size_t i = 0;
  while (i < text.size() && !impl_->added.empty()) {
    bool matched = false;
    for (const auto& [content, id] : impl_->added) {
      if (!content.empty() && text.compare(i, content.size(), content) == 0) {
        encode_plain(text.substr(plain_start, i - plain_start));
        ids.push_back(id);
        i += content.size();
        plain_start = i;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  encode_plain(text.substr(plain_start));
  return ids;
}

TokenSequence Tokenizer::encode(std::string_view text, std::size_t max_length, Truncation strategy) const {
  std::vector<std::int64_t> content = encode_content(text);
  TokenSequence seq;
  const std::size_t specials = impl_->special_count;
  if (content.size() + specials > max_length) {
    seq.truncated = true;
    if (max_length > specials) {
      const std::size_t budget = max_length - specials;
      switch (strategy) {
        case Truncation::head:
          content.resize(budget);
          break;
        case Truncation::tail:
          content.erase(content.begin(), content.end() - static_cast<std::ptrdiff_t>(budget));
          break;
        case Truncation::head_tail: {
          const std::size_t head = (budget + 1) / 2;
          const std::size_t tail = budget - head;
          std::vector<std::int64_t> kept(content.begin(), content.begin() + static_cast<std::ptrdiff_t>(head));
          kept.insert(kept.end(), content.end() - static_cast<std::ptrdiff_t>(tail), content.end());
          content = std::move(kept);
          break;
        }
      }
    }
  }
  for (const auto& piece : impl_->single_template) {
    if (piece.is_sequence) {
      seq.ids.insert(seq.ids.end(), content.begin(), content.end());
    } else {
      seq.ids.insert(seq.ids.end(), piece.ids.begin(), piece.ids.end());
    }
  }
  if (seq.ids.size() > max_length) seq.ids.resize(max_length);  // specials alone exceed the budget
  return seq;
}

std::size_t Tokenizer::special_token_count() const noexcept { return impl_->special_count; }

std::optional<std::int64_t> Tokenizer::token_to_id(std::string_view token) const {
  auto it = impl_->vocab.find(std::string(token));
  if (it == impl_->vocab.end()) return std::nullopt;
  return it->second;
}

std::int64_t Tokenizer::pad_id() const noexcept { return impl_->pad; }
std::size_t Tokenizer::vocab_size() const noexcept { return impl_->vocab.size(); }

}  // namespace sentinel
