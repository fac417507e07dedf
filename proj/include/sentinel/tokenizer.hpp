#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace sentinel {

struct TokenSequence {
  std::vector<std::int64_t> ids;
  bool truncated = false;

  std::size_t length() const noexcept { return ids.size(); }
};

/// Which part of an over-long prompt survives truncation.
enum class Truncation { head, tail, head_tail };

std::optional<Truncation> parse_truncation(std::string_view s);

/// Subword tokenizer read from a `tokenizer.json` definition (the Hugging Face
/// tokenizers serialisation). Supported components:
///   normalizer:     Lowercase, NFC, NFKC, BertNormalizer, Strip, Sequence
///   pre_tokenizer:  ByteLevel, Whitespace, WhitespaceSplit, BertPreTokenizer, Sequence
///   model:          WordPiece, BPE (byte-level when a ByteLevel pre-tokenizer is present)
///   post_processor: TemplateProcessing, BertProcessing, RobertaProcessing, ByteLevel, Sequence
/// Anything else is rejected at load time with Error("tokenizer_unparseable").
class Tokenizer {
 public:
  static Tokenizer from_json(const nlohmann::json& definition);
  static Tokenizer from_file(const std::filesystem::path& path);

  Tokenizer(Tokenizer&&) noexcept;
  Tokenizer& operator=(Tokenizer&&) noexcept;
  ~Tokenizer();

  /// Token ids for the text alone, no special tokens added.
  std::vector<std::int64_t> encode_content(std::string_view text) const;

  /// Full encoding with special tokens, truncated so that the total length
  /// never exceeds max_length.
  TokenSequence encode(std::string_view text, std::size_t max_length,
                       Truncation strategy = Truncation::head) const;

  /// Number of special tokens the post-processor wraps around one sequence.
  std::size_t special_token_count() const noexcept;

  std::optional<std::int64_t> token_to_id(std::string_view token) const;
  std::int64_t pad_id() const noexcept;
  std::size_t vocab_size() const noexcept;

 private:
  struct Impl;
  explicit Tokenizer(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace sentinel
