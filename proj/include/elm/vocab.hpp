#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace elm {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

// Splits UTF-8 text into code points, each returned as its byte string.
// Invalid sequences are returned byte by byte.
std::vector<std::string> split_characters(std::string_view text);

/// Token <-> id bijection with four reserved ids below every regular token.
///
/// The regular tokens (ids kFirstRegular .. size()-1) form the alphabet that
/// sentences are drawn from; reserved ids never appear inside a TokenSeq.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMask = 3;
  static constexpr TokenId kFirstRegular = 4;
  static constexpr std::string_view kReservedNames[4] = {"<pad>", "<s>", "</s>", "<mask>"};

  Vocab();
  explicit Vocab(std::vector<std::string> regular_tokens);

  // Distinct characters of the given lines, sorted bytewise.
  static Vocab from_text(std::span<const std::string> lines);
  // One token per line; line number is the id; reserved tokens first.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t num_regular() const noexcept { return tokens_.size() - kFirstRegular; }
  std::span<const TokenId> regular_ids() const noexcept { return regular_ids_; }
  static bool is_reserved(TokenId id) noexcept { return id < kFirstRegular; }

  std::optional<TokenId> find(std::string_view token) const;
  TokenId encode(std::string_view token) const;
  const std::string& decode(TokenId id) const;

  // Character-level tokenization; throws ParseError naming an unknown character.
  TokenSeq encode_text(std::string_view text) const;
  std::string decode_text(std::span<const TokenId> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<TokenId> regular_ids_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace elm
