#include "elm/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "elm/error.hpp"

namespace elm {

std::vector<std::string> split_characters(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (len > 1) {
      bool ok = i + len <= text.size();
      for (std::size_t k = 1; ok && k < len; ++k) {
        ok = (static_cast<unsigned char>(text[i + k]) & 0xC0) == 0x80;
      }
      if (!ok) len = 1;
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> regular_tokens) {
  for (auto name : kReservedNames) tokens_.emplace_back(name);
  for (auto& t : regular_tokens) {
    if (t.empty()) throw ParseError("empty token in vocabulary");
    tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ParseError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
    if (i >= kFirstRegular) regular_ids_.push_back(static_cast<TokenId>(i));
  }
}

Vocab Vocab::from_text(std::span<const std::string> lines) {
  std::set<std::string> chars;
  for (const auto& line : lines) {
    for (auto& c : split_characters(line)) chars.insert(std::move(c));
  }
  return Vocab(std::vector<std::string>(chars.begin(), chars.end()));
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocab Vocab::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() < kFirstRegular) throw ParseError("vocabulary lacks the reserved tokens");
  for (std::size_t i = 0; i < kFirstRegular; ++i) {
    if (lines[i] != kReservedNames[i]) {
      throw ParseError("vocabulary line " + std::to_string(i + 1) + " must be '" +
                       std::string(kReservedNames[i]) + "', got '" + lines[i] + "'");
    }
  }
  return Vocab(std::vector<std::string>(lines.begin() + kFirstRegular, lines.end()));
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << serialize();
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::encode(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw ParseError("unknown token '" + std::string(token) + "'");
}

const std::string& Vocab::decode(TokenId id) const {
  if (id >= tokens_.size()) throw IndexError("token id " + std::to_string(id) + " out of vocabulary");
  return tokens_[id];
}

TokenSeq Vocab::encode_text(std::string_view text) const {
  TokenSeq ids;
  for (const auto& c : split_characters(text)) {
    auto id = find(c);
    if (!id || is_reserved(*id)) throw ParseError("unknown character '" + c + "'");
    ids.push_back(*id);
  }
  return ids;
}

std::string Vocab::decode_text(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += decode(id);
  return out;
}

}  // namespace elm
