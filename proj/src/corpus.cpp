#include "elm/corpus.hpp"

#include <algorithm>
#include <numeric>

#include "elm/error.hpp"
#include "elm/io.hpp"

namespace elm {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = end + 1;
  }
  return lines;
}

std::vector<std::string> read_lines(const std::string& path) { return split_lines(read_text_file(path)); }

Corpus parse_corpus(const std::string& text, const Vocab& vocab, std::size_t max_len, const std::string& source) {
  Corpus corpus;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = source + ":" + std::to_string(i + 1);
    TokenSeq x;
    for (const auto& ch : split_characters(lines[i])) {
      auto id = vocab.find(ch);
      if (!id || Vocab::is_reserved(*id)) throw ParseError(where + ": unknown character '" + ch + "'");
      x.push_back(*id);
    }
    if (x.empty()) throw LengthError(where + ": empty sentence");
    if (x.size() > max_len) {
      throw LengthError(where + ": sentence of length " + std::to_string(x.size()) + " exceeds max_len " +
                        std::to_string(max_len));
    }
    corpus.sentences.push_back(std::move(x));
    corpus.line_numbers.push_back(i + 1);
  }
  return corpus;
}

Corpus load_corpus(const std::string& path, const Vocab& vocab, std::size_t max_len) {
  return parse_corpus(read_text_file(path), vocab, max_len, path);
}

Batch make_batch(std::vector<TokenSeq> sentences) {
  Batch b;
  std::size_t width = 0;
  for (const auto& x : sentences) width = std::max(width, x.size());
  for (const auto& x : sentences) {
    std::vector<TokenId> row(width, Vocab::kPad);
    std::vector<std::uint8_t> m(width, 0);
    std::copy(x.begin(), x.end(), row.begin());
    std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(x.size()), 1);
    b.padded.push_back(std::move(row));
    b.mask.push_back(std::move(m));
    b.lengths.push_back(x.size());
  }
  b.sentences = std::move(sentences);
  return b;
}

BatchStream::BatchStream(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed)
    : corpus_(corpus), batch_size_(batch_size), rng_(make_stream(seed, "batching")) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (corpus.empty()) throw ContractError("cannot batch an empty corpus");
  order_.resize(corpus.size());
  reshuffle();
}

void BatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  // Fisher-Yates with the portable index sampler, so streams match across
  // standard libraries.
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
  cursor_ = 0;
}

Batch BatchStream::next() {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    reshuffle();
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<TokenSeq> sentences;
  for (std::size_t i = cursor_; i < end; ++i) sentences.push_back(corpus_.sentences[order_[i]]);
  cursor_ = end;
  return make_batch(std::move(sentences));
}

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed) {
  if (corpus.empty()) return {};
  BatchStream stream(corpus, batch_size, seed);
  std::vector<Batch> out;
  while (stream.epoch() == 0) {
    Batch b = stream.next();
    if (stream.epoch() != 0) break;
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace elm
