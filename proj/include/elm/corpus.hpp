#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/rng.hpp"
#include "elm/training.hpp"
#include "elm/vocab.hpp"

namespace elm {

struct Corpus {
  std::vector<TokenSeq> sentences;
  // 1-based source line of each sentence.
  std::vector<std::size_t> line_numbers;

  std::size_t size() const noexcept { return sentences.size(); }
  bool empty() const noexcept { return sentences.empty(); }
};

// One sentence per line, one token per character. A final newline is
// optional; any other empty line is a zero-length sentence and is rejected
// as a LengthError, as are lines longer than max_len. Unknown characters
// raise a ParseError naming the line and the character.
Corpus parse_corpus(const std::string& text, const Vocab& vocab, std::size_t max_len,
                    const std::string& source = "<corpus>");
Corpus load_corpus(const std::string& path, const Vocab& vocab, std::size_t max_len);
// Lines of a corpus file, with the same line splitting as load_corpus.
std::vector<std::string> read_lines(const std::string& path);
std::vector<std::string> split_lines(const std::string& text);

struct Batch {
  std::vector<TokenSeq> sentences;
  // rows x width ids, padded with Vocab::kPad; width = longest sentence.
  std::vector<std::vector<TokenId>> padded;
  // 1 where padded holds a real token.
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<std::size_t> lengths;
};

Batch make_batch(std::vector<TokenSeq> sentences);

/// Endless stream of batches of at most `batch_size` sentences. Each epoch is
/// a fresh seeded shuffle of the corpus; the last batch of an epoch may be
/// short.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed);

  Batch next();
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void reshuffle();

  const Corpus& corpus_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

// The batches of one epoch.
std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed);

class CorpusBatchSource final : public BatchSource {
 public:
  CorpusBatchSource(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed)
      : stream_(corpus, batch_size, seed) {}
  std::vector<TokenSeq> next_batch() override { return stream_.next().sentences; }

 private:
  BatchStream stream_;
};

}  // namespace elm
