#pragma once

#include <string>
#include <utility>
#include <vector>

#include "elm/rescoring.hpp"
#include "elm/rng.hpp"

namespace elm {

// A small character-level grammar: optional adjective, subject, verb,
// object, optional adverb, with number agreement between subject and verb.
// 1440 sentences of 6 to 12 characters over 15 letters.
std::vector<std::string> toy_grammar_alphabet();
std::size_t toy_grammar_max_length();
// Every grammatical sentence with its probability.
std::vector<std::pair<std::string, double>> toy_grammar_distribution();
std::string toy_grammar_sample(Rng& rng);
bool toy_grammar_accepts(const std::string& sentence);
std::vector<std::string> toy_corpus(std::size_t n, Rng& rng);

struct NBestSynthConfig {
  std::size_t hyps_per_utt = 8;
  // Probability that the reference itself appears in the list.
  double keep_reference = 0.9;
  // Acoustic score: -edit_penalty * edits + am_noise * N(0, 1).
  double edit_penalty = 1.0;
  double am_noise = 1.0;
  // Candidates longer than this are discarded.
  std::size_t max_len = 14;
  // Hypotheses receive 1 .. max_edits random character edits.
  std::size_t max_edits = 2;
};

// One n-best list per reference, in first-pass order (descending am score),
// with ids "<prefix><index>". Edits are substitutions, insertions, or
// deletions with characters from `alphabet`.
std::vector<NBestList> synthesize_nbest(const std::vector<std::string>& refs, const std::vector<std::string>& alphabet,
                                        const NBestSynthConfig& config, Rng& rng, const std::string& prefix = "utt");

}  // namespace elm
