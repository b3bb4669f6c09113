#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "elm/vocab.hpp"

namespace elm {

class EnergyModel;
class AutoregressiveLM;

struct Hypothesis {
  std::string text;
  // Filled by tokenize(); empty when the text has characters outside the vocabulary.
  TokenSeq tokens;
  double am_score = 0.0;
  double lm_score = 0.0;
  // Character count of text.
  std::size_t length = 0;
  double combined = 0.0;
};

struct NBestList {
  std::string utt;
  std::string ref;
  // First-pass order.
  std::vector<Hypothesis> hyps;
  // Set when the scorer failed on some hypothesis; selection then falls back
  // to the first-pass best.
  bool scorer_failed = false;
};

struct InterpWeights {
  double alpha = 0.0;  // LM weight
  double beta = 0.0;   // length reward
  void validate() const;
};

// am + alpha * lm + beta * length. The LM term is dropped when alpha == 0, so
// a zero-probability hypothesis does not turn the score into NaN.
double combined_score(const Hypothesis& h, const InterpWeights& w);

using LmScorer = std::function<double(const Hypothesis&)>;

// log p-hat(x) of an energy model: -E(x), plus log pi_|x| for TRF-LM. The
// normalizer is shared by all hypotheses and so never needed for ranking.
LmScorer energy_scorer(const EnergyModel& model);
LmScorer alm_scorer(const AutoregressiveLM& model);

// Fills Hypothesis::length and tokens. Unknown characters leave tokens empty.
void tokenize(std::vector<NBestList>& lists, const Vocab* vocab);
// Fills lm_score of every hypothesis. Exceptions from the scorer mark the
// list as failed instead of propagating.
void score_lists(std::vector<NBestList>& lists, const LmScorer& scorer);

struct Selection {
  std::string utt;
  std::size_t choice_index = 0;
  double confidence = 1.0;
  bool fallback = false;
};

// Highest am score, ties to the earlier hypothesis.
std::size_t first_pass_best(const NBestList& list);
// Argmax of combined_score, ties to the earlier first-pass rank. Writes
// Hypothesis::combined.
std::size_t select_hypothesis(NBestList& list, const InterpWeights& w);

// Probability of hypothesis `index` under softmax(combined / temperature)
// over the list.
double confidence_of_selection(const NBestList& list, const InterpWeights& w, std::size_t index,
                               double temperature = 1.0);

// Scores must already be filled (score_lists).
std::vector<Selection> rescore(std::vector<NBestList>& lists, const InterpWeights& w, double temperature = 1.0);
std::vector<Selection> rescore(std::vector<NBestList>& lists, const LmScorer& scorer, const InterpWeights& w,
                               double temperature = 1.0);

struct WeightGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
};

struct TuneResult {
  InterpWeights weights;
  double dev_cer = 0.0;
};

// Grid search for the lowest dev CER; ties go to smaller |alpha|, then
// smaller |beta|, then grid order. Scores must already be filled.
TuneResult tune_weights(std::vector<NBestList>& dev_lists, const WeightGrid& grid);
TuneResult tune_weights(std::vector<NBestList>& dev_lists, const LmScorer& scorer, const WeightGrid& grid);

// ---------------------------------------------------------------------------
// Error rates

// Levenshtein distance over UTF-8 code points, unit costs.
std::size_t edit_distance(const std::string& a, const std::string& b);

struct CerResult {
  std::size_t errors = 0;
  std::size_t ref_len = 0;
  // errors / ref_len. For an empty reference: 0 with no errors, +inf otherwise.
  double rate = 0.0;
  bool empty_reference = false;
};
CerResult cer(const std::string& ref, const std::string& hyp);

struct CorpusCer {
  std::size_t errors = 0;
  std::size_t ref_chars = 0;
  // errors / ref_chars pooled over non-empty references; 0 when there are none.
  double rate = 0.0;
  std::size_t utterances = 0;
  // Empty references are kept out of the pooled figures and reported here.
  std::size_t empty_refs = 0;
  std::size_t empty_ref_insertions = 0;
};
CorpusCer corpus_cer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps);

// Texts chosen by `selections` from `lists`, matched by utterance id.
std::vector<std::string> selected_texts(const std::vector<NBestList>& lists, const std::vector<Selection>& selections);
CorpusCer selection_cer(const std::vector<NBestList>& lists, const std::vector<Selection>& selections);
std::vector<double> per_utterance_errors(const std::vector<NBestList>& lists,
                                         const std::vector<Selection>& selections);

// ---------------------------------------------------------------------------
// Significance

struct SignificanceResult {
  double mean_diff = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

// Utterance-level matched-pair test on d_i = a_i - b_i with the sample
// standard deviation and a two-sided normal tail.
SignificanceResult matched_pair_test(const std::vector<double>& errors_a, const std::vector<double>& errors_b);

struct SignificanceRow {
  std::string dataset;
  std::string system_a;
  std::string system_b;
  std::vector<std::string> test_sets;
  std::vector<SignificanceResult> results;
};
// Plain-text table: dataset, the two systems, then one p-value column per test set.
std::string format_significance_table(const std::vector<SignificanceRow>& rows);

// ---------------------------------------------------------------------------
// Confidence precision-recall

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;
  // Average precision. NaN when there is no positive label.
  double auc = 0.0;
};

PrCurve pr_curve_auc(const std::vector<double>& confidences, const std::vector<bool>& labels);
std::string pr_curve_csv(const PrCurve& curve);

// ---------------------------------------------------------------------------
// Files

std::vector<NBestList> parse_nbest_jsonl(const std::string& text, const std::string& source = "<nbest>");
std::vector<NBestList> read_nbest_jsonl(const std::string& path);
std::string nbest_jsonl(const std::vector<NBestList>& lists);

std::string selections_jsonl(const std::vector<Selection>& selections);
std::vector<Selection> parse_selections_jsonl(const std::string& text, const std::string& source = "<selections>");
std::vector<Selection> read_selections_jsonl(const std::string& path);

}  // namespace elm
