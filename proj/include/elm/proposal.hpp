#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "elm/backbone.hpp"
#include "elm/optimizer.hpp"

namespace elm {

/// A distribution over sentences that can be sampled and scored exactly.
/// Used as NCE noise and as the MIS/IS proposal.
class IndependenceProposal {
 public:
  virtual ~IndependenceProposal() = default;
  virtual TokenSeq draw(Rng& rng) const = 0;
  virtual double log_density(const TokenSeq& x) const = 0;
};

/// Explicit finite distribution over a list of sentences.
class TableProposal final : public IndependenceProposal {
 public:
  TableProposal(std::vector<TokenSeq> support, std::vector<double> probs);
  TokenSeq draw(Rng& rng) const override;
  double log_density(const TokenSeq& x) const override;

 private:
  std::vector<TokenSeq> support_;
  std::vector<double> probs_;
};

struct AlmSample {
  TokenSeq tokens;
  // True when max_len was reached without drawing EOS.
  bool truncated = false;
};

// Log-probabilities over next_token_columns(V) (EOS first) given a prefix.
using NextTokenFn = std::function<std::vector<double>(std::span<const TokenId> prefix)>;

// Draws tokens until EOS or max_len. `columns` maps distribution slots to ids.
AlmSample ancestral_sample(const NextTokenFn& next, std::span<const std::size_t> columns, std::size_t max_len,
                           Rng& rng);

/// Autoregressive LM q_phi over sentences of length 0..max_len, normalized
/// over EOS and the regular tokens at every position. A sentence of exactly
/// max_len tokens carries no EOS term, so the probabilities of all sentences
/// up to max_len sum to one.
class AutoregressiveLM final : public IndependenceProposal {
 public:
  AutoregressiveLM(Vocab vocab, const TransformerConfig& config, std::uint64_t seed);
  AutoregressiveLM(AutoregressiveLM&&) noexcept = default;
  AutoregressiveLM& operator=(AutoregressiveLM&&) noexcept = default;

  const Vocab& vocab() const noexcept { return vocab_; }
  const TransformerConfig& config() const noexcept { return backbone_->config(); }
  std::size_t max_len() const noexcept { return config().max_len; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  const CausalBackbone& backbone() const noexcept { return *backbone_; }

  // `max_len` (<= model max_len) is the truncation point: a sentence of that
  // length is scored without the EOS term.
  Var log_prob(Tape& tape, const TokenSeq& x, std::size_t max_len) const;
  Var log_prob(Tape& tape, const TokenSeq& x) const { return log_prob(tape, x, max_len()); }
  double log_prob(const TokenSeq& x, std::size_t max_len) const;
  double log_prob(const TokenSeq& x) const { return log_prob(x, max_len()); }

  std::vector<double> next_token_log_probs(std::span<const TokenId> prefix) const;
  AlmSample sample(std::size_t max_len, Rng& rng) const;

  TokenSeq draw(Rng& rng) const override { return sample(max_len(), rng).tokens; }
  double log_density(const TokenSeq& x) const override { return log_prob(x); }

  Metadata metadata() const;
  void save(const std::string& path) const;
  static AutoregressiveLM load(const std::string& path);
  static AutoregressiveLM from_checkpoint(const CheckpointData& data);

 private:
  Vocab vocab_;
  ParamStore params_;
  std::unique_ptr<CausalBackbone> backbone_;
  std::vector<std::size_t> next_cols_;
};

double alm_log_prob(const AutoregressiveLM& q, const TokenSeq& x);
AlmSample alm_sample(const AutoregressiveLM& q, std::size_t max_len, Rng& rng);
// One descent step on the mean negative log-likelihood of the batch. Returns
// that mean NLL evaluated before the update.
double alm_mle_step(AutoregressiveLM& q, std::span<const TokenSeq> batch, Optimizer& optimizer);

}  // namespace elm
