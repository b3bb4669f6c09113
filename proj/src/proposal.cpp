#include "elm/proposal.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "elm/error.hpp"

namespace elm {

TableProposal::TableProposal(std::vector<TokenSeq> support, std::vector<double> probs)
    : support_(std::move(support)), probs_(std::move(probs)) {
  if (support_.empty() || support_.size() != probs_.size()) {
    throw ContractError("table proposal needs one probability per sentence");
  }
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw DomainError("negative proposal probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("table proposal probabilities must sum to 1");
}

TokenSeq TableProposal::draw(Rng& rng) const { return support_[sample_categorical(rng, probs_)]; }

double TableProposal::log_density(const TokenSeq& x) const {
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (support_[i] == x) return std::log(probs_[i]);
  }
  return -std::numeric_limits<double>::infinity();
}

AlmSample ancestral_sample(const NextTokenFn& next, std::span<const std::size_t> columns, std::size_t max_len,
                           Rng& rng) {
  AlmSample out;
  while (out.tokens.size() < max_len) {
    const std::vector<double> lp = next(out.tokens);
    if (lp.size() != columns.size()) throw DimensionError("next-token distribution has the wrong width");
    const auto id = static_cast<TokenId>(columns[sample_log_categorical(rng, lp)]);
    if (id == Vocab::kEos) return out;
    out.tokens.push_back(id);
  }
  out.truncated = true;
  return out;
}

// ---------------------------------------------------------------------------

AutoregressiveLM::AutoregressiveLM(Vocab vocab, const TransformerConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)) {
  TransformerConfig c = config;
  c.vocab_size = vocab_.size();
  Rng init = make_stream(seed, "init");
  backbone_ = std::make_unique<CausalBackbone>(params_, "alm", c, init);
  next_cols_ = next_token_columns(c.vocab_size);
}

Var AutoregressiveLM::log_prob(Tape& tape, const TokenSeq& x, std::size_t max_len) const {
  if (max_len > this->max_len()) throw LengthError("truncation length exceeds the model max_len");
  if (x.size() > max_len) {
    throw LengthError("sequence of length " + std::to_string(x.size()) + " exceeds max_len " +
                      std::to_string(max_len));
  }
  // Column of each target inside next_cols_ (EOS is slot 0).
  std::vector<std::size_t> targets;
  targets.reserve(x.size() + 1);
  for (TokenId id : x) {
    if (Vocab::is_reserved(id) || id >= vocab_.size()) {
      throw IndexError("token id " + std::to_string(id) + " is not a regular token");
    }
    targets.push_back(id - Vocab::kFirstRegular + 1);
  }
  const bool with_eos = x.size() < max_len;
  if (with_eos) targets.push_back(0);
  Var logits = backbone_->logits(tape, x);
  if (targets.empty()) return tape.constant(0.0);
  if (!with_eos) {
    std::vector<std::size_t> rows(x.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    logits = take_rows(logits, rows);
  }
  Var lp = log_softmax(take_cols(logits, next_cols_));
  return sum(pick(lp, targets));
}

double AutoregressiveLM::log_prob(const TokenSeq& x, std::size_t max_len) const {
  Tape tape(false);
  return log_prob(tape, x, max_len).item();
}

std::vector<double> AutoregressiveLM::next_token_log_probs(std::span<const TokenId> prefix) const {
  Tape tape(false);
  Var logits = backbone_->logits(tape, prefix);
  const Tensor& lv = logits.value();
  const std::size_t V = lv.cols(), last = lv.rows() - 1;
  std::vector<double> out(next_cols_.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = lv[last * V + next_cols_[j]];
    mx = std::max(mx, out[j]);
  }
  double z = 0.0;
  for (double v : out) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (double& v : out) v -= lse;
  return out;
}

AlmSample AutoregressiveLM::sample(std::size_t max_len, Rng& rng) const {
  if (max_len > this->max_len()) throw LengthError("sampling length exceeds the model max_len");
  return ancestral_sample([this](std::span<const TokenId> prefix) { return next_token_log_probs(prefix); },
                          next_cols_, max_len, rng);
}

Metadata AutoregressiveLM::metadata() const {
  Metadata meta = config().to_metadata("backbone.");
  meta["model"] = "alm";
  meta["vocab"] = vocab_.serialize();
  return meta;
}

void AutoregressiveLM::save(const std::string& path) const { write_checkpoint(path, params_, metadata()); }

AutoregressiveLM AutoregressiveLM::from_checkpoint(const CheckpointData& data) {
  if (data.meta("model") != "alm") throw ConfigError("checkpoint is not an autoregressive LM");
  Vocab vocab = Vocab::deserialize(data.meta("vocab"));
  TransformerConfig config = TransformerConfig::from_metadata(data.metadata, "backbone.");
  if (config.vocab_size != vocab.size()) throw ConfigError("checkpoint vocabulary size mismatch");
  AutoregressiveLM q(std::move(vocab), config, 0);
  load_values(q.params_, data);
  return q;
}

AutoregressiveLM AutoregressiveLM::load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

double alm_log_prob(const AutoregressiveLM& q, const TokenSeq& x) { return q.log_prob(x); }

AlmSample alm_sample(const AutoregressiveLM& q, std::size_t max_len, Rng& rng) { return q.sample(max_len, rng); }

double alm_mle_step(AutoregressiveLM& q, std::span<const TokenSeq> batch, Optimizer& optimizer) {
  if (batch.empty()) throw ContractError("empty batch");
  ParamStore& params = q.params();
  params.zero_grad();
  Tape tape;
  std::vector<Var> terms;
  terms.reserve(batch.size());
  for (const TokenSeq& x : batch) terms.push_back(q.log_prob(tape, x));
  Var loss = scale(sum(concat(terms)), -1.0 / static_cast<double>(batch.size()));
  tape.backward(loss);
  const double value = loss.item();
  optimizer.step(params);
  return value;
}

}  // namespace elm
