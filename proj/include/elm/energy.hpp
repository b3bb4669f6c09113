#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "elm/backbone.hpp"

namespace elm {

enum class ModelKind { GnElm, TrfLm };
enum class Architecture { SumTargetLogit, Hidden2Scalar, SumMaskedLogit, SumTokenLogit };

std::string to_string(ModelKind kind);
std::string to_string(Architecture arch);
ModelKind parse_model_kind(const std::string& name);
Architecture parse_architecture(const std::string& name);
bool uses_causal_backbone(Architecture arch) noexcept;

struct EnergyModelConfig {
  ModelKind kind = ModelKind::GnElm;
  Architecture arch = Architecture::Hidden2Scalar;
  TransformerConfig backbone;
};

inline constexpr std::size_t kDefaultEnumerationBudget = 2'000'000;

/// Energy-based sentence model: an energy architecture bound to a backbone,
/// wrapped either globally normalized (GN-ELM) or per-length normalized with a
/// length prior (TRF-LM).
///
/// Support is every sentence of regular tokens with 1 <= |x| <= max_len; a
/// TRF-LM additionally drops lengths whose prior is zero. For TRF-LM the
/// energy includes one trainable offset per length, which stands in for the
/// per-length normalizer during noise-contrastive training.
class EnergyModel {
 public:
  EnergyModel(Vocab vocab, const EnergyModelConfig& config, std::uint64_t seed);
  EnergyModel(EnergyModel&&) noexcept = default;
  EnergyModel& operator=(EnergyModel&&) noexcept = default;

  const Vocab& vocab() const noexcept { return vocab_; }
  const EnergyModelConfig& config() const noexcept { return config_; }
  ModelKind kind() const noexcept { return config_.kind; }
  Architecture architecture() const noexcept { return config_.arch; }
  std::size_t max_len() const noexcept { return config_.backbone.max_len; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  bool has_causal() const noexcept { return causal_ != nullptr; }
  bool has_bidir() const noexcept { return bidir_ != nullptr; }
  const CausalBackbone& causal() const;
  const BidirBackbone& bidir() const;
  // Weight [d] and bias [] of the Hidden2Scalar head; null for other architectures.
  Tensor* head_weight() const noexcept { return h2s_w_; }
  Tensor* head_bias() const noexcept { return h2s_b_; }

  // Indexed by length; entry 0 is always 0. Only meaningful for TRF-LM.
  const std::vector<double>& length_prior() const noexcept { return length_prior_; }
  void set_length_prior(std::vector<double> prior);
  double log_length_prior(std::size_t length) const;

  bool in_support(const TokenSeq& x) const;
  // Throws LengthError / IndexError for sentences the energy cannot score.
  void check_sequence(const TokenSeq& x) const;

  Var energy(Tape& tape, const TokenSeq& x) const;
  double energy(const TokenSeq& x) const;
  // log p-hat(x): -E(x), plus log pi_|x| for TRF-LM. -inf outside support.
  double log_unnormalized(const TokenSeq& x) const;
  Var log_unnormalized(Tape& tape, const TokenSeq& x) const;

  Metadata metadata() const;
  void save(const std::string& path) const;
  static EnergyModel load(const std::string& path);
  static EnergyModel from_checkpoint(const CheckpointData& data);

 private:
  Vocab vocab_;
  EnergyModelConfig config_;
  ParamStore params_;
  std::unique_ptr<CausalBackbone> causal_;
  std::unique_ptr<BidirBackbone> bidir_;
  Tensor* h2s_w_ = nullptr;
  Tensor* h2s_b_ = nullptr;
  Tensor* length_offset_ = nullptr;
  std::vector<double> length_prior_;
};

// The four architectures. Each throws ConfigError when the model is bound to
// the wrong backbone kind. None includes the TRF length offset.
Var energy_sum_target_logit(const EnergyModel& m, Tape& tape, const TokenSeq& x);
Var energy_hidden2scalar(const EnergyModel& m, Tape& tape, const TokenSeq& x);
Var energy_sum_masked_logit(const EnergyModel& m, Tape& tape, const TokenSeq& x);
Var energy_sum_token_logit(const EnergyModel& m, Tape& tape, const TokenSeq& x);

// SumTargetLogit energy read off a causal logits matrix of |x|+1 rows. The
// EOS logit of the last row is included when |x| < max_len.
Var sum_target_logit_from_logits(Var logits, const TokenSeq& x, std::size_t max_len);

struct Normalizers {
  ModelKind kind = ModelKind::GnElm;
  // log Z_l for each enumerated length in support.
  std::map<std::size_t, double> log_z_by_length;
  // log of the sum over all enumerated lengths (the GN-ELM normalizer).
  double log_z = 0.0;
};

// Sum over lengths of alphabet^length.
std::uint64_t enumeration_count(std::size_t alphabet, std::span<const std::size_t> lengths);
// Visits every sentence of the given length over the regular ids, in
// lexicographic order of ids.
void for_each_sentence(std::span<const TokenId> alphabet, std::size_t length,
                       const std::function<void(const TokenSeq&)>& visit);

// Lengths defaults to every length in support. Throws BudgetError when the
// enumeration would exceed `budget` sentences.
Normalizers exact_log_z(const EnergyModel& m, std::span<const std::size_t> lengths = {},
                        std::uint64_t budget = kDefaultEnumerationBudget);
double log_prob(const EnergyModel& m, const TokenSeq& x, const Normalizers& z);
// log sum_x p-hat(x) over the enumerated support.
double log_total_mass(const EnergyModel& m, const Normalizers& z);

struct EnumeratedSentence {
  TokenSeq tokens;
  double log_prob;
};
// Every sentence in support with its exact log-probability.
std::vector<EnumeratedSentence> enumerate_distribution(const EnergyModel& m,
                                                       std::uint64_t budget = kDefaultEnumerationBudget);

// pi_l = count(l) / N for l in 1..max_len; index 0 is 0.
std::vector<double> empirical_length_prior(std::span<const TokenSeq> corpus, std::size_t max_len);

// Pseudo-log-likelihood: sum over i of log softmax(g(MASK(x, i))[i])[x_i],
// with the softmax over regular tokens.
double pll_score(const BidirBackbone& backbone, const TokenSeq& x);
Var pll_score(const BidirBackbone& backbone, Tape& tape, const TokenSeq& x);

}  // namespace elm
