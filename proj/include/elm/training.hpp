#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "elm/energy.hpp"
#include "elm/optimizer.hpp"
#include "elm/proposal.hpp"

namespace elm {

enum class TrainMethod { Nce, Dnce, MleIs, MleMis };

std::string to_string(TrainMethod method);
TrainMethod parse_train_method(const std::string& name);

struct NceConfig {
  // Noise-to-data ratio nu.
  double nu = 1.0;
  // DNCE: also fit the noise model to the data after every step.
  bool dynamic = false;

  std::size_t noise_batch_size(std::size_t data_batch_size) const;
  void validate() const;
};

enum class Sampler { Is, Mis };

struct MleConfig {
  Sampler sampler = Sampler::Is;
  // T: MIS chain length after initialization. The chain restarts every update.
  std::size_t chain_length = 256;
  // N: importance samples per update.
  std::size_t num_samples = 64;

  void validate() const;
};

struct StepMetrics {
  static constexpr double kNone = std::numeric_limits<double>::quiet_NaN();

  std::size_t step = 0;
  // Quantity being maximized: J_NCE, J_DNCE, or the MLE surrogate.
  double objective = kNone;
  double nce_objective = kNone;
  // Mean log q_phi(x) over the data batch the noise model was fitted on.
  double noise_log_lik = kNone;
  double acceptance_rate = kNone;
  double effective_sample_size = kNone;
  double mean_abs_energy = kNone;
};

// One plain-text record: "step=3 objective=... acceptance=...". Unset fields are omitted.
std::string format_metrics(const StepMetrics& m);

// ---------------------------------------------------------------------------
// Noise-contrastive estimation

// Objective to maximize, built on the tape:
//   mean_data log[p/(p + nu q)] + nu * mean_noise log[nu q/(p + nu q)]
// with p = exp(log p-hat) and every ratio formed through logsumexp. Noise
// sentences outside the model support have p-hat = 0 and contribute 0.
Var nce_objective(Tape& tape, const EnergyModel& model, std::span<const TokenSeq> data,
                  std::span<const double> data_log_q, std::span<const TokenSeq> noise,
                  std::span<const double> noise_log_q, double nu);
double nce_objective(const EnergyModel& model, const IndependenceProposal& q, std::span<const TokenSeq> data,
                     std::span<const TokenSeq> noise, double nu);

StepMetrics nce_step(EnergyModel& model, const AutoregressiveLM& noise, std::span<const TokenSeq> data,
                     const NceConfig& config, Optimizer& theta_optimizer, Rng& noise_rng);
// nce_step on theta, then one MLE step on phi over `fresh_data`.
StepMetrics dnce_step(EnergyModel& model, AutoregressiveLM& noise, std::span<const TokenSeq> data,
                      std::span<const TokenSeq> fresh_data, const NceConfig& config, Optimizer& theta_optimizer,
                      Optimizer& phi_optimizer, Rng& noise_rng);

// ---------------------------------------------------------------------------
// Sampling for maximum likelihood

struct MisResult {
  // x(1) .. x(T); x(0) is drawn from the proposal and not returned.
  std::vector<TokenSeq> states;
  std::size_t accepted = 0;
  double acceptance_rate() const;
};

// Metropolis independence sampler. The acceptance ratio uses unnormalized
// log targets, so any normalizer cancels. One uniform is drawn per step even
// when the ratio is >= 1 and the move is accepted outright.
MisResult mis_sample(const std::function<double(const TokenSeq&)>& log_target, const IndependenceProposal& proposal,
                     std::size_t steps, Rng& rng);
MisResult mis_sample(const EnergyModel& model, const IndependenceProposal& proposal, std::size_t steps, Rng& rng);

// Self-normalized importance weights exp(log_target - log_proposal) / sum.
std::vector<double> is_weights(std::span<const double> log_target, std::span<const double> log_proposal);
std::vector<double> is_weights(const EnergyModel& model, const IndependenceProposal& proposal,
                               std::span<const TokenSeq> samples);
double effective_sample_size(std::span<const double> normalized_weights);

struct WeightedSentence {
  TokenSeq tokens;
  double weight = 0.0;
};

// Merges duplicate sentences, summing their weights; order of first appearance.
std::vector<WeightedSentence> merge_duplicates(std::span<const TokenSeq> samples, std::span<const double> weights);

// Loss whose gradient is the negated log-likelihood gradient estimate
//   -E_data[dE/dtheta] + sum_i w_i dE(x_i)/dtheta.
// Weights are treated as constants.
Var mle_surrogate_loss(Tape& tape, const EnergyModel& model, std::span<const TokenSeq> data,
                       std::span<const WeightedSentence> model_samples);
// Exact model expectation weights p(x) for every sentence in support
// (p normalizes p-hat, including the length prior for TRF-LM).
std::vector<WeightedSentence> exact_model_weights(const EnergyModel& model,
                                                  std::uint64_t budget = kDefaultEnumerationBudget);
// Exact average log-likelihood of the data under normalized p-hat.
double exact_log_likelihood(const EnergyModel& model, std::span<const TokenSeq> data,
                            std::uint64_t budget = kDefaultEnumerationBudget);

// One ascent step of maximum likelihood with MIS or IS sample estimates,
// followed by one MLE step on the proposal over the same data batch.
// Throws DivergenceError when the mean |energy| of the step exceeds
// `divergence_bound` or an energy is not finite.
StepMetrics mle_step(EnergyModel& model, AutoregressiveLM& proposal, std::span<const TokenSeq> data,
                     const MleConfig& config, Optimizer& theta_optimizer, Optimizer& phi_optimizer,
                     double divergence_bound, Rng& sampler_rng);

// ---------------------------------------------------------------------------

class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::vector<TokenSeq> next_batch() = 0;
};

struct TrainConfig {
  TrainMethod method = TrainMethod::Nce;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  NceConfig nce;
  MleConfig mle;
  OptimizerConfig theta_optimizer;
  OptimizerConfig phi_optimizer;
  double divergence_bound = 1e3;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Runs one of the four training methods step by step. Randomness comes
/// from named streams of the run seed, so a run is bit-reproducible.
class ElmTrainer {
 public:
  ElmTrainer(EnergyModel& model, AutoregressiveLM& noise, TrainConfig config);

  StepMetrics step(BatchSource& data);
  // Runs config.steps steps. A DivergenceError propagates after on_step has
  // seen every completed step.
  void run(BatchSource& data, const std::function<void(const StepMetrics&)>& on_step = {});

  std::size_t steps_done() const noexcept { return step_; }

 private:
  EnergyModel& model_;
  AutoregressiveLM& noise_;
  TrainConfig config_;
  Optimizer theta_opt_;
  Optimizer phi_opt_;
  Rng noise_rng_;
  Rng sampler_rng_;
  std::size_t step_ = 0;
};

}  // namespace elm
