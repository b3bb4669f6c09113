#include "elm/training.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "elm/error.hpp"

namespace elm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> log_q_of(const IndependenceProposal& q, std::span<const TokenSeq> xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(q.log_density(x));
  return out;
}

void guard_energies(std::span<const double> energies, double bound, double& mean_abs) {
  double total = 0.0;
  for (double e : energies) {
    if (!std::isfinite(e)) throw DivergenceError("non-finite energy encountered during training");
    total += std::abs(e);
  }
  mean_abs = energies.empty() ? 0.0 : total / static_cast<double>(energies.size());
  if (mean_abs > bound) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "mean |energy| %.6g exceeds the divergence bound %.6g", mean_abs, bound);
    throw DivergenceError(buf);
  }
}

}  // namespace

std::string to_string(TrainMethod method) {
  switch (method) {
    case TrainMethod::Nce: return "nce";
    case TrainMethod::Dnce: return "dnce";
    case TrainMethod::MleIs: return "mle-is";
    case TrainMethod::MleMis: return "mle-mis";
  }
  return "?";
}

TrainMethod parse_train_method(const std::string& name) {
  if (name == "nce") return TrainMethod::Nce;
  if (name == "dnce") return TrainMethod::Dnce;
  if (name == "mle-is") return TrainMethod::MleIs;
  if (name == "mle-mis") return TrainMethod::MleMis;
  throw ConfigError("unknown training method '" + name + "' (expected nce|dnce|mle-is|mle-mis)");
}

std::size_t NceConfig::noise_batch_size(std::size_t data_batch_size) const {
  return static_cast<std::size_t>(std::llround(nu * static_cast<double>(data_batch_size)));
}

void NceConfig::validate() const {
  if (!(nu > 0.0) || !std::isfinite(nu)) throw ConfigError("nu must be positive and finite");
}

void MleConfig::validate() const {
  if (chain_length < 1) throw ConfigError("MIS chain length T must be >= 1");
  if (num_samples < 1) throw ConfigError("IS sample count N must be >= 1");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  nce.validate();
  mle.validate();
  theta_optimizer.validate();
  phi_optimizer.validate();
  if ((method == TrainMethod::Nce || method == TrainMethod::Dnce) && nce.noise_batch_size(batch_size) < 1) {
    throw ConfigError("nu * batch_size rounds to an empty noise batch");
  }
  if (!(divergence_bound > 0.0)) throw ConfigError("divergence_bound must be positive");
}

std::string format_metrics(const StepMetrics& m) {
  std::string out = "step=" + std::to_string(m.step);
  auto field = [&out](const char* name, double v) {
    if (std::isnan(v)) return;
    char buf[64];
    std::snprintf(buf, sizeof buf, " %s=%.10g", name, v);
    out += buf;
  };
  field("objective", m.objective);
  field("nce_objective", m.nce_objective);
  field("noise_log_lik", m.noise_log_lik);
  field("acceptance", m.acceptance_rate);
  field("ess", m.effective_sample_size);
  field("mean_abs_energy", m.mean_abs_energy);
  return out;
}

// ---------------------------------------------------------------------------
// NCE

namespace {

// Builds the NCE objective; appends the energy of every data sentence to
// `energies` when given.
Var build_nce(Tape& tape, const EnergyModel& model, std::span<const TokenSeq> data,
              std::span<const double> data_log_q, std::span<const TokenSeq> noise,
              std::span<const double> noise_log_q, double nu, std::vector<double>* energies) {
  if (data.empty() || noise.empty()) throw ContractError("NCE needs non-empty data and noise batches");
  if (data.size() != data_log_q.size() || noise.size() != noise_log_q.size()) {
    throw ContractError("NCE needs one log q per sentence");
  }
  if (!(nu > 0.0)) throw ContractError("nu must be positive");
  const double log_nu = std::log(nu);
  std::vector<Var> data_terms, noise_terms;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!model.in_support(data[i])) throw ContractError("data sentence outside the model support");
    Var lp = model.log_unnormalized(tape, data[i]);
    if (energies) energies->push_back(model.log_length_prior(data[i].size()) - lp.item());
    Var lnq = tape.constant(log_nu + data_log_q[i]);
    data_terms.push_back(sub(lp, logsumexp(concat({lp, lnq}))));
  }
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (!model.in_support(noise[i])) continue;  // log(nu q / nu q) = 0
    Var lp = model.log_unnormalized(tape, noise[i]);
    Var lnq = tape.constant(log_nu + noise_log_q[i]);
    noise_terms.push_back(sub(lnq, logsumexp(concat({lp, lnq}))));
  }
  Var objective = scale(sum(concat(data_terms)), 1.0 / static_cast<double>(data.size()));
  if (!noise_terms.empty()) {
    objective = add(objective, scale(sum(concat(noise_terms)), nu / static_cast<double>(noise.size())));
  }
  return objective;
}

}  // namespace

Var nce_objective(Tape& tape, const EnergyModel& model, std::span<const TokenSeq> data,
                  std::span<const double> data_log_q, std::span<const TokenSeq> noise,
                  std::span<const double> noise_log_q, double nu) {
  return build_nce(tape, model, data, data_log_q, noise, noise_log_q, nu, nullptr);
}

double nce_objective(const EnergyModel& model, const IndependenceProposal& q, std::span<const TokenSeq> data,
                     std::span<const TokenSeq> noise, double nu) {
  Tape tape(false);
  return nce_objective(tape, model, data, log_q_of(q, data), noise, log_q_of(q, noise), nu).item();
}

namespace {

StepMetrics nce_update(EnergyModel& model, const AutoregressiveLM& noise, std::span<const TokenSeq> data,
                       const NceConfig& config, Optimizer& theta_optimizer, Rng& noise_rng, double bound) {
  if (data.empty()) throw ContractError("empty data batch");
  const std::size_t k = config.noise_batch_size(data.size());
  if (k == 0) throw ContractError("nu * batch size rounds to an empty noise batch");
  std::vector<TokenSeq> noise_batch;
  noise_batch.reserve(k);
  for (std::size_t i = 0; i < k; ++i) noise_batch.push_back(noise.sample(noise.max_len(), noise_rng).tokens);
  const auto data_lq = log_q_of(noise, data);
  const auto noise_lq = log_q_of(noise, noise_batch);

  ParamStore& params = model.params();
  params.zero_grad();
  Tape tape;
  std::vector<double> energies;
  Var objective = build_nce(tape, model, data, data_lq, noise_batch, noise_lq, config.nu, &energies);
  StepMetrics m;
  m.objective = objective.item();
  m.nce_objective = m.objective;
  guard_energies(energies, bound, m.mean_abs_energy);
  tape.backward(objective, -1.0);
  theta_optimizer.step(params);
  return m;
}

}  // namespace

StepMetrics nce_step(EnergyModel& model, const AutoregressiveLM& noise, std::span<const TokenSeq> data,
                     const NceConfig& config, Optimizer& theta_optimizer, Rng& noise_rng) {
  return nce_update(model, noise, data, config, theta_optimizer, noise_rng, std::numeric_limits<double>::infinity());
}

StepMetrics dnce_step(EnergyModel& model, AutoregressiveLM& noise, std::span<const TokenSeq> data,
                      std::span<const TokenSeq> fresh_data, const NceConfig& config, Optimizer& theta_optimizer,
                      Optimizer& phi_optimizer, Rng& noise_rng) {
  StepMetrics m = nce_step(model, noise, data, config, theta_optimizer, noise_rng);
  m.noise_log_lik = -alm_mle_step(noise, fresh_data, phi_optimizer);
  m.objective = m.nce_objective + m.noise_log_lik;
  return m;
}

// ---------------------------------------------------------------------------
// MIS / IS

double MisResult::acceptance_rate() const {
  return states.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(states.size());
}

MisResult mis_sample(const std::function<double(const TokenSeq&)>& log_target, const IndependenceProposal& proposal,
                     std::size_t steps, Rng& rng) {
  if (steps < 1) throw ContractError("MIS needs T >= 1");
  MisResult out;
  out.states.reserve(steps);
  TokenSeq current = proposal.draw(rng);
  // log importance weight of the current state, log p-hat - log q.
  double current_w = log_target(current) - proposal.log_density(current);
  for (std::size_t t = 0; t < steps; ++t) {
    TokenSeq candidate = proposal.draw(rng);
    const double candidate_w = log_target(candidate) - proposal.log_density(candidate);
    const double u = uniform01(rng);
    bool accept;
    if (current_w == kNegInf || std::isnan(current_w)) {
      accept = true;
    } else if (candidate_w == kNegInf) {
      accept = false;
    } else {
      const double log_ratio = candidate_w - current_w;
      accept = log_ratio >= 0.0 || u < std::exp(log_ratio);
    }
    if (accept) {
      current = std::move(candidate);
      current_w = candidate_w;
      ++out.accepted;
    }
    out.states.push_back(current);
  }
  return out;
}

MisResult mis_sample(const EnergyModel& model, const IndependenceProposal& proposal, std::size_t steps, Rng& rng) {
  // Proposals repeat often on small supports; cache p-hat per sentence.
  std::map<TokenSeq, double> cache;
  auto target = [&](const TokenSeq& x) {
    auto it = cache.find(x);
    if (it != cache.end()) return it->second;
    const double v = model.log_unnormalized(x);
    cache.emplace(x, v);
    return v;
  };
  return mis_sample(target, proposal, steps, rng);
}

std::vector<double> is_weights(std::span<const double> log_target, std::span<const double> log_proposal) {
  if (log_target.empty() || log_target.size() != log_proposal.size()) {
    throw ContractError("importance weights need matching, non-empty inputs");
  }
  std::vector<double> lw(log_target.size());
  double mx = kNegInf;
  for (std::size_t i = 0; i < lw.size(); ++i) {
    lw[i] = log_target[i] - log_proposal[i];
    if (std::isnan(lw[i])) lw[i] = kNegInf;
    mx = std::max(mx, lw[i]);
  }
  if (mx == kNegInf) throw DomainError("every importance sample has zero target mass");
  double total = 0.0;
  for (double& w : lw) total += (w = std::exp(w - mx));
  for (double& w : lw) w /= total;
  return lw;
}

std::vector<double> is_weights(const EnergyModel& model, const IndependenceProposal& proposal,
                               std::span<const TokenSeq> samples) {
  std::vector<double> lt, lq;
  for (const auto& x : samples) {
    lt.push_back(model.log_unnormalized(x));
    lq.push_back(proposal.log_density(x));
  }
  return is_weights(lt, lq);
}

double effective_sample_size(std::span<const double> w) {
  double s2 = 0.0;
  for (double v : w) s2 += v * v;
  return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

std::vector<WeightedSentence> merge_duplicates(std::span<const TokenSeq> samples, std::span<const double> weights) {
  if (samples.size() != weights.size()) throw ContractError("one weight per sample required");
  std::vector<WeightedSentence> out;
  std::map<TokenSeq, std::size_t> slot;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [it, fresh] = slot.emplace(samples[i], out.size());
    if (fresh) out.push_back({samples[i], 0.0});
    out[it->second].weight += weights[i];
  }
  return out;
}

namespace {

Var build_mle_loss(Tape& tape, const EnergyModel& model, std::span<const TokenSeq> data,
                   std::span<const WeightedSentence> model_samples, std::vector<double>* energies) {
  if (data.empty()) throw ContractError("empty data batch");
  std::vector<Var> data_e;
  data_e.reserve(data.size());
  for (const auto& x : data) {
    data_e.push_back(model.energy(tape, x));
    if (energies) energies->push_back(data_e.back().item());
  }
  Var loss = scale(sum(concat(data_e)), 1.0 / static_cast<double>(data.size()));
  std::vector<Var> weighted;
  for (const auto& s : model_samples) {
    if (s.weight == 0.0 || !model.in_support(s.tokens)) continue;
    Var e = model.energy(tape, s.tokens);
    if (energies) energies->push_back(e.item());
    weighted.push_back(scale(e, s.weight));
  }
  if (!weighted.empty()) loss = sub(loss, sum(concat(weighted)));
  return loss;
}

}  // namespace

Var mle_surrogate_loss(Tape& tape, const EnergyModel& model, std::span<const TokenSeq> data,
                       std::span<const WeightedSentence> model_samples) {
  return build_mle_loss(tape, model, data, model_samples, nullptr);
}

std::vector<WeightedSentence> exact_model_weights(const EnergyModel& model, std::uint64_t budget) {
  const Normalizers z = exact_log_z(model, {}, budget);
  const double log_mass = log_total_mass(model, z);
  std::vector<WeightedSentence> out;
  for (std::size_t l = 1; l <= model.max_len(); ++l) {
    if (!z.log_z_by_length.contains(l)) continue;
    for_each_sentence(model.vocab().regular_ids(), l, [&](const TokenSeq& x) {
      out.push_back({x, std::exp(model.log_unnormalized(x) - log_mass)});
    });
  }
  return out;
}

double exact_log_likelihood(const EnergyModel& model, std::span<const TokenSeq> data, std::uint64_t budget) {
  if (data.empty()) throw ContractError("empty data batch");
  const Normalizers z = exact_log_z(model, {}, budget);
  const double log_mass = log_total_mass(model, z);
  double total = 0.0;
  for (const auto& x : data) total += model.log_unnormalized(x) - log_mass;
  return total / static_cast<double>(data.size());
}

StepMetrics mle_step(EnergyModel& model, AutoregressiveLM& proposal, std::span<const TokenSeq> data,
                     const MleConfig& config, Optimizer& theta_optimizer, Optimizer& phi_optimizer,
                     double divergence_bound, Rng& sampler_rng) {
  if (data.empty()) throw ContractError("empty data batch");
  StepMetrics m;
  std::vector<WeightedSentence> samples;
  if (config.sampler == Sampler::Mis) {
    MisResult chain = mis_sample(model, proposal, config.chain_length, sampler_rng);
    m.acceptance_rate = chain.acceptance_rate();
    std::vector<double> uniform(chain.states.size(), 1.0 / static_cast<double>(chain.states.size()));
    samples = merge_duplicates(chain.states, uniform);
  } else {
    std::vector<TokenSeq> draws;
    draws.reserve(config.num_samples);
    for (std::size_t i = 0; i < config.num_samples; ++i) draws.push_back(proposal.draw(sampler_rng));
    const auto w = is_weights(model, proposal, draws);
    m.effective_sample_size = effective_sample_size(w);
    samples = merge_duplicates(draws, w);
  }

  ParamStore& params = model.params();
  params.zero_grad();
  Tape tape;
  std::vector<double> energies;
  Var loss = build_mle_loss(tape, model, data, samples, &energies);
  m.objective = -loss.item();
  guard_energies(energies, divergence_bound, m.mean_abs_energy);
  tape.backward(loss);
  theta_optimizer.step(params);
  m.noise_log_lik = -alm_mle_step(proposal, data, phi_optimizer);
  return m;
}

// ---------------------------------------------------------------------------

ElmTrainer::ElmTrainer(EnergyModel& model, AutoregressiveLM& noise, TrainConfig config)
    : model_(model),
      noise_(noise),
      config_(config),
      theta_opt_((config.validate(), config.theta_optimizer)),
      phi_opt_(config.phi_optimizer),
      noise_rng_(make_stream(config.seed, "noise")),
      sampler_rng_(make_stream(config.seed, "mis")) {
  config_.nce.dynamic = config_.method == TrainMethod::Dnce;
  config_.mle.sampler = config_.method == TrainMethod::MleMis ? Sampler::Mis : Sampler::Is;
  if (model_.vocab() != noise_.vocab()) throw ConfigError("energy model and noise model vocabularies differ");
  if (noise_.max_len() < model_.max_len()) throw ConfigError("noise model max_len is shorter than the energy model's");
}

StepMetrics ElmTrainer::step(BatchSource& data) {
  const std::vector<TokenSeq> batch = data.next_batch();
  StepMetrics m;
  switch (config_.method) {
    case TrainMethod::Nce:
      m = nce_update(model_, noise_, batch, config_.nce, theta_opt_, noise_rng_, config_.divergence_bound);
      break;
    case TrainMethod::Dnce: {
      m = nce_update(model_, noise_, batch, config_.nce, theta_opt_, noise_rng_, config_.divergence_bound);
      const std::vector<TokenSeq> fresh = data.next_batch();
      m.noise_log_lik = -alm_mle_step(noise_, fresh, phi_opt_);
      m.objective = m.nce_objective + m.noise_log_lik;
      break;
    }
    case TrainMethod::MleIs:
    case TrainMethod::MleMis:
      m = mle_step(model_, noise_, batch, config_.mle, theta_opt_, phi_opt_, config_.divergence_bound,
                   sampler_rng_);
      break;
  }
  m.step = ++step_;
  return m;
}

void ElmTrainer::run(BatchSource& data, const std::function<void(const StepMetrics&)>& on_step) {
  while (step_ < config_.steps) {
    const StepMetrics m = step(data);
    if (on_step) on_step(m);
  }
}

}  // namespace elm
