#include "elm/energy.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "elm/error.hpp"

namespace elm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Streaming log-sum-exp accumulator.
struct LogSum {
  double max = kNegInf;
  double scaled = 0.0;

  void add(double v) {
    if (v == kNegInf) return;
    if (v > max) {
      scaled = scaled * std::exp(max - v) + 1.0;
      max = v;
    } else {
      scaled += std::exp(v - max);
    }
  }
  double value() const { return max == kNegInf ? kNegInf : max + std::log(scaled); }
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::GnElm ? "gn-elm" : "trf-lm"; }

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::SumTargetLogit: return "sum-target-logit";
    case Architecture::Hidden2Scalar: return "hidden2scalar";
    case Architecture::SumMaskedLogit: return "sum-masked-logit";
    case Architecture::SumTokenLogit: return "sum-token-logit";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "gn-elm") return ModelKind::GnElm;
  if (name == "trf-lm") return ModelKind::TrfLm;
  throw ConfigError("unknown model kind '" + name + "' (expected gn-elm|trf-lm)");
}

Architecture parse_architecture(const std::string& name) {
  if (name == "sum-target-logit") return Architecture::SumTargetLogit;
  if (name == "hidden2scalar") return Architecture::Hidden2Scalar;
  if (name == "sum-masked-logit") return Architecture::SumMaskedLogit;
  if (name == "sum-token-logit") return Architecture::SumTokenLogit;
  throw ConfigError("unknown architecture '" + name +
                    "' (expected sum-target-logit|hidden2scalar|sum-masked-logit|sum-token-logit)");
}

bool uses_causal_backbone(Architecture arch) noexcept { return arch == Architecture::SumTargetLogit; }

// ---------------------------------------------------------------------------

EnergyModel::EnergyModel(Vocab vocab, const EnergyModelConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config) {
  config_.backbone.vocab_size = vocab_.size();
  config_.backbone.validate();
  Rng init = make_stream(seed, "init");
  if (uses_causal_backbone(config_.arch)) {
    causal_ = std::make_unique<CausalBackbone>(params_, "causal", config_.backbone, init);
  } else {
    bidir_ = std::make_unique<BidirBackbone>(params_, "bidir", config_.backbone, init);
  }
  if (config_.arch == Architecture::Hidden2Scalar) {
    h2s_w_ = &params_.add("h2s.w", Tensor({config_.backbone.d_model}, 0.0));
    h2s_b_ = &params_.add("h2s.b", Tensor::scalar(0.0));
  }
  if (config_.kind == ModelKind::TrfLm) {
    length_offset_ = &params_.add("trf.length_offset", Tensor({max_len()}, 0.0));
  }
  std::vector<double> uniform(max_len() + 1, 1.0 / static_cast<double>(max_len()));
  uniform[0] = 0.0;
  length_prior_ = std::move(uniform);
}

const CausalBackbone& EnergyModel::causal() const {
  if (!causal_) throw ConfigError(to_string(config_.arch) + " model has no causal backbone");
  return *causal_;
}

const BidirBackbone& EnergyModel::bidir() const {
  if (!bidir_) throw ConfigError(to_string(config_.arch) + " model has no bidirectional backbone");
  return *bidir_;
}

void EnergyModel::set_length_prior(std::vector<double> prior) {
  if (prior.size() != max_len() + 1) {
    throw DimensionError("length prior needs max_len + 1 entries (index 0 unused)");
  }
  if (prior[0] != 0.0) throw DomainError("length prior must give length 0 no mass");
  double total = 0.0;
  for (double p : prior) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("length prior entries must be finite and >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("length prior must sum to 1");
  length_prior_ = std::move(prior);
}

double EnergyModel::log_length_prior(std::size_t length) const {
  if (length == 0 || length > max_len()) return kNegInf;
  const double p = length_prior_[length];
  return p > 0.0 ? std::log(p) : kNegInf;
}

bool EnergyModel::in_support(const TokenSeq& x) const {
  if (x.empty() || x.size() > max_len()) return false;
  for (TokenId id : x) {
    if (Vocab::is_reserved(id) || id >= vocab_.size()) return false;
  }
  return config_.kind == ModelKind::GnElm || length_prior_[x.size()] > 0.0;
}

void EnergyModel::check_sequence(const TokenSeq& x) const {
  if (x.empty()) throw LengthError("energy of an empty sentence is undefined");
  if (x.size() > max_len()) {
    throw LengthError("sentence of length " + std::to_string(x.size()) + " exceeds max_len " +
                      std::to_string(max_len()));
  }
  for (TokenId id : x) {
    if (Vocab::is_reserved(id) || id >= vocab_.size()) {
      throw IndexError("token id " + std::to_string(id) + " is not a regular token");
    }
  }
}

Var EnergyModel::energy(Tape& tape, const TokenSeq& x) const {
  check_sequence(x);
  Var e;
  switch (config_.arch) {
    case Architecture::SumTargetLogit: e = energy_sum_target_logit(*this, tape, x); break;
    case Architecture::Hidden2Scalar: e = energy_hidden2scalar(*this, tape, x); break;
    case Architecture::SumMaskedLogit: e = energy_sum_masked_logit(*this, tape, x); break;
    case Architecture::SumTokenLogit: e = energy_sum_token_logit(*this, tape, x); break;
  }
  if (length_offset_) {
    const std::size_t slot = x.size() - 1;
    e = add(e, sum(gather(tape.param(*length_offset_), std::span<const std::size_t>(&slot, 1))));
  }
  return e;
}

double EnergyModel::energy(const TokenSeq& x) const {
  Tape tape(false);
  return energy(tape, x).item();
}

double EnergyModel::log_unnormalized(const TokenSeq& x) const {
  if (!in_support(x)) return kNegInf;
  const double e = energy(x);
  return config_.kind == ModelKind::TrfLm ? log_length_prior(x.size()) - e : -e;
}

Var EnergyModel::log_unnormalized(Tape& tape, const TokenSeq& x) const {
  if (!in_support(x)) throw ContractError("log_unnormalized of a sentence outside the support");
  Var e = energy(tape, x);
  return config_.kind == ModelKind::TrfLm ? add_scalar(neg(e), log_length_prior(x.size())) : neg(e);
}

Metadata EnergyModel::metadata() const {
  Metadata meta = config_.backbone.to_metadata("backbone.");
  meta["model"] = "elm";
  meta["kind"] = to_string(config_.kind);
  meta["architecture"] = to_string(config_.arch);
  meta["vocab"] = vocab_.serialize();
  std::string prior;
  for (std::size_t l = 1; l < length_prior_.size(); ++l) {
    if (l > 1) prior += ' ';
    prior += format_double(length_prior_[l]);
  }
  meta["length_prior"] = prior;
  return meta;
}

void EnergyModel::save(const std::string& path) const { write_checkpoint(path, params_, metadata()); }

EnergyModel EnergyModel::from_checkpoint(const CheckpointData& data) {
  if (data.meta("model") != "elm") throw ConfigError("checkpoint is not an energy model");
  EnergyModelConfig config;
  config.kind = parse_model_kind(data.meta("kind"));
  config.arch = parse_architecture(data.meta("architecture"));
  config.backbone = TransformerConfig::from_metadata(data.metadata, "backbone.");
  Vocab vocab = Vocab::deserialize(data.meta("vocab"));
  if (vocab.size() != config.backbone.vocab_size) throw ConfigError("checkpoint vocabulary size mismatch");
  EnergyModel m(std::move(vocab), config, 0);
  load_values(m.params_, data);
  std::vector<double> prior{0.0};
  std::istringstream in(data.meta("length_prior"));
  std::string tok;
  while (in >> tok) prior.push_back(std::stod(tok));
  m.set_length_prior(std::move(prior));
  return m;
}

EnergyModel EnergyModel::load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Architectures

Var sum_target_logit_from_logits(Var logits, const TokenSeq& x, std::size_t max_len) {
  std::vector<std::size_t> flat;
  const std::size_t V = logits.value().cols();
  if (logits.value().rows() != x.size() + 1) throw DimensionError("causal logits need |x|+1 rows");
  for (std::size_t i = 0; i < x.size(); ++i) flat.push_back(i * V + x[i]);
  if (x.size() < max_len) flat.push_back(x.size() * V + Vocab::kEos);
  return neg(sum(gather(logits, flat)));
}

Var energy_sum_target_logit(const EnergyModel& m, Tape& tape, const TokenSeq& x) {
  const CausalBackbone& f = m.causal();
  return sum_target_logit_from_logits(f.logits(tape, x), x, m.max_len());
}

Var energy_hidden2scalar(const EnergyModel& m, Tape& tape, const TokenSeq& x) {
  const BidirBackbone& enc = m.bidir();
  if (!m.head_weight()) {
    throw ConfigError(to_string(m.architecture()) + " model has no Hidden2Scalar head");
  }
  Var pooled = sum_rows(enc.hidden(tape, x));
  Var linear = add(sum(mul(tape.param(*m.head_weight()), pooled)), tape.param(*m.head_bias()));
  return neg(linear);
}

Var energy_sum_masked_logit(const EnergyModel& m, Tape& tape, const TokenSeq& x) {
  const BidirBackbone& g = m.bidir();
  const std::size_t V = g.config().vocab_size;
  std::vector<Var> terms;
  terms.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Var logits = g.token_logits(tape, mask_position(x, i));
    const std::size_t flat = i * V + x[i];
    terms.push_back(gather(logits, std::span<const std::size_t>(&flat, 1)));
  }
  return neg(sum(concat(terms)));
}

Var energy_sum_token_logit(const EnergyModel& m, Tape& tape, const TokenSeq& x) {
  const BidirBackbone& g = m.bidir();
  std::vector<std::size_t> cols(x.begin(), x.end());
  return neg(sum(pick(g.token_logits(tape, x), cols)));
}

// ---------------------------------------------------------------------------
// Exact normalizers

std::uint64_t enumeration_count(std::size_t alphabet, std::span<const std::size_t> lengths) {
  std::uint64_t total = 0;
  constexpr std::uint64_t kCap = std::numeric_limits<std::uint64_t>::max() / 2;
  for (std::size_t l : lengths) {
    std::uint64_t n = 1;
    for (std::size_t k = 0; k < l; ++k) {
      if (n > kCap / std::max<std::size_t>(alphabet, 1)) return kCap;
      n *= alphabet;
    }
    total += n;
    if (total > kCap) return kCap;
  }
  return total;
}

void for_each_sentence(std::span<const TokenId> alphabet, std::size_t length,
                       const std::function<void(const TokenSeq&)>& visit) {
  if (alphabet.empty()) return;
  std::vector<std::size_t> digits(length, 0);
  TokenSeq x(length, alphabet[0]);
  while (true) {
    visit(x);
    std::size_t k = length;
    while (k > 0) {
      --k;
      if (++digits[k] < alphabet.size()) {
        x[k] = alphabet[digits[k]];
        break;
      }
      digits[k] = 0;
      x[k] = alphabet[0];
      if (k == 0) return;
    }
    if (length == 0) return;
  }
}

namespace {

std::vector<std::size_t> support_lengths(const EnergyModel& m, std::span<const std::size_t> requested) {
  std::vector<std::size_t> lengths;
  if (requested.empty()) {
    for (std::size_t l = 1; l <= m.max_len(); ++l) lengths.push_back(l);
  } else {
    lengths.assign(requested.begin(), requested.end());
  }
  std::vector<std::size_t> out;
  for (std::size_t l : lengths) {
    if (l == 0 || l > m.max_len()) throw LengthError("length " + std::to_string(l) + " outside 1..max_len");
    if (m.kind() == ModelKind::TrfLm && m.length_prior()[l] == 0.0) continue;
    out.push_back(l);
  }
  return out;
}

void check_budget(const EnergyModel& m, std::span<const std::size_t> lengths, std::uint64_t budget) {
  const std::uint64_t count = enumeration_count(m.vocab().num_regular(), lengths);
  if (count > budget) {
    throw BudgetError("exact enumeration needs " + std::to_string(count) + " sentences, budget is " +
                      std::to_string(budget));
  }
}

}  // namespace

Normalizers exact_log_z(const EnergyModel& m, std::span<const std::size_t> lengths, std::uint64_t budget) {
  const auto support = support_lengths(m, lengths);
  check_budget(m, support, budget);
  Normalizers z;
  z.kind = m.kind();
  LogSum total;
  for (std::size_t l : support) {
    LogSum per_length;
    for_each_sentence(m.vocab().regular_ids(), l, [&](const TokenSeq& x) { per_length.add(-m.energy(x)); });
    z.log_z_by_length[l] = per_length.value();
    total.add(per_length.value());
  }
  z.log_z = total.value();
  return z;
}

double log_prob(const EnergyModel& m, const TokenSeq& x, const Normalizers& z) {
  if (!m.in_support(x)) return kNegInf;
  const double e = m.energy(x);
  if (m.kind() == ModelKind::GnElm) return -e - z.log_z;
  auto it = z.log_z_by_length.find(x.size());
  if (it == z.log_z_by_length.end()) {
    throw ContractError("no normalizer for length " + std::to_string(x.size()));
  }
  return m.log_length_prior(x.size()) - e - it->second;
}

double log_total_mass(const EnergyModel& m, const Normalizers& z) {
  if (m.kind() == ModelKind::GnElm) return z.log_z;
  LogSum total;
  for (const auto& [l, lz] : z.log_z_by_length) total.add(m.log_length_prior(l) + lz);
  return total.value();
}

std::vector<EnumeratedSentence> enumerate_distribution(const EnergyModel& m, std::uint64_t budget) {
  const auto support = support_lengths(m, {});
  check_budget(m, support, budget);
  std::vector<EnumeratedSentence> out;
  std::map<std::size_t, LogSum> per_length;
  LogSum total;
  for (std::size_t l : support) {
    for_each_sentence(m.vocab().regular_ids(), l, [&](const TokenSeq& x) {
      const double neg_e = -m.energy(x);
      per_length[l].add(neg_e);
      total.add(neg_e);
      out.push_back({x, neg_e});
    });
  }
  for (auto& s : out) {
    if (m.kind() == ModelKind::GnElm) {
      s.log_prob -= total.value();
    } else {
      s.log_prob += m.log_length_prior(s.tokens.size()) - per_length[s.tokens.size()].value();
    }
  }
  return out;
}

std::vector<double> empirical_length_prior(std::span<const TokenSeq> corpus, std::size_t max_len) {
  if (corpus.empty()) throw ContractError("length prior of an empty corpus");
  std::vector<double> prior(max_len + 1, 0.0);
  for (const auto& x : corpus) {
    if (x.empty() || x.size() > max_len) {
      throw LengthError("sentence length " + std::to_string(x.size()) + " outside 1.." + std::to_string(max_len));
    }
    prior[x.size()] += 1.0;
  }
  for (double& p : prior) p /= static_cast<double>(corpus.size());
  return prior;
}

Var pll_score(const BidirBackbone& backbone, Tape& tape, const TokenSeq& x) {
  if (x.empty()) throw LengthError("PLL of an empty sentence is undefined");
  const std::size_t V = backbone.config().vocab_size;
  const auto cols = regular_columns(V);
  std::vector<Var> terms;
  terms.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (Vocab::is_reserved(x[i]) || x[i] >= V) throw IndexError("PLL over a non-regular token");
    Var logits = backbone.token_logits(tape, mask_position(x, i));
    const std::size_t row = i;
    Var lp = log_softmax(take_cols(take_rows(logits, std::span<const std::size_t>(&row, 1)), cols));
    const std::size_t slot = x[i] - Vocab::kFirstRegular;
    terms.push_back(gather(lp, std::span<const std::size_t>(&slot, 1)));
  }
  return sum(concat(terms));
}

double pll_score(const BidirBackbone& backbone, const TokenSeq& x) {
  Tape tape(false);
  return pll_score(backbone, tape, x).item();
}

}  // namespace elm
