#include <cmath>

#include "criteria.hpp"
#include "elm/training.hpp"
#include "../support/oracles.hpp"

namespace elm::acceptance {

namespace {

// Exact draws from an enumerated distribution.
class ExactSource final : public BatchSource {
 public:
  ExactSource(std::vector<EnumeratedSentence> dist, std::size_t batch, std::uint64_t seed)
      : dist_(std::move(dist)), batch_(batch), rng_(make_stream(seed, "batching")) {
    for (const auto& e : dist_) probs_.push_back(std::exp(e.log_prob));
  }
  std::vector<TokenSeq> next_batch() override {
    std::vector<TokenSeq> out;
    for (std::size_t i = 0; i < batch_; ++i) out.push_back(dist_[sample_categorical(rng_, probs_)].tokens);
    return out;
  }

 private:
  std::vector<EnumeratedSentence> dist_;
  std::vector<double> probs_;
  std::size_t batch_;
  Rng rng_;
};

double kl(const std::vector<EnumeratedSentence>& p, const std::vector<EnumeratedSentence>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::exp(p[i].log_prob) * (p[i].log_prob - q[i].log_prob);
  return s;
}

}  // namespace

// A teacher of the model family defines p_data; a fresh student of the same
// family is trained by NCE on exact teacher samples.
Outcome nce_consistency() {
  constexpr double kTol = 0.05;
  constexpr std::size_t steps = 20000;
  const Vocab vocab = testing::letters(3);
  const std::size_t max_len = 3;
  const EnergyModelConfig cfg =
      testing::tiny_energy(vocab, ModelKind::GnElm, Architecture::Hidden2Scalar, max_len, 16);

  EnergyModel teacher(vocab, cfg, 11);
  Rng r(12);
  testing::randomize(teacher.params(), r, 0.5);
  const auto p_data = enumerate_distribution(teacher);

  // Noise: an ALM fitted to teacher samples, then frozen.
  AutoregressiveLM noise(vocab, testing::tiny_transformer(vocab, max_len, 16), 13);
  {
    ExactSource src(p_data, 32, 14);
    Optimizer opt({OptimizerKind::Adam, 3e-3});
    for (int i = 0; i < 1000; ++i) alm_mle_step(noise, src.next_batch(), opt);
  }

  EnergyModel student(vocab, cfg, 15);
  const double kl_init = kl(p_data, enumerate_distribution(student));
  TrainConfig tc;
  tc.method = TrainMethod::Nce;
  tc.nce.nu = 1.0;
  tc.batch_size = 16;
  tc.steps = steps;
  tc.theta_optimizer = {OptimizerKind::Adam, 1e-3};
  tc.seed = 16;
  ElmTrainer trainer(student, noise, tc);
  ExactSource data(p_data, tc.batch_size, 17);
  std::string trace;
  trainer.run(data, [&](const StepMetrics& m) {
    if (m.step % (steps / 4) == 0) trace += format(" step %zu: %.4f;", m.step, kl(p_data, enumerate_distribution(student)));
  });
  const double kl_final = kl(p_data, enumerate_distribution(student));
  double entropy = 0.0;
  for (const auto& e : p_data) entropy -= std::exp(e.log_prob) * e.log_prob;
  return {kl_final < kTol,
          format("%zu sentences, data entropy %.3f nats; KL(p_data || p_theta) at init %.4f;%s final %.4f (tol %.2f)",
                 p_data.size(), entropy, kl_init, trace.c_str(), kl_final, kTol)};
}

}  // namespace elm::acceptance
