#include <cmath>

#include "criteria.hpp"
#include "elm/training.hpp"

namespace elm::acceptance {

namespace {

// Proposal that remembers every draw, so the chain can be replayed.
class RecordingProposal final : public IndependenceProposal {
 public:
  explicit RecordingProposal(const IndependenceProposal& inner) : inner_(inner) {}
  TokenSeq draw(Rng& rng) const override {
    draws.push_back(inner_.draw(rng));
    return draws.back();
  }
  double log_density(const TokenSeq& x) const override { return inner_.log_density(x); }

  mutable std::vector<TokenSeq> draws;

 private:
  const IndependenceProposal& inner_;
};

}  // namespace

// Two sentences with unnormalized target {1, e} under a uniform proposal.
Outcome mis_stationarity() {
  constexpr std::size_t kSteps = 100000;
  constexpr double kTol = 0.01;
  const TokenSeq a = {4}, b = {5};
  const TableProposal uniform({a, b}, {0.5, 0.5});
  RecordingProposal q(uniform);
  auto log_target = [&](const TokenSeq& x) { return x == a ? 0.0 : 1.0; };
  Rng rng = make_stream(2024, "mis");
  const MisResult r = mis_sample(log_target, q, kSteps, rng);

  double freq_b = 0.0;
  for (const auto& x : r.states) freq_b += x == b ? 1.0 : 0.0;
  freq_b /= static_cast<double>(kSteps);
  const double freq_a = 1.0 - freq_b;
  const double want_a = 1.0 / (1.0 + std::exp(1.0)), want_b = 1.0 - want_a;

  // Replay: every proposal whose ratio is >= 1 must have been taken.
  std::size_t forced = 0, refused = 0;
  TokenSeq prev = q.draws.at(0);
  for (std::size_t t = 0; t < kSteps; ++t) {
    const TokenSeq& candidate = q.draws.at(t + 1);
    if (log_target(candidate) - log_target(prev) >= 0.0) {
      ++forced;
      if (r.states[t] != candidate) ++refused;
    }
    prev = r.states[t];
  }

  // Proposal equal to the normalized target: every ratio is exactly 1.
  const TableProposal matched({a, b}, {want_a, want_b});
  Rng rng2 = make_stream(2025, "mis");
  const MisResult all = mis_sample([&](const TokenSeq& x) { return matched.log_density(x); }, matched, 10000, rng2);

  const bool pass = std::abs(freq_a - want_a) <= kTol && std::abs(freq_b - want_b) <= kTol && refused == 0 &&
                    forced > 0 && all.accepted == 10000;
  return {pass, format("freq {%.4f, %.4f} vs {%.4f, %.4f} (tol %.2f); %zu steps with ratio >= 1, %zu refused; "
                       "matched proposal acceptance %.4f; overall acceptance %.4f",
                       freq_a, freq_b, want_a, want_b, kTol, forced, refused, all.acceptance_rate(),
                       r.acceptance_rate())};
}

}  // namespace elm::acceptance
