#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>

#include "elm/error.hpp"
#include "elm/proposal.hpp"
#include "../support/oracles.hpp"

using namespace elm;
using elm::testing::letters;
using elm::testing::tiny_transformer;

namespace {

AutoregressiveLM random_alm(std::size_t v, std::size_t max_len, std::uint64_t seed, double scale = 0.5) {
  AutoregressiveLM q(letters(v), tiny_transformer(letters(v), max_len, 8), seed);
  Rng r(seed + 100);
  testing::randomize(q.params(), r, scale);
  return q;
}

void zero_all(ParamStore& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (double& d : ps.at(i).data()) d = 0.0;
  }
}

}  // namespace

TEST_CASE("zero-parameter ALM is uniform over EOS and the regular tokens") {
  AutoregressiveLM q = random_alm(3, 4, 1);
  zero_all(q.params());
  const double a = std::log(1.0 / 4);
  CHECK(alm_log_prob(q, TokenSeq{}) == doctest::Approx(a).epsilon(1e-14));
  CHECK(alm_log_prob(q, TokenSeq{4, 5}) == doctest::Approx(3 * a).epsilon(1e-14));
  // A full-length sentence has no EOS term.
  CHECK(alm_log_prob(q, TokenSeq{4, 5, 6, 4}) == doctest::Approx(4 * a).epsilon(1e-14));
  CHECK_THROWS_AS(alm_log_prob(q, TokenSeq{4, 5, 6, 4, 4}), LengthError);
  CHECK_THROWS_AS(alm_log_prob(q, TokenSeq{Vocab::kEos}), IndexError);
}

TEST_CASE("ALM probabilities sum to one over every length") {
  AutoregressiveLM q = random_alm(2, 4, 2);
  const auto all = testing::all_sentences(q.vocab().regular_ids(), 0, 4);
  double mass = 0.0;
  for (const auto& x : all) mass += std::exp(alm_log_prob(q, x));
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& x : std::vector<TokenSeq>{{}, {4}, {5, 4, 4}}) {
    double s = 0.0;
    for (double lp : q.next_token_log_probs(x)) s += std::exp(lp);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("ancestral sampling with a hand-built table") {
  // Always emits 'b' then 'a', then EOS.
  const std::vector<std::size_t> cols = {Vocab::kEos, 4, 5};
  auto next = [](std::span<const TokenId> prefix) {
    const double lo = -INFINITY;
    if (prefix.empty()) return std::vector<double>{lo, lo, 0.0};
    if (prefix.size() == 1) return std::vector<double>{lo, 0.0, lo};
    return std::vector<double>{0.0, lo, lo};
  };
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const AlmSample s = ancestral_sample(next, cols, 5, rng);
    CHECK(s.tokens == TokenSeq{5, 4});
    CHECK_FALSE(s.truncated);
  }
  const AlmSample cut = ancestral_sample(next, cols, 1, rng);
  CHECK(cut.tokens == TokenSeq{5});
  CHECK(cut.truncated);
}

TEST_CASE("zero-parameter ALM sample frequencies match uniform conditionals") {
  AutoregressiveLM q(letters(2), tiny_transformer(letters(2), 3, 4, 1, 1), 3);
  zero_all(q.params());
  Rng rng(4);
  const int n = 50000;
  std::vector<double> len_count(4, 0.0);
  double first_a = 0, first_any = 0;
  int truncated = 0;
  for (int i = 0; i < n; ++i) {
    const AlmSample s = q.sample(3, rng);
    len_count[s.tokens.size()] += 1;
    truncated += s.truncated ? 1 : 0;
    if (!s.tokens.empty()) {
      first_any += 1;
      first_a += s.tokens[0] == 4 ? 1 : 0;
    }
  }
  // P(len = l) = (2/3)^l (1/3) for l < 3, and (2/3)^3 for l = 3.
  const double p[4] = {1.0 / 3, 2.0 / 9, 4.0 / 27, 8.0 / 27};
  for (int l = 0; l < 4; ++l) {
    const double sd = std::sqrt(n * p[l] * (1 - p[l]));
    CHECK(std::abs(len_count[l] - n * p[l]) < 3 * sd);
  }
  CHECK(truncated == static_cast<int>(len_count[3]));
  CHECK(std::abs(first_a - 0.5 * first_any) < 3 * std::sqrt(first_any * 0.25));
}

TEST_CASE("sampling is reproducible and consistent with scoring") {
  AutoregressiveLM q = random_alm(2, 3, 5, 0.8);
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) CHECK(q.sample(3, a).tokens == q.sample(3, b).tokens);

  std::map<TokenSeq, double> freq;
  Rng rng(10);
  const int n = 100000;
  for (int i = 0; i < n; ++i) freq[q.sample(3, rng).tokens] += 1.0 / n;
  double kl = 0.0;
  for (const auto& [x, f] : freq) kl += f * (std::log(f) - alm_log_prob(q, x));
  CHECK(kl < 0.01);
  CHECK(kl > -1e-12);
}

TEST_CASE("ALM MLE steps") {
  AutoregressiveLM q = random_alm(3, 4, 6, 0.3);
  const std::vector<TokenSeq> batch = {{4, 6, 5}, {5}};
  const double hand = -(alm_log_prob(q, batch[0]) + alm_log_prob(q, batch[1])) / 2;
  Optimizer opt({OptimizerKind::Adam, 0.02});
  CHECK(alm_mle_step(q, batch, opt) == doctest::Approx(hand).epsilon(1e-12));

  const auto before = q.params().flat_values();
  Optimizer frozen({OptimizerKind::Adam, 0.0});
  alm_mle_step(q, batch, frozen);
  CHECK(q.params().flat_values() == before);

  const std::vector<TokenSeq> one = {{6, 4}};
  double prev = INFINITY, last = 0.0;
  int increases = 0;
  for (int i = 0; i < 150; ++i) {
    last = alm_mle_step(q, one, opt);
    increases += last > prev + 1e-9 ? 1 : 0;
    prev = last;
  }
  CHECK(last < 0.05);
  CHECK(increases < 10);
  CHECK_THROWS_AS(alm_mle_step(q, std::vector<TokenSeq>{}, opt), ContractError);
}

TEST_CASE("MLE on a small corpus lowers KL to the empirical distribution") {
  AutoregressiveLM q = random_alm(2, 2, 7, 0.1);
  const std::vector<TokenSeq> corpus = {{4}, {4, 5}, {4, 5}, {5, 5}};
  auto kl = [&] {
    std::map<TokenSeq, double> p;
    for (const auto& x : corpus) p[x] += 0.25;
    double k = 0.0;
    for (const auto& [x, px] : p) k += px * (std::log(px) - alm_log_prob(q, x));
    return k;
  };
  Optimizer opt({OptimizerKind::Adam, 0.01});
  double prev = kl();
  for (int epoch = 0; epoch < 5; ++epoch) {
    for (int i = 0; i < 20; ++i) alm_mle_step(q, corpus, opt);
    const double now = kl();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("ALM checkpoint round trip and table proposal") {
  AutoregressiveLM q = random_alm(3, 4, 8);
  q.save("alm_roundtrip.ckpt");
  const AutoregressiveLM back = AutoregressiveLM::load("alm_roundtrip.ckpt");
  std::remove("alm_roundtrip.ckpt");
  CHECK(back.vocab() == q.vocab());
  CHECK(alm_log_prob(back, TokenSeq{4, 6}) == alm_log_prob(q, TokenSeq{4, 6}));

  TableProposal t({{4}, {5, 5}}, {0.25, 0.75});
  CHECK(t.log_density(TokenSeq{5, 5}) == doctest::Approx(std::log(0.75)));
  CHECK(t.log_density(TokenSeq{6}) == -INFINITY);
  CHECK_THROWS(TableProposal({{4}}, {0.5}));
}
