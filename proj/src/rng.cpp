#include "elm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "elm/error.hpp"

namespace elm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return Rng(splitmix64(seed ^ splitmix64(h)));
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw ContractError("uniform_index over an empty range");
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

std::size_t sample_categorical(Rng& rng, std::span<const double> probs) {
  if (probs.empty()) throw ContractError("sampling from an empty distribution");
  double total = 0.0;
  for (double p : probs) total += p;
  if (!(total > 0.0)) throw DomainError("categorical distribution has no mass");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

std::size_t sample_log_categorical(Rng& rng, std::span<const double> log_weights) {
  if (log_weights.empty()) throw ContractError("sampling from an empty distribution");
  const double mx = *std::max_element(log_weights.begin(), log_weights.end());
  if (std::isinf(mx) && mx < 0) throw DomainError("categorical distribution has no mass");
  std::vector<double> probs(log_weights.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(log_weights[i] - mx);
  return sample_categorical(rng, probs);
}

}  // namespace elm
