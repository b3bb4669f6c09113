#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace elm {

using Rng = std::mt19937_64;

// Independent stream derived from a run seed and a stream name ("init",
// "batching", "noise", "mis", ...). Same (seed, name) gives the same stream.
Rng make_stream(std::uint64_t seed, std::string_view name);

// Portable draws; they do not depend on the standard library's distributions.
double uniform01(Rng& rng);
double standard_normal(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);
// Index drawn with probability proportional to exp(log_weights[i]).
std::size_t sample_log_categorical(Rng& rng, std::span<const double> log_weights);
std::size_t sample_categorical(Rng& rng, std::span<const double> probs);

}  // namespace elm
