#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "elm/energy.hpp"
#include "elm/rescoring.hpp"
#include "elm/training.hpp"

namespace elm {

enum class BackboneChoice { Auto, Causal, Bidirectional };

/// Every setting of a run. Read from a flat `key = value` file (with
/// `schema_version = 1`), overridden by `key=value` strings from the command
/// line, and validated as a whole before anything is computed.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  ModelKind model_kind = ModelKind::GnElm;
  Architecture architecture = Architecture::Hidden2Scalar;
  TrainMethod method = TrainMethod::Nce;
  BackboneChoice backbone = BackboneChoice::Auto;
  std::uint64_t seed = 1;

  std::size_t max_len = 16;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 4;
  double init_std = 0.02;

  std::size_t batch_size = 16;
  double nu = 1.0;
  std::size_t steps = 1000;
  std::size_t alm_steps = 1000;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr_theta = 1e-3;
  double lr_phi = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t mis_steps = 256;
  std::size_t is_samples = 64;
  double divergence_bound = 1e3;
  std::size_t checkpoint_every = 0;

  std::string vocab;
  std::string noise_checkpoint;

  std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> beta_grid = {0.0};
  double alpha = 0.0;
  double beta = 0.0;
  double temperature = 1.0;
  std::uint64_t enum_budget = kDefaultEnumerationBudget;
  std::size_t num_samples = 10;

  // Throws ConfigError on the first invalid field or combination.
  void validate() const;

  // Applies one `key=value` or `key = value` setting. Unknown keys and
  // malformed values throw ConfigError.
  void set(const std::string& key, const std::string& value);

  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::string& path);
  // Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;

  TransformerConfig transformer(std::size_t vocab_size) const;
  EnergyModelConfig energy(std::size_t vocab_size) const;
  TrainConfig training() const;
  OptimizerConfig theta_optimizer() const;
  OptimizerConfig phi_optimizer() const;
  WeightGrid grid() const { return {alpha_grid, beta_grid}; }
};

std::string to_string(BackboneChoice b);
BackboneChoice parse_backbone_choice(const std::string& name);

// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace elm
