#pragma once

#include <string>
#include <vector>

#include "elm/params.hpp"

namespace elm {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Descent on the gradients stored in each parameter's buffer; a parameter
/// without a buffer contributes a zero gradient. Adam state mirrors the
/// parameter shapes and is allocated on the first step.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  void step(ParamStore& params);

  const OptimizerConfig& config() const noexcept { return config_; }
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

inline void optimizer_step(ParamStore& params, Optimizer& optimizer) { optimizer.step(params); }

}  // namespace elm
