#include "elm/optimizer.hpp"

#include <cmath>

#include "elm/error.hpp"

namespace elm {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(ParamStore& params) {
  ++t_;
  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params.at(i);
      if (!p.has_grad() || !p.requires_grad()) continue;
      auto g = p.grad();
      auto x = p.data();
      for (std::size_t j = 0; j < x.size(); ++j) x[j] -= config_.lr * g[j];
    }
    return;
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params.at(i).size(), 0.0);
      v_[i].assign(params.at(i).size(), 0.0);
    }
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    if (!p.requires_grad()) continue;
    auto x = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != x.size()) throw DimensionError("optimizer state does not mirror parameter shapes");
    const bool has = p.has_grad();
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double g = has ? p.grad()[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      x[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

}  // namespace elm
