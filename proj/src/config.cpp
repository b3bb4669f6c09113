#include "elm/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "elm/error.hpp"
#include "elm/io.hpp"

namespace elm {

std::string to_string(BackboneChoice b) {
  switch (b) {
    case BackboneChoice::Auto: return "auto";
    case BackboneChoice::Causal: return "causal";
    case BackboneChoice::Bidirectional: return "bidirectional";
  }
  return "?";
}

BackboneChoice parse_backbone_choice(const std::string& name) {
  if (name == "auto") return BackboneChoice::Auto;
  if (name == "causal") return BackboneChoice::Causal;
  if (name == "bidirectional") return BackboneChoice::Bidirectional;
  throw ConfigError("unknown backbone '" + name + "' (expected auto|causal|bidirectional)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("key '" + key + "': expected a finite number, got '" + v + "'");
  }
  return out;
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t end = v.find(',', pos);
    if (end == std::string::npos) end = v.size();
    out.push_back(parse_real(key, trim(v.substr(pos, end - pos))));
    pos = end + 1;
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ELM_UINT(field)                                                                                   \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = parse_uint(#field, v); },               \
      [](const RunConfig& c) { return std::to_string(c.field); }}
#define ELM_REAL(field)                                                                                   \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = parse_real(#field, v); },               \
      [](const RunConfig& c) { return fmt(c.field); }}
#define ELM_TEXT(field)                                                                                   \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}
#define ELM_LIST(field)                                                                                   \
  Key{#field, [](RunConfig& c, const std::string& v) { c.field = parse_list(#field, v); },               \
      [](const RunConfig& c) { return fmt_list(c.field); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"model_kind", [](RunConfig& c, const std::string& v) { c.model_kind = parse_model_kind(v); },
          [](const RunConfig& c) { return to_string(c.model_kind); }},
      Key{"architecture", [](RunConfig& c, const std::string& v) { c.architecture = parse_architecture(v); },
          [](const RunConfig& c) { return to_string(c.architecture); }},
      Key{"method", [](RunConfig& c, const std::string& v) { c.method = parse_train_method(v); },
          [](const RunConfig& c) { return to_string(c.method); }},
      Key{"backbone", [](RunConfig& c, const std::string& v) { c.backbone = parse_backbone_choice(v); },
          [](const RunConfig& c) { return to_string(c.backbone); }},
      ELM_UINT(seed),
      ELM_UINT(max_len),
      ELM_UINT(d_model),
      ELM_UINT(n_layers),
      ELM_UINT(n_heads),
      ELM_UINT(ffn_mult),
      ELM_REAL(init_std),
      ELM_UINT(batch_size),
      ELM_REAL(nu),
      ELM_UINT(steps),
      ELM_UINT(alm_steps),
      Key{"optimizer", [](RunConfig& c, const std::string& v) { c.optimizer = parse_optimizer_kind(v); },
          [](const RunConfig& c) { return to_string(c.optimizer); }},
      ELM_REAL(lr_theta),
      ELM_REAL(lr_phi),
      ELM_REAL(adam_beta1),
      ELM_REAL(adam_beta2),
      ELM_REAL(adam_eps),
      ELM_UINT(mis_steps),
      ELM_UINT(is_samples),
      ELM_REAL(divergence_bound),
      ELM_UINT(checkpoint_every),
      ELM_TEXT(vocab),
      ELM_TEXT(noise_checkpoint),
      ELM_LIST(alpha_grid),
      ELM_LIST(beta_grid),
      ELM_REAL(alpha),
      ELM_REAL(beta),
      ELM_REAL(temperature),
      ELM_UINT(enum_budget),
      ELM_UINT(num_samples),
  };
  return table;
}

#undef ELM_UINT
#undef ELM_REAL
#undef ELM_TEXT
#undef ELM_LIST

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = trim(key), v = trim(value);
  if (k == "schema_version") {
    if (parse_uint(k, v) != static_cast<std::uint64_t>(kSchemaVersion)) {
      throw ConfigError("unsupported schema_version " + v + " (this build reads version " +
                        std::to_string(kSchemaVersion) + ")");
    }
    return;
  }
  for (const auto& entry : keys()) {
    if (k == entry.name) {
      entry.set(*this, v);
      return;
    }
  }
  throw ConfigError("unknown config key '" + k + "'");
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not of the form key=value");
    config.set(o.substr(0, eq), o.substr(eq + 1));
  }
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig c;
  bool versioned = false;
  std::set<std::string> seen;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      c.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    versioned = versioned || key == "schema_version";
  }
  if (!versioned) throw ConfigError(source + ": missing schema_version");
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse(read_text_file(path), path); }

std::string RunConfig::to_text() const {
  std::string out = "schema_version = " + std::to_string(kSchemaVersion) + "\n";
  for (const auto& entry : keys()) out += std::string(entry.name) + " = " + entry.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  const bool causal = uses_causal_backbone(architecture);
  if (backbone == BackboneChoice::Causal && !causal) {
    throw ConfigError("architecture " + to_string(architecture) + " requires a bidirectional backbone");
  }
  if (backbone == BackboneChoice::Bidirectional && causal) {
    throw ConfigError("architecture " + to_string(architecture) + " requires a causal backbone");
  }
  transformer(Vocab::kFirstRegular + 1).validate();
  training().validate();
  if (alm_steps > 0) phi_optimizer().validate();
  if (alpha_grid.empty() || beta_grid.empty()) throw ConfigError("alpha_grid and beta_grid must be non-empty");
  InterpWeights{alpha, beta}.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (enum_budget == 0) throw ConfigError("enum_budget must be >= 1");
  if (num_samples == 0) throw ConfigError("num_samples must be >= 1");
}

TransformerConfig RunConfig::transformer(std::size_t vocab_size) const {
  TransformerConfig t;
  t.vocab_size = vocab_size;
  t.max_len = max_len;
  t.d_model = d_model;
  t.n_layers = n_layers;
  t.n_heads = n_heads;
  t.ffn_mult = ffn_mult;
  t.init_std = init_std;
  return t;
}

EnergyModelConfig RunConfig::energy(std::size_t vocab_size) const {
  EnergyModelConfig e;
  e.kind = model_kind;
  e.arch = architecture;
  e.backbone = transformer(vocab_size);
  return e;
}

OptimizerConfig RunConfig::theta_optimizer() const {
  return {optimizer, lr_theta, adam_beta1, adam_beta2, adam_eps};
}

OptimizerConfig RunConfig::phi_optimizer() const { return {optimizer, lr_phi, adam_beta1, adam_beta2, adam_eps}; }

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.method = method;
  t.batch_size = batch_size;
  t.steps = steps;
  t.nce.nu = nu;
  t.mle.chain_length = mis_steps;
  t.mle.num_samples = is_samples;
  t.theta_optimizer = theta_optimizer();
  t.phi_optimizer = phi_optimizer();
  t.divergence_bound = divergence_bound;
  t.seed = seed;
  return t;
}

}  // namespace elm
