#include "elm/backbone.hpp"

#include <cmath>
#include <limits>

#include "elm/error.hpp"

namespace elm {

void TransformerConfig::validate() const {
  if (vocab_size <= Vocab::kFirstRegular) throw ConfigError("vocabulary has no regular tokens");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
  if (!(init_std >= 0.0) || !std::isfinite(init_std)) throw ConfigError("init_std must be finite and >= 0");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

Metadata TransformerConfig::to_metadata(const std::string& prefix) const {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {
      {prefix + "vocab_size", std::to_string(vocab_size)}, {prefix + "max_len", std::to_string(max_len)},
      {prefix + "d_model", std::to_string(d_model)},       {prefix + "n_layers", std::to_string(n_layers)},
      {prefix + "n_heads", std::to_string(n_heads)},       {prefix + "ffn_mult", std::to_string(ffn_mult)},
      {prefix + "init_std", num(init_std)},                {prefix + "ln_eps", num(ln_eps)},
  };
}

TransformerConfig TransformerConfig::from_metadata(const Metadata& meta, const std::string& prefix) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(prefix + key);
    if (it == meta.end()) throw ConfigError("checkpoint metadata lacks '" + prefix + key + "'");
    return it->second;
  };
  TransformerConfig c;
  try {
    c.vocab_size = std::stoull(get("vocab_size"));
    c.max_len = std::stoull(get("max_len"));
    c.d_model = std::stoull(get("d_model"));
    c.n_layers = std::stoull(get("n_layers"));
    c.n_heads = std::stoull(get("n_heads"));
    c.ffn_mult = std::stoull(get("ffn_mult"));
    c.init_std = std::stod(get("init_std"));
    c.ln_eps = std::stod(get("ln_eps"));
  } catch (const std::logic_error&) {
    throw ParseError("malformed backbone metadata");
  }
  c.validate();
  return c;
}

std::vector<std::size_t> regular_columns(std::size_t vocab_size) {
  std::vector<std::size_t> cols;
  for (std::size_t id = Vocab::kFirstRegular; id < vocab_size; ++id) cols.push_back(id);
  return cols;
}

std::vector<std::size_t> next_token_columns(std::size_t vocab_size) {
  std::vector<std::size_t> cols{Vocab::kEos};
  for (std::size_t id = Vocab::kFirstRegular; id < vocab_size; ++id) cols.push_back(id);
  return cols;
}

TokenSeq mask_position(std::span<const TokenId> x, std::size_t i) {
  if (i >= x.size()) throw IndexError("mask position " + std::to_string(i) + " out of range");
  TokenSeq masked(x.begin(), x.end());
  masked[i] = Vocab::kMask;
  return masked;
}

// ---------------------------------------------------------------------------

namespace {

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  if (stddev > 0.0) {
    for (double& v : t.data()) v = stddev * standard_normal(rng);
  }
  return t;
}

}  // namespace

Transformer::Transformer(ParamStore& params, const std::string& prefix, const TransformerConfig& config,
                         bool causal, std::size_t positions, Rng& init)
    : config_(config), causal_(causal), positions_(positions) {
  config_.validate();
  const std::size_t d = config_.d_model, V = config_.vocab_size, f = config_.ffn_mult * d;
  const double s = config_.init_std;
  tok_emb_ = &params.add(prefix + ".tok_emb", normal_init({V, d}, s, init));
  pos_emb_ = &params.add(prefix + ".pos_emb", normal_init({positions, d}, s, init));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    Block b{};
    b.ln1_g = &params.add(p + ".ln1.g", Tensor({d}, 1.0));
    b.ln1_b = &params.add(p + ".ln1.b", Tensor({d}, 0.0));
    b.w_qkv = &params.add(p + ".attn.w_qkv", normal_init({d, 3 * d}, s, init));
    b.b_qkv = &params.add(p + ".attn.b_qkv", Tensor({3 * d}, 0.0));
    b.w_o = &params.add(p + ".attn.w_o", normal_init({d, d}, s, init));
    b.b_o = &params.add(p + ".attn.b_o", Tensor({d}, 0.0));
    b.ln2_g = &params.add(p + ".ln2.g", Tensor({d}, 1.0));
    b.ln2_b = &params.add(p + ".ln2.b", Tensor({d}, 0.0));
    b.w_ff1 = &params.add(p + ".ff.w1", normal_init({d, f}, s, init));
    b.b_ff1 = &params.add(p + ".ff.b1", Tensor({f}, 0.0));
    b.w_ff2 = &params.add(p + ".ff.w2", normal_init({f, d}, s, init));
    b.b_ff2 = &params.add(p + ".ff.b2", Tensor({d}, 0.0));
    blocks_.push_back(b);
  }
  lnf_g_ = &params.add(prefix + ".lnf.g", Tensor({d}, 1.0));
  lnf_b_ = &params.add(prefix + ".lnf.b", Tensor({d}, 0.0));
  head_w_ = &params.add(prefix + ".head.w", normal_init({d, V}, s, init));
  head_b_ = &params.add(prefix + ".head.b", Tensor({V}, 0.0));

  const std::size_t dh = d / config_.n_heads;
  for (std::size_t h = 0; h < config_.n_heads; ++h) {
    std::vector<std::size_t> q, k, v;
    for (std::size_t j = 0; j < dh; ++j) {
      q.push_back(h * dh + j);
      k.push_back(d + h * dh + j);
      v.push_back(2 * d + h * dh + j);
    }
    q_cols_.push_back(std::move(q));
    k_cols_.push_back(std::move(k));
    v_cols_.push_back(std::move(v));
  }
}

Var Transformer::attention(Tape& tape, const Block& block, Var x) const {
  const std::size_t n = x.value().dim(0);
  const std::size_t dh = config_.d_model / config_.n_heads;
  Var qkv = add(matmul(x, tape.param(*block.w_qkv)), tape.param(*block.b_qkv));
  Var mask;
  if (causal_ && n > 1) {
    Tensor m({n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -std::numeric_limits<double>::infinity();
    mask = tape.constant(std::move(m));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(config_.n_heads);
  for (std::size_t h = 0; h < config_.n_heads; ++h) {
    Var q = take_cols(qkv, q_cols_[h]);
    Var k = take_cols(qkv, k_cols_[h]);
    Var v = take_cols(qkv, v_cols_[h]);
    Var scores = scale(matmul(q, transpose(k)), inv_sqrt);
    if (mask.valid()) scores = add(scores, mask);
    heads.push_back(matmul(softmax(scores), v));
  }
  Var joined = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return add(matmul(joined, tape.param(*block.w_o)), tape.param(*block.b_o));
}

Var Transformer::encode(Tape& tape, std::span<const TokenId> ids) const {
  if (ids.empty()) throw ContractError("transformer input is empty");
  if (ids.size() > positions_) {
    throw LengthError("input of " + std::to_string(ids.size()) + " positions exceeds the " +
                      std::to_string(positions_) + "-position table");
  }
  std::vector<std::size_t> rows(ids.size()), pos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= config_.vocab_size) {
      throw IndexError("token id " + std::to_string(ids[i]) + " out of vocabulary of size " +
                       std::to_string(config_.vocab_size));
    }
    rows[i] = ids[i];
    pos[i] = i;
  }
  counter_.value.fetch_add(1, std::memory_order_relaxed);
  const double eps = config_.ln_eps;
  Var h = add(take_rows(tape.param(*tok_emb_), rows), take_rows(tape.param(*pos_emb_), pos));
  for (const Block& b : blocks_) {
    Var a = layer_norm(h, tape.param(*b.ln1_g), tape.param(*b.ln1_b), eps);
    h = add(h, attention(tape, b, a));
    Var m = layer_norm(h, tape.param(*b.ln2_g), tape.param(*b.ln2_b), eps);
    Var ff = gelu(add(matmul(m, tape.param(*b.w_ff1)), tape.param(*b.b_ff1)));
    h = add(h, add(matmul(ff, tape.param(*b.w_ff2)), tape.param(*b.b_ff2)));
  }
  return layer_norm(h, tape.param(*lnf_g_), tape.param(*lnf_b_), eps);
}

Var Transformer::head(Tape& tape, Var hidden) const {
  return add(matmul(hidden, tape.param(*head_w_)), tape.param(*head_b_));
}

// ---------------------------------------------------------------------------

CausalBackbone::CausalBackbone(ParamStore& params, const std::string& prefix, const TransformerConfig& config,
                               Rng& init)
    : net_(params, prefix, config, /*causal=*/true, config.max_len + 1, init) {}

Var CausalBackbone::logits(Tape& tape, std::span<const TokenId> x) const {
  if (x.size() > config().max_len) {
    throw LengthError("sequence of length " + std::to_string(x.size()) + " exceeds max_len " +
                      std::to_string(config().max_len));
  }
  TokenSeq input;
  input.reserve(x.size() + 1);
  input.push_back(Vocab::kBos);
  input.insert(input.end(), x.begin(), x.end());
  return net_.head(tape, net_.encode(tape, input));
}

BidirBackbone::BidirBackbone(ParamStore& params, const std::string& prefix, const TransformerConfig& config,
                             Rng& init)
    : net_(params, prefix, config, /*causal=*/false, config.max_len, init) {}

Var BidirBackbone::hidden(Tape& tape, std::span<const TokenId> x) const {
  if (x.size() > config().max_len) {
    throw LengthError("sequence of length " + std::to_string(x.size()) + " exceeds max_len " +
                      std::to_string(config().max_len));
  }
  return net_.encode(tape, x);
}

Var BidirBackbone::token_logits(Tape& tape, std::span<const TokenId> x) const {
  return net_.head(tape, hidden(tape, x));
}

Var causal_logits(const CausalBackbone& backbone, Tape& tape, std::span<const TokenId> x) {
  return backbone.logits(tape, x);
}

Var bidir_hidden(const BidirBackbone& backbone, Tape& tape, std::span<const TokenId> x) {
  return backbone.hidden(tape, x);
}

Var bidir_token_logits(const BidirBackbone& backbone, Tape& tape, std::span<const TokenId> x) {
  return backbone.token_logits(tape, x);
}

}  // namespace elm
