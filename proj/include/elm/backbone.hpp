#pragma once

#include <atomic>
#include <span>
#include <string>
#include <vector>

#include "elm/autodiff.hpp"
#include "elm/params.hpp"
#include "elm/rng.hpp"
#include "elm/vocab.hpp"

namespace elm {

struct TransformerConfig {
  std::size_t vocab_size = 0;
  // Longest sentence in tokens (L_max), excluding BOS/EOS.
  std::size_t max_len = 16;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn_mult = 4;
  double init_std = 0.02;
  double ln_eps = 1e-5;

  void validate() const;
  Metadata to_metadata(const std::string& prefix) const;
  static TransformerConfig from_metadata(const Metadata& meta, const std::string& prefix);
};

// Regular-token columns of a logits matrix, in id order.
std::vector<std::size_t> regular_columns(std::size_t vocab_size);
// EOS followed by the regular-token columns: the support of next-token prediction.
std::vector<std::size_t> next_token_columns(std::size_t vocab_size);

/// Pre-LN transformer encoder stack shared by the causal and bidirectional
/// backbones: token + position embeddings, self-attention blocks with GELU
/// feed-forward layers, a final layer norm, and a linear head onto the vocabulary.
class Transformer {
 public:
  Transformer(ParamStore& params, const std::string& prefix, const TransformerConfig& config,
              bool causal, std::size_t positions, Rng& init);

  const TransformerConfig& config() const noexcept { return config_; }
  bool causal() const noexcept { return causal_; }
  std::size_t positions() const noexcept { return positions_; }

  // Final-layer-normed hidden states, one row per input id.
  Var encode(Tape& tape, std::span<const TokenId> ids) const;
  // Vocabulary logits for each hidden row.
  Var head(Tape& tape, Var hidden) const;

  std::size_t forward_count() const noexcept { return counter_.value.load(std::memory_order_relaxed); }

 private:
  struct Block {
    Tensor *ln1_g, *ln1_b, *w_qkv, *b_qkv, *w_o, *b_o;
    Tensor *ln2_g, *ln2_b, *w_ff1, *b_ff1, *w_ff2, *b_ff2;
  };
  struct Counter {
    std::atomic<std::size_t> value{0};
    Counter() = default;
    Counter(Counter&& other) noexcept : value(other.value.load()) {}
    Counter& operator=(Counter&& other) noexcept {
      value.store(other.value.load());
      return *this;
    }
  };

  Var attention(Tape& tape, const Block& block, Var x) const;

  TransformerConfig config_;
  bool causal_;
  std::size_t positions_;
  Tensor* tok_emb_;
  Tensor* pos_emb_;
  std::vector<Block> blocks_;
  Tensor *lnf_g_, *lnf_b_, *head_w_, *head_b_;
  std::vector<std::vector<std::size_t>> q_cols_, k_cols_, v_cols_;
  mutable Counter counter_;
};

/// Causal next-token network f_theta. BOS is prepended internally, so the
/// input may be empty.
class CausalBackbone {
 public:
  CausalBackbone(ParamStore& params, const std::string& prefix, const TransformerConfig& config, Rng& init);

  const TransformerConfig& config() const noexcept { return net_.config(); }
  const Transformer& network() const noexcept { return net_; }

  // [(|x|+1) x V]. Row i < |x| predicts x[i] from BOS + x[0..i-1]; the last
  // row predicts what follows x (EOS for a complete sentence).
  Var logits(Tape& tape, std::span<const TokenId> x) const;

 private:
  Transformer net_;
};

/// Bidirectional encoder enc_theta with a token-logit head g_theta.
class BidirBackbone {
 public:
  BidirBackbone(ParamStore& params, const std::string& prefix, const TransformerConfig& config, Rng& init);

  const TransformerConfig& config() const noexcept { return net_.config(); }
  const Transformer& network() const noexcept { return net_; }

  // [|x| x d]
  Var hidden(Tape& tape, std::span<const TokenId> x) const;
  // [|x| x V]
  Var token_logits(Tape& tape, std::span<const TokenId> x) const;
  Var head(Tape& tape, Var hidden) const { return net_.head(tape, hidden); }

 private:
  Transformer net_;
};

Var causal_logits(const CausalBackbone& backbone, Tape& tape, std::span<const TokenId> x);
Var bidir_hidden(const BidirBackbone& backbone, Tape& tape, std::span<const TokenId> x);
Var bidir_token_logits(const BidirBackbone& backbone, Tape& tape, std::span<const TokenId> x);

// Copy of x with position i replaced by the MASK id.
TokenSeq mask_position(std::span<const TokenId> x, std::size_t i);

}  // namespace elm
