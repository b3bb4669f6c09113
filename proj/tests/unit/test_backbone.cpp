#include <doctest.h>

#include <cmath>

#include "elm/backbone.hpp"
#include "elm/error.hpp"
#include "../support/oracles.hpp"

using namespace elm;
using elm::testing::letters;
using elm::testing::tiny_transformer;

TEST_CASE("vocab reserved ids and round trip") {
  const Vocab v({"x", "y", "\xe4\xbd\xa0"});
  CHECK(v.size() == 7);
  CHECK(v.decode(Vocab::kPad) == "<pad>");
  CHECK(v.decode(Vocab::kBos) == "<s>");
  CHECK(v.decode(Vocab::kEos) == "</s>");
  CHECK(v.decode(Vocab::kMask) == "<mask>");
  for (TokenId id : v.regular_ids()) CHECK(v.encode(v.decode(id)) == id);
  const TokenSeq x = v.encode_text("xy\xe4\xbd\xa0x");
  CHECK(x.size() == 4);
  CHECK(v.decode_text(x) == "xy\xe4\xbd\xa0x");
  CHECK_THROWS_AS(v.encode_text("xz"), ParseError);
  CHECK(Vocab::deserialize(v.serialize()) == v);
  CHECK_THROWS_AS(Vocab::deserialize("a\nb\n"), ParseError);
}

TEST_CASE("vocab from text is sorted and distinct") {
  const std::vector<std::string> lines = {"ba", "ab", "c"};
  const Vocab v = Vocab::from_text(lines);
  CHECK(v.num_regular() == 3);
  CHECK(v.decode(Vocab::kFirstRegular) == "a");
  CHECK(v.decode(Vocab::kFirstRegular + 2) == "c");
}

TEST_CASE("causal logits shape, zero parameters, and length errors") {
  const Vocab v = letters(3);
  ParamStore ps;
  Rng init(1);
  CausalBackbone net(ps, "c", tiny_transformer(v, 4), init);
  const TokenSeq x = {4, 5, 6};
  {
    Tape t(false);
    Var l = causal_logits(net, t, x);
    CHECK(l.value().rows() == 4);
    CHECK(l.value().cols() == v.size());
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (double& d : ps.at(i).data()) d = 0.0;
  }
  Tape t(false);
  for (double d : causal_logits(net, t, x).value().data()) CHECK(d == 0.0);
  CHECK_THROWS_AS(causal_logits(net, t, TokenSeq{4, 4, 4, 4, 4}), LengthError);
  CHECK_THROWS_AS(causal_logits(net, t, TokenSeq{4, 99}), IndexError);
}

TEST_CASE("causal logits equal separate prefix forwards and respect causality") {
  const Vocab v = letters(3);
  ParamStore ps;
  Rng init(2);
  CausalBackbone net(ps, "c", tiny_transformer(v, 5, 8, 2), init);
  Rng r(3);
  testing::randomize(ps, r, 0.3);
  const TokenSeq x = {4, 6, 5, 5};
  Tape t(false);
  const Tensor full = causal_logits(net, t, x).value();
  for (std::size_t i = 0; i <= x.size(); ++i) {
    Tape tp(false);
    const TokenSeq prefix(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(i));
    const Tensor part = causal_logits(net, tp, prefix).value();
    for (std::size_t c = 0; c < v.size(); ++c) CHECK(part.at(i, c) == doctest::Approx(full.at(i, c)).epsilon(1e-12));
  }
  // Perturbing x[2] leaves rows 0..2 (which see at most x[0..1]) unchanged.
  TokenSeq y = x;
  y[2] = 4;
  const Tensor other = causal_logits(net, t, y).value();
  for (std::size_t i = 0; i <= 2; ++i) {
    for (std::size_t c = 0; c < v.size(); ++c) CHECK(other.at(i, c) == full.at(i, c));
  }
  bool changed = false;
  for (std::size_t c = 0; c < v.size(); ++c) changed = changed || other.at(3, c) != full.at(3, c);
  CHECK(changed);
}

TEST_CASE("causal gradient to later embeddings is zero") {
  const Vocab v = letters(3);
  ParamStore ps;
  Rng init(4);
  CausalBackbone net(ps, "c", tiny_transformer(v, 4), init);
  Rng r(5);
  testing::randomize(ps, r, 0.3);
  ps.set_requires_grad(true);
  ps.zero_grad();
  const TokenSeq x = {4, 5, 6};
  Tape t;
  Var logits = causal_logits(net, t, x);
  // Row 1 depends on BOS and x[0] = 'a' only; ids 5 and 6 must get no gradient.
  const std::vector<std::size_t> idx = {1 * v.size() + 4, 1 * v.size() + 6};
  t.backward(sum(gather(logits, idx)));
  const Tensor& emb = ps.get("c.tok_emb");
  const std::size_t d = emb.cols();
  for (std::size_t k = 0; k < d; ++k) {
    CHECK(emb.grad()[5 * d + k] == 0.0);
    CHECK(emb.grad()[6 * d + k] == 0.0);
  }
  double touched = 0.0;
  for (std::size_t k = 0; k < d; ++k) touched += std::abs(emb.grad()[4 * d + k]);
  CHECK(touched > 0.0);
}

TEST_CASE("bidirectional hidden states and logits") {
  const Vocab v = letters(3);
  ParamStore ps;
  Rng init(6);
  const TransformerConfig cfg = tiny_transformer(v, 4, 8);
  BidirBackbone net(ps, "b", cfg, init);
  Rng r(7);
  testing::randomize(ps, r, 0.3);
  const TokenSeq x = {4, 5, 6};
  Tape t(false);
  const Tensor h = bidir_hidden(net, t, x).value();
  CHECK(h.rows() == 3);
  CHECK(h.cols() == cfg.d_model);
  const Tensor g = bidir_token_logits(net, t, x).value();
  CHECK(g.rows() == 3);
  CHECK(g.cols() == v.size());
  // Swapping the last two tokens changes the hidden state at position 0.
  const Tensor h2 = bidir_hidden(net, t, TokenSeq{4, 6, 5}).value();
  bool changed = false;
  for (std::size_t k = 0; k < cfg.d_model; ++k) changed = changed || h2.at(0, k) != h.at(0, k);
  CHECK(changed);
  // Masking position 1 changes row 1.
  const Tensor gm = bidir_token_logits(net, t, mask_position(x, 1)).value();
  changed = false;
  for (std::size_t c = 0; c < v.size(); ++c) changed = changed || gm.at(1, c) != g.at(1, c);
  CHECK(changed);
  CHECK(mask_position(x, 1)[1] == Vocab::kMask);
}

TEST_CASE("zero-initialized bidirectional backbone depends on position only") {
  const Vocab v = letters(3);
  ParamStore ps;
  Rng init(8);
  BidirBackbone net(ps, "b", tiny_transformer(v, 4), init);
  Rng r(9);
  testing::randomize(ps, r, 0.3);
  for (double& d : ps.get("b.tok_emb").data()) d = 0.0;
  Tape t(false);
  const Tensor h1 = bidir_hidden(net, t, TokenSeq{4, 5, 6}).value();
  const Tensor h2 = bidir_hidden(net, t, TokenSeq{6, 6, 4}).value();
  for (std::size_t i = 0; i < h1.size(); ++i) CHECK(h1[i] == doctest::Approx(h2[i]).epsilon(1e-14));
  // Zero head weights give zero logits.
  for (double& d : ps.get("b.head.w").data()) d = 0.0;
  for (double& d : ps.get("b.head.b").data()) d = 0.0;
  for (double d : bidir_token_logits(net, t, TokenSeq{4, 5}).value().data()) CHECK(d == 0.0);
}

TEST_CASE("initialization follows the configured scheme") {
  const Vocab v = letters(20);
  ParamStore ps;
  Rng init(10);
  TransformerConfig cfg = tiny_transformer(v, 8, 32, 2, 4);
  CausalBackbone net(ps, "c", cfg, init);
  for (double d : ps.get("c.block0.ln1.g").data()) CHECK(d == 1.0);
  for (double d : ps.get("c.block1.ff.b1").data()) CHECK(d == 0.0);
  const Tensor& w = ps.get("c.block0.attn.w_qkv");
  double s = 0, s2 = 0;
  for (double d : w.data()) {
    s += d;
    s2 += d * d;
  }
  const double n = static_cast<double>(w.size());
  CHECK(std::abs(s / n) < 0.005);
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.02).epsilon(0.1));
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
