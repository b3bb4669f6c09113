#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "elm/error.hpp"
#include "elm/rescoring.hpp"
#include "elm/synthetic.hpp"
#include "../support/oracles.hpp"

using namespace elm;

namespace {

Hypothesis hyp(std::string text, double am, double lm = 0.0) {
  Hypothesis h;
  h.length = text.size();
  h.text = std::move(text);
  h.am_score = am;
  h.lm_score = lm;
  return h;
}

NBestList list(std::string utt, std::string ref, std::vector<Hypothesis> hyps) {
  return {std::move(utt), std::move(ref), std::move(hyps), false};
}

}  // namespace

TEST_CASE("combined score") {
  Hypothesis h = hyp("abcd", -5.0, -2.0);
  CHECK(combined_score(h, {0.0, 0.0}) == -5.0);
  CHECK(combined_score(h, {1.0, 0.0}) == -7.0);
  CHECK(combined_score(h, {0.5, 0.25}) == -5.0 - 1.0 + 1.0);
  h.lm_score = -std::numeric_limits<double>::infinity();
  CHECK(combined_score(h, {0.0, 1.0}) == -1.0);
  CHECK_THROWS_AS((InterpWeights{std::nan(""), 0.0}.validate()), ConfigError);
}

TEST_CASE("rescoring picks the combined argmax") {
  std::vector<NBestList> lists = {
      list("u1", "", {hyp("a", -1, -10), hyp("b", -2, -5), hyp("c", -3, -1), hyp("d", -4, -9)}),
      list("u2", "", {hyp("a", -1, -2), hyp("b", -1.5, -2), hyp("c", -2, -1), hyp("d", -8, 0)}),
      list("u3", "", {hyp("a", -3, -1), hyp("b", -1, -4), hyp("c", -2, -2), hyp("d", -2, -1)}),
  };
  const auto sel = rescore(lists, {1.0, 0.0});
  REQUIRE(sel.size() == 3);
  CHECK(sel[0].choice_index == 2);
  CHECK(sel[1].choice_index == 0);  // tie with index 2 goes to the earlier rank
  CHECK(sel[2].choice_index == 3);
  CHECK(sel[1].utt == "u2");

  const auto plain = rescore(lists, {0.0, 0.0});
  for (std::size_t i = 0; i < lists.size(); ++i) CHECK(plain[i].choice_index == first_pass_best(lists[i]));

  std::vector<NBestList> single = {list("s", "", {hyp("x", -100, -100)})};
  CHECK(rescore(single, {3.0, -2.0})[0].choice_index == 0);
  CHECK(rescore(single, {3.0, -2.0})[0].confidence == 1.0);
}

TEST_CASE("rescoring ranking matches brute-force recomputation and ignores lm shifts") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Hypothesis> hs;
    for (int i = 0; i < 6; ++i) hs.push_back(hyp(std::string(1 + i % 3, 'a'), n01(gen), n01(gen)));
    std::vector<NBestList> lists = {list("u", "", hs)};
    const InterpWeights w{std::abs(n01(gen)), n01(gen)};
    std::size_t best = 0;
    for (std::size_t i = 1; i < hs.size(); ++i) {
      const double ci = hs[i].am_score + w.alpha * hs[i].lm_score + w.beta * static_cast<double>(hs[i].length);
      const double cb = hs[best].am_score + w.alpha * hs[best].lm_score + w.beta * static_cast<double>(hs[best].length);
      if (ci > cb) best = i;
    }
    CHECK(rescore(lists, w)[0].choice_index == best);
    for (auto& h : lists[0].hyps) h.lm_score += 37.5;
    CHECK(rescore(lists, w)[0].choice_index == best);
  }
}

TEST_CASE("scorer failure falls back to the first-pass best") {
  std::vector<NBestList> lists = {
      list("ok", "", {hyp("a", -2), hyp("b", -1)}),
      list("bad", "", {hyp("a", -1), hyp("zz", -3)}),
  };
  LmScorer scorer = [](const Hypothesis& h) {
    if (h.text == "zz") throw DomainError("cannot score");
    return h.text == "a" ? 0.0 : -10.0;
  };
  const auto sel = rescore(lists, scorer, {1.0, 0.0});
  CHECK(sel[0].choice_index == 0);
  CHECK_FALSE(sel[0].fallback);
  CHECK(sel[1].choice_index == 0);
  CHECK(sel[1].fallback);
  CHECK(lists[1].scorer_failed);
}

TEST_CASE("weight tuning is the exhaustive argmin") {
  NBestSynthConfig cfg;
  cfg.am_noise = 1.5;
  Rng rng(5);
  const auto corpus = toy_corpus(40, rng);
  auto lists = synthesize_nbest(corpus, toy_grammar_alphabet(), cfg, rng);
  std::mt19937_64 gen(9);
  std::normal_distribution<double> n01;
  for (auto& l : lists) {
    for (auto& h : l.hyps) h.lm_score = (h.text == l.ref ? 2.0 : 0.0) + n01(gen);
  }
  const WeightGrid grid{{1.0, 0.0, 0.5, 2.0, 0.25}, {0.5, 0.0, -0.5}};
  const TuneResult best = tune_weights(lists, grid);
  double min_cer = std::numeric_limits<double>::infinity();
  InterpWeights expect;
  for (double a : grid.alphas) {
    for (double b : grid.betas) {
      auto copy = lists;
      const double c = selection_cer(copy, rescore(copy, InterpWeights{a, b})).rate;
      CHECK(best.dev_cer <= c);
      const bool better = c < min_cer ||
                          (c == min_cer && (std::abs(a) < std::abs(expect.alpha) ||
                                            (std::abs(a) == std::abs(expect.alpha) && std::abs(b) < std::abs(expect.beta))));
      if (better) {
        min_cer = c;
        expect = {a, b};
      }
    }
  }
  CHECK(best.dev_cer == min_cer);
  CHECK(best.weights.alpha == expect.alpha);
  CHECK(best.weights.beta == expect.beta);
  CHECK(best.weights.alpha > 0.0);

  const TuneResult single = tune_weights(lists, WeightGrid{{0.75}, {-0.25}});
  CHECK(single.weights.alpha == 0.75);
  CHECK(single.weights.beta == -0.25);
  CHECK_THROWS_AS(tune_weights(lists, WeightGrid{{}, {0.0}}), ConfigError);
}

TEST_CASE("character error rate") {
  CHECK(cer("abc", "abc").rate == 0.0);
  const CerResult r = cer("abc", "axc");
  CHECK(r.errors == 1);
  CHECK(r.rate == doctest::Approx(1.0 / 3));
  CHECK(cer("", "").rate == 0.0);
  CHECK(cer("", "ab").empty_reference);
  CHECK(std::isinf(cer("", "ab").rate));
  CHECK(edit_distance("日本語", "日文語") == 1);
  CHECK(cer("日本語", "日").ref_len == 3);

  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> len(0, 12), ch(0, 3);
  auto random_string = [&] {
    std::string s(static_cast<std::size_t>(len(gen)), 'a');
    for (char& c : s) c = static_cast<char>('a' + ch(gen));
    return s;
  };
  for (int i = 0; i < 1000; ++i) {
    const std::string a = random_string(), b = random_string(), c = random_string();
    const std::size_t d = testing::dp_distance(a, b);
    REQUIRE(edit_distance(a, b) == d);
    if (!a.empty()) CHECK(cer(a, b).rate == static_cast<double>(d) / static_cast<double>(a.size()));
    const double lhs = std::abs(static_cast<double>(edit_distance(a, c)) - static_cast<double>(edit_distance(a, b)));
    CHECK(lhs <= static_cast<double>(edit_distance(b, c)));
  }
}

TEST_CASE("corpus error rate pools counts") {
  CHECK(corpus_cer({"abcd", "abcdef"}, {"abxd", "abcdef"}).rate == doctest::Approx(0.1));
  CHECK(corpus_cer({"abc"}, {"axc"}).rate == cer("abc", "axc").rate);
  const std::vector<std::string> refs = {"abc", "", "hello", "xy", "q"};
  const std::vector<std::string> hyps = {"ab", "zz", "hallo", "yx", "q"};
  const CorpusCer c = corpus_cer(refs, hyps);
  std::size_t errors = 0, chars = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].empty()) continue;
    errors += testing::dp_distance(refs[i], hyps[i]);
    chars += refs[i].size();
  }
  CHECK(c.errors == errors);
  CHECK(c.ref_chars == chars);
  CHECK(c.empty_refs == 1);
  CHECK(c.empty_ref_insertions == 2);
  CHECK(c.rate == static_cast<double>(errors) / static_cast<double>(chars));
  const CorpusCer p = corpus_cer({"q", "xy", "hello", "", "abc"}, {"q", "yx", "hallo", "zz", "ab"});
  CHECK(p.rate == c.rate);
  CHECK_THROWS_AS(corpus_cer({"a"}, {}), ContractError);
}

TEST_CASE("matched-pair significance") {
  const std::vector<double> a = {1, 0, 2, 0, 1, 3, 0, 1};
  CHECK(matched_pair_test(a, a).p_value == 1.0);
  CHECK(matched_pair_test({1, 0, 1, 0}, {0, 1, 0, 1}).p_value == 1.0);

  std::mt19937_64 gen(4);
  std::poisson_distribution<int> pa(1.2), pb(1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x, y;
    for (int i = 0; i < 30; ++i) {
      x.push_back(pa(gen));
      y.push_back(pb(gen));
    }
    const SignificanceResult got = matched_pair_test(x, y), want = testing::pair_oracle(x, y);
    CHECK(std::abs(got.p_value - want.p_value) < 1e-10);
    CHECK(got.z == doctest::Approx(want.z).epsilon(1e-12));
    CHECK(got.n == 30);
    const SignificanceResult flipped = matched_pair_test(y, x);
    CHECK(flipped.z == doctest::Approx(-got.z).epsilon(1e-12));
    CHECK(flipped.p_value == got.p_value);
    CHECK(got.p_value >= 0.0);
    CHECK(got.p_value <= 1.0);
  }
  const SignificanceResult constant = matched_pair_test({2, 2, 2}, {1, 1, 1});
  CHECK(constant.p_value == 0.0);
  CHECK(constant.mean_diff == 1.0);
  CHECK_THROWS_AS(matched_pair_test({1, 2}, {1}), ContractError);
}

TEST_CASE("significance table layout") {
  SignificanceRow row;
  row.dataset = "toy";
  row.system_a = "nce";
  row.system_b = "dnce";
  row.test_sets = {"dev", "test"};
  row.results = {matched_pair_test({1, 0}, {1, 0}), matched_pair_test({2, 2, 2}, {1, 1, 1})};
  const std::string table = format_significance_table({row});
  CHECK(table.find("toy") != std::string::npos);
  CHECK(table.find("dev") != std::string::npos);
  CHECK(table.find("test") != std::string::npos);
  CHECK(table.find(" 1 ") != std::string::npos);
}

TEST_CASE("confidence of the selected hypothesis") {
  NBestList one = list("u", "", {hyp("a", -3)});
  CHECK(confidence_of_selection(one, {0, 0}, 0, 1.0) == 1.0);
  NBestList two = list("u", "", {hyp("a", -3), hyp("b", -3)});
  CHECK(confidence_of_selection(two, {0, 0}, 1, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  NBestList three = list("u", "", {hyp("a", -1, -2), hyp("bb", -2, -1), hyp("c", -4, 0)});
  const InterpWeights w{0.5, 0.1};
  const double c0 = -1 - 1 + 0.1, c1 = -2 - 0.5 + 0.2, c2 = -4 + 0.1;
  const double t = 2.0;
  const double z = std::exp(c0 / t) + std::exp(c1 / t) + std::exp(c2 / t);
  CHECK(confidence_of_selection(three, w, 1, t) == doctest::Approx(std::exp(c1 / t) / z).epsilon(1e-14));
}

TEST_CASE("precision-recall curve and average precision") {
  const PrCurve perfect = pr_curve_auc({0.9, 0.8, 0.3, 0.1}, {true, true, false, false});
  CHECK(perfect.auc == 1.0);
  const PrCurve all = pr_curve_auc({0.5, 0.2, 0.2, 0.9}, {true, true, true, true});
  CHECK(all.auc == 1.0);
  for (const auto& p : all.points) CHECK(p.precision == 1.0);
  CHECK(std::isnan(pr_curve_auc({0.5, 0.2}, {false, false}).auc));

  const std::vector<double> conf = {0.9, 0.7, 0.7, 0.4, 0.3, 0.1};
  const std::vector<bool> labels = {true, false, true, true, false, true};
  CHECK(pr_curve_auc(conf, labels).auc == doctest::Approx(testing::ap_oracle(conf, labels)).epsilon(1e-12));

  std::mt19937_64 gen(8);
  std::uniform_int_distribution<int> level(0, 9), size(1, 25);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> c;
    std::vector<bool> l;
    const int n = size(gen);
    for (int i = 0; i < n; ++i) {
      c.push_back(level(gen) / 10.0);
      l.push_back(coin(gen));
    }
    l[0] = true;
    const PrCurve curve = pr_curve_auc(c, l);
    CHECK(std::abs(curve.auc - testing::ap_oracle(c, l)) < 1e-12);
    double prev = 0.0;
    for (const auto& p : curve.points) {
      CHECK(p.recall >= prev);
      CHECK(p.precision >= 0.0);
      CHECK(p.precision <= 1.0);
      CHECK(p.recall <= 1.0);
      prev = p.recall;
    }
  }
  const std::string csv = pr_curve_csv(perfect);
  CHECK(csv.rfind("threshold,precision,recall\n", 0) == 0);
  CHECK_THROWS_AS(pr_curve_auc({0.1}, {true, false}), ContractError);
}

TEST_CASE("n-best and selection files") {
  const std::string text =
      "{\"utt\": \"u1\", \"ref\": \"ab\", \"hyps\": [{\"text\": \"ab\", \"am\": -1.5}, {\"text\": \"b\", \"am\": -2}]}\n"
      "\n"
      "{\"utt\": \"u2\", \"ref\": \"\", \"hyps\": [{\"text\": \"日本\", \"am\": 0}]}\n";
  const auto lists = parse_nbest_jsonl(text, "f.jsonl");
  REQUIRE(lists.size() == 2);
  CHECK(lists[0].hyps[1].am_score == -2.0);
  CHECK(lists[1].hyps[0].length == 2);
  CHECK(parse_nbest_jsonl(nbest_jsonl(lists)).size() == 2);
  CHECK(nbest_jsonl(parse_nbest_jsonl(nbest_jsonl(lists))) == nbest_jsonl(lists));

  CHECK_THROWS_AS(parse_nbest_jsonl("{\"utt\": \"u\", \"ref\": \"a\", \"hyps\": []}"), ParseError);
  CHECK_THROWS_AS(parse_nbest_jsonl("{\"utt\": \"u\", \"ref\": \"a\"}"), ParseError);
  CHECK_THROWS_AS(parse_nbest_jsonl("not json"), ParseError);
  const std::string dup = "{\"utt\": \"u\", \"ref\": \"a\", \"hyps\": [{\"text\": \"a\", \"am\": 0}]}\n";
  try {
    parse_nbest_jsonl(dup + dup, "dup.jsonl");
    FAIL("duplicate ids accepted");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("dup.jsonl:2") != std::string::npos);
  }

  std::vector<Selection> sel = {{"u1", 1, 0.25, false}, {"u2", 0, 1.0, true}};
  const std::string s = selections_jsonl(sel);
  const auto back = parse_selections_jsonl(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].choice_index == 1);
  CHECK(back[0].confidence == 0.25);
  CHECK(back[1].fallback);
  CHECK(s.find("fallback") == s.rfind("fallback"));
  CHECK(selected_texts(lists, sel) == std::vector<std::string>{"b", "日本"});
}
