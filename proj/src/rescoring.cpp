#include "elm/rescoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "elm/energy.hpp"
#include "elm/error.hpp"
#include "elm/io.hpp"
#include "elm/proposal.hpp"

namespace elm {

using json = nlohmann::json;

void InterpWeights::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw ConfigError("interpolation weights must be finite");
}

double combined_score(const Hypothesis& h, const InterpWeights& w) {
  double s = h.am_score + w.beta * static_cast<double>(h.length);
  if (w.alpha != 0.0) s += w.alpha * h.lm_score;
  return s;
}

LmScorer energy_scorer(const EnergyModel& model) {
  return [&model](const Hypothesis& h) {
    TokenSeq x = h.tokens;
    if (x.empty()) x = model.vocab().encode_text(h.text);
    if (!x.empty()) model.check_sequence(x);
    return model.log_unnormalized(x);
  };
}

LmScorer alm_scorer(const AutoregressiveLM& model) {
  return [&model](const Hypothesis& h) {
    TokenSeq x = h.tokens;
    if (x.empty()) x = model.vocab().encode_text(h.text);
    return model.log_prob(x);
  };
}

void tokenize(std::vector<NBestList>& lists, const Vocab* vocab) {
  for (auto& list : lists) {
    for (auto& h : list.hyps) {
      h.length = split_characters(h.text).size();
      h.tokens.clear();
      if (!vocab) continue;
      try {
        h.tokens = vocab->encode_text(h.text);
      } catch (const ParseError&) {
        h.tokens.clear();
      }
    }
  }
}

void score_lists(std::vector<NBestList>& lists, const LmScorer& scorer) {
  for (auto& list : lists) {
    list.scorer_failed = false;
    for (auto& h : list.hyps) {
      try {
        h.lm_score = scorer(h);
      } catch (const std::exception&) {
        h.lm_score = 0.0;
        list.scorer_failed = true;
      }
    }
  }
}

std::size_t first_pass_best(const NBestList& list) {
  if (list.hyps.empty()) throw ContractError("n-best list '" + list.utt + "' has no hypotheses");
  std::size_t best = 0;
  for (std::size_t i = 1; i < list.hyps.size(); ++i) {
    if (list.hyps[i].am_score > list.hyps[best].am_score) best = i;
  }
  return best;
}

std::size_t select_hypothesis(NBestList& list, const InterpWeights& w) {
  if (list.hyps.empty()) throw ContractError("n-best list '" + list.utt + "' has no hypotheses");
  for (auto& h : list.hyps) h.combined = combined_score(h, w);
  if (list.scorer_failed) return first_pass_best(list);
  std::size_t best = 0;
  for (std::size_t i = 1; i < list.hyps.size(); ++i) {
    if (list.hyps[i].combined > list.hyps[best].combined) best = i;
  }
  return best;
}

double confidence_of_selection(const NBestList& list, const InterpWeights& w, std::size_t index,
                               double temperature) {
  if (index >= list.hyps.size()) throw IndexError("selected hypothesis index out of range");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  std::vector<double> s;
  s.reserve(list.hyps.size());
  for (const auto& h : list.hyps) s.push_back(combined_score(h, w) / temperature);
  const double mx = *std::max_element(s.begin(), s.end());
  if (mx == -std::numeric_limits<double>::infinity()) return 1.0 / static_cast<double>(s.size());
  double total = 0.0;
  for (double v : s) total += std::exp(v - mx);
  return std::exp(s[index] - mx) / total;
}

std::vector<Selection> rescore(std::vector<NBestList>& lists, const InterpWeights& w, double temperature) {
  w.validate();
  std::vector<Selection> out;
  out.reserve(lists.size());
  for (auto& list : lists) {
    Selection sel;
    sel.utt = list.utt;
    sel.choice_index = select_hypothesis(list, w);
    sel.fallback = list.scorer_failed;
    sel.confidence = list.scorer_failed ? confidence_of_selection(list, InterpWeights{}, sel.choice_index, temperature)
                                        : confidence_of_selection(list, w, sel.choice_index, temperature);
    out.push_back(std::move(sel));
  }
  return out;
}

std::vector<Selection> rescore(std::vector<NBestList>& lists, const LmScorer& scorer, const InterpWeights& w,
                               double temperature) {
  score_lists(lists, scorer);
  return rescore(lists, w, temperature);
}

TuneResult tune_weights(std::vector<NBestList>& dev_lists, const WeightGrid& grid) {
  if (grid.alphas.empty() || grid.betas.empty()) throw ConfigError("weight grid must have at least one point");
  bool have = false;
  TuneResult best;
  for (double a : grid.alphas) {
    for (double b : grid.betas) {
      InterpWeights w{a, b};
      w.validate();
      std::vector<Selection> sel;
      sel.reserve(dev_lists.size());
      for (auto& list : dev_lists) sel.push_back({list.utt, select_hypothesis(list, w), 1.0, list.scorer_failed});
      const double rate = selection_cer(dev_lists, sel).rate;
      bool better = !have || rate < best.dev_cer;
      if (have && rate == best.dev_cer) {
        const double da = std::abs(a), db = std::abs(best.weights.alpha);
        better = da < db || (da == db && std::abs(b) < std::abs(best.weights.beta));
      }
      if (better) {
        best = {w, rate};
        have = true;
      }
    }
  }
  return best;
}

TuneResult tune_weights(std::vector<NBestList>& dev_lists, const LmScorer& scorer, const WeightGrid& grid) {
  score_lists(dev_lists, scorer);
  return tune_weights(dev_lists, grid);
}

// ---------------------------------------------------------------------------

std::size_t edit_distance(const std::string& a, const std::string& b) {
  const auto x = split_characters(a);
  const auto y = split_characters(b);
  std::vector<std::size_t> row(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({up + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[y.size()];
}

CerResult cer(const std::string& ref, const std::string& hyp) {
  CerResult r;
  r.errors = edit_distance(ref, hyp);
  r.ref_len = split_characters(ref).size();
  r.empty_reference = r.ref_len == 0;
  if (r.empty_reference) {
    r.rate = r.errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    r.rate = static_cast<double>(r.errors) / static_cast<double>(r.ref_len);
  }
  return r;
}

CorpusCer corpus_cer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw ContractError("corpus_cer needs one hypothesis per reference");
  CorpusCer c;
  c.utterances = refs.size();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const CerResult r = cer(refs[i], hyps[i]);
    if (r.empty_reference) {
      ++c.empty_refs;
      c.empty_ref_insertions += r.errors;
      continue;
    }
    c.errors += r.errors;
    c.ref_chars += r.ref_len;
  }
  c.rate = c.ref_chars == 0 ? 0.0 : static_cast<double>(c.errors) / static_cast<double>(c.ref_chars);
  return c;
}

namespace {

std::vector<const NBestList*> align(const std::vector<NBestList>& lists, const std::vector<Selection>& selections) {
  std::map<std::string, const NBestList*> by_utt;
  for (const auto& l : lists) by_utt[l.utt] = &l;
  std::vector<const NBestList*> out;
  out.reserve(selections.size());
  for (const auto& s : selections) {
    auto it = by_utt.find(s.utt);
    if (it == by_utt.end()) throw ContractError("selection for unknown utterance '" + s.utt + "'");
    if (s.choice_index >= it->second->hyps.size()) {
      throw IndexError("choice_index " + std::to_string(s.choice_index) + " out of range for utterance '" + s.utt +
                       "'");
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::vector<std::string> selected_texts(const std::vector<NBestList>& lists, const std::vector<Selection>& selections) {
  const auto matched = align(lists, selections);
  std::vector<std::string> out;
  out.reserve(selections.size());
  for (std::size_t i = 0; i < selections.size(); ++i) out.push_back(matched[i]->hyps[selections[i].choice_index].text);
  return out;
}

CorpusCer selection_cer(const std::vector<NBestList>& lists, const std::vector<Selection>& selections) {
  const auto matched = align(lists, selections);
  std::vector<std::string> refs, hyps;
  for (std::size_t i = 0; i < selections.size(); ++i) {
    refs.push_back(matched[i]->ref);
    hyps.push_back(matched[i]->hyps[selections[i].choice_index].text);
  }
  return corpus_cer(refs, hyps);
}

std::vector<double> per_utterance_errors(const std::vector<NBestList>& lists,
                                         const std::vector<Selection>& selections) {
  const auto matched = align(lists, selections);
  std::vector<double> out;
  for (std::size_t i = 0; i < selections.size(); ++i) {
    out.push_back(static_cast<double>(edit_distance(matched[i]->ref, matched[i]->hyps[selections[i].choice_index].text)));
  }
  return out;
}

// ---------------------------------------------------------------------------

SignificanceResult matched_pair_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("matched-pair test needs aligned error vectors of equal length");
  SignificanceResult r;
  r.n = a.size();
  if (r.n == 0) throw ContractError("matched-pair test needs at least one utterance");
  std::vector<double> d(r.n);
  bool all_zero = true;
  for (std::size_t i = 0; i < r.n; ++i) {
    d[i] = a[i] - b[i];
    if (!std::isfinite(d[i])) throw DomainError("non-finite error count");
    all_zero = all_zero && d[i] == 0.0;
  }
  if (all_zero) return r;  // mean 0, z 0, p exactly 1
  if (r.n < 2) throw ContractError("matched-pair test needs at least two utterances when the systems differ");
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(r.n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  r.mean_diff = mean;
  if (sd == 0.0) {
    r.z = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    return r;
  }
  r.z = mean / (sd / std::sqrt(static_cast<double>(r.n)));
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

std::string format_significance_table(const std::vector<SignificanceRow>& rows) {
  std::vector<std::string> sets;
  for (const auto& row : rows) {
    if (row.test_sets.size() != row.results.size()) throw ContractError("one result per test set required");
    for (const auto& s : row.test_sets) {
      if (std::find(sets.begin(), sets.end(), s) == sets.end()) sets.push_back(s);
    }
  }
  std::size_t wd = 7, wp = 11;
  for (const auto& row : rows) {
    wd = std::max(wd, row.dataset.size());
    wp = std::max({wp, row.system_a.size(), row.system_b.size()});
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  std::ostringstream out;
  out << pad("Dataset", wd) << " | " << pad("Model pairs", wp) << " | p-value\n";
  out << pad("", wd) << " | " << pad("", wp) << " |";
  for (const auto& s : sets) out << ' ' << pad(s, 12);
  out << '\n';
  const std::string rule(wd + wp + 6 + 13 * sets.size(), '-');
  out << rule << '\n';
  for (const auto& row : rows) {
    out << pad(row.dataset, wd) << " | " << pad(row.system_a, wp) << " |";
    for (const auto& s : sets) {
      std::string cell = "-";
      for (std::size_t i = 0; i < row.test_sets.size(); ++i) {
        if (row.test_sets[i] != s) continue;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", row.results[i].p_value);
        cell = buf;
      }
      out << ' ' << pad(cell, 12);
    }
    out << '\n' << pad("", wd) << " | " << pad(row.system_b, wp) << " |\n" << rule << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

PrCurve pr_curve_auc(const std::vector<double>& confidences, const std::vector<bool>& labels) {
  if (confidences.size() != labels.size()) throw ContractError("one label per confidence required");
  std::vector<std::size_t> order(confidences.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (std::isnan(confidences[i])) throw DomainError("confidence is NaN");
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return confidences[x] > confidences[y]; });
  std::size_t positives = 0;
  for (bool l : labels) positives += l ? 1 : 0;
  PrCurve curve;
  if (positives == 0) {
    curve.auc = std::numeric_limits<double>::quiet_NaN();
    return curve;
  }
  std::size_t tp = 0, seen = 0;
  double prev_recall = 0.0, ap = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = confidences[order[k]];
    while (k < order.size() && confidences[order[k]] == t) {
      tp += labels[order[k]] ? 1 : 0;
      ++seen;
      ++k;
    }
    PrPoint pt{t, static_cast<double>(tp) / static_cast<double>(seen),
               static_cast<double>(tp) / static_cast<double>(positives)};
    ap += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
    curve.points.push_back(pt);
  }
  curve.auc = ap;
  return curve;
}

std::string pr_curve_csv(const PrCurve& curve) {
  std::string out = "threshold,precision,recall\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.precision, p.recall);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void bad_record(const std::string& source, std::size_t line, const std::string& what) {
  throw ParseError(source + ":" + std::to_string(line) + ": " + what);
}

template <class Fn>
void for_each_line(const std::string& text, Fn fn) {
  std::size_t line = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line;
    std::string s = text.substr(pos, end - pos);
    if (!s.empty() && s.back() == '\r') s.pop_back();
    pos = end + 1;
    if (s.find_first_not_of(" \t") == std::string::npos) continue;
    fn(line, s);
  }
}

}  // namespace

std::vector<NBestList> parse_nbest_jsonl(const std::string& text, const std::string& source) {
  std::vector<NBestList> lists;
  std::set<std::string> ids;
  for_each_line(text, [&](std::size_t line, const std::string& s) {
    json j;
    try {
      j = json::parse(s);
    } catch (const json::exception& e) {
      bad_record(source, line, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("utt") || !j["utt"].is_string() || !j.contains("ref") ||
        !j["ref"].is_string() || !j.contains("hyps") || !j["hyps"].is_array()) {
      bad_record(source, line, "expected {\"utt\": str, \"ref\": str, \"hyps\": [...]}");
    }
    NBestList list;
    list.utt = j["utt"].get<std::string>();
    list.ref = j["ref"].get<std::string>();
    if (!ids.insert(list.utt).second) bad_record(source, line, "duplicate utterance id '" + list.utt + "'");
    for (const auto& h : j["hyps"]) {
      if (!h.is_object() || !h.contains("text") || !h["text"].is_string() || !h.contains("am") ||
          !h["am"].is_number()) {
        bad_record(source, line, "hypothesis must be {\"text\": str, \"am\": number}");
      }
      Hypothesis hyp;
      hyp.text = h["text"].get<std::string>();
      hyp.am_score = h["am"].get<double>();
      if (!std::isfinite(hyp.am_score)) bad_record(source, line, "am score is not finite");
      hyp.length = split_characters(hyp.text).size();
      list.hyps.push_back(std::move(hyp));
    }
    if (list.hyps.empty()) bad_record(source, line, "utterance '" + list.utt + "' has no hypotheses");
    lists.push_back(std::move(list));
  });
  return lists;
}

std::vector<NBestList> read_nbest_jsonl(const std::string& path) { return parse_nbest_jsonl(read_text_file(path), path); }

std::string nbest_jsonl(const std::vector<NBestList>& lists) {
  std::string out;
  for (const auto& l : lists) {
    json j;
    j["utt"] = l.utt;
    j["ref"] = l.ref;
    j["hyps"] = json::array();
    for (const auto& h : l.hyps) j["hyps"].push_back({{"text", h.text}, {"am", h.am_score}});
    out += j.dump() + "\n";
  }
  return out;
}

std::string selections_jsonl(const std::vector<Selection>& selections) {
  std::string out;
  for (const auto& s : selections) {
    json j;
    j["utt"] = s.utt;
    j["choice_index"] = s.choice_index;
    j["confidence"] = s.confidence;
    if (s.fallback) j["fallback"] = true;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Selection> parse_selections_jsonl(const std::string& text, const std::string& source) {
  std::vector<Selection> out;
  for_each_line(text, [&](std::size_t line, const std::string& s) {
    json j;
    try {
      j = json::parse(s);
    } catch (const json::exception& e) {
      bad_record(source, line, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("utt") || !j["utt"].is_string() || !j.contains("choice_index") ||
        !j["choice_index"].is_number_unsigned() || !j.contains("confidence") || !j["confidence"].is_number()) {
      bad_record(source, line, "expected {\"utt\": str, \"choice_index\": uint, \"confidence\": number}");
    }
    Selection sel;
    sel.utt = j["utt"].get<std::string>();
    sel.choice_index = j["choice_index"].get<std::size_t>();
    sel.confidence = j["confidence"].get<double>();
    sel.fallback = j.value("fallback", false);
    out.push_back(std::move(sel));
  });
  return out;
}

std::vector<Selection> read_selections_jsonl(const std::string& path) {
  return parse_selections_jsonl(read_text_file(path), path);
}

}  // namespace elm
