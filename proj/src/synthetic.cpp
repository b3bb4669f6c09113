#include "elm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "elm/error.hpp"

namespace elm {

namespace {

struct Choice {
  const char* text;
  double weight;
};

// One position of the sentence. options[0] is used with a singular subject,
// options[1] with a plural one; slots without agreement repeat the list.
struct Slot {
  std::vector<Choice> options[2];
};

constexpr double kPlural = 0.4;

const std::vector<Slot>& slots() {
  static const std::vector<Slot> grammar = [] {
    const std::vector<Choice> adjective = {{"", 0.6}, {"ro", 0.2}, {"ne", 0.12}, {"ki", 0.08}};
    const std::vector<Choice> object = {{"re", 0.3}, {"si", 0.25}, {"to", 0.2}, {"pe", 0.15}, {"nu", 0.1}};
    const std::vector<Choice> adverb = {{"", 0.7}, {"ka", 0.2}, {"po", 0.1}};
    return std::vector<Slot>{
        {{adjective, adjective}},
        {{{{"ba", 0.35}, {"ko", 0.25}, {"te", 0.25}, {"lu", 0.15}},
          {{"bai", 0.35}, {"koi", 0.25}, {"tei", 0.25}, {"lui", 0.15}}}},
        {{{{"da", 0.45}, {"mu", 0.35}, {"so", 0.2}}, {{"dan", 0.45}, {"mun", 0.35}, {"son", 0.2}}}},
        {{object, object}},
        {{adverb, adverb}},
    };
  }();
  return grammar;
}

std::size_t pick(const std::vector<Choice>& options, Rng& rng) {
  std::vector<double> w;
  for (const auto& c : options) w.push_back(c.weight);
  return sample_categorical(rng, w);
}

void expand(int number, std::size_t slot, const std::string& prefix, double p,
            std::map<std::string, double>& out) {
  if (slot == slots().size()) {
    out[prefix] += p;
    return;
  }
  for (const auto& c : slots()[slot].options[number]) expand(number, slot + 1, prefix + c.text, p * c.weight, out);
}

const std::map<std::string, double>& distribution_map() {
  static const std::map<std::string, double> dist = [] {
    std::map<std::string, double> d;
    expand(0, 0, "", 1.0 - kPlural, d);
    expand(1, 0, "", kPlural, d);
    return d;
  }();
  return dist;
}

}  // namespace

std::vector<std::string> toy_grammar_alphabet() {
  std::set<std::string> chars;
  for (const auto& slot : slots()) {
    for (const auto& group : slot.options) {
      for (const auto& c : group) {
        for (const auto& ch : split_characters(c.text)) chars.insert(ch);
      }
    }
  }
  return {chars.begin(), chars.end()};
}

std::size_t toy_grammar_max_length() {
  std::size_t longest = 0;
  for (const auto& [s, p] : distribution_map()) longest = std::max(longest, split_characters(s).size());
  return longest;
}

std::vector<std::pair<std::string, double>> toy_grammar_distribution() {
  return {distribution_map().begin(), distribution_map().end()};
}

std::string toy_grammar_sample(Rng& rng) {
  const int number = uniform01(rng) < kPlural ? 1 : 0;
  std::string out;
  for (const auto& slot : slots()) out += slot.options[number][pick(slot.options[number], rng)].text;
  return out;
}

bool toy_grammar_accepts(const std::string& sentence) { return distribution_map().count(sentence) > 0; }

std::vector<std::string> toy_corpus(std::size_t n, Rng& rng) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(toy_grammar_sample(rng));
  return out;
}

std::vector<NBestList> synthesize_nbest(const std::vector<std::string>& refs, const std::vector<std::string>& alphabet,
                                        const NBestSynthConfig& config, Rng& rng, const std::string& prefix) {
  if (alphabet.empty()) throw ConfigError("n-best synthesis needs a non-empty alphabet");
  if (config.hyps_per_utt == 0 || config.max_edits == 0) throw ConfigError("hyps_per_utt and max_edits must be >= 1");
  std::vector<NBestList> lists;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    NBestList list;
    list.utt = prefix + std::to_string(u);
    list.ref = refs[u];
    const auto ref_chars = split_characters(refs[u]);
    std::set<std::vector<std::string>> seen;
    std::vector<std::pair<std::vector<std::string>, std::size_t>> candidates;
    if (uniform01(rng) < config.keep_reference) {
      seen.insert(ref_chars);
      candidates.emplace_back(ref_chars, 0);
    }
    std::size_t attempts = 0;
    while (candidates.size() < config.hyps_per_utt && attempts++ < 50 * config.hyps_per_utt) {
      std::vector<std::string> c = ref_chars;
      const std::size_t edits = 1 + uniform_index(rng, config.max_edits);
      for (std::size_t e = 0; e < edits; ++e) {
        const std::size_t kind = uniform_index(rng, 3);
        if (kind == 0 && !c.empty()) {
          c[uniform_index(rng, c.size())] = alphabet[uniform_index(rng, alphabet.size())];
        } else if (kind == 1) {
          c.insert(c.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, c.size() + 1)),
                   alphabet[uniform_index(rng, alphabet.size())]);
        } else if (!c.empty()) {
          c.erase(c.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, c.size())));
        }
      }
      if (c.empty() || c.size() > config.max_len || !seen.insert(c).second) continue;
      std::string text;
      for (const auto& ch : c) text += ch;
      candidates.emplace_back(std::move(c), edit_distance(refs[u], text));
    }
    if (candidates.empty()) {
      // Every edit was rejected; the reference is then the only hypothesis.
      if (ref_chars.empty() || ref_chars.size() > config.max_len) {
        throw LengthError("cannot synthesize hypotheses for reference " + std::to_string(u));
      }
      candidates.emplace_back(ref_chars, 0);
    }
    for (const auto& [chars, dist] : candidates) {
      Hypothesis h;
      for (const auto& ch : chars) h.text += ch;
      h.length = chars.size();
      h.am_score = -config.edit_penalty * static_cast<double>(dist) + config.am_noise * standard_normal(rng);
      list.hyps.push_back(std::move(h));
    }
    std::stable_sort(list.hyps.begin(), list.hyps.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.am_score > b.am_score; });
    lists.push_back(std::move(list));
  }
  return lists;
}

}  // namespace elm
