#pragma once

// Reference named-entity extractor: maximal runs of capitalized tokens.
//
// A sentence-initial token is capitalized by convention, so it is dropped from
// the front of a run when it is a function word or appears lowercased
// somewhere in the text set ("The", "After"); otherwise it stays ("Tom").

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ragtrace/text.hpp"

namespace ragtrace {

struct EntityMention {
  std::string entity;  // lowercased, single-space joined
  text::Span span;     // byte range of the surface form in the source text
};

struct WeightedEntity {
  std::string entity;
  double weight = 0.0;
  int tf = 0;
  int df = 0;

  friend bool operator==(const WeightedEntity&, const WeightedEntity&) = default;
};

namespace detail {

inline const std::unordered_set<std::string>& function_words() {
  static const std::unordered_set<std::string> words = {
      "a",       "an",      "the",     "this",   "that",    "these",  "those",  "it",     "its",   "he",
      "she",     "they",    "we",      "i",      "you",     "there",  "here",   "in",     "on",    "at",
      "of",      "for",     "with",    "by",     "from",    "to",     "and",    "but",    "or",    "if",
      "when",    "while",   "after",   "before", "as",      "what",   "which",  "who",    "whom",  "whose",
      "where",   "why",     "how",     "is",     "are",     "was",    "were",   "be",     "been",  "do",
      "does",    "did",     "not",     "no",     "yes",     "some",   "many",   "most",   "all",   "each",
      "every",   "one",     "his",     "her",    "their",   "our",    "my",     "your",   "then",  "so",
      "also",    "however", "because", "although", "though", "since", "until",  "both",   "either",
      "neither", "such",    "other",   "another", "more",   "less",   "can",    "could",  "will",  "would",
      "should",  "may",     "might",   "must",   "shall",   "during", "into",   "over",   "under", "about",
      "perhaps", "possibly", "yet",    "thus",   "hence",   "therefore", "meanwhile", "later", "first", "finally"};
  return words;
}

struct CoreToken {
  std::string_view core;  // token without surrounding punctuation
  std::size_t offset = 0;
  bool capitalized = false;
  bool sentence_initial = false;
  bool breaks_before = false;  // leading punctuation
  bool breaks_after = false;   // trailing punctuation
};

inline std::vector<CoreToken> core_tokens(std::string_view s) {
  std::vector<CoreToken> out;
  bool next_initial = true;
  for (const auto& t : text::tokenize(s)) {
    std::string_view w = t.text;
    std::size_t off = t.offset;
    CoreToken ct;
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.front()))) {
      w.remove_prefix(1);
      ++off;
      ct.breaks_before = true;
    }
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) {
      w.remove_suffix(1);
      ct.breaks_after = true;
    }
    ct.core = w;
    ct.offset = off;
    ct.capitalized = !w.empty() && std::isupper(static_cast<unsigned char>(w.front()));
    ct.sentence_initial = next_initial;
    const char last = t.text.back();
    next_initial = text::is_terminal(last) ||
                   (t.text.size() >= 2 && (last == '"' || last == '\'' || last == ')') &&
                    text::is_terminal(t.text[t.text.size() - 2]));
    out.push_back(ct);
  }
  return out;
}

}  // namespace detail

/// Lowercase word forms appearing in lowercase anywhere in the texts.
inline std::unordered_set<std::string> lowercase_vocabulary(const std::vector<std::string>& texts) {
  std::unordered_set<std::string> vocab;
  for (const auto& t : texts) {
    for (const auto& ct : detail::core_tokens(t)) {
      if (!ct.core.empty() && std::islower(static_cast<unsigned char>(ct.core.front())))
        vocab.insert(text::lowercase(ct.core));
    }
  }
  return vocab;
}

/// Entity mentions in one text, in order.
inline std::vector<EntityMention> find_entity_mentions(std::string_view s,
                                                       const std::unordered_set<std::string>& lowercase_vocab) {
  std::vector<EntityMention> out;
  const auto toks = detail::core_tokens(s);
  const auto& fw = detail::function_words();
  std::size_t i = 0;
  while (i < toks.size()) {
    if (!toks[i].capitalized) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (!toks[i].breaks_after) {
      while (j < toks.size() && toks[j].capitalized && !toks[j].breaks_before && !toks[j].sentence_initial) {
        ++j;
        if (toks[j - 1].breaks_after) break;
      }
    }
    std::size_t first = i;
    if (toks[first].sentence_initial) {
      const auto lower = text::lowercase(toks[first].core);
      if (fw.count(lower) > 0 || lowercase_vocab.count(lower) > 0) ++first;
    }
    // "I" is never an entity.
    while (first < j && toks[first].core == "I") ++first;
    if (first < j) {
      std::string name;
      for (std::size_t k = first; k < j; ++k) {
        if (k > first) name.push_back(' ');
        name += text::lowercase(toks[k].core);
      }
      const std::size_t start = toks[first].offset;
      const std::size_t end = toks[j - 1].offset + toks[j - 1].core.size();
      out.push_back({std::move(name), {start, end}});
    }
    i = j;
  }
  return out;
}

inline std::vector<EntityMention> find_entity_mentions(std::string_view s) {
  return find_entity_mentions(s, lowercase_vocabulary({std::string(s)}));
}

/// Distinct entities of one text, in order of first mention.
inline std::vector<std::string> entity_names(std::string_view s) {
  std::vector<std::string> out;
  for (auto& m : find_entity_mentions(s)) {
    if (std::find(out.begin(), out.end(), m.entity) == out.end()) out.push_back(std::move(m.entity));
  }
  return out;
}

/// Entities across the text set with w(e) = tf(e) * ln(N / (1 + df(e))) + tf(e),
/// where tf counts every mention and df counts texts mentioning e. Sorted by
/// weight descending, then entity.
inline std::vector<WeightedEntity> extract_entities(const std::vector<std::string>& texts) {
  const auto vocab = lowercase_vocabulary(texts);
  std::map<std::string, std::pair<int, int>> stats;  // entity -> (tf, df)
  for (const auto& t : texts) {
    std::set<std::string> seen;
    for (const auto& m : find_entity_mentions(t, vocab)) {
      auto& [tf, df] = stats[m.entity];
      ++tf;
      if (seen.insert(m.entity).second) ++df;
    }
  }
  const auto n = static_cast<double>(texts.size());
  std::vector<WeightedEntity> out;
  for (const auto& [e, s] : stats) {
    const double tf = s.first;
    out.push_back({e, tf * std::log(n / (1.0 + s.second)) + tf, s.first, s.second});
  }
  std::sort(out.begin(), out.end(), [](const WeightedEntity& a, const WeightedEntity& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.entity < b.entity;
  });
  return out;
}

}  // namespace ragtrace
