#pragma once

// Sentence-level BLEU-4 and ROUGE-L over lowercased whitespace tokens.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ragtrace/text.hpp"

namespace ragtrace {

using Tokens = std::vector<std::string>;

namespace detail {

inline std::map<Tokens, int> ngram_counts(const Tokens& toks, std::size_t n) {
  std::map<Tokens, int> counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++counts[Tokens(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace detail

/// BLEU with uniform weights up to `max_order`, clipped counts, no smoothing.
/// Orders for which the candidate has no n-grams are left out of the
/// geometric mean (effective order), so short identical sentences score 1.
inline double bleu(const Tokens& candidate, const Tokens& reference, std::size_t max_order = 4) {
  if (candidate.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    if (candidate.size() < n) break;
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    int matched = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    if (matched == 0) return 0.0;
    const auto total = static_cast<double>(candidate.size() - n + 1);
    log_sum += std::log(static_cast<double>(matched) / total);
    ++orders;
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l_f1(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

/// 0.5 * BLEU-4 + 0.5 * ROUGE-L F1 on lowercased whitespace tokens.
inline double correctness(std::string_view answer_text, std::string_view ground_truth) {
  const auto cand = text::lowercase_words(answer_text);
  const auto ref = text::lowercase_words(ground_truth);
  if (cand.empty() || ref.empty()) return 0.0;
  return std::clamp(0.5 * bleu(cand, ref) + 0.5 * rouge_l_f1(cand, ref), 0.0, 1.0);
}

}  // namespace ragtrace
