#pragma once

// Deterministic backend: every answer is a pure function of the request, so
// runs are reproducible across processes and machines (golden files).
//
// Embeddings are L2-normalized vectors of D uniform values seeded by the
// 64-bit FNV-1a hash of the text. Texts sharing a prefix or words are no more
// similar than any other pair; test corpora must be crafted with that in mind.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ragtrace/gateway.hpp"

namespace ragtrace {

inline Embedding mock_embedding(std::string_view text, std::size_t dimension) {
  std::uint64_t state = fnv1a64(text);
  Embedding v(dimension);
  double norm2 = 0.0;
  for (auto& x : v) {
    const double u = 2.0 * unit_double(splitmix64(state)) - 1.0;
    x = static_cast<float>(u);
    norm2 += static_cast<double>(x) * static_cast<double>(x);
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x = static_cast<float>(static_cast<double>(x) * inv);
  return v;
}

inline constexpr std::array<std::string_view, 5> kHedgeWords = {"might", "possibly", "unclear", "perhaps",
                                                                "may"};

/// Fraction of hedge words among punctuation-split tokens.
inline double hedge_fraction(std::string_view answer) {
  const auto toks = text::punct_split_words(answer);
  if (toks.empty()) return 0.0;
  std::size_t hedges = 0;
  for (const auto& t : toks) {
    const auto w = text::lowercase(t);
    if (std::find(kHedgeWords.begin(), kHedgeWords.end(), w) != kHedgeWords.end()) ++hedges;
  }
  return clamp_unit(static_cast<double>(hedges) / static_cast<double>(toks.size()));
}

struct MockOptions {
  std::size_t dimension = 64;
  /// false: completions carry no token probabilities; the model answers the
  /// self-report appendix with "Confidence: N" instead.
  bool logprobs = true;
  /// Any request whose inputs contain one of these substrings fails with
  /// GatewayError.
  std::vector<std::string> fail_when_contains;
  std::optional<double> forced_uncertainty;
  std::optional<double> forced_support;
  /// Extra synonyms per (lowercased) entity, added to the "<entity>_syn" rule.
  std::map<std::string, std::set<std::string>> synonyms;
};

class MockGateway final : public Gateway {
 public:
  explicit MockGateway(MockOptions opts = {}, GatewayConfig cfg = {})
      : Gateway(with_no_backoff(std::move(cfg))), opts_(std::move(opts)) {}

  std::string id() const override { return "mock-hash-d" + std::to_string(opts_.dimension); }

  const MockOptions& options() const { return opts_; }

  /// Deterministic per-token probabilities for a prompt; their geometric mean
  /// is the reported confidence.
  static std::vector<double> token_probabilities(std::string_view prompt, std::size_t tokens) {
    std::uint64_t state = fnv1a64(prompt);
    std::vector<double> p(std::max<std::size_t>(tokens, 1));
    for (auto& x : p) x = 0.55 + 0.45 * unit_double(splitmix64(state));
    return p;
  }

  static std::string hypothetical_text(std::string_view question) {
    return "A passage answering the question: " + std::string(text::trim(question));
  }

  static std::string paraphrase_text(std::string_view question, int variant) {
    return std::string(text::trim(question)) + " (rephrased " + std::to_string(variant) + ")";
  }

 protected:
  std::vector<Embedding> do_embed(const std::vector<std::string>& texts) override {
    for (const auto& t : texts) check_failure(t);
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(mock_embedding(t, opts_.dimension));
    return out;
  }

  Completion do_complete(const CompletionRequest& req) override {
    check_failure(req.prompt);
    Completion c;
    if (req.kind == CompletionRequest::Kind::Hypothetical || req.context.empty()) {
      c.text = hypothetical_text(req.question);
    } else {
      // Answer with the first sentence of the top context chunk, cited.
      const Chunk& top = req.context.front();
      const auto sents = text::sentences(top.text);
      std::string first = sents.empty() ? top.text : sents.front();
      while (!first.empty() && text::is_terminal(first.back())) first.pop_back();
      c.text = first + " [chunk:" + top.id + "].";
    }
    const auto probs = token_probabilities(req.prompt, text::words(c.text).size());
    if (opts_.logprobs && !req.self_report_confidence) {
      c.token_probs = probs;
    } else if (req.self_report_confidence) {
      const long pct = std::lround(100.0 * aggregate_confidence(probs));
      c.text += "\nConfidence: " + std::to_string(pct);
    }
    c.usage.prompt_tokens = static_cast<int>(text::words(req.prompt).size());
    c.usage.completion_tokens = static_cast<int>(text::words(c.text).size());
    return c;
  }

  std::vector<std::string> do_paraphrase(std::string_view question, int count) override {
    check_failure(question);
    std::vector<std::string> out;
    for (int i = 1; i <= count; ++i) out.push_back(paraphrase_text(question, i));
    return out;
  }

  JudgeVerdict do_judge_uncertainty(std::string_view answer) override {
    check_failure(answer);
    if (opts_.forced_uncertainty) return {*opts_.forced_uncertainty, "forced"};
    return {hedge_fraction(answer), "hedge-word fraction"};
  }

  JudgeVerdict do_judge_fact_support(std::string_view claim, std::span<const Chunk> evidence) override {
    check_failure(claim);
    if (opts_.forced_support) return {*opts_.forced_support, "forced"};
    const std::string needle = text::lowercase(text::trim(claim));
    for (const auto& c : evidence) {
      if (text::lowercase(c.text).find(needle) != std::string::npos) return {1.0, "verbatim in " + c.id};
    }
    return {0.0, "not found in evidence"};
  }

  EntityExpansion do_expand_entity(std::string_view entity, std::string_view context) override {
    check_failure(entity);
    check_failure(context);
    EntityExpansion e;
    const std::string key(entity);
    e.synonyms.insert(key + "_syn");
    e.antonyms.insert(key + "_ant");
    if (auto it = opts_.synonyms.find(text::lowercase(key)); it != opts_.synonyms.end())
      e.synonyms.insert(it->second.begin(), it->second.end());
    return e;
  }

  bool supports_logprobs() const override { return opts_.logprobs; }
  bool retryable(const Error&) const override { return false; }

 private:
  static GatewayConfig with_no_backoff(GatewayConfig cfg) {
    cfg.backoff = std::chrono::milliseconds(0);
    return cfg;
  }

  void check_failure(std::string_view input) const {
    for (const auto& needle : opts_.fail_when_contains) {
      if (!needle.empty() && input.find(needle) != std::string_view::npos)
        throw Error(ErrorCode::GatewayError, "mock failure injected for input containing '" + needle + "'");
    }
  }

  MockOptions opts_;
};

}  // namespace ragtrace
