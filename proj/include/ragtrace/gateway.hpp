#pragma once

// Uniform client layer for embeddings, generation, and LLM-as-judge calls.
//
// Gateway is the non-virtual public surface: it validates inputs, builds the
// generation prompt, parses citations, aggregates confidence, enforces the
// in-flight cap and retry budget, and counts calls. Backends implement the
// protected do_* hooks.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/text.hpp"

namespace ragtrace {

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;

  friend bool operator==(const Usage&, const Usage&) = default;
};

struct GenerationResult {
  std::string text;
  double mean_confidence = 0.0;
  std::optional<std::vector<double>> token_confidences;
  std::vector<std::string> citations;
  Usage raw_usage;

  friend bool operator==(const GenerationResult&, const GenerationResult&) = default;
};

struct JudgeVerdict {
  double score = 0.0;
  std::string rationale;

  friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

struct EntityExpansion {
  std::set<std::string> synonyms;
  std::set<std::string> antonyms;

  friend bool operator==(const EntityExpansion&, const EntityExpansion&) = default;
};

/// Geometric mean of per-token probabilities, exp(mean log p).
inline double aggregate_confidence(std::span<const double> token_probs) {
  if (token_probs.empty()) return 0.0;
  double sum_log = 0.0;
  for (double p : token_probs) sum_log += std::log(std::max(clamp_unit(p), 1e-12));
  return clamp_unit(std::exp(sum_log / static_cast<double>(token_probs.size())));
}

inline void to_json(json& j, const EntityExpansion& e) { j = json{{"synonyms", e.synonyms}, {"antonyms", e.antonyms}}; }
inline void from_json(const json& j, EntityExpansion& e) {
  e.synonyms = j.value("synonyms", std::set<std::string>{});
  e.antonyms = j.value("antonyms", std::set<std::string>{});
}

inline void to_json(json& j, const Usage& u) {
  j = json{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
}
inline void from_json(const json& j, Usage& u) {
  u.prompt_tokens = j.value("prompt_tokens", 0);
  u.completion_tokens = j.value("completion_tokens", 0);
}

inline void to_json(json& j, const GenerationResult& g) {
  j = json{{"text", g.text}, {"mean_confidence", g.mean_confidence},
           {"citations", g.citations}, {"raw_usage", g.raw_usage}};
  j["token_confidences"] = g.token_confidences ? json(*g.token_confidences) : json(nullptr);
}
inline void from_json(const json& j, GenerationResult& g) {
  j.at("text").get_to(g.text);
  j.at("mean_confidence").get_to(g.mean_confidence);
  j.at("citations").get_to(g.citations);
  g.raw_usage = j.value("raw_usage", Usage{});
  g.token_confidences.reset();
  if (auto it = j.find("token_confidences"); it != j.end() && !it->is_null())
    g.token_confidences = it->get<std::vector<double>>();
}

inline void to_json(json& j, const JudgeVerdict& v) {
  j = json{{"score", v.score}, {"rationale", v.rationale}};
}
inline void from_json(const json& j, JudgeVerdict& v) {
  j.at("score").get_to(v.score);
  v.rationale = j.value("rationale", std::string{});
}

/// Editable prompt templates. Placeholders: {question} {context} {answer}
/// {claim} {evidence} {entity} {n}.
struct PromptTemplates {
  std::string generate =
      "Answer the question using the context below. Cite every chunk you use by "
      "copying its marker, for example [chunk:<id>].\n\nContext:\n{context}\n"
      "Question: {question}\nAnswer:";
  std::string self_report =
      "\n\nAfter the answer, on a new line, write \"Confidence: N\" where N is an "
      "integer from 0 to 100 giving how confident you are in the answer.";
  std::string hypothetical =
      "Write a short passage that answers the question.\nQuestion: {question}\nPassage:";
  std::string paraphrase =
      "Rewrite the following question in {n} different ways that keep its meaning. "
      "Reply with one rewrite per line and nothing else.\nQuestion: {question}";
  std::string uncertainty =
      "Rate how uncertain the following answer sounds, from 0 (fully certain) to 100 "
      "(completely uncertain). Reply with the integer only.\nAnswer: {answer}";
  std::string fact_support =
      "Evidence:\n{evidence}\n\nClaim: {claim}\n\nIs the claim supported by the evidence? "
      "Reply with a probability between 0 and 1 only.";
  std::string expand_entity =
      "In the context below, list synonyms and antonyms of the entity \"{entity}\". Reply "
      "with JSON only: {\"synonyms\": [...], \"antonyms\": [...]}.\nContext: {context}";
};

inline std::string fill_template(std::string tpl,
                                 std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
  for (const auto& [key, value] : vars) {
    const std::string needle = "{" + std::string(key) + "}";
    std::size_t pos = 0;
    while ((pos = tpl.find(needle, pos)) != std::string::npos) {
      tpl.replace(pos, needle.size(), value);
      pos += value.size();
    }
  }
  return tpl;
}

inline void from_json(const json& j, PromptTemplates& p) {
  PromptTemplates d;
  p.generate = j.value("generate", d.generate);
  p.self_report = j.value("self_report", d.self_report);
  p.hypothetical = j.value("hypothetical", d.hypothetical);
  p.paraphrase = j.value("paraphrase", d.paraphrase);
  p.uncertainty = j.value("uncertainty", d.uncertainty);
  p.fact_support = j.value("fact_support", d.fact_support);
  p.expand_entity = j.value("expand_entity", d.expand_entity);
}

struct GatewayConfig {
  std::size_t max_in_flight = 4;
  int max_retries = 2;
  std::chrono::milliseconds backoff{100};
  std::chrono::milliseconds deadline{60000};
  PromptTemplates prompts;
};

/// Structured view of a completion request; backends that speak HTTP use
/// `prompt`, the mock may use the structured fields.
struct CompletionRequest {
  enum class Kind { Answer, Hypothetical };
  Kind kind = Kind::Answer;
  std::string prompt;
  std::string question;
  std::vector<Chunk> context;
  double temperature = 0.0;
  bool self_report_confidence = false;
};

struct Completion {
  std::string text;
  std::optional<std::vector<double>> token_probs;
  Usage usage;
};

struct CallCounts {
  std::size_t embed = 0;
  std::size_t complete = 0;
  std::size_t paraphrase = 0;
  std::size_t judge_uncertainty = 0;
  std::size_t judge_fact_support = 0;
  std::size_t expand_entity = 0;

  std::size_t total() const {
    return embed + complete + paraphrase + judge_uncertainty + judge_fact_support + expand_entity;
  }
};

/// Builds the context block: one "[chunk:<id>] <text>" line per chunk.
inline std::string format_context(std::span<const Chunk> chunks) {
  std::string out;
  for (const auto& c : chunks) {
    out += "[chunk:" + c.id + "] " + c.text + "\n";
  }
  return out;
}

/// Finds a trailing "Confidence: N" line; returns N/100 and strips the line.
inline std::optional<double> extract_self_reported_confidence(std::string& text) {
  const std::string lower = text::lowercase(text);
  const std::size_t pos = lower.rfind("confidence:");
  if (pos == std::string::npos) return std::nullopt;
  std::size_t i = pos + 11;
  while (i < text.size() && text::is_space(text[i])) ++i;
  std::size_t j = i;
  while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.')) ++j;
  if (j == i) return std::nullopt;
  double v = 0.0;
  try {
    v = std::stod(text.substr(i, j - i));
  } catch (const std::exception&) {
    return std::nullopt;
  }
  text.erase(pos);
  while (!text.empty() && text::is_space(text.back())) text.pop_back();
  return clamp_unit(v / 100.0);
}

class Gateway {
 public:
  explicit Gateway(GatewayConfig cfg = {})
      : cfg_(std::move(cfg)),
        slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, cfg_.max_in_flight))) {}
  virtual ~Gateway() = default;

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  virtual std::string id() const = 0;

  const GatewayConfig& config() const { return cfg_; }

  /// Embedding dimension; probed once with a one-text embed call.
  std::size_t dimension() {
    std::call_once(dim_once_, [this] { dim_ = embed({std::string("dimension probe")}).at(0).size(); });
    return dim_;
  }

  std::vector<Embedding> embed(const std::vector<std::string>& texts) {
    for (const auto& t : texts)
      if (t.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed an empty text");
    if (texts.empty()) return {};
    ++counts_.embed;
    auto out = guarded([&] { return do_embed(texts); });
    if (out.size() != texts.size())
      throw Error(ErrorCode::GatewayError, "backend returned " + std::to_string(out.size()) +
                                               " embeddings for " + std::to_string(texts.size()) + " texts");
    return out;
  }

  Embedding embed_one(std::string_view text) { return embed({std::string(text)}).at(0); }

  GenerationResult generate(std::string_view prompt, std::span<const Chunk> context, double diversity) {
    if (text::trim(prompt).empty()) throw Error(ErrorCode::InvalidArgument, "prompt must be non-empty");
    if (!(diversity >= 0.0 && diversity <= 2.0))
      throw Error(ErrorCode::ValueOutOfRange, "diversity must lie in [0,2]");
    CompletionRequest req;
    req.kind = CompletionRequest::Kind::Answer;
    req.question = std::string(prompt);
    req.context.assign(context.begin(), context.end());
    req.temperature = diversity;
    req.self_report_confidence = !supports_logprobs();
    return finish_generation(req);
  }

  /// Hypothetical answer document for a question, generated without context.
  GenerationResult generate_hypothetical(std::string_view question, double diversity = 0.0) {
    if (text::trim(question).empty()) throw Error(ErrorCode::InvalidArgument, "question must be non-empty");
    CompletionRequest req;
    req.kind = CompletionRequest::Kind::Hypothetical;
    req.question = std::string(question);
    req.temperature = diversity;
    req.self_report_confidence = !supports_logprobs();
    return finish_generation(req);
  }

  /// `count` variations of the question; element 0 is the original text.
  std::vector<std::string> paraphrase(std::string_view question, int count) {
    if (text::trim(question).empty()) throw Error(ErrorCode::InvalidArgument, "question must be non-empty");
    if (count < 1) throw Error(ErrorCode::InvalidArgument, "paraphrase count must be >= 1");
    std::vector<std::string> out{std::string(question)};
    if (count == 1) return out;
    ++counts_.paraphrase;
    auto more = guarded([&] { return do_paraphrase(question, count - 1); });
    for (auto& p : more) {
      if (out.size() == static_cast<std::size_t>(count)) break;
      if (!text::trim(p).empty()) out.push_back(std::move(p));
    }
    // Backends that return too few rewrites are padded with the original.
    while (out.size() < static_cast<std::size_t>(count)) out.emplace_back(question);
    return out;
  }

  JudgeVerdict judge_uncertainty(std::string_view answer) {
    if (text::trim(answer).empty()) throw Error(ErrorCode::InvalidArgument, "answer must be non-empty");
    ++counts_.judge_uncertainty;
    auto v = guarded([&] { return do_judge_uncertainty(answer); });
    v.score = clamp_unit(v.score);
    return v;
  }

  JudgeVerdict judge_fact_support(std::string_view claim, std::span<const Chunk> evidence) {
    if (text::trim(claim).empty()) throw Error(ErrorCode::InvalidArgument, "claim must be non-empty");
    if (evidence.empty()) return {0.0, "no evidence"};
    ++counts_.judge_fact_support;
    auto v = guarded([&] { return do_judge_fact_support(claim, evidence); });
    v.score = clamp_unit(v.score);
    return v;
  }

  EntityExpansion expand_entity(std::string_view entity, std::string_view context) {
    if (text::trim(entity).empty()) throw Error(ErrorCode::InvalidArgument, "entity must be non-empty");
    ++counts_.expand_entity;
    return guarded([&] { return do_expand_entity(entity, context); });
  }

  CallCounts counts() const {
    return {counts_.embed.load(), counts_.complete.load(), counts_.paraphrase.load(),
            counts_.judge_uncertainty.load(), counts_.judge_fact_support.load(),
            counts_.expand_entity.load()};
  }

  /// Prompt text of the most recent completion request.
  std::string last_prompt() const {
    std::lock_guard lock(last_mu_);
    return last_prompt_;
  }

  std::size_t peak_in_flight() const { return peak_in_flight_.load(); }

 protected:
  virtual std::vector<Embedding> do_embed(const std::vector<std::string>& texts) = 0;
  virtual Completion do_complete(const CompletionRequest& req) = 0;
  virtual std::vector<std::string> do_paraphrase(std::string_view question, int count) = 0;
  virtual JudgeVerdict do_judge_uncertainty(std::string_view answer) = 0;
  virtual JudgeVerdict do_judge_fact_support(std::string_view claim, std::span<const Chunk> evidence) = 0;
  virtual EntityExpansion do_expand_entity(std::string_view entity, std::string_view context) = 0;

  /// Whether completions carry token probabilities.
  virtual bool supports_logprobs() const { return true; }

  std::string build_prompt(const CompletionRequest& req) const {
    std::string p;
    if (req.kind == CompletionRequest::Kind::Hypothetical) {
      p = fill_template(cfg_.prompts.hypothetical, {{"question", req.question}});
    } else {
      const std::string ctx = format_context(req.context);
      p = fill_template(cfg_.prompts.generate, {{"context", ctx}, {"question", req.question}});
    }
    if (req.self_report_confidence) p += cfg_.prompts.self_report;
    return p;
  }

  template <class F>
  auto guarded(F&& call) -> decltype(call()) {
    if (!slots_.try_acquire_for(cfg_.deadline))
      throw Error(ErrorCode::Timeout, "gateway concurrency slot not available before deadline");
    struct Release {
      Gateway* g;
      ~Release() {
        --g->in_flight_;
        g->slots_.release();
      }
    } release{this};
    const auto now = ++in_flight_;
    auto peak = peak_in_flight_.load();
    while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
    }
    for (int attempt = 0;; ++attempt) {
      try {
        return call();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::GatewayError || attempt >= cfg_.max_retries || !retryable(e)) throw;
      }
      std::this_thread::sleep_for(cfg_.backoff * (1 << attempt));
    }
  }

  /// Backends may refuse retries for deterministic failures.
  virtual bool retryable(const Error&) const { return true; }

 private:
  GenerationResult finish_generation(CompletionRequest req) {
    req.prompt = build_prompt(req);
    {
      std::lock_guard lock(last_mu_);
      last_prompt_ = req.prompt;
    }
    ++counts_.complete;
    Completion c = guarded([&] { return do_complete(req); });

    GenerationResult out;
    out.raw_usage = c.usage;
    if (c.token_probs && !c.token_probs->empty()) {
      std::vector<double> probs;
      probs.reserve(c.token_probs->size());
      for (double p : *c.token_probs) probs.push_back(clamp_unit(p));
      out.mean_confidence = aggregate_confidence(probs);
      out.token_confidences = std::move(probs);
    } else if (auto conf = extract_self_reported_confidence(c.text)) {
      out.mean_confidence = *conf;
    } else if (!req.self_report_confidence) {
      // No token probabilities: fall back to asking the model directly.
      req.self_report_confidence = true;
      return finish_generation(std::move(req));
    } else {
      throw Error(ErrorCode::ConfidenceUnavailable,
                  "backend returned neither token probabilities nor a self-reported confidence");
    }
    out.text = std::move(c.text);
    out.citations = text::parse_citations(out.text);
    return out;
  }

  GatewayConfig cfg_;
  std::counting_semaphore<1 << 20> slots_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> peak_in_flight_{0};
  std::once_flag dim_once_;
  std::size_t dim_ = 0;
  mutable std::mutex last_mu_;
  std::string last_prompt_;

  struct AtomicCounts {
    std::atomic<std::size_t> embed{0}, complete{0}, paraphrase{0}, judge_uncertainty{0},
        judge_fact_support{0}, expand_entity{0};
  } counts_;
};

}  // namespace ragtrace
