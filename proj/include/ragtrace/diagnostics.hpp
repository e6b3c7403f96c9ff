#pragma once

// Granular diagnostic metrics (retrieval failure, prompt fragility,
// generation anomaly, standard anomaly), the composite metrics (correctness,
// topic relevance), per-question evaluation, and failure classification.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/retrieval.hpp"
#include "ragtrace/text.hpp"
#include "ragtrace/text_metrics.hpp"

namespace ragtrace {

struct DiagnosticsOptions {
  /// Score retrieval failure with the gold hit rate instead of the miss rate.
  bool literal_eq1 = false;
  /// Score generation anomaly with confidence instead of (1 - confidence).
  bool literal_eq3 = false;

  friend bool operator==(const DiagnosticsOptions&, const DiagnosticsOptions&) = default;
};

inline void to_json(json& j, const DiagnosticsOptions& o) {
  j = json{{"literal_eq1", o.literal_eq1}, {"literal_eq3", o.literal_eq3}};
}
inline void from_json(const json& j, DiagnosticsOptions& o) {
  o.literal_eq1 = j.value("literal_eq1", false);
  o.literal_eq3 = j.value("literal_eq3", false);
}

// ---------------------------------------------------------------------------
// Retrieval failure

/// Natural-log entropy of softmax(row), temperature 1.
inline double softmax_entropy(std::span<const double> row) {
  if (row.empty()) return 0.0;
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  double h = 0.0;
  for (double v : row) {
    const double p = std::exp(v - mx) / z;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

/// Fraction of gold embeddings without a retrieved embedding at cosine >= theta.
/// Zero when there is no gold.
inline double miss_rate(std::span<const Embedding> gold, std::span<const Embedding> retrieved, double theta) {
  if (gold.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& g : gold) {
    double best = -1.0;
    for (const auto& r : retrieved) best = std::max(best, cosine(g, r));
    if (best >= theta) hits += 1.0;
  }
  return 1.0 - hits / static_cast<double>(gold.size());
}

/// Mean normalized entropy of the softmax over each retrieved chunk's cosine
/// row against the whole retrieved set. Zero for a single chunk.
inline double normalized_dispersion(std::span<const Embedding> retrieved) {
  const std::size_t n = retrieved.size();
  if (n < 2) return 0.0;
  std::vector<double> row(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = cosine(retrieved[i], retrieved[j]);
    total += softmax_entropy(row) / std::log(static_cast<double>(n));
  }
  return clamp_unit(total / static_cast<double>(n));
}

inline double retrieval_failure_from_embeddings(std::span<const Embedding> gold, std::span<const Embedding> retrieved,
                                                const MetricWeights& w, const DiagnosticsOptions& opts = {}) {
  if (retrieved.empty()) throw Error(ErrorCode::EmptyRetrieval, "retrieval returned no chunks");
  const double miss = miss_rate(gold, retrieved, w.theta);
  const double first = opts.literal_eq1 ? (gold.empty() ? 0.0 : 1.0 - miss) : miss;
  return clamp_unit(w.alpha_retrieval * first + w.beta_retrieval * normalized_dispersion(retrieved));
}

inline double retrieval_failure_value(std::span<const Chunk> gold, std::span<const Chunk> retrieved,
                                      const MetricWeights& w, const DiagnosticsOptions& opts = {}) {
  std::vector<Embedding> g, r;
  for (const auto& c : gold) g.push_back(c.embedding);
  for (const auto& c : retrieved) r.push_back(c.embedding);
  return retrieval_failure_from_embeddings(g, r, w, opts);
}

// ---------------------------------------------------------------------------
// Prompt fragility

/// Semantic consistency across variations. docs[k][i] is chunk i retrieved
/// for variation k (m variations, n chunks each):
///   C = 1/(n(n-1)m) * sum_k sum_i sum_{j != i} max_{l != k} sim(d[k][i], d[l][j]).
/// With n = 1 the i = j term is used so a single chunk still compares across
/// variations. Lists of unequal length are truncated to the shortest.
inline double semantic_consistency(const std::vector<std::vector<Embedding>>& docs) {
  const std::size_t m = docs.size();
  if (m < 2) throw Error(ErrorCode::InvalidArgument, "prompt fragility needs at least 2 variations");
  std::size_t n = docs[0].size();
  for (const auto& d : docs) n = std::min(n, d.size());
  if (n == 0) throw Error(ErrorCode::EmptyRetrieval, "a variation retrieved no chunks");
  double sum = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i && n > 1) continue;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < m; ++l)
          if (l != k) best = std::max(best, cosine(docs[k][i], docs[l][j]));
        sum += best;
      }
    }
  }
  const double pairs = n > 1 ? static_cast<double>(n * (n - 1)) : 1.0;
  return sum / (pairs * static_cast<double>(m));
}

inline double fragility_from_embeddings(const std::vector<std::vector<Embedding>>& docs) {
  return 1.0 - clamp_unit(semantic_consistency(docs));
}

struct FragilityResult {
  double fragility = 0.0;
  double consistency = 1.0;
  std::vector<std::string> variations;
};

/// Paraphrases the question m times (the first variation is the original),
/// retrieves top-k for each with the strategy's filters and boosts, and
/// scores how much the retrieved sets diverge.
inline FragilityResult prompt_fragility_value(const Question& question, const Corpus& corpus,
                                              const RetrievalStrategy& strategy, Gateway& gateway,
                                              const MetricWeights& w) {
  if (w.m_variations < 2) throw Error(ErrorCode::ValueOutOfRange, "m_variations must be >= 2");
  FragilityResult out;
  out.variations = gateway.paraphrase(question.text, w.m_variations);
  std::vector<std::vector<Embedding>> docs;
  for (const auto& v : out.variations) {
    const auto q = gateway.embed_one(v);
    std::vector<Embedding> d;
    for (const auto& r : rank_with_strategy(corpus, q, strategy)) d.push_back(corpus.at(r.chunk_id).embedding);
    docs.push_back(std::move(d));
  }
  out.consistency = semantic_consistency(docs);
  out.fragility = 1.0 - clamp_unit(out.consistency);
  return out;
}

// ---------------------------------------------------------------------------
// Generation anomaly

inline double generation_anomaly_from(double mean_confidence, std::size_t erroneous, std::size_t citations,
                                      const MetricWeights& w, const DiagnosticsOptions& opts = {}) {
  const double conf = clamp_unit(mean_confidence);
  const double ratio = static_cast<double>(erroneous) / static_cast<double>(std::max<std::size_t>(1, citations));
  const double first = opts.literal_eq3 ? conf : 1.0 - conf;
  return clamp_unit(w.alpha_gen * first + w.beta_gen * ratio);
}

struct CitationTally {
  std::size_t total = 0;
  std::size_t erroneous = 0;
  std::vector<std::string> notes;  // one line per erroneous citation
};

/// Checks each citation against the claim of the sentence that carries it.
/// A citation is erroneous when its id is not in the run, the sentence has
/// no claim text, the judge scores it below 0.5, or the judge fails.
inline CitationTally tally_citations(const GenerationResult& answer, const RetrievalRun& run, const Corpus& corpus,
                                     Gateway& gateway) {
  CitationTally t;
  for (const auto& sentence : text::sentences(answer.text)) {
    const auto ids = text::parse_citations(sentence);
    if (ids.empty()) continue;
    const auto claim = text::claim_text(sentence);
    for (const auto& id : ids) {
      ++t.total;
      if (!run.contains(id) || corpus.find(id) == nullptr) {
        ++t.erroneous;
        t.notes.push_back(id + ": not in retrieval run");
        continue;
      }
      if (text::trim(claim).empty()) {
        ++t.erroneous;
        t.notes.push_back(id + ": no claim text");
        continue;
      }
      try {
        const Chunk& c = corpus.at(id);
        if (gateway.judge_fact_support(claim, std::span<const Chunk>(&c, 1)).score < 0.5) {
          ++t.erroneous;
          t.notes.push_back(id + ": claim not supported");
        }
      } catch (const Error& e) {
        ++t.erroneous;
        t.notes.push_back(id + ": judge failed: " + e.what());
      }
    }
  }
  return t;
}

inline double generation_anomaly_value(const GenerationResult& answer, const RetrievalRun& run, const Corpus& corpus,
                                       Gateway& gateway, const MetricWeights& w, const DiagnosticsOptions& opts = {}) {
  const auto t = tally_citations(answer, run, corpus, gateway);
  return generation_anomaly_from(answer.mean_confidence, t.erroneous, t.total, w, opts);
}

// ---------------------------------------------------------------------------
// Standard anomaly

inline double standard_anomaly_from(double gpt_check, double fact_score, const MetricWeights& w) {
  return clamp_unit(w.alpha_std * clamp_unit(gpt_check) + w.beta_std * (1.0 - clamp_unit(fact_score)));
}

/// Mean judged support of the answer's sentence claims against the evidence.
inline double fact_score(std::string_view answer_text, std::span<const Chunk> evidence, Gateway& gateway) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& sentence : text::sentences(answer_text)) {
    const auto claim = text::claim_text(sentence);
    if (text::trim(claim).empty()) continue;
    sum += clamp_unit(gateway.judge_fact_support(claim, evidence).score);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline double standard_anomaly_value(const GenerationResult& answer, std::span<const Chunk> kb_evidence,
                                     Gateway& gateway, const MetricWeights& w) {
  const auto plain = text::strip_citations(answer.text);
  if (text::trim(plain).empty()) throw Error(ErrorCode::InvalidArgument, "answer must be non-empty");
  const double check = gateway.judge_uncertainty(plain).score;
  return standard_anomaly_from(check, fact_score(answer.text, kb_evidence, gateway), w);
}

// ---------------------------------------------------------------------------
// Composite metrics

/// Text the answer is compared against for topic relevance.
inline std::string topic_reference_text(const Question& question) {
  if (question.ground_truth && !text::trim(*question.ground_truth).empty()) return standard_query_text(question);
  return std::string(text::trim(question.text));
}

inline double topic_relevance(std::string_view answer_text, const Question& question, Gateway& gateway) {
  if (text::trim(answer_text).empty()) throw Error(ErrorCode::InvalidArgument, "answer must be non-empty");
  const auto v = gateway.embed({std::string(answer_text), topic_reference_text(question)});
  return std::clamp(cosine(v[0], v[1]), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Evaluation records

inline constexpr std::array<std::string_view, 4> kFailureTypes = {"retrieval_failure", "prompt_vulnerability",
                                                                   "generation_anomaly", "standard_inconsistency"};

/// Intermediate quantities behind the four granular metrics. Keeping them
/// lets the metrics be recomputed under different weights without new
/// gateway calls.
struct MetricComponents {
  bool has_gold = false;
  double miss_rate = 0.0;
  double dispersion = 0.0;
  double semantic_consistency = 1.0;
  double mean_confidence = 0.0;
  std::size_t citations = 0;
  std::size_t erroneous_citations = 0;
  double gpt_check = 0.0;
  double fact_score = 0.0;

  friend bool operator==(const MetricComponents&, const MetricComponents&) = default;
};

inline void to_json(json& j, const MetricComponents& c) {
  j = json{{"has_gold", c.has_gold},
           {"miss_rate", c.miss_rate},
           {"dispersion", c.dispersion},
           {"semantic_consistency", c.semantic_consistency},
           {"mean_confidence", c.mean_confidence},
           {"citations", c.citations},
           {"erroneous_citations", c.erroneous_citations},
           {"gpt_check", c.gpt_check},
           {"fact_score", c.fact_score}};
}
inline void from_json(const json& j, MetricComponents& c) {
  j.at("has_gold").get_to(c.has_gold);
  j.at("miss_rate").get_to(c.miss_rate);
  j.at("dispersion").get_to(c.dispersion);
  j.at("semantic_consistency").get_to(c.semantic_consistency);
  j.at("mean_confidence").get_to(c.mean_confidence);
  j.at("citations").get_to(c.citations);
  j.at("erroneous_citations").get_to(c.erroneous_citations);
  j.at("gpt_check").get_to(c.gpt_check);
  j.at("fact_score").get_to(c.fact_score);
}

/// Retrieval failure, prompt fragility, generation anomaly and standard
/// anomaly from their components.
inline std::array<double, 4> granular_metrics(const MetricComponents& c, const MetricWeights& w,
                                              const DiagnosticsOptions& opts = {}) {
  const double first = opts.literal_eq1 ? (c.has_gold ? 1.0 - c.miss_rate : 0.0) : c.miss_rate;
  return {clamp_unit(w.alpha_retrieval * first + w.beta_retrieval * c.dispersion),
          1.0 - clamp_unit(c.semantic_consistency),
          generation_anomaly_from(c.mean_confidence, c.erroneous_citations, c.citations, w, opts),
          standard_anomaly_from(c.gpt_check, c.fact_score, w)};
}

/// Same record metrics under other weights; correctness and topic relevance
/// carry over.
inline MetricVector reweighted(const MetricVector& m, const MetricComponents& c, const MetricWeights& w,
                               const DiagnosticsOptions& opts = {}) {
  const auto g = granular_metrics(c, w, opts);
  return MetricVector(g[0], g[1], g[2], g[3], m.correctness(), m.topic_relevance());
}

struct RecordError {
  std::string code;
  std::string message;

  friend bool operator==(const RecordError&, const RecordError&) = default;
};

struct EvaluationRecord {
  std::string question_id;
  RetrievalRun retrieval_run;
  GenerationResult answer;
  MetricVector metrics;
  MetricComponents components;
  std::vector<std::string> variations;
  std::optional<RecordError> error;

  bool ok() const { return !error.has_value(); }

  /// Attraction weights per failure type; equal to the matching metrics.
  std::map<std::string, double> failure_weights() const {
    return {{"retrieval_failure", metrics.retrieval_failure()},
            {"prompt_vulnerability", metrics.prompt_fragility()},
            {"generation_anomaly", metrics.generation_anomaly()},
            {"standard_inconsistency", metrics.standard_anomaly()}};
  }

  friend bool operator==(const EvaluationRecord&, const EvaluationRecord&) = default;
};

inline void to_json(json& j, const RecordError& e) { j = json{{"code", e.code}, {"message", e.message}}; }
inline void from_json(const json& j, RecordError& e) {
  j.at("code").get_to(e.code);
  j.at("message").get_to(e.message);
}

inline void to_json(json& j, const EvaluationRecord& r) {
  j = json{{"question_id", r.question_id}, {"retrieval_run", r.retrieval_run}, {"answer", r.answer},
           {"variations", r.variations}};
  if (r.error) {
    j["metrics"] = nullptr;
    j["components"] = nullptr;
    j["failure_weights"] = nullptr;
    j["error"] = *r.error;
  } else {
    j["metrics"] = r.metrics;
    j["components"] = r.components;
    j["failure_weights"] = r.failure_weights();
    j["error"] = nullptr;
  }
}
inline void from_json(const json& j, EvaluationRecord& r) {
  j.at("question_id").get_to(r.question_id);
  j.at("retrieval_run").get_to(r.retrieval_run);
  j.at("answer").get_to(r.answer);
  r.variations = j.value("variations", std::vector<std::string>{});
  if (auto it = j.find("metrics"); it != j.end() && !it->is_null()) r.metrics = it->get<MetricVector>();
  if (auto it = j.find("components"); it != j.end() && !it->is_null()) r.components = it->get<MetricComponents>();
  if (auto it = j.find("error"); it != j.end() && !it->is_null()) r.error = it->get<RecordError>();
}

/// Gold chunks for a question: annotated ids when present; otherwise the top
/// chunk of standard retrieval when a ground truth exists; otherwise none.
inline std::vector<Chunk> gold_chunks(const Question& question, const Corpus& corpus, Gateway& gateway) {
  std::vector<Chunk> out;
  if (question.gold_chunk_ids && !question.gold_chunk_ids->empty()) {
    for (const auto& id : *question.gold_chunk_ids) {
      const Chunk* c = corpus.find(id);
      if (c == nullptr) throw Error(ErrorCode::NotFound, "gold chunk " + id + " not in corpus");
      out.push_back(*c);
    }
    return out;
  }
  if (!question.ground_truth || text::trim(*question.ground_truth).empty()) return out;
  RetrievalStrategy s;
  s.kind = RetrievalKind::Standard;
  s.k = 1;
  return run_chunks(retrieve_standard(question, corpus, s, gateway), corpus);
}

/// Knowledge-base evidence for the standard anomaly: annotated gold, else the
/// standard-retrieval top-k, else the run's own chunks.
inline std::vector<Chunk> knowledge_base_evidence(const Question& question, const Corpus& corpus, int k,
                                                  const std::vector<Chunk>& run_chunks_fallback, Gateway& gateway) {
  if (question.gold_chunk_ids && !question.gold_chunk_ids->empty()) return gold_chunks(question, corpus, gateway);
  if (question.ground_truth && !text::trim(*question.ground_truth).empty()) {
    RetrievalStrategy s;
    s.kind = RetrievalKind::Standard;
    s.k = k;
    return run_chunks(retrieve_standard(question, corpus, s, gateway), corpus);
  }
  return run_chunks_fallback;
}

/// Retrieve, generate, and score one question. Throws on failure; callers that
/// need isolation wrap it (see evaluate_question_isolated).
inline EvaluationRecord evaluate_question(const Question& question, const Corpus& corpus,
                                          const RetrievalStrategy& strategy, double diversity, Gateway& gateway,
                                          const MetricWeights& w, const DiagnosticsOptions& opts = {}) {
  EvaluationRecord rec;
  rec.question_id = question.id;
  rec.retrieval_run = classify_relevance(retrieve(question, corpus, strategy, gateway), question, corpus, gateway,
                                         w.theta);
  const auto context = run_chunks(rec.retrieval_run, corpus);
  if (context.empty()) throw Error(ErrorCode::EmptyRetrieval, "retrieval returned no chunks for " + question.id);
  rec.answer = gateway.generate(question.text, context, diversity);

  MetricComponents& c = rec.components;
  const auto gold = gold_chunks(question, corpus, gateway);
  std::vector<Embedding> gold_vecs, ctx_vecs;
  for (const auto& g : gold) gold_vecs.push_back(g.embedding);
  for (const auto& x : context) ctx_vecs.push_back(x.embedding);
  c.has_gold = !gold.empty();
  c.miss_rate = miss_rate(gold_vecs, ctx_vecs, w.theta);
  c.dispersion = normalized_dispersion(ctx_vecs);

  auto frag = prompt_fragility_value(question, corpus, strategy, gateway, w);
  c.semantic_consistency = frag.consistency;
  rec.variations = std::move(frag.variations);

  const auto tally = tally_citations(rec.answer, rec.retrieval_run, corpus, gateway);
  c.mean_confidence = clamp_unit(rec.answer.mean_confidence);
  c.citations = tally.total;
  c.erroneous_citations = tally.erroneous;

  const auto plain = text::strip_citations(rec.answer.text);
  if (text::trim(plain).empty()) throw Error(ErrorCode::InvalidArgument, "answer for " + question.id + " is empty");
  const auto kb = knowledge_base_evidence(question, corpus, strategy.k, context, gateway);
  c.gpt_check = clamp_unit(gateway.judge_uncertainty(plain).score);
  c.fact_score = fact_score(rec.answer.text, kb, gateway);

  const auto g = granular_metrics(c, w, opts);
  const double corr = question.ground_truth ? correctness(plain, *question.ground_truth) : 0.0;
  rec.metrics = MetricVector(g[0], g[1], g[2], g[3], corr, topic_relevance(plain, question, gateway));
  return rec;
}

inline EvaluationRecord evaluate_question_isolated(const Question& question, const Corpus& corpus,
                                                   const RetrievalStrategy& strategy, double diversity,
                                                   Gateway& gateway, const MetricWeights& w,
                                                   const DiagnosticsOptions& opts = {}) {
  try {
    return evaluate_question(question, corpus, strategy, diversity, gateway, w, opts);
  } catch (const Error& e) {
    EvaluationRecord rec;
    rec.question_id = question.id;
    rec.error = RecordError{std::string(to_string(e.code())), e.what()};
    return rec;
  } catch (const std::exception& e) {
    EvaluationRecord rec;
    rec.question_id = question.id;
    rec.error = RecordError{"Internal", e.what()};
    return rec;
  }
}

// ---------------------------------------------------------------------------
// Failure classification

/// Failure types whose metric reaches the threshold, per successful record.
inline std::map<std::string, std::set<std::string>> classify_failures(const std::vector<EvaluationRecord>& records,
                                                                      double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error(ErrorCode::ValueOutOfRange, "failure threshold must lie in (0,1)");
  std::map<std::string, std::set<std::string>> out;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    auto& types = out[r.question_id];
    for (const auto& [type, value] : r.failure_weights())
      if (value >= threshold) types.insert(type);
  }
  return out;
}

/// Force-graph payload: the four anchors in fixed order plus one node per
/// question carrying its attraction weights and failure types.
inline json failure_graph(const std::vector<EvaluationRecord>& records, double threshold = 0.5) {
  const auto types = classify_failures(records, threshold);
  json anchors = json::array();
  for (const auto& t : kFailureTypes) anchors.push_back({{"id", std::string(t)}, {"type", std::string(t)}});
  json questions = json::array();
  for (const auto& r : records) {
    if (!r.ok()) continue;
    questions.push_back({{"id", r.question_id},
                         {"weights", r.failure_weights()},
                         {"failure_types", types.at(r.question_id)}});
  }
  return json{{"threshold", threshold}, {"anchors", anchors}, {"questions", questions}};
}

}  // namespace ragtrace
