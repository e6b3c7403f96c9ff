#pragma once

// Retrieval strategies (plain, standard, hypothetical-document), relevance
// classification, and Chunk-Relink comparison data.

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/text.hpp"

namespace ragtrace {

enum class RetrievalKind { Plain, Standard, Hyde };
enum class RelevanceClass { Relevant, Irrelevant, Negative };

NLOHMANN_JSON_SERIALIZE_ENUM(RetrievalKind, {{RetrievalKind::Plain, "plain"},
                                             {RetrievalKind::Standard, "standard"},
                                             {RetrievalKind::Hyde, "hyde"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RelevanceClass, {{RelevanceClass::Relevant, "relevant"},
                                              {RelevanceClass::Irrelevant, "irrelevant"},
                                              {RelevanceClass::Negative, "negative"}})

inline RetrievalKind parse_retrieval_kind(std::string_view s) {
  if (s == "plain") return RetrievalKind::Plain;
  if (s == "standard") return RetrievalKind::Standard;
  if (s == "hyde") return RetrievalKind::Hyde;
  throw Error(ErrorCode::InvalidArgument, "unknown retrieval strategy '" + std::string(s) + "'");
}

struct RetrievalStrategy {
  RetrievalKind kind = RetrievalKind::Plain;
  int k = 10;
  std::vector<std::string> keywords;  // boost terms
  std::set<std::string> tags;         // hard filter on chunk source_doc

  friend bool operator==(const RetrievalStrategy&, const RetrievalStrategy&) = default;
};

struct RetrievedChunk {
  std::string chunk_id;
  double similarity = 0.0;  // cosine to the query embedding
  double score = 0.0;       // ranking score after keyword boost
  RelevanceClass relevance = RelevanceClass::Irrelevant;

  friend bool operator==(const RetrievedChunk&, const RetrievedChunk&) = default;
};

struct RetrievalRun {
  RetrievalStrategy strategy;
  std::string query_text_used;
  std::vector<RetrievedChunk> results;  // score descending, then id ascending

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(results.size());
    for (const auto& r : results) out.push_back(r.chunk_id);
    return out;
  }

  bool contains(std::string_view id) const {
    return std::any_of(results.begin(), results.end(), [&](const auto& r) { return r.chunk_id == id; });
  }

  friend bool operator==(const RetrievalRun&, const RetrievalRun&) = default;
};

inline void to_json(json& j, const RetrievalStrategy& s) {
  j = json{{"kind", s.kind}, {"k", s.k}, {"keywords", s.keywords}, {"tags", s.tags}};
}
inline void from_json(const json& j, RetrievalStrategy& s) {
  s.kind = j.value("kind", RetrievalKind::Plain);
  s.k = j.value("k", 10);
  s.keywords = j.value("keywords", std::vector<std::string>{});
  s.tags = j.value("tags", std::set<std::string>{});
  if (s.k < 1) throw Error(ErrorCode::InvalidArgument, "strategy k must be >= 1");
}

inline void to_json(json& j, const RetrievedChunk& r) {
  j = json{{"chunk_id", r.chunk_id}, {"similarity", r.similarity}, {"score", r.score},
           {"relevance_class", r.relevance}};
}
inline void from_json(const json& j, RetrievedChunk& r) {
  j.at("chunk_id").get_to(r.chunk_id);
  j.at("similarity").get_to(r.similarity);
  r.score = j.value("score", r.similarity);
  r.relevance = j.value("relevance_class", RelevanceClass::Irrelevant);
}

inline void to_json(json& j, const RetrievalRun& r) {
  j = json{{"strategy", r.strategy}, {"query_text_used", r.query_text_used}, {"results", r.results}};
}
inline void from_json(const json& j, RetrievalRun& r) {
  j.at("strategy").get_to(r.strategy);
  j.at("query_text_used").get_to(r.query_text_used);
  j.at("results").get_to(r.results);
}

inline constexpr double kKeywordBoostPerHit = 0.05;

/// Number of boost keywords present (case-insensitive substring) in a text.
inline int keyword_hits(std::string_view chunk_text, const std::vector<std::string>& keywords) {
  if (keywords.empty()) return 0;
  const std::string lower = text::lowercase(chunk_text);
  int hits = 0;
  for (const auto& k : keywords) {
    const auto kw = text::lowercase(text::trim(k));
    if (!kw.empty() && lower.find(kw) != std::string::npos) ++hits;
  }
  return hits;
}

/// Ranks the tag-filtered corpus against a query embedding, applies the
/// keyword boost sim * (1 + 0.05 * hits), and keeps the best k.
inline std::vector<RetrievedChunk> rank_with_strategy(const Corpus& corpus, std::span<const float> query,
                                                      const RetrievalStrategy& strategy) {
  if (strategy.k < 1) throw Error(ErrorCode::InvalidArgument, "strategy k must be >= 1");
  auto keep = [&](const Chunk& c) { return strategy.tags.empty() || strategy.tags.count(c.source_doc) > 0; };
  const auto scored = score_all(corpus, query, keep);
  std::vector<RetrievedChunk> all;
  all.reserve(scored.size());
  for (const auto& s : scored) {
    const int hits = keyword_hits(s.chunk->text, strategy.keywords);
    all.push_back({s.chunk->id, s.similarity, s.similarity * (1.0 + kKeywordBoostPerHit * hits),
                   RelevanceClass::Irrelevant});
  }
  const auto n = std::min(all.size(), static_cast<std::size_t>(strategy.k));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    [](const RetrievedChunk& a, const RetrievedChunk& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.chunk_id < b.chunk_id;
                    });
  all.resize(n);
  return all;
}

inline RetrievalRun retrieve_with_query(std::string query_text, const Corpus& corpus,
                                        const RetrievalStrategy& strategy, Gateway& gateway) {
  RetrievalRun run;
  run.strategy = strategy;
  run.query_text_used = std::move(query_text);
  const auto q = gateway.embed_one(run.query_text_used);
  run.results = rank_with_strategy(corpus, q, strategy);
  return run;
}

inline RetrievalRun retrieve_plain(const Question& question, const Corpus& corpus, const RetrievalStrategy& strategy,
                                   Gateway& gateway) {
  if (strategy.kind != RetrievalKind::Plain) throw Error(ErrorCode::InvalidArgument, "strategy kind must be plain");
  return retrieve_with_query(question.text, corpus, strategy, gateway);
}

/// Query used for reference retrieval: question and ground truth joined.
inline std::string standard_query_text(const Question& question) {
  if (!question.ground_truth)
    throw Error(ErrorCode::MissingGroundTruth, "question " + question.id + " has no ground truth");
  return std::string(text::trim(question.text + " " + *question.ground_truth));
}

inline RetrievalRun retrieve_standard(const Question& question, const Corpus& corpus,
                                      const RetrievalStrategy& strategy, Gateway& gateway) {
  if (strategy.kind != RetrievalKind::Standard)
    throw Error(ErrorCode::InvalidArgument, "strategy kind must be standard");
  return retrieve_with_query(standard_query_text(question), corpus, strategy, gateway);
}

inline RetrievalRun retrieve_hyde(const Question& question, const Corpus& corpus, const RetrievalStrategy& strategy,
                                  Gateway& gateway) {
  if (strategy.kind != RetrievalKind::Hyde) throw Error(ErrorCode::InvalidArgument, "strategy kind must be hyde");
  auto hypothetical = gateway.generate_hypothetical(question.text);
  return retrieve_with_query(text::strip_citations(hypothetical.text), corpus, strategy, gateway);
}

inline RetrievalRun retrieve(const Question& question, const Corpus& corpus, const RetrievalStrategy& strategy,
                             Gateway& gateway) {
  switch (strategy.kind) {
    case RetrievalKind::Plain: return retrieve_plain(question, corpus, strategy, gateway);
    case RetrievalKind::Standard: return retrieve_standard(question, corpus, strategy, gateway);
    case RetrievalKind::Hyde: return retrieve_hyde(question, corpus, strategy, gateway);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown retrieval kind");
}

/// Chunks of a run in rank order.
inline std::vector<Chunk> run_chunks(const RetrievalRun& run, const Corpus& corpus) {
  std::vector<Chunk> out;
  out.reserve(run.results.size());
  for (const auto& r : run.results) out.push_back(corpus.at(r.chunk_id));
  return out;
}

/// relevant: cosine(chunk, ground truth) >= theta.
/// negative: not relevant, cosine(chunk, question) >= theta, and the judge
///           finds no support for the ground truth in the chunk.
/// irrelevant: everything else, and every chunk when there is no ground truth.
inline RetrievalRun classify_relevance(RetrievalRun run, const Question& question, const Corpus& corpus,
                                       Gateway& gateway, double theta = MetricWeights{}.theta) {
  if (!question.ground_truth || text::trim(*question.ground_truth).empty()) {
    for (auto& r : run.results) r.relevance = RelevanceClass::Irrelevant;
    return run;
  }
  const auto gt = gateway.embed_one(*question.ground_truth);
  const auto q = gateway.embed_one(question.text);
  for (auto& r : run.results) {
    const Chunk& c = corpus.at(r.chunk_id);
    if (cosine(c.embedding, gt) >= theta) {
      r.relevance = RelevanceClass::Relevant;
    } else if (cosine(c.embedding, q) >= theta &&
               gateway.judge_fact_support(*question.ground_truth, std::span<const Chunk>(&c, 1)).score == 0.0) {
      r.relevance = RelevanceClass::Negative;
    } else {
      r.relevance = RelevanceClass::Irrelevant;
    }
  }
  return run;
}

// ---------------------------------------------------------------------------

struct RelinkEdge {
  std::size_t run_a = 0;
  std::size_t rank_a = 0;
  std::size_t run_b = 0;
  std::size_t rank_b = 0;

  friend bool operator==(const RelinkEdge&, const RelinkEdge&) = default;
  friend auto operator<=>(const RelinkEdge&, const RelinkEdge&) = default;
};

struct ChunkRelinkData {
  std::vector<RetrievalRun> runs;
  std::vector<RelinkEdge> links;
  std::vector<std::vector<double>> node_sizes;  // [run][rank] = similarity
};

/// Links every pair of nodes in different runs that carry the same chunk id.
inline ChunkRelinkData build_chunk_relink(std::vector<RetrievalRun> runs) {
  if (runs.size() < 2 || runs.size() > 3)
    throw Error(ErrorCode::InvalidArgument, "chunk relink needs 2 or 3 runs, got " + std::to_string(runs.size()));
  ChunkRelinkData out;
  for (std::size_t a = 0; a < runs.size(); ++a) {
    for (std::size_t b = a + 1; b < runs.size(); ++b) {
      for (std::size_t ra = 0; ra < runs[a].results.size(); ++ra) {
        for (std::size_t rb = 0; rb < runs[b].results.size(); ++rb) {
          if (runs[a].results[ra].chunk_id == runs[b].results[rb].chunk_id) out.links.push_back({a, ra, b, rb});
        }
      }
    }
  }
  for (const auto& r : runs) {
    std::vector<double> sizes;
    for (const auto& c : r.results) sizes.push_back(c.similarity);
    out.node_sizes.push_back(std::move(sizes));
  }
  out.runs = std::move(runs);
  return out;
}

inline void to_json(json& j, const RelinkEdge& e) {
  j = json{{"run_a", e.run_a}, {"rank_a", e.rank_a}, {"run_b", e.run_b}, {"rank_b", e.rank_b}};
}

inline void to_json(json& j, const ChunkRelinkData& d) {
  j = json{{"runs", d.runs}, {"links", d.links}, {"node_sizes", d.node_sizes}};
}

}  // namespace ragtrace
