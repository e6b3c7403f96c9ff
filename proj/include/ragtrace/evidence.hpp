#pragma once

// Entity lexicon and entity-set comparison, citation verification, answer
// span annotation, and the entity -> chunk evidence graph.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/entities.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/retrieval.hpp"
#include "ragtrace/text.hpp"

namespace ragtrace {

/// Cache of entity expansions keyed by (entity, context hash). Readers run
/// concurrently; misses are serialized so each key reaches the gateway once.
class EntityLexicon {
 public:
  EntityLexicon() = default;

  /// Backed by a JSON file; loads it when present and rewrites it on store.
  explicit EntityLexicon(std::filesystem::path file) : file_(std::move(file)) {
    if (std::filesystem::exists(file_)) load();
  }

  EntityLexicon(const EntityLexicon&) = delete;
  EntityLexicon& operator=(const EntityLexicon&) = delete;

  static std::string key(std::string_view entity, std::uint64_t context_hash) {
    return hex64(context_hash) + "/" + std::string(entity);
  }

  std::optional<EntityExpansion> lookup(std::string_view entity, std::uint64_t context_hash) const {
    std::shared_lock lock(mu_);
    auto it = cache_.find(key(entity, context_hash));
    if (it == cache_.end()) return std::nullopt;
    return it->second;
  }

  void store(std::string_view entity, std::uint64_t context_hash, EntityExpansion value) {
    std::unique_lock lock(mu_);
    cache_[key(entity, context_hash)] = std::move(value);
    if (!file_.empty()) save_locked();
  }

  void invalidate(std::string_view entity, std::uint64_t context_hash) {
    std::unique_lock lock(mu_);
    cache_.erase(key(entity, context_hash));
    if (!file_.empty()) save_locked();
  }

  /// Union of cached synonyms for an entity across every context.
  std::set<std::string> synonyms_any_context(std::string_view entity) const {
    std::shared_lock lock(mu_);
    std::set<std::string> out;
    const std::string suffix = "/" + std::string(entity);
    for (const auto& [k, v] : cache_) {
      if (k.size() > suffix.size() && k.compare(k.size() - suffix.size(), suffix.size(), suffix) == 0 &&
          k.find('/') == k.size() - suffix.size())
        out.insert(v.synonyms.begin(), v.synonyms.end());
    }
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return cache_.size();
  }

  json to_json() const {
    std::shared_lock lock(mu_);
    return json(cache_);
  }

  /// Serializes gateway calls for cache misses.
  std::mutex& miss_mutex() const { return miss_mu_; }

 private:
  void load() {
    std::ifstream in(file_);
    if (!in) throw Error(ErrorCode::IoError, "cannot read lexicon " + file_.string());
    try {
      json j = json::parse(in);
      cache_ = j.get<std::map<std::string, EntityExpansion>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, "malformed lexicon " + file_.string() + ": " + e.what());
    }
  }

  void save_locked() const {
    const auto tmp = std::filesystem::path(file_.string() + ".tmp");
    {
      std::ofstream out(tmp);
      if (!out) throw Error(ErrorCode::IoError, "cannot write lexicon " + tmp.string());
      out << json(cache_).dump(2) << '\n';
    }
    std::filesystem::rename(tmp, file_);
  }

  std::filesystem::path file_;
  mutable std::shared_mutex mu_;
  mutable std::mutex miss_mu_;
  std::map<std::string, EntityExpansion> cache_;
};

/// Contextual synonyms and antonyms, from the lexicon when cached.
inline EntityExpansion expand_entity(std::string_view entity, std::string_view context, EntityLexicon& lexicon,
                                     Gateway& gateway) {
  if (text::trim(entity).empty()) throw Error(ErrorCode::InvalidArgument, "entity must be non-empty");
  const std::uint64_t h = fnv1a64(context);
  if (auto hit = lexicon.lookup(entity, h)) return *hit;
  std::lock_guard miss(lexicon.miss_mutex());
  if (auto hit = lexicon.lookup(entity, h)) return *hit;
  auto value = gateway.expand_entity(entity, context);
  lexicon.store(entity, h, value);
  return value;
}

// ---------------------------------------------------------------------------

struct EntitySetScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t matches = 0;
};

/// Size of a maximum one-to-one matching between answer entities (left) and
/// truth entities (right) where `matches(a, t)` says the pair may be matched.
inline std::size_t max_entity_matching(std::size_t answer_count, std::size_t truth_count,
                                       const std::function<bool(std::size_t, std::size_t)>& matches) {
  std::vector<std::vector<std::size_t>> adj(answer_count);
  for (std::size_t a = 0; a < answer_count; ++a)
    for (std::size_t t = 0; t < truth_count; ++t)
      if (matches(a, t)) adj[a].push_back(t);
  constexpr auto kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(truth_count, kFree);
  std::function<bool(std::size_t, std::vector<char>&)> augment = [&](std::size_t a, std::vector<char>& seen) {
    for (std::size_t t : adj[a]) {
      if (seen[t]) continue;
      seen[t] = 1;
      if (owner[t] == kFree || augment(owner[t], seen)) {
        owner[t] = a;
        return true;
      }
    }
    return false;
  };
  std::size_t count = 0;
  for (std::size_t a = 0; a < answer_count; ++a) {
    std::vector<char> seen(truth_count, 0);
    if (augment(a, seen)) ++count;
  }
  return count;
}

/// Precision, recall and F1 from a matching. An empty answer set scores
/// precision 1 only when the truth set is empty too; an empty truth set
/// scores recall 1.
inline EntitySetScores entity_set_scores(std::size_t answer_count, std::size_t truth_count, std::size_t matches) {
  EntitySetScores s;
  s.matches = matches;
  s.precision = answer_count == 0 ? (truth_count == 0 ? 1.0 : 0.0)
                                  : static_cast<double>(matches) / static_cast<double>(answer_count);
  s.recall = truth_count == 0 ? 1.0 : static_cast<double>(matches) / static_cast<double>(truth_count);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// An answer entity matches a truth entity when equal or when it appears in
/// the truth entity's synonym set.
inline EntitySetScores match_entities(const std::vector<std::string>& answer_entities,
                                      const std::vector<std::string>& truth_entities,
                                      const std::vector<std::set<std::string>>& truth_synonyms) {
  const auto m = max_entity_matching(answer_entities.size(), truth_entities.size(), [&](std::size_t a, std::size_t t) {
    return answer_entities[a] == truth_entities[t] ||
           (t < truth_synonyms.size() && truth_synonyms[t].count(answer_entities[a]) > 0);
  });
  return entity_set_scores(answer_entities.size(), truth_entities.size(), m);
}

inline EntitySetScores compare_entity_sets(std::string_view ground_truth, std::string_view answer,
                                           EntityLexicon& lexicon, Gateway& gateway) {
  if (text::trim(ground_truth).empty() || text::trim(answer).empty())
    throw Error(ErrorCode::InvalidArgument, "ground truth and answer must be non-empty");
  const auto truth = entity_names(ground_truth);
  const auto ans = entity_names(text::strip_citations(answer));
  std::vector<std::set<std::string>> syn;
  syn.reserve(truth.size());
  for (const auto& t : truth) {
    std::set<std::string> lowered;
    for (const auto& s : expand_entity(t, ground_truth, lexicon, gateway).synonyms)
      lowered.insert(text::lowercase(text::trim(s)));
    syn.push_back(std::move(lowered));
  }
  return match_entities(ans, truth, syn);
}

// ---------------------------------------------------------------------------

struct CitationCheck {
  bool valid = false;
  double support = 0.0;

  friend bool operator==(const CitationCheck&, const CitationCheck&) = default;
};

/// A citation is valid when the id belongs to the run and the judge finds
/// the claim supported (score >= 0.5) by the cited chunk.
inline CitationCheck verify_citation(std::string_view chunk_id, std::string_view claim, const RetrievalRun& run,
                                     const Corpus& corpus, Gateway& gateway) {
  if (text::trim(claim).empty()) throw Error(ErrorCode::InvalidArgument, "claim must be non-empty");
  if (!run.contains(chunk_id)) return {false, 0.0};
  const Chunk* c = corpus.find(chunk_id);
  if (c == nullptr) return {false, 0.0};
  const double s = clamp_unit(gateway.judge_fact_support(claim, std::span<const Chunk>(c, 1)).score);
  return {s >= 0.5, s};
}

// ---------------------------------------------------------------------------

enum class SpanClass { NamedEntity, EvidenceSupported, Uncertain };

NLOHMANN_JSON_SERIALIZE_ENUM(SpanClass, {{SpanClass::NamedEntity, "named_entity"},
                                         {SpanClass::EvidenceSupported, "evidence_supported"},
                                         {SpanClass::Uncertain, "uncertain"}})

struct AnnotatedSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  SpanClass cls = SpanClass::Uncertain;
  std::set<std::string> supporting_chunk_ids;

  friend bool operator==(const AnnotatedSpan&, const AnnotatedSpan&) = default;
};

struct AnnotatedAnswer {
  std::string text;
  std::vector<AnnotatedSpan> spans;  // ordered, disjoint, tiling the sentences

  friend bool operator==(const AnnotatedAnswer&, const AnnotatedAnswer&) = default;
};

/// Entity spans are named_entity; the rest of each sentence takes the
/// sentence's class: evidence_supported when some retrieved chunk supports
/// its claim (judge >= 0.5), else uncertain.
inline AnnotatedAnswer annotate_answer(const GenerationResult& answer, const RetrievalRun& run, const Corpus& corpus,
                                       Gateway& gateway) {
  if (text::trim(answer.text).empty()) throw Error(ErrorCode::InvalidArgument, "answer must be non-empty");
  AnnotatedAnswer out;
  out.text = answer.text;
  const auto chunks = run_chunks(run, corpus);
  const auto mentions = find_entity_mentions(out.text);

  for (const auto& sent : text::sentence_spans(out.text)) {
    std::set<std::string> support;
    const auto claim = text::claim_text(std::string_view(out.text).substr(sent.start, sent.size()));
    if (!text::trim(claim).empty()) {
      for (const auto& c : chunks) {
        if (gateway.judge_fact_support(claim, std::span<const Chunk>(&c, 1)).score >= 0.5) support.insert(c.id);
      }
    }
    const SpanClass sentence_class = support.empty() ? SpanClass::Uncertain : SpanClass::EvidenceSupported;

    std::size_t pos = sent.start;
    auto emit_gap = [&](std::size_t until) {
      if (until > pos) out.spans.push_back({pos, until, sentence_class, support});
      pos = until;
    };
    for (const auto& m : mentions) {
      const std::size_t s = std::max(m.span.start, sent.start);
      const std::size_t e = std::min(m.span.end, sent.end);
      if (s >= e || s < pos) continue;
      emit_gap(s);
      std::set<std::string> holders;
      for (const auto& c : chunks)
        if (text::contains_ci(c.text, m.entity)) holders.insert(c.id);
      out.spans.push_back({s, e, SpanClass::NamedEntity, std::move(holders)});
      pos = e;
    }
    emit_gap(sent.end);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EvidenceEdge {
  std::string entity;
  std::string chunk_id;
  double support_score = 0.0;

  friend bool operator==(const EvidenceEdge&, const EvidenceEdge&) = default;
};

struct EvidenceGraph {
  std::vector<std::string> entity_nodes;
  std::vector<std::string> chunk_nodes;
  std::vector<EvidenceEdge> edges;

  friend bool operator==(const EvidenceGraph&, const EvidenceGraph&) = default;
};

inline constexpr double kLiteralSupport = 1.0;
inline constexpr double kSynonymSupport = 0.7;

/// One edge per (entity, chunk) where the chunk text contains the entity
/// (1.0) or, failing that, one of its cached synonyms (0.7).
inline EvidenceGraph build_evidence_graph(const AnnotatedAnswer& annotated, const RetrievalRun& run,
                                          const Corpus& corpus, const EntityLexicon* lexicon = nullptr) {
  EvidenceGraph g;
  for (const auto& s : annotated.spans) {
    if (s.cls != SpanClass::NamedEntity) continue;
    auto name = text::lowercase(std::string_view(annotated.text).substr(s.start, s.end - s.start));
    if (std::find(g.entity_nodes.begin(), g.entity_nodes.end(), name) == g.entity_nodes.end())
      g.entity_nodes.push_back(std::move(name));
  }
  g.chunk_nodes = run.ids();
  for (const auto& e : g.entity_nodes) {
    const auto synonyms = lexicon != nullptr ? lexicon->synonyms_any_context(e) : std::set<std::string>{};
    for (const auto& id : g.chunk_nodes) {
      const Chunk* c = corpus.find(id);
      if (c == nullptr) continue;
      if (text::contains_ci(c->text, e)) {
        g.edges.push_back({e, id, kLiteralSupport});
      } else if (std::any_of(synonyms.begin(), synonyms.end(),
                             [&](const std::string& syn) { return !syn.empty() && text::contains_ci(c->text, syn); })) {
        g.edges.push_back({e, id, kSynonymSupport});
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

inline void to_json(json& j, const EntitySetScores& s) {
  j = json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

inline void to_json(json& j, const AnnotatedSpan& s) {
  j = json{{"start", s.start}, {"end", s.end}, {"class", s.cls}, {"supporting_chunk_ids", s.supporting_chunk_ids}};
}
inline void from_json(const json& j, AnnotatedSpan& s) {
  j.at("start").get_to(s.start);
  j.at("end").get_to(s.end);
  j.at("class").get_to(s.cls);
  s.supporting_chunk_ids = j.value("supporting_chunk_ids", std::set<std::string>{});
}

inline void to_json(json& j, const AnnotatedAnswer& a) { j = json{{"text", a.text}, {"spans", a.spans}}; }
inline void from_json(const json& j, AnnotatedAnswer& a) {
  j.at("text").get_to(a.text);
  j.at("spans").get_to(a.spans);
}

inline void to_json(json& j, const EvidenceGraph& g) {
  json nodes = json::array();
  for (const auto& e : g.entity_nodes) nodes.push_back({{"id", e}, {"kind", "entity"}});
  for (const auto& c : g.chunk_nodes) nodes.push_back({{"id", c}, {"kind", "chunk"}});
  json edges = json::array();
  for (const auto& e : g.edges)
    edges.push_back({{"entity", e.entity}, {"chunk_id", e.chunk_id}, {"support_score", e.support_score}});
  j = json{{"nodes", nodes}, {"edges", edges}};
}

}  // namespace ragtrace
