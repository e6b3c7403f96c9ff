#pragma once

// Corpus ingestion: chunking, embedding, the flat cosine index, and the
// on-disk corpus format.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/text.hpp"

namespace ragtrace {

enum class SplitMode { ParagraphThenWindow, FixedWindow };

struct ChunkingConfig {
  int max_tokens = 256;
  int overlap_tokens = 32;
  SplitMode split_on = SplitMode::ParagraphThenWindow;

  friend bool operator==(const ChunkingConfig&, const ChunkingConfig&) = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(SplitMode, {{SplitMode::ParagraphThenWindow, "paragraph_then_window"},
                                         {SplitMode::FixedWindow, "fixed_window"}})

inline void to_json(json& j, const ChunkingConfig& c) {
  j = json{{"max_tokens", c.max_tokens}, {"overlap_tokens", c.overlap_tokens}, {"split_on", c.split_on}};
}
inline void from_json(const json& j, ChunkingConfig& c) {
  ChunkingConfig d;
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.overlap_tokens = j.value("overlap_tokens", d.overlap_tokens);
  c.split_on = j.value("split_on", d.split_on);
}

inline void validate(const ChunkingConfig& c) {
  if (c.max_tokens < 1) throw Error(ErrorCode::InvalidArgument, "max_tokens must be >= 1");
  if (c.overlap_tokens < 0 || c.overlap_tokens >= c.max_tokens)
    throw Error(ErrorCode::InvalidArgument, "overlap_tokens must lie in [0, max_tokens)");
}

inline std::string content_id(std::string_view text) { return "c" + hex64(fnv1a64(text)); }

/// Content-hash ids; repeated texts get "-2", "-3", ... suffixes in order.
inline void assign_unique_ids(std::vector<Chunk>& chunks) {
  std::unordered_map<std::string, int> seen;
  for (auto& c : chunks) {
    const std::string base = content_id(c.text);
    const int n = ++seen[base];
    c.id = n == 1 ? base : base + "-" + std::to_string(n);
  }
}

/// Sliding-window chunking over whitespace tokens. Windows advance by
/// max_tokens - overlap_tokens; the last window ends at the final token.
inline std::vector<Chunk> chunk_document(std::string_view doc_text, std::string_view source_doc,
                                         const ChunkingConfig& cfg = {}) {
  validate(cfg);
  if (text::trim(doc_text).empty()) throw Error(ErrorCode::EmptyDocument, "document '" + std::string(source_doc) + "' is empty");

  std::vector<std::vector<std::string>> blocks;
  if (cfg.split_on == SplitMode::FixedWindow) {
    blocks.push_back(text::words(doc_text));
  } else {
    // Paragraphs are separated by blank lines.
    std::size_t pos = 0;
    while (pos <= doc_text.size()) {
      std::size_t end = doc_text.find("\n\n", pos);
      if (end == std::string_view::npos) end = doc_text.size();
      auto w = text::words(doc_text.substr(pos, end - pos));
      if (!w.empty()) blocks.push_back(std::move(w));
      pos = end + 2;
    }
  }

  const auto max = static_cast<std::size_t>(cfg.max_tokens);
  const auto step = static_cast<std::size_t>(cfg.max_tokens - cfg.overlap_tokens);
  std::vector<Chunk> out;
  for (const auto& toks : blocks) {
    for (std::size_t start = 0;; start += step) {
      const std::size_t end = std::min(toks.size(), start + max);
      std::string t;
      for (std::size_t i = start; i < end; ++i) {
        if (i > start) t.push_back(' ');
        t += toks[i];
      }
      Chunk c;
      c.text = std::move(t);
      c.source_doc = std::string(source_doc);
      c.position = static_cast<std::int64_t>(out.size());
      out.push_back(std::move(c));
      if (end == toks.size()) break;
    }
  }
  assign_unique_ids(out);
  return out;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::DimensionMismatch,
                "vectors of dimension " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroNormEmbedding, "cosine of a zero vector is undefined");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// An immutable, embedded chunk collection with a flat exact index.
class Corpus {
 public:
  Corpus() = default;

  Corpus(std::vector<Chunk> chunks, std::size_t dimension, std::string embedder_id, std::string created_at,
         ChunkingConfig chunking = {})
      : chunks_(std::move(chunks)),
        dimension_(dimension),
        embedder_id_(std::move(embedder_id)),
        created_at_(std::move(created_at)),
        chunking_(chunking) {
    norms_.reserve(chunks_.size());
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      const auto& c = chunks_[i];
      if (c.text.empty()) throw Error(ErrorCode::InvalidArgument, "chunk " + c.id + " has empty text");
      if (c.embedding.size() != dimension_)
        throw Error(ErrorCode::DimensionMismatch, "chunk " + c.id + " has dimension " +
                                                      std::to_string(c.embedding.size()) + ", corpus D=" +
                                                      std::to_string(dimension_));
      const double n = norm(c.embedding);
      if (!(n > 0.0) || !std::isfinite(n))
        throw Error(ErrorCode::ZeroNormEmbedding, "chunk " + c.id + " has a zero or non-finite embedding");
      norms_.push_back(n);
      if (!index_.emplace(c.id, i).second) throw Error(ErrorCode::DuplicateId, "duplicate chunk id " + c.id);
    }
  }

  const std::vector<Chunk>& chunks() const { return chunks_; }
  std::size_t size() const { return chunks_.size(); }
  bool empty() const { return chunks_.empty(); }
  std::size_t dimension() const { return dimension_; }
  const std::string& embedder_id() const { return embedder_id_; }
  const std::string& created_at() const { return created_at_; }
  const ChunkingConfig& chunking() const { return chunking_; }

  const Chunk* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &chunks_[it->second];
  }

  const Chunk& at(std::string_view id) const {
    if (const Chunk* c = find(id)) return *c;
    throw Error(ErrorCode::NotFound, "chunk " + std::string(id) + " not in corpus");
  }

  /// Cosine of a query (with precomputed norm) against chunk i.
  double similarity(std::size_t i, std::span<const float> query, double query_norm) const {
    return std::clamp(dot(chunks_[i].embedding, query) / (norms_[i] * query_norm), -1.0, 1.0);
  }

  /// Hash over chunk ids, texts and embedding bytes.
  std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a64(std::to_string(dimension_));
    for (const auto& c : chunks_) {
      h = fnv1a64(c.id, h);
      h = fnv1a64(c.text, h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(c.embedding.data()),
                                   c.embedding.size() * sizeof(float)),
                  h);
    }
    return h;
  }

  friend bool operator==(const Corpus& a, const Corpus& b) {
    return a.chunks_ == b.chunks_ && a.dimension_ == b.dimension_ && a.embedder_id_ == b.embedder_id_ &&
           a.created_at_ == b.created_at_ && a.chunking_ == b.chunking_;
  }

 private:
  std::vector<Chunk> chunks_;
  std::size_t dimension_ = 0;
  std::string embedder_id_;
  std::string created_at_;
  ChunkingConfig chunking_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ScoredChunk {
  const Chunk* chunk = nullptr;
  double similarity = 0.0;
};

/// Cosine similarity of the query to every chunk accepted by `keep`.
inline std::vector<ScoredChunk> score_all(const Corpus& corpus, std::span<const float> query,
                                          const std::function<bool(const Chunk&)>& keep = {}) {
  if (query.size() != corpus.dimension())
    throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(query.size()) +
                                                  " != corpus dimension " + std::to_string(corpus.dimension()));
  const double qn = norm(query);
  if (!(qn > 0.0)) throw Error(ErrorCode::ZeroNormEmbedding, "query embedding has zero norm");
  std::vector<ScoredChunk> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Chunk& c = corpus.chunks()[i];
    if (keep && !keep(c)) continue;
    out.push_back({&c, corpus.similarity(i, query, qn)});
  }
  return out;
}

inline bool ranks_before(const ScoredChunk& a, const ScoredChunk& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.chunk->id < b.chunk->id;
}

/// Exact top-k: cosine descending, ties by chunk id ascending.
inline std::vector<ScoredChunk> top_k(const Corpus& corpus, std::span<const float> query, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  auto all = score_all(corpus, query);
  const auto n = std::min(all.size(), static_cast<std::size_t>(k));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), ranks_before);
  all.resize(n);
  return all;
}

/// Embeds chunks in batches through the gateway; order is preserved.
inline Corpus embed_chunks(std::vector<Chunk> chunks, Gateway& gateway, const ChunkingConfig& chunking = {},
                           std::size_t batch_size = 64) {
  if (chunks.empty()) return Corpus({}, gateway.dimension(), gateway.id(), utc_timestamp(), chunking);
  std::size_t dim = 0;
  for (std::size_t begin = 0; begin < chunks.size(); begin += batch_size) {
    const std::size_t end = std::min(chunks.size(), begin + batch_size);
    std::vector<std::string> texts;
    for (std::size_t i = begin; i < end; ++i) texts.push_back(chunks[i].text);
    std::vector<Embedding> vecs;
    try {
      vecs = gateway.embed(texts);
    } catch (const Error& e) {
      throw Error(e.code(), "embedding chunks [" + std::to_string(begin) + "," + std::to_string(end) + "): " + e.what());
    }
    for (std::size_t i = begin; i < end; ++i) {
      auto& v = vecs[i - begin];
      if (dim == 0) dim = v.size();
      if (v.size() != dim)
        throw Error(ErrorCode::DimensionMismatch, "gateway returned dimension " + std::to_string(v.size()) +
                                                      " after " + std::to_string(dim) + " (chunk " +
                                                      std::to_string(i) + ")");
      chunks[i].embedding = std::move(v);
    }
  }
  return Corpus(std::move(chunks), dim, gateway.id(), utc_timestamp(), chunking);
}

struct Document {
  std::string doc_id;
  std::string text;
};

/// JSON values of a JSONL text, one per non-blank line. `origin` names the
/// source in error messages.
inline std::vector<json> parse_jsonl(std::string_view content, std::string_view origin = "<input>") {
  std::vector<json> out;
  std::size_t lineno = 0, pos = 0;
  while (pos <= content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    const auto line = content.substr(pos, end - pos);
    ++lineno;
    if (!text::trim(line).empty()) {
      try {
        out.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    pos = end + 1;
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Document document_from_json(const json& j) {
  try {
    return {j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("document needs string doc_id and text: ") + e.what());
  }
}

/// One {"doc_id": str, "text": str} object per line; blank lines skipped.
inline std::vector<Document> parse_documents_jsonl(std::string_view content, std::string_view origin = "<input>") {
  std::vector<Document> docs;
  for (const auto& j : parse_jsonl(content, origin)) docs.push_back(document_from_json(j));
  return docs;
}

inline std::vector<Document> read_documents_jsonl(const std::filesystem::path& path) {
  return parse_documents_jsonl(read_text_file(path), path.string());
}

/// One Question object per line.
inline std::vector<Question> read_questions_jsonl(const std::filesystem::path& path) {
  std::vector<Question> out;
  std::size_t index = 0;
  for (const auto& j : parse_jsonl(read_text_file(path), path.string())) {
    try {
      out.push_back(j.get<Question>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, path.string() + ": question " + std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  return out;
}

inline std::vector<Chunk> chunk_documents(const std::vector<Document>& docs, const ChunkingConfig& cfg) {
  std::vector<Chunk> all;
  for (const auto& d : docs) {
    auto cs = chunk_document(d.text, d.doc_id, cfg);
    all.insert(all.end(), std::make_move_iterator(cs.begin()), std::make_move_iterator(cs.end()));
  }
  assign_unique_ids(all);
  return all;
}

// ---------------------------------------------------------------------------
// Persisted corpus: manifest.json + chunks.jsonl + embeddings.f32
// (little-endian float32, row-major, rows in chunks.jsonl order).

inline constexpr int kCorpusFormatVersion = 1;

namespace detail {

inline void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());

  const json manifest = {{"version", kCorpusFormatVersion},    {"dimension", corpus.dimension()},
                         {"embedder_id", corpus.embedder_id()}, {"created_at", corpus.created_at()},
                         {"chunking", corpus.chunking()},       {"count", corpus.size()}};
  std::ofstream m(dir / "manifest.json");
  std::ofstream c(dir / "chunks.jsonl");
  std::ofstream e(dir / "embeddings.f32", std::ios::binary);
  if (!m || !c || !e) throw Error(ErrorCode::IoError, "cannot write corpus files in " + dir.string());
  m << manifest.dump(2) << "\n";
  for (const auto& ch : corpus.chunks()) {
    c << json{{"id", ch.id}, {"text", ch.text}, {"source_doc", ch.source_doc}, {"position", ch.position}}.dump()
      << "\n";
    for (float v : ch.embedding) detail::write_f32_le(e, v);
  }
  if (!m || !c || !e) throw Error(ErrorCode::IoError, "write failed in " + dir.string());
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream m(dir / "manifest.json");
  if (!m) throw Error(ErrorCode::IoError, "cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("manifest.json is not valid JSON: ") + e.what());
  }
  const int version = manifest.value("version", -1);
  if (version != kCorpusFormatVersion)
    throw Error(ErrorCode::FormatVersionMismatch,
                "corpus format version " + std::to_string(version) + ", expected " + std::to_string(kCorpusFormatVersion));

  std::size_t dim = 0, count = 0;
  std::string embedder_id, created_at;
  ChunkingConfig chunking;
  try {
    dim = manifest.at("dimension").get<std::size_t>();
    count = manifest.at("count").get<std::size_t>();
    embedder_id = manifest.at("embedder_id").get<std::string>();
    created_at = manifest.at("created_at").get<std::string>();
    chunking = manifest.value("chunking", ChunkingConfig{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("manifest.json: ") + e.what());
  }

  std::vector<Chunk> chunks;
  chunks.reserve(count);
  std::ifstream c(dir / "chunks.jsonl");
  if (!c) throw Error(ErrorCode::IoError, "cannot open " + (dir / "chunks.jsonl").string());
  std::string line;
  while (std::getline(c, line)) {
    if (text::trim(line).empty()) continue;
    try {
      chunks.push_back(json::parse(line).get<Chunk>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, std::string("chunks.jsonl: ") + e.what());
    }
  }
  if (chunks.size() != count)
    throw Error(ErrorCode::IoError, "chunks.jsonl holds " + std::to_string(chunks.size()) + " rows, manifest says " +
                                        std::to_string(count));

  std::ifstream e(dir / "embeddings.f32", std::ios::binary);
  if (!e) throw Error(ErrorCode::IoError, "cannot open " + (dir / "embeddings.f32").string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(e)), std::istreambuf_iterator<char>());
  if (bytes.size() != count * dim * 4)
    throw Error(ErrorCode::IoError, "embeddings.f32 has " + std::to_string(bytes.size()) + " bytes, expected " +
                                        std::to_string(count * dim * 4));
  for (std::size_t i = 0; i < count; ++i) {
    auto& emb = chunks[i].embedding;
    emb.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) emb[d] = detail::read_f32_le(&bytes[(i * dim + d) * 4]);
  }
  return Corpus(std::move(chunks), dim, std::move(embedder_id), std::move(created_at), chunking);
}

}  // namespace ragtrace
