#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/experiment.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/mock_gateway.hpp"
#include "ragtrace/projection.hpp"

namespace ragtrace::testing {

inline std::filesystem::path source_dir() { return RAGTRACE_SOURCE_DIR; }
inline std::filesystem::path mini_corpus_dir() { return source_dir() / "data" / "mini"; }
inline std::filesystem::path golden_path() { return source_dir() / "tests" / "golden" / "mini_e2e.json"; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ragtrace-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Embedding random_vector(SeededRng& rng, std::size_t dim) {
  Embedding v(dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

inline Embedding normalized(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

inline Chunk make_chunk(std::string id, std::string text, Embedding e, std::string doc = "doc") {
  Chunk c;
  c.id = std::move(id);
  c.text = std::move(text);
  c.source_doc = std::move(doc);
  c.embedding = std::move(e);
  return c;
}

/// Corpus over the given embeddings with ids "k0000", "k0001", ...
inline Corpus corpus_from_embeddings(const std::vector<Embedding>& vecs, std::string embedder = "test") {
  std::vector<Chunk> chunks;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "k%04zu", i);
    chunks.push_back(make_chunk(id, "chunk " + std::to_string(i), vecs[i]));
  }
  const std::size_t dim = vecs.empty() ? 0 : vecs[0].size();
  return Corpus(std::move(chunks), dim, std::move(embedder), "2024-01-01T00:00:00Z");
}

/// Results of the bundled mini-corpus pipeline.
struct E2eResult {
  Corpus corpus;
  ExperimentRun run;
  ProjectionState projection;
  GridDensity grid;
  json radar;
};

/// ingest -> eval -> project -> radar with the mock backend and defaults.
inline E2eResult run_mini_pipeline(Gateway& gateway) {
  E2eResult r;
  const auto docs = read_documents_jsonl(mini_corpus_dir() / "docs.jsonl");
  r.corpus = embed_chunks(chunk_documents(docs, ChunkingConfig{}), gateway, ChunkingConfig{});
  const auto questions = read_questions_jsonl(mini_corpus_dir() / "questions.jsonl");
  SamplingConfig cfg;
  cfg.num_questions = static_cast<int>(questions.size());
  r.run = execute_run(questions, r.corpus, RetrievalStrategy{}, cfg, gateway, MetricWeights{});
  r.projection = fit_projection(r.corpus);
  r.grid = grid_density(r.projection);
  r.radar = radar_json(radar_data({r.run}));
  return r;
}

/// Timestamp-free encoding compared against the golden file.
inline std::string canonical_e2e(const Corpus& corpus, const ExperimentRun& run, const ProjectionState& projection,
                                 const GridDensity& grid, const json& radar) {
  const json j{{"corpus", {{"chunks", corpus.size()}, {"content_hash", hex64(corpus.content_hash())}}},
               {"run", canonical_run_json(run)},
               {"projection", projection_export(projection, grid)},
               {"radar", radar}};
  return j.dump() + "\n";
}

inline std::string canonical_e2e(const E2eResult& r) {
  return canonical_e2e(r.corpus, r.run, r.projection, r.grid, r.radar);
}

}  // namespace ragtrace::testing
