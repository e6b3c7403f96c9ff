#pragma once

// HTTP JSON API over the application state: corpus, questions, projection,
// experiment runs, and entity lexicon. Long jobs (projection fits and runs)
// execute off the request path and are polled.

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "ragtrace/api_schema.hpp"
#include "ragtrace/core.hpp"
#include "ragtrace/diagnostics.hpp"
#include "ragtrace/evidence.hpp"
#include "ragtrace/experiment.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/projection.hpp"
#include "ragtrace/retrieval.hpp"

namespace ragtrace {

inline constexpr int kDefaultPort = 8642;

/// HTTP status for an error code.
inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::FocusNotFound:
      return 404;
    case ErrorCode::StateNotReady:
    case ErrorCode::MissingPriorRecords:
    case ErrorCode::MissingGroundTruth:
    case ErrorCode::NoCommonQuestions:
    case ErrorCode::EmptyRetrieval:
      return 409;
    case ErrorCode::IoError:
    case ErrorCode::GatewayError:
    case ErrorCode::Timeout:
    case ErrorCode::ConfidenceUnavailable:
      return 500;
    default:
      return 400;
  }
}

inline json error_envelope(std::string_view code, std::string_view message, json detail = nullptr) {
  return json{{"code", code}, {"message", message}, {"detail", std::move(detail)}};
}

inline json error_envelope(const Error& e) {
  return error_envelope(to_string(e.code()), e.what(), json{{"http_status", http_status(e.code())}});
}

// ---------------------------------------------------------------------------

struct JobStatus {
  std::string job_id;
  std::string kind;
  std::string status = "running";  // running | done | failed
  json error = nullptr;
  json result = nullptr;
};

inline void to_json(json& j, const JobStatus& s) {
  j = json{{"job_id", s.job_id}, {"kind", s.kind}, {"status", s.status}, {"error", s.error}, {"result", s.result}};
}

/// Background jobs with sequential ids. Destruction waits for running jobs.
class JobManager {
 public:
  JobManager() = default;
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;
  ~JobManager() { wait_all(); }

  std::string start(std::string kind, std::function<json()> work) {
    std::lock_guard lock(mu_);
    const std::string id = "job-" + std::to_string(++counter_);
    jobs_[id] = JobStatus{id, std::move(kind)};
    threads_.emplace_back([this, id, work = std::move(work)] {
      JobStatus update;
      try {
        update.result = work();
        update.status = "done";
      } catch (const Error& e) {
        update.status = "failed";
        update.error = error_envelope(e);
      } catch (const std::exception& e) {
        update.status = "failed";
        update.error = error_envelope("Internal", e.what());
      }
      std::lock_guard inner(mu_);
      auto& job = jobs_[id];
      job.status = update.status;
      job.result = std::move(update.result);
      job.error = std::move(update.error);
    });
    return id;
  }

  std::optional<JobStatus> get(std::string_view id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(std::string(id));
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  void wait_all() {
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu_);
      threads.swap(threads_);
    }
    for (auto& t : threads)
      if (t.joinable()) t.join();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, JobStatus> jobs_;
  std::vector<std::thread> threads_;
  std::size_t counter_ = 0;
};

// ---------------------------------------------------------------------------

struct AppConfig {
  std::filesystem::path data_dir = "ragtrace-data";  // holds runs/ and lexicon.json
  MetricWeights weights;
  DiagnosticsOptions diagnostics;
  int grid_resolution = 200;
};

/// Single-corpus application state. Fields are guarded by a readers-writer
/// lock; readers copy shared pointers and work on immutable snapshots.
class AppState {
 public:
  AppState(std::shared_ptr<Gateway> gateway, AppConfig cfg)
      : gateway_(std::move(gateway)),
        cfg_(std::move(cfg)),
        runs_(cfg_.data_dir / "runs"),
        lexicon_(cfg_.data_dir / "lexicon.json") {
    validate_weights(cfg_.weights);
  }

  Gateway& gateway() { return *gateway_; }
  const AppConfig& config() const { return cfg_; }
  RunStore& runs() { return runs_; }
  EntityLexicon& lexicon() { return lexicon_; }
  JobManager& jobs() { return jobs_; }

  std::shared_ptr<const Corpus> corpus() const {
    std::shared_lock lock(mu_);
    return corpus_;
  }

  std::shared_ptr<const Corpus> require_corpus() const {
    auto c = corpus();
    if (!c) throw Error(ErrorCode::StateNotReady, "no corpus loaded");
    return c;
  }

  void set_corpus(std::shared_ptr<const Corpus> c) {
    std::unique_lock lock(mu_);
    corpus_ = std::move(c);
    projection_.reset();
    grid_.reset();
    projection_job_.reset();
  }

  struct ProjectionSnapshot {
    std::shared_ptr<const ProjectionState> state;
    std::shared_ptr<const GridDensity> grid;
    std::optional<std::string> job_id;
  };

  ProjectionSnapshot projection() const {
    std::shared_lock lock(mu_);
    return {projection_, grid_, projection_job_};
  }

  void set_projection_job(std::string id) {
    std::unique_lock lock(mu_);
    projection_job_ = std::move(id);
  }

  /// Installs a fitted projection unless the corpus changed meanwhile.
  bool install_projection(std::shared_ptr<const ProjectionState> state, std::shared_ptr<const GridDensity> grid) {
    std::unique_lock lock(mu_);
    if (!corpus_ || corpus_->content_hash() != state->corpus_hash) return false;
    projection_ = std::move(state);
    grid_ = std::move(grid);
    return true;
  }

  std::vector<Question> questions() const {
    std::shared_lock lock(mu_);
    return questions_;
  }

  void set_questions(std::vector<Question> qs) {
    std::unique_lock lock(mu_);
    questions_ = std::move(qs);
  }

  std::optional<Question> find_question(std::string_view id) const {
    std::shared_lock lock(mu_);
    for (const auto& q : questions_)
      if (q.id == id) return q;
    return std::nullopt;
  }

  std::optional<std::string> latest_run_id() const {
    std::shared_lock lock(mu_);
    if (latest_run_id_) return latest_run_id_;
    const auto runs = runs_.list();
    if (runs.empty()) return std::nullopt;
    return runs.back().run_id;
  }

  void set_latest_run(std::string id) {
    std::unique_lock lock(mu_);
    latest_run_id_ = std::move(id);
  }

  /// The named run, or the latest one.
  std::optional<ExperimentRun> run_or_latest(const std::string& run_id) {
    if (!run_id.empty()) return runs_.load(run_id);
    const auto latest = latest_run_id();
    if (!latest) return std::nullopt;
    return runs_.load(*latest);
  }

 private:
  std::shared_ptr<Gateway> gateway_;
  AppConfig cfg_;
  mutable std::shared_mutex mu_;
  std::shared_ptr<const Corpus> corpus_;
  std::shared_ptr<const ProjectionState> projection_;
  std::shared_ptr<const GridDensity> grid_;
  std::optional<std::string> projection_job_;
  std::vector<Question> questions_;
  std::optional<std::string> latest_run_id_;
  RunStore runs_;
  EntityLexicon lexicon_;
  JobManager jobs_;
};

// ---------------------------------------------------------------------------
// Request handling, independent of the HTTP transport.

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> params;
  std::string body;
  std::string content_type;
};

struct ApiResponse {
  int status = 200;
  json body;
};

inline json corpus_summary(const Corpus& c) {
  return json{{"chunks", c.size()},          {"dimension", c.dimension()},
              {"embedder_id", c.embedder_id()}, {"created_at", c.created_at()},
              {"content_hash", hex64(c.content_hash())}, {"chunking", c.chunking()}};
}

inline json point_json(double x, double y) { return json{{"x", x}, {"y", y}}; }

/// OpenAPI description; response schemas come from the shipped schema file.
inline json openapi_document() {
  const json defs = json::parse(kApiSchemaJson).at("$defs");
  json schemas = json::object();
  for (const auto& [name, schema] : defs.items()) {
    // Rewrite local refs to the components section.
    std::string text = schema.dump();
    const std::string from = "#/$defs/", to = "#/components/schemas/";
    for (std::size_t pos = 0; (pos = text.find(from, pos)) != std::string::npos; pos += to.size())
      text.replace(pos, from.size(), to);
    schemas[name] = json::parse(text);
  }
  auto op = [](std::string summary, std::string schema, json extra = json::object()) {
    json o = {{"summary", std::move(summary)},
              {"responses",
               {{"200", {{"description", "OK"},
                         {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/" + schema}}}}}}}}},
                {"default", {{"description", "Error"},
                             {"content",
                              {{"application/json", {{"schema", {{"$ref", "#/components/schemas/ErrorEnvelope"}}}}}}}}}}}};
    o.update(extra);
    return o;
  };
  json accepted = {{"responses",
                    {{"202", {{"description", "Accepted"},
                              {"content",
                               {{"application/json", {{"schema", {{"$ref", "#/components/schemas/JobAccepted"}}}}}}}}}}}};
  json paths = {
      {"/api/health", {{"get", op("Service health", "Health")}}},
      {"/api/corpus", {{"post", op("Load a persisted corpus or ingest JSONL documents", "CorpusSummary")},
                       {"get", op("Current corpus summary", "CorpusSummary")}}},
      {"/api/questions", {{"post", op("Upload the question set", "QuestionsReport")}}},
      {"/api/projection", {{"post", op("Start a projection fit", "JobAccepted", accepted)},
                           {"get", op("Projection points, grid and KL history (202 while fitting)", "Projection")}}},
      {"/api/jobs/{id}", {{"get", op("Background job status", "Job")}}},
      {"/api/cells/{i}/{j}/topics", {{"get", op("Topic keywords of a grid cell (i = row, j = column)", "CellTopics")}}},
      {"/api/search", {{"post", op("Rank questions against a query", "SearchResponse")}}},
      {"/api/questions/{id}/details", {{"get", op("Evaluation record with annotated answer", "QuestionDetails")}}},
      {"/api/questions/{id}/chunklink", {{"get", op("Chunk-Relink comparison of retrieval strategies", "ChunkRelink")}}},
      {"/api/questions/{id}/evidence", {{"get", op("Evidence graph and annotated answer", "EvidenceResponse")}}},
      {"/api/experiments", {{"post", op("Start an experiment run", "JobAccepted", accepted)},
                            {"get", op("List runs in creation order", "RunList")}}},
      {"/api/experiments/{id}", {{"get", op("A stored run", "ExperimentRun")}}},
      {"/api/experiments/{id}/radar", {{"get", op("Radar chart data for a run and optional comparisons", "Radar")}}},
      {"/api/failures", {{"get", op("Failure force-graph payload", "FailureGraph")}}},
      {"/api/spec", {{"get", {{"summary", "This document"}, {"responses", {{"200", {{"description", "OpenAPI"}}}}}}}}}};
  return json{{"openapi", "3.1.0"},
              {"info", {{"title", "ragtrace API"}, {"version", "1.0.0"}}},
              {"paths", paths},
              {"components", {{"schemas", schemas}}}};
}

class ApiHandler {
 public:
  explicit ApiHandler(AppState& state) : s_(state) {}

  ApiResponse handle(const ApiRequest& req) {
    try {
      return route(req);
    } catch (const Error& e) {
      return {http_status(e.code()), error_envelope(e)};
    } catch (const json::exception& e) {
      return {400, error_envelope("InvalidArgument", std::string("malformed JSON: ") + e.what())};
    } catch (const std::exception& e) {
      return {500, error_envelope("Internal", e.what())};
    }
  }

 private:
  static std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos < path.size()) {
      const std::size_t end = std::min(path.find('/', pos), path.size());
      if (end > pos) parts.emplace_back(path.substr(pos, end - pos));
      pos = end + 1;
    }
    return parts;
  }

  static json parse_body(const ApiRequest& req) {
    if (text::trim(req.body).empty()) return json::object();
    return json::parse(req.body);
  }

  static std::string param(const ApiRequest& req, const std::string& key, std::string fallback = "") {
    auto it = req.params.find(key);
    return it == req.params.end() ? fallback : it->second;
  }

  static std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const std::size_t end = std::min(s.find(',', pos), s.size());
      const auto item = text::trim(s.substr(pos, end - pos));
      if (!item.empty()) out.emplace_back(item);
      pos = end + 1;
    }
    return out;
  }

  static int to_int(std::string_view s, const char* what) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(std::string(s), &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be an integer, got '" + std::string(s) + "'");
    }
  }

  static double to_double(std::string_view s, const char* what) {
    try {
      std::size_t used = 0;
      const double v = std::stod(std::string(s), &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be a number, got '" + std::string(s) + "'");
    }
  }

  ApiResponse route(const ApiRequest& req) {
    const auto p = split_path(req.path);
    const auto& m = req.method;
    if (p.size() < 2 || p[0] != "api") throw Error(ErrorCode::NotFound, "no route for " + req.path);
    const std::string& r = p[1];

    if (p.size() == 2) {
      if (r == "health" && m == "GET") return health();
      if (r == "spec" && m == "GET") return {200, openapi_document()};
      if (r == "corpus" && m == "POST") return post_corpus(req);
      if (r == "corpus" && m == "GET") return {200, corpus_summary(*s_.require_corpus())};
      if (r == "questions" && m == "POST") return post_questions(req);
      if (r == "questions" && m == "GET") return {200, json(s_.questions())};
      if (r == "projection" && m == "POST") return post_projection(req);
      if (r == "projection" && m == "GET") return get_projection();
      if (r == "search" && m == "POST") return post_search(req);
      if (r == "experiments" && m == "POST") return post_experiment(req);
      if (r == "experiments" && m == "GET") return {200, json(s_.runs().list())};
      if (r == "failures" && m == "GET") return get_failures(req);
    }
    if (r == "jobs" && p.size() == 3 && m == "GET") {
      auto job = s_.jobs().get(p[2]);
      if (!job) throw Error(ErrorCode::NotFound, "job " + p[2] + " not found");
      return {200, json(*job)};
    }
    if (r == "cells" && p.size() == 5 && p[4] == "topics" && m == "GET")
      return get_cell_topics(req, to_int(p[2], "cell row"), to_int(p[3], "cell column"));
    if (r == "questions" && p.size() == 4 && m == "GET") {
      if (p[3] == "details") return get_details(req, p[2]);
      if (p[3] == "chunklink") return get_chunklink(req, p[2]);
      if (p[3] == "evidence") return get_evidence(req, p[2]);
    }
    if (r == "experiments" && p.size() == 3 && m == "GET") return {200, json(s_.runs().load(p[2]))};
    if (r == "experiments" && p.size() == 4 && p[3] == "radar" && m == "GET") return get_radar(req, p[2]);
    throw Error(ErrorCode::NotFound, "no route for " + m + " " + req.path);
  }

  ApiResponse health() {
    const auto proj = s_.projection();
    return {200, json{{"status", "ok"},
                      {"corpus_loaded", s_.corpus() != nullptr},
                      {"projection_ready", proj.state != nullptr},
                      {"questions", s_.questions().size()}}};
  }

  ApiResponse post_corpus(const ApiRequest& req) {
    std::shared_ptr<const Corpus> corpus;
    if (req.content_type.find("ndjson") != std::string::npos || req.content_type.find("jsonl") != std::string::npos) {
      corpus = std::make_shared<const Corpus>(
          embed_chunks(chunk_documents(parse_documents_jsonl(req.body), ChunkingConfig{}), s_.gateway(), ChunkingConfig{}));
    } else {
      const json body = parse_body(req);
      ChunkingConfig chunking = body.value("chunking", ChunkingConfig{});
      validate(chunking);
      std::vector<Document> docs;
      if (body.contains("path")) {
        corpus = std::make_shared<const Corpus>(load_corpus(body.at("path").get<std::string>()));
      } else if (body.contains("documents_path")) {
        docs = read_documents_jsonl(body.at("documents_path").get<std::string>());
      } else if (body.contains("jsonl")) {
        docs = parse_documents_jsonl(body.at("jsonl").get<std::string>());
      } else if (body.contains("documents")) {
        for (const auto& d : body.at("documents")) docs.push_back(document_from_json(d));
      } else {
        throw Error(ErrorCode::InvalidArgument, "body needs one of path, documents_path, jsonl, documents");
      }
      if (!corpus) corpus = std::make_shared<const Corpus>(embed_chunks(chunk_documents(docs, chunking), s_.gateway(), chunking));
    }
    if (corpus->dimension() != s_.gateway().dimension())
      throw Error(ErrorCode::DimensionMismatch, "corpus dimension " + std::to_string(corpus->dimension()) +
                                                    " does not match the embedder's " +
                                                    std::to_string(s_.gateway().dimension()));
    s_.set_corpus(corpus);
    return {200, corpus_summary(*corpus)};
  }

  ApiResponse post_questions(const ApiRequest& req) {
    std::vector<json> items;
    if (req.content_type.find("ndjson") != std::string::npos || req.content_type.find("jsonl") != std::string::npos) {
      items = parse_jsonl(req.body);
    } else {
      const json body = parse_body(req);
      if (body.is_array()) {
        items = body.get<std::vector<json>>();
      } else if (body.contains("questions")) {
        items = body.at("questions").get<std::vector<json>>();
      } else if (body.contains("jsonl")) {
        items = parse_jsonl(body.at("jsonl").get<std::string>());
      } else if (body.contains("path")) {
        items = parse_jsonl(read_text_file(body.at("path").get<std::string>()), body.at("path").get<std::string>());
      } else {
        throw Error(ErrorCode::InvalidArgument, "body needs a question array or one of questions, jsonl, path");
      }
    }
    const auto corpus = s_.corpus();
    std::vector<Question> accepted;
    std::set<std::string> ids;
    json rejected = json::array();
    json warnings = json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const json id = items[i].is_object() && items[i].contains("id") && items[i]["id"].is_string() ? items[i]["id"]
                                                                                                   : json(nullptr);
      try {
        auto q = items[i].get<Question>();
        if (!ids.insert(q.id).second) throw Error(ErrorCode::DuplicateId, "duplicate question id " + q.id);
        if (q.gold_chunk_ids && corpus) {
          for (const auto& g : *q.gold_chunk_ids)
            if (corpus->find(g) == nullptr)
              throw Error(ErrorCode::NotFound, "gold chunk " + g + " is not in the corpus");
        } else if (q.gold_chunk_ids) {
          warnings.push_back("question " + q.id + ": gold chunk ids not checked, no corpus loaded");
        }
        if (!q.ground_truth) warnings.push_back("question " + q.id + ": no ground truth");
        accepted.push_back(std::move(q));
      } catch (const std::exception& e) {
        rejected.push_back({{"index", i}, {"id", id}, {"reason", e.what()}});
      }
    }
    const auto count = accepted.size();
    s_.set_questions(std::move(accepted));
    return {200, json{{"count", count}, {"rejected", rejected}, {"warnings", warnings}}};
  }

  ApiResponse post_projection(const ApiRequest& req) {
    const auto corpus = s_.require_corpus();
    const json body = parse_body(req);
    const double perplexity = body.value("perplexity", 30.0);
    const int iterations = body.value("iterations", 750);
    const auto seed = body.value("seed", std::uint64_t{42});
    if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 0");
    const std::size_t n = std::min(corpus->size(), kDisplayCap);
    if (n < 3) throw Error(ErrorCode::TooFewPoints, "t-SNE needs at least 3 points, got " + std::to_string(n));
    if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n))
      throw Error(ErrorCode::PerplexityTooLarge, "perplexity must be positive and below the point count");
    const int resolution = s_.config().grid_resolution;
    AppState* state = &s_;
    const auto id = s_.jobs().start("projection", [=] {
      auto fitted = std::make_shared<const ProjectionState>(fit_projection(*corpus, perplexity, iterations, seed));
      auto grid = std::make_shared<const GridDensity>(grid_density(*fitted, resolution));
      if (!state->install_projection(fitted, grid))
        throw Error(ErrorCode::StateNotReady, "corpus changed while the projection was fitting");
      return json{{"points", fitted->base_points.size()}, {"kl_history", fitted->kl_history}};
    });
    s_.set_projection_job(id);
    return {202, json{{"job_id", id}, {"status", "running"}}};
  }

  ApiResponse get_projection() {
    s_.require_corpus();
    const auto proj = s_.projection();
    if (proj.state) return {200, projection_export(*proj.state, *proj.grid)};
    if (proj.job_id) {
      const auto job = s_.jobs().get(*proj.job_id);
      if (job && job->status == "running") return {202, json{{"job_id", *proj.job_id}, {"status", "running"}}};
      if (job && job->status == "failed") {
        const auto code = job->error.value("code", "Internal");
        return {code == "StateNotReady" ? 409 : 500, job->error};
      }
    }
    throw Error(ErrorCode::StateNotReady, "no projection has been fitted; POST /api/projection first");
  }

  ApiResponse get_cell_topics(const ApiRequest& req, int row, int col) {
    const auto corpus = s_.require_corpus();
    const auto proj = s_.projection();
    if (!proj.state) throw Error(ErrorCode::StateNotReady, "no projection has been fitted");
    if (row < 0 || col < 0 || row >= proj.grid->resolution || col >= proj.grid->resolution)
      throw Error(ErrorCode::NotFound, "cell (" + std::to_string(row) + "," + std::to_string(col) + ") outside the grid");
    std::vector<std::string> texts;
    for (const auto& id : chunks_in_cell(*proj.state, *proj.grid, {row, col})) texts.push_back(corpus->at(id).text);
    const auto candidates = split_list(param(req, "candidates"));
    return {200, json(cell_topics(texts, candidates, s_.gateway(), {row, col}))};
  }

  /// 2-D positions for embeddings placed into the current projection, or
  /// nothing when no projection is ready.
  std::optional<std::vector<std::pair<double, double>>> place(const std::vector<Embedding>& vecs) {
    const auto proj = s_.projection();
    const auto corpus = s_.corpus();
    if (!proj.state || !corpus || corpus->content_hash() != proj.state->corpus_hash) return std::nullopt;
    return project_incremental(*proj.state, *corpus, vecs);
  }

  ApiResponse post_search(const ApiRequest& req) {
    const json body = parse_body(req);
    const std::string query = body.value("query", "");
    if (text::trim(query).empty()) throw Error(ErrorCode::InvalidArgument, "query must be non-empty");
    const Selection preset = parse_selection(body.value("preset", std::string("similarity_to_focus")));
    const int limit = body.value("limit", 10);
    if (limit < 1) throw Error(ErrorCode::InvalidArgument, "limit must be >= 1");
    MetricWeights weights = s_.config().weights;
    if (auto it = body.find("weight_overrides"); it != body.end() && !it->is_null()) {
      json merged = weights;
      merged.update(*it);
      weights = validate_weights(merged.get<MetricWeights>());
    }
    const auto questions = s_.questions();
    if (questions.empty()) throw Error(ErrorCode::StateNotReady, "no questions loaded");

    std::map<std::string, MetricVector> metrics;
    if (auto run = s_.run_or_latest(body.value("run_id", std::string{}))) {
      for (const auto& rec : run->records)
        if (rec.ok()) metrics.emplace(rec.question_id, reweighted(rec.metrics, rec.components, weights,
                                                                  s_.config().diagnostics));
    }
    if ((preset == Selection::HighHallucination || preset == Selection::ImprovementPotential) && metrics.empty())
      throw Error(ErrorCode::MissingPriorRecords, "preset needs an evaluated run");

    std::vector<std::string> texts{query};
    for (const auto& q : questions) texts.push_back(q.text);
    const auto vecs = s_.gateway().embed(texts);

    struct Hit {
      std::size_t index;
      double similarity;
      double score;
    };
    std::vector<Hit> hits;
    SeededRng rng(fnv1a64(query));
    for (std::size_t i = 0; i < questions.size(); ++i) {
      const double sim = std::clamp(cosine(vecs[0], vecs[i + 1]), -1.0, 1.0);
      const auto mit = metrics.find(questions[i].id);
      double score = sim;
      switch (preset) {
        case Selection::SimilarityToFocus: break;
        case Selection::HighHallucination:
          if (mit == metrics.end()) continue;
          score = mit->second.standard_anomaly();
          break;
        case Selection::ImprovementPotential:
          if (mit == metrics.end()) continue;
          score = (1.0 - mit->second.correctness()) * mit->second.topic_relevance();
          break;
        case Selection::Random: score = rng.uniform(); break;
      }
      hits.push_back({i, sim, score});
    }
    std::sort(hits.begin(), hits.end(), [&](const Hit& a, const Hit& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return questions[a.index].id < questions[b.index].id;
    });
    if (hits.size() > static_cast<std::size_t>(limit)) hits.resize(static_cast<std::size_t>(limit));

    std::vector<Embedding> to_place{vecs[0]};
    for (const auto& h : hits) to_place.push_back(vecs[h.index + 1]);
    const auto positions = place(to_place);

    json results = json::array();
    for (std::size_t r = 0; r < hits.size(); ++r) {
      const auto& q = questions[hits[r].index];
      const auto mit = metrics.find(q.id);
      results.push_back({{"question_id", q.id},
                         {"text", q.text},
                         {"similarity", hits[r].similarity},
                         {"score", hits[r].score},
                         {"metrics", mit == metrics.end() ? json(nullptr) : json(mit->second)},
                         {"position", positions ? point_json((*positions)[r + 1].first, (*positions)[r + 1].second)
                                                : json(nullptr)}});
    }
    return {200, json{{"query", query},
                      {"preset", preset},
                      {"query_position",
                       positions ? point_json((*positions)[0].first, (*positions)[0].second) : json(nullptr)},
                      {"results", results}}};
  }

  struct QuestionRecord {
    Question question;
    ExperimentRun run;
    EvaluationRecord record;
  };

  QuestionRecord question_record(const ApiRequest& req, const std::string& id) {
    auto q = s_.find_question(id);
    if (!q) throw Error(ErrorCode::NotFound, "question " + id + " not found");
    auto run = s_.run_or_latest(param(req, "run_id"));
    if (!run) throw Error(ErrorCode::StateNotReady, "no evaluated run yet");
    const auto* rec = run->find(id);
    if (rec == nullptr) throw Error(ErrorCode::StateNotReady, "question " + id + " is not in run " + run->run_id);
    if (!rec->ok())
      throw Error(ErrorCode::StateNotReady, "question " + id + " failed in run " + run->run_id + ": " +
                                                rec->error->message);
    EvaluationRecord copy = *rec;
    return {std::move(*q), std::move(*run), std::move(copy)};
  }

  ApiResponse get_details(const ApiRequest& req, const std::string& id) {
    const auto corpus = s_.require_corpus();
    auto qr = question_record(req, id);
    const auto annotated = annotate_answer(qr.record.answer, qr.record.retrieval_run, *corpus, s_.gateway());
    return {200, json{{"question", qr.question},
                      {"run_id", qr.run.run_id},
                      {"record", qr.record},
                      {"annotated_answer", annotated},
                      {"answer_text", text::strip_citations(qr.record.answer.text)},
                      {"ground_truth", qr.question.ground_truth ? json(*qr.question.ground_truth) : json(nullptr)}}};
  }

  ApiResponse get_chunklink(const ApiRequest& req, const std::string& id) {
    const auto corpus = s_.require_corpus();
    auto q = s_.find_question(id);
    if (!q) throw Error(ErrorCode::NotFound, "question " + id + " not found");
    const auto names = split_list(param(req, "strategies", "plain,standard,hyde"));
    const int k = req.params.count("k") ? to_int(param(req, "k"), "k") : s_.config().weights.k_retrieve;
    std::vector<RetrievalRun> runs;
    for (const auto& name : names) {
      RetrievalStrategy st;
      st.kind = parse_retrieval_kind(name);
      st.k = k;
      runs.push_back(classify_relevance(retrieve(*q, *corpus, st, s_.gateway()), *q, *corpus, s_.gateway(),
                                        s_.config().weights.theta));
    }
    return {200, json(build_chunk_relink(std::move(runs)))};
  }

  ApiResponse get_evidence(const ApiRequest& req, const std::string& id) {
    const auto corpus = s_.require_corpus();
    auto qr = question_record(req, id);
    const auto annotated = annotate_answer(qr.record.answer, qr.record.retrieval_run, *corpus, s_.gateway());
    const auto graph = build_evidence_graph(annotated, qr.record.retrieval_run, *corpus, &s_.lexicon());
    return {200, json{{"question_id", id}, {"graph", graph}, {"annotated_answer", annotated}}};
  }

  ApiResponse post_experiment(const ApiRequest& req) {
    const auto corpus = s_.require_corpus();
    const auto all = s_.questions();
    if (all.empty()) throw Error(ErrorCode::StateNotReady, "no questions loaded");
    const json body = parse_body(req);
    SamplingConfig cfg = body.value("config", SamplingConfig{});
    RetrievalStrategy strategy = body.value("strategy", RetrievalStrategy{});
    RunOptions opts;
    opts.label = body.value("label", std::string("original"));
    opts.diagnostics = s_.config().diagnostics;
    if (auto it = body.find("parent_run_id"); it != body.end() && !it->is_null())
      opts.parent_run_id = it->get<std::string>();
    const auto seed = body.value("seed", std::uint64_t{42});

    std::optional<ExperimentRun> prior;
    if (opts.parent_run_id) {
      prior = s_.runs().load(*opts.parent_run_id);
    } else if (cfg.selection == Selection::HighHallucination || cfg.selection == Selection::ImprovementPotential) {
      prior = s_.run_or_latest("");
    }
    const auto sample =
        sample_questions(all, prior ? &prior->records : nullptr, cfg, seed, s_.gateway());
    AppState* state = &s_;
    const MetricWeights weights = s_.config().weights;
    const auto id = s_.jobs().start("experiment", [=] {
      auto run = execute_run(sample, *corpus, strategy, cfg, state->gateway(), weights, opts);
      state->runs().persist(run);
      state->set_latest_run(run.run_id);
      return json{{"run_id", run.run_id}, {"records", run.records.size()}};
    });
    return {202, json{{"job_id", id}, {"status", "running"}}};
  }

  ApiResponse get_radar(const ApiRequest& req, const std::string& id) {
    std::vector<ExperimentRun> runs{s_.runs().load(id)};
    for (const auto& other : split_list(param(req, "compare"))) runs.push_back(s_.runs().load(other));
    return {200, radar_json(radar_data(runs))};
  }

  ApiResponse get_failures(const ApiRequest& req) {
    const double threshold = req.params.count("threshold") ? to_double(param(req, "threshold"), "threshold") : 0.5;
    auto run = s_.run_or_latest(param(req, "run_id"));
    if (!run) throw Error(ErrorCode::StateNotReady, "no evaluated run yet");
    json graph = failure_graph(run->records, threshold);
    graph["run_id"] = run->run_id;
    return {200, graph};
  }

  AppState& s_;
};

// ---------------------------------------------------------------------------
// HTTP transport

class ApiServer {
 public:
  explicit ApiServer(AppState& state) : handler_(state) {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    auto bridge = [this](const httplib::Request& req, httplib::Response& res) {
      ApiRequest r{req.method, req.path, {}, req.body, req.get_header_value("Content-Type")};
      for (const auto& [k, v] : req.params) r.params[k] = v;
      const auto out = handler_.handle(r);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    server_.Get(R"(/api/.*)", bridge);
    server_.Post(R"(/api/.*)", bridge);
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  }

  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    if (!server_.bind_to_port(host, port))
      throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
    return port;
  }

  /// Serves until stop() is called.
  void serve() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  ApiHandler handler_;
  httplib::Server server_;
};

}  // namespace ragtrace
