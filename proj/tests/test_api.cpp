#include <catch_amalgamated.hpp>

#include <chrono>
#include <fstream>
#include <thread>

#include "ragtrace/api.hpp"
#include "support/helpers.hpp"
#include "support/json_schema.hpp"

using namespace ragtrace;
using namespace ragtrace::testing;

namespace {

const SchemaValidator& schema() {
  static const SchemaValidator v = [] {
    std::ifstream in(RAGTRACE_SCHEMA_PATH);
    return SchemaValidator(json::parse(in));
  }();
  return v;
}

void check_schema(const json& body, const std::string& def) {
  const auto errors = schema().validate(body, def);
  INFO(def << ": " << body.dump().substr(0, 400));
  for (const auto& e : errors) UNSCOPED_INFO(e);
  CHECK(errors.empty());
}

/// Server on a free port with its own data directory, torn down on scope exit.
class TestServer {
 public:
  explicit TestServer(const std::string& name, MockOptions mock = {}) {
    AppConfig cfg;
    cfg.data_dir = scratch_dir("api-" + name);
    cfg.grid_resolution = 20;
    state_ = std::make_unique<AppState>(std::make_shared<MockGateway>(std::move(mock)), cfg);
    server_ = std::make_unique<ApiServer>(*state_);
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->serve(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
  }
  ~TestServer() {
    server_->stop();
    thread_.join();
    state_->jobs().wait_all();
  }

  struct Reply {
    int status = 0;
    json body;
    httplib::Headers headers;
  };

  Reply get(const std::string& path) { return wrap(client_->Get(path)); }
  Reply post(const std::string& path, const json& body) {
    return wrap(client_->Post(path, body.dump(), "application/json"));
  }
  Reply post_raw(const std::string& path, const std::string& body, const std::string& type) {
    return wrap(client_->Post(path, body, type));
  }
  httplib::Client& client() { return *client_; }

  /// Polls a job until it leaves the running state.
  json wait_job(const std::string& id) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(300);
    while (std::chrono::steady_clock::now() < deadline) {
      auto r = get("/api/jobs/" + id);
      REQUIRE(r.status == 200);
      check_schema(r.body, "Job");
      if (r.body["status"] != "running") return r.body;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("job " << id << " did not finish");
    return {};
  }

  void load_mini() {
    auto c = post("/api/corpus", {{"documents_path", (mini_corpus_dir() / "docs.jsonl").string()}});
    REQUIRE(c.status == 200);
    auto q = post("/api/questions", {{"path", (mini_corpus_dir() / "questions.jsonl").string()}});
    REQUIRE(q.status == 200);
  }

 private:
  static Reply wrap(const httplib::Result& res) {
    REQUIRE(res);
    Reply r;
    r.status = res->status;
    r.body = res->body.empty() ? json() : json::parse(res->body);
    r.headers = res->headers;
    return r;
  }

  std::unique_ptr<AppState> state_;
  std::unique_ptr<ApiServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

void check_error(const TestServer::Reply& r, int status, const std::string& code) {
  INFO(r.body.dump());
  CHECK(r.status == status);
  check_schema(r.body, "ErrorEnvelope");
  CHECK(r.body.value("code", "") == code);
}

}  // namespace

TEST_CASE("api state prerequisites return 409", "[api]") {
  TestServer s("prereq");
  auto h = s.get("/api/health");
  REQUIRE(h.status == 200);
  check_schema(h.body, "Health");
  CHECK(h.body["corpus_loaded"] == false);

  check_error(s.get("/api/projection"), 409, "StateNotReady");
  check_error(s.get("/api/corpus"), 409, "StateNotReady");
  check_error(s.post("/api/projection", json::object()), 409, "StateNotReady");
  check_error(s.post("/api/experiments", json::object()), 409, "StateNotReady");
  check_error(s.get("/api/failures"), 409, "StateNotReady");

  s.load_mini();
  check_error(s.post("/api/search", {{"query", "wool festival"}, {"preset", "high_hallucination"}}), 409,
              "MissingPriorRecords");
  check_error(s.get("/api/projection"), 409, "StateNotReady");
  check_error(s.get("/api/questions/q00/details"), 409, "StateNotReady");
  check_error(s.get("/api/cells/0/0/topics"), 409, "StateNotReady");
}

TEST_CASE("api validation and routing errors", "[api]") {
  TestServer s("errors");
  check_error(s.get("/api/nothing"), 404, "NotFound");
  check_error(s.get("/api/jobs/job-99"), 404, "NotFound");
  check_error(s.get("/api/experiments/run-missing"), 404, "NotFound");
  check_error(s.post_raw("/api/corpus", "{not json", "application/json"), 400, "InvalidArgument");
  check_error(s.post("/api/corpus", json::object()), 400, "InvalidArgument");
  check_error(s.post("/api/corpus", {{"documents", json::array({{{"doc_id", "d"}, {"text", "  "}}})}}), 400,
              "EmptyDocument");
  s.load_mini();
  check_error(s.post("/api/search", {{"query", ""}}), 400, "InvalidArgument");
  check_error(s.post("/api/search", {{"query", "x"}, {"preset", "worst"}}), 400, "InvalidArgument");
  check_error(s.post("/api/search", {{"query", "x"}, {"weight_overrides", {{"theta", 1.5}}}}), 400,
              "ThetaOutOfRange");
  check_error(s.post("/api/projection", {{"perplexity", 1000}}), 400, "PerplexityTooLarge");
  check_error(s.get("/api/questions/nope/chunklink"), 404, "NotFound");
  check_error(s.get("/api/cells/x/0/topics"), 400, "InvalidArgument");
  check_error(s.post("/api/experiments", {{"config", {{"selection", "similarity_to_focus"},
                                                      {"focus_question_id", "zz"},
                                                      {"num_questions", 1}}}}),
              404, "FocusNotFound");
}

TEST_CASE("api CORS and spec", "[api]") {
  TestServer s("cors");
  auto h = s.get("/api/health");
  auto origin = h.headers.find("Access-Control-Allow-Origin");
  REQUIRE(origin != h.headers.end());
  CHECK(origin->second == "*");
  auto pre = s.client().Options("/api/search");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  auto spec = s.get("/api/spec");
  REQUIRE(spec.status == 200);
  CHECK(spec.body["openapi"] == "3.1.0");
  for (const auto* path : {"/api/health", "/api/corpus", "/api/questions", "/api/projection", "/api/jobs/{id}",
                           "/api/cells/{i}/{j}/topics", "/api/search", "/api/questions/{id}/details",
                           "/api/questions/{id}/chunklink", "/api/questions/{id}/evidence", "/api/experiments",
                           "/api/experiments/{id}", "/api/experiments/{id}/radar", "/api/failures"})
    CHECK(spec.body["paths"].contains(path));
  CHECK(spec.body["components"]["schemas"].contains("ExperimentRun"));
}

TEST_CASE("api corpus and question uploads", "[api]") {
  TestServer s("uploads");
  const std::string jsonl = "{\"doc_id\":\"a\",\"text\":\"Tom chased Jerry.\"}\n{\"doc_id\":\"b\",\"text\":\"Spike slept.\"}\n";
  auto c = s.post_raw("/api/corpus", jsonl, "application/x-ndjson");
  REQUIRE(c.status == 200);
  check_schema(c.body, "CorpusSummary");
  CHECK(c.body["chunks"] == 2);
  CHECK(c.body["dimension"] == 64);
  check_schema(s.get("/api/corpus").body, "CorpusSummary");

  const auto saved = scratch_dir("api-saved-corpus");
  MockGateway gw;
  save_corpus(embed_chunks(chunk_documents(parse_documents_jsonl(jsonl), ChunkingConfig{}), gw, ChunkingConfig{}),
              saved);
  auto loaded = s.post("/api/corpus", {{"path", saved.string()}});
  REQUIRE(loaded.status == 200);
  CHECK(loaded.body["content_hash"] == c.body["content_hash"]);

  const json qs = json::array({{{"id", "q1"}, {"text", "Who chased Jerry?"}, {"ground_truth", "Tom."}},
                               {{"id", "q1"}, {"text", "dup"}},
                               {{"id", "q2"}, {"text", "Who slept?"}},
                               {{"id", "q3"}, {"text", "Gold?"}, {"gold_chunk_ids", {"nope"}}},
                               {{"text", "no id"}}});
  auto q = s.post("/api/questions", qs);
  REQUIRE(q.status == 200);
  check_schema(q.body, "QuestionsReport");
  CHECK(q.body["count"] == 2);
  CHECK(q.body["rejected"].size() == 3);
  CHECK(q.body["rejected"][0]["index"] == 1);
  CHECK(q.body["warnings"].size() == 1);
}

TEST_CASE("api end-to-end workflow", "[api]") {
  TestServer s("workflow");
  s.load_mini();

  auto accepted = s.post("/api/projection", {{"perplexity", 5}, {"iterations", 300}, {"seed", 3}});
  REQUIRE(accepted.status == 202);
  check_schema(accepted.body, "JobAccepted");
  auto job = s.wait_job(accepted.body["job_id"]);
  REQUIRE(job["status"] == "done");
  auto proj = s.get("/api/projection");
  REQUIRE(proj.status == 200);
  check_schema(proj.body, "Projection");

  // Pick a populated cell and ask for its topics.
  const auto& grid = proj.body["grid"];
  const int res = grid["resolution"];
  CHECK(res == 20);
  int row = -1, col = -1;
  for (int idx = 0; idx < res * res; ++idx)
    if (grid["cells"][idx].get<double>() > 0.0) {
      row = idx / res;
      col = idx % res;
      break;
    }
  REQUIRE(row >= 0);
  auto topics = s.get("/api/cells/" + std::to_string(row) + "/" + std::to_string(col) + "/topics?candidates=wool,copper");
  REQUIRE(topics.status == 200);
  check_schema(topics.body, "CellTopics");
  check_error(s.get("/api/cells/99/0/topics"), 404, "NotFound");

  auto plain = s.post("/api/search", {{"query", "What role did wool play in Aldermoor?"}, {"limit", 3}});
  REQUIRE(plain.status == 200);
  check_schema(plain.body, "SearchResponse");
  REQUIRE(plain.body["results"].size() == 3);
  CHECK(plain.body["results"][0]["question_id"] == "q00");
  CHECK(plain.body["query_position"].is_object());

  auto link = s.get("/api/questions/q00/chunklink?strategies=plain,hyde&k=3");
  REQUIRE(link.status == 200);
  check_schema(link.body, "ChunkRelink");

  auto started = s.post("/api/experiments", {{"label", "before"}, {"config", {{"num_questions", 4}}}, {"seed", 1}});
  REQUIRE(started.status == 202);
  auto done = s.wait_job(started.body["job_id"]);
  REQUIRE(done["status"] == "done");
  const std::string run1 = done["result"]["run_id"];

  auto run = s.get("/api/experiments/" + run1);
  REQUIRE(run.status == 200);
  check_schema(run.body, "ExperimentRun");
  REQUIRE(run.body["records"].size() == 4);
  const std::string qid = run.body["records"][0]["question_id"];

  auto details = s.get("/api/questions/" + qid + "/details");
  REQUIRE(details.status == 200);
  check_schema(details.body, "QuestionDetails");
  CHECK(details.body["run_id"] == run1);
  auto evidence = s.get("/api/questions/" + qid + "/evidence?run_id=" + run1);
  REQUIRE(evidence.status == 200);
  check_schema(evidence.body, "EvidenceResponse");

  auto hh = s.post("/api/search", {{"query", "wool"}, {"preset", "high_hallucination"},
                                   {"weight_overrides", {{"alpha_gen", 0.9}, {"beta_gen", 0.1}}}});
  REQUIRE(hh.status == 200);
  check_schema(hh.body, "SearchResponse");
  CHECK(hh.body["results"].size() == 4);

  auto failures = s.get("/api/failures?threshold=0.3");
  REQUIRE(failures.status == 200);
  check_schema(failures.body, "FailureGraph");
  CHECK(failures.body["run_id"] == run1);

  auto after = s.post("/api/experiments", {{"label", "after"}, {"parent_run_id", run1},
                                           {"config", {{"num_questions", 4}, {"selection", "high_hallucination"}}},
                                           {"strategy", {{"kind", "hyde"}}}});
  REQUIRE(after.status == 202);
  auto done2 = s.wait_job(after.body["job_id"]);
  REQUIRE(done2["status"] == "done");
  const std::string run2 = done2["result"]["run_id"];

  auto list = s.get("/api/experiments");
  REQUIRE(list.status == 200);
  check_schema(list.body, "RunList");
  REQUIRE(list.body.size() == 2);
  CHECK(list.body[0]["run_id"] == run1);
  CHECK(list.body[1]["parent_run_id"] == run1);

  auto radar = s.get("/api/experiments/" + run1 + "/radar?compare=" + run2);
  REQUIRE(radar.status == 200);
  check_schema(radar.body, "Radar");
  bool paired = false;
  for (const auto& chart : radar.body) paired = paired || chart["series"].size() == 2;
  CHECK(paired);
  check_error(s.get("/api/experiments/" + run1 + "/radar?compare=run-missing"), 404, "NotFound");

  auto health = s.get("/api/health");
  CHECK(health.body["projection_ready"] == true);
  CHECK(health.body["questions"] == 20);
}
