#include <catch_amalgamated.hpp>

#include "ragtrace/experiment.hpp"
#include "support/helpers.hpp"

using namespace ragtrace;
using namespace ragtrace::testing;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

std::vector<Question> questions(std::size_t n) {
  std::vector<Question> out;
  for (std::size_t i = 0; i < n; ++i) {
    Question q;
    q.id = "q" + std::to_string(i);
    q.text = "Question number " + std::to_string(i) + " about Tom?";
    q.ground_truth = "Tom chased Jerry.";
    out.push_back(q);
  }
  return out;
}

EvaluationRecord record(std::string qid, double standard_anomaly, double correctness = 0.5, double topic = 0.0) {
  EvaluationRecord r;
  r.question_id = std::move(qid);
  r.metrics = MetricVector(0.1, 0.2, 0.3, standard_anomaly, correctness, topic);
  return r;
}

const Corpus& small_corpus(Gateway& gw) {
  static const Corpus corpus = [&] {
    Document a{"d1", "Tom chased Jerry through the kitchen. Jerry escaped into a hole."};
    Document b{"d2", "Spike guarded the yard. Tom avoided Spike all afternoon."};
    return embed_chunks(chunk_documents({a, b}, ChunkingConfig{}), gw, ChunkingConfig{});
  }();
  return corpus;
}

std::vector<std::string> ids(const std::vector<Question>& qs) {
  std::vector<std::string> out;
  for (const auto& q : qs) out.push_back(q.id);
  return out;
}

}  // namespace

TEST_CASE("random sampling is seeded and without replacement", "[experiment]") {
  MockGateway gw;
  const auto all = questions(10);
  SamplingConfig cfg;
  cfg.num_questions = 4;
  const auto a = sample_questions(all, nullptr, cfg, 7, gw);
  const auto b = sample_questions(all, nullptr, cfg, 7, gw);
  CHECK(ids(a) == ids(b));
  const auto ia = ids(a);
  CHECK(std::set<std::string>(ia.begin(), ia.end()).size() == 4);
  bool differs = false;
  for (std::uint64_t s = 8; s < 20 && !differs; ++s) differs = ids(sample_questions(all, nullptr, cfg, s, gw)) != ids(a);
  CHECK(differs);
  cfg.num_questions = 11;
  CHECK(code_of([&] { sample_questions(all, nullptr, cfg, 7, gw); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("high hallucination preset ranks by standard anomaly", "[experiment]") {
  MockGateway gw;
  const auto all = questions(5);
  std::vector<EvaluationRecord> prior{record("q0", 0.2), record("q1", 0.9), record("q3", 0.5), record("q4", 0.9)};
  prior.push_back(record("q2", 1.0));
  prior.back().error = RecordError{"GatewayError", "down"};
  SamplingConfig cfg;
  cfg.selection = Selection::HighHallucination;
  cfg.num_questions = 5;
  // Ties keep question order; questions without a usable record come last.
  CHECK(ids(sample_questions(all, &prior, cfg, 0, gw)) == std::vector<std::string>{"q1", "q4", "q3", "q0", "q2"});
  cfg.num_questions = 2;
  CHECK(ids(sample_questions(all, &prior, cfg, 0, gw)) == std::vector<std::string>{"q1", "q4"});
  CHECK(code_of([&] { sample_questions(all, nullptr, cfg, 0, gw); }) == ErrorCode::MissingPriorRecords);
  std::vector<EvaluationRecord> none;
  CHECK(code_of([&] { sample_questions(all, &none, cfg, 0, gw); }) == ErrorCode::MissingPriorRecords);
}

TEST_CASE("improvement potential preset", "[experiment]") {
  MockGateway gw;
  const auto all = questions(3);
  const std::vector<EvaluationRecord> prior{record("q0", 0, 0.9, 1.0), record("q1", 0, 0.2, 0.5),
                                            record("q2", 0, 0.1, -0.5)};
  SamplingConfig cfg;
  cfg.selection = Selection::ImprovementPotential;
  cfg.num_questions = 3;
  // (1-c)*t: 0.1, 0.4, -0.45
  CHECK(ids(sample_questions(all, &prior, cfg, 0, gw)) == std::vector<std::string>{"q1", "q0", "q2"});
}

TEST_CASE("similarity to focus preset", "[experiment]") {
  MockGateway gw;
  auto all = questions(4);
  all[2].text = all[0].text;
  SamplingConfig cfg;
  cfg.selection = Selection::SimilarityToFocus;
  cfg.focus_question_id = "q0";
  cfg.num_questions = 3;
  const auto got = sample_questions(all, nullptr, cfg, 0, gw);
  REQUIRE(got.size() == 3);
  CHECK(got[0].id == "q2");
  const auto ig = ids(got);
  CHECK(std::find(ig.begin(), ig.end(), "q0") == ig.end());
  const auto fv = gw.embed_one(all[0].text);
  double prev = 2.0;
  for (const auto& q : got) {
    const double s = cosine(fv, gw.embed_one(q.text));
    CHECK(s <= prev + 1e-12);
    prev = s;
  }
  cfg.focus_question_id = "nope";
  CHECK(code_of([&] { sample_questions(all, nullptr, cfg, 0, gw); }) == ErrorCode::FocusNotFound);
  cfg.focus_question_id.reset();
  CHECK(code_of([&] { sample_questions(all, nullptr, cfg, 0, gw); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("sampling config validation and JSON", "[experiment]") {
  SamplingConfig c;
  c.diversity = 2.5;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::ValueOutOfRange);
  c = {};
  c.num_chunks = 0;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::ValueOutOfRange);
  c = {};
  c.keywords = {"tom"};
  c.tags = {"cartoon"};
  c.selection = Selection::SimilarityToFocus;
  c.focus_question_id = "q1";
  CHECK(json(c).get<SamplingConfig>() == c);
  CHECK(code_of([] { json{{"selection", "worst"}}.get<SamplingConfig>(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("execute_run evaluates every question deterministically", "[experiment]") {
  MockGateway gw;
  const auto& corpus = small_corpus(gw);
  const auto qs = questions(3);
  SamplingConfig cfg;
  cfg.num_chunks = 2;
  cfg.keywords = {"spike"};
  std::vector<double> progress;
  RunOptions opts;
  opts.progress = [&](double pct, const std::string&) { progress.push_back(pct); };
  const auto a = execute_run(qs, corpus, RetrievalStrategy{}, cfg, gw, MetricWeights{}, opts);
  const auto b = execute_run(qs, corpus, RetrievalStrategy{}, cfg, gw, MetricWeights{});
  REQUIRE(a.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.records[i].question_id == qs[i].id);
    CHECK(a.records[i].ok());
    CHECK(a.records[i].retrieval_run.results.size() == 2);
  }
  CHECK(a.strategy.k == 2);
  CHECK(a.strategy.keywords == std::vector<std::string>{"spike"});
  CHECK(canonical_run_json(a) == canonical_run_json(b));
  CHECK(a.run_id == compute_run_id(a));
  CHECK(a.run_id.starts_with("run-"));
  std::sort(progress.begin(), progress.end());
  CHECK(progress.size() == 3);
  CHECK(progress.back() == Catch::Approx(100.0));

  const auto empty = execute_run({}, corpus, RetrievalStrategy{}, cfg, gw, MetricWeights{});
  CHECK(empty.records.empty());

  auto dup = qs;
  dup[1].id = dup[0].id;
  CHECK(code_of([&] { execute_run(dup, corpus, RetrievalStrategy{}, cfg, gw, MetricWeights{}); }) ==
        ErrorCode::DuplicateId);
}

TEST_CASE("a failing question does not stop the run", "[experiment]") {
  MockGateway base;
  const auto& corpus = small_corpus(base);
  MockOptions o;
  o.fail_when_contains = {"number 1 "};
  MockGateway gw(o);
  const auto run = execute_run(questions(3), corpus, RetrievalStrategy{}, SamplingConfig{}, gw, MetricWeights{});
  REQUIRE(run.records.size() == 3);
  CHECK(run.records[0].ok());
  REQUIRE_FALSE(run.records[1].ok());
  CHECK(run.records[1].error->code == "GatewayError");
  CHECK(run.records[2].ok());
  const auto csv = run_to_csv(run);
  CHECK(csv.starts_with(
      "question_id,retrieval_failure,prompt_fragility,generation_anomaly,standard_anomaly,correctness,"
      "topic_relevance,error\n"));
  CHECK(csv.find("\nq1,,,,,,,GatewayError: ") != std::string::npos);
}

TEST_CASE("radar data", "[experiment]") {
  ExperimentRun one;
  one.run_id = "r1";
  one.label = "original";
  one.records = {record("q0", 0.4, 0.5, 0.0), record("q1", 0.2)};
  const auto single = radar_data({one});
  REQUIRE(single.size() == 2);
  REQUIRE(single[0].series.size() == 1);
  CHECK(single[0].series[0].first == "original");
  CHECK(single[0].series[0].second == std::array<double, 6>{0.1, 0.2, 0.3, 0.4, 0.5, 0.5});

  ExperimentRun before = one, after = one;
  before.label = "before";
  after.run_id = "r2";
  after.label = "after";
  after.records = {record("q1", 0.1), record("q2", 0.3)};
  const auto pair = radar_data({before, after});
  REQUIRE(pair.size() == 3);
  CHECK(pair[1].question_id == "q1");
  REQUIRE(pair[1].series.size() == 2);
  CHECK(pair[1].series[0].first == "before");
  CHECK(pair[1].series[1].first == "after");
  CHECK(pair[1].series[1].second[3] == 0.1);

  ExperimentRun twin = one;
  twin.run_id = "r3";
  const auto dup = radar_data({one, twin});
  CHECK(dup[0].series[0].first == "original (r1)");
  CHECK(dup[0].series[1].first == "original (r3)");

  after.records = {record("q9", 0.1)};
  CHECK(code_of([&] { radar_data({before, after}); }) == ErrorCode::NoCommonQuestions);
  CHECK(code_of([] { radar_data({}); }) == ErrorCode::InvalidArgument);

  const auto j = radar_json(single);
  CHECK(j[0]["axes"].size() == 6);
  CHECK(j[0]["series"][0]["label"] == "original");
}

TEST_CASE("run store persistence", "[experiment]") {
  const auto dir = scratch_dir("runstore");
  RunStore store(dir);
  CHECK(store.list().empty());
  ExperimentRun a;
  a.label = "before";
  a.records = {record("q0", 0.4)};
  a.run_id = compute_run_id(a);
  ExperimentRun b = a;
  b.label = "after";
  b.parent_run_id = a.run_id;
  b.run_id = compute_run_id(b);
  CHECK(a.run_id != b.run_id);
  store.persist(a);
  store.persist(b);
  store.persist(a);
  CHECK(store.load(a.run_id) == a);
  CHECK(store.load(b.run_id) == b);
  const auto list = RunStore(dir).list();
  REQUIRE(list.size() == 2);
  CHECK(list[0].run_id == a.run_id);
  CHECK(list[1].parent_run_id == a.run_id);
  CHECK(list[1].record_count == 1);
  CHECK(code_of([&] { store.load("run-missing"); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { store.load("../x"); }) == ErrorCode::NotFound);
  ExperimentRun bad;
  bad.run_id = "../evil";
  CHECK(code_of([&] { store.persist(bad); }) == ErrorCode::InvalidArgument);
}
