#include <catch_amalgamated.hpp>

#include "ragtrace/evidence.hpp"
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

struct Fixture {
  MockGateway gw;
  Corpus corpus;
  RetrievalRun run;

  explicit Fixture(const std::vector<std::string>& texts, MockOptions o = {}) : gw(std::move(o)) {
    std::vector<Chunk> chunks;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      chunks.push_back(make_chunk("k" + std::to_string(i), texts[i], gw.embed_one(texts[i])));
      run.results.push_back({"k" + std::to_string(i), 1.0, 1.0, {}});
    }
    corpus = Corpus(std::move(chunks), 64, gw.id(), "now");
  }
};

/// Largest number of disjoint pairs by trying every injective assignment.
std::size_t matching_oracle(std::size_t a, std::size_t t, const std::vector<std::vector<bool>>& ok) {
  std::size_t best = 0;
  std::vector<int> assign(a, -1);
  std::function<void(std::size_t, std::vector<bool>&, std::size_t)> rec = [&](std::size_t i, std::vector<bool>& used,
                                                                             std::size_t count) {
    if (i == a) {
      best = std::max(best, count);
      return;
    }
    rec(i + 1, used, count);
    for (std::size_t j = 0; j < t; ++j) {
      if (!used[j] && ok[i][j]) {
        used[j] = true;
        rec(i + 1, used, count + 1);
        used[j] = false;
      }
    }
  };
  std::vector<bool> used(t, false);
  rec(0, used, 0);
  return best;
}

}  // namespace

TEST_CASE("entity expansion is cached", "[evidence]") {
  MockGateway gw;
  EntityLexicon lex;
  const auto a = expand_entity("spike", "Spike chased Tom.", lex, gw);
  CHECK(a.synonyms == std::set<std::string>{"spike_syn"});
  CHECK(a.antonyms == std::set<std::string>{"spike_ant"});
  const auto calls = gw.counts().total();
  const auto b = expand_entity("spike", "Spike chased Tom.", lex, gw);
  CHECK(a == b);
  CHECK(gw.counts().total() == calls);
  expand_entity("spike", "Another context.", lex, gw);
  CHECK(gw.counts().expand_entity == 2);
  CHECK(lex.size() == 2);
  CHECK(code_of([&] { expand_entity("", "ctx", lex, gw); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("lexicon persists across instances", "[evidence]") {
  const auto file = scratch_dir("lexicon") / "lexicon.json";
  MockGateway gw;
  {
    EntityLexicon lex(file);
    expand_entity("tom", "ctx", lex, gw);
  }
  EntityLexicon again(file);
  CHECK(again.size() == 1);
  MockGateway fresh;
  CHECK(expand_entity("tom", "ctx", again, fresh).synonyms == std::set<std::string>{"tom_syn"});
  CHECK(fresh.counts().total() == 0);
  again.invalidate("tom", fnv1a64("ctx"));
  CHECK(EntityLexicon(file).size() == 0);
}

TEST_CASE("entity set comparison", "[evidence]") {
  MockGateway gw;
  EntityLexicon lex;
  const auto same = compare_entity_sets("Tom met Jerry.", "Tom met Jerry.", lex, gw);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const auto none = compare_entity_sets("Tom ran.", "Alice slept.", lex, gw);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  const auto half = compare_entity_sets("Alice met Bob.", "Alice met Carol.", lex, gw);
  CHECK(half.precision == Catch::Approx(0.5));
  CHECK(half.recall == Catch::Approx(0.5));
  CHECK(half.f1 == Catch::Approx(0.5));

  CHECK(code_of([&] { compare_entity_sets("", "x", lex, gw); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("synonyms count as matches", "[evidence]") {
  MockOptions o;
  o.synonyms["spike"] = {"butch"};
  MockGateway gw(o);
  EntityLexicon lex;
  const auto s = compare_entity_sets("Spike chased Tom.", "Butch chased Tom.", lex, gw);
  CHECK(s.precision == 1.0);
  CHECK(s.recall == 1.0);
}

TEST_CASE("entity matching equals the exhaustive oracle", "[evidence]") {
  SeededRng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t a = rng.below(6), t = rng.below(6);
    std::vector<std::vector<bool>> ok(a, std::vector<bool>(t));
    for (auto& row : ok)
      for (std::size_t j = 0; j < t; ++j) row[j] = rng.uniform() < 0.35;
    const auto m = max_entity_matching(a, t, [&](std::size_t i, std::size_t j) { return bool(ok[i][j]); });
    CHECK(m == matching_oracle(a, t, ok));
  }
}

TEST_CASE("citation verification", "[evidence]") {
  Fixture f({"Spike chased Tom.", "Jerry slept."});
  CHECK(verify_citation("zz", "Spike chased Tom", f.run, f.corpus, f.gw) == CitationCheck{false, 0.0});
  CHECK(verify_citation("k0", "Spike chased Tom", f.run, f.corpus, f.gw) == CitationCheck{true, 1.0});
  CHECK(verify_citation("k1", "Spike chased Tom", f.run, f.corpus, f.gw) == CitationCheck{false, 0.0});
}

TEST_CASE("answer annotation spans", "[evidence]") {
  Fixture f({"Spike chased Tom.", "the cat sat."});
  GenerationResult a;
  a.text = "Spike chased Tom.";
  const auto ann = annotate_answer(a, f.run, f.corpus, f.gw);
  REQUIRE(ann.spans.size() == 4);
  const std::vector<std::tuple<std::size_t, std::size_t, SpanClass>> expected{
      {0, 5, SpanClass::NamedEntity},
      {5, 13, SpanClass::EvidenceSupported},
      {13, 16, SpanClass::NamedEntity},
      {16, 17, SpanClass::EvidenceSupported}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ann.spans[i].start == std::get<0>(expected[i]));
    CHECK(ann.spans[i].end == std::get<1>(expected[i]));
    CHECK(ann.spans[i].cls == std::get<2>(expected[i]));
  }
  CHECK(ann.spans[1].supporting_chunk_ids == std::set<std::string>{"k0"});
  CHECK(ann.spans[0].supporting_chunk_ids == std::set<std::string>{"k0"});

  GenerationResult plain;
  plain.text = "the cat sat.";
  const auto p = annotate_answer(plain, f.run, f.corpus, f.gw);
  REQUIRE(p.spans.size() == 1);
  CHECK(p.spans[0].cls == SpanClass::EvidenceSupported);
  CHECK(p.spans[0].end == plain.text.size());

  GenerationResult absent;
  absent.text = "the dog barked.";
  const auto u = annotate_answer(absent, f.run, f.corpus, f.gw);
  REQUIRE(u.spans.size() == 1);
  CHECK(u.spans[0].cls == SpanClass::Uncertain);

  const json j = ann;
  CHECK(j.get<AnnotatedAnswer>() == ann);
  CHECK(j["spans"][0]["class"] == "named_entity");
}

TEST_CASE("evidence graph edges", "[evidence]") {
  Fixture f({"Tom ran home.", "Later Tom slept.", "A cat napped."});
  GenerationResult a;
  a.text = "Tom met Jerry.";
  const auto ann = annotate_answer(a, f.run, f.corpus, f.gw);
  const auto g = build_evidence_graph(ann, f.run, f.corpus);
  CHECK(g.entity_nodes == std::vector<std::string>{"tom", "jerry"});
  CHECK(g.chunk_nodes.size() == 3);
  REQUIRE(g.edges.size() == 2);
  for (const auto& e : g.edges) {
    CHECK(e.entity == "tom");
    CHECK(e.support_score == kLiteralSupport);
  }

  EntityLexicon lex;
  lex.store("jerry", fnv1a64("ctx"), EntityExpansion{{"cat"}, {}});
  const auto g2 = build_evidence_graph(ann, f.run, f.corpus, &lex);
  REQUIRE(g2.edges.size() == 3);
  CHECK(g2.edges[2] == EvidenceEdge{"jerry", "k2", kSynonymSupport});
  const json j = g2;
  CHECK(j["nodes"].size() == 5);
  CHECK(j["edges"].size() == 3);
}
