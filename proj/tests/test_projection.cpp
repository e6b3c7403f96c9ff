#include <catch_amalgamated.hpp>

#include "ragtrace/projection.hpp"
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

/// Two Gaussian clusters in `dim` dimensions, `per` points each.
std::vector<Embedding> two_clusters(std::size_t per, std::size_t dim, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Embedding> out;
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per; ++i) {
      Embedding e(dim);
      for (std::size_t d = 0; d < dim; ++d) e[d] = static_cast<float>((d == 0 ? (c == 0 ? 10.0 : -10.0) : 0.0) + 3.0 + rng.normal());
      out.push_back(e);
    }
  return out;
}

/// True when some direction splits the label sets with a gap.
bool linearly_separable(const std::vector<std::pair<double, double>>& a, const std::vector<std::pair<double, double>>& b) {
  for (int step = 0; step < 3600; ++step) {
    const double t = step * 3.14159265358979323846 / 3600.0;
    const double ux = std::cos(t), uy = std::sin(t);
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& [x, y] : a) {
      amin = std::min(amin, ux * x + uy * y);
      amax = std::max(amax, ux * x + uy * y);
    }
    for (const auto& [x, y] : b) {
      bmin = std::min(bmin, ux * x + uy * y);
      bmax = std::max(bmax, ux * x + uy * y);
    }
    if (amax < bmin || bmax < amin) return true;
  }
  return false;
}

ProjectionState state_of(const std::vector<std::pair<double, double>>& pts) {
  ProjectionState s;
  for (std::size_t i = 0; i < pts.size(); ++i) s.base_points.push_back({"p" + std::to_string(i), pts[i].first, pts[i].second});
  return s;
}

}  // namespace

TEST_CASE("identical embeddings project symmetrically", "[projection]") {
  const Embedding e = normalized({1, 2, 3});
  const auto corpus = corpus_from_embeddings({e, e, e});
  const auto s = fit_projection(corpus, 1.5, 750, 1);
  REQUIRE(s.base_points.size() == 3);
  std::vector<double> d;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      d.push_back(std::hypot(s.base_points[i].x - s.base_points[j].x, s.base_points[i].y - s.base_points[j].y));
  const double mx = *std::max_element(d.begin(), d.end());
  const double mn = *std::min_element(d.begin(), d.end());
  CHECK(mn > 0.0);
  CHECK((mx - mn) / mx <= 0.10);
}

TEST_CASE("two clusters stay linearly separable", "[projection]") {
  const auto vecs = two_clusters(20, 5, 11);
  const auto corpus = corpus_from_embeddings(vecs);
  const auto s = fit_projection(corpus, 10.0, 500, 3);
  std::vector<std::pair<double, double>> a, b;
  for (std::size_t i = 0; i < s.base_points.size(); ++i)
    (i < 20 ? a : b).emplace_back(s.base_points[i].x, s.base_points[i].y);
  CHECK(linearly_separable(a, b));
}

TEST_CASE("projection input validation", "[projection]") {
  SeededRng rng(1);
  std::vector<Embedding> vecs;
  for (int i = 0; i < 50; ++i) vecs.push_back(random_vector(rng, 4));
  const auto corpus = corpus_from_embeddings(vecs);
  CHECK(code_of([&] { fit_projection(corpus, 100.0, 10); }) == ErrorCode::PerplexityTooLarge);
  CHECK(code_of([&] { fit_projection(corpus, 0.0, 10); }) == ErrorCode::PerplexityTooLarge);
  CHECK(code_of([&] { fit_projection(corpus_from_embeddings({vecs[0], vecs[1]}), 1.0, 10); }) ==
        ErrorCode::TooFewPoints);
}

TEST_CASE("fit is deterministic per seed and records KL", "[projection]") {
  SeededRng rng(5);
  std::vector<Embedding> vecs;
  for (int i = 0; i < 30; ++i) vecs.push_back(random_vector(rng, 6));
  const auto corpus = corpus_from_embeddings(vecs);
  const auto a = fit_projection(corpus, 5.0, 200, 9);
  const auto b = fit_projection(corpus, 5.0, 200, 9);
  CHECK(a == b);
  CHECK(a.kl_history.size() == 4);
  CHECK(a.corpus_hash == corpus.content_hash());
  const auto c = fit_projection(corpus, 5.0, 200, 10);
  CHECK_FALSE(a.base_points == c.base_points);

  const json j = a;
  CHECK(j.get<ProjectionState>() == a);
}

TEST_CASE("incremental placement near the identical chunk", "[projection]") {
  const auto vecs = two_clusters(25, 8, 21);
  const auto corpus = corpus_from_embeddings(vecs);
  const auto state = fit_projection(corpus, 10.0, 500, 4);
  const auto box = bounding_box(state.base_points);
  const double diag = std::hypot(box.max_x - box.min_x, box.max_y - box.min_y);
  const auto pos = project_incremental(state, corpus, vecs);
  REQUIRE(pos.size() == vecs.size());
  // Chunks that t-SNE stranded away from their neighbors may be pulled back
  // toward them; every other identical query stays on its chunk.
  std::size_t near = 0;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    const auto& p = state.base_points[i];
    if (std::hypot(pos[i].first - p.x, pos[i].second - p.y) <= 0.05 * diag) ++near;
  }
  CHECK(near >= vecs.size() * 95 / 100);

  const auto before = state;
  CHECK(project_incremental(state, corpus, {}).empty());
  CHECK(state == before);
  CHECK(code_of([&] { project_incremental(state, corpus, {Embedding{1.0f}}); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { project_incremental(ProjectionState{}, corpus, {vecs[0]}); }) == ErrorCode::StateNotReady);
}

TEST_CASE("incremental refinement never raises the objective", "[projection]") {
  SeededRng rng(8);
  std::vector<Embedding> vecs;
  for (int i = 0; i < 30; ++i) vecs.push_back(random_vector(rng, 6));
  const auto corpus = corpus_from_embeddings(vecs);
  const auto state = fit_projection(corpus, 5.0, 200, 2);
  for (int t = 0; t < 5; ++t) {
    const auto q = random_vector(rng, 6);
    std::vector<double> dist;
    for (const auto& v : vecs) {
      double s = 0;
      for (std::size_t d = 0; d < 6; ++d) s += (double(q[d]) - v[d]) * (double(q[d]) - v[d]);
      dist.push_back(s);
    }
    const auto p = tsne::conditional_row(dist, 5.0);
    const auto init = project_incremental(state, corpus, {q}, 0)[0];
    const auto refined = project_incremental(state, corpus, {q})[0];
    CHECK(tsne::point_kl(p, state.base_points, refined.first, refined.second) <=
          tsne::point_kl(p, state.base_points, init.first, init.second));
  }
}

TEST_CASE("zero iterations returns the neighbor initialization", "[projection]") {
  SeededRng rng(8);
  std::vector<Embedding> vecs;
  for (int i = 0; i < 30; ++i) vecs.push_back(random_vector(rng, 6));
  const auto corpus = corpus_from_embeddings(vecs);
  const auto state = fit_projection(corpus, 5.0, 100, 2);
  const auto q = random_vector(rng, 6);

  // Oracle: position of the nearest base point by Euclidean distance.
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    double s = 0;
    for (std::size_t d = 0; d < 6; ++d) s += (double(q[d]) - vecs[i][d]) * (double(q[d]) - vecs[i][d]);
    if (s < best_d) {
      best_d = s;
      best = i;
    }
  }
  const double x = state.base_points[best].x, y = state.base_points[best].y;
  const auto pos = project_incremental(state, corpus, {q}, 0);
  CHECK(pos[0].first == Catch::Approx(x));
  CHECK(pos[0].second == Catch::Approx(y));
}

TEST_CASE("grid density cases", "[projection]") {
  const auto one = grid_density(state_of({{1, 1}, {1, 1}, {1, 1}}), 4);
  CHECK(std::accumulate(one.cells.begin(), one.cells.end(), 0.0) == Catch::Approx(1.0));
  CHECK(*std::max_element(one.cells.begin(), one.cells.end()) == 1.0);

  const auto two = grid_density(state_of({{0, 0}, {1, 1}}), 2);
  CHECK(two.at(0, 0) == 0.5);
  CHECK(two.at(1, 1) == 0.5);
  CHECK(two.at(0, 1) == 0.0);

  CHECK(code_of([] { grid_density(ProjectionState{}, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("grid density matches a brute-force counter", "[projection]") {
  SeededRng rng(3);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(rng.uniform() * 8 - 4, rng.uniform() * 2);
  const int r = 5;
  const auto g = grid_density(state_of(pts), r);
  double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
  for (auto [x, y] : pts) {
    minx = std::min(minx, x);
    maxx = std::max(maxx, x);
    miny = std::min(miny, y);
    maxy = std::max(maxy, y);
  }
  const double cw = (maxx - minx) / r, ch = (maxy - miny) / r;
  for (int row = 0; row < r; ++row)
    for (int col = 0; col < r; ++col) {
      int count = 0;
      for (auto [x, y] : pts) {
        const bool in_x = x >= minx + col * cw && (x < minx + (col + 1) * cw || (col == r - 1 && x <= maxx));
        const bool in_y = y >= miny + row * ch && (y < miny + (row + 1) * ch || (row == r - 1 && y <= maxy));
        if (in_x && in_y) ++count;
      }
      CHECK(g.at(row, col) == Catch::Approx(count / 10.0));
    }
  std::size_t listed = 0;
  for (int row = 0; row < r; ++row)
    for (int col = 0; col < r; ++col) listed += chunks_in_cell(state_of(pts), g, {row, col}).size();
  CHECK(listed == 10);
}

TEST_CASE("topic ranking", "[projection]") {
  const std::vector<WeightedEntity> ents{{"spike", 2.0, 1, 1}, {"tom", 1.0, 1, 1}};
  const std::vector<std::string> cands{"dogs", "cats"};
  const double sim[2][2] = {{0.9, 0.1}, {0.2, 0.8}};
  const auto r = rank_topics(ents, cands, [&](std::size_t e, std::size_t c) { return sim[e][c]; });
  REQUIRE(r.size() == 2);
  // dogs: 0.9*2 + 0.2*1 = 2.0; cats: 0.1*2 + 0.8*1 = 1.0.
  CHECK(r[0].term == "dogs");
  CHECK(r[0].score == Catch::Approx(2.0));
  CHECK(r[1].term == "cats");
  CHECK(r[1].score == Catch::Approx(1.0));
}

TEST_CASE("cell topics through the mock gateway", "[projection]") {
  MockGateway gw;
  const auto single = cell_topics({"We met Alice today."}, {"alice"}, gw);
  REQUIRE(single.keywords.size() == 1);
  CHECK(single.keywords[0].term == "alice");
  CHECK(single.keywords[0].score == Catch::Approx(std::log(1.0 / 2.0) + 1.0));

  CHECK(cell_topics({}, {"x"}, gw).keywords.empty());
  CHECK(cell_topics({"all lowercase here."}, {"x"}, gw).keywords.empty());

  const auto many = cell_topics({"Alice met Bob. Carol met Dave. Erin met Frank."}, {}, gw);
  CHECK(many.keywords.size() == kTopicsPerCell);
  for (std::size_t i = 1; i < many.keywords.size(); ++i) CHECK(many.keywords[i - 1].score >= many.keywords[i].score);
}
