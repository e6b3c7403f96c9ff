#pragma once

// 2-D projection of chunk embeddings (exact t-SNE), incremental placement of
// new points into a frozen map, grid densities, and per-cell topic keywords.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/entities.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/ingest.hpp"

namespace ragtrace {

/// Points shown on the map are capped at this count.
inline constexpr std::size_t kDisplayCap = 20000;

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 750;
  std::uint64_t seed = 42;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  int kl_interval = 50;
  double init_sigma = 1e-4;
};

struct ProjectedPoint {
  std::string id;
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const ProjectedPoint&, const ProjectedPoint&) = default;
};

struct ProjectionState {
  std::vector<ProjectedPoint> base_points;
  double perplexity = 30.0;
  int iterations = 750;
  std::uint64_t seed = 42;
  std::vector<double> kl_history;  // KL(P||Q) every kl_interval iterations
  int kl_interval = 50;
  std::uint64_t corpus_hash = 0;

  friend bool operator==(const ProjectionState&, const ProjectionState&) = default;
};

namespace tsne {

using Matrix = std::vector<double>;  // row-major n x n

inline Matrix squared_distances(std::span<const Embedding> x) {
  const std::size_t n = x.size();
  Matrix d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double diff = static_cast<double>(x[i][k]) - static_cast<double>(x[j][k]);
        s += diff * diff;
      }
      d[i * n + j] = d[j * n + i] = s;
    }
  }
  return d;
}

/// Conditional distribution p_{j|i} over `dist` (squared distances to the
/// other points) whose entropy matches ln(perplexity). Bisection on the
/// Gaussian precision, at most 50 steps, tolerance 1e-5.
inline std::vector<double> conditional_row(std::span<const double> dist, double perplexity) {
  const double target = std::log(perplexity);
  double dmin = std::numeric_limits<double>::infinity();
  for (double d : dist) dmin = std::min(dmin, d);
  std::vector<double> p(dist.size(), 0.0);
  if (dist.empty()) return p;

  double beta = 1.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 50; ++step) {
    double sum = 0.0;
    for (std::size_t j = 0; j < dist.size(); ++j) {
      p[j] = std::exp(-beta * (dist[j] - dmin));
      sum += p[j];
    }
    double weighted = 0.0;
    for (std::size_t j = 0; j < dist.size(); ++j) weighted += (dist[j] - dmin) * p[j];
    const double entropy = std::log(sum) + beta * weighted / sum;
    for (auto& v : p) v /= sum;
    const double diff = entropy - target;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0.0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
    } else {
      hi = beta;
      beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
    }
  }
  return p;
}

/// Symmetrized joint affinities P = (P_cond + P_cond^T) / 2n.
inline Matrix joint_probabilities(const Matrix& dist, std::size_t n, double perplexity) {
  Matrix cond(n * n, 0.0);
  std::vector<double> row(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) row[k++] = dist[i * n + j];
    const auto p = conditional_row(row, perplexity);
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) cond[i * n + j] = p[k++];
  }
  Matrix joint(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) joint[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * static_cast<double>(n));
  return joint;
}

/// KL(P || Q) for 2-D coordinates y (interleaved x,y).
inline double kl_divergence(const Matrix& p, std::span<const double> y, std::size_t n) {
  double z = 0.0;
  std::vector<double> num(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      const double q = 1.0 / (1.0 + dx * dx + dy * dy);
      num[i * n + j] = num[j * n + i] = q;
      z += 2.0 * q;
    }
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double pij = p[i * n + j];
      if (i == j || pij <= 0.0) continue;
      const double qij = std::max(num[i * n + j] / z, 1e-300);
      kl += pij * std::log(pij / qij);
    }
  }
  return kl;
}

}  // namespace tsne

/// Exact t-SNE of the given embeddings. Returns interleaved (x, y) pairs and
/// appends KL samples to `kl_history`.
inline std::vector<double> tsne_embed(std::span<const Embedding> x, const TsneParams& params,
                                      std::vector<double>& kl_history) {
  const std::size_t n = x.size();
  if (n < 3) throw Error(ErrorCode::TooFewPoints, "t-SNE needs at least 3 points, got " + std::to_string(n));
  if (!(params.perplexity > 0.0) || params.perplexity >= static_cast<double>(n))
    throw Error(ErrorCode::PerplexityTooLarge, "perplexity " + std::to_string(params.perplexity) +
                                                   " must be positive and below the point count " + std::to_string(n));

  const auto dist = tsne::squared_distances(x);
  const auto p = tsne::joint_probabilities(dist, n, params.perplexity);

  SeededRng rng(params.seed);
  std::vector<double> y(2 * n), update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n);
  for (auto& v : y) v = params.init_sigma * rng.normal();

  std::vector<double> num(n * n, 0.0);
  double momentum = params.initial_momentum;
  for (int iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration = iter < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
    if (iter == params.momentum_switch) momentum = params.final_momentum;

    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j];
        const double dy = y[2 * i + 1] - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        z += 2.0 * q;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = num[i * n + j];
        const double mult = (exaggeration * p[i * n + j] - q / z) * q;
        gx += mult * (y[2 * i] - y[2 * j]);
        gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
      }
      grad[2 * i] = 4.0 * gx;
      grad[2 * i + 1] = 4.0 * gy;
    }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      gains[k] = (std::signbit(grad[k]) != std::signbit(update[k])) ? gains[k] + 0.2 : gains[k] * 0.8;
      gains[k] = std::max(gains[k], 0.01);
      update[k] = momentum * update[k] - params.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
    if (params.kl_interval > 0 && (iter + 1) % params.kl_interval == 0)
      kl_history.push_back(tsne::kl_divergence(p, y, n));
  }
  return y;
}

/// Fits the 2-D map for a corpus (first kDisplayCap chunks).
inline ProjectionState fit_projection(const Corpus& corpus, double perplexity = 30.0, int iterations = 750,
                                      std::uint64_t seed = 42) {
  const std::size_t n = std::min(corpus.size(), kDisplayCap);
  std::vector<Embedding> x;
  x.reserve(n);
  for (std::size_t i = 0; i < n; ++i) x.push_back(corpus.chunks()[i].embedding);

  TsneParams params;
  params.perplexity = perplexity;
  params.iterations = iterations;
  params.seed = seed;

  ProjectionState state;
  state.perplexity = perplexity;
  state.iterations = iterations;
  state.seed = seed;
  state.kl_interval = params.kl_interval;
  state.corpus_hash = corpus.content_hash();
  const auto y = tsne_embed(x, params, state.kl_history);
  state.base_points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) state.base_points.push_back({corpus.chunks()[i].id, y[2 * i], y[2 * i + 1]});
  return state;
}

inline constexpr int kIncrementalIterations = 50;
/// Initial refinement step as a fraction of the map diagonal; grows on
/// accepted steps and halves on rejected ones.
inline constexpr double kIncrementalStep = 0.01;
inline constexpr double kIncrementalGrow = 1.2;

namespace tsne {

/// KL(p || q) for one free point against fixed base points, q the Student-t
/// kernel normalized over the base.
inline double point_kl(std::span<const double> p, std::span<const ProjectedPoint> base, double x, double y) {
  double z = 0.0;
  std::vector<double> num(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double dx = x - base[i].x, dy = y - base[i].y;
    num[i] = 1.0 / (1.0 + dx * dx + dy * dy);
    z += num[i];
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(num[i] / z, 1e-300));
  return kl;
}

}  // namespace tsne

/// Places new embeddings into a fitted map without moving the base points.
/// Each point starts at its nearest base point (squared Euclidean distance,
/// as in the fit) and is refined by normalized gradient steps on its KL
/// against the fixed base; only steps that lower the KL are taken.
inline std::vector<std::pair<double, double>> project_incremental(const ProjectionState& state, const Corpus& corpus,
                                                                  const std::vector<Embedding>& new_embeddings,
                                                                  int iterations = kIncrementalIterations) {
  if (new_embeddings.empty()) return {};
  if (state.base_points.empty()) throw Error(ErrorCode::StateNotReady, "projection has not been fitted");
  if (corpus.content_hash() != state.corpus_hash)
    throw Error(ErrorCode::StateNotReady, "projection was fitted from a different corpus");
  const std::size_t n = state.base_points.size();
  std::vector<const Chunk*> base(n);
  for (std::size_t i = 0; i < n; ++i) base[i] = &corpus.at(state.base_points[i].id);
  const auto& pts = state.base_points;
  const auto box = [&] {
    double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
    for (const auto& q : pts) {
      x0 = std::min(x0, q.x), x1 = std::max(x1, q.x), y0 = std::min(y0, q.y), y1 = std::max(y1, q.y);
    }
    return std::hypot(x1 - x0, y1 - y0);
  }();

  std::vector<std::pair<double, double>> out;
  out.reserve(new_embeddings.size());
  for (const auto& e : new_embeddings) {
    if (e.size() != corpus.dimension())
      throw Error(ErrorCode::DimensionMismatch, "new embedding dimension " + std::to_string(e.size()) +
                                                    " != corpus dimension " + std::to_string(corpus.dimension()));
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < e.size(); ++d) {
        const double diff = static_cast<double>(e[d]) - static_cast<double>(base[i]->embedding[d]);
        s += diff * diff;
      }
      dist[i] = s;
    }
    const double perp = std::min(state.perplexity, static_cast<double>(n) - 1.0);
    const auto p = tsne::conditional_row(dist, std::max(perp, 1.0));

    // Start at the nearest base point (ties by id).
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (dist[i] < dist[nearest] || (dist[i] == dist[nearest] && pts[i].id < pts[nearest].id)) nearest = i;
    double px = pts[nearest].x, py = pts[nearest].y;
    double best = tsne::point_kl(p, pts, px, py);

    double step = (box > 0.0 ? kIncrementalStep * box : 1.0);
    for (int iter = 0; iter < iterations && step > 1e-9 * std::max(box, 1.0); ++iter) {
      double z = 0.0;
      std::vector<double> num(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double dx = px - pts[i].x, dy = py - pts[i].y;
        num[i] = 1.0 / (1.0 + dx * dx + dy * dy);
        z += num[i];
      }
      double gx = 0.0, gy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double mult = 4.0 * (p[i] - num[i] / z) * num[i];
        gx += mult * (px - pts[i].x);
        gy += mult * (py - pts[i].y);
      }
      const double gn = std::hypot(gx, gy);
      if (!(gn > 0.0)) break;
      const double nx = px - step * gx / gn, ny = py - step * gy / gn;
      const double kl = tsne::point_kl(p, pts, nx, ny);
      if (kl < best) {
        best = kl;
        px = nx;
        py = ny;
        step *= kIncrementalGrow;
      } else {
        step *= 0.5;
      }
    }
    out.emplace_back(px, py);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct BoundingBox {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

inline BoundingBox bounding_box(std::span<const ProjectedPoint> pts) {
  if (pts.empty()) return {};
  BoundingBox b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
  for (const auto& p : pts) {
    b.min_x = std::min(b.min_x, p.x);
    b.max_x = std::max(b.max_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

struct GridCell {
  int row = 0;  // along y
  int col = 0;  // along x

  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Cell of a point within `box`; points on or beyond the max edge (and
/// incremental points outside the box) clamp to edge cells.
inline GridCell cell_of(double x, double y, const BoundingBox& box, int resolution) {
  auto index = [resolution](double v, double lo, double hi) {
    const double extent = hi - lo;
    if (!(extent > 0.0)) return 0;
    const double f = (v - lo) / extent * resolution;
    if (!(f > 0.0)) return 0;
    return std::min(resolution - 1, static_cast<int>(f));
  };
  return {index(y, box.min_y, box.max_y), index(x, box.min_x, box.max_x)};
}

struct GridDensity {
  int resolution = 200;
  std::vector<double> cells;  // row-major, resolution x resolution
  BoundingBox box;

  double at(int row, int col) const {
    return cells[static_cast<std::size_t>(row) * static_cast<std::size_t>(resolution) + static_cast<std::size_t>(col)];
  }
};

/// Fraction of base points falling in each cell.
inline GridDensity grid_density(const ProjectionState& state, int resolution = 200) {
  if (resolution < 1) throw Error(ErrorCode::InvalidArgument, "grid resolution must be >= 1");
  GridDensity g;
  g.resolution = resolution;
  g.cells.assign(static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution), 0.0);
  g.box = bounding_box(state.base_points);
  const std::size_t total = state.base_points.size();
  if (total == 0) return g;
  std::vector<std::size_t> counts(g.cells.size(), 0);
  for (const auto& p : state.base_points) {
    const auto c = cell_of(p.x, p.y, g.box, resolution);
    ++counts[static_cast<std::size_t>(c.row) * static_cast<std::size_t>(resolution) + static_cast<std::size_t>(c.col)];
  }
  for (std::size_t i = 0; i < counts.size(); ++i)
    g.cells[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return g;
}

/// Ids of base points in one cell.
inline std::vector<std::string> chunks_in_cell(const ProjectionState& state, const GridDensity& grid, GridCell cell) {
  std::vector<std::string> out;
  for (const auto& p : state.base_points)
    if (cell_of(p.x, p.y, grid.box, grid.resolution) == cell) out.push_back(p.id);
  return out;
}

// ---------------------------------------------------------------------------

struct TopicScore {
  std::string term;
  double score = 0.0;

  friend bool operator==(const TopicScore&, const TopicScore&) = default;
};

struct CellTopics {
  GridCell cell;
  std::vector<TopicScore> keywords;  // score non-increasing
};

inline constexpr std::size_t kTopicsPerCell = 5;

/// T(t) = sum over entities e of sim(e, t) * w(e); candidates ranked by T,
/// top 5. With no candidates the entities themselves are ranked.
inline std::vector<TopicScore> rank_topics(const std::vector<WeightedEntity>& entities,
                                           const std::vector<std::string>& candidates,
                                           const std::function<double(std::size_t entity, std::size_t candidate)>& sim) {
  std::vector<TopicScore> out;
  const bool self = candidates.empty();
  const std::size_t m = self ? entities.size() : candidates.size();
  for (std::size_t c = 0; c < m; ++c) {
    double t = 0.0;
    for (std::size_t e = 0; e < entities.size(); ++e) t += sim(e, c) * entities[e].weight;
    out.push_back({self ? entities[c].entity : candidates[c], t});
  }
  std::sort(out.begin(), out.end(), [](const TopicScore& a, const TopicScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.term < b.term;
  });
  if (out.size() > kTopicsPerCell) out.resize(kTopicsPerCell);
  return out;
}

inline CellTopics cell_topics(const std::vector<std::string>& cell_chunk_texts,
                              const std::vector<std::string>& candidate_topics, Gateway& gateway,
                              GridCell cell = {}) {
  CellTopics out;
  out.cell = cell;
  if (cell_chunk_texts.empty()) return out;
  const auto entities = extract_entities(cell_chunk_texts);
  if (entities.empty()) return out;
  std::vector<std::string> names;
  for (const auto& e : entities) names.push_back(e.entity);
  const auto entity_vecs = gateway.embed(names);
  const bool self = candidate_topics.empty();
  const auto cand_vecs = self ? entity_vecs : gateway.embed(candidate_topics);
  out.keywords = rank_topics(entities, candidate_topics, [&](std::size_t e, std::size_t c) {
    if (self ? e == c : names[e] == candidate_topics[c]) return 1.0;
    return cosine(entity_vecs[e], cand_vecs[c]);
  });
  return out;
}

// ---------------------------------------------------------------------------

inline void to_json(json& j, const ProjectedPoint& p) { j = json{{"id", p.id}, {"x", p.x}, {"y", p.y}}; }
inline void from_json(const json& j, ProjectedPoint& p) {
  j.at("id").get_to(p.id);
  j.at("x").get_to(p.x);
  j.at("y").get_to(p.y);
}

inline void to_json(json& j, const ProjectionState& s) {
  j = json{{"base_points", s.base_points}, {"perplexity", s.perplexity},     {"iterations", s.iterations},
           {"seed", s.seed},               {"kl_history", s.kl_history},     {"kl_interval", s.kl_interval},
           {"corpus_hash", hex64(s.corpus_hash)}};
}
inline void from_json(const json& j, ProjectionState& s) {
  j.at("base_points").get_to(s.base_points);
  j.at("perplexity").get_to(s.perplexity);
  j.at("iterations").get_to(s.iterations);
  j.at("seed").get_to(s.seed);
  j.at("kl_history").get_to(s.kl_history);
  s.kl_interval = j.value("kl_interval", 50);
  s.corpus_hash = std::stoull(j.at("corpus_hash").get<std::string>(), nullptr, 16);
}

inline void to_json(json& j, const GridDensity& g) {
  j = json{{"resolution", g.resolution},
           {"cells", g.cells},
           {"bbox", {{"min_x", g.box.min_x}, {"min_y", g.box.min_y}, {"max_x", g.box.max_x}, {"max_y", g.box.max_y}}}};
}

inline void to_json(json& j, const CellTopics& t) {
  json kws = json::array();
  for (const auto& k : t.keywords) kws.push_back({{"term", k.term}, {"score", k.score}});
  j = json{{"cell", {{"row", t.cell.row}, {"col", t.cell.col}}}, {"keywords", kws}};
}

/// Export payload: {points, grid, kl_history}.
inline json projection_export(const ProjectionState& state, const GridDensity& grid) {
  json points = json::array();
  for (const auto& p : state.base_points) points.push_back({{"id", p.id}, {"x", p.x}, {"y", p.y}});
  return json{{"points", points}, {"grid", grid}, {"kl_history", state.kl_history}};
}

}  // namespace ragtrace
