#pragma once

// Shared domain types for the ragtrace diagnostics engine.

#include <cmath>
#include <cstdint>
#include <ctime>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ragtrace {

using json = nlohmann::json;
using Embedding = std::vector<float>;

enum class ErrorCode {
  InvalidArgument,
  WeightSumViolation,
  ThetaOutOfRange,
  ValueOutOfRange,
  EmptyDocument,
  DimensionMismatch,
  ZeroNormEmbedding,
  DuplicateId,
  IoError,
  FormatVersionMismatch,
  GatewayError,
  Timeout,
  ConfidenceUnavailable,
  MissingGroundTruth,
  EmptyRetrieval,
  TooFewPoints,
  PerplexityTooLarge,
  MissingPriorRecords,
  FocusNotFound,
  NoCommonQuestions,
  NotFound,
  StateNotReady,
};

inline constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::WeightSumViolation: return "WeightSumViolation";
    case ErrorCode::ThetaOutOfRange: return "ThetaOutOfRange";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroNormEmbedding: return "ZeroNormEmbedding";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::GatewayError: return "GatewayError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ConfidenceUnavailable: return "ConfidenceUnavailable";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::EmptyRetrieval: return "EmptyRetrieval";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::PerplexityTooLarge: return "PerplexityTooLarge";
    case ErrorCode::MissingPriorRecords: return "MissingPriorRecords";
    case ErrorCode::FocusNotFound: return "FocusNotFound";
    case ErrorCode::NoCommonQuestions: return "NoCommonQuestions";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::StateNotReady: return "StateNotReady";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Hashing. FNV-1a for content ids, splitmix64 for seeded streams; both are
// fully specified so results match across platforms and standard libraries.

inline constexpr std::uint64_t fnv1a64(std::string_view s,
                                       std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

/// Small deterministic generator (splitmix64 stream) with a Box-Muller normal.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() { return splitmix64(state_); }
  double uniform() { return unit_double(next()); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

struct Chunk {
  std::string id;
  std::string text;
  std::string source_doc;
  std::int64_t position = 0;
  Embedding embedding;

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct Question {
  std::string id;
  std::string text;
  std::optional<std::string> ground_truth;
  std::optional<std::set<std::string>> gold_chunk_ids;
  std::set<std::string> tags;

  friend bool operator==(const Question&, const Question&) = default;
};

/// Weights and thresholds shared by the diagnostic metrics.
struct MetricWeights {
  double alpha_retrieval = 0.5;
  double beta_retrieval = 0.5;
  double theta = 0.8;
  double alpha_gen = 0.5;
  double beta_gen = 0.5;
  double alpha_std = 0.4;
  double beta_std = 0.6;
  int m_variations = 3;
  int k_retrieve = 10;

  friend bool operator==(const MetricWeights&, const MetricWeights&) = default;
};

inline MetricWeights validate_weights(const MetricWeights& w) {
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  auto check_pair = [&](const char* name, double a, double b) {
    if (!in_unit(a) || !in_unit(b))
      throw Error(ErrorCode::ValueOutOfRange, std::string(name) + " weights must lie in [0,1]");
    if (std::abs(a + b - 1.0) > 1e-9)
      throw Error(ErrorCode::WeightSumViolation, std::string(name) + " weights must sum to 1");
  };
  check_pair("alpha_retrieval/beta_retrieval", w.alpha_retrieval, w.beta_retrieval);
  check_pair("alpha_gen/beta_gen", w.alpha_gen, w.beta_gen);
  check_pair("alpha_std/beta_std", w.alpha_std, w.beta_std);
  if (!std::isfinite(w.theta) || w.theta <= 0.0 || w.theta >= 1.0)
    throw Error(ErrorCode::ThetaOutOfRange, "theta must lie strictly inside (0,1)");
  if (w.m_variations < 2) throw Error(ErrorCode::ValueOutOfRange, "m_variations must be >= 2");
  if (w.k_retrieve < 1) throw Error(ErrorCode::ValueOutOfRange, "k_retrieve must be >= 1");
  return w;
}

/// The six per-question values. Construction validates ranges; there is no
/// way to hold a NaN or out-of-range value.
class MetricVector {
 public:
  MetricVector() = default;
  MetricVector(double retrieval_failure, double prompt_fragility, double generation_anomaly,
               double standard_anomaly, double correctness, double topic_relevance)
      : retrieval_failure_(checked("retrieval_failure", retrieval_failure, 0.0, 1.0)),
        prompt_fragility_(checked("prompt_fragility", prompt_fragility, 0.0, 1.0)),
        generation_anomaly_(checked("generation_anomaly", generation_anomaly, 0.0, 1.0)),
        standard_anomaly_(checked("standard_anomaly", standard_anomaly, 0.0, 1.0)),
        correctness_(checked("correctness", correctness, 0.0, 1.0)),
        topic_relevance_(checked("topic_relevance", topic_relevance, -1.0, 1.0)) {}

  double retrieval_failure() const { return retrieval_failure_; }
  double prompt_fragility() const { return prompt_fragility_; }
  double generation_anomaly() const { return generation_anomaly_; }
  double standard_anomaly() const { return standard_anomaly_; }
  double correctness() const { return correctness_; }
  double topic_relevance() const { return topic_relevance_; }

  friend bool operator==(const MetricVector&, const MetricVector&) = default;

 private:
  static double checked(const char* name, double v, double lo, double hi) {
    if (!std::isfinite(v) || v < lo || v > hi)
      throw Error(ErrorCode::ValueOutOfRange,
                  std::string(name) + " outside [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
    return v;
  }

  double retrieval_failure_ = 0.0;
  double prompt_fragility_ = 0.0;
  double generation_anomaly_ = 0.0;
  double standard_anomaly_ = 0.0;
  double correctness_ = 0.0;
  double topic_relevance_ = 0.0;
};

inline double clamp_unit(double v) {
  if (!std::isfinite(v)) return 0.0;
  return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

// ---------------------------------------------------------------------------
// JSON encodings. Field names follow the wire schema exactly.

inline void to_json(json& j, const Chunk& c) {
  j = json{{"id", c.id}, {"text", c.text}, {"source_doc", c.source_doc},
           {"position", c.position}, {"embedding", c.embedding}};
}

inline void from_json(const json& j, Chunk& c) {
  j.at("id").get_to(c.id);
  j.at("text").get_to(c.text);
  j.at("source_doc").get_to(c.source_doc);
  j.at("position").get_to(c.position);
  c.embedding = j.value("embedding", Embedding{});
  if (c.text.empty()) throw Error(ErrorCode::InvalidArgument, "chunk text must be non-empty");
  if (c.position < 0) throw Error(ErrorCode::InvalidArgument, "chunk position must be >= 0");
}

inline void to_json(json& j, const Question& q) {
  j = json{{"id", q.id}, {"text", q.text}, {"tags", q.tags}};
  j["ground_truth"] = q.ground_truth ? json(*q.ground_truth) : json(nullptr);
  j["gold_chunk_ids"] = q.gold_chunk_ids ? json(*q.gold_chunk_ids) : json(nullptr);
}

inline void from_json(const json& j, Question& q) {
  j.at("id").get_to(q.id);
  j.at("text").get_to(q.text);
  if (q.text.empty()) throw Error(ErrorCode::InvalidArgument, "question text must be non-empty");
  q.ground_truth.reset();
  q.gold_chunk_ids.reset();
  if (auto it = j.find("ground_truth"); it != j.end() && !it->is_null())
    q.ground_truth = it->get<std::string>();
  if (auto it = j.find("gold_chunk_ids"); it != j.end() && !it->is_null())
    q.gold_chunk_ids = it->get<std::set<std::string>>();
  q.tags = j.value("tags", std::set<std::string>{});
}

inline void to_json(json& j, const MetricWeights& w) {
  j = json{{"alpha_retrieval", w.alpha_retrieval}, {"beta_retrieval", w.beta_retrieval},
           {"theta", w.theta},                     {"alpha_gen", w.alpha_gen},
           {"beta_gen", w.beta_gen},               {"alpha_std", w.alpha_std},
           {"beta_std", w.beta_std},               {"m_variations", w.m_variations},
           {"k_retrieve", w.k_retrieve}};
}

/// Missing fields keep their defaults so partial overrides are accepted.
inline void from_json(const json& j, MetricWeights& w) {
  MetricWeights d;
  w.alpha_retrieval = j.value("alpha_retrieval", d.alpha_retrieval);
  w.beta_retrieval = j.value("beta_retrieval", d.beta_retrieval);
  w.theta = j.value("theta", d.theta);
  w.alpha_gen = j.value("alpha_gen", d.alpha_gen);
  w.beta_gen = j.value("beta_gen", d.beta_gen);
  w.alpha_std = j.value("alpha_std", d.alpha_std);
  w.beta_std = j.value("beta_std", d.beta_std);
  w.m_variations = j.value("m_variations", d.m_variations);
  w.k_retrieve = j.value("k_retrieve", d.k_retrieve);
}

inline void to_json(json& j, const MetricVector& m) {
  j = json{{"retrieval_failure", m.retrieval_failure()}, {"prompt_fragility", m.prompt_fragility()},
           {"generation_anomaly", m.generation_anomaly()}, {"standard_anomaly", m.standard_anomaly()},
           {"correctness", m.correctness()},               {"topic_relevance", m.topic_relevance()}};
}

inline void from_json(const json& j, MetricVector& m) {
  m = MetricVector(j.at("retrieval_failure").get<double>(), j.at("prompt_fragility").get<double>(),
                   j.at("generation_anomaly").get<double>(), j.at("standard_anomaly").get<double>(),
                   j.at("correctness").get<double>(), j.at("topic_relevance").get<double>());
}

}  // namespace ragtrace
