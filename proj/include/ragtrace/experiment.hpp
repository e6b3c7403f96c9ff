#pragma once

// Sampling configuration, question sampling, run execution, before/after
// radar data, and the on-disk run store.

#include <algorithm>
#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ragtrace/core.hpp"
#include "ragtrace/diagnostics.hpp"
#include "ragtrace/gateway.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/retrieval.hpp"

namespace ragtrace {

enum class Selection { HighHallucination, SimilarityToFocus, ImprovementPotential, Random };

NLOHMANN_JSON_SERIALIZE_ENUM(Selection, {{Selection::HighHallucination, "high_hallucination"},
                                         {Selection::SimilarityToFocus, "similarity_to_focus"},
                                         {Selection::ImprovementPotential, "improvement_potential"},
                                         {Selection::Random, "random"}})

inline Selection parse_selection(std::string_view s) {
  if (s == "high_hallucination") return Selection::HighHallucination;
  if (s == "similarity_to_focus") return Selection::SimilarityToFocus;
  if (s == "improvement_potential") return Selection::ImprovementPotential;
  if (s == "random") return Selection::Random;
  throw Error(ErrorCode::InvalidArgument, "unknown selection preset '" + std::string(s) + "'");
}

struct SamplingConfig {
  double diversity = 0.0;
  int num_chunks = 10;
  std::vector<std::string> keywords;
  std::set<std::string> tags;
  int num_questions = 10;
  Selection selection = Selection::Random;
  std::optional<std::string> focus_question_id;

  friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;
};

inline SamplingConfig validate(const SamplingConfig& c) {
  if (!std::isfinite(c.diversity) || c.diversity < 0.0 || c.diversity > 2.0)
    throw Error(ErrorCode::ValueOutOfRange, "diversity must lie in [0,2]");
  if (c.num_chunks < 1) throw Error(ErrorCode::ValueOutOfRange, "num_chunks must be >= 1");
  if (c.num_questions < 1) throw Error(ErrorCode::ValueOutOfRange, "num_questions must be >= 1");
  if (c.selection == Selection::SimilarityToFocus && !c.focus_question_id)
    throw Error(ErrorCode::InvalidArgument, "similarity_to_focus requires focus_question_id");
  return c;
}

inline void to_json(json& j, const SamplingConfig& c) {
  j = json{{"diversity", c.diversity},         {"num_chunks", c.num_chunks},
           {"keywords", c.keywords},           {"tags", c.tags},
           {"num_questions", c.num_questions}, {"selection", c.selection},
           {"focus_question_id", c.focus_question_id ? json(*c.focus_question_id) : json(nullptr)}};
}
inline void from_json(const json& j, SamplingConfig& c) {
  const SamplingConfig d;
  c.diversity = j.value("diversity", d.diversity);
  c.num_chunks = j.value("num_chunks", d.num_chunks);
  c.keywords = j.value("keywords", d.keywords);
  c.tags = j.value("tags", d.tags);
  c.num_questions = j.value("num_questions", d.num_questions);
  c.selection = j.contains("selection") ? parse_selection(j.at("selection").get<std::string>()) : d.selection;
  if (auto it = j.find("focus_question_id"); it != j.end() && !it->is_null()) c.focus_question_id = it->get<std::string>();
  validate(c);
}

struct ExperimentRun {
  std::string run_id;
  std::string label;  // "original", "before", "after", or free text
  std::optional<std::string> parent_run_id;
  SamplingConfig config;
  RetrievalStrategy strategy;
  MetricWeights weights;
  std::vector<EvaluationRecord> records;
  std::string started_at;
  std::string finished_at;

  const EvaluationRecord* find(std::string_view question_id) const {
    for (const auto& r : records)
      if (r.question_id == question_id) return &r;
    return nullptr;
  }

  friend bool operator==(const ExperimentRun&, const ExperimentRun&) = default;
};

/// Encoding without timestamps; byte-stable for a given run content.
inline json canonical_run_json(const ExperimentRun& r) {
  return json{{"run_id", r.run_id},
              {"label", r.label},
              {"parent_run_id", r.parent_run_id ? json(*r.parent_run_id) : json(nullptr)},
              {"config", r.config},
              {"strategy", r.strategy},
              {"weights", r.weights},
              {"records", r.records}};
}

inline void to_json(json& j, const ExperimentRun& r) {
  j = canonical_run_json(r);
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
}
inline void from_json(const json& j, ExperimentRun& r) {
  j.at("run_id").get_to(r.run_id);
  j.at("label").get_to(r.label);
  if (auto it = j.find("parent_run_id"); it != j.end() && !it->is_null()) r.parent_run_id = it->get<std::string>();
  j.at("config").get_to(r.config);
  j.at("strategy").get_to(r.strategy);
  r.weights = validate_weights(j.value("weights", MetricWeights{}));
  j.at("records").get_to(r.records);
  r.started_at = j.value("started_at", "");
  r.finished_at = j.value("finished_at", "");
}

/// Run id derived from the run content (everything but id and timestamps).
inline std::string compute_run_id(const ExperimentRun& r) {
  json j = canonical_run_json(r);
  j.erase("run_id");
  return "run-" + hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

struct Ranked {
  const Question* q;
  double score;
};

inline std::vector<Question> take_top(std::vector<Ranked> ranked, std::size_t n) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.q->id < b.q->id;
  });
  std::vector<Question> out;
  for (std::size_t i = 0; i < std::min(n, ranked.size()); ++i) out.push_back(*ranked[i].q);
  return out;
}

inline std::map<std::string, const EvaluationRecord*> ok_records(const std::vector<EvaluationRecord>* records) {
  std::map<std::string, const EvaluationRecord*> out;
  if (records == nullptr) return out;
  for (const auto& r : *records)
    if (r.ok()) out.emplace(r.question_id, &r);
  return out;
}

}  // namespace detail

/// Questions ranked by cosine between their text and a focus embedding.
inline std::vector<std::pair<const Question*, double>> rank_by_similarity(const std::vector<Question>& questions,
                                                                          std::span<const float> focus,
                                                                          Gateway& gateway) {
  std::vector<std::string> texts;
  for (const auto& q : questions) texts.push_back(q.text);
  const auto vecs = texts.empty() ? std::vector<Embedding>{} : gateway.embed(texts);
  std::vector<std::pair<const Question*, double>> out;
  for (std::size_t i = 0; i < questions.size(); ++i) out.emplace_back(&questions[i], cosine(vecs[i], focus));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first->id < b.first->id;
  });
  return out;
}

/// Picks cfg.num_questions questions by the configured preset. Presets that
/// rank by prior metrics put questions without a prior record last. The focus
/// question itself is not a candidate for similarity_to_focus.
inline std::vector<Question> sample_questions(const std::vector<Question>& all,
                                              const std::vector<EvaluationRecord>* prior, const SamplingConfig& cfg,
                                              std::uint64_t seed, Gateway& gateway) {
  validate(cfg);
  const auto n = static_cast<std::size_t>(cfg.num_questions);
  switch (cfg.selection) {
    case Selection::Random: {
      if (n > all.size())
        throw Error(ErrorCode::InvalidArgument, "cannot sample " + std::to_string(n) + " of " +
                                                    std::to_string(all.size()) + " questions");
      std::vector<std::size_t> idx(all.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      SeededRng rng(seed);
      for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      std::vector<Question> out;
      for (std::size_t i = 0; i < n; ++i) out.push_back(all[idx[i]]);
      return out;
    }
    case Selection::HighHallucination:
    case Selection::ImprovementPotential: {
      if (n > all.size())
        throw Error(ErrorCode::InvalidArgument, "cannot sample " + std::to_string(n) + " of " +
                                                    std::to_string(all.size()) + " questions");
      const auto recs = detail::ok_records(prior);
      if (recs.empty()) throw Error(ErrorCode::MissingPriorRecords, "preset needs records from a previous run");
      std::vector<detail::Ranked> ranked;
      for (const auto& q : all) {
        auto it = recs.find(q.id);
        double score = -std::numeric_limits<double>::infinity();
        if (it != recs.end()) {
          const auto& m = it->second->metrics;
          score = cfg.selection == Selection::HighHallucination ? m.standard_anomaly()
                                                                : (1.0 - m.correctness()) * m.topic_relevance();
        }
        ranked.push_back({&q, score});
      }
      return detail::take_top(std::move(ranked), n);
    }
    case Selection::SimilarityToFocus: {
      const auto& focus_id = *cfg.focus_question_id;
      auto focus = std::find_if(all.begin(), all.end(), [&](const Question& q) { return q.id == focus_id; });
      if (focus == all.end()) throw Error(ErrorCode::FocusNotFound, "focus question " + focus_id + " not found");
      std::vector<Question> candidates;
      for (const auto& q : all)
        if (q.id != focus_id) candidates.push_back(q);
      if (n > candidates.size())
        throw Error(ErrorCode::InvalidArgument, "cannot sample " + std::to_string(n) + " of " +
                                                    std::to_string(candidates.size()) + " candidate questions");
      const auto fv = gateway.embed_one(focus->text);
      std::vector<Question> out;
      for (const auto& [q, s] : rank_by_similarity(candidates, fv, gateway)) {
        if (out.size() == n) break;
        out.push_back(*q);
      }
      return out;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown selection preset");
}

// ---------------------------------------------------------------------------
// Execution

using ProgressFn = std::function<void(double pct, const std::string& msg)>;

/// Strategy with the sampling config's k, keywords and tags applied.
inline RetrievalStrategy effective_strategy(RetrievalStrategy strategy, const SamplingConfig& cfg) {
  strategy.k = cfg.num_chunks;
  strategy.keywords = cfg.keywords;
  strategy.tags = cfg.tags;
  return strategy;
}

struct RunOptions {
  std::string label = "original";
  std::optional<std::string> parent_run_id;
  DiagnosticsOptions diagnostics;
  std::size_t workers = 4;
  ProgressFn progress;
};

/// Evaluates every question concurrently. A failing question yields a record
/// with its error; the rest of the run proceeds.
inline ExperimentRun execute_run(const std::vector<Question>& questions, const Corpus& corpus,
                                 const RetrievalStrategy& strategy, const SamplingConfig& cfg, Gateway& gateway,
                                 const MetricWeights& weights, const RunOptions& opts = {}) {
  validate(cfg);
  validate_weights(weights);
  std::set<std::string> ids;
  for (const auto& q : questions)
    if (!ids.insert(q.id).second) throw Error(ErrorCode::DuplicateId, "question " + q.id + " appears twice");

  ExperimentRun run;
  run.label = opts.label;
  run.parent_run_id = opts.parent_run_id;
  run.config = cfg;
  run.strategy = effective_strategy(strategy, cfg);
  run.weights = weights;
  run.started_at = utc_timestamp();
  run.records.resize(questions.size());

  std::atomic<std::size_t> next{0}, done{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < questions.size(); i = next++) {
      run.records[i] = evaluate_question_isolated(questions[i], corpus, run.strategy, cfg.diversity, gateway, weights,
                                                  opts.diagnostics);
      const std::size_t d = ++done;
      if (opts.progress) {
        std::lock_guard lock(progress_mu);
        opts.progress(100.0 * static_cast<double>(d) / static_cast<double>(questions.size()),
                      "evaluated " + questions[i].id);
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(opts.workers, questions.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_workers; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  run.finished_at = utc_timestamp();
  run.run_id = compute_run_id(run);
  return run;
}

// ---------------------------------------------------------------------------
// Radar data

inline constexpr std::array<std::string_view, 6> kRadarAxes = {"retrieval_failure", "prompt_fragility",
                                                                "generation_anomaly", "standard_anomaly",
                                                                "correctness", "topic_relevance"};

/// Chart values in axis order; topic relevance rescaled to [0,1].
inline std::array<double, 6> radar_values(const MetricVector& m) {
  return {m.retrieval_failure(), m.prompt_fragility(), m.generation_anomaly(),
          m.standard_anomaly(),  m.correctness(),      (m.topic_relevance() + 1.0) / 2.0};
}

struct RadarChart {
  std::string question_id;
  std::vector<std::pair<std::string, std::array<double, 6>>> series;  // label -> values, in run order
};

/// One chart per question (order of first appearance), one series per run
/// holding a successful record for it. With several runs, at least one
/// question must appear in two of them.
inline std::vector<RadarChart> radar_data(const std::vector<ExperimentRun>& runs) {
  if (runs.empty()) throw Error(ErrorCode::InvalidArgument, "radar data needs at least one run");
  std::vector<std::string> order;
  std::map<std::string, int> membership;
  for (const auto& run : runs) {
    for (const auto& r : run.records) {
      if (!r.ok()) continue;
      if (membership[r.question_id]++ == 0) order.push_back(r.question_id);
    }
  }
  if (runs.size() > 1 &&
      std::none_of(membership.begin(), membership.end(), [](const auto& kv) { return kv.second > 1; }))
    throw Error(ErrorCode::NoCommonQuestions, "runs share no evaluated question");

  std::vector<std::string> labels;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const bool dup = std::count_if(runs.begin(), runs.end(), [&](const ExperimentRun& r) {
                       return r.label == runs[i].label;
                     }) > 1;
    labels.push_back(dup ? runs[i].label + " (" + runs[i].run_id + ")" : runs[i].label);
  }
  std::vector<RadarChart> out;
  for (const auto& qid : order) {
    RadarChart chart;
    chart.question_id = qid;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto* rec = runs[i].find(qid);
      if (rec != nullptr && rec->ok()) chart.series.emplace_back(labels[i], radar_values(rec->metrics));
    }
    out.push_back(std::move(chart));
  }
  return out;
}

inline json radar_json(const std::vector<RadarChart>& charts) {
  json axes = json::array();
  for (const auto& a : kRadarAxes) axes.push_back(std::string(a));
  json out = json::array();
  for (const auto& c : charts) {
    json series = json::array();
    for (const auto& [label, values] : c.series) series.push_back({{"label", label}, {"values", values}});
    out.push_back({{"question_id", c.question_id}, {"axes", axes}, {"series", series}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline std::string run_to_csv(const ExperimentRun& run) {
  std::ostringstream out;
  out << "question_id";
  for (const auto& a : kRadarAxes) out << ',' << a;
  out << ",error\n";
  for (const auto& r : run.records) {
    out << detail::csv_field(r.question_id);
    if (r.ok()) {
      const json m = r.metrics;
      for (const auto& a : kRadarAxes) out << ',' << m.at(std::string(a)).dump();
      out << ",\n";
    } else {
      for (std::size_t i = 0; i < kRadarAxes.size(); ++i) out << ',';
      out << ',' << detail::csv_field(r.error->code + ": " + r.error->message) << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Run store

struct RunDescriptor {
  std::string run_id;
  std::string label;
  std::optional<std::string> parent_run_id;
  std::string started_at;
  std::string finished_at;
  std::size_t record_count = 0;

  friend bool operator==(const RunDescriptor&, const RunDescriptor&) = default;
};

inline void to_json(json& j, const RunDescriptor& d) {
  j = json{{"run_id", d.run_id},
           {"label", d.label},
           {"parent_run_id", d.parent_run_id ? json(*d.parent_run_id) : json(nullptr)},
           {"started_at", d.started_at},
           {"finished_at", d.finished_at},
           {"record_count", d.record_count}};
}
inline void from_json(const json& j, RunDescriptor& d) {
  j.at("run_id").get_to(d.run_id);
  j.at("label").get_to(d.label);
  if (auto it = j.find("parent_run_id"); it != j.end() && !it->is_null()) d.parent_run_id = it->get<std::string>();
  d.started_at = j.value("started_at", "");
  d.finished_at = j.value("finished_at", "");
  d.record_count = j.value("record_count", std::size_t{0});
}

/// Directory of <run_id>.json files plus index.json listing runs in creation
/// order. Writes are serialized; persisting an existing id replaces its file
/// and keeps its index position.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create run store " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& directory() const { return dir_; }

  void persist(const ExperimentRun& run) {
    if (run.run_id.empty() || run.run_id.find_first_of("/\\.") != std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "invalid run id '" + run.run_id + "'");
    std::lock_guard lock(mu_);
    write_file(dir_ / (run.run_id + ".json"), json(run).dump(2) + "\n");
    auto index = read_index();
    RunDescriptor d{run.run_id, run.label, run.parent_run_id, run.started_at, run.finished_at, run.records.size()};
    auto it = std::find_if(index.begin(), index.end(), [&](const RunDescriptor& x) { return x.run_id == run.run_id; });
    if (it != index.end()) {
      *it = d;
    } else {
      index.push_back(d);
    }
    write_file(dir_ / "index.json", json(index).dump(2) + "\n");
  }

  ExperimentRun load(std::string_view run_id) const {
    std::lock_guard lock(mu_);
    const auto path = dir_ / (std::string(run_id) + ".json");
    if (run_id.empty() || run_id.find_first_of("/\\") != std::string_view::npos || !std::filesystem::exists(path))
      throw Error(ErrorCode::NotFound, "run " + std::string(run_id) + " not found");
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    try {
      return json::parse(in).get<ExperimentRun>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, "malformed run file " + path.string() + ": " + e.what());
    }
  }

  std::vector<RunDescriptor> list() const {
    std::lock_guard lock(mu_);
    return read_index();
  }

 private:
  std::vector<RunDescriptor> read_index() const {
    const auto path = dir_ / "index.json";
    if (!std::filesystem::exists(path)) return {};
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    try {
      return json::parse(in).get<std::vector<RunDescriptor>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, "malformed run index: " + std::string(e.what()));
    }
  }

  static void write_file(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
      out << content;
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

}  // namespace ragtrace
