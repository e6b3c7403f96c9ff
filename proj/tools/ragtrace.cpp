// ragtrace command-line entry points: ingest, eval, project, serve, export.
// Exit codes: 0 success, 1 usage error, 2 runtime error. Progress goes to
// stderr as one JSON object per line: {"event", "pct", "msg"}.

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "ragtrace/api.hpp"
#include "ragtrace/experiment.hpp"
#include "ragtrace/ingest.hpp"
#include "ragtrace/openai_gateway.hpp"
#include "ragtrace/projection.hpp"

namespace {

using ragtrace::json;

std::mutex g_event_mu;

void emit(std::string_view event, double pct, const std::string& msg) {
  std::lock_guard lock(g_event_mu);
  std::cerr << json{{"event", event}, {"pct", pct}, {"msg", msg}}.dump() << '\n';
}

void write_output(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ragtrace::Error(ragtrace::ErrorCode::IoError, "cannot write " + path);
  out << content;
  if (!out) throw ragtrace::Error(ragtrace::ErrorCode::IoError, "write failed for " + path);
}

/// Inline JSON when the argument starts with '{', otherwise a file path.
json json_argument(const std::string& arg) {
  const auto body = ragtrace::text::trim(arg);
  const std::string content = !body.empty() && body.front() == '{' ? std::string(body) : ragtrace::read_text_file(arg);
  try {
    return json::parse(content);
  } catch (const json::exception& e) {
    throw ragtrace::Error(ragtrace::ErrorCode::InvalidArgument, "malformed JSON in '" + arg + "': " + e.what());
  }
}

/// Settings from --config, before flag overrides.
struct Settings {
  ragtrace::BackendConfig backend;
  ragtrace::MetricWeights weights;
  ragtrace::DiagnosticsOptions diagnostics;
  ragtrace::ChunkingConfig chunking;
  std::string data_dir = "ragtrace-data";
  std::size_t workers = 4;
};

Settings load_settings(const std::string& config_path) {
  Settings s;
  if (config_path.empty()) return s;
  const json j = json_argument(config_path);
  s.backend = j.get<ragtrace::BackendConfig>();
  if (j.contains("weights")) s.weights = j["weights"].get<ragtrace::MetricWeights>();
  if (j.contains("diagnostics")) s.diagnostics = j["diagnostics"].get<ragtrace::DiagnosticsOptions>();
  if (j.contains("chunking")) s.chunking = j["chunking"].get<ragtrace::ChunkingConfig>();
  s.data_dir = j.value("data_dir", s.data_dir);
  s.workers = j.value("workers", s.workers);
  return s;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ragtrace: diagnostics for retrieval-augmented generation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  std::string config_path;
  std::string backend;
  app.add_option("--config", config_path, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  app.add_option("--backend", backend, "Model backend")->check(CLI::IsMember({"mock", "openai", "openai_compatible"}));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Chunk and embed a JSONL document set into a corpus directory");
  std::string docs_path, ingest_out;
  int max_tokens = 0, overlap = -1;
  ingest->add_option("--docs", docs_path, "JSONL with {doc_id, text} per line")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "Corpus output directory")->required();
  ingest->add_option("--max-tokens", max_tokens, "Tokens per chunk")->check(CLI::PositiveNumber);
  ingest->add_option("--overlap", overlap, "Tokens shared by neighbouring windows")->check(CLI::NonNegativeNumber);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate every question and write the run");
  std::string eval_corpus, eval_questions, eval_out, strategy_name = "plain", weights_arg, label = "original";
  std::string runs_dir;
  int k = 0;
  double diversity = 0.0;
  eval->add_option("--corpus", eval_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--questions", eval_questions, "Questions JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--strategy", strategy_name, "Retrieval strategy")
      ->check(CLI::IsMember({"plain", "standard", "hyde"}));
  eval->add_option("--out", eval_out, "Run JSON output path ('-' for stdout)")->required();
  eval->add_option("--k", k, "Chunks retrieved per question")->check(CLI::PositiveNumber);
  eval->add_option("--diversity", diversity, "Generation temperature")->check(CLI::Range(0.0, 2.0));
  eval->add_option("--weights", weights_arg, "Metric weights as a JSON file or inline object");
  eval->add_option("--label", label, "Run label");
  eval->add_option("--runs-dir", runs_dir, "Run store directory (default <data_dir>/runs)");

  // project
  auto* project = app.add_subcommand("project", "Fit the 2-D projection and density grid of a corpus");
  std::string proj_corpus, proj_out;
  double perplexity = 30.0;
  int iterations = 750, resolution = 200;
  std::uint64_t seed = 42;
  project->add_option("--corpus", proj_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  project->add_option("--out", proj_out, "Projection JSON output path ('-' for stdout)")->required();
  project->add_option("--perplexity", perplexity, "t-SNE perplexity")->check(CLI::PositiveNumber);
  project->add_option("--iterations", iterations, "Gradient steps")->check(CLI::NonNegativeNumber);
  project->add_option("--seed", seed, "Initialization seed");
  project->add_option("--grid", resolution, "Density grid resolution")->check(CLI::PositiveNumber);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  std::string serve_corpus, serve_questions, data_dir_arg, host = "127.0.0.1";
  int port = ragtrace::kDefaultPort;
  serve->add_option("--corpus", serve_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--questions", serve_questions, "Questions JSONL")->check(CLI::ExistingFile);
  serve->add_option("--port", port, "Listen port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--data-dir", data_dir_arg, "Directory for runs and the entity lexicon");

  // export
  auto* exp = app.add_subcommand("export", "Write a stored run as JSON or CSV");
  std::string run_id, format = "json", export_out = "-";
  exp->add_option("--run", run_id, "Run id")->required();
  exp->add_option("--format", format, "Output format")->check(CLI::IsMember({"json", "csv"}));
  exp->add_option("--runs-dir", runs_dir, "Run store directory (default <data_dir>/runs)");
  exp->add_option("--out", export_out, "Output path ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    const auto chosen = app.get_subcommands();
    std::cerr << (chosen.empty() ? app.help() : chosen.back()->help());
    return 1;
  }

  try {
    Settings settings = load_settings(config_path);
    if (!backend.empty()) settings.backend.backend = backend;

    if (*ingest) {
      if (max_tokens > 0) settings.chunking.max_tokens = max_tokens;
      if (overlap >= 0) settings.chunking.overlap_tokens = overlap;
      ragtrace::validate(settings.chunking);
      auto gateway = ragtrace::make_gateway(settings.backend);
      emit("start", 0, "reading " + docs_path);
      const auto docs = ragtrace::read_documents_jsonl(docs_path);
      auto chunks = ragtrace::chunk_documents(docs, settings.chunking);
      emit("progress", 20, std::to_string(docs.size()) + " documents, " + std::to_string(chunks.size()) + " chunks");
      const auto corpus = ragtrace::embed_chunks(std::move(chunks), *gateway, settings.chunking);
      emit("progress", 90, "embedded " + std::to_string(corpus.size()) + " chunks");
      ragtrace::save_corpus(corpus, ingest_out);
      emit("done", 100, "corpus written to " + ingest_out + " (" + ragtrace::hex64(corpus.content_hash()) + ")");
      return 0;
    }

    if (*eval) {
      if (!weights_arg.empty()) {
        json merged = settings.weights;
        merged.update(json_argument(weights_arg));
        settings.weights = merged.get<ragtrace::MetricWeights>();
      }
      ragtrace::validate_weights(settings.weights);
      auto gateway = ragtrace::make_gateway(settings.backend);
      emit("start", 0, "loading corpus " + eval_corpus);
      const auto corpus = ragtrace::load_corpus(eval_corpus);
      const auto questions = ragtrace::read_questions_jsonl(eval_questions);
      ragtrace::SamplingConfig cfg;
      cfg.diversity = diversity;
      cfg.num_chunks = k > 0 ? k : settings.weights.k_retrieve;
      cfg.num_questions = static_cast<int>(std::max<std::size_t>(1, questions.size()));
      ragtrace::RetrievalStrategy strategy;
      strategy.kind = ragtrace::parse_retrieval_kind(strategy_name);
      ragtrace::RunOptions opts;
      opts.label = label;
      opts.diagnostics = settings.diagnostics;
      opts.workers = settings.workers;
      opts.progress = [](double pct, const std::string& msg) { emit("progress", pct, msg); };
      const auto run = ragtrace::execute_run(questions, corpus, strategy, cfg, *gateway, settings.weights, opts);
      ragtrace::RunStore store(runs_dir.empty() ? std::filesystem::path(settings.data_dir) / "runs"
                                                : std::filesystem::path(runs_dir));
      store.persist(run);
      write_output(eval_out, json(run).dump(2) + "\n");
      std::size_t failed = 0;
      for (const auto& r : run.records) failed += r.ok() ? 0 : 1;
      emit("done", 100, run.run_id + ": " + std::to_string(run.records.size()) + " records, " +
                            std::to_string(failed) + " failed");
      return 0;
    }

    if (*project) {
      emit("start", 0, "loading corpus " + proj_corpus);
      const auto corpus = ragtrace::load_corpus(proj_corpus);
      emit("progress", 5, "fitting " + std::to_string(std::min(corpus.size(), ragtrace::kDisplayCap)) + " points");
      const auto state = ragtrace::fit_projection(corpus, perplexity, iterations, seed);
      const auto grid = ragtrace::grid_density(state, resolution);
      json out = ragtrace::projection_export(state, grid);
      out["perplexity"] = state.perplexity;
      out["iterations"] = state.iterations;
      out["seed"] = state.seed;
      out["corpus_hash"] = ragtrace::hex64(state.corpus_hash);
      write_output(proj_out, out.dump() + "\n");
      emit("done", 100, "projection written to " + proj_out);
      return 0;
    }

    if (*serve) {
      ragtrace::AppConfig cfg;
      cfg.data_dir = data_dir_arg.empty() ? settings.data_dir : data_dir_arg;
      cfg.weights = settings.weights;
      cfg.diagnostics = settings.diagnostics;
      std::shared_ptr<ragtrace::Gateway> gateway = ragtrace::make_gateway(settings.backend);
      ragtrace::AppState state(gateway, cfg);
      state.set_corpus(std::make_shared<const ragtrace::Corpus>(ragtrace::load_corpus(serve_corpus)));
      if (!serve_questions.empty()) state.set_questions(ragtrace::read_questions_jsonl(serve_questions));
      ragtrace::ApiServer server(state);
      const int bound = server.bind(host, port);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::thread watcher([&] {
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
      });
      emit("listening", 100, "http://" + host + ":" + std::to_string(bound));
      server.serve();
      g_stop = true;
      watcher.join();
      emit("done", 100, "server stopped");
      return 0;
    }

    if (*exp) {
      ragtrace::RunStore store(runs_dir.empty() ? std::filesystem::path(settings.data_dir) / "runs"
                                                : std::filesystem::path(runs_dir));
      const auto run = store.load(run_id);
      write_output(export_out, format == "csv" ? ragtrace::run_to_csv(run) : json(run).dump(2) + "\n");
      return 0;
    }
  } catch (const ragtrace::Error& e) {
    emit("error", 100, e.what());
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    emit("error", 100, e.what());
    std::cerr << e.what() << '\n';
    return 2;
  }
  return 1;
}
