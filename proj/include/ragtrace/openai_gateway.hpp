#pragma once

// OpenAI-compatible HTTP backend (chat completions with logprobs, embeddings)
// plus the config/env factory that selects between it and the mock.

#include <cstdlib>
#include <memory>
#include <regex>
#include <string>

#include <httplib.h>

#include "ragtrace/gateway.hpp"
#include "ragtrace/mock_gateway.hpp"

namespace ragtrace {

struct OpenAIConfig {
  std::string api_base = "https://api.openai.com/v1";
  std::string api_key;
  std::string embed_model = "text-embedding-3-large";
  std::string chat_model = "gpt-4o-mini";
  /// Request token logprobs; set false for servers that reject the flag.
  bool logprobs = true;
  std::size_t embed_batch = 64;
};

class OpenAICompatibleGateway final : public Gateway {
 public:
  explicit OpenAICompatibleGateway(OpenAIConfig cfg, GatewayConfig gw = {})
      : Gateway(std::move(gw)), cfg_(std::move(cfg)) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg_.api_base, m, url_re))
      throw Error(ErrorCode::InvalidArgument, "api_base must be an http(s) URL: " + cfg_.api_base);
    origin_ = m[1].str();
    prefix_ = m[2].matched ? m[2].str() : std::string();
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  std::string id() const override { return "openai_compatible:" + cfg_.embed_model + "+" + cfg_.chat_model; }

  /// Sends a chat message; used by the judge and paraphrase hooks.
  Completion chat(const std::string& content, double temperature, bool want_logprobs) {
    json body = {{"model", cfg_.chat_model},
                 {"messages", json::array({{{"role", "user"}, {"content", content}}})},
                 {"temperature", temperature}};
    if (want_logprobs) body["logprobs"] = true;
    const json resp = post("/chat/completions", body);
    Completion c;
    try {
      const auto& choice = resp.at("choices").at(0);
      c.text = choice.at("message").at("content").get<std::string>();
      if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
        if (auto content_lp = lp->find("content"); content_lp != lp->end() && content_lp->is_array()) {
          std::vector<double> probs;
          for (const auto& tok : *content_lp) probs.push_back(std::exp(tok.at("logprob").get<double>()));
          if (!probs.empty()) c.token_probs = std::move(probs);
        }
      }
      if (auto u = resp.find("usage"); u != resp.end() && u->is_object()) c.usage = u->get<Usage>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::GatewayError, std::string("malformed chat completion: ") + e.what());
    }
    return c;
  }

 protected:
  std::vector<Embedding> do_embed(const std::vector<std::string>& texts) override {
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (std::size_t begin = 0; begin < texts.size(); begin += cfg_.embed_batch) {
      const std::size_t end = std::min(texts.size(), begin + cfg_.embed_batch);
      json body = {{"model", cfg_.embed_model},
                   {"input", std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(begin),
                                                      texts.begin() + static_cast<std::ptrdiff_t>(end))}};
      json resp;
      try {
        resp = post("/embeddings", body);
      } catch (const Error& e) {
        throw Error(e.code(), "embedding batch [" + std::to_string(begin) + "," + std::to_string(end) +
                                  "): " + e.what());
      }
      std::vector<Embedding> batch(end - begin);
      try {
        for (const auto& item : resp.at("data")) {
          const auto idx = item.value("index", std::size_t{0});
          if (idx >= batch.size()) throw Error(ErrorCode::GatewayError, "embedding index out of range");
          batch[idx] = item.at("embedding").get<Embedding>();
        }
      } catch (const json::exception& e) {
        throw Error(ErrorCode::GatewayError, std::string("malformed embeddings response: ") + e.what());
      }
      for (auto& e : batch) {
        if (e.empty()) throw Error(ErrorCode::GatewayError, "embeddings response is missing rows");
        out.push_back(std::move(e));
      }
    }
    return out;
  }

  Completion do_complete(const CompletionRequest& req) override {
    return chat(req.prompt, req.temperature, cfg_.logprobs && !req.self_report_confidence);
  }

  std::vector<std::string> do_paraphrase(std::string_view question, int count) override {
    const auto prompt = fill_template(config().prompts.paraphrase,
                                      {{"question", question}, {"n", std::to_string(count)}});
    const auto c = chat(prompt, 0.7, false);
    std::vector<std::string> out;
    for (const auto& line : split_lines(c.text)) {
      std::string_view l = text::trim(line);
      // Drop list markers such as "1." or "-".
      while (!l.empty() && (std::isdigit(static_cast<unsigned char>(l.front())) || l.front() == '.' ||
                            l.front() == '-' || l.front() == ')'))
        l.remove_prefix(1);
      l = text::trim(l);
      if (!l.empty()) out.emplace_back(l);
    }
    return out;
  }

  JudgeVerdict do_judge_uncertainty(std::string_view answer) override {
    const auto c = chat(fill_template(config().prompts.uncertainty, {{"answer", answer}}), 0.0, false);
    const auto v = first_number(c.text);
    if (!v) throw Error(ErrorCode::GatewayError, "uncertainty judge returned no number: " + c.text);
    return {clamp_unit(*v > 1.0 ? *v / 100.0 : *v), c.text};
  }

  JudgeVerdict do_judge_fact_support(std::string_view claim, std::span<const Chunk> evidence) override {
    std::string ev;
    for (const auto& ch : evidence) ev += "- " + ch.text + "\n";
    const auto c =
        chat(fill_template(config().prompts.fact_support, {{"claim", claim}, {"evidence", ev}}), 0.0, false);
    const auto v = first_number(c.text);
    if (!v) throw Error(ErrorCode::GatewayError, "fact-support judge returned no number: " + c.text);
    return {clamp_unit(*v > 1.0 ? *v / 100.0 : *v), c.text};
  }

  EntityExpansion do_expand_entity(std::string_view entity, std::string_view context) override {
    const auto c = chat(fill_template(config().prompts.expand_entity, {{"entity", entity}, {"context", context}}),
                        0.0, false);
    const auto open = c.text.find('{');
    const auto close = c.text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open)
      throw Error(ErrorCode::GatewayError, "entity expansion returned no JSON object");
    EntityExpansion e;
    try {
      const auto j = json::parse(c.text.substr(open, close - open + 1));
      for (const auto& s : j.value("synonyms", json::array())) e.synonyms.insert(text::lowercase(s.get<std::string>()));
      for (const auto& s : j.value("antonyms", json::array())) e.antonyms.insert(text::lowercase(s.get<std::string>()));
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::GatewayError, std::string("entity expansion JSON: ") + ex.what());
    }
    return e;
  }

  bool supports_logprobs() const override { return cfg_.logprobs; }

  bool retryable(const Error& e) const override {
    // 4xx responses other than 408/429 will not succeed on retry.
    const std::string msg = e.what();
    return msg.find("HTTP 4") == std::string::npos || msg.find("HTTP 408") != std::string::npos ||
           msg.find("HTTP 429") != std::string::npos;
  }

 private:
  json post(const std::string& path, const json& body) {
    httplib::Client cli(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config().deadline).count();
    cli.set_connection_timeout(static_cast<time_t>(std::max<long long>(1, secs)), 0);
    cli.set_read_timeout(static_cast<time_t>(std::max<long long>(1, secs)), 0);
    cli.set_write_timeout(static_cast<time_t>(std::max<long long>(1, secs)), 0);
    if (!cfg_.api_key.empty()) cli.set_bearer_token_auth(cfg_.api_key);
    auto res = cli.Post(prefix_ + path, body.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      throw Error(err == httplib::Error::Read || err == httplib::Error::Write ? ErrorCode::Timeout
                                                                              : ErrorCode::GatewayError,
                  "request to " + origin_ + prefix_ + path + " failed: " + httplib::to_string(err));
    }
    if (res->status < 200 || res->status >= 300)
      throw Error(ErrorCode::GatewayError, "HTTP " + std::to_string(res->status) + " from " + path + ": " +
                                               res->body.substr(0, 300));
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::GatewayError, std::string("response is not JSON: ") + e.what());
    }
  }

  static std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
      auto end = s.find('\n', start);
      if (end == std::string::npos) end = s.size();
      out.push_back(s.substr(start, end - start));
      start = end + 1;
    }
    return out;
  }

  static std::optional<double> first_number(const std::string& s) {
    static const std::regex num_re(R"((\d+(?:\.\d+)?))");
    std::smatch m;
    if (!std::regex_search(s, m, num_re)) return std::nullopt;
    return std::stod(m[1].str());
  }

  OpenAIConfig cfg_;
  std::string origin_;
  std::string prefix_;
};

struct BackendConfig {
  std::string backend = "mock";  // "mock" | "openai_compatible"
  MockOptions mock;
  OpenAIConfig openai;
  GatewayConfig gateway;
};

inline void from_json(const json& j, MockOptions& m) {
  const MockOptions d;
  m.dimension = j.value("dimension", d.dimension);
  m.logprobs = j.value("logprobs", d.logprobs);
  m.fail_when_contains = j.value("fail_when_contains", d.fail_when_contains);
  if (j.contains("forced_uncertainty") && !j["forced_uncertainty"].is_null())
    m.forced_uncertainty = j["forced_uncertainty"].get<double>();
  if (j.contains("forced_support") && !j["forced_support"].is_null()) m.forced_support = j["forced_support"].get<double>();
  m.synonyms = j.value("synonyms", d.synonyms);
  if (m.dimension == 0) throw Error(ErrorCode::InvalidArgument, "mock dimension must be positive");
}

inline void from_json(const json& j, OpenAIConfig& c) {
  const OpenAIConfig d;
  c.api_base = j.value("api_base", d.api_base);
  c.api_key = j.value("api_key", d.api_key);
  c.embed_model = j.value("embed_model", d.embed_model);
  c.chat_model = j.value("chat_model", d.chat_model);
  c.logprobs = j.value("logprobs", d.logprobs);
  c.embed_batch = j.value("embed_batch", d.embed_batch);
}

inline void from_json(const json& j, GatewayConfig& g) {
  const GatewayConfig d;
  g.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  g.max_retries = j.value("max_retries", d.max_retries);
  g.backoff = std::chrono::milliseconds(j.value("backoff_ms", static_cast<std::int64_t>(d.backoff.count())));
  g.deadline = std::chrono::milliseconds(j.value("deadline_ms", static_cast<std::int64_t>(d.deadline.count())));
  if (j.contains("prompts")) g.prompts = j["prompts"].get<PromptTemplates>();
  if (g.max_in_flight == 0) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be positive");
  if (g.max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
}

/// Keys: backend, mock, openai, gateway; all optional.
inline void from_json(const json& j, BackendConfig& b) {
  b.backend = j.value("backend", std::string("mock"));
  if (j.contains("mock")) b.mock = j["mock"].get<MockOptions>();
  if (j.contains("openai")) b.openai = j["openai"].get<OpenAIConfig>();
  if (j.contains("gateway")) b.gateway = j["gateway"].get<GatewayConfig>();
}

/// Reads RAGTRACE_API_BASE / RAGTRACE_API_KEY / RAGTRACE_EMBED_MODEL /
/// RAGTRACE_CHAT_MODEL over the given defaults.
inline OpenAIConfig openai_config_from_env(OpenAIConfig cfg = {}) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("RAGTRACE_API_BASE")) cfg.api_base = *v;
  if (auto v = env("RAGTRACE_API_KEY")) cfg.api_key = *v;
  if (auto v = env("RAGTRACE_EMBED_MODEL")) cfg.embed_model = *v;
  if (auto v = env("RAGTRACE_CHAT_MODEL")) cfg.chat_model = *v;
  return cfg;
}

inline std::unique_ptr<Gateway> make_gateway(const BackendConfig& cfg) {
  if (cfg.backend == "mock") return std::make_unique<MockGateway>(cfg.mock, cfg.gateway);
  if (cfg.backend == "openai_compatible" || cfg.backend == "openai")
    return std::make_unique<OpenAICompatibleGateway>(openai_config_from_env(cfg.openai), cfg.gateway);
  throw Error(ErrorCode::InvalidArgument, "unknown backend '" + cfg.backend + "' (expected mock|openai_compatible)");
}

}  // namespace ragtrace
