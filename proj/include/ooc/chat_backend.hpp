#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

// Eigen before httplib.h: <resolv.h> defines a _res macro that breaks Eigen headers.
#include <Eigen/Core>

#include "httplib.h"
#include "ooc/common.hpp"
#include "ooc/manifest.hpp"
#include "ooc/prompt.hpp"

namespace ooc {

// HTTP contract:
//   POST <endpoint>  {"prompt": string, "image": base64 string}
//   200 -> {"text": string}; 401/403 -> not retried; 429 and 5xx -> retried.
struct ChatBackendConfig {
  std::string endpoint;
  std::string auth_env_var;  // holds the bearer token; empty disables auth
  double timeout_seconds = 30.0;
  int max_retries = 3;
  double backoff_base_seconds = 0.5;
  int max_in_flight = 1;

  void validate() const {
    if (endpoint.empty()) throw ConfigError("chat backend endpoint is empty");
    if (!(timeout_seconds > 0.0)) throw ConfigError("timeout must be > 0");
    if (max_retries < 0 || max_retries > 10) throw ConfigError("max_retries must be in [0, 10]");
    if (!(backoff_base_seconds >= 0.0)) throw ConfigError("backoff_base must be >= 0");
    if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  }
};

struct ChatExchange {
  std::string prompt;
  std::string image_ref;
  std::string raw_response;  // verbatim
  double latency_seconds = 0.0;
  int attempt_count = 0;
};

enum class BackendFailure { Auth, Timeout, Transient, Malformed, Http };

inline std::string_view backend_failure_name(BackendFailure f) {
  switch (f) {
    case BackendFailure::Auth: return "auth";
    case BackendFailure::Timeout: return "timeout";
    case BackendFailure::Transient: return "transient";
    case BackendFailure::Malformed: return "malformed";
    case BackendFailure::Http: return "http";
  }
  return "?";
}

class BackendError : public Error {
 public:
  BackendError(BackendFailure failure, const std::string& what, int attempts)
      : Error(ErrorKind::Backend, what), failure_(failure), attempts_(attempts) {}
  BackendFailure failure() const { return failure_; }
  int attempts() const { return attempts_; }

 private:
  BackendFailure failure_;
  int attempts_;
};

namespace detail {

struct ParsedEndpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::optional<std::string> bearer_token(const ChatBackendConfig& config) {
  if (config.auth_env_var.empty()) return std::nullopt;
  const char* value = std::getenv(config.auth_env_var.c_str());
  if (value == nullptr || *value == '\0') {
    throw ConfigError("environment variable " + config.auth_env_var + " is not set");
  }
  return std::string(value);
}

}  // namespace detail

// Sends one prompt+image, retrying transient failures with exponential backoff.
// Returns the response text untouched.
inline ChatExchange chat_verdict_raw(const ChatBackendConfig& config,
                                     std::span<const std::uint8_t> image, std::string_view prompt) {
  config.validate();
  const auto ep = detail::parse_endpoint(config.endpoint);
  const auto token = detail::bearer_token(config);

  const std::string body =
      json{{"prompt", prompt},
           {"image", httplib::detail::base64_encode(
                         std::string(reinterpret_cast<const char*>(image.data()), image.size()))}}
          .dump();

  httplib::Client client(ep.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (token) headers.emplace("Authorization", "Bearer " + *token);

  const auto started = std::chrono::steady_clock::now();
  const int max_attempts = config.max_retries + 1;
  BackendFailure last_failure = BackendFailure::Transient;
  std::string last_message;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1 && config.backoff_base_seconds > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(
          config.backoff_base_seconds * std::pow(2.0, attempt - 2)));
    }
    auto res = client.Post(ep.path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      last_failure = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout
                         ? BackendFailure::Timeout
                         : BackendFailure::Transient;
      last_message = "request failed: " + httplib::to_string(err);
      continue;
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
      throw BackendError(BackendFailure::Auth, "unauthorized (HTTP " + std::to_string(status) + ")",
                         attempt);
    }
    if (status == 429 || status >= 500) {
      last_failure = BackendFailure::Transient;
      last_message = "HTTP " + std::to_string(status);
      continue;
    }
    if (status != 200) {
      throw BackendError(BackendFailure::Http, "unexpected HTTP " + std::to_string(status),
                         attempt);
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error&) {
      throw BackendError(BackendFailure::Malformed, "response body is not JSON", attempt);
    }
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
      throw BackendError(BackendFailure::Malformed, "response lacks a string 'text' field",
                         attempt);
    }
    ChatExchange ex;
    ex.prompt = std::string(prompt);
    ex.raw_response = reply["text"].get<std::string>();
    ex.attempt_count = attempt;
    ex.latency_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return ex;
  }
  throw BackendError(last_failure,
                     last_message + " after " + std::to_string(max_attempts) + " attempt(s)",
                     max_attempts);
}

// ---------------------------------------------------------------------------
// Batch probing with a resumable transcript.

struct ProbeOutcome {
  std::string id;
  std::optional<ChatExchange> exchange;
  std::optional<std::string> error;
  int attempts = 0;
  bool resumed = false;  // answer taken from an existing transcript

  bool ok() const { return exchange.has_value(); }
};

namespace detail {

inline json transcript_line(const std::string& id, const std::string& prompt,
                            const ProbeOutcome& outcome) {
  json j = {{"id", id}, {"prompt", prompt}};
  if (outcome.exchange) {
    j["raw_response"] = outcome.exchange->raw_response;
    j["latency"] = outcome.exchange->latency_seconds;
  } else {
    j["error"] = outcome.error.value_or("unknown error");
    j["latency"] = nullptr;
  }
  j["attempts"] = outcome.attempts;
  return j;
}

// Answered records from a transcript, keyed by id. Error records and torn
// lines are dropped so that those samples are retried.
struct TranscriptState {
  std::map<std::string, json> answered;
  bool needs_compaction = false;
};

inline TranscriptState read_transcript(const std::filesystem::path& path) {
  TranscriptState state;
  std::ifstream in(path);
  if (!in) return state;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      state.needs_compaction = true;
      continue;
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("raw_response") || !j["raw_response"].is_string()) {
      state.needs_compaction = true;
      continue;
    }
    const auto id = j["id"].get<std::string>();
    if (state.answered.count(id)) {
      state.needs_compaction = true;
      continue;
    }
    state.answered.emplace(id, std::move(j));
  }
  return state;
}

inline void rewrite_transcript(const std::filesystem::path& path,
                               const std::vector<const json*>& lines) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto* j : lines) out << j->dump() << '\n';
    if (!out) throw RuntimeFailure("cannot rewrite transcript " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// One exchange per sample, in input order. Every finished sample is appended
// to the transcript immediately; samples already answered there are skipped.
inline std::vector<ProbeOutcome> batch_probe(const ChatBackendConfig& config,
                                             std::span<const Sample> samples,
                                             const PromptTemplate& tmpl,
                                             std::string_view question,
                                             const std::filesystem::path& transcript_path,
                                             const ImageLoader& load_image) {
  config.validate();
  if (samples.empty()) throw DataError("batch_probe: no samples");

  auto state = detail::read_transcript(transcript_path);
  std::vector<ProbeOutcome> outcomes(samples.size());
  std::vector<std::size_t> pending;
  std::vector<const json*> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    outcomes[i].id = samples[i].id;
    const auto it = state.answered.find(samples[i].id);
    if (it == state.answered.end()) {
      pending.push_back(i);
      continue;
    }
    const json& j = it->second;
    ChatExchange ex;
    ex.prompt = j.value("prompt", std::string());
    ex.image_ref = samples[i].image_ref;
    ex.raw_response = j["raw_response"].get<std::string>();
    if (j.contains("latency") && j["latency"].is_number()) {
      ex.latency_seconds = j["latency"].get<double>();
    }
    ex.attempt_count = j.value("attempts", 0);
    outcomes[i].attempts = ex.attempt_count;
    outcomes[i].exchange = std::move(ex);
    outcomes[i].resumed = true;
  }
  // Rewrite when stale error records or torn lines exist, keeping answers for
  // ids outside this batch too.
  {
    std::ifstream probe(transcript_path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(probe, line)) lines += detail::trim(line).empty() ? 0 : 1;
    if (state.needs_compaction || lines != state.answered.size()) {
      for (const auto& [_, j] : state.answered) kept.push_back(&j);
      detail::rewrite_transcript(transcript_path, kept);
    }
  }

  std::ofstream transcript(transcript_path, std::ios::app);
  if (!transcript) throw RuntimeFailure("cannot open transcript " + transcript_path.string());
  std::mutex write_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < pending.size(); k = next.fetch_add(1)) {
      const std::size_t i = pending[k];
      const Sample& s = samples[i];
      ProbeOutcome& out = outcomes[i];
      std::string prompt;
      try {
        prompt = build_prompt(tmpl, question, s.caption);
        const Bytes image = load_image(s.image_ref);
        if (image.empty()) throw DataError("empty image bytes");
        auto ex = chat_verdict_raw(config, image, prompt);
        ex.image_ref = s.image_ref;
        out.attempts = ex.attempt_count;
        out.exchange = std::move(ex);
      } catch (const BackendError& e) {
        out.error = std::string(backend_failure_name(e.failure())) + ": " + e.what();
        out.attempts = e.attempts();
      } catch (const std::exception& e) {
        out.error = e.what();
      }
      const std::string line = detail::transcript_line(s.id, prompt, out).dump();
      std::lock_guard lock(write_mutex);
      transcript << line << '\n';
      transcript.flush();
    }
  };

  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight),
                                               pending.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcomes;
}

}  // namespace ooc
