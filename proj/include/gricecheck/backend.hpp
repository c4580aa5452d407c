#pragma once

// Completion backends: an HTTP client for OpenAI-compatible servers (classic
// completions or chat wire), a deterministic scripted mock for offline runs,
// retry with exponential backoff and full jitter, and a content-addressed
// file cache keyed by the full request tuple.

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "gricecheck/corpus.hpp"
#include "gricecheck/digest.hpp"
#include "gricecheck/version.hpp"

namespace gricecheck {

struct CompletionRequest {
  std::string model;
  std::string prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  std::vector<std::string> stop;
};

struct CompletionResponse {
  std::string text;
  std::int64_t latency_ms = 0;  // 0 only for cache hits
  bool cached = false;
};

class BackendError : public std::runtime_error {
 public:
  enum class Kind { Transport, RateLimited, BadRequest, Timeout, CacheIo };

  BackendError(Kind kind, std::string message, std::int64_t retry_after_ms = 0)
      : std::runtime_error(std::move(message)), kind_(kind), retry_after_ms_(retry_after_ms) {}

  Kind kind() const { return kind_; }
  std::int64_t retry_after_ms() const { return retry_after_ms_; }

  bool retryable() const {
    return kind_ == Kind::Transport || kind_ == Kind::RateLimited || kind_ == Kind::Timeout;
  }

 private:
  Kind kind_;
  std::int64_t retry_after_ms_;
};

namespace detail {

inline void require_valid(const CompletionRequest& req) {
  if (req.prompt.empty())
    throw BackendError(BackendError::Kind::BadRequest, "empty prompt");
  if (req.max_tokens < 1)
    throw BackendError(BackendError::Kind::BadRequest, "max_tokens must be >= 1");
  if (req.temperature < 0.0)
    throw BackendError(BackendError::Kind::BadRequest, "temperature must be >= 0");
}

// Canonical serialization of the cache-key tuple: compact JSON, sorted keys.
// Changing any field, or the template version, changes the digest.
inline std::string cache_key_material(const CompletionRequest& req,
                                      std::string_view template_version) {
  nlohmann::json j;
  j["model"] = req.model;
  j["prompt"] = req.prompt;
  j["max_tokens"] = req.max_tokens;
  j["temperature"] = req.temperature;
  j["stop"] = req.stop;
  j["template_version"] = std::string(template_version);
  return j.dump();
}

inline std::int64_t elapsed_ms_since(std::chrono::steady_clock::time_point start) {
  auto d = std::chrono::steady_clock::now() - start;
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(d).count();
  return ms < 1 ? 1 : ms;  // non-cached responses always report >= 1ms
}

inline std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

struct CacheKey {
  std::string digest;

  static CacheKey of(const CompletionRequest& req,
                     std::string_view template_version = kTemplateVersion) {
    return {sha256_hex(detail::cache_key_material(req, template_version))};
  }
};

// ---------------------------------------------------------------------------

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual CompletionResponse complete(const CompletionRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Scripted mock. Stateless and fully deterministic: a prompt either matches a
// rule (by exact prompt SHA-256 or by substring) or the call is rejected, so
// a whole evaluation can run offline and yield the same bytes every time.

class MockBackend : public CompletionBackend {
 public:
  struct Rule {
    std::string prompt_sha256;   // exact-match on the prompt digest
    std::string prompt_contains; // substring match on the prompt text
    std::string text;
  };

  MockBackend() = default;
  explicit MockBackend(std::vector<Rule> rules) : rules_(std::move(rules)) {}
  MockBackend(MockBackend&& other) noexcept
      : rules_(std::move(other.rules_)), calls_(other.calls_.load()) {}

  /// Table of prompt-digest -> completion.
  static MockBackend from_digest_table(
      const std::vector<std::pair<std::string, std::string>>& table) {
    std::vector<Rule> rules;
    rules.reserve(table.size());
    for (const auto& [digest, text] : table) rules.push_back({digest, "", text});
    return MockBackend(std::move(rules));
  }

  static MockBackend from_script_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw BackendError(BackendError::Kind::BadRequest, "mock script not found: " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(BackendError::Kind::BadRequest,
                         "mock script " + path + ": " + e.what());
    }
    std::vector<Rule> rules;
    if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array())
      throw BackendError(BackendError::Kind::BadRequest,
                         "mock script " + path + ": expected {\"entries\": [...]}");
    for (const auto& e : doc["entries"]) {
      Rule r;
      r.prompt_sha256 = e.value("prompt_sha256", "");
      r.prompt_contains = e.value("prompt_contains", "");
      if (!e.contains("text") || !e["text"].is_string())
        throw BackendError(BackendError::Kind::BadRequest,
                           "mock script " + path + ": entry without text");
      r.text = e["text"].get<std::string>();
      if (r.prompt_sha256.empty() && r.prompt_contains.empty())
        throw BackendError(BackendError::Kind::BadRequest,
                           "mock script " + path + ": entry without match rule");
      rules.push_back(std::move(r));
    }
    return MockBackend(std::move(rules));
  }

  CompletionResponse complete(const CompletionRequest& req) override {
    detail::require_valid(req);
    auto start = std::chrono::steady_clock::now();
    calls_.fetch_add(1, std::memory_order_relaxed);
    std::string digest = sha256_hex(req.prompt);
    for (const auto& r : rules_) {  // first match wins
      if (!r.prompt_sha256.empty() && r.prompt_sha256 == digest)
        return {r.text, detail::elapsed_ms_since(start), false};
      if (!r.prompt_contains.empty() &&
          req.prompt.find(r.prompt_contains) != std::string::npos)
        return {r.text, detail::elapsed_ms_since(start), false};
    }
    throw BackendError(BackendError::Kind::BadRequest, "unscripted prompt");
  }

  std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  std::vector<Rule> rules_;
  std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// HTTP backend for OpenAI-compatible servers.

enum class WireFormat { Completions, Chat };

inline std::optional<WireFormat> parse_wire(std::string_view s) {
  if (s == "completions") return WireFormat::Completions;
  if (s == "chat") return WireFormat::Chat;
  return std::nullopt;
}

struct HttpBackendConfig {
  std::string endpoint;  // full URL, e.g. http://localhost:8000/v1/completions
  WireFormat wire = WireFormat::Completions;
  std::string api_key;   // empty = no Authorization header
  int timeout_ms = 30000;
};

class HttpBackend : public CompletionBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos)
      throw BackendError(BackendError::Kind::BadRequest,
                         "endpoint must be a full URL: " + config_.endpoint);
    auto path_start = config_.endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = config_.endpoint;
      path_ = "/";
    } else {
      base_ = config_.endpoint.substr(0, path_start);
      path_ = config_.endpoint.substr(path_start);
    }
  }

  CompletionResponse complete(const CompletionRequest& req) override {
    detail::require_valid(req);
    auto start = std::chrono::steady_clock::now();

    nlohmann::json body;
    body["model"] = req.model;
    if (config_.wire == WireFormat::Chat) {
      body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}});
    } else {
      body["prompt"] = req.prompt;
    }
    body["max_tokens"] = req.max_tokens;
    body["temperature"] = req.temperature;
    if (!req.stop.empty()) body["stop"] = req.stop;

    httplib::Client client(base_);
    client.set_connection_timeout(std::chrono::milliseconds(config_.timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(config_.timeout_ms));
    client.set_write_timeout(std::chrono::milliseconds(config_.timeout_ms));
    httplib::Headers headers;
    if (!config_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto result = client.Post(path_, headers, body.dump(), "application/json");
    if (!result) {
      using E = httplib::Error;
      E err = result.error();
      if (err == E::ConnectionTimeout)
        throw BackendError(BackendError::Kind::Timeout, "connection timeout");
      if (err == E::Read || err == E::Write)
        throw BackendError(BackendError::Kind::Timeout,
                           "request timed out or connection dropped (" + httplib::to_string(err) +
                               ")");
      throw BackendError(BackendError::Kind::Transport,
                         "transport failure (" + httplib::to_string(err) + ")");
    }

    const auto& res = *result;
    if (res.status == 429) {
      std::int64_t after_ms = 1000;
      if (res.has_header("Retry-After")) {
        try {
          after_ms = std::stoll(res.get_header_value("Retry-After")) * 1000;
        } catch (...) {
        }
      }
      throw BackendError(BackendError::Kind::RateLimited, "rate limited (429)", after_ms);
    }
    if (res.status == 408)
      throw BackendError(BackendError::Kind::Timeout, "server timeout (408)");
    if (res.status >= 500)
      throw BackendError(BackendError::Kind::Transport,
                         "server error (" + std::to_string(res.status) + ")");
    if (res.status < 200 || res.status >= 300)
      throw BackendError(BackendError::Kind::BadRequest,
                         "http " + std::to_string(res.status) + ": " + snippet(res.body));

    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(res.body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(BackendError::Kind::BadRequest,
                         std::string("unparseable response body: ") + e.what());
    }
    return {extract_text(doc), detail::elapsed_ms_since(start), false};
  }

 private:
  std::string extract_text(const nlohmann::json& doc) const {
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
      throw BackendError(BackendError::Kind::BadRequest, "response has no choices");
    const auto& choice = doc["choices"][0];
    if (config_.wire == WireFormat::Chat) {
      if (choice.contains("message") && choice["message"].contains("content") &&
          choice["message"]["content"].is_string())
        return choice["message"]["content"].get<std::string>();
    } else if (choice.contains("text") && choice["text"].is_string()) {
      return choice["text"].get<std::string>();
    }
    throw BackendError(BackendError::Kind::BadRequest, "choice carries no text");
  }

  static std::string snippet(const std::string& body) {
    return body.size() <= 200 ? body : body.substr(0, 200) + "...";
  }

  HttpBackendConfig config_;
  std::string base_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Retry decorator: exponential backoff with full jitter. Retries only the
// transient error classes; BadRequest surfaces immediately.

struct RetryPolicy {
  int max_attempts = 3;       // total attempts, >= 1
  std::int64_t base_delay_ms = 200;
  std::int64_t max_delay_ms = 30000;
};

class RetryBackend : public CompletionBackend {
 public:
  RetryBackend(std::shared_ptr<CompletionBackend> inner, RetryPolicy policy)
      : inner_(std::move(inner)), policy_(policy) {
    if (policy_.max_attempts < 1)
      throw BackendError(BackendError::Kind::BadRequest, "max_attempts must be >= 1");
  }

  CompletionResponse complete(const CompletionRequest& req) override {
    for (int attempt = 0;; ++attempt) {
      try {
        return inner_->complete(req);
      } catch (const BackendError& e) {
        if (!e.retryable() || attempt + 1 >= policy_.max_attempts) throw;
        std::int64_t cap = policy_.base_delay_ms << std::min(attempt, 20);
        if (cap > policy_.max_delay_ms) cap = policy_.max_delay_ms;
        std::int64_t delay = cap > 0 ? jitter(cap) : 0;
        if (e.retry_after_ms() > delay) delay = e.retry_after_ms();
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
    }
  }

 private:
  static std::int64_t jitter(std::int64_t cap) {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    return std::uniform_int_distribution<std::int64_t>(0, cap)(rng);
  }

  std::shared_ptr<CompletionBackend> inner_;
  RetryPolicy policy_;
};

// ---------------------------------------------------------------------------
// Content-addressed cache: one human-readable JSON file per key, written via
// temp-file + rename so concurrent writers of the same key stay consistent.
// A write failure fails the call; a silently uncached response would break
// the resumability guarantee.

class CachedBackend : public CompletionBackend {
 public:
  CachedBackend(std::shared_ptr<CompletionBackend> inner, std::filesystem::path dir,
                std::string template_version = std::string(kTemplateVersion))
      : inner_(std::move(inner)), dir_(std::move(dir)),
        template_version_(std::move(template_version)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec)
      throw BackendError(BackendError::Kind::CacheIo,
                         "cannot create cache dir " + dir_.string() + ": " + ec.message());
  }

  CompletionResponse complete(const CompletionRequest& req) override {
    detail::require_valid(req);
    const CacheKey key = CacheKey::of(req, template_version_);
    const auto path = entry_path(key);

    if (std::filesystem::exists(path)) {
      nlohmann::json doc;
      std::ifstream in(path, std::ios::binary);
      try {
        in >> doc;
        return {doc.at("text").get<std::string>(), 0, true};
      } catch (const std::exception& e) {
        // Corrupt entries are reported loudly rather than recomputed, so a
        // damaged cache cannot silently change a "resumed" run.
        throw BackendError(BackendError::Kind::CacheIo,
                           "corrupt cache entry " + path.string() + ": " + e.what());
      }
    }

    CompletionResponse response = inner_->complete(req);
    write_entry(key, req, response.text);
    return response;
  }

  CacheKey key_for(const CompletionRequest& req) const {
    return CacheKey::of(req, template_version_);
  }

 private:
  std::filesystem::path entry_path(const CacheKey& key) const {
    return dir_ / (key.digest + ".json");
  }

  void write_entry(const CacheKey& key, const CompletionRequest& req, const std::string& text) {
    nlohmann::json entry;
    entry["digest"] = key.digest;
    entry["request"] = {{"model", req.model},
                        {"prompt", req.prompt},
                        {"max_tokens", req.max_tokens},
                        {"temperature", req.temperature},
                        {"stop", req.stop},
                        {"template_version", template_version_}};
    entry["text"] = text;
    entry["created_at"] = detail::utc_timestamp();

    static std::atomic<std::uint64_t> counter{0};
    auto tmp = dir_ / (key.digest + ".tmp." +
                       std::to_string(counter.fetch_add(1, std::memory_order_relaxed)) + "." +
                       std::to_string(::getpid()));
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out)
        throw BackendError(BackendError::Kind::CacheIo, "cannot write " + tmp.string());
      out << entry.dump(2) << '\n';
      out.flush();
      if (!out)
        throw BackendError(BackendError::Kind::CacheIo, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, entry_path(key), ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      throw BackendError(BackendError::Kind::CacheIo,
                         "cannot publish cache entry for " + key.digest);
    }
  }

  std::shared_ptr<CompletionBackend> inner_;
  std::filesystem::path dir_;
  std::string template_version_;
};

// Spaces out call starts to respect a per-run request budget. Sits inside the
// retry wrapper so every attempt, retries included, consumes budget.
class ThrottledBackend : public CompletionBackend {
 public:
  ThrottledBackend(std::shared_ptr<CompletionBackend> inner, int requests_per_minute)
      : inner_(std::move(inner)),
        interval_(requests_per_minute > 0 ? 60000 / requests_per_minute : 0) {}

  CompletionResponse complete(const CompletionRequest& req) override {
    if (interval_.count() > 0) {
      std::chrono::steady_clock::time_point slot;
      {
        std::lock_guard<std::mutex> lock(mu_);
        auto now = std::chrono::steady_clock::now();
        if (next_ < now) next_ = now;
        slot = next_;
        next_ += interval_;
      }
      std::this_thread::sleep_until(slot);
    }
    return inner_->complete(req);
  }

 private:
  std::shared_ptr<CompletionBackend> inner_;
  std::chrono::milliseconds interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

// Internal decorator used by the harness to observe how many calls reach the
// wrapped backend (i.e., were not served from cache).
class CountingBackend : public CompletionBackend {
 public:
  explicit CountingBackend(std::shared_ptr<CompletionBackend> inner) : inner_(std::move(inner)) {}

  CompletionResponse complete(const CompletionRequest& req) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_->complete(req);
  }

  std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  std::shared_ptr<CompletionBackend> inner_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace gricecheck
