#include <catch2/catch_amalgamated.hpp>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <thread>

#include "gricecheck/backend.hpp"
#include "testutil.hpp"

using namespace gricecheck;
using testutil::TempDir;

namespace {

CompletionRequest request(const std::string& prompt, double temperature = 0.0) {
  return {"test-model", prompt, 16, temperature, {}};
}

// Test-only backend that fails a scripted number of times before succeeding.
class FlakyBackend : public CompletionBackend {
 public:
  FlakyBackend(int failures, BackendError::Kind kind) : failures_(failures), kind_(kind) {}

  CompletionResponse complete(const CompletionRequest&) override {
    attempts_.fetch_add(1);
    if (attempts_.load() <= failures_) throw BackendError(kind_, "scripted failure");
    return {"ok", 1, false};
  }

  int attempts() const { return attempts_.load(); }

 private:
  int failures_;
  BackendError::Kind kind_;
  std::atomic<int> attempts_{0};
};

}  // namespace

TEST_CASE("cache key: pinned digest and sensitivity to every field") {
  CompletionRequest req{"test-model", "Hello, world", 16, 0.0, {"\n"}};
  auto key = CacheKey::of(req, "v1");
  // frozen cross-implementation vector for the canonical serialization
  CHECK(key.digest == "c3b5d15206132051a454a7afe5ad31c2adc23032728773fbf1cd1afe73181101");

  CHECK(CacheKey::of(req, "v1").digest == key.digest);  // stable
  auto changed = req;
  changed.temperature = 0.7;
  CHECK(CacheKey::of(changed, "v1").digest != key.digest);
  changed = req;
  changed.model = "other";
  CHECK(CacheKey::of(changed, "v1").digest != key.digest);
  changed = req;
  changed.max_tokens = 17;
  CHECK(CacheKey::of(changed, "v1").digest != key.digest);
  changed = req;
  changed.stop = {};
  CHECK(CacheKey::of(changed, "v1").digest != key.digest);
  changed = req;
  changed.prompt += "!";
  CHECK(CacheKey::of(changed, "v1").digest != key.digest);
  CHECK(CacheKey::of(req, "v2").digest != key.digest);
}

TEST_CASE("sha256 matches the published test vector") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("mock: digest table and unscripted prompts") {
  auto table_key = sha256_hex("What is implied?");
  auto mock = MockBackend::from_digest_table({{table_key, "Answer: No."}});

  auto res = mock.complete(request("What is implied?"));
  CHECK(res.text == "Answer: No.");
  CHECK(!res.cached);
  CHECK(res.latency_ms >= 1);

  try {
    mock.complete(request("something else"));
    FAIL("expected BadRequest");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::BadRequest);
    CHECK(std::string(e.what()) == "unscripted prompt");
  }
  CHECK(mock.calls() == 2);
}

TEST_CASE("mock: script file with substring rules, first match wins") {
  TempDir tmp;
  auto path = tmp / "script.json";
  testutil::spit(path, R"({"entries": [
    {"prompt_contains": "alpha", "text": "first"},
    {"prompt_contains": "beta", "text": "second"}
  ]})");
  auto mock = MockBackend::from_script_file(path.string());
  CHECK(mock.complete(request("alpha and beta")).text == "first");
  CHECK(mock.complete(request("only beta here")).text == "second");
}

TEST_CASE("mock: request validation") {
  auto mock = MockBackend::from_digest_table({});
  CHECK_THROWS_AS(mock.complete({"m", "", 16, 0.0, {}}), BackendError);
  CHECK_THROWS_AS(mock.complete({"m", "p", 0, 0.0, {}}), BackendError);
  CHECK_THROWS_AS(mock.complete({"m", "p", 16, -0.5, {}}), BackendError);
}

TEST_CASE("retry: transient failures are retried, attempts are bounded") {
  auto flaky = std::make_shared<FlakyBackend>(2, BackendError::Kind::RateLimited);
  RetryBackend retry(flaky, {3, 0, 0});
  auto res = retry.complete(request("p"));
  CHECK(res.text == "ok");
  CHECK(flaky->attempts() == 3);
}

TEST_CASE("retry: exhaustion surfaces the final error") {
  auto flaky = std::make_shared<FlakyBackend>(100, BackendError::Kind::Timeout);
  RetryBackend retry(flaky, {4, 0, 0});
  CHECK_THROWS_AS(retry.complete(request("p")), BackendError);
  CHECK(flaky->attempts() == 4);
}

TEST_CASE("retry: BadRequest is never retried") {
  auto flaky = std::make_shared<FlakyBackend>(100, BackendError::Kind::BadRequest);
  RetryBackend retry(flaky, {5, 0, 0});
  CHECK_THROWS_AS(retry.complete(request("p")), BackendError);
  CHECK(flaky->attempts() == 1);
}

TEST_CASE("retry: immediate success uses one attempt") {
  auto flaky = std::make_shared<FlakyBackend>(0, BackendError::Kind::Transport);
  RetryBackend retry(flaky, {1, 0, 0});
  CHECK(retry.complete(request("p")).text == "ok");
  CHECK(flaky->attempts() == 1);
}

TEST_CASE("throttle: call starts are spaced by the per-minute budget") {
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "ok"}}));
  // 3000/min = one call per 20ms; 4 calls need >= 60ms after the first slot
  ThrottledBackend throttled(inner, 3000);
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) throttled.complete(request("p1"));
  auto elapsed =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
  CHECK(elapsed.count() >= 60);
  CHECK(inner->calls() == 4);
}

TEST_CASE("throttle: zero budget means no pacing") {
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "ok"}}));
  ThrottledBackend throttled(inner, 0);
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 50; ++i) throttled.complete(request("p1"));
  auto elapsed =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - start);
  CHECK(elapsed.count() < 5);
}

TEST_CASE("cache: hit after miss, inner invoked exactly once") {
  TempDir tmp;
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "canned"}}));
  CachedBackend cached(inner, tmp.path() / "cache");

  auto first = cached.complete(request("p1"));
  CHECK(first.text == "canned");
  CHECK(!first.cached);

  auto second = cached.complete(request("p1"));
  CHECK(second.text == "canned");
  CHECK(second.cached);
  CHECK(second.latency_ms == 0);
  CHECK(inner->calls() == 1);
}

TEST_CASE("cache: requests differing only in temperature are distinct entries") {
  TempDir tmp;
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "canned"}}));
  CachedBackend cached(inner, tmp.path() / "cache");
  cached.complete(request("p1", 0.0));
  cached.complete(request("p1", 0.5));
  CHECK(inner->calls() == 2);
  cached.complete(request("p1", 0.0));
  cached.complete(request("p1", 0.5));
  CHECK(inner->calls() == 2);
}

TEST_CASE("cache: entry files are content-addressed, human-readable json") {
  TempDir tmp;
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "canned"}}));
  CachedBackend cached(inner, tmp.path() / "cache");
  cached.complete(request("p1"));

  auto key = cached.key_for(request("p1"));
  auto entry_file = tmp.path() / "cache" / (key.digest + ".json");
  REQUIRE(std::filesystem::exists(entry_file));
  auto doc = nlohmann::json::parse(testutil::slurp(entry_file));
  CHECK(doc.at("digest") == key.digest);
  CHECK(doc.at("text") == "canned");
  CHECK(doc.at("request").at("prompt") == "p1");
  CHECK(doc.contains("created_at"));
}

TEST_CASE("cache: corrupt entries fail loudly") {
  TempDir tmp;
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "canned"}}));
  CachedBackend cached(inner, tmp.path() / "cache");
  cached.complete(request("p1"));

  auto key = cached.key_for(request("p1"));
  testutil::spit(tmp.path() / "cache" / (key.digest + ".json"), "{truncated");
  try {
    cached.complete(request("p1"));
    FAIL("expected CacheIo");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::CacheIo);
  }
}

TEST_CASE("cache: unwritable store fails the call") {
  TempDir tmp;
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "canned"}}));

  // a regular file where the store should be blocks entry writes even when
  // running as root (permission bits would not)
  auto dir = tmp.path() / "cache";
  CachedBackend cached(inner, dir);
  std::filesystem::remove_all(dir);
  testutil::spit(dir, "not a directory");
  try {
    cached.complete(request("p1"));
    FAIL("expected CacheIo");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::CacheIo);
  }

  // and an obstructed path fails at construction
  CHECK_THROWS_AS(CachedBackend(inner, dir / "sub"), BackendError);
}

TEST_CASE("cache: concurrent identical requests stay consistent") {
  TempDir tmp;
  auto inner = std::make_shared<MockBackend>(
      MockBackend::from_digest_table({{sha256_hex("p1"), "canned"}}));
  auto cached = std::make_shared<CachedBackend>(inner, tmp.path() / "cache");
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&]() {
      auto res = cached->complete(request("p1"));
      if (res.text == "canned") ok.fetch_add(1);
    });
  for (auto& t : threads) t.join();
  CHECK(ok.load() == 8);
}

// ---------------------------------------------------------------------------
// HTTP backend against an in-process stub server

namespace {

struct StubServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/v1/completions", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this]() { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~StubServer() {
    server.stop();
    thread.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/v1/completions";
  }
};

}  // namespace

TEST_CASE("http: completions wire round-trip with auth header") {
  std::string seen_auth, seen_body;
  StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    res.set_content(R"({"choices": [{"text": " yes"}]})", "application/json");
  });

  HttpBackendConfig cfg;
  cfg.endpoint = stub.endpoint();
  cfg.api_key = "sk-test";
  HttpBackend backend(cfg);
  auto res = backend.complete({"test-model", "What is implied?", 32, 0.25, {"\n\n"}});
  CHECK(res.text == " yes");
  CHECK(res.latency_ms >= 1);
  CHECK(seen_auth == "Bearer sk-test");

  auto body = nlohmann::json::parse(seen_body);
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("prompt") == "What is implied?");
  CHECK(body.at("max_tokens") == 32);
  CHECK(body.at("temperature") == 0.25);
  CHECK(body.at("stop") == nlohmann::json::array({"\n\n"}));
}

TEST_CASE("http: chat wire wraps the prompt as a user message") {
  std::string seen_body;
  StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    res.set_content(R"({"choices": [{"message": {"role": "assistant", "content": "Answer: No."}}]})",
                    "application/json");
  });

  HttpBackendConfig cfg;
  cfg.endpoint = stub.endpoint();
  cfg.wire = WireFormat::Chat;
  HttpBackend backend(cfg);
  auto res = backend.complete(request("What is implied?"));
  CHECK(res.text == "Answer: No.");

  auto body = nlohmann::json::parse(seen_body);
  CHECK(!body.contains("prompt"));
  REQUIRE(body.at("messages").size() == 1);
  CHECK(body.at("messages")[0].at("role") == "user");
  CHECK(body.at("messages")[0].at("content") == "What is implied?");
}

TEST_CASE("http: status mapping") {
  SECTION("429 maps to RateLimited with Retry-After") {
    StubServer stub([](const httplib::Request&, httplib::Response& res) {
      res.status = 429;
      res.set_header("Retry-After", "2");
    });
    HttpBackend backend({stub.endpoint()});
    try {
      backend.complete(request("p"));
      FAIL("expected RateLimited");
    } catch (const BackendError& e) {
      CHECK(e.kind() == BackendError::Kind::RateLimited);
      CHECK(e.retry_after_ms() == 2000);
      CHECK(e.retryable());
    }
  }
  SECTION("4xx maps to BadRequest and is not retryable") {
    StubServer stub([](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content(R"({"error": "bad model"})", "application/json");
    });
    HttpBackend backend({stub.endpoint()});
    try {
      backend.complete(request("p"));
      FAIL("expected BadRequest");
    } catch (const BackendError& e) {
      CHECK(e.kind() == BackendError::Kind::BadRequest);
      CHECK(!e.retryable());
      CHECK(std::string(e.what()).find("bad model") != std::string::npos);
    }
  }
  SECTION("5xx maps to Transport") {
    StubServer stub([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    HttpBackend backend({stub.endpoint()});
    try {
      backend.complete(request("p"));
      FAIL("expected Transport");
    } catch (const BackendError& e) {
      CHECK(e.kind() == BackendError::Kind::Transport);
      CHECK(e.retryable());
    }
  }
  SECTION("malformed success body maps to BadRequest") {
    StubServer stub([](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    HttpBackend backend({stub.endpoint()});
    CHECK_THROWS_AS(backend.complete(request("p")), BackendError);
  }
}

TEST_CASE("http: connection refused maps to a retryable transport error") {
  HttpBackend backend({"http://127.0.0.1:1/v1/completions"});
  try {
    backend.complete(request("p"));
    FAIL("expected transport-class error");
  } catch (const BackendError& e) {
    CHECK(e.retryable());
  }
}
