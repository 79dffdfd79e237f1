#include <doctest.h>

#include <cstdlib>

#include "llmge/llm_client.hpp"
#include "support.hpp"

using namespace llmge;
using namespace std::chrono_literals;
using testing::StubChatServer;

namespace {

CompletionRequest request(const std::string& text = "hello") {
  CompletionRequest r;
  r.model = "stub-model";
  r.messages = {{"system", "You are terse."}, {"user", text}};
  r.temperature = 0.2;
  r.max_tokens = 64;
  return r;
}

LlmConfig config_for(const StubChatServer& server) {
  LlmConfig c;
  c.endpoint = server.endpoint();
  c.api_key_env = "LLMGE_TEST_KEY";
  c.timeout = 5s;
  return c;
}

LlmErrorKind error_kind(LlmClient& client, const CompletionRequest& r) {
  try {
    client.complete(r);
  } catch (const LlmError& e) {
    return e.kind();
  }
  FAIL("expected an LlmError");
  return LlmErrorKind::Config;
}

}  // namespace

TEST_CASE("backoff delays grow geometrically up to the cap") {
  RetryPolicy p;
  p.base_delay = 100ms;
  p.multiplier = 3.0;
  p.max_delay = 1000ms;
  CHECK(p.delay_after(1) == 100ms);
  CHECK(p.delay_after(2) == 300ms);
  CHECK(p.delay_after(3) == 900ms);
  CHECK(p.delay_after(4) == 1000ms);
  CHECK(p.delay_after(40) == 1000ms);
}

TEST_CASE("request encoding and response decoding") {
  const auto body = nlohmann::json::parse(encode_request(request("ping")));
  CHECK(body["model"] == "stub-model");
  CHECK(body["max_tokens"] == 64);
  CHECK(body["messages"].size() == 2);
  CHECK(body["messages"][1]["content"] == "ping");

  const Completion c = decode_response(StubChatServer::completion("pong"));
  CHECK(c.text == "pong");
  CHECK(c.prompt_tokens == 11);
  CHECK(c.completion_tokens == 7);

  for (const std::string bad : {"", "{}", "{\"choices\": []}", "{\"choices\": [{\"message\": {\"content\": 3}}]}"}) {
    CAPTURE(bad);
    try {
      decode_response(bad);
      FAIL("expected MalformedResponse");
    } catch (const LlmError& e) {
      CHECK(e.kind() == LlmErrorKind::MalformedResponse);
    }
  }

  CompletionRequest empty = request();
  empty.messages.clear();
  CHECK_THROWS_AS(validate_request(empty), LlmError);
  CompletionRequest hot = request();
  hot.temperature = -1;
  CHECK_THROWS_AS(validate_request(hot), LlmError);
  CompletionRequest assistant_first = request();
  assistant_first.messages.front().role = "assistant";
  CHECK_THROWS_AS(validate_request(assistant_first), LlmError);
}

TEST_CASE("client posts the request and returns content verbatim") {
  ::setenv("LLMGE_TEST_KEY", "sk-test", 1);
  StubChatServer server([](const nlohmann::json& body, int) {
    return std::pair{200, StubChatServer::completion("echo: " + body["messages"][1]["content"].get<std::string>())};
  });
  LlmClient client(config_for(server));
  const Completion c = client.complete(request("abc"));
  CHECK(c.text == "echo: abc");
  CHECK(c.attempts == 1);
  REQUIRE(server.requests() == 1);
  CHECK(server.auth_headers()[0] == "Bearer sk-test");
  CHECK(server.bodies()[0]["temperature"] == 0.2);
  ::unsetenv("LLMGE_TEST_KEY");

  // Full URL and /v1 base forms reach the same route.
  LlmConfig full = config_for(server);
  full.endpoint = server.endpoint() + "/v1/chat/completions";
  CHECK(LlmClient(full).complete(request()).text == "echo: hello");
  LlmConfig v1 = config_for(server);
  v1.endpoint = server.endpoint() + "/v1";
  CHECK(LlmClient(v1).complete(request()).text == "echo: hello");
  CHECK(server.auth_headers().back().empty());
}

TEST_CASE("rate limit then success retries with recorded delays") {
  StubChatServer server([](const nlohmann::json&, int call) {
    if (call <= 2) return std::pair{429, std::string("{\"error\": \"slow down\"}")};
    return std::pair{200, StubChatServer::completion("ok")};
  });
  LlmConfig cfg = config_for(server);
  cfg.retry.base_delay = 50ms;
  cfg.retry.multiplier = 2.0;
  cfg.retry.max_attempts = 4;
  LlmClient client(cfg);
  std::vector<std::chrono::milliseconds> delays;
  client.set_sleeper([&](std::chrono::milliseconds d) { delays.push_back(d); });
  const Completion c = client.complete(request());
  CHECK(c.text == "ok");
  CHECK(c.attempts == 3);
  CHECK(server.requests() == 3);
  CHECK(delays == std::vector<std::chrono::milliseconds>{50ms, 100ms});
}

TEST_CASE("non-retryable and exhausted failures") {
  SUBCASE("401 is not retried") {
    StubChatServer server([](const nlohmann::json&, int) { return std::pair{401, std::string("{}")}; });
    LlmClient client(config_for(server));
    client.set_sleeper([](std::chrono::milliseconds) {});
    CHECK(error_kind(client, request()) == LlmErrorKind::Auth);
    CHECK(server.requests() == 1);
  }
  SUBCASE("400 is not retried") {
    StubChatServer server([](const nlohmann::json&, int) { return std::pair{400, std::string("{}")}; });
    LlmClient client(config_for(server));
    client.set_sleeper([](std::chrono::milliseconds) {});
    CHECK(error_kind(client, request()) == LlmErrorKind::BadRequest);
    CHECK(server.requests() == 1);
  }
  SUBCASE("server errors stop at max_attempts") {
    StubChatServer server([](const nlohmann::json&, int) { return std::pair{503, std::string("{}")}; });
    LlmConfig cfg = config_for(server);
    cfg.retry.max_attempts = 3;
    LlmClient client(cfg);
    client.set_sleeper([](std::chrono::milliseconds) {});
    try {
      client.complete(request());
      FAIL("expected ServerError");
    } catch (const LlmError& e) {
      CHECK(e.kind() == LlmErrorKind::ServerError);
      CHECK(e.status() == 503);
      CHECK(e.attempts() == 3);
    }
    CHECK(server.requests() == 3);
  }
  SUBCASE("retry set excludes server errors") {
    StubChatServer server([](const nlohmann::json&, int) { return std::pair{500, std::string("{}")}; });
    LlmClient client(config_for(server));
    client.set_sleeper([](std::chrono::milliseconds) {});
    RetryPolicy p;
    p.retry_on = {RetryClass::RateLimit};
    CHECK_THROWS_AS(client.complete(request(), p), LlmError);
    CHECK(server.requests() == 1);
  }
  SUBCASE("malformed 200 body") {
    StubChatServer server([](const nlohmann::json&, int) { return std::pair{200, std::string("{\"choices\": 1}")}; });
    LlmClient client(config_for(server));
    CHECK(error_kind(client, request()) == LlmErrorKind::MalformedResponse);
  }
  SUBCASE("unreachable endpoint is a timeout") {
    LlmConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1";
    cfg.timeout = 1s;
    cfg.retry.max_attempts = 2;
    LlmClient client(cfg);
    int sleeps = 0;
    client.set_sleeper([&](std::chrono::milliseconds) { ++sleeps; });
    CHECK(error_kind(client, request()) == LlmErrorKind::Timeout);
    CHECK(sleeps == 1);
  }
}

TEST_CASE("error kind names") {
  CHECK(to_string(LlmErrorKind::Auth) == "AuthError");
  CHECK(to_string(LlmErrorKind::RateLimited) == "RateLimited");
  CHECK(to_string(LlmErrorKind::MalformedResponse) == "MalformedResponse");
}
