#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "llmge/llm_client.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace llmge {
namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw LlmError(LlmErrorKind::Config, "endpoint needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  if (path.find("/chat/completions") != std::string::npos) {
    ep.path = path;
  } else if (path.size() >= 3 && path.compare(path.size() - 3, 3, "/v1") == 0) {
    ep.path = path + "/chat/completions";
  } else {
    ep.path = path + "/v1/chat/completions";
  }
  return ep;
}

std::optional<RetryClass> retry_class(LlmErrorKind kind) {
  switch (kind) {
    case LlmErrorKind::RateLimited: return RetryClass::RateLimit;
    case LlmErrorKind::ServerError: return RetryClass::ServerError;
    case LlmErrorKind::Timeout: return RetryClass::Timeout;
    default: return std::nullopt;
  }
}

LlmErrorKind classify_status(int status) {
  if (status == 401 || status == 403) return LlmErrorKind::Auth;
  if (status == 429) return LlmErrorKind::RateLimited;
  if (status == 408) return LlmErrorKind::Timeout;
  if (status >= 500) return LlmErrorKind::ServerError;
  return LlmErrorKind::BadRequest;
}

}  // namespace

std::string to_string(LlmErrorKind kind) {
  switch (kind) {
    case LlmErrorKind::Auth: return "AuthError";
    case LlmErrorKind::RateLimited: return "RateLimited";
    case LlmErrorKind::ServerError: return "ServerError";
    case LlmErrorKind::Timeout: return "Timeout";
    case LlmErrorKind::MalformedResponse: return "MalformedResponse";
    case LlmErrorKind::BadRequest: return "BadRequest";
    case LlmErrorKind::Config: return "ConfigError";
  }
  return "LlmError";
}

std::chrono::milliseconds RetryPolicy::delay_after(int attempt) const {
  const double factor = std::pow(std::max(multiplier, 1.0), std::max(attempt - 1, 0));
  const double ms = std::min(static_cast<double>(base_delay.count()) * factor, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

void validate_request(const CompletionRequest& request) {
  if (request.messages.empty()) throw LlmError(LlmErrorKind::BadRequest, "request has no messages");
  const auto& role = request.messages.front().role;
  if (role != "system" && role != "user") throw LlmError(LlmErrorKind::BadRequest, "first message must be system or user");
  if (request.temperature < 0) throw LlmError(LlmErrorKind::BadRequest, "temperature must be >= 0");
  if (request.max_tokens <= 0) throw LlmError(LlmErrorKind::BadRequest, "max_tokens must be positive");
}

std::string encode_request(const CompletionRequest& request) {
  nlohmann::json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  body["messages"] = nlohmann::json::array();
  for (const auto& m : request.messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  return body.dump();
}

Completion decode_response(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw LlmError(LlmErrorKind::MalformedResponse, "content is not a string");
    Completion c;
    c.text = content.get<std::string>();
    if (auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
      c.prompt_tokens = usage->value("prompt_tokens", 0);
      c.completion_tokens = usage->value("completion_tokens", 0);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw LlmError(LlmErrorKind::MalformedResponse, std::string("malformed completion: ") + e.what(), 200);
  }
}

struct LlmClient::Impl {
  explicit Impl(int concurrency) : slots(std::max(concurrency, 1)) {}
  std::counting_semaphore<1024> slots;
  Sleeper sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

LlmClient::LlmClient(LlmConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(std::min(config_.concurrency, 1024))) {
  split_endpoint(config_.endpoint);
}

LlmClient::~LlmClient() = default;

void LlmClient::set_sleeper(Sleeper sleeper) { impl_->sleeper = std::move(sleeper); }

Completion LlmClient::complete(const CompletionRequest& request) { return complete(request, config_.retry); }

Completion LlmClient::complete(const CompletionRequest& request, const RetryPolicy& policy) {
  validate_request(request);
  if (policy.max_attempts < 1) throw LlmError(LlmErrorKind::Config, "max_attempts must be >= 1");
  const Endpoint ep = split_endpoint(config_.endpoint);
  const std::string body = encode_request(request);
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  impl_->slots.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{impl_->slots};

  for (int attempt = 1;; ++attempt) {
    LlmErrorKind kind;
    std::string message;
    int status = 0;
    {
      httplib::Client client(ep.origin);
      client.set_connection_timeout(config_.timeout);
      client.set_read_timeout(config_.timeout);
      client.set_write_timeout(config_.timeout);
      auto res = client.Post(ep.path, headers, body, "application/json");
      if (!res) {
        kind = LlmErrorKind::Timeout;
        message = "transport error: " + httplib::to_string(res.error());
      } else if (res->status == 200) {
        try {
          Completion c = decode_response(res->body);
          c.attempts = attempt;
          return c;
        } catch (const LlmError& e) {
          throw LlmError(e.kind(), e.what(), 200, attempt);
        }
      } else {
        status = res->status;
        kind = classify_status(status);
        message = "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200);
      }
    }
    const auto cls = retry_class(kind);
    if (!cls || !policy.retry_on.count(*cls) || attempt >= policy.max_attempts) {
      throw LlmError(kind, to_string(kind) + " after " + std::to_string(attempt) + " attempt(s): " + message, status,
                     attempt);
    }
    impl_->sleeper(policy.delay_after(attempt));
  }
}

}  // namespace llmge
