#pragma once

// Minimal chat-completions client (POST /v1/chat/completions) with bounded
// retry and exponential backoff. Response content is returned verbatim and
// never interpreted here.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace llmge {

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 2048;
};

struct Completion {
  std::string text;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  int attempts = 0;
};

enum class RetryClass { RateLimit, ServerError, Timeout };

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{30000};
  std::set<RetryClass> retry_on{RetryClass::RateLimit, RetryClass::ServerError, RetryClass::Timeout};

  // Delay before attempt `attempt` + 1 (attempt counts from 1). Non-decreasing.
  std::chrono::milliseconds delay_after(int attempt) const;
};

enum class LlmErrorKind { Auth, RateLimited, ServerError, Timeout, MalformedResponse, BadRequest, Config };

class LlmError : public std::runtime_error {
 public:
  LlmError(LlmErrorKind kind, const std::string& what, int status = 0, int attempts = 0)
      : std::runtime_error(what), kind_(kind), status_(status), attempts_(attempts) {}
  LlmErrorKind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  LlmErrorKind kind_;
  int status_;
  int attempts_;
};

std::string to_string(LlmErrorKind kind);

// Anything that can answer a completion request. Operators depend on this so
// tests can substitute in-process fakes.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual Completion complete(const CompletionRequest& request) = 0;
};

struct LlmConfig {
  std::string endpoint = "http://127.0.0.1:8000";  // base URL or full .../chat/completions URL
  std::string model = "mixtral-8x7b-instruct";
  double temperature = 0.7;
  int max_tokens = 2048;
  int concurrency = 4;
  std::string api_key_env = "LLMGE_API_KEY";
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
};

// Throws on invalid requests (empty messages, first role not system/user,
// negative temperature, non-positive max_tokens).
void validate_request(const CompletionRequest& request);

std::string encode_request(const CompletionRequest& request);
// Extracts choices[0].message.content and usage; throws MalformedResponse.
Completion decode_response(const std::string& body);

class LlmClient : public ChatBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit LlmClient(LlmConfig config);
  ~LlmClient() override;
  LlmClient(const LlmClient&) = delete;
  LlmClient& operator=(const LlmClient&) = delete;

  Completion complete(const CompletionRequest& request) override;
  Completion complete(const CompletionRequest& request, const RetryPolicy& policy);

  // Replaces the real sleep between retries (tests record delays instead).
  void set_sleeper(Sleeper sleeper);
  const LlmConfig& config() const noexcept { return config_; }

 private:
  struct Impl;
  LlmConfig config_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace llmge
