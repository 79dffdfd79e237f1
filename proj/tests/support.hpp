#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace testing {

namespace fs = std::filesystem;

inline fs::path test_dir() { return fs::path(LLMGE_TEST_DIR); }
inline fs::path listing(const std::string& name) { return test_dir() / "fixtures" / "listings" / name; }
inline fs::path fault(const std::string& name) { return test_dir() / "fixtures" / "faults" / name; }

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << text;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("llmge-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// Local HTTP server speaking the chat-completions wire format. The handler
// sees the parsed request body and returns (status, body).
class StubChatServer {
 public:
  using Handler = std::function<std::pair<int, std::string>(const nlohmann::json&, int call)>;

  explicit StubChatServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post(R"(/v1/chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
      const int call = ++requests_;
      nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
      {
        std::lock_guard<std::mutex> lock(mu_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      auto [status, text] = handler_(body, call);
      res.status = status;
      res.set_content(text, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubChatServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_.load(); }
  std::vector<nlohmann::json> bodies() const {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_;
  }

  static std::string completion(const std::string& content) {
    nlohmann::json j;
    j["id"] = "cmpl-stub";
    j["object"] = "chat.completion";
    j["choices"] = nlohmann::json::array(
        {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", "stop"}}});
    j["usage"] = {{"prompt_tokens", 11}, {"completion_tokens", 7}, {"total_tokens", 18}};
    return j.dump();
  }

 private:
  Handler handler_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  mutable std::mutex mu_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
};

// Echoes the first fenced block of the user message back as the completion.
inline std::string echo_fenced_block(const nlohmann::json& request) {
  const std::string user = request["messages"].back()["content"].get<std::string>();
  const auto open = user.find("```yaml\n");
  if (open == std::string::npos) return user;
  const auto start = open + 8;
  const auto close = user.find("```", start);
  return "Here is the revised section:\n```yaml\n" + user.substr(start, close - start) + "```\n";
}

}  // namespace testing
