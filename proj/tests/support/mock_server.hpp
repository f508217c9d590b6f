#pragma once

// Localhost OpenAI-style /v1/completions server for transport tests.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace mock {

struct Reply {
  int status = 200;
  std::vector<std::string> sse_events;  // streamed replies: raw "data:" payloads
  std::string body;                     // non-streamed replies
};

class CompletionServer {
 public:
  using Handler = std::function<Reply(const nlohmann::json& request, const httplib::Request& raw)>;

  explicit CompletionServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      {
        std::lock_guard lock(mu_);
        requests_.push_back(body);
        headers_.push_back(req.get_header_value("Authorization"));
      }
      Reply reply = handler_(body, req);
      res.status = reply.status;
      if (reply.status == 200 && body.value("stream", false)) {
        auto events = std::make_shared<std::vector<std::string>>(std::move(reply.sse_events));
        res.set_chunked_content_provider("text/event-stream", [events](std::size_t, httplib::DataSink& sink) {
          for (const auto& e : *events) {
            const std::string frame = "data: " + e + "\n\n";
            if (!sink.write(frame.data(), frame.size())) return false;
          }
          sink.done();
          return true;
        });
      } else {
        res.set_content(reply.body, "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~CompletionServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::vector<nlohmann::json> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return headers_;
  }

  // Builds a streamed reply whose text arrives in the given deltas.
  static Reply stream_text(const std::vector<std::string>& deltas, const std::string& finish = "stop",
                           bool usage = true) {
    Reply r;
    for (const auto& d : deltas) {
      r.sse_events.push_back(nlohmann::json{{"choices", {{{"index", 0}, {"text", d}, {"finish_reason", nullptr}}}}}.dump());
    }
    r.sse_events.push_back(nlohmann::json{{"choices", {{{"index", 0}, {"text", ""}, {"finish_reason", finish}}}}}.dump());
    if (usage) {
      r.sse_events.push_back(
          nlohmann::json{{"choices", nlohmann::json::array()}, {"usage", {{"completion_tokens", deltas.size()}}}}.dump());
    }
    r.sse_events.push_back("[DONE]");
    return r;
  }

  // Non-streamed one-token reply carrying top logprobs in map form.
  static Reply logprobs(const std::vector<std::pair<std::string, double>>& top) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [t, lp] : top) m[t] = lp;
    Reply r;
    r.body = nlohmann::json{{"choices",
                             {{{"index", 0},
                               {"text", top.empty() ? "" : top.front().first},
                               {"logprobs", {{"tokens", {top.empty() ? "" : top.front().first}},
                                             {"top_logprobs", {m}}}}}}}}
                 .dump();
    return r;
  }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  std::vector<nlohmann::json> requests_;
  std::vector<std::string> headers_;
};

}  // namespace mock
