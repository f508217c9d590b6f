#pragma once

// CompletionClient for OpenAI-compatible /v1/completions servers (vLLM,
// llama.cpp server, TGI and hosted providers). Streaming uses server-sent
// events; probes use a non-streamed one-token request with `logprobs`.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "eatstop/error.hpp"
#include "eatstop/live.hpp"
#include "eatstop/signals.hpp"

namespace eatstop {

namespace detail {

// Incremental parser for a text/event-stream body.
class SseParser {
 public:
  // Calls on_data(payload) for each complete "data:" event. Returns false
  // as soon as on_data does.
  template <typename F>
  bool feed(std::string_view bytes, F&& on_data) {
    buffer_.append(bytes);
    std::size_t pos;
    while ((pos = buffer_.find('\n')) != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.rfind("data:", 0) != 0) continue;
      std::string_view payload(line);
      payload.remove_prefix(5);
      if (!payload.empty() && payload.front() == ' ') payload.remove_prefix(1);
      if (!on_data(payload)) return false;
    }
    return true;
  }

 private:
  std::string buffer_;
};

inline bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace detail

class OpenAICompletionClient final : public CompletionClient {
 public:
  explicit OpenAICompletionClient(EndpointConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw InvalidArgument("endpoint base_url is required");
    if (config_.model_id.empty()) throw InvalidArgument("endpoint model_id is required");
    if (config_.max_top_logprobs < 1) throw InvalidArgument("max_top_logprobs must be >= 1");
    if (!config_.api_key_env.empty()) {
      const char* key = std::getenv(config_.api_key_env.c_str());
      if (!key || !*key) {
        throw InvalidArgument("environment variable '" + config_.api_key_env + "' is not set");
      }
      api_key_ = key;
    }
  }

  const EndpointConfig& config() const override { return config_; }

  CompletionSummary stream(const CompletionRequest& request,
                           const std::function<bool(std::string_view)>& on_text) override {
    nlohmann::json body = base_body(request);
    body["stream"] = true;
    body["stream_options"] = {{"include_usage", true}};

    CompletionSummary summary;
    detail::SseParser sse;
    std::string error_body;
    int status = 0;
    bool done = false;
    bool cancelled = false;
    std::optional<std::string> stream_error;

    httplib::Request req = make_request(body);
    req.response_handler = [&](const httplib::Response& res) {
      status = res.status;
      return true;
    };
    req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
      if (status < 200 || status >= 300) {
        error_body.append(data, len);
        return true;
      }
      return sse.feed(std::string_view(data, len), [&](std::string_view payload) {
        if (payload == "[DONE]") {
          done = true;
          return false;
        }
        auto chunk = nlohmann::json::parse(payload, nullptr, false);
        if (chunk.is_discarded()) {
          stream_error = "malformed stream chunk: " + std::string(payload);
          return false;
        }
        if (auto u = chunk.find("usage"); u != chunk.end() && u->is_object()) {
          if (auto ct = u->find("completion_tokens"); ct != u->end() && ct->is_number_integer()) {
            summary.completion_tokens = ct->get<std::size_t>();
          }
        }
        auto choices = chunk.find("choices");
        if (choices == chunk.end() || !choices->is_array() || choices->empty()) return true;
        const auto& choice = (*choices)[0];
        if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string()) {
          summary.finish_reason = fr->get<std::string>();
        }
        std::string text = choice.value("text", std::string{});
        if (text.empty()) return true;
        summary.chunks += 1;
        if (!on_text(text)) {
          cancelled = true;
          return false;
        }
        return true;
      });
    };

    auto result = client().send(req);
    if (stream_error) throw EndpointError(*stream_error, true);
    if (cancelled) {
      summary.finish_reason = "cancelled";
      return summary;
    }
    if (!result && !done) {
      throw EndpointError("stream request to " + config_.base_url + " failed: " +
                              httplib::to_string(result.error()),
                          true);
    }
    if (status < 200 || status >= 300) {
      throw EndpointError("stream request returned HTTP " + std::to_string(status) + ": " + error_body,
                          detail::retryable_status(status));
    }
    return summary;
  }

  std::vector<TopKEntry> next_token_logprobs(const std::string& prompt, std::size_t top_k) override {
    CompletionRequest request;
    request.prompt = prompt;
    request.max_tokens = 1;
    request.temperature = 1.0;
    request.top_p = 1.0;
    nlohmann::json body = base_body(request);
    body["logprobs"] = top_k;
    body["stream"] = false;

    httplib::Request req = make_request(body);
    auto result = client().send(req);
    if (!result) {
      throw EndpointError("probe request to " + config_.base_url + " failed: " +
                              httplib::to_string(result.error()),
                          true);
    }
    if (result->status < 200 || result->status >= 300) {
      throw EndpointError("probe request returned HTTP " + std::to_string(result->status) + ": " +
                              result->body,
                          detail::retryable_status(result->status));
    }
    auto doc = nlohmann::json::parse(result->body, nullptr, false);
    if (doc.is_discarded()) throw EndpointError("probe response is not JSON", true);
    return parse_top_logprobs(doc);
  }

  // Accepts both {"token": logprob} maps and [{"token":..,"logprob":..}] lists.
  static std::vector<TopKEntry> parse_top_logprobs(const nlohmann::json& doc) {
    std::vector<TopKEntry> out;
    const auto choices = doc.find("choices");
    if (choices == doc.end() || !choices->is_array() || choices->empty()) return out;
    const auto lp = (*choices)[0].find("logprobs");
    if (lp == (*choices)[0].end() || !lp->is_object()) return out;
    const auto top = lp->find("top_logprobs");
    if (top == lp->end() || !top->is_array() || top->empty()) return out;
    const auto& first = (*top)[0];
    if (first.is_object()) {
      for (const auto& [tok, v] : first.items()) {
        if (v.is_number()) out.push_back({tok, v.get<double>()});
      }
    } else if (first.is_array()) {
      for (const auto& e : first) {
        if (e.is_object() && e.contains("logprob")) {
          out.push_back({e.value("token", std::string{}), e.at("logprob").get<double>()});
        }
      }
    }
    std::sort(out.begin(), out.end(), [](const TopKEntry& a, const TopKEntry& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.token < b.token;
    });
    return out;
  }

 private:
  nlohmann::json base_body(const CompletionRequest& r) const {
    nlohmann::json body = {{"model", config_.model_id},
                           {"prompt", r.prompt},
                           {"max_tokens", r.max_tokens},
                           {"temperature", r.temperature},
                           {"top_p", r.top_p}};
    if (!r.stop.empty()) body["stop"] = r.stop;
    if (r.seed) body["seed"] = *r.seed;
    return body;
  }

  httplib::Request make_request(const nlohmann::json& body) const {
    httplib::Request req;
    req.method = "POST";
    req.path = config_.completions_path;
    req.body = body.dump();
    req.set_header("Content-Type", "application/json");
    if (!api_key_.empty()) req.set_header("Authorization", "Bearer " + api_key_);
    return req;
  }

  httplib::Client& client() {
    if (!client_) {
      client_ = std::make_unique<httplib::Client>(config_.base_url);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.request_timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.request_timeout - secs);
      client_->set_connection_timeout(secs.count(), usecs.count());
      client_->set_read_timeout(secs.count(), usecs.count());
      client_->set_write_timeout(secs.count(), usecs.count());
    }
    return *client_;
  }

  EndpointConfig config_;
  std::string api_key_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace eatstop
