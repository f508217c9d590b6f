#pragma once

// Online early exiting against a streaming completion endpoint.
//
// The session alternates strictly: generate one reasoning line, probe the
// entropy after the end-of-think marker, update the EMA, decide. On exit
// the marker is appended and the final answer elicited. The probe may go
// to a different (proxy) model than the one reasoning.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "eatstop/answers.hpp"
#include "eatstop/ema.hpp"
#include "eatstop/error.hpp"
#include "eatstop/signals.hpp"
#include "eatstop/stopping.hpp"
#include "eatstop/trace.hpp"

namespace eatstop {

inline constexpr std::string_view kDefaultAnswerPrefix = "Final answer:\n";

struct EndpointConfig {
  std::string base_url;
  std::string model_id;
  std::string api_key_env;  // environment variable holding the bearer token; empty = none
  std::size_t max_top_logprobs = 20;
  bool supports_full_distribution = false;
  std::size_t vocab_size = 0;  // needed to bound entropy from top-K
  std::chrono::milliseconds request_timeout{60000};
  std::vector<std::string> stop_sequences;
  std::string completions_path = "/v1/completions";
};

struct CompletionRequest {
  std::string prompt;
  std::size_t max_tokens = 1;
  double temperature = 0.6;
  double top_p = 0.95;
  std::vector<std::string> stop;
  std::optional<std::uint64_t> seed;
};

struct CompletionSummary {
  std::string finish_reason;  // provider's value, or "cancelled"
  std::optional<std::size_t> completion_tokens;  // provider usage, if reported
  std::size_t chunks = 0;  // text deltas delivered to the callback
};

// Transport to an OpenAI-style text completion endpoint.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;

  virtual const EndpointConfig& config() const = 0;

  // Streams text deltas; returning false from on_text cancels the stream.
  virtual CompletionSummary stream(const CompletionRequest& request,
                                   const std::function<bool(std::string_view)>& on_text) = 0;

  // Top-K log-probabilities of the single next token after `prompt`.
  virtual std::vector<TopKEntry> next_token_logprobs(const std::string& prompt, std::size_t top_k) = 0;
};

struct RetryPolicy {
  std::size_t max_retries = 3;
  std::chrono::milliseconds base_delay{200};
};

template <typename F>
auto with_retries(const RetryPolicy& retry, F&& fn) -> decltype(fn()) {
  std::chrono::milliseconds delay = retry.base_delay;
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const EndpointError& e) {
      if (!e.retryable() || attempt >= retry.max_retries) throw;
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    delay *= 2;
  }
}

enum class LineTrigger { paragraph, every_tokens };

struct LiveOptions {
  LineTrigger trigger = LineTrigger::paragraph;
  std::size_t tokens_per_probe = 100;   // S, for every_tokens
  std::size_t max_line_tokens = 2048;   // cap for one paragraph line
  std::size_t max_answer_tokens = 2048;
  DecodingConfig decoding{};
  std::string think_open = std::string(kThinkOpen);
  std::string think_close = std::string(kThinkClose);
  std::string answer_prefix = std::string(kDefaultAnswerPrefix);
  std::string probe_prefix = std::string(kDefaultProbePrefix);
  RetryPolicy retry{};
  std::optional<std::uint64_t> seed;
  std::string dataset = "live";
};

enum class EventKind { line_generated, probe_issued, probe_failed, decision, exit, answer };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::line_generated: return "line_generated";
    case EventKind::probe_issued: return "probe_issued";
    case EventKind::probe_failed: return "probe_failed";
    case EventKind::decision: return "decision";
    case EventKind::exit: return "exit";
    case EventKind::answer: return "answer";
  }
  return "decision";
}

struct TranscriptEvent {
  EventKind kind = EventKind::decision;
  std::size_t line_index = 0;
  std::string model_id;
  std::string detail;
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t tokens = 0;
};

inline nlohmann::ordered_json event_to_json(const TranscriptEvent& e) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(e.kind));
  j["line_index"] = e.line_index;
  if (!e.model_id.empty()) j["model_id"] = e.model_id;
  if (!e.detail.empty()) j["detail"] = e.detail;
  if (e.kind == EventKind::probe_issued) {
    j["value"] = e.value;
    j["lower"] = e.lower;
    j["upper"] = e.upper;
    j["gap"] = e.upper - e.lower;
  }
  if (e.kind == EventKind::line_generated || e.kind == EventKind::decision) j["tokens"] = e.tokens;
  return j;
}

// Single-writer state of one reasoning session.
struct SessionState {
  std::string question;
  std::vector<std::string> lines;
  std::vector<std::size_t> line_tokens;
  std::vector<std::optional<EntropySample>> line_probes;
  std::size_t tokens_used = 0;
  EmaState ema{};
  bool end_think_seen = false;
  bool tokens_approximate = false;
  std::vector<TranscriptEvent> transcript;

  void log(TranscriptEvent e) { transcript.push_back(std::move(e)); }
};

inline SessionState start_session(std::string question, double alpha) {
  SessionState s;
  s.question = std::move(question);
  s.ema = EmaState::fresh(alpha);
  return s;
}

enum class LineEnd { separator, end_think, max_tokens, end_of_sequence };

inline std::string_view to_string(LineEnd e) {
  switch (e) {
    case LineEnd::separator: return "separator";
    case LineEnd::end_think: return "end_think";
    case LineEnd::max_tokens: return "max_tokens";
    case LineEnd::end_of_sequence: return "end_of_sequence";
  }
  return "separator";
}

struct GeneratedLine {
  std::string text;  // includes the separator when one ended the line
  std::size_t token_count = 0;
  bool end_think_seen = false;
  LineEnd ended_by = LineEnd::separator;
  bool tokens_approximate = false;
};

inline std::string reasoning_prefix(const SessionState& s, const LiveOptions& opt) {
  std::string out = s.question + opt.think_open;
  for (const auto& l : s.lines) out += l;
  return out;
}

/// Streams the next reasoning line. The line boundary is found client-side
/// on the decoded text, so providers without stop-sequence support work.
inline GeneratedLine generate_line(const SessionState& session, CompletionClient& client,
                                   std::size_t token_limit, const LiveOptions& opt = {}) {
  if (session.end_think_seen) throw InvalidArgument("generate_line: session already ended its thinking");
  if (session.tokens_used >= token_limit) throw InvalidArgument("generate_line: token budget exhausted");
  const std::size_t remaining = token_limit - session.tokens_used;
  CompletionRequest req;
  req.prompt = reasoning_prefix(session, opt);
  req.max_tokens = std::min(remaining, opt.trigger == LineTrigger::every_tokens
                                           ? std::max<std::size_t>(1, opt.tokens_per_probe)
                                           : opt.max_line_tokens);
  req.temperature = opt.decoding.temperature;
  req.top_p = opt.decoding.top_p;
  req.stop = client.config().stop_sequences;
  req.seed = opt.seed;

  return with_retries(opt.retry, [&] {
    GeneratedLine line;
    std::string buffer;
    std::optional<LineEnd> cut;
    auto summary = client.stream(req, [&](std::string_view delta) {
      buffer.append(delta);
      const auto close = buffer.find(opt.think_close);
      const auto sep = opt.trigger == LineTrigger::paragraph ? buffer.find(kParagraphSeparator)
                                                              : std::string::npos;
      if (close != std::string::npos && (sep == std::string::npos || close <= sep)) {
        buffer.resize(close);
        cut = LineEnd::end_think;
        return false;
      }
      if (sep != std::string::npos) {
        buffer.resize(sep + kParagraphSeparator.size());
        cut = LineEnd::separator;
        return false;
      }
      return true;
    });
    line.text = std::move(buffer);
    if (cut) {
      line.ended_by = *cut;
    } else if (summary.finish_reason == "length") {
      line.ended_by = LineEnd::max_tokens;
    } else {
      // The provider stopped on its own: end of sequence or a configured
      // stop sequence (typically the end-of-think marker).
      line.ended_by = LineEnd::end_of_sequence;
    }
    line.end_think_seen = line.ended_by == LineEnd::end_think || line.ended_by == LineEnd::end_of_sequence;
    if (!cut && summary.completion_tokens) {
      line.token_count = *summary.completion_tokens;
    } else {
      line.token_count = summary.chunks;
      line.tokens_approximate = !cut && !summary.completion_tokens;
    }
    return line;
  });
}

/// Normalizes a full next-token distribution returned as log-probabilities.
inline std::vector<double> probabilities_from_logprobs(const std::vector<TopKEntry>& entries) {
  std::vector<double> probs;
  probs.reserve(entries.size());
  double total = 0.0;
  for (const auto& e : entries) {
    if (std::isnan(e.logprob)) throw EndpointError("endpoint returned a NaN logprob");
    probs.push_back(std::exp(std::min(e.logprob, 0.0)));
    total += probs.back();
  }
  if (std::fabs(total - 1.0) > kResidualTolerance) {
    throw EndpointError("full distribution sums to " + std::to_string(total) +
                        "; the endpoint does not return the whole vocabulary");
  }
  for (auto& p : probs) p /= total;
  return probs;
}

/// Entropy of the next token after the rendered probe context.
inline EntropySample probe_eat(const SessionState& session, CompletionClient& probe_client,
                               ProbeVariant variant, const LiveOptions& opt = {}) {
  if (session.lines.empty()) throw InvalidArgument("probe_eat: session has no reasoning lines");
  ProbeContext ctx;
  ctx.question = session.question;
  ctx.reasoning_lines = session.lines;
  ctx.variant = variant;
  ctx.prefix = opt.probe_prefix;
  ctx.think_open = opt.think_open;
  ctx.think_close = opt.think_close;
  const std::string prompt = render_probe(ctx);
  const auto& cfg = probe_client.config();

  auto entries = with_retries(opt.retry, [&] {
    return probe_client.next_token_logprobs(prompt, cfg.max_top_logprobs);
  });
  if (entries.empty()) {
    throw EndpointError("endpoint '" + cfg.model_id +
                        "' returned no logprobs; use an endpoint with logprob support or capture traces offline");
  }
  EntropySample sample;
  if (cfg.supports_full_distribution) {
    sample = EntropySample::exact_value(entropy(probabilities_from_logprobs(entries)));
  } else {
    if (cfg.vocab_size < entries.size()) {
      throw InvalidArgument("probe endpoint '" + cfg.model_id +
                            "' needs vocab_size >= returned top-K to bound the entropy");
    }
    try {
      sample = EntropySample::from_bounds(entropy_bounds_from_topk({entries, cfg.vocab_size}));
    } catch (const InvalidArgument& e) {
      throw EndpointError(std::string("inconsistent top-K logprobs: ") + e.what());
    }
  }
  sample.line_index = session.lines.size() - 1;
  sample.cumulative_reasoning_tokens = session.tokens_used;
  sample.probe_model_id = cfg.model_id;
  sample.variant = variant;
  return sample;
}

struct ElicitedAnswer {
  std::string raw;
  std::string extracted;
};

/// Completes context + answer prefix to the end of sequence.
inline ElicitedAnswer elicit_answer(const std::string& context, CompletionClient& client,
                                    const LiveOptions& opt = {}) {
  if (context.size() < opt.think_close.size() ||
      context.compare(context.size() - opt.think_close.size(), opt.think_close.size(), opt.think_close) != 0) {
    throw InvalidArgument("elicit_answer: context must end with the end-of-think marker");
  }
  CompletionRequest req;
  req.prompt = context + opt.answer_prefix;
  req.max_tokens = opt.max_answer_tokens;
  req.temperature = opt.decoding.temperature;
  req.top_p = opt.decoding.top_p;
  req.seed = opt.seed;
  ElicitedAnswer out;
  out.raw = with_retries(opt.retry, [&] {
    std::string text;
    client.stream(req, [&](std::string_view d) {
      text.append(d);
      return true;
    });
    return text;
  });
  if (trim(out.raw).empty()) throw EndpointError("answer elicitation returned an empty completion");
  out.extracted = normalize_answer(out.raw);
  return out;
}

struct SessionResult {
  ElicitedAnswer answer;
  ExitReason exit_reason = ExitReason::none;
  ReasoningTrace trace;
};

/// Builds the replayable trace for the session so far.
inline ReasoningTrace session_trace(const SessionState& s, const std::string& question_id,
                                    const CompletionClient& reasoning, const ProbeKey& probe_key,
                                    const LiveOptions& opt) {
  ReasoningTrace t;
  t.question_id = question_id;
  t.dataset = opt.dataset;
  t.question = s.question;
  t.reasoning_model_id = reasoning.config().model_id;
  t.decoding = opt.decoding;
  t.ended_with_end_think = s.end_think_seen;
  for (std::size_t i = 0; i < s.lines.size(); ++i) {
    LineRecord line;
    line.index = i;
    line.text = s.lines[i];
    line.token_count = s.line_tokens[i];
    if (const auto& p = s.line_probes[i]) {
      ProbeValue pv{p->value, p->exactness, p->lower, p->upper};
      line.probes.emplace(probe_key, pv);
    }
    t.lines.push_back(std::move(line));
  }
  t.meta["source"] = "live";
  t.meta["probe_model_id"] = probe_key.model_id;
  t.meta["tokens_approximate"] = s.tokens_approximate ? "true" : "false";
  return t;
}

/// Runs the early-exit loop to completion. `session` is caller-owned so a
/// partial transcript survives an aborting endpoint error.
inline SessionResult run_session(SessionState& session, const std::string& question_id,
                                 EatVariancePolicy policy, CompletionClient& reasoning,
                                 CompletionClient& probe, const LiveOptions& opt = {}) {
  validate(policy);
  if (policy.probe.model_id.empty()) policy.probe.model_id = probe.config().model_id;
  if (session.ema.alpha != policy.alpha || session.ema.n != 0) session.ema = EmaState::fresh(policy.alpha);

  SessionResult result;
  while (true) {
    auto line = generate_line(session, reasoning, policy.token_limit, opt);
    if (line.token_count == 0 && line.text.empty()) {
      if (session.lines.empty()) throw EndpointError("reasoning endpoint produced no tokens");
      session.end_think_seen = true;  // nothing more to say: attribute to the previous line
    } else {
      session.lines.push_back(line.text);
      session.line_tokens.push_back(std::max<std::size_t>(1, line.token_count));
      session.line_probes.emplace_back();
      session.tokens_used += session.line_tokens.back();
      session.end_think_seen = line.end_think_seen;
      session.tokens_approximate = session.tokens_approximate || line.tokens_approximate;
    }
    const std::size_t idx = session.lines.size() - 1;
    session.log({.kind = EventKind::line_generated,
                 .line_index = idx,
                 .model_id = reasoning.config().model_id,
                 .detail = std::string(to_string(line.ended_by)),
                 .tokens = line.token_count});

    if (!session.end_think_seen && session.tokens_used < policy.token_limit) {
      try {
        auto sample = probe_eat(session, probe, policy.probe.variant, opt);
        session.ema = ema_update(session.ema, sample.value);
        session.line_probes[idx] = sample;
        session.log({.kind = EventKind::probe_issued,
                     .line_index = idx,
                     .model_id = sample.probe_model_id,
                     .detail = std::string(to_string(sample.variant)),
                     .value = sample.value,
                     .lower = sample.lower,
                     .upper = sample.upper});
      } catch (const EndpointError& e) {
        // Never fabricate a reading: the line simply contributes no update.
        session.log({.kind = EventKind::probe_failed,
                     .line_index = idx,
                     .model_id = probe.config().model_id,
                     .detail = e.what()});
      }
    }
    const auto decision = decide_eat(session.ema, policy, session.tokens_used, session.end_think_seen);
    session.log({.kind = EventKind::decision,
                 .line_index = idx,
                 .model_id = {},
                 .detail = std::string(to_string(decision.reason)),
                 .tokens = session.tokens_used});
    if (decision.exits()) {
      result.exit_reason = decision.reason;
      session.log({.kind = EventKind::exit, .line_index = idx, .model_id = {}, .detail = std::string(to_string(decision.reason))});
      break;
    }
  }

  result.answer = elicit_answer(reasoning_prefix(session, opt) + opt.think_close, reasoning, opt);
  session.log({.kind = EventKind::answer,
               .line_index = session.lines.size() - 1,
               .model_id = reasoning.config().model_id,
               .detail = result.answer.extracted});
  result.trace = session_trace(session, question_id, reasoning, policy.probe, opt);
  result.trace.meta["exit_reason"] = std::string(to_string(result.exit_reason));
  result.trace.meta["answer_text"] = result.answer.raw;
  result.trace.meta["extracted_answer"] = result.answer.extracted;
  validate_trace(result.trace);
  return result;
}

inline SessionResult run_session(const std::string& question, const std::string& question_id,
                                 const EatVariancePolicy& policy, CompletionClient& reasoning,
                                 CompletionClient& probe, const LiveOptions& opt = {}) {
  auto session = start_session(question, policy.alpha);
  return run_session(session, question_id, policy, reasoning, probe, opt);
}

}  // namespace eatstop
