#pragma once

// `eatstop` command line: validate, replay, sweep, live, report.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 endpoint error,
// 1 anything else.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eatstop/error.hpp"
#include "eatstop/live.hpp"
#include "eatstop/openai_client.hpp"
#include "eatstop/replay.hpp"
#include "eatstop/report.hpp"
#include "eatstop/stopping.hpp"
#include "eatstop/trace.hpp"

namespace eatstop::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDataError = 3,
  kEndpointError = 4,
};

struct PolicyFlags {
  std::string policy = "eat";
  std::vector<double> alphas{kDefaultAlpha};
  std::optional<double> delta;
  std::string delta_grid;
  std::optional<std::size_t> token_limit;
  std::string token_grid;
  std::vector<std::size_t> ks{8};
  std::optional<std::size_t> uniq_threshold;
  std::string uniq_grid;
  std::string probe_model;
  std::string variant = "eat_prefix";
  std::size_t probe_cost = 1;
  std::optional<std::size_t> rollout_tokens;
  bool skip_missing_probes = false;
  bool allow_unlabeled = false;
};

struct CorpusFlags {
  std::vector<std::string> traces;
  std::optional<double> solvable_threshold;
  std::size_t parallel = 1;
  std::uint64_t seed = 0;
  std::size_t repeats = 64;
  std::string output = "-";
  std::string format = "json";
};

struct EndpointFlags {
  std::string base_url;
  std::string model;
  std::string api_key_env;
  std::size_t top_logprobs = 20;
  std::size_t vocab_size = 0;
  bool full_distribution = false;
  std::size_t timeout_ms = 60000;
};

struct LiveFlags {
  std::string questions;
  EndpointFlags reasoning;
  EndpointFlags probe;
  std::vector<std::string> stop;
  std::string probe_every = "line";
  std::string prefix = std::string(kDefaultProbePrefix);
  std::string answer_prefix = std::string(kDefaultAnswerPrefix);
  std::string think_close = std::string(kThinkClose);
  double temperature = 0.6;
  double top_p = 0.95;
  std::size_t max_line_tokens = 2048;
  std::size_t max_answer_tokens = 2048;
  std::string transcript_out;
};

namespace detail {

inline std::vector<double> parse_number_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = std::string(trim(item));
    if (t.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size()) throw InvalidArgument(std::string("bad ") + what + " value '" + t + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidArgument(std::string("empty ") + what + " list");
  return out;
}

inline std::vector<double> delta_thresholds(const PolicyFlags& f) {
  if (f.delta) return {*f.delta};
  if (f.delta_grid.empty() || f.delta_grid == "neg") return grids::delta_negative_powers();
  if (f.delta_grid == "pos") return grids::delta_positive_powers();
  if (f.delta_grid == "both") {
    auto g = grids::delta_negative_powers();
    auto p = grids::delta_positive_powers();
    g.insert(g.end(), p.begin() + 1, p.end());  // 2^0 appears once
    return g;
  }
  return parse_number_list(f.delta_grid, "delta-grid");
}

inline std::vector<double> token_thresholds(const PolicyFlags& f) {
  if (f.token_limit) return {static_cast<double>(*f.token_limit)};
  if (f.token_grid.empty() || f.token_grid == "standard") return grids::token_limits();
  return parse_number_list(f.token_grid, "token-grid");
}

inline std::vector<double> uniq_thresholds(const PolicyFlags& f) {
  if (f.uniq_threshold) return {static_cast<double>(*f.uniq_threshold)};
  if (f.uniq_grid.empty() || f.uniq_grid == "standard") return grids::unique_answer_thresholds();
  return parse_number_list(f.uniq_grid, "uniq-grid");
}

inline ProbeKey probe_key(const PolicyFlags& f) { return {f.probe_model, parse_probe_variant(f.variant)}; }

inline std::size_t limit_or_default(const PolicyFlags& f) {
  return f.token_limit.value_or(kDefaultTokenLimit);
}

inline SimulationOptions simulation_options(const PolicyFlags& p, const CorpusFlags& c) {
  SimulationOptions s;
  s.probe_cost = p.probe_cost;
  s.mean_rollout_tokens = p.rollout_tokens;
  s.seed = c.seed;
  s.skip_missing_probes = p.skip_missing_probes;
  s.allow_unlabeled = p.allow_unlabeled;
  return s;
}

inline std::vector<ReasoningTrace> load_corpus(const CorpusFlags& c) {
  std::vector<ReasoningTrace> all;
  for (const auto& path : c.traces) {
    auto part = load_traces(path);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (c.solvable_threshold) all = filter_solvable(all, *c.solvable_threshold);
  return all;
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file(path, text);
  }
}

// Live runs name the probe model through the proxy endpoint flags instead.
inline void add_policy_flags(CLI::App* cmd, PolicyFlags& f, bool grids_allowed, bool probe_model_flag = true) {
  cmd->add_option("--policy", f.policy, "Stopping policy: eat | token | uak")
      ->check(CLI::IsMember({"eat", "token", "uak"}));
  cmd->add_option("--alpha", f.alphas, "EMA timescale α in (0,1) (several values: one curve each)")
      ->delimiter(',')
      ->capture_default_str();
  auto* delta = cmd->add_option("--delta", f.delta, "EMA variance threshold δ (> 0)");
  auto* limit = cmd->add_option("--token-limit", f.token_limit,
                                "Maximum reasoning tokens T (default 10000)");
  cmd->add_option("--k", f.ks, "Rollouts per line K for UA@K (several values: one curve each)")
      ->delimiter(',');
  auto* uniq = cmd->add_option("--uniq-threshold", f.uniq_threshold,
                               "UA@K unique-answer threshold Δ (exit when distinct answers <= Δ)");
  if (probe_model_flag) {
    cmd->add_option("--probe-model", f.probe_model,
                    "Probe model id φ whose entropies drive EAT (default: the trace's reasoning model θ)");
  }
  cmd->add_option("--variant", f.variant, "Probe variant: eat | eat_prefix | entropy_after_newline")
      ->check(CLI::IsMember({"eat", "eat_prefix", "entropy_after_newline"}))
      ->capture_default_str();
  cmd->add_option("--probe-cost", f.probe_cost, "Token-equivalents charged per EAT probe")
      ->capture_default_str();
  cmd->add_option("--rollout-tokens", f.rollout_tokens,
                  "Mean rollout length charged when a rollout has no recorded token count");
  cmd->add_flag("--allow-unlabeled", f.allow_unlabeled,
                "Accept lines without Pass@1 labels, e.g. traces from live runs (pass1_at_stop is null)");
  cmd->add_flag("--skip-missing-probes", f.skip_missing_probes,
                "Treat lines without a probe as failed probes instead of an error");
  if (grids_allowed) {
    cmd->add_option("--delta-grid", f.delta_grid,
                    "δ grid: neg (2^-k, k=0..39), pos (2^k, k=0..39), both, or a comma list")
        ->excludes(delta);
    cmd->add_option("--token-grid", f.token_grid, "T grid: standard (250·{1..40}) or a comma list")
        ->excludes(limit);
    cmd->add_option("--uniq-grid", f.uniq_grid, "Δ grid: standard ({1,2,3}) or a comma list")->excludes(uniq);
  }
}

inline void add_corpus_flags(CLI::App* cmd, CorpusFlags& c) {
  cmd->add_option("--traces", c.traces, "Trace JSONL files")->required();
  cmd->add_option("--solvable-threshold", c.solvable_threshold,
                  "Keep only traces whose final Pass@1 reaches this value (0.8 filters to solvable)");
  cmd->add_option("--parallel", c.parallel, "Worker threads across traces")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed for UA@K rollout subsampling")->capture_default_str();
  cmd->add_option("--repeats", c.repeats, "UA@K rollout draws averaged per trace")->capture_default_str();
  cmd->add_option("-o,--output", c.output, "Output path, - for stdout")->capture_default_str();
  cmd->add_option("--format", c.format, "Output format: json | csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
}

inline void add_endpoint_flags(CLI::App* cmd, EndpointFlags& e, const std::string& prefix,
                               const std::string& role) {
  cmd->add_option("--" + prefix + "base-url", e.base_url, role + " endpoint base URL");
  cmd->add_option("--" + prefix + "model", e.model, role + " model id");
  cmd->add_option("--" + prefix + "api-key-env", e.api_key_env,
                  "Environment variable holding the " + role + " bearer token");
  cmd->add_option("--" + prefix + "top-logprobs", e.top_logprobs, "Top-K logprobs requested per probe")
      ->capture_default_str();
  cmd->add_option("--" + prefix + "vocab-size", e.vocab_size, "Vocabulary size used to bound top-K entropy");
  cmd->add_flag("--" + prefix + "full-distribution", e.full_distribution,
                "Endpoint returns the whole next-token distribution (exact entropy)");
  cmd->add_option("--" + prefix + "timeout-ms", e.timeout_ms, "Request timeout")->capture_default_str();
}

inline EndpointConfig endpoint_config(const EndpointFlags& e, const std::vector<std::string>& stop) {
  EndpointConfig c;
  c.base_url = e.base_url;
  c.model_id = e.model;
  c.api_key_env = e.api_key_env;
  c.max_top_logprobs = e.top_logprobs;
  c.vocab_size = e.vocab_size;
  c.supports_full_distribution = e.full_distribution;
  c.request_timeout = std::chrono::milliseconds(e.timeout_ms);
  c.stop_sequences = stop;
  return c;
}

inline std::string eat_family_name(double alpha, const PolicyFlags& f) {
  std::string name = "eat(alpha=" + format_number(alpha) + ",variant=" + f.variant;
  if (!f.probe_model.empty()) name += ",probe=" + f.probe_model;
  return name + ")";
}

inline StoppingPolicy single_policy(const PolicyFlags& f) {
  if (f.alphas.size() != 1 || f.ks.size() != 1) {
    throw InvalidArgument("replay takes a single --alpha and --k");
  }
  if (f.policy == "eat") {
    if (!f.delta) throw InvalidArgument("--delta is required for the eat policy");
    return EatVariancePolicy{*f.delta, f.alphas[0], limit_or_default(f), probe_key(f)};
  }
  if (f.policy == "token") return TokenBudgetPolicy{limit_or_default(f)};
  if (!f.uniq_threshold) throw InvalidArgument("--uniq-threshold is required for the uak policy");
  return UniqueAnswersPolicy{f.ks[0], *f.uniq_threshold, limit_or_default(f)};
}

inline int do_validate(const std::vector<std::string>& files, std::ostream& out) {
  int code = kOk;
  for (const auto& path : files) {
    try {
      const auto traces = load_traces(path);
      out << path << ": ok (" << traces.size() << " trace" << (traces.size() == 1 ? "" : "s") << ")\n";
    } catch (const Error& e) {
      out << path << ": invalid: " << e.what() << "\n";
      code = kDataError;
    }
  }
  return code;
}

inline int do_replay(const PolicyFlags& p, const CorpusFlags& c, std::ostream& out) {
  const auto policy = single_policy(p);
  const auto traces = load_corpus(c);
  const auto outcomes = replay_corpus(traces, policy, simulation_options(p, c), c.repeats, c.parallel);
  emit(c.output, emit_replay(outcomes, policy, parse_report_format(c.format)), out);
  return kOk;
}

inline int do_sweep(const PolicyFlags& p, const CorpusFlags& c, std::ostream& out) {
  const auto traces = load_corpus(c);
  SweepOptions opt;
  opt.simulation = simulation_options(p, c);
  opt.repeats = c.repeats;
  opt.parallelism = c.parallel;
  std::vector<EfficiencyCurve> curves;
  const std::size_t limit = limit_or_default(p);
  if (p.policy == "eat") {
    const auto thresholds = delta_thresholds(p);
    for (double alpha : p.alphas) {
      PolicyFamily fam{eat_family_name(alpha, p), EatVariancePolicy{1.0, alpha, limit, probe_key(p)}};
      curves.push_back(sweep(traces, fam, thresholds, opt));
    }
  } else if (p.policy == "token") {
    if (p.token_limit) throw InvalidArgument("token sweeps take --token-grid, not --token-limit");
    curves.push_back(sweep(traces, {"token", TokenBudgetPolicy{}}, token_thresholds(p), opt));
  } else {
    const auto thresholds = uniq_thresholds(p);
    for (std::size_t k : p.ks) {
      PolicyFamily fam{"uak(k=" + std::to_string(k) + ")", UniqueAnswersPolicy{k, 1, limit}};
      curves.push_back(sweep(traces, fam, thresholds, opt));
    }
  }
  emit(c.output, emit_report(curves, c.format), out);
  return kOk;
}

inline int do_report(const std::string& input, const std::string& format, const std::string& output,
                     std::ostream& out) {
  emit(output, emit_report(parse_report(read_file(input)), format), out);
  return kOk;
}

inline int do_live(const PolicyFlags& p, const LiveFlags& l, const std::string& output, std::uint64_t seed,
                   std::ostream& out, std::ostream& err) {
  if (l.reasoning.base_url.empty() || l.reasoning.model.empty()) {
    throw InvalidArgument("live requires --base-url and --model for the reasoning endpoint");
  }
  if (p.policy != "eat") throw InvalidArgument("live runs the eat policy only");
  if (!p.delta) throw InvalidArgument("--delta is required for live runs");
  if (p.alphas.size() != 1) throw InvalidArgument("live takes a single --alpha");
  EatVariancePolicy policy{*p.delta, p.alphas[0], limit_or_default(p), probe_key(p)};
  validate(policy);

  OpenAICompletionClient reasoning(endpoint_config(l.reasoning, l.stop));
  std::unique_ptr<OpenAICompletionClient> proxy;
  if (!l.probe.base_url.empty() || !l.probe.model.empty()) {
    EndpointFlags pf = l.probe;
    if (pf.base_url.empty()) pf.base_url = l.reasoning.base_url;
    if (pf.model.empty()) pf.model = l.reasoning.model;
    proxy = std::make_unique<OpenAICompletionClient>(endpoint_config(pf, {}));
  }
  CompletionClient& probe = proxy ? static_cast<CompletionClient&>(*proxy) : reasoning;

  LiveOptions opt;
  opt.decoding = {l.temperature, l.top_p};
  opt.probe_prefix = l.prefix;
  opt.answer_prefix = l.answer_prefix;
  opt.think_close = l.think_close;
  opt.max_line_tokens = l.max_line_tokens;
  opt.max_answer_tokens = l.max_answer_tokens;
  opt.seed = seed;
  if (l.probe_every == "line") {
    opt.trigger = LineTrigger::paragraph;
  } else if (l.probe_every.rfind("tokens:", 0) == 0) {
    opt.trigger = LineTrigger::every_tokens;
    const auto s = parse_number_list(l.probe_every.substr(7), "probe-every");
    if (s.size() != 1 || s[0] < 1 || s[0] != std::floor(s[0])) {
      throw InvalidArgument("--probe-every tokens:S needs a positive integer S");
    }
    opt.tokens_per_probe = static_cast<std::size_t>(s[0]);
  } else {
    throw InvalidArgument("--probe-every must be 'line' or 'tokens:S'");
  }

  std::vector<std::pair<std::string, std::string>> questions;
  {
    const auto text = read_file(l.questions);
    std::stringstream ss(text);
    std::string line;
    std::size_t record = 0;
    while (std::getline(ss, line)) {
      ++record;
      if (trim(line).empty()) continue;
      auto doc = nlohmann::json::parse(line, nullptr, false);
      if (doc.is_discarded()) throw MalformedJson("bad question record", record);
      if (!doc.is_object() || !doc.contains("question") || !doc["question"].is_string()) {
        throw SchemaViolation("question record needs a string 'question'", record, "question");
      }
      std::string id = doc.value("question_id", "q" + std::to_string(record));
      questions.emplace_back(id, doc["question"].get<std::string>());
    }
  }

  std::vector<ReasoningTrace> traces;
  std::string transcripts;
  int code = kOk;
  for (const auto& [id, question] : questions) {
    auto session = start_session(question, policy.alpha);
    nlohmann::ordered_json record;
    record["question_id"] = id;
    try {
      auto result = run_session(session, id, policy, reasoning, probe, opt);
      record["exit_reason"] = std::string(to_string(result.exit_reason));
      record["answer_text"] = result.answer.raw;
      record["extracted_answer"] = result.answer.extracted;
      traces.push_back(std::move(result.trace));
    } catch (const EndpointError& e) {
      err << "question " << id << ": endpoint error: " << e.what() << "\n";
      record["error"] = e.what();
      code = kEndpointError;
    }
    auto events = nlohmann::ordered_json::array();
    for (const auto& ev : session.transcript) events.push_back(event_to_json(ev));
    record["transcript"] = std::move(events);
    transcripts += record.dump() + "\n";
    if (code != kOk) break;
  }
  emit(output, serialize_traces(traces), out);
  if (!l.transcript_out.empty()) write_file(l.transcript_out, transcripts);
  return code;
}

}  // namespace detail

/// Entry point shared by the `eatstop` binary and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"eatstop: entropy-after-</think> early exiting for reasoning models"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_config("--config", "", "Config file (TOML/INI); keys under [subcommand] sections mirror the flags");

  std::vector<std::string> validate_files;
  auto* validate_cmd = app.add_subcommand("validate", "Schema-check trace files");
  validate_cmd->add_option("files", validate_files, "Trace JSONL files")->required();

  PolicyFlags replay_policy;
  CorpusFlags replay_corpus_flags;
  auto* replay_cmd = app.add_subcommand("replay", "Simulate one policy over a trace corpus");
  detail::add_policy_flags(replay_cmd, replay_policy, false);
  detail::add_corpus_flags(replay_cmd, replay_corpus_flags);

  PolicyFlags sweep_policy;
  CorpusFlags sweep_corpus_flags;
  auto* sweep_cmd = app.add_subcommand("sweep", "Efficiency curves across threshold grids");
  detail::add_policy_flags(sweep_cmd, sweep_policy, true);
  detail::add_corpus_flags(sweep_cmd, sweep_corpus_flags);

  PolicyFlags live_policy;
  LiveFlags live;
  std::string live_output = "-";
  std::uint64_t live_seed = 0;
  auto* live_cmd = app.add_subcommand("live", "Run early exiting against a completion endpoint");
  detail::add_policy_flags(live_cmd, live_policy, false, false);
  live_cmd->add_option("--questions", live.questions, "JSONL of {question_id, question}")->required();
  detail::add_endpoint_flags(live_cmd, live.reasoning, "", "reasoning (θ)");
  detail::add_endpoint_flags(live_cmd, live.probe, "probe-", "proxy probe (φ)");
  live_cmd->add_option("--stop", live.stop, "Extra stop sequences sent to the reasoning endpoint");
  live_cmd->add_option("--probe-every", live.probe_every, "Probe schedule: line | tokens:S")
      ->capture_default_str();
  live_cmd->add_option("--prefix", live.prefix, "Prefix appended after </think>\\n for eat_prefix")
      ->capture_default_str();
  live_cmd->add_option("--answer-prefix", live.answer_prefix, "Text forcing the final answer");
  live_cmd->add_option("--think-close", live.think_close, "End-of-think marker")->capture_default_str();
  live_cmd->add_option("--temperature", live.temperature, "Sampling temperature")->capture_default_str();
  live_cmd->add_option("--top-p", live.top_p, "Nucleus sampling top-p")->capture_default_str();
  live_cmd->add_option("--max-line-tokens", live.max_line_tokens, "Token cap per reasoning line")
      ->capture_default_str();
  live_cmd->add_option("--max-answer-tokens", live.max_answer_tokens, "Token cap for the answer")
      ->capture_default_str();
  live_cmd->add_option("--transcripts", live.transcript_out, "Write per-question transcripts (JSONL)");
  live_cmd->add_option("-o,--output", live_output, "Trace JSONL output, - for stdout")->capture_default_str();
  live_cmd->add_option("--seed", live_seed, "Sampling seed forwarded to the endpoint")->capture_default_str();

  std::string report_input;
  std::string report_format = "csv";
  std::string report_output = "-";
  auto* report_cmd = app.add_subcommand("report", "Re-render a stored JSON report");
  report_cmd->add_option("input", report_input, "JSON report written by sweep")->required();
  report_cmd->add_option("--format", report_format, "json | csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  report_cmd->add_option("-o,--output", report_output, "Output path, - for stdout")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate_cmd) return detail::do_validate(validate_files, out);
    if (*replay_cmd) return detail::do_replay(replay_policy, replay_corpus_flags, out);
    if (*sweep_cmd) return detail::do_sweep(sweep_policy, sweep_corpus_flags, out);
    if (*live_cmd) return detail::do_live(live_policy, live, live_output, live_seed, out, err);
    if (*report_cmd) return detail::do_report(report_input, report_format, report_output, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const EndpointError& e) {
    err << "endpoint error: " << e.what() << "\n";
    return kEndpointError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const MissingData& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace eatstop::cli
