#pragma once

// Stopping policies and their per-line decision functions.
//
// Every decision applies the same priority: a natural end-of-think wins,
// then the hard token limit, then the policy's own signal.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>

#include "eatstop/answers.hpp"
#include "eatstop/ema.hpp"
#include "eatstop/error.hpp"
#include "eatstop/signals.hpp"

namespace eatstop {

inline constexpr std::size_t kDefaultTokenLimit = 10000;

struct EatVariancePolicy {
  double delta = 0.0;  // variance threshold
  double alpha = kDefaultAlpha;
  std::size_t token_limit = kDefaultTokenLimit;
  ProbeKey probe{"", ProbeVariant::eat_prefix};  // empty model id: the reasoning model
};

struct TokenBudgetPolicy {
  std::size_t token_limit = kDefaultTokenLimit;
};

struct UniqueAnswersPolicy {
  std::size_t k = 8;               // rollouts per line
  std::size_t uniq_threshold = 1;  // exit when distinct answers <= this
  std::size_t token_limit = kDefaultTokenLimit;
};

using StoppingPolicy = std::variant<EatVariancePolicy, TokenBudgetPolicy, UniqueAnswersPolicy>;

inline std::string_view policy_kind(const StoppingPolicy& p) {
  switch (p.index()) {
    case 0: return "eat";
    case 1: return "token";
    default: return "uak";
  }
}

inline std::size_t token_limit_of(const StoppingPolicy& p) {
  return std::visit([](const auto& q) { return q.token_limit; }, p);
}

inline void validate(const EatVariancePolicy& p) {
  if (!(p.delta > 0.0)) throw InvalidArgument("eat policy: delta must be positive");
  check_alpha(p.alpha);
  if (p.token_limit < 1) throw InvalidArgument("eat policy: token_limit must be >= 1");
}

inline void validate(const TokenBudgetPolicy& p) {
  if (p.token_limit < 1) throw InvalidArgument("token policy: token_limit must be >= 1");
}

inline void validate(const UniqueAnswersPolicy& p) {
  if (p.k < 1) throw InvalidArgument("uak policy: k must be >= 1");
  if (p.uniq_threshold < 1 || p.uniq_threshold > p.k) {
    throw InvalidArgument("uak policy: uniq_threshold must lie in [1, k]");
  }
  if (p.token_limit < 1) throw InvalidArgument("uak policy: token_limit must be >= 1");
}

inline void validate(const StoppingPolicy& p) {
  std::visit([](const auto& q) { validate(q); }, p);
}

enum class Verdict { continue_, exit };

enum class ExitReason {
  none,
  variance_below_threshold,
  end_think_emitted,
  token_limit_reached,
  unique_answers_at_threshold,
};

inline std::string_view to_string(ExitReason r) {
  switch (r) {
    case ExitReason::none: return "none";
    case ExitReason::variance_below_threshold: return "variance_below_threshold";
    case ExitReason::end_think_emitted: return "end_think_emitted";
    case ExitReason::token_limit_reached: return "token_limit_reached";
    case ExitReason::unique_answers_at_threshold: return "unique_answers_at_threshold";
  }
  return "none";
}

inline ExitReason parse_exit_reason(std::string_view s) {
  for (auto r : {ExitReason::none, ExitReason::variance_below_threshold,
                 ExitReason::end_think_emitted, ExitReason::token_limit_reached,
                 ExitReason::unique_answers_at_threshold}) {
    if (to_string(r) == s) return r;
  }
  throw InvalidArgument("unknown exit reason '" + std::string(s) + "'");
}

// verdict == exit iff reason != none.
struct StopDecision {
  Verdict verdict = Verdict::continue_;
  ExitReason reason = ExitReason::none;

  static StopDecision keep_going() { return {}; }
  static StopDecision stop(ExitReason r) { return {Verdict::exit, r}; }
  bool exits() const { return verdict == Verdict::exit; }

  friend bool operator==(const StopDecision&, const StopDecision&) = default;
};

inline StopDecision decide_eat(const EmaState& state, const EatVariancePolicy& policy,
                               std::size_t tokens_used, bool end_think_seen) {
  if (end_think_seen) return StopDecision::stop(ExitReason::end_think_emitted);
  if (tokens_used >= policy.token_limit) return StopDecision::stop(ExitReason::token_limit_reached);
  if (state.n >= warmup_updates(policy.alpha) && state.var < policy.delta) {
    return StopDecision::stop(ExitReason::variance_below_threshold);
  }
  return StopDecision::keep_going();
}

inline StopDecision decide_token(std::size_t tokens_used, const TokenBudgetPolicy& policy,
                                 bool end_think_seen) {
  if (end_think_seen) return StopDecision::stop(ExitReason::end_think_emitted);
  if (tokens_used >= policy.token_limit) return StopDecision::stop(ExitReason::token_limit_reached);
  return StopDecision::keep_going();
}

/// Distinct answers after string normalization (see normalize_answer).
inline std::size_t unique_answer_count(std::span<const std::string> answers) {
  if (answers.empty()) throw InvalidArgument("unique_answer_count: no answers");
  std::unordered_set<std::string> seen;
  for (const auto& a : answers) seen.insert(normalize_answer(a));
  return seen.size();
}

inline StopDecision decide_uak(std::span<const std::string> answers,
                               const UniqueAnswersPolicy& policy, std::size_t tokens_used,
                               bool end_think_seen) {
  if (answers.size() != policy.k) {
    throw InvalidArgument("decide_uak: expected " + std::to_string(policy.k) +
                          " rollouts, got " + std::to_string(answers.size()));
  }
  if (end_think_seen) return StopDecision::stop(ExitReason::end_think_emitted);
  if (tokens_used >= policy.token_limit) return StopDecision::stop(ExitReason::token_limit_reached);
  if (unique_answer_count(answers) <= policy.uniq_threshold) {
    return StopDecision::stop(ExitReason::unique_answers_at_threshold);
  }
  return StopDecision::keep_going();
}

}  // namespace eatstop
