#pragma once

// Offline early-exit simulation over stored reasoning traces.
//
// A trace records one long reasoning chain with per-line probe entropies,
// rollouts and Pass@1. Simulation walks the lines in order, feeding a
// policy only what it would have seen live, and truncates the chain at the
// first exit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "eatstop/ema.hpp"
#include "eatstop/error.hpp"
#include "eatstop/signals.hpp"
#include "eatstop/stopping.hpp"
#include "eatstop/trace.hpp"

namespace eatstop {

inline constexpr double kDefaultSolvableThreshold = 0.8;

struct SimulationOptions {
  std::size_t probe_cost = 1;  // token-equivalents charged per EAT probe
  // Used for rollouts without a recorded token_count.
  std::optional<std::size_t> mean_rollout_tokens;
  std::uint64_t seed = 0;
  std::size_t repeat = 0;  // which rollout draw, for UA@K
  // Treat a line without the policy's probe as a failed probe (no EMA update).
  bool skip_missing_probes = false;
  // Accept lines without Pass@1 labels (traces recorded by live runs):
  // pass1_at_stop is then NaN and aggregation refuses the outcome.
  bool allow_unlabeled = false;
};

struct ExitOutcome {
  std::string question_id;
  StoppingPolicy policy;
  std::size_t stop_line = 0;  // 0-based line index
  ExitReason exit_reason = ExitReason::none;
  std::size_t reasoning_tokens = 0;
  std::size_t overhead_tokens = 0;
  std::size_t probes = 0;  // EAT probes or UA@K rollout rounds issued
  double pass1_at_stop = 0.0;
  std::size_t repeat = 0;

  std::size_t total_tokens() const { return reasoning_tokens + overhead_tokens; }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Platform-stable seed for one (question, repeat, line) rollout draw.
inline std::uint64_t draw_seed(std::uint64_t seed, std::string_view question_id,
                               std::size_t repeat, std::size_t line) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a(question_id));
  h = splitmix64(h ^ static_cast<std::uint64_t>(repeat));
  return splitmix64(h ^ static_cast<std::uint64_t>(line));
}

// Unbiased integer in [0, n) without relying on std:: distributions,
// whose output is implementation-defined.
inline std::size_t uniform_below(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

// k distinct indices out of n, partial Fisher-Yates.
inline std::vector<std::size_t> sample_indices(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_below(rng, n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

inline double mean_of(const std::vector<double>& xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value() / static_cast<double>(xs.size());
}

}  // namespace detail

/// Simulates one policy over one stored trace.
///
/// Lines are consumed in order. A line that would push the reasoning past
/// the token limit is never committed: generation would have been cut at
/// the limit, so the chain stops at the previous line. Probes and rollouts
/// are only charged on lines where the policy's signal is actually
/// consulted (not on end-of-think or budget-exhausted lines).
inline ExitOutcome simulate_policy(const ReasoningTrace& trace, const StoppingPolicy& policy,
                                   const SimulationOptions& options = {}) {
  validate(policy);
  if (trace.lines.empty()) throw InvalidArgument("simulate_policy: trace has no lines");
  const std::size_t limit = token_limit_of(policy);
  const std::size_t n_lines = trace.lines.size();

  ExitOutcome out;
  out.question_id = trace.question_id;
  out.policy = policy;
  out.repeat = options.repeat;

  std::optional<EmaState> ema;
  ProbeKey probe_key;
  if (const auto* p = std::get_if<EatVariancePolicy>(&policy)) {
    ema = EmaState::fresh(p->alpha);
    probe_key = p->probe;
    // No probe model named: same-model mode, the reasoning model probes itself.
    if (probe_key.model_id.empty()) probe_key.model_id = trace.reasoning_model_id;
  }

  auto finish = [&](std::size_t line, ExitReason reason, std::size_t tokens) {
    out.stop_line = line;
    out.exit_reason = reason;
    out.reasoning_tokens = tokens;
    const auto& l = trace.lines[line];
    out.pass1_at_stop = options.allow_unlabeled && !l.pass1 && !l.rollouts ? std::numeric_limits<double>::quiet_NaN()
                                                                      : pass1_at(trace, line);
    return out;
  };

  std::size_t cumulative = 0;
  for (std::size_t i = 0; i < n_lines; ++i) {
    const auto& line = trace.lines[i];
    if (cumulative + line.token_count > limit) {
      // A single first line longer than the whole budget still has to be
      // reported against something; charge it in full.
      if (i == 0) return finish(0, ExitReason::token_limit_reached, line.token_count);
      return finish(i - 1, ExitReason::token_limit_reached, cumulative);
    }
    cumulative += line.token_count;
    const bool end_think = trace.ended_with_end_think && i + 1 == n_lines;
    const bool consult = !end_think && cumulative < limit;

    StopDecision decision;
    if (const auto* p = std::get_if<EatVariancePolicy>(&policy)) {
      if (consult) {
        if (const auto* probe = line.probe(probe_key)) {
          *ema = ema_update(*ema, probe->value);
          out.probes += 1;
          out.overhead_tokens += options.probe_cost;
        } else if (!options.skip_missing_probes) {
          throw MissingData("trace '" + trace.question_id + "' line " + std::to_string(i) +
                            " has no probe for " + probe_key.model_id + "/" +
                            std::string(to_string(probe_key.variant)));
        }
      }
      decision = decide_eat(*ema, *p, cumulative, end_think);
    } else if (const auto* p = std::get_if<TokenBudgetPolicy>(&policy)) {
      decision = decide_token(cumulative, *p, end_think);
    } else {
      const auto& uak = std::get<UniqueAnswersPolicy>(policy);
      if (!consult) {
        decision = decide_token(cumulative, TokenBudgetPolicy{uak.token_limit}, end_think);
      } else {
        if (!line.rollouts || line.rollouts->size() < uak.k) {
          throw MissingData("trace '" + trace.question_id + "' line " + std::to_string(i) +
                            " has fewer than k=" + std::to_string(uak.k) + " rollouts");
        }
        std::mt19937_64 rng(detail::draw_seed(options.seed, trace.question_id, options.repeat, i));
        const auto picks = detail::sample_indices(rng, line.rollouts->size(), uak.k);
        std::vector<std::string> answers;
        answers.reserve(uak.k);
        for (auto idx : picks) {
          const auto& r = (*line.rollouts)[idx];
          answers.push_back(r.extracted_answer);
          if (r.token_count) {
            out.overhead_tokens += *r.token_count;
          } else if (options.mean_rollout_tokens) {
            out.overhead_tokens += *options.mean_rollout_tokens;
          } else {
            throw MissingData("trace '" + trace.question_id + "' line " + std::to_string(i) +
                              " rollout lacks token_count and no mean rollout length is set");
          }
        }
        out.probes += 1;
        decision = decide_uak(answers, uak, cumulative, end_think);
      }
    }
    if (decision.exits()) return finish(i, decision.reason, cumulative);
  }
  // The stored chain ran out without ending its thinking: generation cap.
  return finish(n_lines - 1, ExitReason::token_limit_reached, cumulative);
}

/// Mean Pass@1 at the stop point across questions.
inline double aggregate_pass1(const std::vector<ExitOutcome>& outcomes) {
  if (outcomes.empty()) throw InvalidArgument("aggregate_pass1: no outcomes");
  std::set<std::string> ids;
  std::vector<double> values;
  values.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    if (!ids.insert(o.question_id).second) {
      throw InvalidArgument("aggregate_pass1: duplicate question_id '" + o.question_id + "'");
    }
    if (std::isnan(o.pass1_at_stop)) {
      throw MissingData("aggregate_pass1: question '" + o.question_id + "' has no Pass@1 label");
    }
    values.push_back(o.pass1_at_stop);
  }
  return detail::mean_of(values);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The exception
/// from the lowest failing index is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < n; i += threads) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Simulates a policy over a corpus, `repeats` rollout draws per trace
/// (only UA@K uses more than one). Output order is trace-major.
inline std::vector<ExitOutcome> replay_corpus(const std::vector<ReasoningTrace>& traces,
                                              const StoppingPolicy& policy,
                                              const SimulationOptions& options = {},
                                              std::size_t repeats = 1, std::size_t parallelism = 1) {
  validate(policy);
  if (!std::holds_alternative<UniqueAnswersPolicy>(policy)) repeats = 1;
  repeats = std::max<std::size_t>(1, repeats);
  std::vector<ExitOutcome> out(traces.size() * repeats);
  parallel_for(traces.size(), parallelism, [&](std::size_t i) {
    for (std::size_t r = 0; r < repeats; ++r) {
      SimulationOptions opt = options;
      opt.repeat = r;
      out[i * repeats + r] = simulate_policy(traces[i], policy, opt);
    }
  });
  return out;
}

struct CurvePoint {
  double threshold = 0.0;
  double mean_total_tokens = 0.0;
  double mean_reasoning_tokens = 0.0;
  double mean_overhead_tokens = 0.0;
  double agg_pass1 = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct EfficiencyCurve {
  std::string policy_family;
  std::vector<CurvePoint> points;  // sorted by mean_total_tokens
  double auc = 0.0;

  friend bool operator==(const EfficiencyCurve&, const EfficiencyCurve&) = default;
};

/// Normalized area under agg_pass1 vs. mean_total_tokens: the trapezoid
/// integral divided by the token span, so a flat curve at c scores c.
inline double auc(const std::vector<CurvePoint>& points) {
  std::vector<CurvePoint> sorted = points;
  std::stable_sort(sorted.begin(), sorted.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.mean_total_tokens < b.mean_total_tokens;
  });
  if (sorted.size() < 2 || sorted.front().mean_total_tokens == sorted.back().mean_total_tokens) {
    throw InvalidArgument("auc: need at least two points with distinct token usage");
  }
  detail::CompensatedSum area;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double dx = sorted[i].mean_total_tokens - sorted[i - 1].mean_total_tokens;
    area.add(0.5 * dx * (sorted[i].agg_pass1 + sorted[i - 1].agg_pass1));
  }
  return area.value() / (sorted.back().mean_total_tokens - sorted.front().mean_total_tokens);
}

inline double auc(const EfficiencyCurve& curve) { return auc(curve.points); }

// A policy with its swept parameter left open.
struct PolicyFamily {
  std::string name;
  StoppingPolicy base;
};

/// Sets the swept parameter: delta (eat), token_limit (token) or
/// uniq_threshold (uak).
inline StoppingPolicy with_threshold(const StoppingPolicy& base, double threshold) {
  auto as_natural = [&](const char* what) {
    if (!(threshold >= 1.0) || threshold != std::floor(threshold)) {
      throw InvalidArgument(std::string(what) + " threshold must be a positive integer");
    }
    return static_cast<std::size_t>(threshold);
  };
  StoppingPolicy p = base;
  if (auto* e = std::get_if<EatVariancePolicy>(&p)) {
    e->delta = threshold;
  } else if (auto* t = std::get_if<TokenBudgetPolicy>(&p)) {
    t->token_limit = as_natural("token");
  } else {
    std::get<UniqueAnswersPolicy>(p).uniq_threshold = as_natural("unique-answer");
  }
  validate(p);
  return p;
}

struct SweepOptions {
  SimulationOptions simulation{};
  std::size_t repeats = 64;  // rollout draws per trace, UA@K only
  std::size_t parallelism = 1;
};

/// One curve point per threshold: mean total tokens and aggregate Pass@1
/// over the corpus. UA@K points average over `repeats` rollout draws.
inline EfficiencyCurve sweep(const std::vector<ReasoningTrace>& traces, const PolicyFamily& family,
                             const std::vector<double>& thresholds, const SweepOptions& options = {}) {
  if (thresholds.empty()) throw InvalidArgument("sweep: no thresholds");
  if (traces.empty()) throw InvalidArgument("sweep: no traces");
  {
    std::set<std::string> ids;
    for (const auto& t : traces) {
      if (!ids.insert(t.question_id).second) {
        throw InvalidArgument("sweep: duplicate question_id '" + t.question_id + "'");
      }
    }
  }
  std::vector<StoppingPolicy> policies;
  policies.reserve(thresholds.size());
  for (double th : thresholds) policies.push_back(with_threshold(family.base, th));
  const std::size_t repeats = std::holds_alternative<UniqueAnswersPolicy>(family.base)
                                  ? std::max<std::size_t>(1, options.repeats)
                                  : 1;

  struct Cell {
    double reasoning = 0.0;
    double overhead = 0.0;
    double pass1 = 0.0;
  };
  const std::size_t m = thresholds.size();
  std::vector<Cell> table(traces.size() * m);
  parallel_for(traces.size(), options.parallelism, [&](std::size_t i) {
    try {
      for (std::size_t j = 0; j < m; ++j) {
        std::vector<double> reasoning, overhead, pass1;
        for (std::size_t r = 0; r < repeats; ++r) {
          SimulationOptions opt = options.simulation;
          opt.repeat = r;
          const auto o = simulate_policy(traces[i], policies[j], opt);
          reasoning.push_back(static_cast<double>(o.reasoning_tokens));
          overhead.push_back(static_cast<double>(o.overhead_tokens));
          pass1.push_back(o.pass1_at_stop);
        }
        table[i * m + j] = {detail::mean_of(reasoning), detail::mean_of(overhead),
                            detail::mean_of(pass1)};
      }
    } catch (const MissingData& e) {
      throw MissingData("sweep over '" + traces[i].question_id + "': " + e.what());
    }
  });

  EfficiencyCurve curve;
  curve.policy_family = family.name;
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> reasoning, overhead, pass1;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const auto& c = table[i * m + j];
      reasoning.push_back(c.reasoning);
      overhead.push_back(c.overhead);
      pass1.push_back(c.pass1);
    }
    CurvePoint p;
    p.threshold = thresholds[j];
    p.mean_reasoning_tokens = detail::mean_of(reasoning);
    p.mean_overhead_tokens = detail::mean_of(overhead);
    p.mean_total_tokens = p.mean_reasoning_tokens + p.mean_overhead_tokens;
    p.agg_pass1 = detail::mean_of(pass1);
    curve.points.push_back(p);
  }
  std::stable_sort(curve.points.begin(), curve.points.end(), [](const CurvePoint& a, const CurvePoint& b) {
    if (a.mean_total_tokens != b.mean_total_tokens) return a.mean_total_tokens < b.mean_total_tokens;
    return a.threshold < b.threshold;
  });
  const bool degenerate =
      curve.points.front().mean_total_tokens == curve.points.back().mean_total_tokens;
  if (degenerate) {
    std::vector<double> ys;
    for (const auto& p : curve.points) ys.push_back(p.agg_pass1);
    curve.auc = detail::mean_of(ys);
  } else {
    curve.auc = auc(curve.points);
  }
  return curve;
}

/// Keeps traces whose final-line Pass@1 reaches `threshold`.
inline std::vector<ReasoningTrace> filter_solvable(const std::vector<ReasoningTrace>& traces,
                                                   double threshold = kDefaultSolvableThreshold) {
  std::vector<ReasoningTrace> kept;
  for (const auto& t : traces) {
    if (t.lines.empty()) throw MissingData("filter_solvable: trace '" + t.question_id + "' has no lines");
    if (pass1_at(t, t.lines.size() - 1) >= threshold) kept.push_back(t);
  }
  return kept;
}

namespace grids {

// Variance thresholds 2^-k, k = 0..39.
inline std::vector<double> delta_negative_powers() {
  std::vector<double> g;
  for (int k = 0; k <= 39; ++k) g.push_back(std::ldexp(1.0, -k));
  return g;
}

// Variance thresholds 2^k, k = 0..39, as literally printed.
inline std::vector<double> delta_positive_powers() {
  std::vector<double> g;
  for (int k = 0; k <= 39; ++k) g.push_back(std::ldexp(1.0, k));
  return g;
}

// Token limits 250 * {1..40}.
inline std::vector<double> token_limits() {
  std::vector<double> g;
  for (int i = 1; i <= 40; ++i) g.push_back(250.0 * i);
  return g;
}

inline std::vector<std::size_t> rollout_counts() { return {8, 16, 32}; }
inline std::vector<double> unique_answer_thresholds() { return {1, 2, 3}; }

}  // namespace grids

}  // namespace eatstop
