#pragma once

// Next-token entropy primitives and probe-context rendering.
//
// All entropies are in nats. Probe contexts are rendered at the text level
// so a proxy model with a different tokenizer can consume them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eatstop/error.hpp"

namespace eatstop {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kParagraphSeparator = "\n\n";
inline constexpr std::string_view kDefaultProbePrefix = "Final answer: ";

inline constexpr double kNormalizationTolerance = 1e-9;
// Endpoints round their logprobs, so top-K residual mass gets a looser slack.
inline constexpr double kResidualTolerance = 1e-6;

namespace detail {

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

inline double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace detail

/// Shannon entropy (nats) of a full next-token probability vector.
///
/// Entries must be finite and non-negative and sum to 1 within 1e-9.
/// Zero entries contribute nothing (0 ln 0 = 0).
inline double entropy(std::span<const double> probs) {
  if (probs.empty()) throw InvalidArgument("entropy: empty distribution");
  detail::CompensatedSum total;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidArgument("entropy: entry " + std::to_string(i) +
                            " is negative or non-finite");
    }
    total.add(p);
  }
  if (std::fabs(total.value() - 1.0) > kNormalizationTolerance) {
    throw InvalidArgument("entropy: probabilities sum to " +
                          std::to_string(total.value()) + ", expected 1");
  }
  detail::CompensatedSum h;
  for (double p : probs) h.add(-detail::plogp(p));
  return std::max(0.0, h.value());
}

struct TopKEntry {
  std::string token;
  double logprob = 0.0;
};

// A top-K fragment of a next-token distribution over `vocab_size` tokens.
struct TopKDistribution {
  std::vector<TopKEntry> entries;
  std::size_t vocab_size = 0;
};

struct EntropyBounds {
  double lower = 0.0;
  double upper = 0.0;
  double residual_mass = 0.0;

  double gap() const { return upper - lower; }
};

/// Interval containing the full-vocabulary entropy given only the top-K
/// log-probabilities.
///
/// The lower end lumps the unseen residual mass r into one pseudo-token;
/// the upper end spreads r uniformly across the vocab_size - K unseen ids.
inline EntropyBounds entropy_bounds_from_topk(const TopKDistribution& dist) {
  const auto k = dist.entries.size();
  if (k == 0) throw InvalidArgument("entropy_bounds_from_topk: no entries");
  if (dist.vocab_size < k) {
    throw InvalidArgument("entropy_bounds_from_topk: more entries than vocab_size");
  }
  std::vector<double> probs;
  probs.reserve(k);
  for (const auto& e : dist.entries) {
    if (std::isnan(e.logprob) || e.logprob > kResidualTolerance) {
      throw InvalidArgument("entropy_bounds_from_topk: invalid logprob for token '" +
                            e.token + "'");
    }
    probs.push_back(std::exp(std::min(e.logprob, 0.0)));
  }
  std::sort(probs.begin(), probs.end(), std::greater<>());

  detail::CompensatedSum mass;
  detail::CompensatedSum observed;
  for (double p : probs) {
    mass.add(p);
    observed.add(-detail::plogp(p));
  }
  double residual = 1.0 - mass.value();
  if (residual < -kResidualTolerance) {
    throw InvalidArgument("entropy_bounds_from_topk: observed mass exceeds 1 by " +
                          std::to_string(-residual));
  }
  if (k == dist.vocab_size && residual > kResidualTolerance) {
    throw InvalidArgument(
        "entropy_bounds_from_topk: entries cover the vocabulary but leave residual mass " +
        std::to_string(residual));
  }
  residual = std::clamp(residual, 0.0, 1.0);

  EntropyBounds out;
  out.residual_mass = residual;
  out.lower = std::max(0.0, observed.value() - detail::plogp(residual));
  out.upper = out.lower;
  const auto unseen = dist.vocab_size - k;
  if (residual > 0.0 && unseen > 0) {
    out.upper = out.lower + residual * std::log(static_cast<double>(unseen));
  }
  return out;
}

enum class ProbeVariant { eat, eat_prefix, entropy_after_newline };

inline std::string_view to_string(ProbeVariant v) {
  switch (v) {
    case ProbeVariant::eat: return "eat";
    case ProbeVariant::eat_prefix: return "eat_prefix";
    case ProbeVariant::entropy_after_newline: return "entropy_after_newline";
  }
  return "eat";
}

inline ProbeVariant parse_probe_variant(std::string_view s) {
  if (s == "eat") return ProbeVariant::eat;
  if (s == "eat_prefix") return ProbeVariant::eat_prefix;
  if (s == "entropy_after_newline") return ProbeVariant::entropy_after_newline;
  throw InvalidArgument("unknown probe variant '" + std::string(s) + "'");
}

struct ProbeContext {
  std::string question;
  std::vector<std::string> reasoning_lines;
  ProbeVariant variant = ProbeVariant::eat;
  std::string prefix = std::string(kDefaultProbePrefix);  // eat_prefix only
  std::string think_open = std::string(kThinkOpen);
  std::string think_close = std::string(kThinkClose);
};

/// Renders the exact text a probe request is issued against.
///
///   eat                    Q <think> lines </think> \n
///   eat_prefix             Q <think> lines </think> \n prefix
///   entropy_after_newline  Q <think> lines \n\n
///
/// Lines are concatenated as stored; an empty line list renders the
/// no-reasoning baseline.
inline std::string render_probe(const ProbeContext& ctx) {
  if (ctx.variant == ProbeVariant::eat_prefix && ctx.prefix.empty()) {
    throw InvalidArgument("render_probe: eat_prefix requires a non-empty prefix");
  }
  std::size_t size = ctx.question.size() + ctx.think_open.size() +
                     ctx.think_close.size() + ctx.prefix.size() + 2;
  for (std::size_t i = 0; i < ctx.reasoning_lines.size(); ++i) {
    if (ctx.reasoning_lines[i].find(ctx.think_close) != std::string::npos) {
      throw InvalidArgument("render_probe: line " + std::to_string(i) +
                            " contains the end-of-think marker");
    }
    size += ctx.reasoning_lines[i].size();
  }
  std::string out;
  out.reserve(size);
  out += ctx.question;
  out += ctx.think_open;
  for (const auto& line : ctx.reasoning_lines) out += line;
  switch (ctx.variant) {
    case ProbeVariant::eat:
      out += ctx.think_close;
      out += '\n';
      break;
    case ProbeVariant::eat_prefix:
      out += ctx.think_close;
      out += '\n';
      out += ctx.prefix;
      break;
    case ProbeVariant::entropy_after_newline:
      out += kParagraphSeparator;
      break;
  }
  return out;
}

/// Reduction in next-token entropy attributable to the reasoning so far.
/// Negative when reasoning increased the uncertainty.
inline double information_gain(double baseline_entropy, double eat) {
  if (!std::isfinite(baseline_entropy) || baseline_entropy < 0.0 ||
      !std::isfinite(eat) || eat < 0.0) {
    throw InvalidArgument("information_gain: entropies must be finite and non-negative");
  }
  return baseline_entropy - eat;
}

// Identifies one probe stream: which model computed it and on which context.
struct ProbeKey {
  std::string model_id;
  ProbeVariant variant = ProbeVariant::eat_prefix;

  friend bool operator==(const ProbeKey&, const ProbeKey&) = default;
  friend auto operator<=>(const ProbeKey&, const ProbeKey&) = default;
};

enum class Exactness { exact, bounded };

struct EntropySample {
  double value = 0.0;  // the value decisions consume
  std::size_t line_index = 0;
  std::size_t cumulative_reasoning_tokens = 0;
  std::string probe_model_id;
  ProbeVariant variant = ProbeVariant::eat;
  Exactness exactness = Exactness::exact;
  double lower = 0.0;
  double upper = 0.0;

  static EntropySample exact_value(double v) {
    EntropySample s;
    s.value = s.lower = s.upper = v;
    return s;
  }

  // Decision value is the upper bound: never stop on an underestimate.
  static EntropySample from_bounds(const EntropyBounds& b) {
    EntropySample s;
    s.exactness = Exactness::bounded;
    s.lower = b.lower;
    s.upper = b.upper;
    s.value = b.upper;
    return s;
  }

  bool valid() const {
    if (!std::isfinite(value) || value < 0.0) return false;
    if (exactness == Exactness::bounded) {
      return std::isfinite(lower) && std::isfinite(upper) && lower <= value &&
             value <= upper;
    }
    return true;
  }
};

}  // namespace eatstop
