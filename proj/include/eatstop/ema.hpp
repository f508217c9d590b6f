#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "eatstop/error.hpp"

namespace eatstop {

inline constexpr double kDefaultAlpha = 0.2;

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

// Exponential moving estimate of the mean and variance of a scalar stream.
struct EmaState {
  double mean = 0.0;
  double var = 0.0;
  std::size_t n = 0;  // updates applied
  double alpha = kDefaultAlpha;

  static EmaState fresh(double alpha) {
    check_alpha(alpha);
    EmaState s;
    s.alpha = alpha;
    return s;
  }

  friend bool operator==(const EmaState&, const EmaState&) = default;
};

/// One EMA step. The variance term is measured against the freshly
/// updated mean, so a stream that sits at the current mean is a fixed point.
inline EmaState ema_update(const EmaState& state, double x) {
  if (!std::isfinite(x)) throw InvalidArgument("ema_update: non-finite sample");
  check_alpha(state.alpha);
  EmaState next = state;
  const double a = state.alpha;
  next.mean = (1.0 - a) * state.mean + a * x;
  const double d = x - next.mean;
  next.var = (1.0 - a) * state.var + a * d * d;
  next.n = state.n + 1;
  return next;
}

/// Number of EMA updates before a variance-triggered exit is allowed:
/// ceil(4 / alpha). The small slack keeps 4/0.2 from rounding up to 21.
inline std::size_t warmup_updates(double alpha) {
  check_alpha(alpha);
  return static_cast<std::size_t>(std::ceil(4.0 / alpha - 1e-9));
}

}  // namespace eatstop
