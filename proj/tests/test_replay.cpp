#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "eatstop/replay.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace eatstop;

namespace {

ReasoningTrace trace_from_stream(const std::vector<double>& xs, std::size_t tokens_per_line, bool ended) {
  ReasoningTrace t;
  t.question_id = "s";
  t.reasoning_model_id = synth::kKey.model_id;
  t.ended_with_end_think = ended;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    LineRecord l;
    l.index = i;
    l.text = "x\n\n";
    l.token_count = tokens_per_line;
    l.probes.emplace(synth::kKey, ProbeValue{xs[i]});
    l.pass1 = static_cast<double>(i) / static_cast<double>(xs.size());
    t.lines.push_back(l);
  }
  return t;
}

EatVariancePolicy eat_policy(double delta, double alpha = 0.2, std::size_t limit = kDefaultTokenLimit) {
  return {delta, alpha, limit, synth::kKey};
}

}  // namespace

TEST(Simulate, BudgetNeverBinds) {
  const auto t = trace_from_stream(std::vector<double>(30, 1.0), 10, true);
  const auto o = simulate_policy(t, TokenBudgetPolicy{100000});
  EXPECT_EQ(o.stop_line, 29u);
  EXPECT_EQ(o.exit_reason, ExitReason::end_think_emitted);
  EXPECT_EQ(o.reasoning_tokens, 300u);
  EXPECT_EQ(o.overhead_tokens, 0u);
}

TEST(Simulate, TraceRunsOutWithoutEndThink) {
  const auto t = trace_from_stream(std::vector<double>(30, 1.0), 10, false);
  const auto o = simulate_policy(t, TokenBudgetPolicy{100000});
  EXPECT_EQ(o.stop_line, 29u);
  EXPECT_EQ(o.exit_reason, ExitReason::token_limit_reached);
}

TEST(Simulate, BudgetStopsBeforeAnOverflowingLine) {
  const auto t = trace_from_stream(std::vector<double>(30, 1.0), 10, true);
  auto o = simulate_policy(t, TokenBudgetPolicy{95});
  EXPECT_EQ(o.stop_line, 8u);
  EXPECT_EQ(o.reasoning_tokens, 90u);
  EXPECT_EQ(o.exit_reason, ExitReason::token_limit_reached);
  o = simulate_policy(t, TokenBudgetPolicy{100});
  EXPECT_EQ(o.stop_line, 9u);
  EXPECT_EQ(o.reasoning_tokens, 100u);
  o = simulate_policy(t, TokenBudgetPolicy{5});
  EXPECT_EQ(o.stop_line, 0u);
  EXPECT_EQ(o.reasoning_tokens, 10u);
}

TEST(Simulate, HighDeltaStopsAtWarmup) {
  std::mt19937_64 rng(4);
  for (double alpha : {0.1, 0.2, 0.5}) {
    const auto xs = synth::eat_stream(rng, 200);
    double max_var = 0.0;
    for (const auto& s : oracle::ema_path(xs, alpha)) max_var = std::max(max_var, s.var);
    const auto o = simulate_policy(trace_from_stream(xs, 1, true), eat_policy(max_var * 2 + 1e-9, alpha));
    EXPECT_EQ(o.stop_line, oracle::warmup(alpha) - 1);
    EXPECT_EQ(o.exit_reason, ExitReason::variance_below_threshold);
    EXPECT_EQ(o.probes, oracle::warmup(alpha));
    EXPECT_EQ(o.overhead_tokens, oracle::warmup(alpha));
  }
}

TEST(Simulate, StepThenPlateau) {
  std::vector<double> xs(60, 0.4);
  std::fill(xs.begin(), xs.begin() + 10, 2.0);
  const auto path = oracle::ema_path(xs, 0.2);
  // Any delta strictly between a plateau variance and the transition peak.
  const double delta = 1e-3;
  const auto expected = oracle::first_variance_exit(xs, 0.2, delta);
  ASSERT_TRUE(expected.has_value());
  EXPECT_GT(*expected, 19u);
  EXPECT_GT(path[12].var, delta);
  const auto o = simulate_policy(trace_from_stream(xs, 7, true), eat_policy(delta));
  EXPECT_EQ(o.stop_line, *expected);
  EXPECT_EQ(o.reasoning_tokens, 7 * (*expected + 1));
  EXPECT_DOUBLE_EQ(o.pass1_at_stop, static_cast<double>(*expected) / 60.0);
}

TEST(Simulate, ProbeCostAndNoChargeOnEndThink) {
  const auto t = trace_from_stream(std::vector<double>(5, 1.0), 3, true);
  SimulationOptions opt;
  opt.probe_cost = 4;
  const auto o = simulate_policy(t, eat_policy(1e-12), opt);
  EXPECT_EQ(o.exit_reason, ExitReason::end_think_emitted);
  EXPECT_EQ(o.probes, 4u);
  EXPECT_EQ(o.overhead_tokens, 16u);
}

TEST(Simulate, SameModelFallbackAndMissingProbes) {
  auto t = trace_from_stream(std::vector<double>(25, 1.0), 3, true);
  EatVariancePolicy same{1.0, 0.2, 10000, {"", ProbeVariant::eat_prefix}};
  EXPECT_EQ(simulate_policy(t, same).stop_line, 19u);
  EatVariancePolicy other{1.0, 0.2, 10000, {"nobody", ProbeVariant::eat_prefix}};
  EXPECT_THROW(simulate_policy(t, other), MissingData);
  SimulationOptions skip;
  skip.skip_missing_probes = true;
  const auto o = simulate_policy(t, other, skip);
  EXPECT_EQ(o.probes, 0u);
  EXPECT_EQ(o.exit_reason, ExitReason::end_think_emitted);
}

TEST(Simulate, UakOverheadIsTheSumOfDrawnRollouts) {
  std::mt19937_64 rng(8);
  synth::TraceShape shape;
  shape.rollouts = 12;
  shape.answer_pool = 3;
  for (int i = 0; i < 50; ++i) {
    const auto t = synth::random_trace(rng, "u" + std::to_string(i), shape);
    UniqueAnswersPolicy p{12, 1 + rng() % 2, 5000};
    const auto o = simulate_policy(t, p);
    // Taking all rollouts the draw is a permutation, so the hand sum is exact.
    std::size_t expect = 0, probed = 0, cumulative = 0;
    for (std::size_t j = 0; j <= o.stop_line; ++j) {
      cumulative += t.lines[j].token_count;
      const bool end = t.ended_with_end_think && j + 1 == t.lines.size();
      if (end || cumulative >= p.token_limit) continue;
      ++probed;
      for (const auto& r : *t.lines[j].rollouts) expect += *r.token_count;
    }
    EXPECT_EQ(o.overhead_tokens, expect) << t.question_id;
    EXPECT_EQ(o.probes, probed) << t.question_id;
  }
}

TEST(Simulate, UakSubsamplingIsSeeded) {
  std::mt19937_64 rng(12);
  synth::TraceShape shape;
  shape.rollouts = 32;
  const auto t = synth::random_trace(rng, "seeded", shape);
  UniqueAnswersPolicy p{8, 2, 10000};
  SimulationOptions a;
  a.seed = 5;
  const auto o1 = simulate_policy(t, p, a);
  const auto o2 = simulate_policy(t, p, a);
  EXPECT_EQ(o1.stop_line, o2.stop_line);
  EXPECT_EQ(o1.overhead_tokens, o2.overhead_tokens);
  bool differs = false;
  for (std::size_t r = 1; r < 20 && !differs; ++r) {
    SimulationOptions b = a;
    b.repeat = r;
    differs = simulate_policy(t, p, b).overhead_tokens != o1.overhead_tokens;
  }
  EXPECT_TRUE(differs);
}

TEST(Simulate, UakMissingData) {
  std::mt19937_64 rng(1);
  synth::TraceShape shape;
  shape.rollouts = 4;
  auto t = synth::random_trace(rng, "m", shape);
  t.ended_with_end_think = false;
  EXPECT_THROW(simulate_policy(t, UniqueAnswersPolicy{8, 1, 100000}), MissingData);
  for (auto& l : t.lines) {
    for (auto& r : *l.rollouts) r.token_count.reset();
  }
  EXPECT_THROW(simulate_policy(t, UniqueAnswersPolicy{4, 1, 100000}), MissingData);
  SimulationOptions opt;
  opt.mean_rollout_tokens = 100;
  const auto o = simulate_policy(t, UniqueAnswersPolicy{4, 1, 100000}, opt);
  EXPECT_EQ(o.overhead_tokens, 400 * o.probes);
}

TEST(Simulate, SampleIndicesAreAPartialPermutation) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng() % 40;
    const std::size_t k = 1 + rng() % n;
    auto idx = detail::sample_indices(rng, n, k);
    ASSERT_EQ(idx.size(), k);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::unique(idx.begin(), idx.end()), idx.end());
    EXPECT_LT(idx.back(), n);
  }
}

TEST(Aggregate, MeanOfPass1) {
  ExitOutcome a, b;
  a.question_id = "a";
  a.pass1_at_stop = 1.0;
  b.question_id = "b";
  b.pass1_at_stop = 0.0;
  EXPECT_DOUBLE_EQ(aggregate_pass1({a, b}), 0.5);
  b.pass1_at_stop = 1.0;
  EXPECT_DOUBLE_EQ(aggregate_pass1({a, b}), 1.0);
  b.question_id = "a";
  EXPECT_THROW(aggregate_pass1({a, b}), InvalidArgument);
  EXPECT_THROW(aggregate_pass1({}), InvalidArgument);

  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    std::vector<ExitOutcome> os(1 + rng() % 100);
    std::vector<double> ys;
    for (std::size_t j = 0; j < os.size(); ++j) {
      os[j].question_id = std::to_string(j);
      os[j].pass1_at_stop = synth::unit(rng);
      ys.push_back(os[j].pass1_at_stop);
    }
    EXPECT_NEAR(aggregate_pass1(os), oracle::mean(ys), 1e-12);
  }
}

TEST(Auc, HandExampleAndFlat) {
  std::vector<CurvePoint> pts(2);
  pts[0].mean_total_tokens = 1000;
  pts[0].agg_pass1 = 0.5;
  pts[1].mean_total_tokens = 2000;
  pts[1].agg_pass1 = 1.0;
  EXPECT_DOUBLE_EQ(auc(pts), 0.75);
  for (auto& p : pts) p.agg_pass1 = 0.3;
  EXPECT_DOUBLE_EQ(auc(pts), 0.3);
  pts[1].mean_total_tokens = 1000;
  EXPECT_THROW(auc(pts), InvalidArgument);
  pts.resize(1);
  EXPECT_THROW(auc(pts), InvalidArgument);
}

TEST(Auc, MatchesTrapezoidOracle) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 100; ++i) {
    std::vector<CurvePoint> pts(2 + rng() % 40);
    std::vector<std::pair<double, double>> raw;
    for (auto& p : pts) {
      p.mean_total_tokens = 100.0 + 10000.0 * synth::unit(rng);
      p.agg_pass1 = synth::unit(rng);
      raw.emplace_back(p.mean_total_tokens, p.agg_pass1);
    }
    EXPECT_NEAR(auc(pts), oracle::normalized_trapezoid(raw), 1e-12);
  }
}

TEST(Sweep, PointsMatchStandaloneRuns) {
  std::mt19937_64 rng(31);
  std::vector<ReasoningTrace> traces;
  for (int i = 0; i < 20; ++i) traces.push_back(synth::random_trace(rng, "t" + std::to_string(i)));
  const auto grid = grids::delta_negative_powers();
  const auto curve = sweep(traces, {"eat", eat_policy(1.0)}, grid);
  ASSERT_EQ(curve.points.size(), grid.size());
  for (const auto& p : curve.points) {
    std::vector<double> tok, pass;
    for (const auto& t : traces) {
      const auto o = simulate_policy(t, eat_policy(p.threshold));
      tok.push_back(static_cast<double>(o.total_tokens()));
      pass.push_back(o.pass1_at_stop);
    }
    EXPECT_NEAR(p.mean_total_tokens, oracle::mean(tok), 1e-9);
    EXPECT_NEAR(p.agg_pass1, oracle::mean(pass), 1e-12);
  }
  EXPECT_TRUE(std::is_sorted(curve.points.begin(), curve.points.end(), [](const auto& a, const auto& b) {
    return a.mean_total_tokens < b.mean_total_tokens;
  }));
}

TEST(Sweep, TokenGridMonotone) {
  std::mt19937_64 rng(32);
  std::vector<ReasoningTrace> traces;
  for (int i = 0; i < 20; ++i) traces.push_back(synth::random_trace(rng, "t" + std::to_string(i)));
  const auto curve = sweep(traces, {"token", TokenBudgetPolicy{}}, grids::token_limits());
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_LE(curve.points[i - 1].threshold, curve.points[i].threshold);
  }
}

TEST(Sweep, DegenerateCurve) {
  const auto t = trace_from_stream(std::vector<double>(10, 1.0), 5, true);
  const auto curve = sweep({t}, {"token", TokenBudgetPolicy{}}, {1000, 2000, 3000});
  for (const auto& p : curve.points) EXPECT_EQ(p.mean_total_tokens, 50.0);
  EXPECT_DOUBLE_EQ(curve.auc, pass1_at(t, 9));
}

TEST(Sweep, Errors) {
  const auto t = trace_from_stream(std::vector<double>(10, 1.0), 5, true);
  EXPECT_THROW(sweep({t}, {"token", TokenBudgetPolicy{}}, {}), InvalidArgument);
  EXPECT_THROW(sweep({}, {"token", TokenBudgetPolicy{}}, {10}), InvalidArgument);
  EXPECT_THROW(sweep({t, t}, {"token", TokenBudgetPolicy{}}, {10}), InvalidArgument);
  EXPECT_THROW(sweep({t}, {"token", TokenBudgetPolicy{}}, {2.5}), InvalidArgument);
  auto missing = t;
  missing.lines[3].probes.clear();
  try {
    sweep({missing}, {"eat", eat_policy(1.0)}, {1e-9});
    FAIL() << "expected MissingData";
  } catch (const MissingData& e) {
    EXPECT_NE(std::string(e.what()).find("'s'"), std::string::npos);
  }
}

TEST(Sweep, ParallelEqualsSerial) {
  std::mt19937_64 rng(40);
  std::vector<ReasoningTrace> traces;
  synth::TraceShape shape;
  shape.rollouts = 16;
  for (int i = 0; i < 12; ++i) traces.push_back(synth::random_trace(rng, "p" + std::to_string(i), shape));
  SweepOptions serial;
  serial.repeats = 8;
  SweepOptions parallel = serial;
  parallel.parallelism = 4;
  const UniqueAnswersPolicy base{8, 1, 10000};
  const auto a = sweep(traces, {"uak", base}, {1, 2, 3}, serial);
  const auto b = sweep(traces, {"uak", base}, {1, 2, 3}, parallel);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].mean_total_tokens, b.points[i].mean_total_tokens);
    EXPECT_EQ(a.points[i].agg_pass1, b.points[i].agg_pass1);
  }
  EXPECT_EQ(a.auc, b.auc);
}

TEST(Solvable, Threshold) {
  auto make = [](double final_pass1, const std::string& id) {
    auto t = trace_from_stream(std::vector<double>(3, 1.0), 1, true);
    t.question_id = id;
    t.lines.back().pass1 = final_pass1;
    return t;
  };
  const std::vector<ReasoningTrace> corpus{make(0.85, "a"), make(0.75, "b"), make(0.8, "c"), make(0.0, "d")};
  const auto kept = filter_solvable(corpus, 0.8);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].question_id, "a");
  EXPECT_EQ(kept[1].question_id, "c");
  EXPECT_EQ(filter_solvable(corpus, 0.0).size(), 4u);
  EXPECT_EQ(kDefaultSolvableThreshold, 0.8);
  auto bad = make(1.0, "e");
  bad.lines.back().pass1.reset();
  EXPECT_THROW(filter_solvable({bad}), MissingData);
}

TEST(Grids, Presets) {
  const auto neg = grids::delta_negative_powers();
  ASSERT_EQ(neg.size(), 40u);
  EXPECT_EQ(neg.front(), 1.0);
  EXPECT_EQ(neg.back(), std::ldexp(1.0, -39));
  const auto pos = grids::delta_positive_powers();
  ASSERT_EQ(pos.size(), 40u);
  EXPECT_EQ(pos.back(), std::ldexp(1.0, 39));
  const auto tok = grids::token_limits();
  ASSERT_EQ(tok.size(), 40u);
  EXPECT_EQ(tok.front(), 250.0);
  EXPECT_EQ(tok.back(), 10000.0);
  EXPECT_EQ(grids::rollout_counts(), (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(grids::unique_answer_thresholds(), (std::vector<double>{1, 2, 3}));
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  try {
    parallel_for(100, 8, [](std::size_t i) {
      if (i == 37 || i == 80) throw InvalidArgument("fail " + std::to_string(i));
    });
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "fail 37");
  }
}
