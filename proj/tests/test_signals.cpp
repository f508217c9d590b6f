#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "eatstop/signals.hpp"
#include "support/oracles.hpp"

using namespace eatstop;

namespace {

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += (x = e(rng));
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

TEST(Entropy, MatchesDirectSummation) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_distribution(rng, 2 + rng() % 500);
    EXPECT_NEAR(entropy(p), oracle::entropy(p), 1e-12);
  }
}

TEST(Entropy, UniformAndOneHot) {
  for (std::size_t n : {1u, 2u, 7u, 1000u, 50000u}) {
    std::vector<double> u(n, 1.0 / static_cast<double>(n));
    EXPECT_NEAR(entropy(u), std::log(static_cast<double>(n)), 1e-12);
  }
  std::vector<double> one_hot(100, 0.0);
  one_hot[42] = 1.0;
  EXPECT_EQ(entropy(one_hot), 0.0);
  EXPECT_EQ(entropy(std::vector<double>{1.0}), 0.0);
}

TEST(Entropy, TwoPoint) {
  EXPECT_NEAR(entropy(std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy(std::vector<double>{0.25, 0.75}),
              -(0.25 * std::log(0.25) + 0.75 * std::log(0.75)), 1e-15);
}

TEST(Entropy, RejectsInvalidInput) {
  EXPECT_THROW(entropy(std::vector<double>{}), InvalidArgument);
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.4}), InvalidArgument);
  EXPECT_THROW(entropy(std::vector<double>{1.5, -0.5}), InvalidArgument);
  EXPECT_THROW(entropy(std::vector<double>{NAN, 1.0}), InvalidArgument);
  EXPECT_THROW(entropy(std::vector<double>{INFINITY}), InvalidArgument);
}

TEST(EntropyBounds, HalfQuarterOverFourTokens) {
  // Observed 0.5 and 0.25 leave 0.25 for two unseen tokens.
  const auto b = entropy_bounds_from_topk({{{"a", std::log(0.5)}, {"b", std::log(0.25)}}, 4});
  const auto [lo, hi] = oracle::topk_entropy_range({0.5, 0.25}, 4);
  EXPECT_NEAR(b.residual_mass, 0.25, 1e-15);
  EXPECT_NEAR(b.lower, lo, 1e-12);
  EXPECT_NEAR(b.upper, hi, 1e-12);
  // All residual on one token gives {.5, .25, .25}.
  EXPECT_NEAR(b.lower, 1.5 * std::log(2.0), 1e-12);
  // Brute force over tail splits {x, 0.25 - x}.
  double min_h = INFINITY, max_h = -INFINITY;
  for (int i = 0; i <= 100000; ++i) {
    const double x = 0.25 * i / 100000.0;
    const double h = entropy(std::vector<double>{0.5, 0.25, x, 0.25 - x});
    min_h = std::min(min_h, h);
    max_h = std::max(max_h, h);
  }
  EXPECT_NEAR(b.lower, min_h, 1e-12);
  EXPECT_NEAR(b.upper, max_h, 1e-9);
  // Spread evenly the full distribution is {.5, .25, .125, .125}.
  EXPECT_NEAR(b.upper, entropy(std::vector<double>{0.5, 0.25, 0.125, 0.125}), 1e-12);
}

TEST(EntropyBounds, CollapsesWithoutResidual) {
  const auto b = entropy_bounds_from_topk({{{"a", std::log(0.5)}, {"b", std::log(0.5)}}, 50000});
  EXPECT_NEAR(b.lower, std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(b.upper, b.lower);
  EXPECT_EQ(b.gap(), 0.0);
}

TEST(EntropyBounds, ContainsTrueEntropy) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    auto p = random_distribution(rng, 2 + rng() % 300);
    std::sort(p.begin(), p.end(), std::greater<>());
    const std::size_t k = 1 + rng() % p.size();
    TopKDistribution d{{}, p.size()};
    for (std::size_t j = 0; j < k; ++j) d.entries.push_back({"t" + std::to_string(j), std::log(p[j])});
    const auto b = entropy_bounds_from_topk(d);
    const double h = oracle::entropy(p);
    EXPECT_LE(b.lower, h + 1e-12);
    EXPECT_GE(b.upper, h - 1e-12);
  }
}

TEST(EntropyBounds, RejectsInconsistentInput) {
  EXPECT_THROW(entropy_bounds_from_topk({{}, 10}), InvalidArgument);
  EXPECT_THROW(entropy_bounds_from_topk({{{"a", std::log(0.6)}, {"b", std::log(0.6)}}, 10}), InvalidArgument);
  EXPECT_THROW(entropy_bounds_from_topk({{{"a", 0.5}}, 10}), InvalidArgument);
  EXPECT_THROW(entropy_bounds_from_topk({{{"a", std::log(0.5)}, {"b", std::log(0.2)}}, 1}), InvalidArgument);
  EXPECT_THROW(entropy_bounds_from_topk({{{"a", std::log(0.5)}, {"b", std::log(0.2)}}, 2}), InvalidArgument);
}

TEST(RenderProbe, Variants) {
  ProbeContext ctx;
  ctx.question = "Q?";
  ctx.reasoning_lines = {"a\n\n", "b\n\n"};
  ctx.variant = ProbeVariant::eat;
  EXPECT_EQ(render_probe(ctx), "Q?<think>a\n\nb\n\n</think>\n");
  ctx.variant = ProbeVariant::eat_prefix;
  EXPECT_EQ(render_probe(ctx), "Q?<think>a\n\nb\n\n</think>\nFinal answer: ");
  ctx.prefix = "Answer: ";
  EXPECT_EQ(render_probe(ctx), "Q?<think>a\n\nb\n\n</think>\nAnswer: ");
  ctx.variant = ProbeVariant::entropy_after_newline;
  EXPECT_EQ(render_probe(ctx), "Q?<think>a\n\nb\n\n\n\n");
}

TEST(RenderProbe, SingleLineTemplates) {
  ProbeContext ctx;
  ctx.question = "Q";
  ctx.reasoning_lines = {"r1"};
  ctx.variant = ProbeVariant::eat;
  EXPECT_EQ(render_probe(ctx), "Q<think>r1</think>\n");
  ctx.variant = ProbeVariant::eat_prefix;
  ctx.prefix = "The final answer: ";
  EXPECT_EQ(render_probe(ctx), "Q<think>r1</think>\nThe final answer: ");
  ctx.variant = ProbeVariant::entropy_after_newline;
  EXPECT_EQ(render_probe(ctx), "Q<think>r1\n\n");
}

TEST(RenderProbe, EmptyReasoningIsTheBaseline) {
  ProbeContext ctx;
  ctx.question = "Q";
  EXPECT_EQ(render_probe(ctx), "Q<think></think>\n");
}

TEST(RenderProbe, Rejects) {
  ProbeContext ctx;
  ctx.question = "Q";
  ctx.reasoning_lines = {"done</think>"};
  EXPECT_THROW(render_probe(ctx), InvalidArgument);
  ctx.reasoning_lines = {"fine"};
  ctx.variant = ProbeVariant::eat_prefix;
  ctx.prefix.clear();
  EXPECT_THROW(render_probe(ctx), InvalidArgument);
}

TEST(RenderProbe, CustomMarkers) {
  ProbeContext ctx;
  ctx.question = "Q";
  ctx.reasoning_lines = {"x"};
  ctx.think_open = "<reason>";
  ctx.think_close = "</reason>";
  EXPECT_EQ(render_probe(ctx), "Q<reason>x</reason>\n");
}

TEST(InformationGain, Difference) {
  EXPECT_DOUBLE_EQ(information_gain(2.0, 0.5), 1.5);
  EXPECT_DOUBLE_EQ(information_gain(0.5, 2.0), -1.5);
  EXPECT_THROW(information_gain(-1.0, 0.0), InvalidArgument);
  EXPECT_THROW(information_gain(1.0, NAN), InvalidArgument);
}

TEST(ProbeVariant, RoundTrip) {
  for (auto v : {ProbeVariant::eat, ProbeVariant::eat_prefix, ProbeVariant::entropy_after_newline}) {
    EXPECT_EQ(parse_probe_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_probe_variant("eat-prefix"), InvalidArgument);
}

TEST(EntropySample, FromBoundsUsesUpper) {
  EntropyBounds b{0.5, 0.9, 0.1};
  const auto s = EntropySample::from_bounds(b);
  EXPECT_EQ(s.exactness, Exactness::bounded);
  EXPECT_DOUBLE_EQ(s.value, 0.9);
  EXPECT_DOUBLE_EQ(s.lower, 0.5);
  EXPECT_TRUE(s.valid());
  EXPECT_TRUE(EntropySample::exact_value(0.3).valid());
}
