#include <gtest/gtest.h>

#include "eatstop/answers.hpp"

using namespace eatstop;

TEST(Answers, LastBoxedSpan) {
  EXPECT_EQ(normalize_answer("\\boxed{42}"), "42");
  EXPECT_EQ(normalize_answer("First \\boxed{3}, then, correcting, \\boxed{7}."), "7");
  EXPECT_EQ(normalize_answer("\\boxed{\\frac{1}{2}}"), "\\frac{1}{2}");
  EXPECT_EQ(normalize_answer("\\boxed{ x + 1 }"), "x + 1");
}

TEST(Answers, FallbackIsTrimmedText) {
  EXPECT_EQ(normalize_answer("  The answer is 5.\n"), "The answer is 5.");
  EXPECT_EQ(normalize_answer("\\boxed{unterminated"), "\\boxed{unterminated");
  EXPECT_EQ(normalize_answer(""), "");
}

TEST(Answers, BoxedContent) {
  EXPECT_FALSE(last_boxed_content("no box").has_value());
  EXPECT_EQ(last_boxed_content("\\boxed{}").value(), "");
  EXPECT_EQ(last_boxed_content("\\boxed{a{b}c} tail").value(), "a{b}c");
}
