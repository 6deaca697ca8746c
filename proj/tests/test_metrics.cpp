#include <gtest/gtest.h>

#include <cmath>

#include "maxplus/metrics.hpp"
#include "maxplus/rng.hpp"

using namespace maxplus;

namespace {

// Exhaustive pair count; ties worth one half.
std::optional<double> brute_roc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  if (pairs == 0) return std::nullopt;
  return num / pairs;
}

// Mean over positives of the precision among everything scored at least as high.
std::optional<double> brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double sum = 0, pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    pos += 1;
    double above = 0, hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        above += 1;
        hits += y[j];
      }
    sum += hits / above;
  }
  if (pos == 0) return std::nullopt;
  return sum / pos;
}

}  // namespace

TEST(RocAuc, Examples) {
  EXPECT_EQ(*roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
  EXPECT_EQ(*roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(*roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3, 0.3}, std::vector<int>{0, 1, 1, 0, 1}), 0.5);
}

TEST(RocAuc, SingleClassIsUndefined) {
  EXPECT_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
  EXPECT_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}).has_value());
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{0, 1}), ContractViolation);
}

TEST(PrAuc, Examples) {
  EXPECT_EQ(*pr_auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_FALSE(pr_auc(std::vector<double>{0.9, 0.8}, std::vector<int>{0, 0}).has_value());
}

TEST(PrAuc, SinglePositiveAtRankK) {
  const std::size_t n = 10;
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<double> s(n);
    std::vector<int> y(n, 0);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(n - i);  // rank i+1
    y[k - 1] = 1;
    EXPECT_DOUBLE_EQ(*pr_auc(s, y), 1.0 / static_cast<double>(k));
  }
}

TEST(PrAuc, RandomScoresApproachPrevalence) {
  Rng rng(1);
  const std::size_t n = 20000;
  std::vector<double> s(n);
  std::vector<int> y(n);
  double pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = rng.uniform() < 0.3;
    pos += y[i];
  }
  EXPECT_NEAR(*pr_auc(s, y), pos / n, 0.02);
  EXPECT_NEAR(*roc_auc(s, y), 0.5, 0.02);
}

TEST(Metrics, AgreeWithBruteForceOracles) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(50);
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = trial % 2 == 0;  // half the instances carry many ties
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng.index(5)) : rng.normal();
      y[i] = rng.uniform() < 0.4;
    }
    const auto r = roc_auc(s, y), br = brute_roc(s, y);
    ASSERT_EQ(r.has_value(), br.has_value());
    if (r) {
      EXPECT_NEAR(*r, *br, 1e-9);
    }
    const auto a = pr_auc(s, y), ba = brute_ap(s, y);
    ASSERT_EQ(a.has_value(), ba.has_value());
    if (a) {
      EXPECT_NEAR(*a, *ba, 1e-9);
    }
  }
}

TEST(RocAuc, InvariantUnderIncreasingTransformsAndComplementSymmetric) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<double> s(n), t(n), neg(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.normal();
      t[i] = std::exp(3 * s[i]) + 7;
      neg[i] = -s[i];
      y[i] = static_cast<int>(i % 2);
    }
    EXPECT_DOUBLE_EQ(*roc_auc(s, y), *roc_auc(t, y));
    EXPECT_NEAR(*roc_auc(neg, y), 1.0 - *roc_auc(s, y), 1e-12);
  }
}

TEST(Macro, SkipsUndefinedTags) {
  // rows are tags: tag 0 perfect, tag 1 reversed, tag 2 all negative
  const Tensor scores = Tensor::from_rows({{0.1, 0.9, 0.2}, {0.8, 0.1, 0.5}, {0.3, 0.3, 0.3}});
  const Tensor targets = Tensor::from_rows({{0, 1, 0}, {0, 1, 0}, {0, 0, 0}});
  EXPECT_DOUBLE_EQ(*macro_roc_auc(scores, targets), 0.5);
  EXPECT_DOUBLE_EQ(*macro_pr_auc(scores, targets), (1.0 + 1.0 / 3.0) / 2.0);
  EXPECT_FALSE(macro_roc_auc(Tensor::matrix(2, 2), Tensor::matrix(2, 2)).has_value());
  EXPECT_THROW(macro_roc_auc(Tensor::matrix(2, 2), Tensor::matrix(2, 3)), ContractViolation);
}

TEST(Accuracy, Examples) {
  const std::vector<int> labels = {0, 1, 2, 1, 0};
  Tensor one_hot = Tensor::matrix(3, 5);
  for (std::size_t j = 0; j < 5; ++j) one_hot(static_cast<std::size_t>(labels[j]), j) = 1;
  EXPECT_EQ(accuracy(one_hot, labels), 1.0);
  // samples 0, 1, 4 right; 2 and 3 wrong
  const Tensor hand = Tensor::from_rows({{5, 0, 0, 0, 2}, {1, 3, 9, 0, 1}, {0, 0, 1, 4, 0}});
  EXPECT_DOUBLE_EQ(accuracy(hand, labels), 0.6);
  // constant logits pick class 0
  std::vector<int> ten(100);
  for (std::size_t j = 0; j < 100; ++j) ten[j] = static_cast<int>(j % 10);
  EXPECT_DOUBLE_EQ(accuracy(Tensor::matrix(10, 100, 0.5), ten), 0.1);
}

TEST(Aggregate, MeanAndStandardError) {
  const auto a = aggregate(std::vector<double>{0.90, 0.92});
  EXPECT_NEAR(a.mean, 0.91, 1e-15);
  ASSERT_TRUE(a.std_error.has_value());
  EXPECT_NEAR(*a.std_error, 0.01, 1e-15);
  EXPECT_EQ(*aggregate(std::vector<double>{0.5, 0.5, 0.5}).std_error, 0.0);
  const auto one = aggregate(std::vector<double>{0.7});
  EXPECT_EQ(one.mean, 0.7);
  EXPECT_FALSE(one.std_error.has_value());
  EXPECT_THROW(aggregate(std::vector<double>{}), ContractViolation);
}

TEST(GroupAverage, AveragesColumnsPerGroup) {
  const Tensor s = Tensor::from_rows({{1, 3, 10, 5}});
  const std::vector<std::int64_t> g = {7, 7, 2, 7};
  EXPECT_EQ(group_average(s, g), Tensor::from_rows({{10, 3}}));
}
