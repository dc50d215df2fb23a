#include <gtest/gtest.h>

#include <cmath>

#include "dna/metrics.hpp"
#include "dna/numkernel.hpp"

using namespace dna;

TEST(Kendall, HandValues) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(kendall_tau(x, std::vector<double>{1, 3, 2, 4}), 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(kendall_tau(x, x), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(x, std::vector<double>{4, 3, 2, 1}), -1.0);
}

TEST(Kendall, TauBWithTies) {
  // one tied pair in x, 2 concordant of 3: 2 / sqrt(2 * 3)
  EXPECT_NEAR(kendall_tau(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}), 2.0 / std::sqrt(6.0), 1e-15);
}

TEST(Kendall, ConstantInputUndefined) {
  EXPECT_THROW(kendall_tau(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedCorrelationError);
  EXPECT_THROW(kendall_tau(std::vector<double>{1}, std::vector<double>{1}), ContractError);
  EXPECT_THROW(kendall_tau(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ContractError);
}

TEST(Kendall, InvariantToMonotoneMaps) {
  Rng rng(3);
  std::vector<double> a(30), b(30), ea(30);
  for (std::size_t i = 0; i < 30; ++i) {
    a[i] = standard_normal(rng);
    b[i] = a[i] + standard_normal(rng);
    ea[i] = std::exp(a[i]);
  }
  EXPECT_DOUBLE_EQ(kendall_tau(a, b), kendall_tau(ea, b));
  EXPECT_DOUBLE_EQ(spearman_rho(a, b), spearman_rho(ea, b));
}

TEST(Spearman, AverageRanksForTies) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
  // pearson of [1, 2.5, 2.5, 4] and [1, 2, 3, 4]
  EXPECT_NEAR(spearman_rho(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4}), 4.5 / std::sqrt(22.5), 1e-15);
}

TEST(Pearson, HandValueAndBounds) {
  EXPECT_NEAR(pearson_r(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(pearson_r(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-15);
  EXPECT_THROW(pearson_r(std::vector<double>{1, 1}, std::vector<double>{1, 2}), UndefinedCorrelationError);
}

TEST(Report, BundlesAllThree) {
  const std::vector<double> p{0.1, 0.4, 0.2, 0.9}, t{1, 3, 2, 4};
  const auto r = correlate(p, t);
  EXPECT_EQ(r.n, 4u);
  EXPECT_DOUBLE_EQ(r.kendall_tau, 1.0);
  EXPECT_DOUBLE_EQ(r.spearman_rho, 1.0);
  EXPECT_LT(r.pearson_r, 1.0);
}

TEST(Median, OddEvenEmpty) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_THROW(median({}), ContractError);
}
