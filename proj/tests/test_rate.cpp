#include <gtest/gtest.h>

#include <cmath>

#include "dna/rate.hpp"
#include "dna/verify.hpp"

using namespace dna;

namespace {

CellSpec cell(std::size_t depth, std::size_t width) {
  CellSpec c;
  c.depth = depth;
  c.width = width;
  return c;
}

SearchSpace four_op_depth_three() {
  return SearchSpace({{2, Activation::relu}, {4, Activation::relu}, {2, Activation::tanh}, {4, Activation::tanh}},
                     {BlockSpec{{cell(3, 3)}, 3, 2}});
}

}  // namespace

TEST(RelativeL1, HandValue) {
  // y = [1, 3]: mean 2, population variance 1; |diff| sum = 1 -> 1 / (2 * 1)
  const Tensor y({1, 2}, std::vector<double>{1, 3});
  const Tensor yh({1, 2}, std::vector<double>{1.5, 2.5});
  EXPECT_DOUBLE_EQ(relative_l1(y, yh), 0.5);
  EXPECT_DOUBLE_EQ(relative_l1(y, y), 0.0);
  EXPECT_DOUBLE_EQ(population_variance(y), 1.0);
}

TEST(RelativeL1, ScaleInvariant) {
  Rng rng(1);
  Tensor y = random_matrix(rng, 5, 3), yh = random_matrix(rng, 5, 3);
  const double base = relative_l1(y, yh);
  for (double& v : y.values()) v *= 7;
  for (double& v : yh.values()) v *= 7;
  EXPECT_NEAR(relative_l1(y, yh), base, 1e-12);
}

TEST(RelativeL1, ConstantTargetRejected) {
  const Tensor y({2, 2}, 3.0);
  EXPECT_THROW(relative_l1(y, Tensor({2, 2}, 1.0)), DegenerateTargetError);
  EXPECT_THROW(relative_l1(y, Tensor({2, 3}, 1.0)), DimensionError);
}

TEST(RelativeL1, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    Tensor y = random_matrix(rng, 3, 4), yh = random_matrix(rng, 3, 4);
    const auto g = relative_l1_grad(y, yh);
    EXPECT_LT(max_fd_error(y.values(), [&] { return relative_l1(y, yh); }, g.d_y.values()), 1e-5);
    EXPECT_LT(max_fd_error(yh.values(), [&] { return relative_l1(y, yh); }, g.d_yhat.values()), 1e-5);
  }
}

TEST(SharedNodes, FourOpsDepthThreeIs84) {
  const SearchSpace s = four_op_depth_three();
  EXPECT_EQ(shared_node_count(s, 0), 4u + 16u + 64u);
  const CostLUT lut = build_cost_lut(s);
  SupernetBlock b = make_supernet_block(s, 0, 3);
  Rng rng(2);
  const Tensor x = random_matrix(rng, 6, 3), y = random_matrix(rng, 6, 2);
  RateStats shared, naive;
  rate_block(s, b, x, y, lut, &shared);
  naive_rate_block(s, b, x, y, lut, &naive);
  EXPECT_EQ(shared.op_applications, 84u);
  EXPECT_EQ(naive.op_applications, 192u);
  EXPECT_EQ(shared.adapter_applications, 1u + 64u);
}

TEST(RateBlock, MatchesNaiveOnRandomBlocks) {
  const CheckResult r = verify_rating(21, 8);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(RateBlock, SortedWithCanonicalTies) {
  const SearchSpace s = four_op_depth_three();
  const CostLUT lut = build_cost_lut(s);
  // untrained zero-init projections: every path outputs the same thing
  SupernetBlock b = make_supernet_block(s, 0, 3);
  for (auto& layer : b.cells[0].banks)
    for (auto& op : layer) op.project_w.value.fill(0.0);
  Rng rng(2);
  const Tensor x = random_matrix(rng, 6, 3), y = random_matrix(rng, 6, 2);
  const auto list = rate_block(s, b, x, y, lut);
  ASSERT_EQ(list.entries.size(), 64u);
  for (std::size_t i = 0; i < list.entries.size(); ++i) {
    EXPECT_EQ(list.entries[i].score, list.entries[0].score);
    EXPECT_EQ(block_arch_index(s, 0, list.entries[i].arch), i);
  }
}

TEST(RateBlock, ScoresAndCostsPopulated) {
  const SearchSpace s = four_op_depth_three();
  const CostLUT lut = build_cost_lut(s);
  SupernetBlock b = make_supernet_block(s, 0, 5);
  Rng rng(3);
  const Tensor x = random_matrix(rng, 6, 3), y = random_matrix(rng, 6, 2);
  const auto list = rate_block(s, b, x, y, lut);
  for (std::size_t i = 1; i < list.entries.size(); ++i) EXPECT_LE(list.entries[i - 1].score, list.entries[i].score);
  for (const auto& e : list.entries) {
    EXPECT_EQ(e.cost, lut.block_cost(0, e.arch));
    EXPECT_EQ(e.id, encode_block_arch(0, e.arch));
    EXPECT_NEAR(e.score, relative_l1(y, path_forward(b.path(e.arch), x)), 1e-12);
  }
  EXPECT_EQ(list.val_rows, 6u);
}

TEST(RateBlock, RejectsWrongWidths) {
  const SearchSpace s = four_op_depth_three();
  const CostLUT lut = build_cost_lut(s);
  SupernetBlock b = make_supernet_block(s, 0, 5);
  EXPECT_THROW(rate_block(s, b, Tensor::matrix(4, 2), Tensor::matrix(4, 2), lut), DimensionError);
}
