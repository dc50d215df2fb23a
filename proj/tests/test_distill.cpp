#include <gtest/gtest.h>

#include <map>

#include "dna/distill.hpp"
#include "dna/verify.hpp"

using namespace dna;

namespace {

CellSpec cell(std::size_t depth, std::size_t width) {
  CellSpec c;
  c.depth = depth;
  c.width = width;
  return c;
}

SearchSpace toy_space() {
  return SearchSpace({{2, Activation::relu}, {4, Activation::relu}, {2, Activation::tanh}},
                     {BlockSpec{{cell(1, 4), cell(2, 6)}, 4, 5}, BlockSpec{{cell(2, 3)}, 5, 2}});
}

TaskSpec toy_task_spec() {
  TaskSpec t;
  t.rows = 200;
  t.input_dim = 4;
  t.output_dim = 2;
  t.oracle_widths = {8};
  return t;
}

TeacherConfig toy_teacher() {
  TeacherConfig c;
  c.spec.io_widths = {4, 5, 2};
  c.spec.blocks = {CellPlan{6, {{2, Activation::tanh}}}, CellPlan{6, {{2, Activation::tanh}}}};
  c.hyper.epochs = 30;
  return c;
}

}  // namespace

TEST(Task, DeterministicAndSplit) {
  const auto a = make_task(toy_task_spec());
  const auto b = make_task(toy_task_spec());
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.val_rows.size(), 40u);
  EXPECT_EQ(a.train_rows.size() + a.val_rows.size(), 200u);
  std::vector<int> seen(200, 0);
  for (auto r : a.train_rows) ++seen[r];
  for (auto r : a.val_rows) ++seen[r];
  for (int s : seen) EXPECT_EQ(s, 1);
  TaskSpec bad = toy_task_spec();
  bad.val_fraction = 1.0;
  EXPECT_THROW(make_task(bad), ContractError);
}

TEST(Network, PathGradientMatchesFiniteDifferences) {
  Rng rng(5);
  CellNet net = make_cell_net(3, CellPlan{4, {{2, Activation::tanh}, {3, Activation::tanh}}}, 2, rng);
  Tensor x = random_matrix(rng, 5, 3);
  const Tensor w = random_matrix(rng, 5, 2);
  auto loss = [&] {
    const Tensor y = net.forward(x);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  PathTrace trace;
  PathRef p = net.path();
  path_forward(net.path(), x, &trace);
  path_zero_grad(p);
  const Tensor dx = path_backward(p, trace, w);
  EXPECT_LT(max_fd_error(x.values(), loss, dx.values()), 1e-6);
  EXPECT_LT(max_fd_error(net.in.weight.value.values(), loss, net.in.weight.grad.values()), 1e-6);
  EXPECT_LT(max_fd_error(net.layers[0].expand_w.value.values(), loss, net.layers[0].expand_w.grad.values()), 1e-6);
  EXPECT_LT(max_fd_error(net.layers[1].project_b.value.values(), loss, net.layers[1].project_b.grad.values()), 1e-6);
  EXPECT_LT(max_fd_error(net.out.weight.value.values(), loss, net.out.weight.grad.values()), 1e-6);
}

TEST(Network, ResidualWithZeroOpIsIdentity) {
  OpParams op({2, Activation::relu}, 3, 3);
  Rng rng(1);
  const Tensor h = random_matrix(rng, 4, 3);
  EXPECT_EQ(residual_apply(op, h), h);
}

TEST(Network, ParamCountMatchesCostLUT) {
  const SearchSpace s = toy_space();
  const CostLUT lut = build_cost_lut(s);
  for (const auto& b0 : enumerate_block(s, 0))
    for (const auto& b1 : enumerate_block(s, 1)) {
      const Architecture a{{b0, b1}};
      const FixedNet net = make_fixed_net(net_spec_for(s, a), 3);
      EXPECT_EQ(net.param_count(), lut.cost(a).params);
    }
}

TEST(Network, FitReducesValidationLoss) {
  const auto task = make_task(toy_task_spec());
  FixedNet net = make_fixed_net(toy_teacher().spec, 2);
  const double before = evaluate_mse(net, task, task.val_rows);
  TrainHyper h;
  h.epochs = 20;
  h.seed = 4;
  const FitResult r = fit_network(net, task, h);
  EXPECT_LT(r.val_loss, before);
  EXPECT_EQ(r.epochs_run, 20);
}

TEST(Teacher, PartitionMustMatchSpace) {
  TeacherConfig c = toy_teacher();
  EXPECT_NO_THROW(check_teacher_partition(toy_space(), c.spec));
  c.spec.io_widths = {4, 6, 2};
  EXPECT_THROW(check_teacher_partition(toy_space(), c.spec), ContractError);
  c.spec.blocks.pop_back();
  EXPECT_THROW(check_teacher_partition(toy_space(), c.spec), ContractError);
}

TEST(Teacher, TrainsAndFeaturesChain) {
  const auto task = make_task(toy_task_spec());
  const TeacherNet t = make_teacher(toy_space(), toy_teacher(), task, 3);
  EXPECT_LT(t.fit.val_loss, t.untrained_val_loss);
  const FeatureCache c = extract_features(t.net, task);
  ASSERT_EQ(c.blocks.size(), 2u);
  EXPECT_EQ(c.blocks[0].inputs, task.x);
  EXPECT_EQ(c.blocks[0].targets, c.blocks[1].inputs);
  EXPECT_EQ(c.blocks[1].targets, t.net.forward(task.x));
}

TEST(Supernet, PathsShareBanks) {
  const SearchSpace s = toy_space();
  SupernetBlock b = make_supernet_block(s, 0, 1);
  const PathRef p = b.path(BlockArch{1, {0, 2}});
  const PathRef q = b.path(BlockArch{1, {0, 1}});
  EXPECT_EQ(p.in, q.in);
  EXPECT_EQ(p.ops[0], q.ops[0]);
  EXPECT_NE(p.ops[1], q.ops[1]);
  EXPECT_NE(p.in, b.path(BlockArch{0, {0}}).in);
  EXPECT_THROW(b.path(BlockArch{1, {0, 5}}), ContractError);
}

TEST(Supernet, SamplerIsUniformOverCellsAndOps) {
  const SearchSpace s = toy_space();
  Rng rng(8);
  std::map<std::pair<int, int>, int> counts;
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    const BlockArch a = sample_path(s.block(0), rng);
    ++counts[{a.cell, a.ops[0]}];
  }
  for (int op = 0; op < 3; ++op) {
    EXPECT_NEAR((counts[{0, op}] / double(n)), 1.0 / 6, 0.01);
    EXPECT_NEAR((counts[{1, op}] / double(n)), 1.0 / 6, 0.01);
  }
}

TEST(Distill, TrainingReducesLossAndIsDeterministic) {
  const SearchSpace s = toy_space();
  const auto task = make_task(toy_task_spec());
  const TeacherNet t = make_teacher(s, toy_teacher(), task, 3);
  const FeatureCache c = extract_features(t.net, task);
  DistillConfig cfg;
  cfg.hyper.epochs = 6;
  Supernet a = make_supernet(s, 4), b = make_supernet(s, 4);
  const auto ra = train_all_blocks(a, c, cfg, 9, 1);
  const auto rb = train_all_blocks(b, c, cfg, 9, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_LT(ra[k].loss_trace.back(), ra[k].loss_trace.front());
    EXPECT_EQ(ra[k].loss_trace, rb[k].loss_trace);
    EXPECT_TRUE(a[k] == b[k]);
  }
}

TEST(Distill, RejectsMismatchedFeatures) {
  const SearchSpace s = toy_space();
  SupernetBlock b = make_supernet_block(s, 0, 1);
  BlockFeatures f{Tensor::matrix(10, 3), Tensor::matrix(10, 5)};
  std::vector<std::size_t> rows{0, 1, 2};
  EXPECT_THROW(train_block(b, f, rows, DistillConfig{}, 1), DimensionError);
  BlockFeatures g{Tensor::matrix(10, 4), Tensor::matrix(10, 5)};
  EXPECT_THROW(train_block(b, g, {}, DistillConfig{}, 1), ContractError);
}

TEST(Distill, NonFiniteLossRaisesTrainingError) {
  const SearchSpace s = toy_space();
  SupernetBlock b = make_supernet_block(s, 0, 1);
  BlockFeatures f{Tensor::matrix(4, 4), Tensor::matrix(4, 5)};
  f.targets[0] = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> rows{0, 1, 2, 3};
  EXPECT_THROW(train_block(b, f, rows, DistillConfig{}, 1), TrainingError);
}

TEST(Distill, FirstBlockUsesItsOwnLearningRate) {
  DistillConfig c;
  EXPECT_DOUBLE_EQ(c.lr_for_block(0), c.lr_first);
  EXPECT_DOUBLE_EQ(c.lr_for_block(3), c.lr_rest);
}
