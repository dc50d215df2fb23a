#include <gtest/gtest.h>

#include <set>

#include "dna/bench.hpp"
#include "dna/pipeline.hpp"

using namespace dna;

namespace {

CellSpec cell(std::size_t depth, std::size_t width) {
  CellSpec c;
  c.depth = depth;
  c.width = width;
  return c;
}

const std::vector<OpDesc> kCatalog{{2, Activation::relu}, {2, Activation::tanh}, {4, Activation::relu}, {4, Activation::tanh}};

SearchSpace space(std::size_t ops = 2) {
  return SearchSpace({kCatalog.begin(), kCatalog.begin() + static_cast<std::ptrdiff_t>(ops)},
                     {BlockSpec{{cell(1, 3), cell(1, 5)}, 4, 5}, BlockSpec{{cell(1, 3)}, 5, 2}});
}

const SyntheticTask& task() {
  static const SyntheticTask t = [] {
    TaskSpec s;
    s.rows = 120;
    s.input_dim = 4;
    s.output_dim = 2;
    s.oracle_widths = {6};
    return make_task(s);
  }();
  return t;
}

BenchConfig quick() {
  BenchConfig c;
  c.hyper.epochs = 3;
  c.seed = 5;
  return c;
}

FeatureCache features(const SearchSpace& s) {
  TeacherConfig tc;
  tc.spec.io_widths = {4, 5, 2};
  tc.spec.blocks = {CellPlan{6, {{2, Activation::tanh}}}, CellPlan{6, {{2, Activation::tanh}}}};
  tc.hyper.epochs = 10;
  return extract_features(make_teacher(s, tc, task(), 1).net, task());
}

}  // namespace

TEST(Enumerate, CanonicalCrossProduct) {
  const auto all = enumerate_space(space());
  ASSERT_EQ(all.size(), 8u);
  std::set<std::string> ids;
  for (const auto& a : all) ids.insert(encode_arch(a));
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_EQ(encode_arch(all.front()), "b0:c0:0|b1:c0:0");
  EXPECT_EQ(encode_arch(all[1]), "b0:c0:0|b1:c0:1");
  EXPECT_EQ(encode_arch(all.back()), "b0:c1:1|b1:c0:1");
}

TEST(Bench, RowsDeterministicAndIndependentOfWorkers) {
  const SearchSpace s = space();
  const BenchTable a = build_bench(s, task(), quick(), {}, 1);
  const BenchTable b = build_bench(s, task(), quick(), {}, 3);
  ASSERT_EQ(a.rows.size(), 8u);
  const CostLUT lut = build_cost_lut(s);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].arch_id, b.rows[i].arch_id);
    EXPECT_EQ(a.rows[i].score, b.rows[i].score);
    EXPECT_EQ(a.rows[i].seed, standalone_seed(quick(), a.rows[i].arch_id));
    EXPECT_EQ(a.rows[i].cost, lut.cost(decode_arch(a.rows[i].arch_id, s)));
    EXPECT_GT(a.rows[i].score, 0.0);
  }
}

TEST(Bench, ResumeKeepsExistingRowsAndTrainsTheRest) {
  const SearchSpace s = space();
  const BenchTable full = build_bench(s, task(), quick());
  std::vector<BenchRow> partial(full.rows.begin(), full.rows.begin() + 3);
  partial[0].score = 123.0;  // marker: must survive untouched
  int trained = 0;
  const BenchTable resumed = build_bench(s, task(), quick(), partial, 1, [&](const BenchRow&) { ++trained; });
  EXPECT_EQ(trained, 5);
  EXPECT_EQ(resumed.rows[0].score, 123.0);
  for (std::size_t i = 1; i < full.rows.size(); ++i) EXPECT_EQ(resumed.rows[i].score, full.rows[i].score);
}

TEST(Bench, CapRefusesLargeSpaces) {
  BenchConfig c = quick();
  c.cap = 7;
  EXPECT_THROW(build_bench(space(), task(), c), ContractError);
  const auto all = enumerate_space(space());
  const std::vector<Architecture> subset(all.begin(), all.begin() + 2);
  EXPECT_EQ(build_bench(space(), task(), c, {}, 1, {}, &subset).rows.size(), 2u);
}

TEST(Ranking, PredictedScoresSumWeightedLocalScores) {
  const SearchSpace s = space();
  const CostLUT lut = build_cost_lut(s);
  std::vector<LocalScoreList> lists(2);
  for (std::size_t k = 0; k < 2; ++k) {
    lists[k].block = k;
    double v = 1.0;
    for_each_block_arch(s, k, [&](const BlockArch& a) {
      lists[k].entries.push_back({a, encode_block_arch(k, a), v, lut.block_cost(k, a)});
      v += 1.0;
    });
  }
  const auto p = predicted_scores(s, lists, {2.0, 0.5}, {"b0:c1:1|b1:c0:0", "b0:c0:0|b1:c0:1"});
  EXPECT_DOUBLE_EQ(p[0], 2.0 * 4.0 + 0.5 * 1.0);
  EXPECT_DOUBLE_EQ(p[1], 2.0 * 1.0 + 0.5 * 2.0);
  lists[1].entries.pop_back();
  EXPECT_THROW(predicted_scores(s, lists, {1, 1}, {"b0:c0:0|b1:c0:1"}), CoverageError);
}

TEST(Ranking, BenchScoresCoverage) {
  BenchTable t;
  t.rows.push_back({"b0:c0:0|b1:c0:0", 0.5, {}, 0});
  EXPECT_EQ(bench_scores(t, {"b0:c0:0|b1:c0:0"}), std::vector<double>{0.5});
  EXPECT_THROW(bench_scores(t, {"b0:c0:1|b1:c0:0"}), CoverageError);
}

TEST(WholeNet, DeterministicAndImproves) {
  const SearchSpace s = space();
  WholeNetConfig c;
  c.hyper.epochs = 4;
  const Supernet a = train_wholenet(s, task(), c, 3);
  const Supernet b = train_wholenet(s, task(), c, 3);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(a[k] == b[k]);
  std::vector<std::string> ids;
  for (const auto& x : enumerate_space(s)) ids.push_back(encode_arch(x));
  const auto trained = rate_wholenet(s, a, task(), ids);
  const auto fresh = rate_wholenet(s, make_supernet(s, derive_seed(3, "wholenet")), task(), ids);
  EXPECT_LT(median(trained), median(fresh));
}

TEST(WholeNet, FrobeniusCoversPathWeights) {
  const SearchSpace s = space();
  Supernet net = make_supernet(s, 1);
  for (auto& b : net)
    for (auto& c : b.cells) {
      c.in.weight.value.fill(0.0);
      c.out.weight.value.fill(0.0);
      for (auto& layer : c.banks)
        for (auto& op : layer) {
          op.expand_w.value.fill(0.0);
          op.project_w.value.fill(0.0);
        }
    }
  const Architecture a = decode_arch("b0:c1:0|b1:c0:1", s);
  net[0].path(a.blocks[0]).ops[0]->project_b.value.fill(1.0);  // 5 entries
  net[1].path(a.blocks[1]).out->bias.value.fill(2.0);          // 2 entries
  EXPECT_DOUBLE_EQ(subnet_frobenius(net, a), std::sqrt(5.0 + 8.0));
}

TEST(Sweeps, RestrictCatalogIsPrefix) {
  const SearchSpace full = space(4);
  const SearchSpace two = restrict_catalog(full, 2);
  EXPECT_EQ(two.catalog().size(), 2u);
  EXPECT_EQ(space_size(two), 8);
  EXPECT_EQ(space_size(full), (4 + 4) * 4);
  EXPECT_THROW(restrict_catalog(full, 5), ContractError);
}

TEST(Sweeps, Theorem1RowsAndPreconditions) {
  const SearchSpace full = space(4);
  const auto small = enumerate_space(restrict_catalog(full, 2));
  const BenchTable bench = build_bench(restrict_catalog(full, 2), task(), quick());
  WholeNetConfig c;
  c.hyper.epochs = 2;
  EXPECT_THROW(theorem1_sweep(full, {2, 4}, c, task(), bench, 1), ContractError);
  EXPECT_THROW(theorem1_sweep(full, {1, 2, 4}, c, task(), bench, 1), ContractError);
  const auto rows = theorem1_sweep(full, {2, 3, 4}, c, task(), bench, 1);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].space_size, 8);
  EXPECT_EQ(rows[2].space_size, 32);
  for (const auto& r : rows) {
    EXPECT_GE(r.tau, -1.0);
    EXPECT_LE(r.tau, 1.0);
    EXPECT_GT(r.mean_frobenius, 0.0);
  }
}

TEST(Sweeps, FinalCheckpointEqualsPlainRun) {
  const SearchSpace s = space();
  const CostLUT lut = build_cost_lut(s);
  const FeatureCache cache = features(s);
  DnaConfig cfg;
  cfg.distill.hyper.epochs = 4;
  const auto cps = train_with_checkpoints(s, cache, cfg.distill, 2);
  ASSERT_EQ(cps.size(), 4u);
  EXPECT_EQ(cps.back().epoch, 4);
  const DnaRun run = run_dna(s, lut, cache, cfg, 2);
  for (std::size_t k = 0; k < s.num_blocks(); ++k) EXPECT_TRUE(cps.back().supernet[k] == run.supernet[k]);
  const BenchTable bench = build_bench(s, task(), quick());
  const auto rows = stability_sweep(s, lut, cps, cache, Constraint{}, {1, 1}, bench);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows.back().arch_id, encode_arch(run.search->arch));
  EXPECT_THROW(stability_sweep(s, lut, {cps.begin(), cps.begin() + 3}, cache, Constraint{}, {1, 1}, bench),
               ContractError);
}

TEST(Sweeps, DataAmountFullFractionHasUnitCrossTau) {
  const SearchSpace s = space();
  const CostLUT lut = build_cost_lut(s);
  const FeatureCache cache = features(s);
  DnaConfig cfg;
  cfg.distill.hyper.epochs = 3;
  const BenchTable bench = build_bench(s, task(), quick());
  const auto rows = data_amount_sweep(s, lut, cache, cfg, {1.0, 0.5}, bench, 4);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].cross_tau, 1.0);
  EXPECT_THROW(data_amount_sweep(s, lut, cache, cfg, {0.0}, bench, 4), ContractError);
}
