#pragma once

// Ground-truth bench (every architecture trained standalone), the whole-network
// one-shot baseline, and the diagnostic sweeps built on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dna/distill.hpp"
#include "dna/errors.hpp"
#include "dna/metrics.hpp"
#include "dna/network.hpp"
#include "dna/parallel.hpp"
#include "dna/pipeline.hpp"
#include "dna/rate.hpp"
#include "dna/search.hpp"
#include "dna/space.hpp"

namespace dna {

// Every architecture of the space, in canonical order.
inline std::vector<Architecture> enumerate_space(const SearchSpace& s) {
  std::vector<std::vector<BlockArch>> per_block;
  for (std::size_t k = 0; k < s.num_blocks(); ++k) per_block.push_back(enumerate_block(s, k));
  std::vector<Architecture> out;
  std::vector<std::size_t> idx(s.num_blocks(), 0);
  while (true) {
    Architecture a;
    for (std::size_t k = 0; k < idx.size(); ++k) a.blocks.push_back(per_block[k][idx[k]]);
    out.push_back(std::move(a));
    std::size_t k = idx.size();
    while (k-- > 0) {
      if (++idx[k] < per_block[k].size()) break;
      idx[k] = 0;
    }
    if (k == static_cast<std::size_t>(-1)) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// bench table

struct BenchRow {
  std::string arch_id;
  double score = 0.0;  // held-out MSE after standalone training, lower is better
  Cost cost;
  std::uint64_t seed = 0;
};

struct BenchTable {
  std::vector<BenchRow> rows;  // canonical architecture order
  std::string space_hash;
  std::uint64_t task_seed = 0;

  std::map<std::string, double> score_map() const {
    std::map<std::string, double> m;
    for (const auto& r : rows) m[r.arch_id] = r.score;
    return m;
  }
  const BenchRow* find(const std::string& id) const {
    for (const auto& r : rows)
      if (r.arch_id == id) return &r;
    return nullptr;
  }
};

struct BenchConfig {
  TrainHyper hyper{.lr = 0.005, .epochs = 60, .batch_size = 32, .lr_decay = 0.97};
  std::size_t cap = 2000;
  std::uint64_t seed = 0;
};

inline std::uint64_t standalone_seed(const BenchConfig& cfg, const std::string& arch_id) {
  return derive_seed(cfg.seed, "standalone:" + arch_id);
}

// Fresh weights, end-to-end training on the task, held-out MSE.
inline double train_standalone(const SearchSpace& space, const Architecture& arch, const SyntheticTask& task,
                               const TrainHyper& hyper, std::uint64_t seed) {
  FixedNet net = make_fixed_net(net_spec_for(space, arch), seed);
  TrainHyper h = hyper;
  h.seed = derive_seed(seed, "standalone-fit");
  return fit_network(net, task, h).val_loss;
}

using BenchProgress = std::function<void(const BenchRow&)>;

// Trains every architecture missing from `existing`; rows already present are kept as is.
inline BenchTable build_bench(const SearchSpace& space, const SyntheticTask& task, const BenchConfig& cfg,
                              const std::vector<BenchRow>& existing = {}, unsigned workers = 1,
                              const BenchProgress& progress = {}, const std::vector<Architecture>* subset = nullptr) {
  const BigInt size = space_size(space);
  const std::size_t n = subset ? subset->size() : 0;
  if (!subset && size > BigInt(cfg.cap))
    throw ContractError("bench refused: space has " + size.str() + " architectures, cap is " + std::to_string(cfg.cap));
  if (subset && n > cfg.cap) throw ContractError("bench refused: " + std::to_string(n) + " architectures exceed cap");
  const std::vector<Architecture> archs = subset ? *subset : enumerate_space(space);
  const CostLUT lut = build_cost_lut(space);

  std::map<std::string, BenchRow> done;
  for (const auto& r : existing) done[r.arch_id] = r;
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < archs.size(); ++i)
    if (!done.count(encode_arch(archs[i]))) todo.push_back(i);

  std::vector<BenchRow> fresh(archs.size());
  std::mutex progress_mutex;
  run_jobs(todo.size(), workers, [&](std::size_t t) {
    const std::size_t i = todo[t];
    BenchRow row;
    row.arch_id = encode_arch(archs[i]);
    row.seed = standalone_seed(cfg, row.arch_id);
    row.cost = lut.cost(archs[i]);
    row.score = train_standalone(space, archs[i], task, cfg.hyper, row.seed);
    if (!std::isfinite(row.score)) throw TrainingError("non-finite standalone loss for " + row.arch_id, 0);
    fresh[i] = row;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(row);
    }
  });

  BenchTable table;
  table.task_seed = task.spec.seed;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    const auto id = encode_arch(archs[i]);
    auto it = done.find(id);
    table.rows.push_back(it != done.end() ? it->second : fresh[i]);
  }
  return table;
}

// ---------------------------------------------------------------------------
// ranking against the bench

// Predicted score of an architecture: sum_k lambda_k * local score of its block arch.
inline std::vector<double> predicted_scores(const SearchSpace& space, const std::vector<LocalScoreList>& lists,
                                            const std::vector<double>& lambdas, const std::vector<std::string>& ids) {
  if (lists.size() != space.num_blocks() || lambdas.size() != lists.size())
    throw ContractError("need one score list and one lambda per block");
  std::vector<std::map<std::string, double>> lookup(lists.size());
  for (std::size_t k = 0; k < lists.size(); ++k)
    for (const auto& e : lists[k].entries) lookup[k][e.id] = e.score;
  std::vector<double> out;
  for (const auto& id : ids) {
    const Architecture a = decode_arch(id, space);
    double total = 0.0;
    for (std::size_t k = 0; k < lists.size(); ++k) {
      auto it = lookup[k].find(encode_block_arch(k, a.blocks[k]));
      if (it == lookup[k].end()) throw CoverageError("architecture " + id + " has no score in block " + std::to_string(k));
      total = total + lambdas[k] * it->second;
    }
    out.push_back(total);
  }
  return out;
}

inline RankingReport ranking_report(const SearchSpace& space, const std::vector<LocalScoreList>& lists,
                                    const std::vector<double>& lambdas, const BenchTable& bench) {
  std::vector<std::string> ids;
  std::vector<double> truth;
  for (const auto& r : bench.rows) {
    ids.push_back(r.arch_id);
    truth.push_back(r.score);
  }
  return correlate(predicted_scores(space, lists, lambdas, ids), truth);
}

// Truth scores of `ids` in the same order.
inline std::vector<double> bench_scores(const BenchTable& bench, const std::vector<std::string>& ids) {
  const auto m = bench.score_map();
  std::vector<double> out;
  for (const auto& id : ids) {
    auto it = m.find(id);
    if (it == m.end()) throw CoverageError("architecture " + id + " missing from bench");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// whole-network one-shot baseline

struct WholeNetConfig {
  TrainHyper hyper{.lr = 0.005, .epochs = 12, .batch_size = 32, .lr_decay = 0.9};
  std::size_t steps_per_epoch = 0;
};

// One supernet over all blocks, trained end-to-end on the task with one uniformly
// sampled path per step.
inline Supernet train_wholenet(const SearchSpace& space, const SyntheticTask& task, const WholeNetConfig& cfg,
                               std::uint64_t seed, std::vector<double>* trace = nullptr) {
  cfg.hyper.validate();
  Supernet net = make_supernet(space, derive_seed(seed, "wholenet"));
  Rng rng(derive_seed(seed, "wholenet-train"));
  std::vector<std::size_t> rows = task.train_rows;
  const std::size_t bs = cfg.hyper.batch_size;
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (rows.size() + bs - 1) / bs;
  std::size_t cursor = rows.size();
  double lr = cfg.hyper.lr;
  std::int64_t step = 0;
  std::vector<PathTrace> traces(net.size());
  for (int epoch = 0; epoch < cfg.hyper.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      if (cursor >= rows.size()) {
        shuffle_indices(rows, rng);
        cursor = 0;
      }
      const std::size_t end = std::min(rows.size(), cursor + bs);
      std::span<const std::size_t> batch(rows.data() + cursor, end - cursor);
      cursor = end;
      std::vector<PathRef> paths;
      for (auto& b : net) paths.push_back(b.path(sample_path(b.spec, rng)));
      Tensor h = select_rows(task.x, batch);
      for (std::size_t k = 0; k < paths.size(); ++k) h = path_forward(paths[k], h, &traces[k]);
      const Tensor y = select_rows(task.y, batch);
      const double loss = mse(y, h);
      ++step;
      if (!std::isfinite(loss)) throw TrainingError("non-finite loss in whole-network supernet", step);
      Tensor d = mse_grad(y, h);
      for (auto& p : paths) path_zero_grad(p);
      for (std::size_t k = paths.size(); k-- > 0;) d = path_backward(paths[k], traces[k], d);
      for (auto& p : paths) path_step(p, cfg.hyper, lr);
      loss_sum += loss;
    }
    lr *= cfg.hyper.lr_decay;
    if (trace) trace->push_back(loss_sum / static_cast<double>(steps));
  }
  return net;
}

// Held-out MSE of each architecture with inherited supernet weights.
inline std::vector<double> rate_wholenet(const SearchSpace& space, const Supernet& net, const SyntheticTask& task,
                                         const std::vector<std::string>& ids) {
  const Tensor x = select_rows(task.x, task.val_rows);
  const Tensor y = select_rows(task.y, task.val_rows);
  std::vector<double> out;
  for (const auto& id : ids) {
    const Architecture a = decode_arch(id, space);
    Tensor h = x;
    for (std::size_t k = 0; k < net.size(); ++k) h = path_forward(net[k].path(a.blocks[k]), h);
    out.push_back(mse(y, h));
  }
  return out;
}

// Frobenius norm of all weights on an architecture's path through the supernet.
inline double subnet_frobenius(const Supernet& net, const Architecture& a) {
  double s = 0.0;
  auto add = [&](const Tensor& t) {
    for (double v : t.values()) s += v * v;
  };
  for (std::size_t k = 0; k < net.size(); ++k) {
    const ConstPathRef p = net[k].path(a.blocks[k]);
    add(p.in->weight.value);
    add(p.in->bias.value);
    for (const auto* op : p.ops) {
      add(op->expand_w.value);
      add(op->expand_b.value);
      add(op->project_w.value);
      add(op->project_b.value);
    }
    add(p.out->weight.value);
    add(p.out->bias.value);
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// sweeps

struct Theorem1Row {
  std::size_t op_count = 0;
  BigInt space_size;
  double tau = 0.0;
  double mean_frobenius = 0.0;
};

// Space whose catalog is the first `op_count` entries of `full` and whose layers allow all of them.
inline SearchSpace restrict_catalog(const SearchSpace& full, std::size_t op_count) {
  if (op_count < 1 || op_count > full.catalog().size()) throw ContractError("op count outside catalog");
  std::vector<OpDesc> cat(full.catalog().begin(), full.catalog().begin() + static_cast<std::ptrdiff_t>(op_count));
  std::vector<BlockSpec> blocks = full.blocks();
  for (auto& b : blocks)
    for (auto& c : b.cells) c.allowed.clear();
  return SearchSpace(std::move(cat), std::move(blocks));
}

// For each op count, a whole-network supernet over the first `count` catalog ops is
// trained for the same budget and rated on a fixed evaluation set: the architectures
// of the smallest space, whose truth scores come from `bench`.
inline std::vector<Theorem1Row> theorem1_sweep(const SearchSpace& full, const std::vector<std::size_t>& op_counts,
                                               const WholeNetConfig& cfg, const SyntheticTask& task,
                                               const BenchTable& bench, std::uint64_t seed) {
  if (op_counts.size() < 3) throw ContractError("theorem-1 sweep needs at least three op counts");
  for (auto c : op_counts)
    if (c < 2) throw ContractError("theorem-1 sweep needs at least two ops per layer");
  const std::size_t smallest = *std::min_element(op_counts.begin(), op_counts.end());
  const SearchSpace eval_space = restrict_catalog(full, smallest);
  std::vector<std::string> ids;
  for (const auto& a : enumerate_space(eval_space)) ids.push_back(encode_arch(a));
  const auto truth = bench_scores(bench, ids);

  std::vector<Theorem1Row> rows;
  for (std::size_t c : op_counts) {
    const SearchSpace s = restrict_catalog(full, c);
    const Supernet net = train_wholenet(s, task, cfg, seed);
    const auto pred = rate_wholenet(s, net, task, ids);
    double frob = 0.0;
    for (const auto& id : ids) frob += subnet_frobenius(net, decode_arch(id, s));
    rows.push_back({c, space_size(s), kendall_tau(pred, truth), frob / static_cast<double>(ids.size())});
  }
  return rows;
}

struct StabilityRow {
  int epoch = 0;
  std::string arch_id;
  double truth = 0.0;
};

struct Checkpoint {
  int epoch = 0;
  Supernet supernet;
};

// Rate + search at every checkpoint and look up the chosen architecture's truth score.
inline std::vector<StabilityRow> stability_sweep(const SearchSpace& space, const CostLUT& lut,
                                                 const std::vector<Checkpoint>& checkpoints,
                                                 const FeatureCache& cache, const Constraint& constraint,
                                                 const std::vector<double>& lambdas, const BenchTable& bench) {
  if (checkpoints.size() < 4) throw ContractError("stability sweep needs at least four checkpoints");
  std::vector<StabilityRow> rows;
  for (const auto& cp : checkpoints) {
    const auto lists = rate_supernet(space, cp.supernet, cache, lut, 0);
    const auto found = traverse_search(space, lists, lut, constraint, lambdas);
    const auto id = encode_arch(found.arch);
    const BenchRow* row = bench.find(id);
    if (!row) throw CoverageError("searched architecture " + id + " missing from bench");
    rows.push_back({cp.epoch, id, row->score});
  }
  return rows;
}

// Trains block-wise with per-epoch snapshots of every block.
inline std::vector<Checkpoint> train_with_checkpoints(const SearchSpace& space, const FeatureCache& cache,
                                                      const DistillConfig& cfg, std::uint64_t seed) {
  Supernet net = make_supernet(space, derive_seed(seed, "supernet"));
  std::vector<Checkpoint> cps(static_cast<std::size_t>(cfg.hyper.epochs));
  for (std::size_t e = 0; e < cps.size(); ++e) cps[e].epoch = static_cast<int>(e) + 1;
  for (std::size_t k = 0; k < net.size(); ++k)
    train_block(net[k], cache.blocks[k], cache.train_rows, cfg, derive_seed(seed, "distill"), {},
                [&](int epoch, const SupernetBlock& b) { cps[static_cast<std::size_t>(epoch)].supernet.push_back(b); });
  return cps;
}

struct DataAmountRow {
  double fraction = 1.0;
  double tau = 0.0;        // vs bench truth
  double cross_tau = 1.0;  // vs the full-data ranking
};

// Retrains the block-wise supernet on a subsample of the training rows with the
// number of optimiser steps held at the full-data value.
inline std::vector<DataAmountRow> data_amount_sweep(const SearchSpace& space, const CostLUT& lut,
                                                    const FeatureCache& cache, const DnaConfig& cfg,
                                                    const std::vector<double>& fractions, const BenchTable& bench,
                                                    std::uint64_t seed) {
  if (fractions.empty()) throw ContractError("data-amount sweep needs at least one fraction");
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ContractError("fractions must lie in (0, 1]");
  std::vector<std::string> ids;
  std::vector<double> truth;
  for (const auto& r : bench.rows) {
    ids.push_back(r.arch_id);
    truth.push_back(r.score);
  }
  DnaConfig fixed = cfg;
  const std::size_t bs = cfg.distill.hyper.batch_size;
  if (!fixed.distill.steps_per_epoch) fixed.distill.steps_per_epoch = (cache.train_rows.size() + bs - 1) / bs;
  const auto lambdas = cfg.lambdas_for(space);

  auto ranking = [&](double f) {
    std::vector<std::size_t> rows = cache.train_rows;
    Rng rng(derive_seed(seed, "data-subsample"));
    shuffle_indices(rows, rng);
    rows.resize(std::max<std::size_t>(1, static_cast<std::size_t>(std::round(f * static_cast<double>(rows.size())))));
    std::sort(rows.begin(), rows.end());
    const DnaRun run = run_dna(space, lut, cache, fixed, seed, rows);
    return predicted_scores(space, run.lists, lambdas, ids);
  };
  const auto full = ranking(1.0);
  std::vector<DataAmountRow> out;
  for (double f : fractions) {
    const auto pred = f == 1.0 ? full : ranking(f);
    out.push_back({f, kendall_tau(pred, truth), kendall_tau(pred, full)});
  }
  return out;
}

}  // namespace dna
