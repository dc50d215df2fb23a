#pragma once

// Block-wise distillation: a trained teacher provides (input, target) features for
// every block, and each block's student supernet learns to map one to the other.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dna/errors.hpp"
#include "dna/network.hpp"
#include "dna/numkernel.hpp"
#include "dna/parallel.hpp"
#include "dna/space.hpp"

namespace dna {

// ---------------------------------------------------------------------------
// teacher

struct TeacherConfig {
  NetSpec spec;
  TrainHyper hyper{.lr = 0.003, .epochs = 150, .batch_size = 32, .lr_decay = 0.99};
  int patience = 20;
};

struct TeacherNet {
  FixedNet net;
  FitResult fit;
  double untrained_val_loss = 0.0;
};

inline void check_teacher_partition(const SearchSpace& space, const NetSpec& spec) {
  if (spec.blocks.size() != space.num_blocks()) throw ContractError("teacher block count does not match search space");
  for (std::size_t k = 0; k < space.num_blocks(); ++k) {
    if (spec.io_widths[k] != space.block(k).in_width || spec.io_widths[k + 1] != space.block(k).out_width)
      throw ContractError("teacher block " + std::to_string(k) + " widths do not match search space");
  }
}

inline TeacherNet make_teacher(const SearchSpace& space, const TeacherConfig& cfg, const SyntheticTask& task,
                               std::uint64_t seed) {
  check_teacher_partition(space, cfg.spec);
  TeacherNet t;
  t.net = make_fixed_net(cfg.spec, derive_seed(seed, "teacher"));
  t.untrained_val_loss = evaluate_mse(t.net, task, task.val_rows);
  TrainHyper h = cfg.hyper;
  h.seed = derive_seed(seed, "teacher-fit");
  t.fit = fit_network(t.net, task, h, {.patience = cfg.patience});
  return t;
}

// ---------------------------------------------------------------------------
// feature cache

struct BlockFeatures {
  Tensor inputs;   // teacher output of the previous block (raw input for block 0)
  Tensor targets;  // teacher output of this block
};

struct FeatureCache {
  std::vector<BlockFeatures> blocks;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;

  Tensor val_inputs(std::size_t k) const { return select_rows(blocks.at(k).inputs, val_rows); }
  Tensor val_targets(std::size_t k) const { return select_rows(blocks.at(k).targets, val_rows); }
};

inline FeatureCache extract_features(const FixedNet& teacher, const SyntheticTask& task) {
  FeatureCache c;
  const auto outs = teacher.block_outputs(task.x);
  for (std::size_t k = 0; k + 1 < outs.size(); ++k) c.blocks.push_back({outs[k], outs[k + 1]});
  c.train_rows = task.train_rows;
  c.val_rows = task.val_rows;
  return c;
}

// ---------------------------------------------------------------------------
// supernet

struct SupernetCell {
  Linear in;
  std::vector<std::vector<OpParams>> banks;  // [layer][position in the layer's allowed list]
  Linear out;
};

struct SupernetBlock {
  std::size_t index = 0;
  BlockSpec spec;
  std::vector<SupernetCell> cells;

  OpParams& bank(const BlockArch& a, std::size_t layer) {
    return cells[static_cast<std::size_t>(a.cell)].banks[layer][bank_pos(a, layer)];
  }
  const OpParams& bank(const BlockArch& a, std::size_t layer) const {
    return cells[static_cast<std::size_t>(a.cell)].banks[layer][bank_pos(a, layer)];
  }

  PathRef path(const BlockArch& a) {
    auto& cell = cells.at(static_cast<std::size_t>(a.cell));
    PathRef p{&cell.in, {}, &cell.out};
    for (std::size_t l = 0; l < a.ops.size(); ++l) p.ops.push_back(&bank(a, l));
    return p;
  }
  ConstPathRef path(const BlockArch& a) const {
    const auto& cell = cells.at(static_cast<std::size_t>(a.cell));
    ConstPathRef p{&cell.in, {}, &cell.out};
    for (std::size_t l = 0; l < a.ops.size(); ++l) p.ops.push_back(&bank(a, l));
    return p;
  }

  friend bool operator==(const SupernetBlock& a, const SupernetBlock& b) { return weights_equal(a, b); }

 private:
  std::size_t bank_pos(const BlockArch& a, std::size_t layer) const {
    const auto& allowed = spec.cells.at(static_cast<std::size_t>(a.cell)).allowed.at(layer);
    auto it = std::lower_bound(allowed.begin(), allowed.end(), a.ops.at(layer));
    if (it == allowed.end() || *it != a.ops[layer]) throw ContractError("op not allowed at layer");
    return static_cast<std::size_t>(it - allowed.begin());
  }

  static bool weights_equal(const SupernetBlock& a, const SupernetBlock& b) {
    if (a.cells.size() != b.cells.size()) return false;
    for (std::size_t c = 0; c < a.cells.size(); ++c) {
      const auto &x = a.cells[c], &y = b.cells[c];
      if (x.in.weight.value != y.in.weight.value || x.in.bias.value != y.in.bias.value ||
          x.out.weight.value != y.out.weight.value || x.out.bias.value != y.out.bias.value)
        return false;
      for (std::size_t l = 0; l < x.banks.size(); ++l)
        for (std::size_t o = 0; o < x.banks[l].size(); ++o) {
          const auto &p = x.banks[l][o], &q = y.banks[l][o];
          if (p.expand_w.value != q.expand_w.value || p.expand_b.value != q.expand_b.value ||
              p.project_w.value != q.project_w.value || p.project_b.value != q.project_b.value)
            return false;
        }
    }
    return true;
  }
};

using Supernet = std::vector<SupernetBlock>;

inline SupernetBlock make_supernet_block(const SearchSpace& space, std::size_t k, std::uint64_t seed) {
  SupernetBlock b;
  b.index = k;
  b.spec = space.block(k);
  Rng rng(derive_seed(seed, "supernet-block-" + std::to_string(k)));
  for (const auto& cs : b.spec.cells) {
    SupernetCell cell;
    cell.in = Linear(b.spec.in_width, cs.width);
    cell.in.init(rng);
    for (std::size_t l = 0; l < cs.depth; ++l) {
      auto& layer = cell.banks.emplace_back();
      for (int op : cs.allowed[l]) {
        layer.emplace_back(space.catalog()[static_cast<std::size_t>(op)], cs.width, cs.width);
        layer.back().init(rng, 0.5);
      }
    }
    cell.out = Linear(cs.width, b.spec.out_width);
    cell.out.init(rng);
    b.cells.push_back(std::move(cell));
  }
  return b;
}

inline Supernet make_supernet(const SearchSpace& space, std::uint64_t seed) {
  Supernet s;
  for (std::size_t k = 0; k < space.num_blocks(); ++k) s.push_back(make_supernet_block(space, k, seed));
  return s;
}

// Uniform over cells, then uniform over each layer's allowed ops.
inline BlockArch sample_path(const BlockSpec& block, Rng& rng) {
  BlockArch a;
  a.cell = static_cast<int>(uniform_index(rng, block.cells.size()));
  const auto& cell = block.cells[static_cast<std::size_t>(a.cell)];
  for (std::size_t l = 0; l < cell.depth; ++l) a.ops.push_back(cell.allowed[l][uniform_index(rng, cell.allowed[l].size())]);
  return a;
}

using PathSampler = std::function<BlockArch(const BlockSpec&, Rng&)>;

struct DistillConfig {
  TrainHyper hyper{.lr = 0.005, .epochs = 12, .batch_size = 32, .lr_decay = 0.9};
  double lr_first = 0.002;
  double lr_rest = 0.005;
  // Fixed optimiser steps per epoch; 0 derives it from the train-row count.
  std::size_t steps_per_epoch = 0;

  double lr_for_block(std::size_t k) const { return k == 0 ? lr_first : lr_rest; }
};

struct BlockTrainResult {
  std::vector<double> loss_trace;  // mean train loss per epoch
};

// Called after each epoch with (epoch index, block state).
using EpochHook = std::function<void(int, const SupernetBlock&)>;

inline BlockTrainResult train_block(SupernetBlock& block, const BlockFeatures& features,
                                    std::span<const std::size_t> train_rows, const DistillConfig& cfg,
                                    std::uint64_t seed, const PathSampler& sampler = {}, const EpochHook& hook = {}) {
  cfg.hyper.validate();
  if (train_rows.empty()) throw ContractError("no training rows for block " + std::to_string(block.index));
  if (features.inputs.cols() != block.spec.in_width || features.targets.cols() != block.spec.out_width)
    throw DimensionError("feature widths do not match block " + std::to_string(block.index));
  Rng rng(derive_seed(seed, "train-block-" + std::to_string(block.index)));
  std::vector<std::size_t> rows(train_rows.begin(), train_rows.end());
  const std::size_t bs = cfg.hyper.batch_size;
  const std::size_t steps =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (rows.size() + bs - 1) / bs;

  BlockTrainResult r;
  double lr = cfg.lr_for_block(block.index);
  std::size_t cursor = rows.size();
  std::int64_t step = 0;
  PathTrace trace;
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
      const BlockArch a = sampler ? sampler(block.spec, rng) : sample_path(block.spec, rng);
      PathRef p = block.path(a);
      const Tensor x = select_rows(features.inputs, batch);
      const Tensor y = select_rows(features.targets, batch);
      const Tensor yhat = path_forward(p, x, &trace);
      const double loss = mse(y, yhat);
      ++step;
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss in block " + std::to_string(block.index), step);
      path_zero_grad(p);
      path_backward(p, trace, mse_grad(y, yhat));
      path_step(p, cfg.hyper, lr);
      loss_sum += loss;
    }
    lr *= cfg.hyper.lr_decay;
    r.loss_trace.push_back(loss_sum / static_cast<double>(steps));
    if (hook) hook(epoch, block);
  }
  return r;
}

// Trains every block independently; up to `workers` blocks run concurrently.
inline std::vector<BlockTrainResult> train_all_blocks(Supernet& net, const FeatureCache& cache,
                                                      const DistillConfig& cfg, std::uint64_t seed,
                                                      unsigned workers = 1,
                                                      std::span<const std::size_t> train_rows = {}) {
  if (cache.blocks.size() != net.size()) throw ContractError("feature cache block count does not match supernet");
  std::vector<BlockTrainResult> results(net.size());
  const auto rows = train_rows.empty() ? std::span<const std::size_t>(cache.train_rows) : train_rows;
  run_jobs(net.size(), workers, [&](std::size_t k) { results[k] = train_block(net[k], cache.blocks[k], rows, cfg, seed); });
  return results;
}

}  // namespace dna
