#pragma once

// Rating every block architecture against the teacher's held-out features.
//
// rate_block walks each cell as a tree: the root is the in-adapter output, each
// node at depth i is one op applied to its parent's output, and leaves are full
// paths. A node's output is computed once and shared by all paths below it, so
// a cell of depth d with c ops per layer costs sum_{i=1..d} c^i op applications
// instead of d * c^d.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dna/distill.hpp"
#include "dna/errors.hpp"
#include "dna/network.hpp"
#include "dna/space.hpp"

namespace dna {

inline double population_variance(const Tensor& y) {
  if (y.size() == 0) return 0.0;
  double mean = 0.0;
  for (double v : y.values()) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y.values()) var += (v - mean) * (v - mean);
  return var / static_cast<double>(y.size());
}

// ||y - yhat||_1 / (K * sqrt(D(y))), D = population variance over all K entries of y.
inline double relative_l1(const Tensor& y, const Tensor& yhat) {
  require_same_shape(y, yhat, "relative_l1");
  const double var = population_variance(y);
  if (!(var > 0.0)) throw DegenerateTargetError("relative_l1: target has zero variance");
  double l1 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) l1 += std::abs(y[i] - yhat[i]);
  return l1 / (static_cast<double>(y.size()) * std::sqrt(var));
}

struct RelativeL1Grad {
  Tensor d_y;
  Tensor d_yhat;
};

inline RelativeL1Grad relative_l1_grad(const Tensor& y, const Tensor& yhat) {
  require_same_shape(y, yhat, "relative_l1_grad");
  const double var = population_variance(y);
  if (!(var > 0.0)) throw DegenerateTargetError("relative_l1: target has zero variance");
  const double k = static_cast<double>(y.size());
  const double sd = std::sqrt(var);
  double mean = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mean += y[i];
    l1 += std::abs(y[i] - yhat[i]);
  }
  mean /= k;
  RelativeL1Grad g{Tensor(y.shape()), Tensor(y.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double diff = yhat[i] - y[i];
    const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
    g.d_yhat[i] = sgn / (k * sd);
    // d/dy of l1 / (k sd): -sgn/(k sd) - l1/(k sd^2) * dsd/dy, dsd/dy_i = (y_i - mean) / (k sd)
    g.d_y[i] = -sgn / (k * sd) - l1 / (k * var) * (y[i] - mean) / (k * sd);
  }
  return g;
}

struct ScoreEntry {
  BlockArch arch;
  std::string id;
  double score = 0.0;
  Cost cost;
};

struct LocalScoreList {
  std::size_t block = 0;
  std::vector<ScoreEntry> entries;  // ascending by score, ties by canonical order
  std::size_t val_rows = 0;
  std::uint64_t seed = 0;
};

// Optional map applied to block outputs before scoring (the DNA++ projector).
using OutputHead = std::function<Tensor(const Tensor&)>;

struct RateStats {
  std::uint64_t op_applications = 0;
  std::uint64_t adapter_applications = 0;
};

namespace detail {

inline void sort_scores(const SearchSpace& space, LocalScoreList& list) {
  std::vector<std::pair<std::size_t, ScoreEntry>> keyed;
  for (auto& e : list.entries) keyed.emplace_back(block_arch_index(space, list.block, e.arch), std::move(e));
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.second.score != b.second.score) return a.second.score < b.second.score;
    return a.first < b.first;
  });
  list.entries.clear();
  for (auto& [_, e] : keyed) list.entries.push_back(std::move(e));
}

inline void check_rate_inputs(const SupernetBlock& block, const Tensor& inputs, const Tensor& targets) {
  if (inputs.rows() == 0 || inputs.size() == 0) throw ContractError("rating needs at least one validation row");
  if (inputs.rows() != targets.rows()) throw DimensionError("validation inputs and targets are not row-aligned");
  if (inputs.cols() != block.spec.in_width) throw DimensionError("validation input width does not match block");
}

}  // namespace detail

inline LocalScoreList rate_block(const SearchSpace& space, const SupernetBlock& block, const Tensor& val_inputs,
                                 const Tensor& val_targets, const CostLUT& lut, RateStats* stats = nullptr,
                                 const OutputHead& head = {}) {
  detail::check_rate_inputs(block, val_inputs, val_targets);
  LocalScoreList list;
  list.block = block.index;
  list.val_rows = val_inputs.rows();
  RateStats local;
  RateStats& st = stats ? *stats : local;

  struct Node {
    std::size_t depth;  // layers applied so far
    Tensor state;
    std::vector<int> ops;
  };

  for (std::size_t c = 0; c < block.cells.size(); ++c) {
    const auto& cell = block.cells[c];
    const auto& cspec = block.spec.cells[c];
    std::vector<Node> stack;
    stack.push_back({0, linear_forward(cell.in, val_inputs), {}});
    ++st.adapter_applications;
    while (!stack.empty()) {
      Node node = std::move(stack.back());
      stack.pop_back();
      if (node.depth == cspec.depth) {
        Tensor out = linear_forward(cell.out, node.state);
        ++st.adapter_applications;
        if (head) out = head(out);
        ScoreEntry e;
        e.arch = BlockArch{static_cast<int>(c), std::move(node.ops)};
        e.id = encode_block_arch(block.index, e.arch);
        e.score = relative_l1(val_targets, out);
        e.cost = lut.block_cost(block.index, e.arch);
        list.entries.push_back(std::move(e));
        continue;
      }
      const auto& bank = cell.banks[node.depth];
      // reverse push keeps depth-first visits in canonical order
      for (std::size_t o = bank.size(); o-- > 0;) {
        Node child{node.depth + 1, residual_apply(bank[o], node.state), node.ops};
        ++st.op_applications;
        child.ops.push_back(cspec.allowed[node.depth][o]);
        stack.push_back(std::move(child));
      }
    }
  }
  detail::sort_scores(space, list);
  return list;
}

// Independent per-path evaluation from the cell root; reference for rate_block.
inline LocalScoreList naive_rate_block(const SearchSpace& space, const SupernetBlock& block, const Tensor& val_inputs,
                                       const Tensor& val_targets, const CostLUT& lut, RateStats* stats = nullptr,
                                       const OutputHead& head = {}) {
  detail::check_rate_inputs(block, val_inputs, val_targets);
  LocalScoreList list;
  list.block = block.index;
  list.val_rows = val_inputs.rows();
  RateStats local;
  RateStats& st = stats ? *stats : local;
  for_each_block_arch(space, block.index, [&](const BlockArch& a) {
    const ConstPathRef p = block.path(a);
    Tensor out = path_forward(p, val_inputs);
    st.op_applications += a.ops.size();
    st.adapter_applications += 2;
    if (head) out = head(out);
    list.entries.push_back({a, encode_block_arch(block.index, a), relative_l1(val_targets, out), lut.block_cost(block.index, a)});
  });
  detail::sort_scores(space, list);
  return list;
}

// Exact op-application count of rate_block for block k.
inline std::uint64_t shared_node_count(const SearchSpace& space, std::size_t k) {
  std::uint64_t n = 0;
  for (const auto& cell : space.block(k).cells) {
    std::uint64_t level = 1;
    for (const auto& allowed : cell.allowed) {
      level *= allowed.size();
      n += level;
    }
  }
  return n;
}

inline std::vector<LocalScoreList> rate_supernet(const SearchSpace& space, const Supernet& net,
                                                 const FeatureCache& cache, const CostLUT& lut, std::uint64_t seed) {
  std::vector<LocalScoreList> out;
  for (std::size_t k = 0; k < net.size(); ++k) {
    auto list = rate_block(space, net[k], cache.val_inputs(k), cache.val_targets(k), lut);
    list.seed = seed;
    out.push_back(std::move(list));
  }
  return out;
}

}  // namespace dna
