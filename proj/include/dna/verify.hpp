#pragma once

// Self-checks behind `dna verify`: feature-sharing rating against per-path
// evaluation, traversal search against the exhaustive scan, and analytic
// gradients against central finite differences.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dna/distill.hpp"
#include "dna/evolve.hpp"
#include "dna/metrics.hpp"
#include "dna/rate.hpp"
#include "dna/search.hpp"
#include "dna/space.hpp"

namespace dna {

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

// Random space with the given shape limits; cells get random depth/width and the
// whole catalog at every layer.
inline SearchSpace random_space(Rng& rng, std::size_t blocks, std::size_t max_cells, std::size_t max_depth,
                                std::size_t ops, std::size_t max_arch_per_block) {
  const std::vector<OpDesc> pool{{2, Activation::relu}, {4, Activation::relu}, {2, Activation::tanh},
                                 {4, Activation::tanh}, {6, Activation::relu}, {6, Activation::tanh},
                                 {3, Activation::relu}, {3, Activation::tanh}};
  std::vector<OpDesc> cat(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(ops, pool.size())));
  std::vector<BlockSpec> specs;
  std::size_t width = 2 + uniform_index(rng, 4);
  for (std::size_t k = 0; k < blocks; ++k) {
    BlockSpec b;
    b.in_width = width;
    width = 2 + uniform_index(rng, 4);
    b.out_width = width;
    const std::size_t cells = 1 + uniform_index(rng, max_cells);
    std::size_t total = 0;
    for (std::size_t c = 0; c < cells; ++c) {
      std::size_t depth = 1 + uniform_index(rng, max_depth);
      auto size = [&](std::size_t d) {
        std::size_t s = 1;
        for (std::size_t i = 0; i < d; ++i) s *= cat.size();
        return s;
      };
      while (depth > 1 && total + size(depth) > max_arch_per_block) --depth;
      if (total + size(depth) > max_arch_per_block && c > 0) break;
      total += size(depth);
      CellSpec cs;
      cs.depth = depth;
      cs.width = 2 + uniform_index(rng, 5);
      b.cells.push_back(cs);
    }
    specs.push_back(std::move(b));
  }
  return SearchSpace(std::move(cat), std::move(specs));
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = scale * standard_normal(rng);
  return t;
}

inline CheckResult verify_rating(std::uint64_t seed, int trials) {
  CheckResult r{"feature-sharing rating equals per-path rating", true, ""};
  Rng rng(derive_seed(seed, "verify-rating"));
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const SearchSpace space = random_space(rng, 1, 3, 3, 2 + uniform_index(rng, 3), 10000);
    const CostLUT lut = build_cost_lut(space);
    SupernetBlock block = make_supernet_block(space, 0, rng());
    const std::size_t rows = 24;
    BlockFeatures f{random_matrix(rng, rows, space.block(0).in_width), random_matrix(rng, rows, space.block(0).out_width)};
    std::vector<std::size_t> train(16), val(8);
    for (std::size_t i = 0; i < 16; ++i) train[i] = i;
    for (std::size_t i = 0; i < 8; ++i) val[i] = 16 + i;
    DistillConfig cfg;
    cfg.hyper.epochs = 2;
    cfg.hyper.batch_size = 8;
    train_block(block, f, train, cfg, rng());
    const Tensor vx = select_rows(f.inputs, val), vy = select_rows(f.targets, val);
    RateStats shared, naive;
    const auto a = rate_block(space, block, vx, vy, lut, &shared);
    const auto b = naive_rate_block(space, block, vx, vy, lut, &naive);
    if (a.entries.size() != b.entries.size()) {
      r.passed = false;
      r.detail = "entry counts differ";
      return r;
    }
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      if (a.entries[i].id != b.entries[i].id) {
        r.passed = false;
        r.detail = "orderings differ in trial " + std::to_string(t);
        return r;
      }
      worst = std::max(worst, std::abs(a.entries[i].score - b.entries[i].score));
    }
    if (shared.op_applications != shared_node_count(space, 0)) {
      r.passed = false;
      r.detail = "op applications " + std::to_string(shared.op_applications) + " != " +
                 std::to_string(shared_node_count(space, 0));
      return r;
    }
  }
  if (worst > 1e-9) r.passed = false;
  r.detail = std::to_string(trials) + " blocks, max score difference " + format_score(worst);
  return r;
}

// Random sorted score lists over a random space.
inline std::vector<LocalScoreList> random_lists(const SearchSpace& space, const CostLUT& lut, Rng& rng) {
  std::vector<LocalScoreList> lists;
  for (std::size_t k = 0; k < space.num_blocks(); ++k) {
    LocalScoreList l;
    l.block = k;
    for_each_block_arch(space, k, [&](const BlockArch& a) {
      // coarse scores so ties occur
      const double s = static_cast<double>(uniform_index(rng, 50)) / 10.0;
      l.entries.push_back({a, encode_block_arch(k, a), s, lut.block_cost(k, a)});
    });
    detail::sort_scores(space, l);
    lists.push_back(std::move(l));
  }
  return lists;
}

inline CheckResult verify_search(std::uint64_t seed, int trials) {
  CheckResult r{"traversal search equals exhaustive search", true, ""};
  Rng rng(derive_seed(seed, "verify-search"));
  int binding = 0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t blocks = 2 + uniform_index(rng, 3);
    const SearchSpace space = random_space(rng, blocks, 2, 2, 2 + uniform_index(rng, 3), 30);
    if (space_size(space) > 100000) continue;
    const CostLUT lut = build_cost_lut(space);
    const auto lists = random_lists(space, lut, rng);
    std::uint64_t lo = 0, hi = 0;
    for (std::size_t k = 0; k < blocks; ++k) {
      std::uint64_t mn = UINT64_MAX, mx = 0;
      for (const auto& e : lists[k].entries) {
        mn = std::min<std::uint64_t>(mn, e.cost.params);
        mx = std::max<std::uint64_t>(mx, e.cost.params);
      }
      lo += mn;
      hi += mx;
    }
    Constraint c;
    c.max_params = static_cast<double>(lo) + uniform01(rng) * static_cast<double>(hi - lo);
    std::vector<double> lambdas(blocks);
    for (double& l : lambdas) l = 0.5 + uniform01(rng);
    const auto a = traverse_search(space, lists, lut, c, lambdas);
    const auto b = exhaustive_search(space, lists, lut, c, lambdas);
    if (a.score != b.score) {
      r.passed = false;
      r.detail = "trial " + std::to_string(t) + ": " + format_score(a.score) + " vs " + format_score(b.score);
      return r;
    }
    const std::uint64_t product = space_size(space).convert_to<std::uint64_t>();
    if (static_cast<double>(hi) > *c.max_params) {
      ++binding;
      if (a.evaluated >= product) {
        r.passed = false;
        r.detail = "binding constraint but traversal scored every architecture";
        return r;
      }
    }
  }
  r.detail = std::to_string(trials) + " instances, " + std::to_string(binding) + " with a binding constraint";
  return r;
}

// ---------------------------------------------------------------------------
// finite differences

// Max relative error between analytic gradient `g` and central differences of f at x.
inline double max_fd_error(std::vector<double>& x, const std::function<double()>& f, const std::vector<double>& g,
                           double h = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    const double num = (up - down) / (2 * h);
    const double err = std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), floor});
    if (std::abs(num - g[i]) > 1e-9) worst = std::max(worst, err);
  }
  return worst;
}

inline CheckResult verify_gradients(std::uint64_t seed, int trials) {
  CheckResult r{"analytic gradients match finite differences", true, ""};
  Rng rng(derive_seed(seed, "verify-gradients"));
  double worst = 0.0;
  const std::vector<OpDesc> kinds{{2, Activation::relu}, {4, Activation::relu}, {6, Activation::relu},
                                  {2, Activation::tanh}, {4, Activation::tanh}, {6, Activation::tanh}};
  for (const auto& kind : kinds)
    for (int t = 0; t < trials; ++t) {
      OpParams op(kind, 4, 3);
      op.init(rng);
      for (double& b : op.expand_b.value.values()) b = 0.1 * standard_normal(rng);
      Tensor x = random_matrix(rng, 3, 4);
      const Tensor w = random_matrix(rng, 3, 3);
      auto loss = [&] {
        const Tensor y = op_forward(op, x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
        return s;
      };
      OpCache cache;
      op_forward(op, x, &cache);
      bool near_kink = false;
      for (double p : cache.pre.values()) near_kink = near_kink || std::abs(p) < 1e-3;
      if (kind.activation == Activation::relu && near_kink) continue;
      const OpBackward ob = op_backward(op, x, w);
      worst = std::max(worst, max_fd_error(x.values(), loss, ob.dx.values()));
      worst = std::max(worst, max_fd_error(op.expand_w.value.values(), loss, ob.grads.expand_w.values()));
      worst = std::max(worst, max_fd_error(op.expand_b.value.values(), loss, ob.grads.expand_b.values()));
      worst = std::max(worst, max_fd_error(op.project_w.value.values(), loss, ob.grads.project_w.values()));
      worst = std::max(worst, max_fd_error(op.project_b.value.values(), loss, ob.grads.project_b.values()));
    }
  SSLHyper h;
  h.gamma = 2.0;  // keeps the variance hinge active
  for (int t = 0; t < trials; ++t) {
    Tensor z = random_matrix(rng, 4, 3), zh = random_matrix(rng, 4, 3);
    const PairGrad g = ssl_loss_grad(z, zh, h);
    worst = std::max(worst, max_fd_error(z.values(), [&] { return ssl_loss(z, zh, h); }, g.dz.values()));
    worst = std::max(worst, max_fd_error(zh.values(), [&] { return ssl_loss(z, zh, h); }, g.dzhat.values()));
    const Tensor gs = sdr_loss_grad(z, h);
    worst = std::max(worst, max_fd_error(z.values(), [&] { return sdr_loss(z, h); }, gs.values()));
    Tensor y = random_matrix(rng, 4, 3), yh = random_matrix(rng, 4, 3);
    const RelativeL1Grad rg = relative_l1_grad(y, yh);
    worst = std::max(worst, max_fd_error(y.values(), [&] { return relative_l1(y, yh); }, rg.d_y.values()));
    worst = std::max(worst, max_fd_error(yh.values(), [&] { return relative_l1(y, yh); }, rg.d_yhat.values()));
  }
  r.passed = worst < 1e-4;
  r.detail = "max relative error " + format_score(worst);
  return r;
}

inline std::vector<CheckResult> verify_all(std::uint64_t seed, int rating_trials = 50, int search_trials = 200,
                                           int gradient_trials = 100) {
  return {verify_rating(seed, rating_trials), verify_search(seed, search_trials), verify_gradients(seed, gradient_trials)};
}

}  // namespace dna
