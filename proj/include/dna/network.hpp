#pragma once

// Fixed-path networks (teachers, standalone students) and the synthetic regression task.
//
// A cell path is   in-adapter -> depth x residual op -> out-adapter,
// with each residual layer computing h + op(h).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dna/errors.hpp"
#include "dna/numkernel.hpp"
#include "dna/space.hpp"

namespace dna {

// ---------------------------------------------------------------------------
// synthetic task

struct TaskSpec {
  std::uint64_t seed = 7;
  std::size_t rows = 1000;
  std::size_t input_dim = 8;
  std::size_t output_dim = 4;
  std::vector<std::size_t> oracle_widths{32, 32, 32};
  double noise = 0.02;
  double val_fraction = 0.2;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Inputs are standard normal; targets come from a hidden random tanh network,
// standardised per column, plus Gaussian noise.
struct SyntheticTask {
  TaskSpec spec;
  Tensor x;  // [rows, input_dim]
  Tensor y;  // [rows, output_dim]
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
};

inline SyntheticTask make_task(const TaskSpec& spec) {
  if (spec.rows < 4) throw ContractError("task needs at least 4 rows");
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) throw ContractError("val fraction must be in (0, 1)");
  SyntheticTask t;
  t.spec = spec;
  Rng rng(derive_seed(spec.seed, "task-inputs"));
  t.x = Tensor::matrix(spec.rows, spec.input_dim);
  for (double& v : t.x.values()) v = standard_normal(rng);

  Rng orng(derive_seed(spec.seed, "task-oracle"));
  Tensor h = t.x;
  std::vector<std::size_t> widths = spec.oracle_widths;
  widths.push_back(spec.output_dim);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    Linear l(h.cols(), widths[i]);
    l.init(orng, 1.6);
    for (double& b : l.bias.value.values()) b = 0.3 * standard_normal(orng);
    h = linear_forward(l, h);
    if (i + 1 < widths.size())
      for (double& v : h.values()) v = std::tanh(v);
  }
  for (std::size_t c = 0; c < h.cols(); ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < h.rows(); ++r) mean += h.at(r, c);
    mean /= static_cast<double>(h.rows());
    for (std::size_t r = 0; r < h.rows(); ++r) var += (h.at(r, c) - mean) * (h.at(r, c) - mean);
    const double sd = std::sqrt(var / static_cast<double>(h.rows()));
    for (std::size_t r = 0; r < h.rows(); ++r) h.at(r, c) = (h.at(r, c) - mean) / (sd > 0 ? sd : 1.0);
  }
  Rng nrng(derive_seed(spec.seed, "task-noise"));
  for (double& v : h.values()) v += spec.noise * standard_normal(nrng);
  t.y = std::move(h);

  std::vector<std::size_t> order(spec.rows);
  std::iota(order.begin(), order.end(), 0);
  Rng srng(derive_seed(spec.seed, "task-split"));
  shuffle_indices(order, srng);
  const auto n_val = static_cast<std::size_t>(std::round(spec.val_fraction * static_cast<double>(spec.rows)));
  t.val_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  t.train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(t.val_rows.begin(), t.val_rows.end());
  std::sort(t.train_rows.begin(), t.train_rows.end());
  return t;
}

// ---------------------------------------------------------------------------
// generic path over borrowed parameters

struct PathRef {
  Linear* in = nullptr;
  std::vector<OpParams*> ops;
  Linear* out = nullptr;
};

struct ConstPathRef {
  const Linear* in = nullptr;
  std::vector<const OpParams*> ops;
  const Linear* out = nullptr;

  ConstPathRef() = default;
  ConstPathRef(const Linear* i, std::vector<const OpParams*> o, const Linear* u) : in(i), ops(std::move(o)), out(u) {}
  ConstPathRef(const PathRef& p) : in(p.in), ops(p.ops.begin(), p.ops.end()), out(p.out) {}
};

struct PathTrace {
  Tensor input;
  std::vector<Tensor> states;  // states[0] after in-adapter, states[l+1] after layer l
  std::vector<OpCache> caches;
};

// One residual layer; counts as a single op application.
inline Tensor residual_apply(const OpParams& op, const Tensor& h, OpCache* cache = nullptr) {
  Tensor y = op_forward(op, h, cache);
  add_inplace(y, h);
  return y;
}

inline Tensor path_forward(const ConstPathRef& p, const Tensor& x, PathTrace* trace = nullptr) {
  Tensor h = linear_forward(*p.in, x);
  if (trace) {
    trace->input = x;
    trace->states.clear();
    trace->caches.assign(p.ops.size(), {});
    trace->states.push_back(h);
  }
  for (std::size_t l = 0; l < p.ops.size(); ++l) {
    h = residual_apply(*p.ops[l], h, trace ? &trace->caches[l] : nullptr);
    if (trace) trace->states.push_back(h);
  }
  return linear_forward(*p.out, h);
}

// Accumulates gradients of every parameter on the path; returns dX.
inline Tensor path_backward(const PathRef& p, const PathTrace& trace, const Tensor& dy) {
  Tensor dh = linear_backward(*p.out, trace.states.back(), dy);
  for (std::size_t l = p.ops.size(); l-- > 0;) {
    OpBackward ob = op_backward(*p.ops[l], trace.states[l], dh, &trace.caches[l]);
    accumulate(*p.ops[l], ob.grads);
    add_inplace(dh, ob.dx);
  }
  return linear_backward(*p.in, trace.input, dh);
}

inline void path_zero_grad(const PathRef& p) {
  p.in->zero_grad();
  for (auto* op : p.ops) op->zero_grad();
  p.out->zero_grad();
}

inline void path_step(const PathRef& p, const TrainHyper& h, double lr) {
  p.in->step(h, lr);
  for (auto* op : p.ops) op->step(h, lr);
  p.out->step(h, lr);
}

inline std::size_t path_param_count(const ConstPathRef& p) {
  std::size_t n = p.in->param_count() + p.out->param_count();
  for (const auto* op : p.ops) n += op->param_count();
  return n;
}

// ---------------------------------------------------------------------------
// fixed networks

struct CellPlan {
  std::size_t width = 1;
  std::vector<OpDesc> ops;

  friend bool operator==(const CellPlan&, const CellPlan&) = default;
};

// Structural description of a fixed network; io_widths has one more entry than blocks.
struct NetSpec {
  std::vector<std::size_t> io_widths;
  std::vector<CellPlan> blocks;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

inline NetSpec net_spec_for(const SearchSpace& s, const Architecture& a) {
  validate_arch(s, a);
  NetSpec n;
  n.io_widths.push_back(s.block(0).in_width);
  for (std::size_t k = 0; k < s.num_blocks(); ++k) {
    const auto& cell = s.block(k).cells[static_cast<std::size_t>(a.blocks[k].cell)];
    CellPlan plan{cell.width, {}};
    for (int op : a.blocks[k].ops) plan.ops.push_back(s.catalog()[static_cast<std::size_t>(op)]);
    n.blocks.push_back(std::move(plan));
    n.io_widths.push_back(s.block(k).out_width);
  }
  return n;
}

struct CellNet {
  Linear in;
  std::vector<OpParams> layers;
  Linear out;

  PathRef path() {
    PathRef p{&in, {}, &out};
    for (auto& l : layers) p.ops.push_back(&l);
    return p;
  }
  ConstPathRef path() const {
    ConstPathRef p{&in, {}, &out};
    for (const auto& l : layers) p.ops.push_back(&l);
    return p;
  }
  Tensor forward(const Tensor& x) const { return path_forward(path(), x); }
};

inline CellNet make_cell_net(std::size_t in_width, const CellPlan& plan, std::size_t out_width, Rng& rng) {
  CellNet c;
  c.in = Linear(in_width, plan.width);
  c.in.init(rng);
  for (const auto& d : plan.ops) {
    c.layers.emplace_back(d, plan.width, plan.width);
    c.layers.back().init(rng, 0.5);
  }
  c.out = Linear(plan.width, out_width);
  c.out.init(rng);
  return c;
}

struct FixedNet {
  NetSpec spec;
  std::vector<CellNet> blocks;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += path_param_count(b.path());
    return n;
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (const auto& b : blocks) h = b.forward(h);
    return h;
  }

  // Output of every block; element 0 is the raw input.
  std::vector<Tensor> block_outputs(const Tensor& x) const {
    std::vector<Tensor> out{x};
    for (const auto& b : blocks) out.push_back(b.forward(out.back()));
    return out;
  }
};

inline FixedNet make_fixed_net(const NetSpec& spec, std::uint64_t seed) {
  if (spec.io_widths.size() != spec.blocks.size() + 1) throw ContractError("net spec io widths must be blocks + 1");
  FixedNet n;
  n.spec = spec;
  Rng rng(derive_seed(seed, "fixed-net-init"));
  for (std::size_t k = 0; k < spec.blocks.size(); ++k)
    n.blocks.push_back(make_cell_net(spec.io_widths[k], spec.blocks[k], spec.io_widths[k + 1], rng));
  return n;
}

struct FitOptions {
  int patience = 0;  // > 0 stops after this many epochs without val improvement and restores the best weights
  std::size_t max_train_rows = 0;  // 0 = all
};

struct FitResult {
  std::vector<double> train_trace;  // mean minibatch loss per epoch
  std::vector<double> val_trace;
  double val_loss = 0.0;
  int epochs_run = 0;
};

inline double evaluate_mse(const FixedNet& net, const SyntheticTask& task, std::span<const std::size_t> rows) {
  return mse(select_rows(task.y, rows), net.forward(select_rows(task.x, rows)));
}

// End-to-end MSE training on the task.
inline FitResult fit_network(FixedNet& net, const SyntheticTask& task, const TrainHyper& hyper,
                             const FitOptions& opt = {}) {
  hyper.validate();
  if (task.x.cols() != net.spec.io_widths.front() || task.y.cols() != net.spec.io_widths.back())
    throw DimensionError("network io widths do not match task dimensions");
  Rng rng(derive_seed(hyper.seed, "fit-shuffle"));
  std::vector<std::size_t> rows = task.train_rows;
  if (opt.max_train_rows && opt.max_train_rows < rows.size()) rows.resize(opt.max_train_rows);

  FitResult r;
  double lr = hyper.lr;
  double best = std::numeric_limits<double>::infinity();
  FixedNet best_net;
  int since_best = 0;
  std::int64_t step = 0;
  std::vector<PathRef> paths;
  for (auto& b : net.blocks) paths.push_back(b.path());
  std::vector<PathTrace> traces(net.blocks.size());

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle_indices(rows, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < rows.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(rows.size(), start + hyper.batch_size);
      std::span<const std::size_t> batch(rows.data() + start, end - start);
      Tensor h = select_rows(task.x, batch);
      for (std::size_t k = 0; k < paths.size(); ++k) h = path_forward(paths[k], h, &traces[k]);
      const Tensor target = select_rows(task.y, batch);
      const double loss = mse(target, h);
      ++step;
      if (!std::isfinite(loss)) throw TrainingError("non-finite loss during network training", step);
      Tensor d = mse_grad(target, h);
      for (auto& p : paths) path_zero_grad(p);
      for (std::size_t k = paths.size(); k-- > 0;) d = path_backward(paths[k], traces[k], d);
      for (auto& p : paths) path_step(p, hyper, lr);
      loss_sum += loss;
      ++batches;
    }
    lr *= hyper.lr_decay;
    r.train_trace.push_back(loss_sum / static_cast<double>(batches));
    const double val = evaluate_mse(net, task, task.val_rows);
    r.val_trace.push_back(val);
    r.epochs_run = epoch + 1;
    if (opt.patience > 0) {
      if (val < best) {
        best = val;
        best_net = net;
        since_best = 0;
      } else if (++since_best >= opt.patience) {
        break;
      }
    }
  }
  if (opt.patience > 0 && best_net.blocks.size() == net.blocks.size()) net = std::move(best_net);
  r.val_loss = evaluate_mse(net, task, task.val_rows);
  return r;
}

}  // namespace dna
