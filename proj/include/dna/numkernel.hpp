#pragma once

// Dense row-major float64 math for the candidate-operation family.
//
// Every trainable piece is built from two primitives:
//   Linear    y = x W + b
//   OpParams  y = act(x W_e + b_e) W_p + b_p      (inverted bottleneck MLP)
// Gradients are derived by hand per primitive; there is no autodiff graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dna/errors.hpp"

namespace dna {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw DimensionError("tensor data length does not match shape");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  // Leading dimension of a matrix; 1 for vectors.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

// ---------------------------------------------------------------------------
// matrix products

// a[m,k] * b[k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw DimensionError("matmul: inner dimensions " + shape_string(a) + " * " + shape_string(b));
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    const double* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a[k,m]^T * b[k,n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) throw DimensionError("matmul_tn: " + shape_string(a) + "^T * " + shape_string(b));
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a.data() + p * m;
    const double* br = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a[m,k] * b[n,k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw DimensionError("matmul_nt: " + shape_string(a) + " * " + shape_string(b) + "^T");
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out.at(i, j) = s;
    }
  }
  return out;
}

inline void add_row_bias(Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n) throw DimensionError("bias length " + std::to_string(bias.size()) + " vs " + std::to_string(n));
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) x.at(i, j) += bias[j];
}

inline Tensor column_sums(const Tensor& x) {
  Tensor out({x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
  return out;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * x.cols(), x.cols(), out.data() + i * x.cols());
  return out;
}

// ---------------------------------------------------------------------------
// seeds and random numbers

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent child seed for a named sub-job.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ (tag * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) h = (h ^ c) * 1099511628211ULL;
  return derive_seed(seed, h);
}

using Rng = std::mt19937_64;

// Uniform integer in [0, n) from raw engine output; identical on every standard library.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do v = rng(); while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

// ---------------------------------------------------------------------------
// optimisation

struct TrainHyper {
  double lr = 0.005;
  int epochs = 10;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double lr_decay = 1.0;  // multiplied into lr after every epoch
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
    if (epochs < 1) throw ContractError("epochs must be >= 1");
    if (batch_size < 1) throw ContractError("batch size must be >= 1");
  }
};

struct AdamMoments {
  std::vector<double> m, v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update. Weight decay enters as the gradient of an L2 term.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamMoments& state,
                      const TrainHyper& hyper, double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads length mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state length mismatch");
  const std::int64_t t = state.step + 1;
  for (double g : grads)
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient", t);
  state.step = t;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + hyper.weight_decay * params[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

// Trainable tensor with its gradient accumulator and optimiser moments.
struct Param {
  Tensor value;
  Tensor grad;
  AdamMoments adam;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
  void accumulate(const Tensor& g) { add_inplace(grad, g); }
  void step(const TrainHyper& hyper, double lr) { adam_step(value.span(), grad.span(), adam, hyper, lr); }
};

// ---------------------------------------------------------------------------
// losses

// (1/K) * ||y - yhat||^2 with K the element count.
inline double mse(const Tensor& y, const Tensor& yhat) {
  require_same_shape(y, yhat, "mse");
  if (y.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

// d mse / d yhat
inline Tensor mse_grad(const Tensor& y, const Tensor& yhat) {
  require_same_shape(y, yhat, "mse_grad");
  Tensor g(yhat.shape());
  const double k = 2.0 / static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = k * (yhat[i] - y[i]);
  return g;
}

// ---------------------------------------------------------------------------
// linear map

struct Linear {
  Param weight;  // [in, out]
  Param bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight(Tensor::matrix(in, out)), bias(Tensor({out})) {}

  std::size_t in() const { return weight.value.rows(); }
  std::size_t out() const { return weight.value.cols(); }
  std::size_t param_count() const { return weight.value.size() + bias.value.size(); }
  std::size_t macs() const { return weight.value.size(); }

  void init(Rng& rng, double gain = 1.0) {
    const double scale = gain / std::sqrt(static_cast<double>(in()));
    for (double& w : weight.value.values()) w = scale * standard_normal(rng);
    bias.value.fill(0.0);
  }
  void zero_grad() { weight.zero_grad(); bias.zero_grad(); }
  void step(const TrainHyper& h, double lr) { weight.step(h, lr); bias.step(h, lr); }
};

inline Tensor linear_forward(const Linear& l, const Tensor& x) {
  if (x.cols() != l.in())
    throw DimensionError("linear: input width " + std::to_string(x.cols()) + " vs " + std::to_string(l.in()));
  Tensor y = matmul(x, l.weight.value);
  add_row_bias(y, l.bias.value);
  return y;
}

// Accumulates parameter gradients into l; returns dX.
inline Tensor linear_backward(Linear& l, const Tensor& x, const Tensor& dy) {
  if (dy.cols() != l.out() || dy.rows() != x.rows()) throw DimensionError("linear_backward: dY shape");
  l.weight.accumulate(matmul_tn(x, dy));
  l.bias.accumulate(column_sums(dy));
  return matmul_nt(dy, l.weight.value);
}

// ---------------------------------------------------------------------------
// candidate operation

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ContractError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double v) { return a == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v); }

// Derivative given the pre-activation value.
inline double activate_grad(Activation a, double pre) {
  if (a == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

// Abstract catalog entry.
struct OpDesc {
  int expansion = 2;
  Activation activation = Activation::relu;

  friend bool operator==(const OpDesc&, const OpDesc&) = default;
  std::string name() const { return "e" + std::to_string(expansion) + "_" + std::string(to_string(activation)); }
};

// Analytic parameter count of an op mapping in -> out at expansion e.
inline std::size_t op_param_count(std::size_t in, std::size_t out, int expansion) {
  const std::size_t hidden = static_cast<std::size_t>(expansion) * out;
  return in * hidden + hidden + hidden * out + out;
}

inline std::size_t op_macs(std::size_t in, std::size_t out, int expansion) {
  const std::size_t hidden = static_cast<std::size_t>(expansion) * out;
  return in * hidden + hidden * out;
}

struct OpParams {
  OpDesc desc;
  Param expand_w;   // [in, e*out]
  Param expand_b;   // [e*out]
  Param project_w;  // [e*out, out]
  Param project_b;  // [out]

  OpParams() = default;
  OpParams(OpDesc d, std::size_t in, std::size_t out)
      : desc(d),
        expand_w(Tensor::matrix(in, static_cast<std::size_t>(d.expansion) * out)),
        expand_b(Tensor({static_cast<std::size_t>(d.expansion) * out})),
        project_w(Tensor::matrix(static_cast<std::size_t>(d.expansion) * out, out)),
        project_b(Tensor({out})) {
    if (d.expansion < 1) throw ContractError("expansion rate must be >= 1");
  }

  std::size_t in() const { return expand_w.value.rows(); }
  std::size_t out() const { return project_w.value.cols(); }
  std::size_t hidden() const { return expand_w.value.cols(); }
  std::size_t param_count() const {
    return expand_w.value.size() + expand_b.value.size() + project_w.value.size() + project_b.value.size();
  }

  // project_gain < 1 starts a residual branch close to identity.
  void init(Rng& rng, double project_gain = 1.0) {
    const double g1 = desc.activation == Activation::relu ? std::sqrt(2.0) : 1.0;
    const double s1 = g1 / std::sqrt(static_cast<double>(in()));
    const double s2 = project_gain / std::sqrt(static_cast<double>(hidden()));
    for (double& w : expand_w.value.values()) w = s1 * standard_normal(rng);
    for (double& w : project_w.value.values()) w = s2 * standard_normal(rng);
    expand_b.value.fill(0.0);
    project_b.value.fill(0.0);
  }

  void zero_grad() {
    expand_w.zero_grad();
    expand_b.zero_grad();
    project_w.zero_grad();
    project_b.zero_grad();
  }
  void step(const TrainHyper& h, double lr) {
    expand_w.step(h, lr);
    expand_b.step(h, lr);
    project_w.step(h, lr);
    project_b.step(h, lr);
  }
};

struct OpGrads {
  Tensor expand_w, expand_b, project_w, project_b;
};

struct OpBackward {
  OpGrads grads;
  Tensor dx;
};

// Intermediate values kept for the backward pass.
struct OpCache {
  Tensor pre;     // x W_e + b_e
  Tensor hidden;  // act(pre)
};

inline Tensor op_forward(const OpParams& op, const Tensor& x, OpCache* cache = nullptr) {
  if (x.cols() != op.in())
    throw DimensionError("op_forward: input width " + std::to_string(x.cols()) + " vs " + std::to_string(op.in()));
  Tensor pre = matmul(x, op.expand_w.value);
  add_row_bias(pre, op.expand_b.value);
  Tensor hidden(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = activate(op.desc.activation, pre[i]);
  Tensor y = matmul(hidden, op.project_w.value);
  add_row_bias(y, op.project_b.value);
  if (cache) {
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

inline OpBackward op_backward(const OpParams& op, const Tensor& x, const Tensor& dy, const OpCache* cache = nullptr) {
  if (x.cols() != op.in()) throw DimensionError("op_backward: input width");
  if (dy.cols() != op.out() || dy.rows() != x.rows())
    throw DimensionError("op_backward: dY shape " + shape_string(dy) + " vs output [" + std::to_string(x.rows()) +
                         "x" + std::to_string(op.out()) + "]");
  OpCache local;
  if (!cache) {
    op_forward(op, x, &local);
    cache = &local;
  }
  OpBackward r;
  r.grads.project_w = matmul_tn(cache->hidden, dy);
  r.grads.project_b = column_sums(dy);
  Tensor dpre = matmul_nt(dy, op.project_w.value);
  for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= activate_grad(op.desc.activation, cache->pre[i]);
  r.grads.expand_w = matmul_tn(x, dpre);
  r.grads.expand_b = column_sums(dpre);
  r.dx = matmul_nt(dpre, op.expand_w.value);
  return r;
}

inline void accumulate(OpParams& op, const OpGrads& g) {
  op.expand_w.accumulate(g.expand_w);
  op.expand_b.accumulate(g.expand_b);
  op.project_w.accumulate(g.project_w);
  op.project_b.accumulate(g.project_b);
}

}  // namespace dna
