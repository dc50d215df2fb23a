#pragma once

// DNA+ (searched architecture, scaled up, becomes the next teacher) and DNA++
// (teacher block and student supernet trained jointly with self-supervised losses).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dna/distill.hpp"
#include "dna/errors.hpp"
#include "dna/network.hpp"
#include "dna/numkernel.hpp"
#include "dna/parallel.hpp"
#include "dna/pipeline.hpp"
#include "dna/rate.hpp"
#include "dna/search.hpp"
#include "dna/space.hpp"

namespace dna {

// ---------------------------------------------------------------------------
// DNA+

namespace detail {
// ceil that ignores floating noise just above an integer, so 8 * 1.5 stays 12
inline std::size_t tolerant_ceil(double v) { return static_cast<std::size_t>(std::ceil(v - 1e-9)); }
}  // namespace detail

inline NetSpec scale_arch(const SearchSpace& space, const Architecture& arch, double depth_mult, double width_mult) {
  if (!(depth_mult >= 1.0) || !(width_mult >= 1.0)) throw ContractError("scaling multipliers must be >= 1");
  NetSpec spec = net_spec_for(space, arch);
  for (auto& plan : spec.blocks) {
    const std::size_t depth = detail::tolerant_ceil(static_cast<double>(plan.ops.size()) * depth_mult);
    std::vector<OpDesc> ops;
    for (std::size_t l = 0; l < depth; ++l) ops.push_back(plan.ops[l % plan.ops.size()]);
    plan.ops = std::move(ops);
    plan.width = detail::tolerant_ceil(static_cast<double>(plan.width) * width_mult);
  }
  return spec;
}

struct PlusConfig {
  TeacherConfig teacher;  // generation 0; later generations reuse its training settings
  DnaConfig dna;
  double depth_mult = 1.5;
  double width_mult = 1.5;
};

struct GenerationState {
  int generation = 0;
  NetSpec teacher_spec;
  double teacher_val_loss = 0.0;
  Architecture searched;
  double search_score = 0.0;
  std::vector<LocalScoreList> lists;
};

// Seed of generation m; generation 0 uses the base seed so one generation is plain DNA.
inline std::uint64_t generation_seed(std::uint64_t seed, int m) {
  return m == 0 ? seed : derive_seed(seed, "generation-" + std::to_string(m));
}

inline std::vector<GenerationState> dna_plus_run(const SearchSpace& space, const CostLUT& lut, const SyntheticTask& task,
                                                 const PlusConfig& cfg, int generations, std::uint64_t seed) {
  if (generations < 1) throw ContractError("DNA+ needs at least one generation");
  std::vector<GenerationState> out;
  TeacherConfig tcfg = cfg.teacher;
  for (int m = 0; m < generations; ++m) {
    const std::uint64_t gseed = generation_seed(seed, m);
    const std::string where = "generation " + std::to_string(m) + ": ";
    try {
      const TeacherNet teacher = make_teacher(space, tcfg, task, gseed);
      const FeatureCache cache = extract_features(teacher.net, task);
      DnaRun run = run_dna(space, lut, cache, cfg.dna, gseed);
      if (!run.search) traverse_search(space, run.lists, lut, cfg.dna.constraint, cfg.dna.lambdas_for(space));
      GenerationState g;
      g.generation = m;
      g.teacher_spec = tcfg.spec;
      g.teacher_val_loss = teacher.fit.val_loss;
      g.searched = run.search->arch;
      g.search_score = run.search->score;
      g.lists = std::move(run.lists);
      tcfg.spec = scale_arch(space, g.searched, cfg.depth_mult, cfg.width_mult);
      out.push_back(std::move(g));
    } catch (const TrainingError& e) {
      throw TrainingError(where + e.what(), e.step);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(where + e.what(), e.min_cost);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// DNA++ losses

struct SSLHyper {
  double lambda1 = 25.0;
  double lambda2 = 1.0;
  double lambda3 = 25.0;
  double gamma = 1.0;
  double eps = 1e-4;
  std::size_t projector_width = 16;

  void validate() const {
    if (!(lambda1 > 0 && lambda2 > 0 && lambda3 >= 0)) throw ContractError("SSL loss weights must be non-negative, lambda1 and lambda2 positive");
    if (!(eps > 0.0)) throw ContractError("SSL eps must be positive");
    if (!(gamma > std::sqrt(eps))) throw ContractError("SSL gamma must exceed sqrt(eps)");
    if (projector_width < 1) throw ContractError("projector width must be >= 1");
  }
};

struct BatchSizeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_batch(const Tensor& z, const char* what) {
  if (z.rows() < 2) throw BatchSizeError(std::string(what) + ": needs at least 2 rows, got " + std::to_string(z.rows()));
}

inline Tensor centered(const Tensor& z) {
  Tensor c = z;
  const double m = static_cast<double>(z.rows());
  for (std::size_t j = 0; j < z.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) mean += z.at(i, j);
    mean /= m;
    for (std::size_t i = 0; i < z.rows(); ++i) c.at(i, j) -= mean;
  }
  return c;
}

// Unbiased covariance with its diagonal zeroed.
inline Tensor offdiag_cov(const Tensor& zc) {
  Tensor cov = matmul_tn(zc, zc);
  const double s = 1.0 / static_cast<double>(zc.rows() - 1);
  for (double& v : cov.values()) v *= s;
  for (std::size_t j = 0; j < cov.cols(); ++j) cov.at(j, j) = 0.0;
  return cov;
}

inline double sq_sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

// Unbiased per-column variance.
inline std::vector<double> column_variance(const Tensor& z) {
  const Tensor c = centered(z);
  std::vector<double> var(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) var[j] += c.at(i, j) * c.at(i, j);
  for (double& v : var) v /= static_cast<double>(z.rows() - 1);
  return var;
}

}  // namespace detail

// lambda1/M * sum ||Z - Zhat||^2 + lambda2/C * (||offdiag Cov Z||^2 + ||offdiag Cov Zhat||^2)
inline double ssl_loss(const Tensor& z, const Tensor& zhat, const SSLHyper& h) {
  require_same_shape(z, zhat, "ssl_loss");
  detail::require_batch(z, "ssl_loss");
  const double m = static_cast<double>(z.rows());
  const double c = static_cast<double>(z.cols());
  double dist = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) dist += (z[i] - zhat[i]) * (z[i] - zhat[i]);
  const double cov = detail::sq_sum(detail::offdiag_cov(detail::centered(z))) +
                     detail::sq_sum(detail::offdiag_cov(detail::centered(zhat)));
  return h.lambda1 / m * dist + h.lambda2 / c * cov;
}

struct PairGrad {
  Tensor dz;
  Tensor dzhat;
};

inline PairGrad ssl_loss_grad(const Tensor& z, const Tensor& zhat, const SSLHyper& h) {
  require_same_shape(z, zhat, "ssl_loss_grad");
  detail::require_batch(z, "ssl_loss_grad");
  const double m = static_cast<double>(z.rows());
  const double c = static_cast<double>(z.cols());
  PairGrad g{Tensor(z.shape()), Tensor(z.shape())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    g.dz[i] = 2.0 * h.lambda1 / m * (z[i] - zhat[i]);
    g.dzhat[i] = -g.dz[i];
  }
  auto cov_grad = [&](const Tensor& t, Tensor& into) {
    const Tensor tc = detail::centered(t);
    const Tensor d = matmul(tc, detail::offdiag_cov(tc));
    const double s = h.lambda2 / c * 4.0 / (m - 1.0);
    for (std::size_t i = 0; i < d.size(); ++i) into[i] += s * d[i];
  };
  cov_grad(z, g.dz);
  cov_grad(zhat, g.dzhat);
  return g;
}

// lambda3/C * sum_c max(0, gamma - sqrt(Var_c + eps))
inline double sdr_loss(const Tensor& z, const SSLHyper& h) {
  detail::require_batch(z, "sdr_loss");
  double s = 0.0;
  for (double v : detail::column_variance(z)) s += std::max(0.0, h.gamma - std::sqrt(v + h.eps));
  return h.lambda3 / static_cast<double>(z.cols()) * s;
}

inline Tensor sdr_loss_grad(const Tensor& z, const SSLHyper& h) {
  detail::require_batch(z, "sdr_loss_grad");
  const auto var = detail::column_variance(z);
  const Tensor zc = detail::centered(z);
  const double m = static_cast<double>(z.rows());
  Tensor g(z.shape());
  for (std::size_t j = 0; j < z.cols(); ++j) {
    const double sd = std::sqrt(var[j] + h.eps);
    if (!(h.gamma - sd > 0.0)) continue;
    const double s = -h.lambda3 / static_cast<double>(z.cols()) / sd / (m - 1.0);
    for (std::size_t i = 0; i < z.rows(); ++i) g.at(i, j) = s * zc.at(i, j);
  }
  return g;
}

inline std::vector<double> channel_stds(const Tensor& z) {
  auto v = detail::column_variance(z);
  for (double& x : v) x = std::sqrt(x);
  return v;
}

// ---------------------------------------------------------------------------
// projector and joint training

// Two-layer MLP: Linear -> relu -> Linear.
struct Projector {
  Linear first;
  Linear second;

  Projector() = default;
  Projector(std::size_t in, std::size_t width, Rng& rng) : first(in, width), second(width, width) {
    first.init(rng, std::sqrt(2.0));
    second.init(rng);
  }

  struct Trace {
    Tensor x, pre;
  };

  Tensor forward(const Tensor& x, Trace* trace = nullptr) const {
    Tensor pre = linear_forward(first, x);
    Tensor h = pre;
    for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    if (trace) *trace = {x, std::move(pre)};
    return linear_forward(second, h);
  }

  Tensor backward(const Trace& t, const Tensor& dy) {
    Tensor h = t.pre;
    for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    Tensor dh = linear_backward(second, h, dy);
    for (std::size_t i = 0; i < dh.size(); ++i)
      if (!(t.pre[i] > 0.0)) dh[i] = 0.0;
    return linear_backward(first, t.x, dh);
  }

  void zero_grad() {
    first.zero_grad();
    second.zero_grad();
  }
  void step(const TrainHyper& h, double lr) {
    first.step(h, lr);
    second.step(h, lr);
  }
};

struct SSLConfig {
  SSLHyper loss;
  TrainHyper hyper{.lr = 0.002, .epochs = 10, .batch_size = 64, .lr_decay = 0.9};
  double noise = 0.1;
  double dropout = 0.1;
  bool symmetric = false;  // also route view 2 to the teacher and view 1 to the student
  std::size_t steps_per_epoch = 0;

  void validate() const {
    loss.validate();
    hyper.validate();
    if (hyper.batch_size < 2) throw BatchSizeError("SSL training needs batches of at least 2 rows");
    if (!(noise >= 0.0) || !(dropout >= 0.0 && dropout < 1.0)) throw ContractError("invalid augmentation settings");
  }
};

// Additive Gaussian noise, then each coordinate zeroed with probability p.
inline Tensor augment(const Tensor& x, double noise, double dropout, Rng& rng) {
  Tensor v = x;
  for (double& e : v.values()) {
    e += noise * standard_normal(rng);
    if (uniform01(rng) < dropout) e = 0.0;
  }
  return v;
}

// One block of DNA++: the teacher block, the student supernet block, and a projector per branch.
struct SSLBlock {
  CellNet teacher;
  SupernetBlock student;
  Projector teacher_head;
  Projector student_head;
};

inline SSLBlock make_ssl_block(const SearchSpace& space, std::size_t k, const CellNet& teacher_block,
                               const SSLHyper& h, std::uint64_t seed) {
  SSLBlock b{teacher_block, make_supernet_block(space, k, seed), {}, {}};
  Rng rng(derive_seed(seed, "projectors-" + std::to_string(k)));
  const std::size_t width = space.block(k).out_width;
  b.teacher_head = Projector(width, h.projector_width, rng);
  b.student_head = Projector(width, h.projector_width, rng);
  return b;
}

struct SSLTrainResult {
  std::vector<double> loss_trace;  // mean total loss per epoch
  std::vector<double> teacher_stds;  // per channel of Z on the evaluation rows, after training
  std::vector<double> student_stds;  // same for the student branch along the first canonical path
};

inline double ssl_total(const Tensor& z, const Tensor& zhat, const SSLHyper& h) {
  return ssl_loss(z, zhat, h) + sdr_loss(z, h) + sdr_loss(zhat, h);
}

inline SSLTrainResult train_block_ssl(SSLBlock& b, const Tensor& inputs,
                                      std::span<const std::size_t> train_rows, std::span<const std::size_t> eval_rows,
                                      const SSLConfig& cfg, std::uint64_t seed, const PathSampler& sampler = {}) {
  cfg.validate();
  if (train_rows.size() < 2) throw BatchSizeError("SSL training needs at least 2 rows");
  if (inputs.cols() != b.student.spec.in_width) throw DimensionError("SSL inputs do not match block width");
  Rng rng(derive_seed(seed, "ssl-block-" + std::to_string(b.student.index)));
  std::vector<std::size_t> rows(train_rows.begin(), train_rows.end());
  const std::size_t bs = cfg.hyper.batch_size;
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (rows.size() + bs - 1) / bs;
  const SSLHyper& h = cfg.loss;

  SSLTrainResult r;
  PathRef tpath = b.teacher.path();
  PathTrace ttrace, strace;
  Projector::Trace tht, sht;
  double lr = cfg.hyper.lr;
  std::size_t cursor = rows.size();
  std::int64_t step = 0;

  // Forward both branches on one routing, accumulate gradients scaled by w.
  auto routed = [&](const PathRef& spath, const Tensor& tv, const Tensor& sv, double w) {
    const Tensor z = b.teacher_head.forward(path_forward(tpath, tv, &ttrace), &tht);
    const Tensor zhat = b.student_head.forward(path_forward(spath, sv, &strace), &sht);
    const double loss = ssl_total(z, zhat, h);
    PairGrad g = ssl_loss_grad(z, zhat, h);
    add_inplace(g.dz, sdr_loss_grad(z, h));
    add_inplace(g.dzhat, sdr_loss_grad(zhat, h));
    for (double& v : g.dz.values()) v *= w;
    for (double& v : g.dzhat.values()) v *= w;
    path_backward(tpath, ttrace, b.teacher_head.backward(tht, g.dz));
    path_backward(spath, strace, b.student_head.backward(sht, g.dzhat));
    return loss;
  };

  for (int epoch = 0; epoch < cfg.hyper.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      if (cursor >= rows.size()) {
        shuffle_indices(rows, rng);
        cursor = 0;
      }
      std::size_t end = std::min(rows.size(), cursor + bs);
      if (end - cursor < 2) {
        shuffle_indices(rows, rng);
        cursor = 0;
        end = std::min(rows.size(), bs);
      }
      std::span<const std::size_t> batch(rows.data() + cursor, end - cursor);
      cursor = end;
      const BlockArch a = sampler ? sampler(b.student.spec, rng) : sample_path(b.student.spec, rng);
      PathRef spath = b.student.path(a);
      const Tensor x = select_rows(inputs, batch);
      const Tensor v1 = augment(x, cfg.noise, cfg.dropout, rng);
      const Tensor v2 = augment(x, cfg.noise, cfg.dropout, rng);

      path_zero_grad(tpath);
      path_zero_grad(spath);
      b.teacher_head.zero_grad();
      b.student_head.zero_grad();
      double loss = 0.0;
      if (cfg.symmetric) {
        loss = 0.5 * routed(spath, v1, v2, 0.5);
        loss += 0.5 * routed(spath, v2, v1, 0.5);
      } else {
        loss = routed(spath, v1, v2, 1.0);
      }
      ++step;
      if (!std::isfinite(loss)) throw TrainingError("non-finite SSL loss in block " + std::to_string(b.student.index), step);
      path_step(tpath, cfg.hyper, lr);
      path_step(spath, cfg.hyper, lr);
      b.teacher_head.step(cfg.hyper, lr);
      b.student_head.step(cfg.hyper, lr);
      loss_sum += loss;
    }
    lr *= cfg.hyper.lr_decay;
    r.loss_trace.push_back(loss_sum / static_cast<double>(steps));
  }

  const Tensor ex = select_rows(inputs, eval_rows);
  r.teacher_stds = channel_stds(b.teacher_head.forward(b.teacher.forward(ex)));
  BlockArch first;
  first.cell = 0;
  first.ops.assign(b.student.spec.cells[0].depth, 0);
  for (std::size_t l = 0; l < first.ops.size(); ++l) first.ops[l] = b.student.spec.cells[0].allowed[l][0];
  r.student_stds = channel_stds(b.student_head.forward(path_forward(b.student.path(first), ex)));
  return r;
}

// Rating after joint training: student outputs and teacher outputs are compared in
// their projector spaces, where the SSL loss aligned them.
inline LocalScoreList rate_ssl_block(const SearchSpace& space, const SSLBlock& b, const Tensor& val_inputs,
                                     const CostLUT& lut, RateStats* stats = nullptr) {
  const Tensor targets = b.teacher_head.forward(b.teacher.forward(val_inputs));
  const Projector& head = b.student_head;
  return rate_block(space, b.student, val_inputs, targets, lut, stats, [&](const Tensor& y) { return head.forward(y); });
}

struct SSLRun {
  std::vector<SSLBlock> blocks;
  std::vector<SSLTrainResult> results;
  std::vector<LocalScoreList> lists;
  std::optional<SearchResult> search;
};

// DNA++: block inputs are the initial teacher's features; each teacher block is trained
// jointly with its student supernet block, no labels involved.
inline SSLRun run_dna_ssl(const SearchSpace& space, const CostLUT& lut, const FixedNet& teacher,
                          const FeatureCache& cache, const SSLConfig& cfg, const DnaConfig& search_cfg,
                          std::uint64_t seed) {
  if (teacher.blocks.size() != space.num_blocks()) throw ContractError("teacher block count does not match space");
  check_teacher_partition(space, teacher.spec);
  SSLRun r;
  for (std::size_t k = 0; k < space.num_blocks(); ++k)
    r.blocks.push_back(make_ssl_block(space, k, teacher.blocks[k], cfg.loss, derive_seed(seed, "ssl-supernet")));
  r.results.resize(space.num_blocks());
  run_jobs(space.num_blocks(), search_cfg.workers, [&](std::size_t k) {
    r.results[k] = train_block_ssl(r.blocks[k], cache.blocks[k].inputs, cache.train_rows, cache.val_rows, cfg,
                                   derive_seed(seed, "ssl-train"));
  });
  for (std::size_t k = 0; k < space.num_blocks(); ++k) {
    auto list = rate_ssl_block(space, r.blocks[k], cache.val_inputs(k), lut);
    list.seed = seed;
    r.lists.push_back(std::move(list));
  }
  try {
    r.search = traverse_search(space, r.lists, lut, search_cfg.constraint, search_cfg.lambdas_for(space));
  } catch (const InfeasibleError&) {
    r.search.reset();
  }
  return r;
}

}  // namespace dna
