#pragma once

// Run configuration (JSON), configuration hashes, and on-disk formats:
// comma-delimited tables and raw little-endian float64 weight blobs with JSON manifests.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dna/bench.hpp"
#include "dna/distill.hpp"
#include "dna/errors.hpp"
#include "dna/evolve.hpp"
#include "dna/network.hpp"
#include "dna/pipeline.hpp"
#include "dna/rate.hpp"
#include "dna/search.hpp"
#include "dna/space.hpp"

namespace dna {

using Json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration

struct SweepConfig {
  std::vector<std::size_t> op_counts{2, 4, 8};
  std::vector<double> fractions{1.0, 0.8, 0.4};
  Constraint stability_constraint;
};

struct RunConfig {
  std::uint64_t seed = 1;
  TaskSpec task;
  SearchSpace space;
  std::vector<OpDesc> full_catalog;  // catalog the theorem-1 sweep draws nested subsets from
  TeacherConfig teacher;
  DistillConfig distill;
  WholeNetConfig wholenet;
  BenchConfig bench;
  std::vector<double> lambdas;
  Constraint constraint;
  std::vector<Constraint> budgets;
  double depth_mult = 1.5;
  double width_mult = 1.5;
  int generations = 2;
  SSLConfig ssl;
  SweepConfig sweeps;
  unsigned workers = 1;
  std::string out = "run";

  DnaConfig dna() const {
    DnaConfig c;
    c.distill = distill;
    c.lambdas = lambdas;
    c.constraint = constraint;
    c.workers = workers;
    return c;
  }
  PlusConfig plus() const { return {teacher, dna(), depth_mult, width_mult}; }
  std::vector<double> lambdas_for_space() const { return dna().lambdas_for(space); }
  SearchSpace full_space() const {
    std::vector<BlockSpec> blocks = space.blocks();
    for (auto& b : blocks)
      for (auto& c : b.cells) c.allowed.clear();
    return SearchSpace(full_catalog.empty() ? space.catalog() : full_catalog, std::move(blocks));
  }
};

namespace detail {

// Reads fields of one JSON object, remembering its path for error messages and
// rejecting keys nobody asked for.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return fallback;
    return read<T>(key);
  }
  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing required field");
    return read<T>(key);
  }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_[key].is_null();
  }
  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return path_ + "." + key; }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown field");
  }

 private:
  template <class T>
  T read(const std::string& key) {
    try {
      return j_[key].get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check(bool ok, const std::string& where, const std::string& what) {
  if (!ok) throw ConfigError(where + ": " + what);
}

inline OpDesc parse_op(const Json& j, const std::string& path) {
  Fields f(j, path);
  OpDesc d;
  d.expansion = f.require<int>("expansion");
  check(d.expansion >= 1, f.path("expansion"), "must be >= 1");
  const auto act = f.require<std::string>("activation");
  try {
    d.activation = parse_activation(act);
  } catch (const ContractError&) {
    throw ConfigError(f.path("activation") + ": must be relu or tanh");
  }
  f.finish();
  return d;
}

inline std::vector<OpDesc> parse_ops(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<OpDesc> ops;
  for (std::size_t i = 0; i < j.size(); ++i) ops.push_back(parse_op(j[i], path + "[" + std::to_string(i) + "]"));
  return ops;
}

inline TrainHyper parse_hyper(const Json& j, const std::string& path, TrainHyper h) {
  Fields f(j, path);
  h.lr = f.get("lr", h.lr);
  h.epochs = f.get("epochs", h.epochs);
  h.batch_size = f.get("batch_size", h.batch_size);
  h.beta1 = f.get("beta1", h.beta1);
  h.beta2 = f.get("beta2", h.beta2);
  h.eps = f.get("eps", h.eps);
  h.weight_decay = f.get("weight_decay", h.weight_decay);
  h.lr_decay = f.get("lr_decay", h.lr_decay);
  f.finish();
  check(h.lr > 0, f.path("lr"), "must be positive");
  check(h.epochs >= 1, f.path("epochs"), "must be >= 1");
  check(h.batch_size >= 1, f.path("batch_size"), "must be >= 1");
  check(h.beta1 >= 0 && h.beta1 < 1 && h.beta2 >= 0 && h.beta2 < 1, path, "betas must lie in [0, 1)");
  check(h.eps > 0, f.path("eps"), "must be positive");
  check(h.weight_decay >= 0, f.path("weight_decay"), "must be >= 0");
  check(h.lr_decay > 0, f.path("lr_decay"), "must be positive");
  return h;
}

inline Json hyper_json(const TrainHyper& h) {
  return {{"lr", h.lr},       {"epochs", h.epochs}, {"batch_size", h.batch_size},     {"beta1", h.beta1},
          {"beta2", h.beta2}, {"eps", h.eps},       {"weight_decay", h.weight_decay}, {"lr_decay", h.lr_decay}};
}

inline Json op_json(const OpDesc& d) { return {{"expansion", d.expansion}, {"activation", to_string(d.activation)}}; }

inline Json ops_json(const std::vector<OpDesc>& ops) {
  Json a = Json::array();
  for (const auto& d : ops) a.push_back(op_json(d));
  return a;
}

inline Constraint parse_constraint(Fields& f) {
  Constraint c;
  if (f.has("max_params")) c.max_params = f.get<double>("max_params", 0);
  if (f.has("max_macs")) c.max_macs = f.get<double>("max_macs", 0);
  check(!c.max_params || *c.max_params > 0, f.path("max_params"), "must be positive");
  check(!c.max_macs || *c.max_macs > 0, f.path("max_macs"), "must be positive");
  return c;
}

inline Json constraint_json(const Constraint& c) {
  Json j = Json::object();
  j["max_params"] = c.max_params ? Json(*c.max_params) : Json(nullptr);
  j["max_macs"] = c.max_macs ? Json(*c.max_macs) : Json(nullptr);
  return j;
}

inline SearchSpace parse_space(const Json& j, const std::string& path, std::vector<OpDesc>& full_catalog) {
  Fields f(j, path);
  auto catalog = parse_ops(f.raw("catalog"), f.path("catalog"));
  check(!catalog.empty(), f.path("catalog"), "must not be empty");
  if (f.has("full_catalog")) {
    full_catalog = parse_ops(f.raw("full_catalog"), f.path("full_catalog"));
    check(full_catalog.size() >= catalog.size() &&
              std::equal(catalog.begin(), catalog.end(), full_catalog.begin()),
          f.path("full_catalog"), "must start with the search catalog");
  }
  const Json& blocks = f.raw("blocks");
  check(blocks.is_array() && !blocks.empty(), f.path("blocks"), "expected a non-empty array");
  std::vector<BlockSpec> specs;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const std::string bp = f.path("blocks") + "[" + std::to_string(k) + "]";
    Fields bf(blocks[k], bp);
    BlockSpec b;
    b.in_width = bf.require<std::size_t>("in_width");
    b.out_width = bf.require<std::size_t>("out_width");
    const Json& cells = bf.raw("cells");
    check(cells.is_array() && !cells.empty(), bf.path("cells"), "expected a non-empty array");
    for (std::size_t c = 0; c < cells.size(); ++c) {
      Fields cf(cells[c], bf.path("cells") + "[" + std::to_string(c) + "]");
      CellSpec cs;
      cs.depth = cf.require<std::size_t>("depth");
      cs.width = cf.require<std::size_t>("width");
      cs.allowed = cf.get("allowed", std::vector<std::vector<int>>{});
      cf.finish();
      b.cells.push_back(std::move(cs));
    }
    bf.finish();
    specs.push_back(std::move(b));
  }
  f.finish();
  try {
    return SearchSpace(std::move(catalog), std::move(specs));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline Json space_json(const SearchSpace& s, const std::vector<OpDesc>& full_catalog) {
  Json blocks = Json::array();
  for (const auto& b : s.blocks()) {
    Json cells = Json::array();
    for (const auto& c : b.cells) cells.push_back({{"depth", c.depth}, {"width", c.width}, {"allowed", c.allowed}});
    blocks.push_back({{"in_width", b.in_width}, {"out_width", b.out_width}, {"cells", cells}});
  }
  Json j{{"catalog", ops_json(s.catalog())}, {"blocks", blocks}};
  j["full_catalog"] = full_catalog.empty() ? Json(nullptr) : ops_json(full_catalog);
  return j;
}

}  // namespace detail

inline RunConfig parse_config(const Json& j) {
  using detail::check;
  RunConfig c;
  detail::Fields f(j, "config");
  c.seed = f.get<std::uint64_t>("seed", c.seed);
  c.workers = f.get<unsigned>("workers", c.workers);
  c.out = f.get<std::string>("out", c.out);

  if (f.has("task")) {
    detail::Fields t(f.raw("task"), f.path("task"));
    c.task.seed = t.get("seed", c.task.seed);
    c.task.rows = t.get("rows", c.task.rows);
    c.task.input_dim = t.get("input_dim", c.task.input_dim);
    c.task.output_dim = t.get("output_dim", c.task.output_dim);
    c.task.oracle_widths = t.get("oracle_widths", c.task.oracle_widths);
    c.task.noise = t.get("noise", c.task.noise);
    c.task.val_fraction = t.get("val_fraction", c.task.val_fraction);
    t.finish();
    check(c.task.rows >= 4, t.path("rows"), "must be >= 4");
    check(c.task.input_dim >= 1 && c.task.output_dim >= 1, f.path("task"), "dimensions must be >= 1");
    check(c.task.noise >= 0, t.path("noise"), "must be >= 0");
    check(c.task.val_fraction > 0 && c.task.val_fraction < 1, t.path("val_fraction"), "must lie in (0, 1)");
  }

  c.space = detail::parse_space(f.raw("space"), f.path("space"), c.full_catalog);
  check(c.space.block(0).in_width == c.task.input_dim, f.path("space"), "first block input width must equal task.input_dim");
  check(c.space.blocks().back().out_width == c.task.output_dim, f.path("space"),
        "last block output width must equal task.output_dim");

  {
    detail::Fields t(f.raw("teacher"), f.path("teacher"));
    const Json& blocks = t.raw("blocks");
    check(blocks.is_array() && blocks.size() == c.space.num_blocks(), t.path("blocks"), "need one entry per space block");
    c.teacher.spec.io_widths.push_back(c.space.block(0).in_width);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      detail::Fields bf(blocks[k], t.path("blocks") + "[" + std::to_string(k) + "]");
      CellPlan plan;
      plan.width = bf.require<std::size_t>("width");
      plan.ops = detail::parse_ops(bf.raw("ops"), bf.path("ops"));
      check(plan.width >= 1 && !plan.ops.empty(), t.path("blocks") + "[" + std::to_string(k) + "]",
            "width and ops must be non-empty");
      bf.finish();
      c.teacher.spec.blocks.push_back(std::move(plan));
      c.teacher.spec.io_widths.push_back(c.space.block(k).out_width);
    }
    if (t.has("train")) c.teacher.hyper = detail::parse_hyper(t.raw("train"), t.path("train"), c.teacher.hyper);
    c.teacher.patience = t.get("patience", c.teacher.patience);
    t.finish();
  }

  if (f.has("distill")) {
    detail::Fields d(f.raw("distill"), f.path("distill"));
    if (d.has("train")) c.distill.hyper = detail::parse_hyper(d.raw("train"), d.path("train"), c.distill.hyper);
    c.distill.lr_first = d.get("lr_first", c.distill.lr_first);
    c.distill.lr_rest = d.get("lr_rest", c.distill.lr_rest);
    c.distill.steps_per_epoch = d.get("steps_per_epoch", c.distill.steps_per_epoch);
    d.finish();
    check(c.distill.lr_first > 0 && c.distill.lr_rest > 0, f.path("distill"), "learning rates must be positive");
  }
  if (f.has("wholenet")) {
    detail::Fields d(f.raw("wholenet"), f.path("wholenet"));
    if (d.has("train")) c.wholenet.hyper = detail::parse_hyper(d.raw("train"), d.path("train"), c.wholenet.hyper);
    c.wholenet.steps_per_epoch = d.get("steps_per_epoch", c.wholenet.steps_per_epoch);
    d.finish();
  }
  if (f.has("bench")) {
    detail::Fields b(f.raw("bench"), f.path("bench"));
    if (b.has("train")) c.bench.hyper = detail::parse_hyper(b.raw("train"), b.path("train"), c.bench.hyper);
    c.bench.cap = b.get("cap", c.bench.cap);
    c.bench.seed = b.get("seed", c.bench.seed);
    b.finish();
  }
  if (f.has("search")) {
    detail::Fields s(f.raw("search"), f.path("search"));
    c.lambdas = s.get("lambdas", c.lambdas);
    c.constraint = detail::parse_constraint(s);
    if (s.has("budgets")) {
      const Json& b = s.raw("budgets");
      check(b.is_array(), s.path("budgets"), "expected an array");
      for (std::size_t i = 0; i < b.size(); ++i) {
        detail::Fields bf(b[i], s.path("budgets") + "[" + std::to_string(i) + "]");
        c.budgets.push_back(detail::parse_constraint(bf));
        bf.finish();
      }
    }
    s.finish();
    check(c.lambdas.empty() || c.lambdas.size() == c.space.num_blocks(), s.path("lambdas"), "need one weight per block");
    for (double l : c.lambdas) check(l > 0, s.path("lambdas"), "weights must be positive");
  }
  if (f.has("plus")) {
    detail::Fields p(f.raw("plus"), f.path("plus"));
    c.depth_mult = p.get("depth_mult", c.depth_mult);
    c.width_mult = p.get("width_mult", c.width_mult);
    c.generations = p.get("generations", c.generations);
    p.finish();
    check(c.depth_mult >= 1 && c.width_mult >= 1, f.path("plus"), "multipliers must be >= 1");
    check(c.generations >= 1, p.path("generations"), "must be >= 1");
  }
  if (f.has("ssl")) {
    detail::Fields s(f.raw("ssl"), f.path("ssl"));
    auto& h = c.ssl.loss;
    h.lambda1 = s.get("lambda1", h.lambda1);
    h.lambda2 = s.get("lambda2", h.lambda2);
    h.lambda3 = s.get("lambda3", h.lambda3);
    h.gamma = s.get("gamma", h.gamma);
    h.eps = s.get("eps", h.eps);
    h.projector_width = s.get("projector_width", h.projector_width);
    if (s.has("train")) c.ssl.hyper = detail::parse_hyper(s.raw("train"), s.path("train"), c.ssl.hyper);
    c.ssl.noise = s.get("noise", c.ssl.noise);
    c.ssl.dropout = s.get("dropout", c.ssl.dropout);
    c.ssl.symmetric = s.get("symmetric", c.ssl.symmetric);
    c.ssl.steps_per_epoch = s.get("steps_per_epoch", c.ssl.steps_per_epoch);
    s.finish();
    try {
      c.ssl.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(f.path("ssl") + ": " + e.what());
    }
  }
  if (f.has("sweeps")) {
    detail::Fields s(f.raw("sweeps"), f.path("sweeps"));
    c.sweeps.op_counts = s.get("op_counts", c.sweeps.op_counts);
    c.sweeps.fractions = s.get("fractions", c.sweeps.fractions);
    if (s.has("stability")) {
      detail::Fields st(s.raw("stability"), s.path("stability"));
      c.sweeps.stability_constraint = detail::parse_constraint(st);
      st.finish();
    }
    s.finish();
    const std::size_t max_ops = c.full_space().catalog().size();
    for (auto n : c.sweeps.op_counts) check(n >= 2 && n <= max_ops, s.path("op_counts"), "each count must lie in [2, catalog size]");
    for (double x : c.sweeps.fractions) check(x > 0 && x <= 1, s.path("fractions"), "must lie in (0, 1]");
  }
  f.finish();
  try {
    check_teacher_partition(c.space, c.teacher.spec);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config.teacher: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// Canonical form: every field explicit, keys sorted.
inline Json config_json(const RunConfig& c) {
  using detail::hyper_json;
  Json teacher_blocks = Json::array();
  for (const auto& b : c.teacher.spec.blocks) teacher_blocks.push_back({{"width", b.width}, {"ops", detail::ops_json(b.ops)}});
  Json budgets = Json::array();
  for (const auto& b : c.budgets) budgets.push_back(detail::constraint_json(b));
  Json search = detail::constraint_json(c.constraint);
  search["lambdas"] = c.lambdas;
  search["budgets"] = budgets;
  Json stability = detail::constraint_json(c.sweeps.stability_constraint);
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"out", c.out},
      {"task",
       {{"seed", c.task.seed},
        {"rows", c.task.rows},
        {"input_dim", c.task.input_dim},
        {"output_dim", c.task.output_dim},
        {"oracle_widths", c.task.oracle_widths},
        {"noise", c.task.noise},
        {"val_fraction", c.task.val_fraction}}},
      {"space", detail::space_json(c.space, c.full_catalog)},
      {"teacher", {{"blocks", teacher_blocks}, {"train", hyper_json(c.teacher.hyper)}, {"patience", c.teacher.patience}}},
      {"distill",
       {{"train", hyper_json(c.distill.hyper)},
        {"lr_first", c.distill.lr_first},
        {"lr_rest", c.distill.lr_rest},
        {"steps_per_epoch", c.distill.steps_per_epoch}}},
      {"wholenet", {{"train", hyper_json(c.wholenet.hyper)}, {"steps_per_epoch", c.wholenet.steps_per_epoch}}},
      {"bench", {{"train", hyper_json(c.bench.hyper)}, {"cap", c.bench.cap}, {"seed", c.bench.seed}}},
      {"search", search},
      {"plus", {{"depth_mult", c.depth_mult}, {"width_mult", c.width_mult}, {"generations", c.generations}}},
      {"ssl",
       {{"lambda1", c.ssl.loss.lambda1},
        {"lambda2", c.ssl.loss.lambda2},
        {"lambda3", c.ssl.loss.lambda3},
        {"gamma", c.ssl.loss.gamma},
        {"eps", c.ssl.loss.eps},
        {"projector_width", c.ssl.loss.projector_width},
        {"train", hyper_json(c.ssl.hyper)},
        {"noise", c.ssl.noise},
        {"dropout", c.ssl.dropout},
        {"symmetric", c.ssl.symmetric},
        {"steps_per_epoch", c.ssl.steps_per_epoch}}},
      {"sweeps", {{"op_counts", c.sweeps.op_counts}, {"fractions", c.sweeps.fractions}, {"stability", stability}}},
  };
}

inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Stamps training, rating and search artifacts. Search limits, worker count and the
// output directory do not change any trained weight, so they are left out.
inline std::string config_hash(const RunConfig& c) {
  Json j = config_json(c);
  j.erase("search");
  j.erase("out");
  j.erase("workers");
  return fnv1a_hex(j.dump());
}

// Stamps bench tables: only what determines standalone training.
inline std::string bench_hash(const RunConfig& c) {
  const Json j = config_json(c);
  return fnv1a_hex(Json{{"space", j["space"]["catalog"]}, {"blocks", j["space"]["blocks"]}, {"task", j["task"]}, {"bench", j["bench"]}}.dump());
}

// ---------------------------------------------------------------------------
// files

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Write to a temporary sibling, then rename over the target.
inline void write_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const Json& j) { write_atomic(path, j.dump(2) + "\n"); }

inline void require_hash(const Json& manifest, const std::string& key, const std::string& expected, const fs::path& where) {
  if (!manifest.contains(key) || manifest[key] != expected)
    throw HashMismatchError(where.string() + ": produced under " + key + " " +
                            (manifest.contains(key) ? manifest[key].dump() : std::string("<none>")) + ", current is " +
                            expected);
}

// Splits one line of a comma-delimited table.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": not a number '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// score lists: block,arch_id,score,params,macs

inline std::string score_list_csv(const LocalScoreList& l) {
  std::string s = "block,arch_id,score,params,macs\n";
  for (const auto& e : l.entries)
    s += std::to_string(l.block) + "," + e.id + "," + format_double(e.score) + "," + std::to_string(e.cost.params) +
         "," + std::to_string(e.cost.macs) + "\n";
  return s;
}

inline LocalScoreList parse_score_list(const SearchSpace& space, const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "block,arch_id,score,params,macs")
    throw std::runtime_error(where + ": missing score-list header");
  LocalScoreList l;
  bool first = true;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string at = where + ":" + std::to_string(row);
    if (f.size() != 5) throw std::runtime_error(at + ": expected 5 fields");
    const auto block = static_cast<std::size_t>(parse_double(f[0], at));
    if (first) l.block = block;
    if (block != l.block) throw std::runtime_error(at + ": mixed block indices");
    first = false;
    ScoreEntry e;
    e.id = f[1];
    e.arch = decode_block_arch(e.id, space, block);
    e.score = parse_double(f[2], at);
    e.cost = {static_cast<std::size_t>(parse_double(f[3], at)), static_cast<std::size_t>(parse_double(f[4], at))};
    l.entries.push_back(std::move(e));
  }
  return l;
}

// ---------------------------------------------------------------------------
// bench table: arch_id,score,params,macs,seed + bench.json manifest

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string s = "arch_id,score,params,macs,seed\n";
  for (const auto& r : rows)
    s += r.arch_id + "," + format_double(r.score) + "," + std::to_string(r.cost.params) + "," +
         std::to_string(r.cost.macs) + "," + std::to_string(r.seed) + "\n";
  return s;
}

inline std::vector<BenchRow> parse_bench_csv(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "arch_id,score,params,macs,seed")
    throw std::runtime_error(where + ": missing bench header");
  std::vector<BenchRow> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string at = where + ":" + std::to_string(row);
    if (f.size() != 5) continue;  // a torn final line of an interrupted run
    BenchRow r;
    r.arch_id = f[0];
    r.score = parse_double(f[1], at);
    r.cost = {static_cast<std::size_t>(parse_double(f[2], at)), static_cast<std::size_t>(parse_double(f[3], at))};
    r.seed = std::stoull(f[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// weight blobs

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

inline void collect(std::vector<NamedTensor>& out, const std::string& prefix, const Linear& l) {
  out.push_back({prefix + ".weight", &l.weight.value});
  out.push_back({prefix + ".bias", &l.bias.value});
}

inline void collect(std::vector<NamedTensor>& out, const std::string& prefix, const OpParams& op) {
  out.push_back({prefix + ".expand_w", &op.expand_w.value});
  out.push_back({prefix + ".expand_b", &op.expand_b.value});
  out.push_back({prefix + ".project_w", &op.project_w.value});
  out.push_back({prefix + ".project_b", &op.project_b.value});
}

inline std::vector<NamedTensor> tensors_of(const SupernetBlock& b) {
  std::vector<NamedTensor> out;
  for (std::size_t c = 0; c < b.cells.size(); ++c) {
    const std::string p = "c" + std::to_string(c);
    collect(out, p + ".in", b.cells[c].in);
    for (std::size_t l = 0; l < b.cells[c].banks.size(); ++l)
      for (std::size_t o = 0; o < b.cells[c].banks[l].size(); ++o)
        collect(out, p + ".l" + std::to_string(l) + ".o" + std::to_string(o), b.cells[c].banks[l][o]);
    collect(out, p + ".out", b.cells[c].out);
  }
  return out;
}

inline std::vector<NamedTensor> tensors_of(const FixedNet& n) {
  std::vector<NamedTensor> out;
  for (std::size_t k = 0; k < n.blocks.size(); ++k) {
    const std::string p = "b" + std::to_string(k);
    collect(out, p + ".in", n.blocks[k].in);
    for (std::size_t l = 0; l < n.blocks[k].layers.size(); ++l) collect(out, p + ".l" + std::to_string(l), n.blocks[k].layers[l]);
    collect(out, p + ".out", n.blocks[k].out);
  }
  return out;
}

inline std::string encode_blob(const std::vector<NamedTensor>& ts) {
  std::string bytes;
  for (const auto& t : ts)
    for (double v : t.tensor->values()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  return bytes;
}

inline Json blob_manifest(const std::vector<NamedTensor>& ts) {
  Json arr = Json::array();
  std::size_t count = 0;
  for (const auto& t : ts) {
    arr.push_back({{"name", t.name}, {"shape", t.tensor->shape()}});
    count += t.tensor->size();
  }
  return {{"format", "float64-le"}, {"tensors", arr}, {"values", count}};
}

// Overwrites the tensors in place from a blob; shapes must match the manifest exactly.
inline void decode_blob(const std::vector<NamedTensor>& ts, const Json& manifest, const std::string& bytes,
                        const std::string& where) {
  const Json& arr = manifest.at("tensors");
  if (arr.size() != ts.size()) throw std::runtime_error(where + ": tensor count differs from manifest");
  std::size_t total = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (arr[i].at("name") != ts[i].name || arr[i].at("shape").get<std::vector<std::size_t>>() != ts[i].tensor->shape())
      throw std::runtime_error(where + ": tensor " + ts[i].name + " does not match manifest");
    total += ts[i].tensor->size();
  }
  if (bytes.size() != total * 8) throw std::runtime_error(where + ": blob has " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(total * 8));
  std::size_t pos = 0;
  for (const auto& t : ts) {
    auto& vals = const_cast<Tensor*>(t.tensor)->values();
    for (double& v : vals) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
      v = std::bit_cast<double>(bits);
      pos += 8;
    }
  }
}

// Writes <stem>.bin then <stem>.json; the manifest's presence marks the pair complete.
inline void save_weights(const fs::path& stem, const std::vector<NamedTensor>& ts, Json extra) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path man = stem;
  man += ".json";
  write_atomic(bin, encode_blob(ts));
  Json m = blob_manifest(ts);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_json(man, m);
}

inline Json load_weights(const fs::path& stem, const std::vector<NamedTensor>& ts) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path man = stem;
  man += ".json";
  Json m = read_json(man);
  decode_blob(ts, m, read_file(bin), bin.string());
  return m;
}

}  // namespace dna
