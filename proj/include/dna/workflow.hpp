#pragma once

// Persistent pipeline stages. Each stage reuses its artifacts when they exist and
// carry the current configuration hash, recomputes them under `force`, and refuses
// artifacts stamped with a different hash.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dna/bench.hpp"
#include "dna/evolve.hpp"
#include "dna/io.hpp"

namespace dna {

struct Workspace {
  RunConfig cfg;
  fs::path out;
  bool force = false;
  std::function<void(const std::string&)> log = [](const std::string&) {};

  Workspace(RunConfig c, fs::path dir, bool f = false) : cfg(std::move(c)), out(std::move(dir)), force(f) {}

  std::string hash() const { return config_hash(cfg); }
  std::string bench_hash_value() const { return bench_hash(cfg); }

  const SyntheticTask& task() {
    if (!task_) task_ = make_task(cfg.task);
    return *task_;
  }
  const CostLUT& lut() {
    if (!lut_) lut_ = build_cost_lut(cfg.space);
    return *lut_;
  }

  fs::path path(const std::string& rel) const { return out / rel; }

  // true when the artifact should be (re)computed
  bool stale(const fs::path& manifest, const std::string& key, const std::string& expected) const {
    if (!fs::exists(manifest)) return true;
    if (force) return true;
    require_hash(read_json(manifest), key, expected, manifest);
    return false;
  }

  void write_config() const { write_json(path("config.json"), Json{{"config", config_json(cfg)}, {"config_hash", hash()}}); }

  // results already produced or loaded by this process
  std::optional<TeacherNet> teacher;
  std::optional<FeatureCache> features;
  std::optional<Supernet> supernet;

 private:
  std::optional<SyntheticTask> task_;
  std::optional<CostLUT> lut_;
};

// ---------------------------------------------------------------------------
// teacher

inline const TeacherNet& stage_teacher(Workspace& ws) {
  if (ws.teacher) return *ws.teacher;
  const fs::path stem = ws.path("teacher");
  fs::path man = stem;
  man += ".json";
  if (ws.stale(man, "config_hash", ws.hash())) {
    ws.log("training teacher");
    TeacherNet t = make_teacher(ws.cfg.space, ws.cfg.teacher, ws.task(), ws.cfg.seed);
    save_weights(stem, tensors_of(t.net),
                 {{"config_hash", ws.hash()},
                  {"seed", ws.cfg.seed},
                  {"val_loss", t.fit.val_loss},
                  {"untrained_val_loss", t.untrained_val_loss},
                  {"epochs_run", t.fit.epochs_run}});
    return *(ws.teacher = std::move(t));
  }
  TeacherNet t;
  t.net = make_fixed_net(ws.cfg.teacher.spec, 0);
  const Json m = load_weights(stem, tensors_of(t.net));
  t.fit.val_loss = m.at("val_loss").get<double>();
  t.fit.epochs_run = m.at("epochs_run").get<int>();
  t.untrained_val_loss = m.at("untrained_val_loss").get<double>();
  return *(ws.teacher = std::move(t));
}

inline const FeatureCache& stage_features(Workspace& ws) {
  if (!ws.features) ws.features = extract_features(stage_teacher(ws).net, ws.task());
  return *ws.features;
}

// ---------------------------------------------------------------------------
// block-wise supernet training; every block is its own checkpoint

inline const Supernet& stage_train(Workspace& ws, std::vector<BlockTrainResult>* traces = nullptr) {
  if (ws.supernet && !traces) return *ws.supernet;
  const auto& space = ws.cfg.space;
  const std::uint64_t init_seed = derive_seed(ws.cfg.seed, "supernet");
  const std::uint64_t train_seed = derive_seed(ws.cfg.seed, "distill");
  Supernet net = make_supernet(space, init_seed);
  std::vector<BlockTrainResult> results(net.size());
  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < net.size(); ++k) {
    const fs::path stem = ws.path("supernet/block_" + std::to_string(k));
    fs::path man = stem;
    man += ".json";
    if (ws.stale(man, "config_hash", ws.hash())) {
      todo.push_back(k);
    } else {
      const Json m = load_weights(stem, tensors_of(net[k]));
      results[k].loss_trace = m.at("loss_trace").get<std::vector<double>>();
    }
  }
  if (!todo.empty()) {
    const FeatureCache& cache = stage_features(ws);
    ws.log("training " + std::to_string(todo.size()) + " supernet block(s)");
    run_jobs(todo.size(), ws.cfg.workers, [&](std::size_t i) {
      const std::size_t k = todo[i];
      results[k] = train_block(net[k], cache.blocks[k], cache.train_rows, ws.cfg.distill, train_seed);
      save_weights(ws.path("supernet/block_" + std::to_string(k)), tensors_of(net[k]),
                   {{"config_hash", ws.hash()}, {"block", k}, {"seed", ws.cfg.seed}, {"loss_trace", results[k].loss_trace}});
    });
  }
  if (traces) *traces = results;
  return *(ws.supernet = std::move(net));
}

// ---------------------------------------------------------------------------
// rating

inline std::vector<LocalScoreList> load_score_lists(Workspace& ws, const std::string& dir = "scores") {
  const fs::path man = ws.path(dir + "/manifest.json");
  const Json m = read_json(man);
  require_hash(m, "config_hash", ws.hash(), man);
  std::vector<LocalScoreList> lists;
  for (std::size_t k = 0; k < ws.cfg.space.num_blocks(); ++k) {
    const fs::path p = ws.path(dir + "/block_" + std::to_string(k) + ".csv");
    auto l = parse_score_list(ws.cfg.space, read_file(p), p.string());
    if (l.block != k) throw std::runtime_error(p.string() + ": holds block " + std::to_string(l.block));
    l.seed = m.at("seed").get<std::uint64_t>();
    l.val_rows = m.at("val_rows").get<std::size_t>();
    lists.push_back(std::move(l));
  }
  return lists;
}

inline void save_score_lists(Workspace& ws, const std::vector<LocalScoreList>& lists, const std::string& dir) {
  for (const auto& l : lists) write_atomic(ws.path(dir + "/block_" + std::to_string(l.block) + ".csv"), score_list_csv(l));
  write_json(ws.path(dir + "/manifest.json"), {{"config_hash", ws.hash()},
                                               {"seed", ws.cfg.seed},
                                               {"blocks", lists.size()},
                                               {"val_rows", lists.empty() ? 0 : lists[0].val_rows},
                                               {"orientation", "lower score is better"}});
}

inline std::vector<LocalScoreList> stage_rate(Workspace& ws) {
  if (!ws.stale(ws.path("scores/manifest.json"), "config_hash", ws.hash())) return load_score_lists(ws);
  const Supernet& net = stage_train(ws);
  const FeatureCache& cache = stage_features(ws);
  ws.log("rating every block architecture");
  auto lists = rate_supernet(ws.cfg.space, net, cache, ws.lut(), ws.cfg.seed);
  save_score_lists(ws, lists, "scores");
  return lists;
}

// ---------------------------------------------------------------------------
// search

inline Json cost_json(const Cost& c) { return {{"params", c.params}, {"macs", c.macs}}; }

inline Json search_json(const SearchResult& r, const Constraint& c, const std::string& hash) {
  return {{"config_hash", hash},
          {"arch_id", encode_arch(r.arch)},
          {"score", r.score},
          {"cost", cost_json(r.cost)},
          {"evaluated", r.evaluated},
          {"constraint", detail::constraint_json(c)}};
}

inline SearchResult stage_search(Workspace& ws) {
  const auto lists = stage_rate(ws);
  const SearchResult r =
      traverse_search(ws.cfg.space, lists, ws.lut(), ws.cfg.constraint, ws.cfg.lambdas_for_space());
  write_json(ws.path("search.json"), search_json(r, ws.cfg.constraint, ws.hash()));
  if (!ws.cfg.budgets.empty()) {
    const auto rows = search_under_budget_sweep(ws.cfg.space, lists, ws.lut(), ws.cfg.budgets, ws.cfg.lambdas_for_space());
    std::string csv = "max_params,max_macs,feasible,arch_id,score,params,macs\n";
    for (const auto& row : rows) {
      csv += (row.budget.max_params ? format_double(*row.budget.max_params) : "") + "," +
             (row.budget.max_macs ? format_double(*row.budget.max_macs) : "") + "," + (row.result ? "1" : "0") + ",";
      if (row.result)
        csv += encode_arch(row.result->arch) + "," + format_double(row.result->score) + "," +
               std::to_string(row.result->cost.params) + "," + std::to_string(row.result->cost.macs);
      else
        csv += ",,,";
      csv += "\n";
    }
    write_atomic(ws.path("budget_sweep.csv"), csv);
  }
  return r;
}

// ---------------------------------------------------------------------------
// bench: rows are appended to a progress file as they finish, so an interrupted
// build resumes with only the missing rows

inline BenchTable stage_bench(Workspace& ws, const std::vector<Architecture>* subset = nullptr) {
  const std::string h = ws.bench_hash_value();
  const fs::path man = ws.path("bench/bench.json");
  const fs::path csv = ws.path("bench/bench.csv");
  const fs::path partial = ws.path("bench/bench.partial.csv");
  const std::vector<Architecture> all = enumerate_space(ws.cfg.space);
  const std::vector<Architecture>& want = subset ? *subset : all;

  std::vector<BenchRow> existing;
  if (!ws.stale(man, "bench_hash", h)) existing = parse_bench_csv(read_file(csv), csv.string());
  if (fs::exists(partial) && !ws.force) {
    const std::string text = read_file(partial);
    const auto nl = text.find('\n');
    if (nl == std::string::npos || text.substr(0, nl) != "# bench_hash " + h)
      throw HashMismatchError(partial.string() + ": progress file from a different bench configuration");
    for (auto& r : parse_bench_csv(text.substr(nl + 1), partial.string())) existing.push_back(std::move(r));
  }
  std::map<std::string, BenchRow> rows;
  for (auto& r : existing) rows.emplace(r.arch_id, std::move(r));

  bool covered = true;
  for (const auto& a : want) covered = covered && rows.count(encode_arch(a));
  if (!covered) {
    if (!fs::exists(partial) || ws.force) write_atomic(partial, "# bench_hash " + h + "\narch_id,score,params,macs,seed\n");
    if (!rows.empty()) ws.log("resuming bench with " + std::to_string(rows.size()) + " rows done");
    std::vector<BenchRow> have;
    for (const auto& [_, r] : rows) have.push_back(r);
    std::ofstream progress(partial, std::ios::app);
    const BenchTable built = build_bench(ws.cfg.space, ws.task(), ws.cfg.bench, have, ws.cfg.workers,
                                         [&](const BenchRow& r) {
                                           progress << r.arch_id << "," << format_double(r.score) << ","
                                                    << r.cost.params << "," << r.cost.macs << "," << r.seed << "\n";
                                           progress.flush();
                                         },
                                         &want);
    for (const auto& r : built.rows) rows.emplace(r.arch_id, r);
  }

  BenchTable t;
  t.space_hash = h;
  t.task_seed = ws.cfg.task.seed;
  for (const auto& a : all) {
    auto it = rows.find(encode_arch(a));
    if (it != rows.end()) t.rows.push_back(it->second);
  }
  if (!covered || !fs::exists(man) || ws.force) {
    write_atomic(csv, bench_csv(t.rows));
    write_json(man, {{"bench_hash", h},
                     {"task_seed", ws.cfg.task.seed},
                     {"bench_seed", ws.cfg.bench.seed},
                     {"rows", t.rows.size()},
                     {"complete", t.rows.size() == all.size()},
                     {"orientation", "held-out MSE, lower is better"}});
    if (fs::exists(partial)) fs::remove(partial);
  }
  if (!subset && t.rows.size() != all.size()) throw CoverageError("bench is incomplete");
  return t;
}

// ---------------------------------------------------------------------------
// ranking

inline Json report_json(const RankingReport& r) {
  return {{"kendall_tau", r.kendall_tau}, {"spearman_rho", r.spearman_rho}, {"pearson_r", r.pearson_r}, {"n", r.n}};
}

inline Json stage_rank(Workspace& ws, bool with_baseline) {
  const auto lists = stage_rate(ws);
  const BenchTable bench = stage_bench(ws);
  Json j{{"config_hash", ws.hash()},
         {"bench_hash", bench.space_hash},
         {"orientation", "predicted and true scores are losses; positive correlation means agreement"},
         {"dna", report_json(ranking_report(ws.cfg.space, lists, ws.cfg.lambdas_for_space(), bench))}};
  if (with_baseline) {
    ws.log("training whole-network baseline supernet");
    std::vector<std::string> ids;
    std::vector<double> truth;
    for (const auto& r : bench.rows) {
      ids.push_back(r.arch_id);
      truth.push_back(r.score);
    }
    const Supernet wn = train_wholenet(ws.cfg.space, ws.task(), ws.cfg.wholenet, ws.cfg.seed);
    j["wholenet"] = report_json(correlate(rate_wholenet(ws.cfg.space, wn, ws.task(), ids), truth));
  }
  write_json(ws.path("ranking.json"), j);
  return j;
}

// ---------------------------------------------------------------------------
// DNA+ and DNA++

inline Json plan_json(const NetSpec& s) {
  Json blocks = Json::array();
  for (const auto& b : s.blocks) blocks.push_back({{"width", b.width}, {"ops", detail::ops_json(b.ops)}});
  return {{"io_widths", s.io_widths}, {"blocks", blocks}};
}

inline std::vector<GenerationState> stage_plus(Workspace& ws, int generations) {
  const fs::path man = ws.path("plus/manifest.json");
  const std::string key = ws.hash() + ":" + std::to_string(generations);
  if (!ws.stale(man, "run_key", key)) {
    // results are small; rebuild states from the stored summary
    const Json m = read_json(man);
    std::vector<GenerationState> out;
    for (const auto& g : m.at("generations")) {
      GenerationState s;
      s.generation = g.at("generation").get<int>();
      s.searched = decode_arch(g.at("arch_id").get<std::string>(), ws.cfg.space);
      s.search_score = g.at("score").get<double>();
      s.teacher_val_loss = g.at("teacher_val_loss").get<double>();
      out.push_back(std::move(s));
    }
    return out;
  }
  ws.log("running " + std::to_string(generations) + " DNA+ generation(s)");
  auto gens = dna_plus_run(ws.cfg.space, ws.lut(), ws.task(), ws.cfg.plus(), generations, ws.cfg.seed);
  Json arr = Json::array();
  for (const auto& g : gens) {
    const std::string dir = "plus/generation_" + std::to_string(g.generation);
    save_score_lists(ws, g.lists, dir);
    arr.push_back({{"generation", g.generation},
                   {"teacher", plan_json(g.teacher_spec)},
                   {"teacher_val_loss", g.teacher_val_loss},
                   {"arch_id", encode_arch(g.searched)},
                   {"score", g.search_score}});
  }
  write_json(man, {{"config_hash", ws.hash()}, {"run_key", key}, {"generations", arr}});
  return gens;
}

inline SSLRun stage_ssl(Workspace& ws) {
  const TeacherNet& teacher = stage_teacher(ws);
  const FeatureCache& cache = stage_features(ws);
  ws.log("joint self-supervised training of teacher and student blocks");
  SSLRun r = run_dna_ssl(ws.cfg.space, ws.lut(), teacher.net, cache, ws.cfg.ssl, ws.cfg.dna(), ws.cfg.seed);
  save_score_lists(ws, r.lists, "ssl");
  std::string stds = "block,branch,channel,std\n";
  for (std::size_t k = 0; k < r.results.size(); ++k) {
    for (std::size_t c = 0; c < r.results[k].teacher_stds.size(); ++c)
      stds += std::to_string(k) + ",teacher," + std::to_string(c) + "," + format_double(r.results[k].teacher_stds[c]) + "\n";
    for (std::size_t c = 0; c < r.results[k].student_stds.size(); ++c)
      stds += std::to_string(k) + ",student," + std::to_string(c) + "," + format_double(r.results[k].student_stds[c]) + "\n";
  }
  write_atomic(ws.path("ssl/channel_stds.csv"), stds);
  if (r.search) write_json(ws.path("ssl/search.json"), search_json(*r.search, ws.cfg.constraint, ws.hash()));
  return r;
}

// ---------------------------------------------------------------------------
// sweeps

inline std::string stage_sweep(Workspace& ws, const std::string& kind) {
  std::string csv;
  if (kind == "theorem1") {
    const SearchSpace full = ws.cfg.full_space();
    const SearchSpace eval = restrict_catalog(full, *std::min_element(ws.cfg.sweeps.op_counts.begin(), ws.cfg.sweeps.op_counts.end()));
    const auto archs = enumerate_space(eval);
    // truth for the evaluation set comes from the main bench when it covers it
    const BenchTable bench = stage_bench(ws, &archs);
    const auto rows = theorem1_sweep(full, ws.cfg.sweeps.op_counts, ws.cfg.wholenet, ws.task(), bench, ws.cfg.seed);
    csv = "op_count,space_size,kendall_tau,mean_frobenius\n";
    for (const auto& r : rows)
      csv += std::to_string(r.op_count) + "," + r.space_size.str() + "," + format_double(r.tau) + "," +
             format_double(r.mean_frobenius) + "\n";
  } else if (kind == "stability") {
    const FeatureCache& cache = stage_features(ws);
    const BenchTable bench = stage_bench(ws);
    const auto cps = train_with_checkpoints(ws.cfg.space, cache, ws.cfg.distill, ws.cfg.seed);
    const auto rows = stability_sweep(ws.cfg.space, ws.lut(), cps, cache, ws.cfg.sweeps.stability_constraint,
                                      ws.cfg.lambdas_for_space(), bench);
    csv = "epoch,arch_id,truth\n";
    for (const auto& r : rows) csv += std::to_string(r.epoch) + "," + r.arch_id + "," + format_double(r.truth) + "\n";
  } else if (kind == "data") {
    const FeatureCache& cache = stage_features(ws);
    const BenchTable bench = stage_bench(ws);
    const auto rows = data_amount_sweep(ws.cfg.space, ws.lut(), cache, ws.cfg.dna(), ws.cfg.sweeps.fractions, bench, ws.cfg.seed);
    csv = "fraction,kendall_tau,cross_tau\n";
    for (const auto& r : rows) csv += format_double(r.fraction) + "," + format_double(r.tau) + "," + format_double(r.cross_tau) + "\n";
  } else {
    throw ContractError("unknown sweep '" + kind + "' (theorem1, stability, data)");
  }
  write_atomic(ws.path("sweeps/" + kind + ".csv"), csv);
  return csv;
}

}  // namespace dna
