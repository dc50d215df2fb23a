#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dna/verify.hpp"
#include "dna/workflow.hpp"

namespace {

enum Exit { ok = 0, other = 1, usage = 2, hash_mismatch = 3, training = 4, infeasible = 5, contract = 6, verify_failed = 7 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::optional<unsigned> workers;
  std::optional<double> max_params;
  std::optional<double> max_macs;
  std::string budgets;
  std::optional<int> generations;
  bool baseline = false;
  std::string sweep_kind;
  int rating_trials = 50;
  int search_trials = 200;
  int gradient_trials = 100;
};

dna::Workspace open_workspace(const Flags& fl) {
  if (fl.config.empty()) throw dna::ConfigError("--config is required");
  dna::RunConfig cfg = dna::load_config(fl.config);
  if (fl.seed) cfg.seed = *fl.seed;
  if (fl.workers) cfg.workers = *fl.workers;
  if (!fl.out.empty()) cfg.out = fl.out;
  if (fl.max_params) cfg.constraint.max_params = *fl.max_params;
  if (fl.max_macs) cfg.constraint.max_macs = *fl.max_macs;
  if (fl.generations) cfg.generations = *fl.generations;
  if (!fl.budgets.empty()) {
    cfg.budgets.clear();
    for (const auto& cell : dna::split_csv(fl.budgets)) {
      dna::Constraint c;
      try {
        c.max_params = dna::parse_double(cell, "--budgets");
      } catch (const std::exception& e) {
        throw dna::ConfigError(e.what());
      }
      if (*c.max_params <= 0) throw dna::ConfigError("--budgets: values must be positive");
      cfg.budgets.push_back(c);
    }
  }
  dna::Workspace ws(cfg, cfg.out, fl.force);
  ws.log = [](const std::string& m) { std::fprintf(stderr, "[dna] %s\n", m.c_str()); };
  ws.write_config();
  return ws;
}

void print_search(const dna::SearchResult& r) {
  std::printf("arch %s\nscore %s\nparams %llu\nmacs %llu\n", dna::encode_arch(r.arch).c_str(), dna::format_double(r.score).c_str(),
              static_cast<unsigned long long>(r.cost.params), static_cast<unsigned long long>(r.cost.macs));
}

int run(const std::string& cmd, const Flags& fl) {
  if (cmd == "verify") {
    const std::uint64_t seed = fl.seed.value_or(1);
    bool all = true;
    for (const auto& c : dna::verify_all(seed, fl.rating_trials, fl.search_trials, fl.gradient_trials)) {
      std::printf("%s %s: %s\n", c.passed ? "ok  " : "FAIL", c.name.c_str(), c.detail.c_str());
      all = all && c.passed;
    }
    return all ? ok : verify_failed;
  }
  dna::Workspace ws = open_workspace(fl);
  if (cmd == "teacher") {
    const auto& t = dna::stage_teacher(ws);
    std::printf("teacher val_loss %s (untrained %s)\n", dna::format_double(t.fit.val_loss).c_str(),
                dna::format_double(t.untrained_val_loss).c_str());
  } else if (cmd == "train") {
    dna::stage_train(ws);
    std::printf("supernet trained: %zu block(s) in %s\n", ws.cfg.space.num_blocks(), ws.path("supernet").string().c_str());
  } else if (cmd == "rate") {
    const auto lists = dna::stage_rate(ws);
    for (const auto& l : lists)
      std::printf("block %zu: %zu entries, best %s score %s\n", l.block, l.entries.size(), l.entries.front().id.c_str(),
                  dna::format_double(l.entries.front().score).c_str());
  } else if (cmd == "search") {
    print_search(dna::stage_search(ws));
  } else if (cmd == "bench") {
    const auto t = dna::stage_bench(ws);
    std::printf("bench: %zu architectures in %s\n", t.rows.size(), ws.path("bench.csv").string().c_str());
  } else if (cmd == "rank") {
    std::printf("%s\n", dna::stage_rank(ws, fl.baseline).dump(2).c_str());
  } else if (cmd == "plus") {
    for (const auto& g : dna::stage_plus(ws, ws.cfg.generations))
      std::printf("generation %d teacher_val_loss %s arch %s\n", g.generation, dna::format_double(g.teacher_val_loss).c_str(),
                  dna::encode_arch(g.searched).c_str());
  } else if (cmd == "ssl") {
    const auto r = dna::stage_ssl(ws);
    if (r.search) print_search(*r.search);
  } else if (cmd == "sweep") {
    std::fputs(dna::stage_sweep(ws, fl.sweep_kind).c_str(), stdout);
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise distillation architecture search"};
  app.require_subcommand(1);
  Flags fl;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", fl.config, "experiment JSON");
    s->add_option("--seed", fl.seed, "run seed");
    s->add_option("--out", fl.out, "output directory (default from config)");
    s->add_flag("--force", fl.force, "recompute finished stages");
    s->add_option("--workers", fl.workers, "concurrent block/bench jobs")->check(CLI::PositiveNumber);
  };
  auto search_flags = [&](CLI::App* s) {
    s->add_option("--max-params", fl.max_params, "parameter budget")->check(CLI::PositiveNumber);
    s->add_option("--max-macs", fl.max_macs, "MAC budget")->check(CLI::PositiveNumber);
  };

  for (const char* name : {"teacher", "train", "rate", "bench"}) common(app.add_subcommand(name));
  auto* search = app.add_subcommand("search", "constrained search over persisted score lists");
  common(search);
  search_flags(search);
  search->add_option("--budgets", fl.budgets, "comma-separated parameter budgets for the sweep table");
  auto* rank = app.add_subcommand("rank", "rank correlation against the bench");
  common(rank);
  rank->add_flag("--baseline", fl.baseline, "also rate a whole-network one-shot supernet");
  auto* plus = app.add_subcommand("plus", "iterated teacher generations");
  common(plus);
  search_flags(plus);
  plus->add_option("--generations", fl.generations, "number of generations")->check(CLI::PositiveNumber);
  auto* ssl = app.add_subcommand("ssl", "self-supervised joint teacher/student training");
  common(ssl);
  search_flags(ssl);
  auto* sweep = app.add_subcommand("sweep", "theorem1, stability or data sweep");
  common(sweep);
  sweep->add_option("kind", fl.sweep_kind, "sweep kind")->required()->check(CLI::IsMember({"theorem1", "stability", "data"}));
  auto* verify = app.add_subcommand("verify", "oracle-equivalence and gradient self-checks");
  verify->add_option("--seed", fl.seed, "seed for random instances");
  verify->add_option("--rating-trials", fl.rating_trials)->check(CLI::PositiveNumber);
  verify->add_option("--search-trials", fl.search_trials)->check(CLI::PositiveNumber);
  verify->add_option("--gradient-trials", fl.gradient_trials)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, fl);
  } catch (const dna::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return usage;
  } catch (const dna::HashMismatchError& e) {
    std::fprintf(stderr, "hash mismatch: %s\n", e.what());
    return hash_mismatch;
  } catch (const dna::TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return training;
  } catch (const dna::InfeasibleError& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return infeasible;
  } catch (const dna::ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return contract;
  } catch (const dna::DimensionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return contract;
  } catch (const dna::IndexError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return contract;
  } catch (const dna::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return contract;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return other;
  }
}
