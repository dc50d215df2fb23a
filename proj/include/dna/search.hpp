#pragma once

// Global search over per-block sorted score lists under a cost constraint.
//
// traverse_search is a depth-first walk over the blocks. Each block's list is
// visited in ascending score order; a partial architecture whose cost already
// exceeds the limit is skipped, and in the last block the first admissible
// entry is the best completion of the current prefix, so the scan stops there.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dna/errors.hpp"
#include "dna/rate.hpp"
#include "dna/space.hpp"

namespace dna {

struct SearchResult {
  Architecture arch;
  double score = 0.0;  // sum_k lambda_k * local score, summed in block order
  Cost cost;
  std::uint64_t evaluated = 0;    // complete architectures whose total score was computed
  std::uint64_t cost_checks = 0;  // list entries whose cumulative cost was tested
};

struct SearchOptions {
  bool early_return = true;
};

namespace detail {

struct PreparedList {
  std::vector<const ScoreEntry*> entries;
  std::vector<std::size_t> canon;  // canonical index of each entry
  std::vector<Cost> costs;
};

inline std::vector<PreparedList> prepare_lists(const SearchSpace& space, const std::vector<LocalScoreList>& lists,
                                               const CostLUT& lut, const std::vector<double>& lambdas) {
  if (lists.size() != space.num_blocks()) throw ContractError("need one score list per block");
  if (lambdas.size() != lists.size()) throw ContractError("need one lambda weight per block");
  for (double l : lambdas)
    if (!(l > 0.0)) throw ContractError("lambda weights must be positive");
  std::vector<PreparedList> out(lists.size());
  for (std::size_t k = 0; k < lists.size(); ++k) {
    const auto& list = lists[k];
    if (list.block != k) throw ContractError("score list " + std::to_string(k) + " belongs to block " + std::to_string(list.block));
    if (list.entries.empty()) throw ContractError("score list for block " + std::to_string(k) + " is empty");
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
      const auto& e = list.entries[i];
      const std::size_t canon = block_arch_index(space, k, e.arch);
      if (i > 0) {
        const auto& prev = list.entries[i - 1];
        if (prev.score > e.score || (prev.score == e.score && out[k].canon.back() > canon))
          throw ContractError("score list for block " + std::to_string(k) + " is not sorted");
      }
      out[k].entries.push_back(&e);
      out[k].canon.push_back(canon);
      out[k].costs.push_back(lut.block_cost(k, e.arch));
    }
  }
  return out;
}

inline double min_total_cost(const std::vector<PreparedList>& lists, bool macs) {
  double total = 0.0;
  for (const auto& l : lists) {
    std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
    for (const auto& c : l.costs) best = std::min(best, macs ? c.macs : c.params);
    total += static_cast<double>(best);
  }
  return total;
}

[[noreturn]] inline void throw_infeasible(const std::vector<PreparedList>& lists, const Constraint& c) {
  const bool macs = !c.max_params && c.max_macs;
  const double min_cost = min_total_cost(lists, macs);
  throw InfeasibleError("no architecture satisfies the constraint; minimal achievable " +
                            std::string(macs ? "MACs" : "parameter count") + " is " +
                            std::to_string(static_cast<std::uint64_t>(min_cost)),
                        min_cost);
}

inline bool lex_less(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) { return a < b; }

inline SearchResult assemble(const std::vector<PreparedList>& lists, const std::vector<std::size_t>& pick,
                             double score) {
  SearchResult r;
  r.score = score;
  for (std::size_t k = 0; k < lists.size(); ++k) {
    r.arch.blocks.push_back(lists[k].entries[pick[k]]->arch);
    r.cost += lists[k].costs[pick[k]];
  }
  return r;
}

}  // namespace detail

inline SearchResult traverse_search(const SearchSpace& space, const std::vector<LocalScoreList>& lists,
                                    const CostLUT& lut, const Constraint& constraint,
                                    const std::vector<double>& lambdas, const SearchOptions& opt = {}) {
  constraint.validate();
  const auto prepared = detail::prepare_lists(space, lists, lut, lambdas);
  const std::size_t n = prepared.size();

  std::vector<std::size_t> pick(n), best_pick, best_canon;
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t evaluated = 0, checks = 0;

  // explicit recursion over blocks
  std::function<void(std::size_t, double, double, double)> visit = [&](std::size_t k, double params, double macs,
                                                                       double loss_prev) {
    const auto& list = prepared[k];
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
      ++checks;
      const double p = params + static_cast<double>(list.costs[i].params);
      const double m = macs + static_cast<double>(list.costs[i].macs);
      if (!constraint.admits(p, m)) continue;
      const double loss = loss_prev + lambdas[k] * list.entries[i]->score;
      pick[k] = i;
      if (k + 1 == n) {
        ++evaluated;
        std::vector<std::size_t> canon(n);
        for (std::size_t b = 0; b < n; ++b) canon[b] = prepared[b].canon[pick[b]];
        if (loss < best || (loss == best && detail::lex_less(canon, best_canon))) {
          best = loss;
          best_pick = pick;
          best_canon = std::move(canon);
        }
        if (opt.early_return) break;
      } else {
        visit(k + 1, p, m, loss);
      }
    }
  };
  visit(0, 0.0, 0.0, 0.0);
  if (best_pick.empty()) detail::throw_infeasible(prepared, constraint);
  auto r = detail::assemble(prepared, best_pick, best);
  r.evaluated = evaluated;
  r.cost_checks = checks;
  return r;
}

// Full cross-product scan; reference for traverse_search.
inline SearchResult exhaustive_search(const SearchSpace& space, const std::vector<LocalScoreList>& lists,
                                      const CostLUT& lut, const Constraint& constraint,
                                      const std::vector<double>& lambdas) {
  constraint.validate();
  const auto prepared = detail::prepare_lists(space, lists, lut, lambdas);
  const std::size_t n = prepared.size();
  std::vector<std::size_t> idx(n, 0), best_pick, best_canon;
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t evaluated = 0;
  while (true) {
    ++evaluated;
    std::uint64_t p = 0, m = 0;
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      p += prepared[k].costs[idx[k]].params;
      m += prepared[k].costs[idx[k]].macs;
      loss = loss + lambdas[k] * prepared[k].entries[idx[k]]->score;
    }
    if (constraint.admits(static_cast<double>(p), static_cast<double>(m))) {
      std::vector<std::size_t> canon(n);
      for (std::size_t k = 0; k < n; ++k) canon[k] = prepared[k].canon[idx[k]];
      if (loss < best || (loss == best && detail::lex_less(canon, best_canon))) {
        best = loss;
        best_pick = idx;
        best_canon = std::move(canon);
      }
    }
    std::size_t k = n;
    while (k-- > 0) {
      if (++idx[k] < prepared[k].entries.size()) break;
      idx[k] = 0;
    }
    if (k == static_cast<std::size_t>(-1)) break;
  }
  if (best_pick.empty()) detail::throw_infeasible(prepared, constraint);
  auto r = detail::assemble(prepared, best_pick, best);
  r.evaluated = evaluated;
  r.cost_checks = evaluated;
  return r;
}

struct SweepRow {
  Constraint budget;
  bool feasible = false;
  std::optional<SearchResult> result;
  double min_cost = 0.0;  // set for infeasible rows
};

inline std::vector<SweepRow> search_under_budget_sweep(const SearchSpace& space,
                                                       const std::vector<LocalScoreList>& lists, const CostLUT& lut,
                                                       const std::vector<Constraint>& budgets,
                                                       const std::vector<double>& lambdas) {
  auto key = [](const Constraint& c, bool macs) {
    const auto& v = macs ? c.max_macs : c.max_params;
    return v ? *v : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 1; i < budgets.size(); ++i)
    if (key(budgets[i], false) < key(budgets[i - 1], false) || key(budgets[i], true) < key(budgets[i - 1], true))
      throw ContractError("budgets must be sorted ascending");
  std::vector<SweepRow> rows;
  for (const auto& b : budgets) {
    SweepRow row{b, false, std::nullopt, 0.0};
    try {
      row.result = traverse_search(space, lists, lut, b, lambdas);
      row.feasible = true;
    } catch (const InfeasibleError& e) {
      row.min_cost = e.min_cost;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dna
