#pragma once

// Vanilla DNA: teacher features -> block-wise supernet training -> rating -> search.

#include <cstdint>
#include <optional>
#include <vector>

#include "dna/distill.hpp"
#include "dna/rate.hpp"
#include "dna/search.hpp"
#include "dna/space.hpp"

namespace dna {

struct DnaConfig {
  DistillConfig distill;
  std::vector<double> lambdas;  // empty = 1 for every block
  Constraint constraint;
  unsigned workers = 1;

  std::vector<double> lambdas_for(const SearchSpace& s) const {
    return lambdas.empty() ? std::vector<double>(s.num_blocks(), 1.0) : lambdas;
  }
};

struct DnaRun {
  Supernet supernet;
  std::vector<BlockTrainResult> traces;
  std::vector<LocalScoreList> lists;
  std::optional<SearchResult> search;  // empty when the constraint is infeasible
};

inline DnaRun run_dna(const SearchSpace& space, const CostLUT& lut, const FeatureCache& cache, const DnaConfig& cfg,
                      std::uint64_t seed, std::span<const std::size_t> train_rows = {}) {
  DnaRun r;
  r.supernet = make_supernet(space, derive_seed(seed, "supernet"));
  r.traces = train_all_blocks(r.supernet, cache, cfg.distill, derive_seed(seed, "distill"), cfg.workers, train_rows);
  r.lists = rate_supernet(space, r.supernet, cache, lut, seed);
  try {
    r.search = traverse_search(space, r.lists, lut, cfg.constraint, cfg.lambdas_for(space));
  } catch (const InfeasibleError&) {
    r.search.reset();
  }
  return r;
}

}  // namespace dna
