#pragma once

// Modular search space: blocks -> cells -> layers -> candidate ops.
//
// Architecture ids are printable strings:
//   block arch   "b0:c1:0.2.1"      (block 0, cell 1, one catalog index per layer)
//   architecture "b0:c1:0.2.1|b1:c0:3.3"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dna/errors.hpp"
#include "dna/numkernel.hpp"

namespace dna {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

struct CellSpec {
  std::size_t depth = 1;
  std::size_t width = 1;
  // Catalog indices allowed at each layer; empty means the whole catalog everywhere.
  std::vector<std::vector<int>> allowed;

  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

struct BlockSpec {
  std::vector<CellSpec> cells;
  std::size_t in_width = 1;
  std::size_t out_width = 1;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct BlockArch {
  int cell = 0;
  std::vector<int> ops;  // catalog index per layer

  friend bool operator==(const BlockArch&, const BlockArch&) = default;
  friend auto operator<=>(const BlockArch&, const BlockArch&) = default;
};

struct Architecture {
  std::vector<BlockArch> blocks;

  friend bool operator==(const Architecture&, const Architecture&) = default;
  friend auto operator<=>(const Architecture&, const Architecture&) = default;
};

class SearchSpace {
 public:
  SearchSpace() = default;
  SearchSpace(std::vector<OpDesc> catalog, std::vector<BlockSpec> blocks)
      : catalog_(std::move(catalog)), blocks_(std::move(blocks)) {
    normalize();
  }

  const std::vector<OpDesc>& catalog() const noexcept { return catalog_; }
  const std::vector<BlockSpec>& blocks() const noexcept { return blocks_; }
  const BlockSpec& block(std::size_t k) const {
    if (k >= blocks_.size()) throw IndexError("block index " + std::to_string(k) + " out of range");
    return blocks_[k];
  }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;

 private:
  void normalize() {
    if (catalog_.empty()) throw ContractError("op catalog is empty");
    if (blocks_.empty()) throw ContractError("search space has no blocks");
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      auto& b = blocks_[k];
      if (b.cells.empty()) throw ContractError("block " + std::to_string(k) + " has no cells");
      if (b.in_width < 1 || b.out_width < 1) throw ContractError("block widths must be >= 1");
      if (k > 0 && b.in_width != blocks_[k - 1].out_width)
        throw ContractError("block " + std::to_string(k) + " input width does not match previous output width");
      for (auto& c : b.cells) {
        if (c.depth < 1 || c.width < 1) throw ContractError("cell depth and width must be >= 1");
        if (c.allowed.empty()) {
          std::vector<int> all(catalog_.size());
          std::iota(all.begin(), all.end(), 0);
          c.allowed.assign(c.depth, all);
        }
        if (c.allowed.size() != c.depth) throw ContractError("allowed-op list count must equal cell depth");
        for (const auto& layer : c.allowed) {
          if (layer.empty()) throw ContractError("a layer allows no ops");
          for (int op : layer)
            if (op < 0 || static_cast<std::size_t>(op) >= catalog_.size())
              throw ContractError("allowed op index " + std::to_string(op) + " outside catalog");
          if (!std::is_sorted(layer.begin(), layer.end()) ||
              std::adjacent_find(layer.begin(), layer.end()) != layer.end())
            throw ContractError("allowed op lists must be strictly increasing");
        }
      }
    }
  }

  std::vector<OpDesc> catalog_;
  std::vector<BlockSpec> blocks_;
};

// ---------------------------------------------------------------------------
// sizes

inline BigInt cell_size(const CellSpec& c) {
  BigInt n = 1;
  for (const auto& layer : c.allowed) n *= layer.size();
  return n;
}

inline BigInt block_size(const SearchSpace& s, std::size_t k) {
  BigInt n = 0;
  for (const auto& c : s.block(k).cells) n += cell_size(c);
  return n;
}

inline BigInt space_size(const SearchSpace& s) {
  BigInt n = 1;
  for (std::size_t k = 0; k < s.num_blocks(); ++k) n *= block_size(s, k);
  return n;
}

// Entire-space size divided by the size of block k alone.
inline BigRational blocky_reduction(const SearchSpace& s, std::size_t k) {
  if (k >= s.num_blocks()) throw IndexError("block index " + std::to_string(k) + " out of range");
  return BigRational(space_size(s), block_size(s, k));
}

inline std::size_t block_size_small(const SearchSpace& s, std::size_t k) {
  return block_size(s, k).convert_to<std::size_t>();
}

// ---------------------------------------------------------------------------
// enumeration: cell-major, then lexicographic over per-layer allowed lists

inline void for_each_block_arch(const SearchSpace& s, std::size_t k, const std::function<void(const BlockArch&)>& fn) {
  const auto& block = s.block(k);
  for (std::size_t c = 0; c < block.cells.size(); ++c) {
    const auto& cell = block.cells[c];
    std::vector<std::size_t> pos(cell.depth, 0);
    BlockArch a{static_cast<int>(c), std::vector<int>(cell.depth)};
    bool done = false;
    while (!done) {
      for (std::size_t l = 0; l < cell.depth; ++l) a.ops[l] = cell.allowed[l][pos[l]];
      fn(a);
      // odometer increment, last layer fastest
      done = true;
      for (std::size_t l = cell.depth; l-- > 0;) {
        if (++pos[l] < cell.allowed[l].size()) {
          done = false;
          break;
        }
        pos[l] = 0;
      }
    }
  }
}

inline std::vector<BlockArch> enumerate_block(const SearchSpace& s, std::size_t k) {
  std::vector<BlockArch> out;
  for_each_block_arch(s, k, [&](const BlockArch& a) { out.push_back(a); });
  return out;
}

// Position of a block arch in the canonical enumeration of block k.
inline std::size_t block_arch_index(const SearchSpace& s, std::size_t k, const BlockArch& a) {
  const auto& block = s.block(k);
  if (a.cell < 0 || static_cast<std::size_t>(a.cell) >= block.cells.size()) throw IndexError("cell index out of range");
  std::size_t offset = 0;
  for (int c = 0; c < a.cell; ++c) offset += cell_size(block.cells[c]).convert_to<std::size_t>();
  const auto& cell = block.cells[a.cell];
  if (a.ops.size() != cell.depth) throw ContractError("layer count does not match cell depth");
  std::size_t idx = 0;
  for (std::size_t l = 0; l < cell.depth; ++l) {
    const auto& allowed = cell.allowed[l];
    auto it = std::lower_bound(allowed.begin(), allowed.end(), a.ops[l]);
    if (it == allowed.end() || *it != a.ops[l]) throw ContractError("op not allowed at layer " + std::to_string(l));
    idx = idx * allowed.size() + static_cast<std::size_t>(it - allowed.begin());
  }
  return offset + idx;
}

// Total order used for every deterministic tie-break.
inline bool canonical_less(const SearchSpace& s, const Architecture& a, const Architecture& b) {
  for (std::size_t k = 0; k < s.num_blocks(); ++k) {
    const auto ia = block_arch_index(s, k, a.blocks[k]);
    const auto ib = block_arch_index(s, k, b.blocks[k]);
    if (ia != ib) return ia < ib;
  }
  return false;
}

inline void validate_arch(const SearchSpace& s, const Architecture& a) {
  if (a.blocks.size() != s.num_blocks()) throw ContractError("architecture block count does not match space");
  for (std::size_t k = 0; k < s.num_blocks(); ++k) (void)block_arch_index(s, k, a.blocks[k]);
}

// ---------------------------------------------------------------------------
// ids

inline std::string encode_block_arch(std::size_t k, const BlockArch& a) {
  std::string s = "b" + std::to_string(k) + ":c" + std::to_string(a.cell) + ":";
  for (std::size_t l = 0; l < a.ops.size(); ++l) {
    if (l) s += '.';
    s += std::to_string(a.ops[l]);
  }
  return s;
}

inline std::string encode_arch(const Architecture& a) {
  std::string s;
  for (std::size_t k = 0; k < a.blocks.size(); ++k) {
    if (k) s += '|';
    s += encode_block_arch(k, a.blocks[k]);
  }
  return s;
}

namespace detail {

struct IdCursor {
  std::string_view text;
  std::size_t base = 0;  // offset of text inside the full id
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, base + pos); }

  void expect(char c) {
    if (pos >= text.size() || text[pos] != c) fail(std::string("expected '") + c + "'");
    ++pos;
  }
  int number() {
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), v);
    if (ec != std::errc{} || ptr == text.data() + pos) fail("expected a non-negative integer");
    if (text[pos] == '-') fail("expected a non-negative integer");
    pos = static_cast<std::size_t>(ptr - text.data());
    return v;
  }
};

inline BlockArch parse_block_arch(const SearchSpace& space, std::size_t expected_block, std::string_view text,
                                  std::size_t base) {
  IdCursor cur{text, base, 0};
  cur.expect('b');
  const std::size_t bpos = cur.pos;
  const int b = cur.number();
  if (static_cast<std::size_t>(b) != expected_block) {
    cur.pos = bpos;
    cur.fail("block index " + std::to_string(b) + " where " + std::to_string(expected_block) + " was expected");
  }
  cur.expect(':');
  cur.expect('c');
  const std::size_t cpos = cur.pos;
  BlockArch a;
  a.cell = cur.number();
  const auto& block = space.block(expected_block);
  if (static_cast<std::size_t>(a.cell) >= block.cells.size()) {
    cur.pos = cpos;
    cur.fail("cell index " + std::to_string(a.cell) + " out of range");
  }
  cur.expect(':');
  const auto& cell = block.cells[a.cell];
  while (true) {
    const std::size_t opos = cur.pos;
    const int op = cur.number();
    const std::size_t l = a.ops.size();
    if (l >= cell.depth) {
      cur.pos = opos;
      cur.fail("more layers than cell depth " + std::to_string(cell.depth));
    }
    if (!std::binary_search(cell.allowed[l].begin(), cell.allowed[l].end(), op)) {
      cur.pos = opos;
      cur.fail("op " + std::to_string(op) + " not allowed at layer " + std::to_string(l));
    }
    a.ops.push_back(op);
    if (cur.pos == text.size()) break;
    cur.expect('.');
  }
  if (a.ops.size() != cell.depth)
    cur.fail("layer count " + std::to_string(a.ops.size()) + " does not match cell depth " + std::to_string(cell.depth));
  return a;
}

}  // namespace detail

inline BlockArch decode_block_arch(std::string_view id, const SearchSpace& space, std::size_t k) {
  return detail::parse_block_arch(space, k, id, 0);
}

inline Architecture decode_arch(std::string_view id, const SearchSpace& space) {
  Architecture a;
  std::size_t start = 0;
  for (std::size_t k = 0; k < space.num_blocks(); ++k) {
    const std::size_t bar = id.find('|', start);
    const bool last = k + 1 == space.num_blocks();
    if (last && bar != std::string_view::npos) throw ParseError("more blocks than the space has", bar);
    if (!last && bar == std::string_view::npos) throw ParseError("fewer blocks than the space has", id.size());
    const std::size_t end = last ? id.size() : bar;
    a.blocks.push_back(detail::parse_block_arch(space, k, id.substr(start, end - start), start));
    start = end + 1;
  }
  return a;
}

// ---------------------------------------------------------------------------
// cost lookup table

struct Cost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
  friend Cost operator+(Cost a, const Cost& b) { return a += b; }
  friend bool operator==(const Cost&, const Cost&) = default;
};

inline Cost linear_cost(std::size_t in, std::size_t out) { return {in * out + out, in * out}; }
inline Cost op_cost(std::size_t in, std::size_t out, int expansion) {
  return {op_param_count(in, out, expansion), op_macs(in, out, expansion)};
}

struct CellCost {
  Cost adapter_in;
  Cost adapter_out;
  std::vector<std::vector<Cost>> layer_op;  // [layer][catalog index]
};

struct CostLUT {
  std::vector<std::vector<CellCost>> cells;  // [block][cell]

  Cost block_cost(std::size_t k, const BlockArch& a) const {
    const auto& cc = cells.at(k).at(static_cast<std::size_t>(a.cell));
    Cost c = cc.adapter_in + cc.adapter_out;
    for (std::size_t l = 0; l < a.ops.size(); ++l) c += cc.layer_op.at(l).at(static_cast<std::size_t>(a.ops[l]));
    return c;
  }
  Cost cost(const Architecture& a) const {
    Cost c;
    for (std::size_t k = 0; k < a.blocks.size(); ++k) c += block_cost(k, a.blocks[k]);
    return c;
  }
};

inline CostLUT build_cost_lut(const SearchSpace& s) {
  CostLUT lut;
  for (const auto& block : s.blocks()) {
    auto& row = lut.cells.emplace_back();
    for (const auto& cell : block.cells) {
      CellCost cc;
      cc.adapter_in = linear_cost(block.in_width, cell.width);
      cc.adapter_out = linear_cost(cell.width, block.out_width);
      for (std::size_t l = 0; l < cell.depth; ++l) {
        auto& ops = cc.layer_op.emplace_back();
        for (const auto& d : s.catalog()) ops.push_back(op_cost(cell.width, cell.width, d.expansion));
      }
      row.push_back(std::move(cc));
    }
  }
  return lut;
}

struct Constraint {
  std::optional<double> max_params;
  std::optional<double> max_macs;

  bool unconstrained() const { return !max_params && !max_macs; }
  bool admits(double params, double macs) const {
    return (!max_params || params <= *max_params) && (!max_macs || macs <= *max_macs);
  }
  bool admits(const Cost& c) const { return admits(static_cast<double>(c.params), static_cast<double>(c.macs)); }
  void validate() const {
    if ((max_params && !(*max_params > 0)) || (max_macs && !(*max_macs > 0)))
      throw ContractError("constraint limits must be positive");
  }
};

}  // namespace dna
