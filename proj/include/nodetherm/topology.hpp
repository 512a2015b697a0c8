#pragma once

// Machine-room topology: nodes in racks, racks in rows, rows across aisles.
// A layout file describes the room as rows of bays; this module turns it into
// typed neighbor pairs used by the spatial precision matrices.
//
// Neighbor types (fixed taxonomy):
//   1  same rack, same level, adjacent columns
//   2  same rack, same column, adjacent levels (no shelf between)
//   3  same row, adjacent compute racks, facing columns at the same level
//   4  same rack, same column, adjacent levels across a shelf
//   5  same row, compute racks flanking a network rack, facing columns
//   6  across the first aisle: same position, column, and level
//   7  across the second aisle: same position, column, and level
//
// Layout file grammar (sectioned key-value, '#' comments):
//   format_version 1
//   [grid]     columns_per_rack, levels_per_rack, shelf_after_levels
//   [pitch_m]  column, level, bay, row, shelf_extra (optional)
//   [rows]     <row name> <tokens: C, C4, N, E>
//   [aisles]   <row name> <row name> <neighbor type>
// Tokens: C = full compute rack, C4 = four-node rack occupying the first
// level, N = network rack (no nodes; bridges type 5), E = empty bay (no
// nodes, breaks in-row adjacency).

#include <array>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

namespace nodetherm {

struct NodeInfo {
  int row = 0, position = 0, column = 0, level = 0;  // 1-based labels
  double x = 0.0, y = 0.0, z = 0.0;                  // meters
};

struct Topology {
  int S = 0;  // number of nodes
  int L = 0;  // number of neighbor types
  std::vector<NodeInfo> nodes;
  // pairs[l-1]: canonical (i < j) node pairs of type l, 0-based ids.
  std::vector<std::vector<std::pair<int32_t, int32_t>>> pairs;
  // neighbors[s][l-1]: sorted neighbor ids of node s with type l.
  std::vector<std::vector<std::vector<int32_t>>> neighbors;

  int64_t pair_count() const;
  int64_t pair_count(int type) const { return int64_t(pairs[type - 1].size()); }
  // Nonzero entries of any precision matrix with this sparsity pattern
  // (diagonal plus both triangles).
  int64_t precision_nnz() const { return int64_t(S) + 2 * pair_count(); }
  int neighbor_count(int s, int type) const { return int(neighbors[s][type - 1].size()); }
  int neighbor_total(int s) const;
  double distance(int i, int j) const;

  void validate() const;  // throws on duplicate pairs, bad ids, isolated nodes
};

// Build directly from typed pairs (testing and ad-hoc machines). Node ids are
// 0-based, types 1-based. Duplicate or asymmetric re-declarations throw.
Topology topology_from_pairs(int S, int L,
                             const std::vector<std::tuple<int, int, int>>& typed_pairs);

// Parse a layout file and construct the topology. Errors carry line numbers.
Topology load_layout(const std::string& path);
Topology parse_layout_text(const std::string& text, const std::string& origin);

// Band-reducing node order exploiting the room structure: sweep bays along
// the rows, emitting each vertical (position, column) stack contiguously.
// Returns perm with perm[k] = original id placed at position k.
std::vector<int32_t> slice_permutation(const Topology& topo);

}  // namespace nodetherm
