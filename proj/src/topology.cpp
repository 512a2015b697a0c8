#include "nodetherm/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nodetherm {

namespace {

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + msg);
}

struct Bay {
  std::string token;  // C, C4, N, E
  bool compute() const { return token == "C" || token == "C4"; }
};

struct RowSpec {
  std::string name;
  std::vector<Bay> bays;  // index 0 = position 1
  int line = 0;
};

struct LayoutSpec {
  int columns = 0, levels = 0;
  std::vector<int> shelf_after;  // vertical gaps between level k and k+1
  double pitch_col = 0.0, pitch_level = 0.0, pitch_bay = 0.0, pitch_row = 0.0;
  double shelf_extra = 0.0;
  std::vector<RowSpec> rows;
  std::vector<std::tuple<int, int, int>> aisles;  // row index a, row index b, type
};

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream iss(line);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

LayoutSpec read_spec(const std::string& text, const std::string& origin) {
  LayoutSpec spec;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  bool saw_version = false;
  std::map<std::string, int> row_index;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    auto toks = tokenize(raw);
    if (toks.empty()) continue;
    if (!saw_version) {
      if (toks.size() != 2 || toks[0] != "format_version")
        fail(origin, lineno, "expected 'format_version <n>' before any content");
      if (toks[1] != "1") fail(origin, lineno, "unsupported format_version " + toks[1]);
      saw_version = true;
      continue;
    }
    if (toks[0].front() == '[') {
      if (toks.size() != 1 || toks[0].back() != ']')
        fail(origin, lineno, "malformed section header");
      section = toks[0].substr(1, toks[0].size() - 2);
      if (section != "grid" && section != "pitch_m" && section != "rows" &&
          section != "aisles")
        fail(origin, lineno, "unknown section [" + section + "]");
      continue;
    }
    if (section.empty()) fail(origin, lineno, "content before any [section]");
    if (section == "grid") {
      if (toks[0] == "columns_per_rack" && toks.size() == 2)
        spec.columns = std::stoi(toks[1]);
      else if (toks[0] == "levels_per_rack" && toks.size() == 2)
        spec.levels = std::stoi(toks[1]);
      else if (toks[0] == "shelf_after_levels") {
        for (size_t i = 1; i < toks.size(); ++i)
          spec.shelf_after.push_back(std::stoi(toks[i]));
      } else
        fail(origin, lineno, "unknown grid key '" + toks[0] + "'");
    } else if (section == "pitch_m") {
      if (toks.size() != 2) fail(origin, lineno, "pitch entries take one value");
      double v = std::stod(toks[1]);
      if (toks[0] == "column") spec.pitch_col = v;
      else if (toks[0] == "level") spec.pitch_level = v;
      else if (toks[0] == "bay") spec.pitch_bay = v;
      else if (toks[0] == "row") spec.pitch_row = v;
      else if (toks[0] == "shelf_extra") spec.shelf_extra = v;
      else fail(origin, lineno, "unknown pitch key '" + toks[0] + "'");
    } else if (section == "rows") {
      RowSpec row;
      row.name = toks[0];
      row.line = lineno;
      if (row_index.count(row.name)) fail(origin, lineno, "duplicate row '" + row.name + "'");
      for (size_t i = 1; i < toks.size(); ++i) {
        if (toks[i] != "C" && toks[i] != "C4" && toks[i] != "N" && toks[i] != "E")
          fail(origin, lineno, "unknown bay token '" + toks[i] + "'");
        row.bays.push_back({toks[i]});
      }
      if (row.bays.empty()) fail(origin, lineno, "row '" + row.name + "' has no bays");
      row_index[row.name] = int(spec.rows.size());
      spec.rows.push_back(std::move(row));
    } else if (section == "aisles") {
      if (toks.size() != 3) fail(origin, lineno, "aisle entries are '<row> <row> <type>'");
      if (!row_index.count(toks[0])) fail(origin, lineno, "unknown row '" + toks[0] + "'");
      if (!row_index.count(toks[1])) fail(origin, lineno, "unknown row '" + toks[1] + "'");
      if (toks[0] == toks[1]) fail(origin, lineno, "aisle joins a row to itself");
      spec.aisles.emplace_back(row_index[toks[0]], row_index[toks[1]], std::stoi(toks[2]));
    }
  }
  if (!saw_version) fail(origin, 1, "empty layout file");
  if (spec.columns < 1 || spec.levels < 1)
    fail(origin, 1, "grid must declare columns_per_rack and levels_per_rack");
  for (int s : spec.shelf_after)
    if (s < 1 || s >= spec.levels)
      fail(origin, 1, "shelf_after_levels entries must lie in [1, levels-1]");
  if (spec.rows.empty()) fail(origin, 1, "no rows declared");
  if (!(spec.pitch_col > 0) || !(spec.pitch_level > 0) || !(spec.pitch_bay > 0) ||
      !(spec.pitch_row > 0))
    fail(origin, 1, "pitch_m must declare positive column, level, bay, and row");
  return spec;
}

}  // namespace

int64_t Topology::pair_count() const {
  int64_t n = 0;
  for (const auto& p : pairs) n += int64_t(p.size());
  return n;
}

int Topology::neighbor_total(int s) const {
  int n = 0;
  for (int l = 1; l <= L; ++l) n += neighbor_count(s, l);
  return n;
}

double Topology::distance(int i, int j) const {
  const auto& a = nodes[i];
  const auto& b = nodes[j];
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.z - b.z) * (a.z - b.z));
}

void Topology::validate() const {
  if (int(pairs.size()) != L || int(neighbors.size()) != S)
    throw std::runtime_error("Topology: inconsistent container sizes");
  std::set<std::pair<int32_t, int32_t>> seen;
  for (int l = 0; l < L; ++l) {
    for (auto [i, j] : pairs[l]) {
      if (i < 0 || j < 0 || i >= S || j >= S)
        throw std::runtime_error("Topology: node id out of range in pair list");
      if (i >= j) throw std::runtime_error("Topology: pair not in canonical order");
      if (!seen.insert({i, j}).second)
        throw std::runtime_error("Topology: duplicate neighbor pair (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
  for (int s = 0; s < S; ++s) {
    if (neighbor_total(s) == 0)
      throw std::runtime_error("Topology: node " + std::to_string(s) + " is isolated");
  }
}

namespace {

Topology assemble(int S, int L, std::vector<NodeInfo> nodes,
                  const std::vector<std::tuple<int, int, int>>& typed_pairs) {
  Topology topo;
  topo.S = S;
  topo.L = L;
  topo.nodes = std::move(nodes);
  topo.pairs.assign(L, {});
  topo.neighbors.assign(S, std::vector<std::vector<int32_t>>(L));
  std::set<std::pair<int, int>> seen;
  for (auto [i, j, l] : typed_pairs) {
    if (i == j) throw std::runtime_error("Topology: node paired with itself: " + std::to_string(i));
    if (i < 0 || j < 0 || i >= S || j >= S)
      throw std::runtime_error("Topology: node id out of range: (" + std::to_string(i) +
                               "," + std::to_string(j) + ")");
    if (l < 1 || l > L)
      throw std::runtime_error("Topology: neighbor type " + std::to_string(l) +
                               " outside 1.." + std::to_string(L));
    int a = std::min(i, j), b = std::max(i, j);
    if (!seen.insert({a, b}).second)
      throw std::runtime_error("Topology: duplicate neighbor declaration (" +
                               std::to_string(a) + "," + std::to_string(b) + ")");
    topo.pairs[l - 1].emplace_back(a, b);
    topo.neighbors[a][l - 1].push_back(b);
    topo.neighbors[b][l - 1].push_back(a);
  }
  for (auto& per_node : topo.neighbors)
    for (auto& lst : per_node) std::sort(lst.begin(), lst.end());
  for (auto& lst : topo.pairs) std::sort(lst.begin(), lst.end());
  topo.validate();
  return topo;
}

}  // namespace

Topology topology_from_pairs(int S, int L,
                             const std::vector<std::tuple<int, int, int>>& typed_pairs) {
  if (S < 1 || L < 1) throw std::runtime_error("Topology: S and L must be positive");
  std::vector<NodeInfo> nodes(S);
  for (int i = 0; i < S; ++i) nodes[i].x = double(i);  // distinct placeholder coordinates
  return assemble(S, L, std::move(nodes), typed_pairs);
}

Topology parse_layout_text(const std::string& text, const std::string& origin) {
  LayoutSpec spec = read_spec(text, origin);
  const int kTypes = 7;

  // Vertical placement: level 1 at the bottom; shelves add extra clearance.
  auto level_z = [&](int level) {
    double z = (level - 1) * spec.pitch_level;
    for (int s : spec.shelf_after)
      if (level > s) z += spec.shelf_extra;
    return z;
  };
  std::set<int> shelf(spec.shelf_after.begin(), spec.shelf_after.end());

  // Instantiate nodes row by row, bay by bay, level-major inside a rack.
  std::vector<NodeInfo> nodes;
  // node id lookup: [row][position] -> map (column, level) -> id
  std::vector<std::vector<std::map<std::pair<int, int>, int>>> ids(spec.rows.size());
  for (size_t r = 0; r < spec.rows.size(); ++r) {
    const auto& row = spec.rows[r];
    ids[r].resize(row.bays.size());
    for (size_t p = 0; p < row.bays.size(); ++p) {
      const auto& bay = row.bays[p];
      if (!bay.compute()) continue;
      const int levels = bay.token == "C4" ? 1 : spec.levels;
      for (int level = 1; level <= levels; ++level) {
        for (int col = 1; col <= spec.columns; ++col) {
          NodeInfo info;
          info.row = int(r) + 1;
          info.position = int(p) + 1;
          info.column = col;
          info.level = level;
          info.x = double(p) * spec.pitch_bay + (col - 1) * spec.pitch_col;
          info.y = double(r) * spec.pitch_row;
          info.z = level_z(level);
          ids[r][p][{col, level}] = int(nodes.size());
          nodes.push_back(info);
        }
      }
    }
  }

  std::vector<std::tuple<int, int, int>> typed;
  auto add = [&](int i, int j, int type) { typed.emplace_back(i, j, type); };

  for (size_t r = 0; r < spec.rows.size(); ++r) {
    const auto& row = spec.rows[r];
    for (size_t p = 0; p < row.bays.size(); ++p) {
      if (!row.bays[p].compute()) continue;
      const auto& rack = ids[r][p];
      const int levels = row.bays[p].token == "C4" ? 1 : spec.levels;
      // Type 1: adjacent columns on a level.
      for (int level = 1; level <= levels; ++level)
        for (int col = 1; col < spec.columns; ++col)
          add(rack.at({col, level}), rack.at({col + 1, level}), 1);
      // Types 2/4: adjacent levels, split by shelves.
      for (int level = 1; level < levels; ++level)
        for (int col = 1; col <= spec.columns; ++col)
          add(rack.at({col, level}), rack.at({col, level + 1}), shelf.count(level) ? 4 : 2);
      // Type 3: junction with the next compute bay.
      if (p + 1 < row.bays.size() && row.bays[p + 1].compute()) {
        const auto& next = ids[r][p + 1];
        const int shared = std::min(levels, row.bays[p + 1].token == "C4" ? 1 : spec.levels);
        for (int level = 1; level <= shared; ++level)
          add(rack.at({spec.columns, level}), next.at({1, level}), 3);
      }
      // Type 5: bridge across a network rack.
      if (p + 2 < row.bays.size() && row.bays[p + 1].token == "N" &&
          row.bays[p + 2].compute()) {
        const auto& far = ids[r][p + 2];
        const int shared = std::min(levels, row.bays[p + 2].token == "C4" ? 1 : spec.levels);
        for (int level = 1; level <= shared; ++level)
          add(rack.at({spec.columns, level}), far.at({1, level}), 5);
      }
    }
  }

  // Aisle pairs: same position, column, and level across the two rows.
  for (auto [ra, rb, type] : spec.aisles) {
    if (type < 1 || type > kTypes)
      throw std::runtime_error(origin + ": aisle type " + std::to_string(type) +
                               " outside 1..7");
    const auto& rowa = spec.rows[ra];
    const auto& rowb = spec.rows[rb];
    const size_t np = std::min(rowa.bays.size(), rowb.bays.size());
    for (size_t p = 0; p < np; ++p) {
      if (!rowa.bays[p].compute() || !rowb.bays[p].compute()) continue;
      const int levels = std::min(rowa.bays[p].token == "C4" ? 1 : spec.levels,
                                  rowb.bays[p].token == "C4" ? 1 : spec.levels);
      for (int level = 1; level <= levels; ++level)
        for (int col = 1; col <= spec.columns; ++col)
          add(ids[ra][p].at({col, level}), ids[rb][p].at({col, level}), type);
    }
  }

  const int S = int(nodes.size());
  return assemble(S, kTypes, std::move(nodes), typed);
}

Topology load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open layout file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout_text(ss.str(), path);
}

std::vector<int32_t> slice_permutation(const Topology& topo) {
  std::vector<int32_t> perm(topo.S);
  for (int i = 0; i < topo.S; ++i) perm[i] = i;
  std::stable_sort(perm.begin(), perm.end(), [&](int32_t a, int32_t b) {
    const auto& na = topo.nodes[a];
    const auto& nb = topo.nodes[b];
    return std::tuple(na.position, na.column, na.row, na.level) <
           std::tuple(nb.position, nb.column, nb.row, nb.level);
  });
  return perm;
}

}  // namespace nodetherm
