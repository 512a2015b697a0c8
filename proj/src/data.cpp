#include "nodetherm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nodetherm {

int64_t Dataset::total_obs() const {
  int64_t n = 0;
  for (const auto& g : grid) n += int64_t(g.size());
  return n;
}

void Dataset::validate(const Topology& topo) const {
  if (S != topo.S) throw std::runtime_error("Dataset: node count does not match topology");
  if (int(grid.size()) != S || int(y.size()) != S || int(x.size()) != S)
    throw std::runtime_error("Dataset: per-node container size mismatch");
  for (int s = 0; s < S; ++s) {
    grid[s].validate();
    if (y[s].size() != grid[s].size() || x[s].size() != grid[s].size() * size_t(J))
      throw std::runtime_error("Dataset: node " + std::to_string(s) + " shape mismatch");
  }
}

std::vector<int32_t> parse_node_set(const std::string& expr, int S) {
  std::vector<int32_t> out;
  if (expr == "all") return out;
  if (expr.empty()) throw std::runtime_error("node set: empty expression");
  size_t pos = 0;
  while (pos < expr.size()) {
    size_t comma = expr.find(',', pos);
    std::string item = expr.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? expr.size() : comma + 1;
    if (item.empty()) throw std::runtime_error("node set: empty element in '" + expr + "'");
    size_t dash = item.find('-');
    long lo, hi;
    try {
      if (dash == std::string::npos) {
        lo = hi = std::stol(item);
      } else {
        lo = std::stol(item.substr(0, dash));
        hi = std::stol(item.substr(dash + 1));
      }
    } catch (const std::exception&) {
      throw std::runtime_error("node set: cannot parse '" + item + "'");
    }
    if (lo < 1 || hi > S || lo > hi)
      throw std::runtime_error("node set: range '" + item + "' outside 1.." + std::to_string(S));
    for (long v = lo; v <= hi; ++v) out.push_back(int32_t(v - 1));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Dataset build_dataset(const TelemetryTable& table, const std::vector<CovariateWindow>& windows,
                      const Topology& topo, int J) {
  Dataset ds;
  ds.S = topo.S;
  ds.J = J;
  const size_t n = table.node.size();
  if (table.time_s.size() != n || table.temp_c.size() != n)
    throw std::runtime_error("telemetry: column length mismatch");

  for (const auto& w : windows) {
    if (w.j < 1 || w.j > J)
      throw std::runtime_error("covariate window: index " + std::to_string(w.j) +
                               " outside 1.." + std::to_string(J));
    if (!(w.end_s > w.start_s))
      throw std::runtime_error("covariate window: end must exceed start");
  }

  // Sort row indices by (node, time) to build per-node grids.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (table.node[a] != table.node[b]) return table.node[a] < table.node[b];
    return table.time_s[a] < table.time_s[b];
  });

  double t0 = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    const int32_t id = table.node[i];
    if (id < 1 || id > topo.S)
      throw std::runtime_error("telemetry: node id " + std::to_string(id) + " outside 1.." +
                               std::to_string(topo.S));
    const double temp = table.temp_c[i];
    if (!(temp >= -20.0 && temp <= 120.0))
      throw std::runtime_error("telemetry: temperature " + std::to_string(temp) +
                               " C for node " + std::to_string(id) +
                               " outside the plausible range [-20, 120]");
    t0 = std::min(t0, table.time_s[i]);
  }
  ds.t0 = n ? t0 : 0.0;

  ds.grid.resize(ds.S);
  ds.y.resize(ds.S);
  ds.x.resize(ds.S);
  for (size_t k = 0; k < n; ++k) {
    const size_t i = order[k];
    const int s = table.node[i] - 1;
    if (k > 0) {
      const size_t p = order[k - 1];
      if (table.node[p] == table.node[i] && table.time_s[p] == table.time_s[i])
        throw std::runtime_error("telemetry: duplicate observation for node " +
                                 std::to_string(table.node[i]) + " at t=" +
                                 std::to_string(table.time_s[i]));
    }
    ds.grid[s].t.push_back((table.time_s[i] - ds.t0) / 60.0);
    ds.y[s].push_back(table.temp_c[i]);
  }

  // Fill covariates from the windows. Window node lists are 0-based; empty
  // means all nodes.
  std::vector<std::vector<const CovariateWindow*>> by_node(ds.S);
  for (const auto& w : windows) {
    if (w.nodes.empty()) {
      for (int s = 0; s < ds.S; ++s) by_node[s].push_back(&w);
    } else {
      for (int32_t s : w.nodes) {
        if (s < 0 || s >= ds.S)
          throw std::runtime_error("covariate window: node id out of range");
        by_node[s].push_back(&w);
      }
    }
  }
  for (int s = 0; s < ds.S; ++s) {
    const size_t T = ds.grid[s].size();
    ds.x[s].assign(T * size_t(J), 0.0);
    for (const CovariateWindow* w : by_node[s]) {
      for (size_t t = 0; t < T; ++t) {
        const double sec = ds.t0 + 60.0 * ds.grid[s].t[t];
        if (sec >= w->start_s && sec < w->end_s) ds.x[s][t * size_t(J) + (w->j - 1)] = 1.0;
      }
    }
  }
  ds.validate(topo);
  return ds;
}

}  // namespace nodetherm
