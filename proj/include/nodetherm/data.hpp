#pragma once

// Observation data: per-node irregular time grids, temperatures, and binary
// covariate values derived from scheduled activity windows.

#include <cstdint>
#include <string>
#include <vector>

#include "nodetherm/meta_gp.hpp"
#include "nodetherm/topology.hpp"

namespace nodetherm {

// Internal time unit is minutes; timestamps on disk are epoch seconds (or
// RFC 3339 strings) and are shifted by t0 and rescaled on load.
struct Dataset {
  int S = 0;  // nodes
  int J = 0;  // covariates (excluding the baseline)
  double t0 = 0.0;             // epoch seconds at grid time zero
  std::vector<TimeGrid> grid;  // per node, minutes since t0
  std::vector<std::vector<double>> y;  // per node, degrees C
  std::vector<std::vector<double>> x;  // per node, row-major T x J

  double covariate(int s, size_t t, int j) const { return x[s][t * J + j]; }
  int64_t total_obs() const;
  void validate(const Topology& topo) const;
};

// Raw telemetry rows (unsorted on disk is fine; sorted per node on load).
struct TelemetryTable {
  std::vector<int32_t> node;   // 1-based ids as they appear in the file
  std::vector<double> time_s;  // epoch seconds
  std::vector<double> temp_c;
};

// A scheduled activity window: covariate j is 1 on the listed nodes for
// times in [start_s, end_s).
struct CovariateWindow {
  int j = 0;                    // 1-based covariate index
  std::vector<int32_t> nodes;   // 0-based node ids; empty means all nodes
  double start_s = 0.0, end_s = 0.0;
};

// Node-set expressions: "all" or comma-separated 1-based ids and ranges
// ("3", "5-10,12"). Returns 0-based ids; "all" returns empty (= every node).
std::vector<int32_t> parse_node_set(const std::string& expr, int S);

// Assemble the model-ready dataset. Temperatures outside [-20, 120] C,
// unknown node ids, and duplicate (node, time) rows throw.
Dataset build_dataset(const TelemetryTable& table, const std::vector<CovariateWindow>& windows,
                      const Topology& topo, int J);

}  // namespace nodetherm
