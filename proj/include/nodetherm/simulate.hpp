#pragma once

// Forward generator: draws a complete synthetic dataset from the model at
// known parameters. Coefficient fields come from the spatial prior (or are
// pinned), residual paths from the temporal process, noise from the
// observation equation. The generated table is assembled into a Dataset
// through the same ingestion path the readers use, so a write/read round trip
// is exact. Every draw is stream-addressed by (channel, node), making output
// independent of worker count.

#include <cstdint>
#include <string>
#include <vector>

#include "nodetherm/data.hpp"
#include "nodetherm/sampler.hpp"
#include "nodetherm/topology.hpp"

namespace nodetherm {

struct TruthSpec {
  std::vector<double> mu, tau;  // size J+1 (index 0 = baseline)
  std::vector<double> lambda;   // size L simplex; empty = uniform
  double phi = 0.9;
  double upsilon2 = 1.0, theta = 1.0, kappa = 2.0, xi = 0.3, sigma2 = 0.25;
  bool gaussian_body = false;  // residuals without the heavy tail (ablation truth)

  // Pinned coefficient fields [J+1][S]; empty = drawn from the spatial prior.
  std::vector<std::vector<double>> beta_fixed;

  // Grids: obs_per_node points per node, consecutive gaps uniform on
  // [gap_min_s, gap_max_s] seconds, each point then dropped at missing_rate.
  int obs_per_node = 120;
  double gap_min_s = 50.0, gap_max_s = 70.0;
  double missing_rate = 0.1;
  double t0 = 0.0;  // epoch seconds origin of the observation span

  struct Window {        // covariate design plan
    int j = 0;           // 1-based covariate index
    std::string nodes;   // node-set expression ("all", "1-112", ...)
    double start_s = 0.0, end_s = 0.0;  // epoch seconds
  };
  std::vector<Window> windows;

  int J() const { return int(mu.size()) - 1; }
  void validate(const Topology& topo) const;
};

struct SimulatedData {
  TelemetryTable table;                  // rows as the telemetry writer emits them
  std::vector<CovariateWindow> windows;  // resolved windows (0-based node ids)
  Dataset dataset;                       // assembled via build_dataset (dogfooding)
  ParamState truth;                      // realized beta and delta at the kept points
};

SimulatedData simulate_dataset(const Topology& topo, const TruthSpec& spec, uint64_t seed,
                               int workers = 1);

// Default synthetic machine truth: one covariate, active on the first half of
// the nodes for the middle half of the observation span; heavy-tailed
// residual process.
TruthSpec default_truth(const Topology& topo);

// JSON round trip for the CLI. Window times may be epoch numbers or RFC 3339
// strings. truth_to_json optionally appends the realized coefficient fields.
TruthSpec truth_from_json(const std::string& text, const Topology& topo);
std::string truth_to_json(const TruthSpec& spec, const ParamState* realized);

}  // namespace nodetherm
