#pragma once

// Posterior-predictive summaries: the machine-wide upper temperature bound
// under a hypothetical steady workload, and per-node summaries of the
// coefficient fields. For every kept posterior draw a fresh residual path is
// simulated per node on a uniform scenario grid (a new run, not a
// continuation of the observed paths), the observation equation is assembled,
// and per-node / global maxima are reduced to empirical 95th percentiles.
//
// Draw m, node s uses streams (kPredict, m, s) for the path and
// (kPredictNoise, m, s) for measurement error, so results are independent of
// worker count, scenarios with the same seed are common-random-number paired,
// and enlarging the horizon only appends to each path.

#include <cstdint>
#include <string>
#include <vector>

#include "nodetherm/sampler.hpp"
#include "nodetherm/topology.hpp"

namespace nodetherm {

struct Scenario {
  std::vector<double> x;       // covariate settings, one per covariate
  double horizon_s = 86400.0;  // simulated span, seconds
  double spacing_s = 60.0;     // grid spacing, seconds
  bool include_noise = true;   // add measurement error to predicted values
  bool gaussian_body = false;  // ablation: plain-normal residual marginal
  uint64_t seed = 1;
  int workers = 1;

  void validate(int J) const;
  int64_t grid_points() const;  // floor(horizon / spacing)
};

struct PredictiveSummary {
  double global_bound = 0.0;           // 95th percentile of per-draw global maxima
  std::vector<double> per_node_bound;  // 95th percentile of per-draw node maxima
  std::vector<double> draw_max;        // per-draw global maxima (audit)
  std::vector<std::vector<double>> node_max;  // [draw][node] maxima (audit)
  int64_t draws_used = 0;
};

// Nearest-rank empirical quantile: the ceil(q * n)-th order statistic.
double nearest_rank_quantile(std::vector<double> values, double q);

PredictiveSummary state_of_machine(const PosteriorChain& chain, const Topology& topo,
                                   const Scenario& scenario);

enum class EffectKind { kMean, kLower95, kUpper95 };
EffectKind effect_kind_from_string(const std::string& name);  // mean|lower95|upper95

// Per-node posterior summary of coefficient field j (0 = baseline): mean or
// the 2.5 / 97.5 empirical percentile across kept draws.
std::vector<double> effect_map(const PosteriorChain& chain, int j, EffectKind kind);

}  // namespace nodetherm
