#include "nodetherm/predictive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nodetherm/meta_gp.hpp"
#include "nodetherm/parallel.hpp"
#include "nodetherm/rng.hpp"
#include "nodetherm/tail_marginal.hpp"

namespace nodetherm {

void Scenario::validate(int J) const {
  if (int(x.size()) != J)
    throw std::domain_error("scenario: " + std::to_string(x.size()) +
                            " covariate settings for a chain with " + std::to_string(J) +
                            " covariates");
  for (double v : x)
    if (!std::isfinite(v)) throw std::domain_error("scenario: covariate settings must be finite");
  if (!(horizon_s > 0.0)) throw std::domain_error("scenario: horizon must be positive");
  if (!(spacing_s > 0.0)) throw std::domain_error("scenario: grid spacing must be positive");
  if (grid_points() < 1)
    throw std::domain_error("scenario: horizon shorter than one grid spacing");
  if (workers < 1) throw std::domain_error("scenario: workers must be >= 1");
}

int64_t Scenario::grid_points() const { return int64_t(horizon_s / spacing_s); }

double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::domain_error("quantile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw std::domain_error("quantile level must lie in (0, 1]");
  const auto n = int64_t(values.size());
  int64_t k = int64_t(std::ceil(q * double(n)));
  k = std::min(std::max<int64_t>(k, 1), n);
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
  return values[k - 1];
}

PredictiveSummary state_of_machine(const PosteriorChain& chain, const Topology& topo,
                                   const Scenario& scenario) {
  if (chain.draw_count() == 0) throw std::domain_error("state_of_machine: empty chain");
  if (chain.S != topo.S)
    throw std::domain_error("state_of_machine: chain and topology disagree on node count");
  scenario.validate(chain.J);
  const bool gaussian = scenario.gaussian_body || chain.gaussian_body;

  const int64_t N = scenario.grid_points();
  TimeGrid grid;
  grid.t.resize(size_t(N));
  for (int64_t k = 0; k < N; ++k) grid.t[size_t(k)] = double(k + 1) * scenario.spacing_s / 60.0;

  const int S = topo.S;
  const auto M = int64_t(chain.draw_count());
  PredictiveSummary out;
  out.draws_used = M;
  out.node_max.assign(size_t(M), std::vector<double>(size_t(S)));
  out.draw_max.resize(size_t(M));

  parallel_for(M, scenario.workers, [&](int64_t m) {
    const ChainDraw& d = chain.draws[size_t(m)];
    TailMarginal marg(d.upsilon2, d.kappa, d.xi);
    const OuFactor ou = OuFactor::build(grid, d.theta);
    const double noise_sd = std::sqrt(d.sigma2);
    std::vector<double> path;
    double global = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < S; ++s) {
      double level = d.beta[0][size_t(s)];
      for (int j = 0; j < chain.J; ++j) level += d.beta[size_t(j + 1)][size_t(s)] * scenario.x[size_t(j)];
      RngStream path_rng = make_stream(chain.seed + scenario.seed, StreamDomain::kPredict,
                                       uint64_t(m), uint64_t(s));
      simulate_residual(ou, marg, gaussian, path_rng, path);
      double peak = -std::numeric_limits<double>::infinity();
      if (scenario.include_noise) {
        RngStream noise_rng = make_stream(chain.seed + scenario.seed, StreamDomain::kPredictNoise,
                                          uint64_t(m), uint64_t(s));
        for (int64_t k = 0; k < N; ++k)
          peak = std::max(peak, level + path[size_t(k)] + noise_sd * noise_rng.normal());
      } else {
        for (int64_t k = 0; k < N; ++k) peak = std::max(peak, level + path[size_t(k)]);
      }
      out.node_max[size_t(m)][size_t(s)] = peak;
      global = std::max(global, peak);
    }
    out.draw_max[size_t(m)] = global;
  });

  out.per_node_bound.resize(size_t(S));
  std::vector<double> column(size_t(M), 0.0);
  for (int s = 0; s < S; ++s) {
    for (int64_t m = 0; m < M; ++m) column[size_t(m)] = out.node_max[size_t(m)][size_t(s)];
    out.per_node_bound[size_t(s)] = nearest_rank_quantile(column, 0.95);
  }
  out.global_bound = nearest_rank_quantile(out.draw_max, 0.95);
  return out;
}

EffectKind effect_kind_from_string(const std::string& name) {
  if (name == "mean") return EffectKind::kMean;
  if (name == "lower95") return EffectKind::kLower95;
  if (name == "upper95") return EffectKind::kUpper95;
  throw std::domain_error("effect map kind must be mean, lower95, or upper95 (got '" + name +
                          "')");
}

std::vector<double> effect_map(const PosteriorChain& chain, int j, EffectKind kind) {
  if (chain.draw_count() == 0) throw std::domain_error("effect_map: empty chain");
  if (j < 0 || j > chain.J)
    throw std::domain_error("effect_map: coefficient index " + std::to_string(j) +
                            " outside 0.." + std::to_string(chain.J));
  const auto M = size_t(chain.draw_count());
  std::vector<double> out(size_t(chain.S));
  std::vector<double> column(M);
  for (int s = 0; s < chain.S; ++s) {
    for (size_t m = 0; m < M; ++m) column[m] = chain.draws[m].beta[size_t(j)][size_t(s)];
    switch (kind) {
      case EffectKind::kMean: {
        double sum = 0.0;
        for (double v : column) sum += v;
        out[size_t(s)] = sum / double(M);
        break;
      }
      case EffectKind::kLower95: {
        // Complement of the upper rule so the two bounds are symmetric:
        // the floor(0.025 * M + 1)-th smallest value.
        std::vector<double> c(column);
        int64_t k = int64_t(M) - int64_t(std::ceil(0.975 * double(M)));
        k = std::min(std::max<int64_t>(k, 0), int64_t(M) - 1);
        std::nth_element(c.begin(), c.begin() + k, c.end());
        out[size_t(s)] = c[size_t(k)];
        break;
      }
      case EffectKind::kUpper95:
        out[size_t(s)] = nearest_rank_quantile(column, 0.975);
        break;
    }
  }
  return out;
}

}  // namespace nodetherm
