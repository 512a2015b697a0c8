#include "nodetherm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nodetherm/normal.hpp"
#include "nodetherm/parallel.hpp"
#include "nodetherm/rng.hpp"
#include "nodetherm/tail_marginal.hpp"

namespace nodetherm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Streaming Pearson correlation over added pairs.
struct PairAccum {
  double su = 0, sv = 0, suv = 0, suu = 0, svv = 0;
  int64_t n = 0;
  void add(double u, double v) {
    su += u;
    sv += v;
    suv += u * v;
    suu += u * u;
    svv += v * v;
    ++n;
  }
  double corr() const {
    if (n < 3) return kNaN;
    const double cu = suu - su * su / double(n);
    const double cv = svv - sv * sv / double(n);
    const double cuv = suv - su * sv / double(n);
    if (!(cu > 0.0) || !(cv > 0.0)) return kNaN;
    return cuv / std::sqrt(cu * cv);
  }
};

double pooled_median_spacing(const std::vector<TimeGrid>& grid) {
  std::vector<double> gaps;
  for (const auto& g : grid)
    for (size_t i = 1; i < g.size(); ++i) gaps.push_back(g.t[i] - g.t[i - 1]);
  if (gaps.empty()) throw std::domain_error("diagnostics: no consecutive observations anywhere");
  const size_t mid = gaps.size() / 2;
  std::nth_element(gaps.begin(), gaps.begin() + mid, gaps.end());
  return gaps[mid];
}

std::vector<double> pooled(const std::vector<std::vector<double>>& per_node) {
  std::vector<double> out;
  for (const auto& v : per_node) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Empirical chi over ordered pairs for one threshold: (both exceed)/(first
// exceeds). Writes the conditioning count.
double chi_at(const std::vector<double>& u, const std::vector<double>& v, double c,
              int64_t& cond_count) {
  int64_t cond = 0, both = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    if (u[i] > c) {
      ++cond;
      if (v[i] > c) ++both;
    }
  }
  cond_count = cond;
  return cond ? double(both) / double(cond) : kNaN;
}

}  // namespace

FittedResiduals fitted_residuals(const PosteriorChain& chain) {
  if (chain.draw_count() == 0) throw std::domain_error("fitted_residuals: empty chain");
  if (chain.delta_mean.empty() || int(chain.delta_mean.size()) != chain.S)
    throw std::domain_error("fitted_residuals: chain carries no stored residual paths");
  FittedResiduals fr;
  fr.gaussian_body = chain.gaussian_body;
  double su = 0, sk = 0, sx = 0, st = 0;
  for (const ChainDraw& d : chain.draws) {
    su += d.upsilon2;
    sk += d.kappa;
    sx += d.xi;
    st += d.theta;
  }
  const auto M = double(chain.draw_count());
  fr.upsilon2 = su / M;
  fr.kappa = sk / M;
  fr.xi = sx / M;
  fr.theta = st / M;
  fr.delta_hat = chain.delta_mean;
  fr.z_hat.resize(chain.delta_mean.size());
  const double ups = std::sqrt(fr.upsilon2);
  if (fr.gaussian_body) {
    for (size_t s = 0; s < fr.delta_hat.size(); ++s) {
      fr.z_hat[s].resize(fr.delta_hat[s].size());
      for (size_t i = 0; i < fr.delta_hat[s].size(); ++i) fr.z_hat[s][i] = fr.delta_hat[s][i] / ups;
    }
  } else {
    TailMarginal marg(fr.upsilon2, fr.kappa, fr.xi);
    for (size_t s = 0; s < fr.delta_hat.size(); ++s) {
      fr.z_hat[s].resize(fr.delta_hat[s].size());
      for (size_t i = 0; i < fr.delta_hat[s].size(); ++i)
        fr.z_hat[s][i] = marg.z_from_delta(fr.delta_hat[s][i]);
    }
  }
  return fr;
}

DensityOverlay density_overlay(const FittedResiduals& fr, int points) {
  if (points < 2) throw std::domain_error("density_overlay: need at least 2 grid points");
  std::vector<double> d = pooled(fr.delta_hat);
  if (d.empty()) throw std::domain_error("density_overlay: no residuals");
  const auto n = int64_t(d.size());

  double mean = 0;
  for (double v : d) mean += v;
  mean /= double(n);
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  var = n > 1 ? var / double(n - 1) : 0.0;
  std::vector<double> sorted(d);
  std::sort(sorted.begin(), sorted.end());
  const double q1 = sorted[size_t(0.25 * double(n - 1))];
  const double q3 = sorted[size_t(0.75 * double(n - 1))];
  const double iqr = q3 - q1;
  double spread = std::sqrt(var);
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  if (!(spread > 0.0)) spread = std::max(std::abs(mean), 1.0);
  const double h = 0.9 * spread * std::pow(double(n), -0.2);

  DensityOverlay out;
  out.bandwidth = h;
  out.n = n;
  const double lo = sorted.front() - 3.0 * h;
  const double hi = sorted.back() + 3.0 * h;
  out.grid.resize(size_t(points));
  out.kde.assign(size_t(points), 0.0);
  out.model.resize(size_t(points));
  const double ups = std::sqrt(fr.upsilon2);
  TailMarginal marg(std::max(fr.upsilon2, 1e-300), std::max(fr.kappa, 1e-8),
                    std::max(fr.xi, 1e-8));
  for (int k = 0; k < points; ++k) {
    const double x = lo + (hi - lo) * double(k) / double(points - 1);
    out.grid[size_t(k)] = x;
    double acc = 0.0;
    for (double v : d) acc += norm_pdf((x - v) / h);
    out.kde[size_t(k)] = acc / (double(n) * h);
    out.model[size_t(k)] = fr.gaussian_body ? norm_pdf(x / ups) / ups : std::exp(marg.logpdf(x));
  }
  return out;
}

QqData qq_data(const FittedResiduals& fr, int64_t max_points) {
  std::vector<double> d = pooled(fr.delta_hat);
  if (d.empty()) throw std::domain_error("qq_data: no residuals");
  std::sort(d.begin(), d.end());
  const auto n = int64_t(d.size());
  const int64_t keep = (max_points <= 0 || max_points >= n) ? n : max_points;
  QqData out;
  out.p.reserve(size_t(keep));
  out.sample.reserve(size_t(keep));
  out.model.reserve(size_t(keep));
  const double ups = std::sqrt(fr.upsilon2);
  TailMarginal marg(std::max(fr.upsilon2, 1e-300), std::max(fr.kappa, 1e-8),
                    std::max(fr.xi, 1e-8));
  for (int64_t k = 0; k < keep; ++k) {
    const int64_t i = keep == n ? k : int64_t((double(k) + 0.5) * double(n) / double(keep));
    const double p = (double(i) + 0.5) / double(n);
    out.p.push_back(p);
    out.sample.push_back(d[size_t(i)]);
    out.model.push_back(fr.gaussian_body ? ups * norm_quantile(p) : marg.quantile(p));
  }
  return out;
}

Correlogram time_correlogram(const FittedResiduals& fr, const std::vector<TimeGrid>& grid,
                             double max_lag_minutes) {
  if (grid.size() != fr.z_hat.size())
    throw std::domain_error("time_correlogram: grid/residual node counts differ");
  if (!(max_lag_minutes > 0.0))
    throw std::domain_error("time_correlogram: max lag must be positive");
  const double w = pooled_median_spacing(grid);
  const int bins = std::max(1, int(std::floor(max_lag_minutes / w + 0.5)));
  std::vector<PairAccum> acc{size_t(bins)};
  const double cutoff = (double(bins) + 0.5) * w;
  for (size_t s = 0; s < grid.size(); ++s) {
    const auto& t = grid[s].t;
    const auto& z = fr.z_hat[s];
    for (size_t i = 0; i < t.size(); ++i) {
      for (size_t k = i + 1; k < t.size(); ++k) {
        const double lag = t[k] - t[i];
        if (lag >= cutoff) break;
        const int b = int(std::floor(lag / w + 0.5)) - 1;
        if (b < 0 || b >= bins) continue;
        acc[size_t(b)].add(z[i], z[k]);
      }
    }
  }
  Correlogram out;
  out.bin_width = w;
  for (int b = 0; b < bins; ++b) {
    const double center = double(b + 1) * w;
    out.lag.push_back(center);
    out.corr.push_back(acc[size_t(b)].corr());
    out.theory.push_back(std::exp(-fr.theta * center));
    out.pairs.push_back(acc[size_t(b)].n);
  }
  return out;
}

Covariogram spatial_covariogram(const FittedResiduals& fr, const std::vector<TimeGrid>& grid,
                                const Topology& topo, int bins, double max_distance_m,
                                double time_tol_minutes) {
  if (int(grid.size()) != topo.S || fr.z_hat.size() != grid.size())
    throw std::domain_error("spatial_covariogram: node counts differ");
  if (bins < 1 || !(max_distance_m > 0.0))
    throw std::domain_error("spatial_covariogram: need bins >= 1 and a positive max distance");
  for (const auto& node : topo.nodes)
    if (!std::isfinite(node.x) || !std::isfinite(node.y) || !std::isfinite(node.z))
      throw std::domain_error("spatial_covariogram: topology carries no usable coordinates");
  const double tol =
      time_tol_minutes > 0.0 ? time_tol_minutes : 0.5 * pooled_median_spacing(grid);
  const double bw = max_distance_m / double(bins);
  std::vector<PairAccum> acc{size_t(bins)};
  for (int a = 0; a < topo.S; ++a) {
    for (int b = a + 1; b < topo.S; ++b) {
      const double dist = topo.distance(a, b);
      if (dist >= max_distance_m) continue;
      const int bin = std::min(int(dist / bw), bins - 1);
      const auto& ta = grid[size_t(a)].t;
      const auto& tb = grid[size_t(b)].t;
      size_t j = 0;
      for (size_t i = 0; i < ta.size(); ++i) {
        while (j < tb.size() && tb[j] < ta[i] - tol) ++j;
        // All b-observations within the tolerance window around ta[i].
        for (size_t k = j; k < tb.size() && tb[k] <= ta[i] + tol; ++k)
          acc[size_t(bin)].add(fr.z_hat[size_t(a)][i], fr.z_hat[size_t(b)][k]);
      }
    }
  }
  Covariogram out;
  out.bin_width = bw;
  out.time_tol_minutes = tol;
  for (int b = 0; b < bins; ++b) {
    out.distance.push_back((double(b) + 0.5) * bw);
    out.corr.push_back(acc[size_t(b)].corr());
    out.pairs.push_back(acc[size_t(b)].n);
  }
  return out;
}

double bivariate_gaussian_chi(double c, double rho) {
  rho = std::min(std::max(rho, -1.0 + 1e-12), 1.0 - 1e-12);
  const double denom = norm_sf(c);
  if (!(denom > 0.0)) return kNaN;
  // P(X > c, Y > c) = int_c^inf pdf(x) sf((c - rho x)/sqrt(1 - rho^2)) dx by
  // composite Simpson; the integrand is smooth and effectively zero past
  // x = max(c, 0) + 45.
  const double sq = std::sqrt(1.0 - rho * rho);
  const double a = c;
  const double b = std::max(c, 0.0) + 45.0;
  const int n = 8192;  // even
  const double h = (b - a) / double(n);
  auto f = [&](double x) { return norm_pdf(x) * norm_sf((c - rho * x) / sq); };
  double sum = f(a) + f(b);
  for (int i = 1; i < n; ++i) sum += f(a + h * double(i)) * (i % 2 ? 4.0 : 2.0);
  const double joint = sum * h / 3.0;
  return std::min(std::max(joint / denom, 0.0), 1.0);
}

ChiCurve tail_dependence(const FittedResiduals& fr, const std::vector<TimeGrid>& grid,
                         const Topology& topo, ChiMode mode, const std::vector<double>& c_grid,
                         int n_sim, uint64_t seed, int workers) {
  if (c_grid.empty()) throw std::domain_error("tail_dependence: empty threshold grid");
  if (n_sim < 1000)
    throw std::domain_error("tail_dependence: need at least 1000 simulations for the bands");

  // Ordered pairs of latent scores.
  std::vector<double> u, v;
  if (mode == ChiMode::kTime) {
    for (const auto& z : fr.z_hat)
      for (size_t i = 1; i < z.size(); ++i) {
        u.push_back(z[i - 1]);
        v.push_back(z[i]);
      }
  } else {
    if (int(grid.size()) != topo.S)
      throw std::domain_error("tail_dependence: grid/topology node counts differ");
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& typed : topo.pairs)
      for (const auto& [a, b] : typed) dmin = std::min(dmin, topo.distance(a, b));
    if (!std::isfinite(dmin)) throw std::domain_error("tail_dependence: topology has no pairs");
    const double tol = 0.5 * pooled_median_spacing(grid);
    for (const auto& typed : topo.pairs) {
      for (const auto& [a, b] : typed) {
        if (topo.distance(a, b) > dmin * (1.0 + 1e-9)) continue;
        const auto& ta = grid[size_t(a)].t;
        const auto& tb = grid[size_t(b)].t;
        size_t j = 0;
        for (size_t i = 0; i < ta.size(); ++i) {
          while (j < tb.size() && tb[j] < ta[i] - tol) ++j;
          for (size_t k = j; k < tb.size() && tb[k] <= ta[i] + tol; ++k) {
            const double za = fr.z_hat[size_t(a)][i];
            const double zb = fr.z_hat[size_t(b)][k];
            u.push_back(za);
            v.push_back(zb);
            u.push_back(zb);
            v.push_back(za);
          }
        }
      }
    }
  }
  if (u.empty()) throw std::domain_error("tail_dependence: no usable pairs");

  PairAccum rho_acc;
  for (size_t i = 0; i < u.size(); ++i) rho_acc.add(u[i], v[i]);
  ChiCurve out;
  out.rho = rho_acc.corr();
  if (!std::isfinite(out.rho)) throw std::domain_error("tail_dependence: degenerate pairs");
  out.pair_count = int64_t(u.size());
  out.n_sim = n_sim;
  out.c = c_grid;

  const size_t nc = c_grid.size();
  out.empirical.resize(nc);
  out.theory.resize(nc);
  out.pairs.resize(nc);
  for (size_t i = 0; i < nc; ++i) {
    out.empirical[i] = chi_at(u, v, c_grid[i], out.pairs[i]);
    out.theory[i] = bivariate_gaussian_chi(c_grid[i], out.rho);
  }

  // Simultaneous 95% envelope: per replicate, matched-size Gaussian pairs at
  // the fitted correlation; band radius is the 95th percentile of the sup
  // deviation from the theory curve.
  const uint32_t mode_tag = mode == ChiMode::kTime ? 0 : 1;
  const double rho = std::min(std::max(out.rho, -1.0 + 1e-12), 1.0 - 1e-12);
  const double sq = std::sqrt(1.0 - rho * rho);
  std::vector<double> dev(size_t(n_sim), 0.0);
  const size_t npairs = u.size();
  parallel_for(n_sim, workers, [&](int64_t rep) {
    RngStream rng = make_stream(seed, StreamDomain::kDiagSim, uint64_t(rep), mode_tag);
    std::vector<double> su(npairs), sv(npairs);
    for (size_t i = 0; i < npairs; ++i) {
      const double x = rng.normal();
      su[i] = x;
      sv[i] = rho * x + sq * rng.normal();
    }
    double worst = 0.0;
    for (size_t i = 0; i < nc; ++i) {
      int64_t cond = 0;
      const double chi = chi_at(su, sv, c_grid[i], cond);
      if (std::isfinite(chi)) worst = std::max(worst, std::abs(chi - out.theory[i]));
    }
    dev[size_t(rep)] = worst;
  });
  std::sort(dev.begin(), dev.end());
  const auto k = size_t(std::min<int64_t>(
      int64_t(std::ceil(0.95 * double(n_sim))), int64_t(n_sim))) - 1;
  const double radius = dev[k];
  out.band_lo.resize(nc);
  out.band_hi.resize(nc);
  for (size_t i = 0; i < nc; ++i) {
    out.band_lo[i] = std::max(out.theory[i] - radius, 0.0);
    out.band_hi[i] = std::min(out.theory[i] + radius, 1.0);
  }
  return out;
}

}  // namespace nodetherm
