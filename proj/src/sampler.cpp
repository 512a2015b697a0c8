#include "nodetherm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "nodetherm/normal.hpp"
#include "nodetherm/parallel.hpp"
#include "nodetherm/rng.hpp"
#include "nodetherm/tridiag.hpp"

namespace nodetherm {

namespace {

double log_inv_gamma_kernel(double x, double shape, double scale) {
  return -(shape + 1.0) * std::log(x) - scale / x;
}

double log_gamma_kernel(double x, double shape, double rate) {
  return (shape - 1.0) * std::log(x) - rate * x;
}

double log_dirichlet(const std::vector<double>& x, const std::vector<double>& alpha) {
  double lp = 0.0, asum = 0.0;
  for (size_t l = 0; l < x.size(); ++l) {
    lp += (alpha[l] - 1.0) * std::log(x[l]) - std::lgamma(alpha[l]);
    asum += alpha[l];
  }
  return lp + std::lgamma(asum);
}

double logit(double p) { return std::log(p / (1.0 - p)); }
double expit(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Dense symmetric solve for the tiny per-node least-squares systems.
void solve_small_spd(std::vector<double>& a, std::vector<double>& b, int p) {
  for (int j = 0; j < p; ++j) {
    double d = a[j * p + j];
    for (int k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
    if (!(d > 0.0)) throw std::runtime_error("least-squares system not positive definite");
    d = std::sqrt(d);
    a[j * p + j] = d;
    for (int i = j + 1; i < p; ++i) {
      double s = a[i * p + j];
      for (int k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = s / d;
    }
  }
  for (int i = 0; i < p; ++i) {
    double v = b[i];
    for (int k = 0; k < i; ++k) v -= a[i * p + k] * b[k];
    b[i] = v / a[i * p + i];
  }
  for (int i = p; i-- > 0;) {
    double v = b[i];
    for (int k = i + 1; k < p; ++k) v -= a[k * p + i] * b[k];
    b[i] = v / a[i * p + i];
  }
}

}  // namespace

void Priors::validate() const {
  auto pos = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::domain_error(std::string("Priors: ") + name + " must be positive");
  };
  pos(mu_var, "mu_var");
  pos(tau_shape, "tau_shape");
  pos(tau_rate, "tau_rate");
  pos(phi_a, "phi_a");
  pos(phi_b, "phi_b");
  pos(ups_shape, "ups_shape");
  pos(ups_scale, "ups_scale");
  pos(theta_shape, "theta_shape");
  pos(theta_rate, "theta_rate");
  pos(kappa_shape, "kappa_shape");
  pos(kappa_rate, "kappa_rate");
  pos(xi_shape, "xi_shape");
  pos(xi_rate, "xi_rate");
  pos(sigma_shape, "sigma_shape");
  pos(sigma_scale, "sigma_scale");
  for (double a : lambda_conc)
    if (!(a > 0.0)) throw std::domain_error("Priors: lambda_conc entries must be positive");
}

void RunConfig::validate() const {
  if (iterations < 0 || burn_in < 0 || burn_in > iterations)
    throw std::domain_error("RunConfig: need 0 <= burn_in <= iterations");
  if (thinning < 1) throw std::domain_error("RunConfig: thinning must be >= 1");
  if (workers < 1) throw std::domain_error("RunConfig: workers must be >= 1");
  if (!(tuning.delta_prior_frac >= 0.0 && tuning.delta_prior_frac <= 1.0))
    throw std::domain_error("Tuning: delta_prior_frac must lie in [0, 1]");
  priors.validate();
}

const char* block_name(Block b) {
  switch (b) {
    case Block::kDelta: return "delta";
    case Block::kLambda: return "lambda";
    case Block::kPhi: return "phi";
    case Block::kUpsilon: return "upsilon2";
    case Block::kTheta: return "theta";
    case Block::kKappa: return "kappa";
    case Block::kXi: return "xi";
    default: return "?";
  }
}

std::vector<double> PosteriorChain::scalar_series(const std::string& name) const {
  std::vector<double> out;
  out.reserve(draws.size());
  auto indexed = [&](const std::string& prefix, int* idx) {
    if (name.rfind(prefix, 0) == 0) {
      *idx = std::stoi(name.substr(prefix.size()));
      return true;
    }
    return false;
  };
  int idx = 0;
  for (const auto& d : draws) {
    if (name == "phi") out.push_back(d.phi);
    else if (name == "upsilon2") out.push_back(d.upsilon2);
    else if (name == "theta") out.push_back(d.theta);
    else if (name == "kappa") out.push_back(d.kappa);
    else if (name == "xi") out.push_back(d.xi);
    else if (name == "sigma2") out.push_back(d.sigma2);
    else if (indexed("mu_", &idx)) out.push_back(d.mu.at(idx));
    else if (indexed("tau_", &idx)) out.push_back(d.tau.at(idx));
    else if (indexed("lambda_", &idx)) out.push_back(d.lambda.at(idx - 1));
    else throw std::invalid_argument("unknown scalar series: " + name);
  }
  return out;
}

ParamState Sampler::initial_state(const Topology& topo, const Dataset& data,
                                  const RunConfig& config) {
  const int P = data.J + 1;
  ParamState st;
  st.mu.assign(P, 0.0);
  st.tau.assign(P, 1.0);
  st.beta.assign(P, std::vector<double>(topo.S, 0.0));
  st.lambda.assign(topo.L, 1.0 / topo.L);
  st.phi = 0.9;
  const Priors& pr = config.priors;
  st.upsilon2 = pr.ups_shape > 1.0 ? pr.ups_scale / (pr.ups_shape - 1.0) : pr.ups_scale;
  st.theta = pr.theta_shape / pr.theta_rate;
  // Tail parameters start at the prior modes: unlike the prior means these
  // stay away from the infinite-mean region of the tail family.
  st.kappa = pr.kappa_shape > 1.0 ? (pr.kappa_shape - 1.0) / pr.kappa_rate : 0.5;
  st.xi = pr.xi_shape > 1.0 ? (pr.xi_shape - 1.0) / pr.xi_rate : 0.1;
  st.delta.resize(topo.S);
  for (int s = 0; s < topo.S; ++s) st.delta[s].assign(data.grid[s].size(), 0.0);

  // Per-node least squares, ridge-stabilized for degenerate designs.
  std::vector<char> fitted(topo.S, 0);
  std::vector<std::vector<double>> ols(P, std::vector<double>(topo.S, 0.0));
  std::vector<double> resid;
  double sse = 0.0;
  double prod1 = 0.0, gap1 = 0.0, prod2 = 0.0, gap2 = 0.0;
  int64_t nobs = 0, n1 = 0, n2 = 0;
  for (int s = 0; s < topo.S; ++s) {
    const size_t T = data.grid[s].size();
    if (T == 0) continue;
    std::vector<double> c(size_t(P) * P, 0.0), b(P, 0.0), xrow(P);
    for (size_t t = 0; t < T; ++t) {
      xrow[0] = 1.0;
      for (int j = 1; j < P; ++j) xrow[j] = data.covariate(s, t, j - 1);
      for (int a = 0; a < P; ++a) {
        b[a] += xrow[a] * data.y[s][t];
        for (int g = 0; g <= a; ++g) c[size_t(a) * P + g] += xrow[a] * xrow[g];
      }
    }
    for (int a = 0; a < P; ++a) {
      for (int g = a + 1; g < P; ++g) c[size_t(a) * P + g] = c[size_t(g) * P + a];
      c[size_t(a) * P + a] += 1e-8 * double(T) + 1e-12;
    }
    solve_small_spd(c, b, P);
    for (int j = 0; j < P; ++j) ols[j][s] = b[j];
    fitted[s] = 1;
    resid.assign(T, 0.0);
    for (size_t t = 0; t < T; ++t) {
      double fit = b[0];
      for (int j = 1; j < P; ++j) fit += b[j] * data.covariate(s, t, j - 1);
      resid[t] = data.y[s][t] - fit;
      sse += resid[t] * resid[t];
      ++nobs;
    }
    // Lagged residual products at two gap classes, used below to split the
    // residual variance into a correlated component and a white-noise floor.
    for (size_t t = 0; t + 1 < T; ++t) {
      prod1 += resid[t] * resid[t + 1];
      gap1 += data.grid[s].t[t + 1] - data.grid[s].t[t];
      ++n1;
    }
    for (size_t t = 0; t + 2 < T; ++t) {
      prod2 += resid[t] * resid[t + 2];
      gap2 += data.grid[s].t[t + 2] - data.grid[s].t[t];
      ++n2;
    }
  }
  for (int j = 0; j < P; ++j) {
    double sum = 0.0;
    int64_t n = 0;
    for (int s = 0; s < topo.S; ++s)
      if (fitted[s]) {
        sum += ols[j][s];
        ++n;
      }
    const double mean = n ? sum / double(n) : 0.0;
    st.mu[j] = mean;
    double var = 0.0;
    for (int s = 0; s < topo.S; ++s)
      if (fitted[s]) var += (ols[j][s] - mean) * (ols[j][s] - mean);
    var = n > 1 ? var / double(n - 1) : 1.0;
    st.tau[j] = 1.0 / std::max(var, 1e-8);
    for (int s = 0; s < topo.S; ++s) st.beta[j][s] = fitted[s] ? ols[j][s] : mean;
  }
  // Split the residual variance c0 into process variance v and noise floor:
  // an exponentially decaying autocovariance a(g) = v e^{-theta g} evaluated
  // at the two mean gaps g1 < g2 gives theta = log(a1/a2)/(g2-g1) and
  // v = a1 e^{theta g1}; the remainder c0 - v is the measurement noise.
  // Degenerate statistics (few pairs, nonpositive or nondecaying covariances)
  // fall back to the prior-centred defaults set above.
  const double c0 = nobs ? std::max(sse / double(nobs), 1e-8) : 1.0;
  st.sigma2 = c0;
  if (n1 >= 32 && n2 >= 32) {
    const double a1 = prod1 / double(n1);
    const double a2 = prod2 / double(n2);
    const double g1 = gap1 / double(n1);
    const double g2 = gap2 / double(n2);
    if (a1 > 0.0 && a2 > 0.0 && a1 < c0 && g2 > g1) {
      const double th = std::clamp(std::log(a1 / a2) / (g2 - g1), 1e-3, 20.0);
      const double v = std::clamp(a1 * std::exp(th * g1), 1e-6, 0.999 * c0);
      st.theta = th;
      st.upsilon2 = v;
      st.sigma2 = std::max(c0 - v, 1e-8);
    }
  }
  return st;
}

Sampler::Sampler(const Topology& topo, Dataset data, RunConfig config)
    : topo_(topo), data_(std::move(data)), cfg_(std::move(config)), tuning_(cfg_.tuning) {
  cfg_.validate();
  data_.validate(topo_);
  P_ = data_.J + 1;
  if (cfg_.priors.lambda_conc.empty()) cfg_.priors.lambda_conc.assign(topo_.L, 1.0);
  if (int(cfg_.priors.lambda_conc.size()) != topo_.L)
    throw std::domain_error("Priors: lambda_conc length must equal the neighbor type count");

  qtilde_ = build_car_pattern(topo_);
  q_scratch_ = qtilde_;
  perm_ = band_reduce_permutation(qtilde_, &topo_);

  xtx_.resize(topo_.S);
  for (int s = 0; s < topo_.S; ++s) {
    const size_t T = data_.grid[s].size();
    xtx_[s].assign(size_t(P_) * P_, 0.0);
    std::vector<double> xrow(P_);
    for (size_t t = 0; t < T; ++t) {
      xrow[0] = 1.0;
      for (int j = 1; j < P_; ++j) xrow[j] = data_.covariate(s, t, j - 1);
      for (int a = 0; a < P_; ++a)
        for (int g = 0; g < P_; ++g) xtx_[s][size_t(a) * P_ + g] += xrow[a] * xrow[g];
    }
  }

  set_state(initial_state(topo_, data_, cfg_));
}

void Sampler::set_state(const ParamState& st) {
  if (int(st.mu.size()) != P_ || int(st.tau.size()) != P_ || int(st.beta.size()) != P_)
    throw std::invalid_argument("set_state: coefficient containers must have size J+1");
  if (int(st.lambda.size()) != topo_.L)
    throw std::invalid_argument("set_state: lambda must have one weight per neighbor type");
  if (int(st.delta.size()) != topo_.S)
    throw std::invalid_argument("set_state: delta must have one path per node");
  for (int s = 0; s < topo_.S; ++s)
    if (st.delta[s].size() != data_.grid[s].size())
      throw std::invalid_argument("set_state: delta path length mismatch at node " +
                                  std::to_string(s));
  st_ = st;
  rebuild_spatial_caches();
  rebuild_temporal_caches();
  refresh_residuals();
}

void Sampler::rebuild_spatial_caches() {
  qtilde_.fill_car(st_.lambda, st_.phi, 1.0);
  if (!cfg_.prior_only) {
    qtilde_chol_.factorize(qtilde_, perm_);
    qtilde_logdet_ = qtilde_chol_.logdet();
  }
  qtilde_rowsum_.assign(topo_.S, 0.0);
  qtilde_one_sum_ = 0.0;
  for (int s = 0; s < topo_.S; ++s) {
    qtilde_rowsum_[s] = qtilde_.row_sum(s);
    qtilde_one_sum_ += qtilde_rowsum_[s];
  }
}

void Sampler::rebuild_temporal_caches() {
  ou_.resize(topo_.S);
  rinv_.resize(topo_.S);
  z_.resize(topo_.S);
  lat_ll_.assign(topo_.S, 0.0);
  jac_ll_.assign(topo_.S, 0.0);
  if (cfg_.prior_only) return;
  TailMarginal marg(st_.upsilon2, st_.kappa, st_.xi);
  parallel_for(topo_.S, cfg_.workers, [&](int64_t s) {
    ou_[s] = OuFactor::build(data_.grid[s], st_.theta);
    rinv_[s] = latent_inverse(ou_[s]);
    double lp = residual_logpdf(st_.delta[s], ou_[s], marg, cfg_.gaussian_body, z_[s]);
    lat_ll_[s] = latent_logpdf(ou_[s], z_[s]);
    jac_ll_[s] = lp - lat_ll_[s];
  });
}

void Sampler::refresh_residuals() {
  resid_.resize(topo_.S);
  for (int s = 0; s < topo_.S; ++s) {
    const size_t T = data_.grid[s].size();
    resid_[s].resize(T);
    for (size_t t = 0; t < T; ++t) {
      double fit = st_.beta[0][s];
      for (int j = 1; j < P_; ++j) fit += st_.beta[j][s] * data_.covariate(s, t, j - 1);
      resid_[s][t] = data_.y[s][t] - fit;
    }
  }
}

void Sampler::update_beta(int64_t iter) {
  // Interleaved ordering: node block p holds coefficients (p*P + j). The
  // joint conditional precision is X'X/sigma2 on the block diagonals plus
  // tau_j qtilde on each coefficient's spatial coupling.
  const int n = topo_.S * P_;
  std::vector<int32_t> pos(topo_.S);
  for (int k = 0; k < topo_.S; ++k) pos[perm_[k]] = k;

  std::vector<std::tuple<int32_t, int32_t, double>> trip;
  trip.reserve(size_t(topo_.S) * P_ * (P_ + 1) / 2 + size_t(qtilde_.nnz()) * P_);
  std::vector<double> rhs(n, 0.0);
  for (int s = 0; s < topo_.S; ++s) {
    const int32_t base = pos[s] * P_;
    const size_t T = data_.grid[s].size();
    // Dense within-node block.
    for (int a = 0; a < P_; ++a) {
      for (int g = 0; g <= a; ++g) {
        double v = xtx_[s][size_t(a) * P_ + g] / st_.sigma2;
        trip.emplace_back(base + a, base + g, v);
      }
    }
    // X'(y - delta) / sigma2 and the prior pull toward mu_j.
    std::vector<double> xty(P_, 0.0);
    for (size_t t = 0; t < T; ++t) {
      const double yt = data_.y[s][t] - st_.delta[s][t];
      xty[0] += yt;
      for (int j = 1; j < P_; ++j) xty[j] += data_.covariate(s, t, j - 1) * yt;
    }
    for (int j = 0; j < P_; ++j)
      rhs[base + j] = xty[j] / st_.sigma2 + st_.mu[j] * st_.tau[j] * qtilde_rowsum_[s];
  }
  // Spatial coupling: every stored entry of qtilde contributes to each
  // coefficient; emit only the lower triangle of the permuted system.
  for (int s = 0; s < topo_.S; ++s) {
    for (int32_t k = qtilde_.row_ptr[s]; k < qtilde_.row_ptr[s + 1]; ++k) {
      const int32_t r = qtilde_.col[k];
      if (qtilde_.type[k] == 0) {
        for (int j = 0; j < P_; ++j)
          trip.emplace_back(pos[s] * P_ + j, pos[s] * P_ + j, st_.tau[j] * qtilde_.val[k]);
      } else if (pos[s] > pos[r]) {
        for (int j = 0; j < P_; ++j)
          trip.emplace_back(pos[s] * P_ + j, pos[r] * P_ + j, st_.tau[j] * qtilde_.val[k]);
      }
    }
  }

  BandedChol chol;
  chol.factorize_triplets(n, trip);
  std::vector<double> mean = rhs;
  chol.solve(mean);

  RngStream rng = make_stream(cfg_.seed, StreamDomain::kBeta, uint64_t(iter));
  std::vector<double> draw;
  chol.sample_zero_mean(rng, draw);
  for (int s = 0; s < topo_.S; ++s)
    for (int j = 0; j < P_; ++j) st_.beta[j][s] = mean[pos[s] * P_ + j] + draw[pos[s] * P_ + j];
  refresh_residuals();
}

void Sampler::update_delta(int64_t iter) {
  TailMarginal marg(st_.upsilon2, st_.kappa, st_.xi);
  constexpr double kLog2Pi = 1.8378770664093454836;
  const double mixp = tuning_.delta_prior_frac;
  std::vector<uint8_t> accepted(topo_.S, 0), proposed(topo_.S, 0);
  parallel_for(topo_.S, cfg_.workers, [&](int64_t s) {
    const size_t T = data_.grid[s].size();
    if (T == 0) return;
    proposed[s] = 1;
    RngStream rng = make_stream(cfg_.seed, StreamDomain::kDelta, uint64_t(iter), uint64_t(s));

    // Gaussian component: exact conditional under a gaussian residual model.
    Tridiag vinv;
    vinv.diag.resize(T);
    vinv.off.resize(T - 1);
    for (size_t t = 0; t < T; ++t)
      vinv.diag[t] = 1.0 / st_.sigma2 + rinv_[s].diag[t] / st_.upsilon2;
    for (size_t t = 0; t + 1 < T; ++t) vinv.off[t] = rinv_[s].off[t] / st_.upsilon2;
    TridiagChol chol;
    chol.factorize(vinv);
    std::vector<double> m(T);
    for (size_t t = 0; t < T; ++t) m[t] = resid_[s][t] / st_.sigma2;
    chol.solve(m);

    std::vector<double> prop;
    if (mixp > 0.0 && rng.uniform() < mixp) {
      simulate_residual(ou_[s], marg, cfg_.gaussian_body, rng, prop);
    } else {
      chol.sample(m, rng, prop);
    }

    double dlike = 0.0;
    for (size_t t = 0; t < T; ++t) {
      const double rc = resid_[s][t] - st_.delta[s][t];
      const double rp = resid_[s][t] - prop[t];
      dlike += rc * rc - rp * rp;
    }
    dlike /= 2.0 * st_.sigma2;

    std::vector<double> zp;
    const double prior_prop = residual_logpdf(prop, ou_[s], marg, cfg_.gaussian_body, zp);
    const double prior_cur = lat_ll_[s] + jac_ll_[s];

    // Proposal density: mixture of the gaussian conditional and the path
    // prior. Both components are normalized so the mixture weights compare
    // correctly.
    const double gauss_const = 0.5 * chol.logdet() - 0.5 * double(T) * kLog2Pi;
    std::vector<double> diff(T);
    auto log_gauss = [&](const std::vector<double>& path) {
      for (size_t t = 0; t < T; ++t) diff[t] = path[t] - m[t];
      return gauss_const - 0.5 * vinv.quad_form(diff);
    };
    auto log_mix = [&](double lg, double lp) {
      if (mixp <= 0.0) return lg;
      if (mixp >= 1.0) return lp;
      const double a = std::log1p(-mixp) + lg, b = std::log(mixp) + lp;
      const double hi = std::max(a, b);
      return hi + std::log1p(std::exp(std::min(a, b) - hi));
    };
    const double dq = log_mix(log_gauss(st_.delta[s]), prior_cur) -
                      log_mix(log_gauss(prop), prior_prop);

    const double lr = dlike + prior_prop - prior_cur + dq;
    if (std::log(rng.uniform()) < lr) {
      accepted[s] = 1;
      st_.delta[s] = std::move(prop);
      z_[s] = std::move(zp);
      lat_ll_[s] = latent_logpdf(ou_[s], z_[s]);
      jac_ll_[s] = prior_prop - lat_ll_[s];
    }
  });
  int64_t acc = 0, prop_count = 0;
  for (int s = 0; s < topo_.S; ++s) {
    acc += accepted[s];
    prop_count += proposed[s];
  }
  tally(Block::kDelta, iter, acc, prop_count);
}

void Sampler::update_mu(int64_t iter) {
  for (int j = 0; j < P_; ++j) {
    RngStream rng = make_stream(cfg_.seed, StreamDomain::kMu, uint64_t(iter), uint64_t(j));
    double cross = 0.0;
    for (int s = 0; s < topo_.S; ++s) cross += qtilde_rowsum_[s] * st_.beta[j][s];
    const double prec = 1.0 / cfg_.priors.mu_var + st_.tau[j] * qtilde_one_sum_;
    const double mean =
        (cfg_.priors.mu_mean / cfg_.priors.mu_var + st_.tau[j] * cross) / prec;
    st_.mu[j] = mean + rng.normal() / std::sqrt(prec);
  }
}

void Sampler::update_tau(int64_t iter) {
  for (int j = 0; j < P_; ++j) {
    RngStream rng = make_stream(cfg_.seed, StreamDomain::kTau, uint64_t(iter), uint64_t(j));
    const double qf = qtilde_.centered_quad_form(st_.beta[j], st_.mu[j]);
    st_.tau[j] = rng.gamma(cfg_.priors.tau_shape + 0.5 * topo_.S,
                           cfg_.priors.tau_rate + 0.5 * qf);
  }
}

void Sampler::update_lambda(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kLambda, uint64_t(iter));
  std::vector<double> alpha(topo_.L), prop;
  for (int l = 0; l < topo_.L; ++l) alpha[l] = st_.lambda[l] / tuning_.lambda_step;
  rng.dirichlet(alpha, prop);
  bool ok = true;
  for (double v : prop) ok = ok && std::isfinite(v) && v > 0.0;
  if (!ok) {
    tally(Block::kLambda, iter, 0, 1);
    return;
  }
  std::vector<double> alpha_rev(topo_.L);
  for (int l = 0; l < topo_.L; ++l) alpha_rev[l] = prop[l] / tuning_.lambda_step;

  double lr = log_dirichlet(st_.lambda, alpha_rev) - log_dirichlet(prop, alpha);
  for (int l = 0; l < topo_.L; ++l)
    lr += (cfg_.priors.lambda_conc[l] - 1.0) * (std::log(prop[l]) - std::log(st_.lambda[l]));

  BandedChol chol_prop;
  double logdet_prop = 0.0;
  if (!cfg_.prior_only) {
    bool pd = true;
    try {
      q_scratch_.fill_car(prop, st_.phi, 1.0);
      chol_prop.factorize(q_scratch_, perm_);
      logdet_prop = chol_prop.logdet();
    } catch (const std::runtime_error&) {
      pd = false;  // numerically indefinite proposal: zero posterior density
    }
    if (!pd) {
      tally(Block::kLambda, iter, 0, 1);
      return;
    }
    lr += 0.5 * P_ * (logdet_prop - qtilde_logdet_);
    for (int j = 0; j < P_; ++j) {
      const double qf_prop = q_scratch_.centered_quad_form(st_.beta[j], st_.mu[j]);
      const double qf_cur = qtilde_.centered_quad_form(st_.beta[j], st_.mu[j]);
      lr -= 0.5 * st_.tau[j] * (qf_prop - qf_cur);
    }
  }

  const bool accept = std::log(rng.uniform()) < lr;
  if (accept) {
    st_.lambda = prop;
    if (!cfg_.prior_only) {
      std::swap(qtilde_.val, q_scratch_.val);
      qtilde_chol_ = std::move(chol_prop);
      qtilde_logdet_ = logdet_prop;
      qtilde_one_sum_ = 0.0;
      for (int s = 0; s < topo_.S; ++s) {
        qtilde_rowsum_[s] = qtilde_.row_sum(s);
        qtilde_one_sum_ += qtilde_rowsum_[s];
      }
    }
  }
  tally(Block::kLambda, iter, accept ? 1 : 0, 1);
}

void Sampler::update_phi(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kPhi, uint64_t(iter));
  const double psi = logit(st_.phi) + tuning_.phi_step * rng.normal();
  const double prop = expit(psi);
  if (!(prop > 1e-15 && prop < 1.0 - 1e-15)) {
    tally(Block::kPhi, iter, 0, 1);
    return;
  }
  // Beta prior plus the logit jacobian: exponents phi_a and phi_b.
  double lr = cfg_.priors.phi_a * (std::log(prop) - std::log(st_.phi)) +
              cfg_.priors.phi_b * (std::log1p(-prop) - std::log1p(-st_.phi));

  BandedChol chol_prop;
  double logdet_prop = 0.0;
  if (!cfg_.prior_only) {
    q_scratch_.fill_car(st_.lambda, prop, 1.0);
    chol_prop.factorize(q_scratch_, perm_);
    logdet_prop = chol_prop.logdet();
    lr += 0.5 * P_ * (logdet_prop - qtilde_logdet_);
    for (int j = 0; j < P_; ++j) {
      const double qf_prop = q_scratch_.centered_quad_form(st_.beta[j], st_.mu[j]);
      const double qf_cur = qtilde_.centered_quad_form(st_.beta[j], st_.mu[j]);
      lr -= 0.5 * st_.tau[j] * (qf_prop - qf_cur);
    }
  }

  const bool accept = std::log(rng.uniform()) < lr;
  if (accept) {
    st_.phi = prop;
    if (!cfg_.prior_only) {
      std::swap(qtilde_.val, q_scratch_.val);
      qtilde_chol_ = std::move(chol_prop);
      qtilde_logdet_ = logdet_prop;
      qtilde_one_sum_ = 0.0;
      for (int s = 0; s < topo_.S; ++s) {
        qtilde_rowsum_[s] = qtilde_.row_sum(s);
        qtilde_one_sum_ += qtilde_rowsum_[s];
      }
    }
  }
  tally(Block::kPhi, iter, accept ? 1 : 0, 1);
}

double Sampler::total_path_logprior(const TailMarginal& marg, bool gaussian,
                                    const std::vector<OuFactor>* ou,
                                    std::vector<std::vector<double>>* z,
                                    std::vector<double>* lat, std::vector<double>* jac) const {
  const std::vector<OuFactor>& ouref = ou ? *ou : ou_;
  parallel_for(topo_.S, cfg_.workers, [&](int64_t s) {
    double lp = residual_logpdf(st_.delta[s], ouref[s], marg, gaussian, (*z)[s]);
    (*lat)[s] = latent_logpdf(ouref[s], (*z)[s]);
    (*jac)[s] = lp - (*lat)[s];
  });
  double total = 0.0;
  for (int s = 0; s < topo_.S; ++s) total += (*lat)[s] + (*jac)[s];
  return total;
}

void Sampler::update_upsilon2(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kUpsilon, uint64_t(iter));
  const double prop = st_.upsilon2 * std::exp(tuning_.ups_step * rng.normal());
  double lr = log_inv_gamma_kernel(prop, cfg_.priors.ups_shape, cfg_.priors.ups_scale) -
              log_inv_gamma_kernel(st_.upsilon2, cfg_.priors.ups_shape, cfg_.priors.ups_scale) +
              std::log(prop) - std::log(st_.upsilon2);

  std::vector<std::vector<double>> z_new;
  std::vector<double> lat_new, jac_new;
  if (!cfg_.prior_only) {
    TailMarginal cand(prop, st_.kappa, st_.xi);
    z_new.resize(topo_.S);
    lat_new.assign(topo_.S, 0.0);
    jac_new.assign(topo_.S, 0.0);
    double cur = 0.0;
    for (int s = 0; s < topo_.S; ++s) cur += lat_ll_[s] + jac_ll_[s];
    lr += total_path_logprior(cand, cfg_.gaussian_body, nullptr, &z_new, &lat_new, &jac_new) - cur;
  }
  const bool accept = std::log(rng.uniform()) < lr;
  if (accept) {
    st_.upsilon2 = prop;
    if (!cfg_.prior_only) {
      z_ = std::move(z_new);
      lat_ll_ = std::move(lat_new);
      jac_ll_ = std::move(jac_new);
    }
  }
  tally(Block::kUpsilon, iter, accept ? 1 : 0, 1);
}

void Sampler::update_theta(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kTheta, uint64_t(iter));
  const double prop = st_.theta * std::exp(tuning_.theta_step * rng.normal());
  double lr = log_gamma_kernel(prop, cfg_.priors.theta_shape, cfg_.priors.theta_rate) -
              log_gamma_kernel(st_.theta, cfg_.priors.theta_shape, cfg_.priors.theta_rate) +
              std::log(prop) - std::log(st_.theta);

  std::vector<OuFactor> ou_new;
  std::vector<double> lat_new;
  if (!cfg_.prior_only) {
    ou_new.resize(topo_.S);
    lat_new.assign(topo_.S, 0.0);
    parallel_for(topo_.S, cfg_.workers, [&](int64_t s) {
      ou_new[s] = OuFactor::build(data_.grid[s], prop);
      lat_new[s] = latent_logpdf(ou_new[s], z_[s]);
    });
    for (int s = 0; s < topo_.S; ++s) lr += lat_new[s] - lat_ll_[s];
  }
  const bool accept = std::log(rng.uniform()) < lr;
  if (accept) {
    st_.theta = prop;
    if (!cfg_.prior_only) {
      ou_ = std::move(ou_new);
      lat_ll_ = std::move(lat_new);
      parallel_for(topo_.S, cfg_.workers, [&](int64_t s) { rinv_[s] = latent_inverse(ou_[s]); });
    }
  }
  tally(Block::kTheta, iter, accept ? 1 : 0, 1);
}

void Sampler::update_kappa(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kKappa, uint64_t(iter));
  const double prop = st_.kappa * std::exp(tuning_.kappa_step * rng.normal());
  double lr = log_gamma_kernel(prop, cfg_.priors.kappa_shape, cfg_.priors.kappa_rate) -
              log_gamma_kernel(st_.kappa, cfg_.priors.kappa_shape, cfg_.priors.kappa_rate) +
              std::log(prop) - std::log(st_.kappa);

  std::vector<std::vector<double>> z_new;
  std::vector<double> lat_new, jac_new;
  if (!cfg_.prior_only) {
    TailMarginal cand(st_.upsilon2, prop, st_.xi);
    z_new.resize(topo_.S);
    lat_new.assign(topo_.S, 0.0);
    jac_new.assign(topo_.S, 0.0);
    double cur = 0.0;
    for (int s = 0; s < topo_.S; ++s) cur += lat_ll_[s] + jac_ll_[s];
    lr += total_path_logprior(cand, cfg_.gaussian_body, nullptr, &z_new, &lat_new, &jac_new) - cur;
  }
  const bool accept = std::log(rng.uniform()) < lr;
  if (accept) {
    st_.kappa = prop;
    if (!cfg_.prior_only) {
      z_ = std::move(z_new);
      lat_ll_ = std::move(lat_new);
      jac_ll_ = std::move(jac_new);
    }
  }
  tally(Block::kKappa, iter, accept ? 1 : 0, 1);
  if (tuning_.adapt && burning(iter)) adapt_step(tuning_.kappa_step, accept, iter);
}

void Sampler::update_xi(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kXi, uint64_t(iter));
  const double prop = st_.xi * std::exp(tuning_.xi_step * rng.normal());
  double lr = log_gamma_kernel(prop, cfg_.priors.xi_shape, cfg_.priors.xi_rate) -
              log_gamma_kernel(st_.xi, cfg_.priors.xi_shape, cfg_.priors.xi_rate) +
              std::log(prop) - std::log(st_.xi);

  std::vector<std::vector<double>> z_new;
  std::vector<double> lat_new, jac_new;
  if (!cfg_.prior_only) {
    TailMarginal cand(st_.upsilon2, st_.kappa, prop);
    z_new.resize(topo_.S);
    lat_new.assign(topo_.S, 0.0);
    jac_new.assign(topo_.S, 0.0);
    double cur = 0.0;
    for (int s = 0; s < topo_.S; ++s) cur += lat_ll_[s] + jac_ll_[s];
    lr += total_path_logprior(cand, cfg_.gaussian_body, nullptr, &z_new, &lat_new, &jac_new) - cur;
  }
  const bool accept = std::log(rng.uniform()) < lr;
  if (accept) {
    st_.xi = prop;
    if (!cfg_.prior_only) {
      z_ = std::move(z_new);
      lat_ll_ = std::move(lat_new);
      jac_ll_ = std::move(jac_new);
    }
  }
  tally(Block::kXi, iter, accept ? 1 : 0, 1);
  if (tuning_.adapt && burning(iter)) adapt_step(tuning_.xi_step, accept, iter);
}

void Sampler::update_sigma2(int64_t iter) {
  RngStream rng = make_stream(cfg_.seed, StreamDomain::kSigma, uint64_t(iter));
  double ss = 0.0;
  int64_t n = 0;
  for (int s = 0; s < topo_.S; ++s) {
    const size_t T = data_.grid[s].size();
    for (size_t t = 0; t < T; ++t) {
      const double e = resid_[s][t] - st_.delta[s][t];
      ss += e * e;
    }
    n += int64_t(T);
  }
  st_.sigma2 = rng.inverse_gamma(cfg_.priors.sigma_shape + 0.5 * double(n),
                                 cfg_.priors.sigma_scale + 0.5 * ss);
}

void Sampler::regenerate_y(int64_t iter) {
  const double sd = std::sqrt(st_.sigma2);
  parallel_for(topo_.S, cfg_.workers, [&](int64_t s) {
    const size_t T = data_.grid[s].size();
    if (T == 0) return;
    RngStream rng = make_stream(cfg_.seed, StreamDomain::kRegenY, uint64_t(iter), uint64_t(s));
    for (size_t t = 0; t < T; ++t) {
      double fit = st_.beta[0][s];
      for (int j = 1; j < P_; ++j) fit += st_.beta[j][s] * data_.covariate(s, t, j - 1);
      data_.y[s][t] = fit + st_.delta[s][t] + sd * rng.normal();
    }
  });
  refresh_residuals();
}

void Sampler::adapt_step(double& step, bool accepted, int64_t iter) {
  const double gamma = 1.0 / std::pow(double(iter) + 1.0, 0.6);
  step *= std::exp(gamma * ((accepted ? 1.0 : 0.0) - tuning_.target_rate));
  step = std::clamp(step, 1e-4, 10.0);
}

void Sampler::tally(Block b, int64_t iter, int64_t accepts, int64_t proposals) {
  auto& phase = burning(iter) ? accept_.burn_in : accept_.post;
  phase[size_t(b)].accepts += accepts;
  phase[size_t(b)].proposals += proposals;
}

void Sampler::sweep(int64_t iter) {
  if (!cfg_.prior_only) {
    update_beta(iter);
    update_delta(iter);
    update_mu(iter);
    update_tau(iter);
  }
  update_lambda(iter);
  update_phi(iter);
  update_upsilon2(iter);
  update_theta(iter);
  if (!cfg_.gaussian_body) {
    update_kappa(iter);
    update_xi(iter);
  }
  if (!cfg_.prior_only) update_sigma2(iter);
}

PosteriorChain Sampler::run() {
  PosteriorChain chain;
  chain.S = topo_.S;
  chain.J = data_.J;
  chain.L = topo_.L;
  chain.seed = cfg_.seed;
  chain.iterations = cfg_.iterations;
  chain.burn_in = cfg_.burn_in;
  chain.thinning = cfg_.thinning;
  chain.gaussian_body = cfg_.gaussian_body;
  chain.priors = cfg_.priors;
  chain.tuning_initial = cfg_.tuning;
  chain.grid = data_.grid;
  chain.t0 = data_.t0;

  std::vector<std::vector<double>> delta_sum(topo_.S);
  for (int s = 0; s < topo_.S; ++s) delta_sum[s].assign(data_.grid[s].size(), 0.0);
  int64_t kept = 0;

  for (int64_t iter = 0; iter < cfg_.iterations; ++iter) {
    sweep(iter);
    if (iter >= cfg_.burn_in && (iter - cfg_.burn_in) % cfg_.thinning == 0) {
      ChainDraw d;
      d.iteration = iter;
      d.mu = st_.mu;
      d.tau = st_.tau;
      d.lambda = st_.lambda;
      d.phi = st_.phi;
      d.upsilon2 = st_.upsilon2;
      d.theta = st_.theta;
      d.kappa = st_.kappa;
      d.xi = st_.xi;
      d.sigma2 = st_.sigma2;
      d.beta = st_.beta;
      chain.draws.push_back(std::move(d));
      for (int s = 0; s < topo_.S; ++s)
        for (size_t t = 0; t < delta_sum[s].size(); ++t) delta_sum[s][t] += st_.delta[s][t];
      if (cfg_.store_delta_draws) chain.delta_draws.push_back(st_.delta);
      ++kept;
    }
  }

  chain.delta_mean = std::move(delta_sum);
  if (kept > 0)
    for (auto& path : chain.delta_mean)
      for (double& v : path) v /= double(kept);
  chain.tuning_final = tuning_;
  chain.acceptance = accept_;
  return chain;
}

PosteriorChain run_chain(const Topology& topo, const Dataset& data, const RunConfig& config) {
  Sampler sampler(topo, data, config);
  return sampler.run();
}

}  // namespace nodetherm
