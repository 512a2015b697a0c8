#include "nodetherm/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <string>

namespace nodetherm {

double SparsePrecision::row_sum(int i) const {
  double s = 0.0;
  for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += val[k];
  return s;
}

double SparsePrecision::quad_form(const std::vector<double>& x) const {
  double q = 0.0;
  for (int i = 0; i < n; ++i)
    for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) q += x[i] * val[k] * x[col[k]];
  return q;
}

double SparsePrecision::centered_quad_form(const std::vector<double>& x, double c) const {
  double q = 0.0;
  for (int i = 0; i < n; ++i)
    for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      q += (x[i] - c) * val[k] * (x[col[k]] - c);
  return q;
}

void SparsePrecision::multiply(const std::vector<double>& x, std::vector<double>& y) const {
  y.assign(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) y[i] += val[k] * x[col[k]];
}

int32_t SparsePrecision::bandwidth(const std::vector<int32_t>& perm) const {
  std::vector<int32_t> inv(n);
  for (int i = 0; i < n; ++i) inv[perm[i]] = i;
  int32_t bw = 0;
  for (int i = 0; i < n; ++i)
    for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      bw = std::max(bw, std::abs(inv[i] - inv[col[k]]));
  return bw;
}

void SparsePrecision::fill_car(const std::vector<double>& lambda, double phi, double tau) {
  if (!(phi > 0.0 && phi < 1.0))
    throw std::domain_error("fill_car: phi must lie strictly inside (0,1), got " +
                            std::to_string(phi));
  if (!(tau > 0.0)) throw std::domain_error("fill_car: tau must be positive");
  check_simplex(lambda);
  for (int i = 0; i < n; ++i) {
    double weight_sum = 0.0;
    int32_t diag_k = -1;
    for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      if (type[k] == 0) {
        diag_k = k;
        continue;
      }
      const double lam = lambda[type[k] - 1];
      weight_sum += lam;
      val[k] = -tau * lam;
    }
    val[diag_k] = tau / phi * weight_sum;
  }
}

void SparsePrecision::fill_alt_car(const std::vector<double>& rho, double tau) {
  if (!(tau > 0.0)) throw std::domain_error("fill_alt_car: tau must be positive");
  for (double r : rho)
    if (!std::isfinite(r)) throw std::domain_error("fill_alt_car: rho must be finite");
  for (int i = 0; i < n; ++i) {
    double abs_sum = 0.0;
    int count = 0;
    int32_t diag_k = -1;
    for (int32_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      if (type[k] == 0) {
        diag_k = k;
        continue;
      }
      const double r = rho[type[k] - 1];
      abs_sum += std::fabs(r);
      ++count;
      val[k] = -tau * r;
    }
    if (!(abs_sum < double(count)))
      throw std::runtime_error("fill_alt_car: node " + std::to_string(i) +
                               " is not diagonally dominant (sum |rho| over neighbors = " +
                               std::to_string(abs_sum) + " vs count " + std::to_string(count) + ")");
    val[diag_k] = tau * double(count);
  }
}

SparsePrecision build_car_pattern(const Topology& topo) {
  SparsePrecision q;
  q.n = topo.S;
  q.row_ptr.assign(topo.S + 1, 0);
  // Row i holds the diagonal plus every neighbor of any type, sorted by column.
  std::vector<std::vector<std::pair<int32_t, int8_t>>> rows(topo.S);
  for (int s = 0; s < topo.S; ++s) {
    rows[s].push_back({int32_t(s), 0});
    for (int l = 1; l <= topo.L; ++l)
      for (int32_t r : topo.neighbors[s][l - 1]) rows[s].push_back({r, int8_t(l)});
    std::sort(rows[s].begin(), rows[s].end());
  }
  for (int s = 0; s < topo.S; ++s) q.row_ptr[s + 1] = q.row_ptr[s] + int32_t(rows[s].size());
  q.col.reserve(q.row_ptr[topo.S]);
  q.type.reserve(q.row_ptr[topo.S]);
  for (int s = 0; s < topo.S; ++s)
    for (auto [c, t] : rows[s]) {
      q.col.push_back(c);
      q.type.push_back(t);
    }
  q.val.assign(q.col.size(), 0.0);
  return q;
}

SparsePrecision build_car_precision(const Topology& topo, const std::vector<double>& lambda,
                                    double phi, double tau) {
  if (int(lambda.size()) != topo.L)
    throw std::invalid_argument("build_car_precision: lambda length != L");
  SparsePrecision q = build_car_pattern(topo);
  q.fill_car(lambda, phi, tau);
  return q;
}

SparsePrecision build_alt_car_precision(const Topology& topo, const std::vector<double>& rho,
                                        double tau) {
  if (int(rho.size()) != topo.L)
    throw std::invalid_argument("build_alt_car_precision: rho length != L");
  SparsePrecision q = build_car_pattern(topo);
  q.fill_alt_car(rho, tau);
  return q;
}

void check_simplex(const std::vector<double>& lambda, double tol) {
  double sum = 0.0;
  for (double v : lambda) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::domain_error("simplex weights must be finite and nonnegative");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > tol)
    throw std::domain_error("simplex weights sum to " + std::to_string(sum) + ", expected 1");
}

std::vector<int32_t> rcm_permutation(const SparsePrecision& q) {
  const int n = q.n;
  std::vector<int> degree(n);
  for (int i = 0; i < n; ++i) degree[i] = q.row_ptr[i + 1] - q.row_ptr[i] - 1;
  std::vector<int32_t> order;
  order.reserve(n);
  std::vector<char> visited(n, 0);
  for (;;) {
    // Start the next component at its minimum-degree vertex.
    int start = -1;
    for (int i = 0; i < n; ++i)
      if (!visited[i] && (start < 0 || degree[i] < degree[start])) start = i;
    if (start < 0) break;
    visited[start] = 1;
    size_t head = order.size();
    order.push_back(start);
    std::vector<int32_t> nbrs;
    while (head < order.size()) {
      int u = order[head++];
      nbrs.clear();
      for (int32_t k = q.row_ptr[u]; k < q.row_ptr[u + 1]; ++k) {
        int32_t v = q.col[k];
        if (v != u && !visited[v]) {
          visited[v] = 1;
          nbrs.push_back(v);
        }
      }
      std::sort(nbrs.begin(), nbrs.end(),
                [&](int32_t a, int32_t b) { return degree[a] < degree[b] || (degree[a] == degree[b] && a < b); });
      for (int32_t v : nbrs) order.push_back(v);
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

std::vector<int32_t> band_reduce_permutation(const SparsePrecision& q, const Topology* topo) {
  std::vector<int32_t> best = rcm_permutation(q);
  int32_t best_bw = q.bandwidth(best);
  if (topo && topo->S == q.n) {
    std::vector<int32_t> sliced = slice_permutation(*topo);
    int32_t bw = q.bandwidth(sliced);
    if (bw < best_bw) {
      best = std::move(sliced);
      best_bw = bw;
    }
  }
  return best;
}

void BandedChol::factorize(const SparsePrecision& q, const std::vector<int32_t>& perm) {
  n_ = q.n;
  if (int(perm.size()) != n_) throw std::invalid_argument("BandedChol: permutation size mismatch");
  perm_ = perm;
  inv_.resize(n_);
  for (int i = 0; i < n_; ++i) inv_[perm_[i]] = i;
  bw_ = q.bandwidth(perm_);
  const int ld = bw_ + 1;
  band_.assign(size_t(ld) * n_, 0.0);
  for (int i = 0; i < n_; ++i) {
    const int pi = inv_[i];
    for (int32_t k = q.row_ptr[i]; k < q.row_ptr[i + 1]; ++k) {
      const int pj = inv_[q.col[k]];
      if (pi >= pj) band_[size_t(pj) * ld + (pi - pj)] = q.val[k];
    }
  }
  factor_band();
}

void BandedChol::factorize_triplets(int n, const std::vector<std::tuple<int32_t, int32_t, double>>& entries) {
  n_ = n;
  perm_.clear();
  inv_.clear();
  bw_ = 0;
  for (auto [i, j, v] : entries) {
    (void)v;
    if (i < 0 || j < 0 || i >= n || j >= n)
      throw std::invalid_argument("BandedChol: triplet index out of range");
    bw_ = std::max(bw_, std::abs(i - j));
  }
  const int ld = bw_ + 1;
  band_.assign(size_t(ld) * n_, 0.0);
  for (auto [i, j, v] : entries) {
    if (i >= j) band_[size_t(j) * ld + (i - j)] += v;
  }
  factor_band();
}

void BandedChol::factor_band() {
  const int ld = bw_ + 1;
  for (int j = 0; j < n_; ++j) {
    double d = band_[size_t(j) * ld];
    const int kmin = std::max(0, j - bw_);
    for (int k = kmin; k < j; ++k) {
      const double ljk = band_[size_t(k) * ld + (j - k)];
      d -= ljk * ljk;
    }
    if (!(d > 0.0))
      throw std::runtime_error("BandedChol: matrix not positive definite at permuted index " +
                               std::to_string(j));
    const double dj = std::sqrt(d);
    band_[size_t(j) * ld] = dj;
    const int imax = std::min(n_ - 1, j + bw_);
    for (int i = j + 1; i <= imax; ++i) {
      double s = band_[size_t(j) * ld + (i - j)];
      const int k0 = std::max({0, i - bw_, j - bw_});
      for (int k = k0; k < j; ++k)
        s -= band_[size_t(k) * ld + (i - k)] * band_[size_t(k) * ld + (j - k)];
      band_[size_t(j) * ld + (i - j)] = s / dj;
    }
  }
}

double BandedChol::logdet() const {
  const int ld = bw_ + 1;
  double s = 0.0;
  for (int j = 0; j < n_; ++j) s += std::log(band_[size_t(j) * ld]);
  return 2.0 * s;
}

void BandedChol::solve(std::vector<double>& b) const {
  const int ld = bw_ + 1;
  std::vector<double> y(n_);
  if (perm_.empty()) {
    y = b;
  } else {
    for (int i = 0; i < n_; ++i) y[inv_[i]] = b[i];
  }
  for (int i = 0; i < n_; ++i) {
    double v = y[i];
    const int k0 = std::max(0, i - bw_);
    for (int k = k0; k < i; ++k) v -= band_[size_t(k) * ld + (i - k)] * y[k];
    y[i] = v / band_[size_t(i) * ld];
  }
  for (int i = n_; i-- > 0;) {
    double v = y[i];
    const int kmax = std::min(n_ - 1, i + bw_);
    for (int k = i + 1; k <= kmax; ++k) v -= band_[size_t(i) * ld + (k - i)] * y[k];
    y[i] = v / band_[size_t(i) * ld];
  }
  if (perm_.empty()) {
    b = std::move(y);
  } else {
    for (int i = 0; i < n_; ++i) b[i] = y[inv_[i]];
  }
}

void BandedChol::sample_zero_mean(RngStream& rng, std::vector<double>& out) const {
  const int ld = bw_ + 1;
  std::vector<double> y(n_);
  for (int i = 0; i < n_; ++i) y[i] = rng.normal();
  // Solve L^T x = z so cov(x) = (L L^T)^{-1}.
  for (int i = n_; i-- > 0;) {
    double v = y[i];
    const int kmax = std::min(n_ - 1, i + bw_);
    for (int k = i + 1; k <= kmax; ++k) v -= band_[size_t(i) * ld + (k - i)] * y[k];
    y[i] = v / band_[size_t(i) * ld];
  }
  out.resize(n_);
  if (perm_.empty()) {
    out = std::move(y);
  } else {
    for (int i = 0; i < n_; ++i) out[i] = y[inv_[i]];
  }
}

void BandedChol::inverse_column(int j, std::vector<double>& out) const {
  out.assign(n_, 0.0);
  out[j] = 1.0;
  solve(out);
}

void sample_gmrf(const BandedChol& chol, double mean, RngStream& rng,
                 std::vector<double>& out) {
  chol.sample_zero_mean(rng, out);
  for (double& v : out) v += mean;
}

std::vector<double> neighbor_type_correlations(const Topology& topo,
                                               const std::vector<double>& lambda,
                                               double phi) {
  SparsePrecision q = build_car_precision(topo, lambda, phi, 1.0);
  BandedChol chol;
  chol.factorize(q, band_reduce_permutation(q, &topo));
  std::vector<double> diag(topo.S, 0.0);
  std::vector<double> acc(topo.L, 0.0);
  std::vector<double> colbuf;
  // Ascending column order: when column c is solved every pair (i, c) with
  // i < c already has diag[i] available.
  for (int c = 0; c < topo.S; ++c) {
    chol.inverse_column(c, colbuf);
    diag[c] = colbuf[c];
    for (int l = 1; l <= topo.L; ++l) {
      for (int32_t i : topo.neighbors[c][l - 1]) {
        if (i < c) acc[l - 1] += colbuf[i] / std::sqrt(diag[i] * diag[c]);
      }
    }
  }
  std::vector<double> out(topo.L);
  for (int l = 0; l < topo.L; ++l) {
    const auto count = topo.pairs[l].size();
    out[l] = count ? acc[l] / double(count) : std::nan("");
  }
  return out;
}

}  // namespace nodetherm
