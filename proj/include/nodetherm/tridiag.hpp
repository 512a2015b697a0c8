#pragma once

// Symmetric tridiagonal SPD matrices and their Cholesky factors. Used for the
// per-node temporal precision blocks, which stay tridiagonal for any strictly
// increasing observation grid.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nodetherm/rng.hpp"

namespace nodetherm {

struct Tridiag {
  std::vector<double> diag;  // n entries
  std::vector<double> off;   // n-1 entries, off[i] couples i and i+1

  size_t size() const { return diag.size(); }

  // y = A x
  void multiply(const std::vector<double>& x, std::vector<double>& y) const {
    const size_t n = diag.size();
    y.resize(n);
    for (size_t i = 0; i < n; ++i) {
      double v = diag[i] * x[i];
      if (i > 0) v += off[i - 1] * x[i - 1];
      if (i + 1 < n) v += off[i] * x[i + 1];
      y[i] = v;
    }
  }

  double quad_form(const std::vector<double>& x) const {
    const size_t n = diag.size();
    double q = 0.0;
    for (size_t i = 0; i < n; ++i) {
      q += diag[i] * x[i] * x[i];
      if (i + 1 < n) q += 2.0 * off[i] * x[i] * x[i + 1];
    }
    return q;
  }
};

// Lower bidiagonal Cholesky L with A = L L^T.
class TridiagChol {
 public:
  void factorize(const Tridiag& a) {
    const size_t n = a.size();
    if (a.off.size() + 1 != n && !(n == 0 && a.off.empty()))
      throw std::invalid_argument("TridiagChol: off-diagonal length mismatch");
    d_.resize(n);
    l_.resize(n > 0 ? n - 1 : 0);
    double prev_l = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double v = a.diag[i] - prev_l * prev_l;
      if (!(v > 0.0)) throw std::runtime_error("TridiagChol: matrix not positive definite");
      d_[i] = std::sqrt(v);
      if (i + 1 < n) {
        l_[i] = a.off[i] / d_[i];
        prev_l = l_[i];
      }
    }
  }

  size_t size() const { return d_.size(); }

  double logdet() const {  // log det A = 2 sum log d
    double s = 0.0;
    for (double v : d_) s += std::log(v);
    return 2.0 * s;
  }

  // Solve A x = b in place.
  void solve(std::vector<double>& b) const {
    const size_t n = d_.size();
    for (size_t i = 0; i < n; ++i) {
      double v = b[i];
      if (i > 0) v -= l_[i - 1] * b[i - 1];
      b[i] = v / d_[i];
    }
    for (size_t i = n; i-- > 0;) {
      double v = b[i];
      if (i + 1 < n) v -= l_[i] * b[i + 1];
      b[i] = v / d_[i];
    }
  }

  // Solve L^T x = z in place: turns iid normals into a draw from N(0, A^{-1}).
  void solve_lt(std::vector<double>& z) const {
    const size_t n = d_.size();
    for (size_t i = n; i-- > 0;) {
      double v = z[i];
      if (i + 1 < n) v -= l_[i] * z[i + 1];
      z[i] = v / d_[i];
    }
  }

  // Draw from N(mean, A^{-1}) where A is the factorized precision.
  void sample(const std::vector<double>& mean, RngStream& rng,
              std::vector<double>& out) const {
    const size_t n = d_.size();
    out.resize(n);
    for (size_t i = 0; i < n; ++i) out[i] = rng.normal();
    solve_lt(out);
    for (size_t i = 0; i < n; ++i) out[i] += mean[i];
  }

 private:
  std::vector<double> d_, l_;
};

}  // namespace nodetherm
