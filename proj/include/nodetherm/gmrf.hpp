#pragma once

// Spatial layer: sparse precision matrices over the machine topology, banded
// Cholesky factorization under a band-reducing node order, GMRF sampling, and
// the implied neighbor correlations.
//
// Precision forms:
//   build_car_precision:  Q_ss = (tau/phi) sum_l lambda_l n_sl,
//                         Q_sr = -tau lambda_l for r an l-neighbor of s,
//                         diagonally dominant iff phi < 1.
//   build_alt_car_precision: Q_ss = tau sum_l n_sl, Q_sr = -tau rho_l,
//                         dominance checked per node.

#include <cstdint>
#include <tuple>
#include <vector>

#include "nodetherm/rng.hpp"
#include "nodetherm/topology.hpp"

namespace nodetherm {

// Symmetric sparse matrix in CSR with both triangles stored; entries tagged
// with the neighbor type that produced them (0 = diagonal) so values can be
// refilled for new parameters without touching the pattern.
struct SparsePrecision {
  int n = 0;
  std::vector<int32_t> row_ptr;  // n+1
  std::vector<int32_t> col;
  std::vector<int8_t> type;      // 0 diagonal, else neighbor type
  std::vector<double> val;

  int64_t nnz() const { return int64_t(col.size()); }
  double row_sum(int i) const;
  double quad_form(const std::vector<double>& x) const;        // x' Q x
  double centered_quad_form(const std::vector<double>& x, double c) const;  // (x-c1)' Q (x-c1)
  void multiply(const std::vector<double>& x, std::vector<double>& y) const;
  int32_t bandwidth(const std::vector<int32_t>& perm) const;   // max |inv(i)-inv(j)| over entries

  // Rewrite values in place for new parameters (pattern from the same topology).
  void fill_car(const std::vector<double>& lambda, double phi, double tau);
  void fill_alt_car(const std::vector<double>& rho, double tau);
};

SparsePrecision build_car_pattern(const Topology& topo);
SparsePrecision build_car_precision(const Topology& topo, const std::vector<double>& lambda,
                                    double phi, double tau);
SparsePrecision build_alt_car_precision(const Topology& topo, const std::vector<double>& rho,
                                        double tau);

// Validates a simplex weight vector: nonnegative, finite, sums to 1 within tol.
void check_simplex(const std::vector<double>& lambda, double tol = 1e-12);

// Reverse Cuthill-McKee over the sparsity graph.
std::vector<int32_t> rcm_permutation(const SparsePrecision& q);

// Best available band-reducing order: RCM, and the structured room sweep when
// a topology is supplied; whichever gives the smaller bandwidth wins.
std::vector<int32_t> band_reduce_permutation(const SparsePrecision& q,
                                             const Topology* topo = nullptr);

// Banded Cholesky of a permuted SPD matrix. Solves and samples accept and
// return vectors in the original (unpermuted) index order.
class BandedChol {
 public:
  void factorize(const SparsePrecision& q, const std::vector<int32_t>& perm);
  // Factor a matrix given directly by triplets in its working order (used for
  // the interleaved regression-coefficient block). Both (i,j) and (j,i) or
  // just one triangle may be supplied; duplicates accumulate.
  void factorize_triplets(int n, const std::vector<std::tuple<int32_t, int32_t, double>>& entries);

  int size() const { return n_; }
  int bandwidth() const { return bw_; }
  double logdet() const;
  void solve(std::vector<double>& b) const;
  void sample_zero_mean(RngStream& rng, std::vector<double>& out) const;
  // Column j of the inverse, solved in permuted space, returned unpermuted.
  void inverse_column(int j, std::vector<double>& out) const;

 private:
  void factor_band();
  int n_ = 0, bw_ = 0;
  std::vector<double> band_;      // lower band, entry (i,j) at [(i-j) + j*(bw+1)]
  std::vector<int32_t> perm_, inv_;  // empty = identity
};

// Draw from N(mean * 1, Q^{-1}) using a supplied factorization.
void sample_gmrf(const BandedChol& chol, double mean, RngStream& rng,
                 std::vector<double>& out);

// Average correlation implied by the unit-tau precision for each neighbor
// type (correlations are tau-invariant).
std::vector<double> neighbor_type_correlations(const Topology& topo,
                                               const std::vector<double>& lambda,
                                               double phi);

}  // namespace nodetherm
