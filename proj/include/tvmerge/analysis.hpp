#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "tvmerge/mask.hpp"
#include "tvmerge/tensor.hpp"

namespace tvmerge {

// Overlap of two masks, reported relative to the first one:
// rate = |A and B| / |A|. Asymmetric when the kept counts differ.
// Stats aggregate across tensors by summing counts, so the aggregate rate
// equals the rate of the concatenated masks.
struct OverlapStats {
    std::size_t kept_a = 0;
    std::size_t kept_b = 0;
    std::size_t shared = 0;

    double rate() const;  // throws if kept_a == 0
    OverlapStats& operator+=(const OverlapStats& o) {
        kept_a += o.kept_a;
        kept_b += o.kept_b;
        shared += o.shared;
        return *this;
    }
};

OverlapStats overlap_stats(const Bitset& a, const Bitset& b);

// Expected rate(A, B) when B keeps each position independently: just B's
// keep fraction. Reference curve for overlap-vs-sparsity comparisons.
double expected_random_overlap(double keep_fraction_b);

// Retained-weight counts over a (band_rows x band_cols) grid of cells, plus
// dispersion statistics of the cell counts. Tensors with more than two axes
// are collapsed onto (numel/last, last); 1-D tensors are one row.
struct BalanceGrid {
    std::size_t band_rows = 0, band_cols = 0;
    std::size_t grid_rows = 0, grid_cols = 0;
    std::vector<std::uint64_t> counts;  // row-major grid
    double mean = 0.0, variance = 0.0, cv = 0.0;

    std::uint64_t total() const;
    void write_csv(std::ostream& os) const;  // one line per band row
};

BalanceGrid balance_grid(const Bitset& mask, const Shape& shape, std::size_t band_rows,
                         std::size_t band_cols);

// Frobenius geometry of a set of masked task vectors under scaling
// coefficients: pairwise inner products, per-vector scaled squared norms,
// and the residual of
//   ||sum_i l_i t_i||^2 - sum_i ||l_i t_i||^2 - 2 sum_{i<j} l_i l_j <t_i, t_j>.
// The combined norm uses the F32 left-to-right sum, so the residual measures
// F32 accumulation error; it vanishes when supports are disjoint.
struct OrthoReport {
    std::vector<double> scaled_sq_norms;        // ||l_i t_i||^2
    std::vector<std::vector<double>> inners;    // <t_i, t_j>, full symmetric matrix
    double combined_sq_norm = 0.0;              // ||sum l_i t_i||^2
    double residual = 0.0;
    double relative_residual = 0.0;
};

OrthoReport ortho_check(std::span<const ArrayXf* const> masked_vectors,
                        std::span<const double> lambdas);

// Pair of synthetic task vectors with correlated magnitudes: a ~ N(0,1),
// b = a + sigma * N(0,1). Magnitude pruning keeps overlapping supports on
// such a pair, random pruning does not.
std::pair<ArrayXf, ArrayXf> make_correlated_pair(std::size_t n, double sigma, std::uint64_t seed);

}  // namespace tvmerge
