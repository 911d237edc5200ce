#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tvmerge/mask.hpp"
#include "tvmerge/tensor.hpp"

namespace tvmerge {

enum class PruneMethod { MagnitudeLayer, MagnitudeRow, Random, BalancedNM, TiesTrim };

struct PruneSpec {
    PruneMethod method = PruneMethod::MagnitudeLayer;
    double keep_fraction = 1.0;  // magnitude / random / ties
    int n = 0, m = 0;            // balanced n:m (keep fraction n/m)
    std::uint64_t seed = 0;      // random only
};

// ceil(keep * n) with a guard against FP products that land a hair above an
// integer (0.1 * 70 must give 7, not 8).
std::size_t keep_count(double keep_fraction, std::size_t n);

// round-half-even(t*n/m), in exact integer arithmetic. Quota for a tail
// block of t < m elements.
std::size_t tail_quota(std::size_t t, int n, int m);

// Partitions the first `k` candidate indices as the top-k by |v|, ties going
// to the lower flat index (NaN sorts below everything). The order within the
// two partitions is unspecified.
void select_top_magnitude(const float* v, std::vector<std::uint32_t>& candidates, std::size_t k);

// Keep the ceil(keep*N) largest-|.| entries of the whole tensor.
Bitset prune_magnitude_layer(const ConstArrayRef& v, double keep_fraction);

// Same rule applied to each row independently (last axis; 1-D tensors are a
// single row).
Bitset prune_magnitude_row(const ConstArrayRef& v, const Shape& shape, double keep_fraction);

// Independent Bernoulli(keep) bits from a counter-based stream keyed by
// (seed, tensor name, flat index); reproducible and order-independent.
Bitset prune_random(std::size_t numel, double keep_fraction, std::uint64_t seed,
                    std::string_view tensor_name);

// Within each block of m consecutive elements (blocks run along rows and
// never straddle them) keep the n largest by |.|; a tail of t < m elements
// keeps round-half-even(t*n/m).
Bitset prune_balanced_nm(const ConstArrayRef& v, const Shape& shape, int n, int m);

// Magnitude-trim each vector, then elect a per-element sign from the sum of
// the retained values; retained entries that disagree lose their mask bit.
std::vector<Bitset> ties_trim_and_elect(std::span<const ArrayXf* const> vectors,
                                        double keep_fraction);

}  // namespace tvmerge
