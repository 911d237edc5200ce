#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tvmerge/mask.hpp"
#include "tvmerge/prune.hpp"
#include "tvmerge/tensor.hpp"

namespace tvmerge {

// Where quota shortfalls draw their fill when a block runs out of unclaimed
// weights: from the claimed region of the same block, or from the claimed
// region of the whole tensor (top magnitudes globally).
enum class OverlapFill { Block, Tensor };

// Sequential conflict-aware pruning over one tensor. Vectors are fed in
// sparsification order; each call prunes against the union of all masks
// produced so far:
//
//   1. the candidate set of every block excludes already-claimed positions;
//   2. if a block has fewer unclaimed candidates than its quota, the
//      shortfall is filled from the claimed (overlapping) positions by
//      magnitude, so the achieved overlap is the minimum the quota allows;
//   3. quotas always fill, so every mask obeys the same block law as plain
//      n:m pruning.
//
// The quota layout follows the PruneSpec: BalancedNM gives per-block quotas,
// MagnitudeLayer one whole-tensor quota of ceil(keep * N).
class CaSession {
public:
    CaSession(Shape shape, PruneSpec quota, OverlapFill fill = OverlapFill::Block);

    Bitset next(const ConstArrayRef& tau);

    const Bitset& claimed() const { return claimed_; }

private:
    struct Segment {
        std::size_t begin, len, quota;
    };
    template <typename Fn>
    void for_each_segment(Fn&& fn) const;

    Shape shape_;
    PruneSpec quota_;
    OverlapFill fill_;
    std::size_t numel_;
    Bitset claimed_;
};

// Convenience wrapper: one tensor, k vectors in order.
std::vector<Bitset> ca_masks(std::span<const ArrayXf* const> vectors_in_order, const Shape& shape,
                             const PruneSpec& quota, OverlapFill fill = OverlapFill::Block);

// Random mask with a controlled overlap against an existing mask: exactly
// round(target_rate * |mask_a|) of its bits land inside mask_a's support and
// the rest outside, keeping round(keep_fraction * N) bits in total.
Bitset make_mask_with_target_overlap(const Bitset& mask_a, double keep_fraction,
                                     double target_overlap_rate, std::uint64_t seed);

}  // namespace tvmerge
