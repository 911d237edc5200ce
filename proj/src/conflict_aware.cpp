#include "tvmerge/conflict_aware.hpp"

#include <algorithm>
#include <cmath>

#include "tvmerge/errors.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge {

CaSession::CaSession(Shape shape, PruneSpec quota, OverlapFill fill)
    : shape_(std::move(shape)), quota_(quota), fill_(fill) {
    numel_ = static_cast<std::size_t>(shape_numel(shape_));
    if (numel_ == 0) throw ValidationError("cannot prune an empty tensor");
    switch (quota_.method) {
        case PruneMethod::BalancedNM:
            if (quota_.n < 1 || quota_.m < 1 || quota_.n > quota_.m)
                throw ValidationError("require 1 <= n <= m for n:m pruning");
            break;
        case PruneMethod::MagnitudeLayer:
            if (!(quota_.keep_fraction > 0.0) || quota_.keep_fraction > 1.0)
                throw ValidationError("keep fraction must be in (0, 1]");
            break;
        default:
            throw ValidationError("conflict-aware pruning needs a block or layer quota");
    }
    claimed_ = Bitset(numel_);
}

template <typename Fn>
void CaSession::for_each_segment(Fn&& fn) const {
    if (quota_.method == PruneMethod::MagnitudeLayer) {
        fn(Segment{0, numel_, keep_count(quota_.keep_fraction, numel_)});
        return;
    }
    const auto m = static_cast<std::size_t>(quota_.m);
    const auto len = static_cast<std::size_t>(row_length(shape_));
    const std::size_t rows = numel_ / len;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t b = 0; b < len; b += m) {
            const std::size_t blk = std::min(len - b, m);
            const std::size_t quota =
                blk == m ? static_cast<std::size_t>(quota_.n) : tail_quota(blk, quota_.n, quota_.m);
            fn(Segment{r * len + b, blk, quota});
        }
    }
}

Bitset CaSession::next(const ConstArrayRef& tau) {
    if (static_cast<std::size_t>(tau.size()) != numel_)
        throw ValidationError("conflict-aware pruning: tensor size mismatch");

    Bitset mask(numel_);
    std::vector<std::uint32_t> free_idx, claimed_idx;
    std::size_t shortfall = 0;

    for_each_segment([&](Segment seg) {
        free_idx.clear();
        claimed_idx.clear();
        for (std::size_t i = seg.begin; i < seg.begin + seg.len; ++i) {
            if (claimed_.test(i))
                claimed_idx.push_back(static_cast<std::uint32_t>(i));
            else
                free_idx.push_back(static_cast<std::uint32_t>(i));
        }
        const std::size_t take_free = std::min(seg.quota, free_idx.size());
        select_top_magnitude(tau.data(), free_idx, take_free);
        for (std::size_t i = 0; i < take_free; ++i) mask.set(free_idx[i]);

        const std::size_t missing = seg.quota - take_free;
        if (missing == 0) return;
        if (fill_ == OverlapFill::Block) {
            select_top_magnitude(tau.data(), claimed_idx, missing);
            for (std::size_t i = 0; i < missing; ++i) mask.set(claimed_idx[i]);
        } else {
            shortfall += missing;
        }
    });

    if (fill_ == OverlapFill::Tensor && shortfall > 0) {
        // Fill the combined shortfall from claimed positions anywhere in the
        // tensor, by magnitude. Positions already taken for this mask are
        // free positions, so they never collide with the fill set.
        std::vector<std::uint32_t> pool;
        for (std::size_t i = 0; i < numel_; ++i)
            if (claimed_.test(i)) pool.push_back(static_cast<std::uint32_t>(i));
        const std::size_t take = std::min(shortfall, pool.size());
        select_top_magnitude(tau.data(), pool, take);
        for (std::size_t i = 0; i < take; ++i) mask.set(pool[i]);
    }

    claimed_.or_with(mask);
    return mask;
}

std::vector<Bitset> ca_masks(std::span<const ArrayXf* const> vectors_in_order, const Shape& shape,
                             const PruneSpec& quota, OverlapFill fill) {
    if (vectors_in_order.size() < 2)
        throw ValidationError("conflict-aware pruning needs at least two task vectors");
    CaSession session(shape, quota, fill);
    std::vector<Bitset> masks;
    masks.reserve(vectors_in_order.size());
    for (const auto* v : vectors_in_order) masks.push_back(session.next(*v));
    return masks;
}

Bitset make_mask_with_target_overlap(const Bitset& mask_a, double keep_fraction,
                                     double target_overlap_rate, std::uint64_t seed) {
    const std::size_t n = mask_a.size();
    const std::size_t kept_a = mask_a.count();
    if (kept_a == 0) throw ValidationError("reference mask is empty");
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw ValidationError("keep fraction must be in (0, 1]");
    if (target_overlap_rate < 0.0 || target_overlap_rate > 1.0)
        throw ValidationError("target overlap rate must be in [0, 1]");

    const auto kept_b =
        static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
    const auto overlap =
        static_cast<std::size_t>(std::llround(target_overlap_rate * static_cast<double>(kept_a)));
    if (overlap > kept_a || overlap > kept_b || (kept_b - overlap) > (n - kept_a))
        throw ValidationError("target overlap rate is infeasible for these keep counts");

    std::vector<std::size_t> inside, outside;
    inside.reserve(kept_a);
    outside.reserve(n - kept_a);
    for (std::size_t i = 0; i < n; ++i) (mask_a.test(i) ? inside : outside).push_back(i);

    SplitMix64 rng(mix64(seed ^ 0x6f76726cu));
    auto sample_first_k = [&rng](std::vector<std::size_t>& pool, std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + rng.bounded(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
    };

    Bitset mask(n);
    sample_first_k(inside, overlap);
    for (std::size_t i = 0; i < overlap; ++i) mask.set(inside[i]);
    sample_first_k(outside, kept_b - overlap);
    for (std::size_t i = 0; i < kept_b - overlap; ++i) mask.set(outside[i]);
    return mask;
}

}  // namespace tvmerge
