#include "tvmerge/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tvmerge/errors.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge {

std::size_t keep_count(double keep_fraction, std::size_t n) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw ValidationError("keep fraction must be in (0, 1]");
    const double t = keep_fraction * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(t - 1e-9));
    return std::min(k, n);
}

std::size_t tail_quota(std::size_t t, int n, int m) {
    const std::uint64_t num = t * static_cast<std::uint64_t>(n);
    const std::uint64_t q = num / static_cast<std::uint64_t>(m);
    const std::uint64_t r = num % static_cast<std::uint64_t>(m);
    if (2 * r > static_cast<std::uint64_t>(m)) return q + 1;
    if (2 * r < static_cast<std::uint64_t>(m)) return q;
    return (q % 2 == 0) ? q : q + 1;  // exact half: round to even
}

namespace {

inline float magnitude_key(float x) {
    return std::isnan(x) ? -1.0f : std::fabs(x);
}

}  // namespace

void select_top_magnitude(const float* v, std::vector<std::uint32_t>& candidates, std::size_t k) {
    if (k == 0 || k >= candidates.size()) return;
    std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k) - 1,
                     candidates.end(), [v](std::uint32_t a, std::uint32_t b) {
                         const float ka = magnitude_key(v[a]);
                         const float kb = magnitude_key(v[b]);
                         if (ka != kb) return ka > kb;
                         return a < b;
                     });
}

Bitset prune_magnitude_layer(const ConstArrayRef& v, double keep_fraction) {
    const auto n = static_cast<std::size_t>(v.size());
    if (n == 0) throw ValidationError("cannot prune an empty tensor");
    if (n > UINT32_MAX) throw InternalError("tensor too large for index buffer");
    Bitset mask(n);
    const std::size_t k = keep_count(keep_fraction, n);
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    select_top_magnitude(v.data(), idx, k);
    for (std::size_t i = 0; i < k; ++i) mask.set(idx[i]);
    return mask;
}

Bitset prune_magnitude_row(const ConstArrayRef& v, const Shape& shape, double keep_fraction) {
    const auto n = static_cast<std::size_t>(v.size());
    if (n == 0) throw ValidationError("cannot prune an empty tensor");
    if (static_cast<std::int64_t>(n) != shape_numel(shape))
        throw ValidationError("shape does not match element count");
    const auto len = static_cast<std::size_t>(row_length(shape));
    if (len == 0) throw ValidationError("cannot prune empty rows");
    const std::size_t rows = n / len;

    Bitset mask(n);
    const std::size_t k = keep_count(keep_fraction, len);
    std::vector<std::uint32_t> idx(len);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = v.data() + r * len;
        std::iota(idx.begin(), idx.end(), 0u);
        select_top_magnitude(row, idx, k);
        for (std::size_t i = 0; i < k; ++i) mask.set(r * len + idx[i]);
    }
    return mask;
}

Bitset prune_random(std::size_t numel, double keep_fraction, std::uint64_t seed,
                    std::string_view tensor_name) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw ValidationError("keep fraction must be in (0, 1]");
    Bitset mask(numel);
    if (keep_fraction >= 1.0) {
        for (std::size_t i = 0; i < numel; ++i) mask.set(i);
        return mask;
    }
    const std::uint64_t key = stream_key(seed, tensor_name);
    const auto threshold = static_cast<float>(keep_fraction);
    for (std::size_t i = 0; i < numel; ++i)
        if (counter_u01(key, i) < threshold) mask.set(i);
    return mask;
}

Bitset prune_balanced_nm(const ConstArrayRef& v, const Shape& shape, int n, int m) {
    const auto total = static_cast<std::size_t>(v.size());
    if (total == 0) throw ValidationError("cannot prune an empty tensor");
    if (n < 1 || m < 1 || n > m) throw ValidationError("require 1 <= n <= m for n:m pruning");
    if (static_cast<std::int64_t>(total) != shape_numel(shape))
        throw ValidationError("shape does not match element count");

    Bitset mask(total);
    const auto len = static_cast<std::size_t>(row_length(shape));
    const std::size_t rows = total / len;
    std::vector<std::uint32_t> idx;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = v.data() + r * len;
        for (std::size_t b = 0; b < len; b += static_cast<std::size_t>(m)) {
            const std::size_t blk = std::min(len - b, static_cast<std::size_t>(m));
            const std::size_t quota =
                blk == static_cast<std::size_t>(m) ? static_cast<std::size_t>(n)
                                                   : tail_quota(blk, n, m);
            idx.resize(blk);
            std::iota(idx.begin(), idx.end(), static_cast<std::uint32_t>(b));
            select_top_magnitude(row, idx, quota);
            for (std::size_t i = 0; i < quota; ++i) mask.set(r * len + idx[i]);
        }
    }
    return mask;
}

std::vector<Bitset> ties_trim_and_elect(std::span<const ArrayXf* const> vectors,
                                        double keep_fraction) {
    if (vectors.size() < 2)
        throw ValidationError("sign election needs at least two task vectors");
    const Eigen::Index n = vectors.front()->size();
    for (const auto* v : vectors)
        if (v->size() != n) throw ValidationError("sign election: size mismatch");

    std::vector<Bitset> masks;
    masks.reserve(vectors.size());
    for (const auto* v : vectors) masks.push_back(prune_magnitude_layer(*v, keep_fraction));

    // Sum of retained values, F32 left-to-right in vector order.
    ArrayXf sum = ArrayXf::Zero(n);
    for (std::size_t k = 0; k < vectors.size(); ++k) {
        const ArrayXf& v = *vectors[k];
        const auto& words = masks[k].words();
        for (std::size_t w = 0; w < words.size(); ++w) {
            std::uint64_t bits = words[w];
            while (bits) {
                const auto i = static_cast<Eigen::Index>(w * 64 + std::countr_zero(bits));
                sum[i] += v[i];
                bits &= bits - 1;
            }
        }
    }

    for (std::size_t k = 0; k < vectors.size(); ++k) {
        const ArrayXf& v = *vectors[k];
        Bitset& mask = masks[k];
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!mask.test(static_cast<std::size_t>(i))) continue;
            const float s = sum[i];
            const bool elected_negative = s < 0.0f;  // zero sum elects positive
            if ((elected_negative && v[i] > 0.0f) || (!elected_negative && v[i] < 0.0f))
                mask.reset(static_cast<std::size_t>(i));
        }
    }
    return masks;
}

}  // namespace tvmerge
