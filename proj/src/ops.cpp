#include "tvmerge/ops.hpp"

#include <set>

namespace tvmerge {

ArrayXf apply_mask(const ConstArrayRef& v, const Bitset& mask) {
    if (static_cast<std::size_t>(v.size()) != mask.size())
        throw ValidationError("apply_mask: mask has " + std::to_string(mask.size()) +
                              " bits for " + std::to_string(v.size()) + " elements");
    ArrayXf out = ArrayXf::Zero(v.size());
    const auto& words = mask.words();
    for (std::size_t w = 0; w < words.size(); ++w) {
        std::uint64_t bits = words[w];
        while (bits) {
            const std::size_t i = w * 64 + std::countr_zero(bits);
            out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(i)];
            bits &= bits - 1;
        }
    }
    return out;
}

void rescale_in_place(ArrayXf& v, double keep_fraction) {
    if (!(keep_fraction > 0.0))
        throw ValidationError("rescale: keep fraction must be positive");
    v *= static_cast<float>(1.0 / keep_fraction);
}

void add_scaled_masked(ArrayXf& acc, const ConstArrayRef& v, const Bitset& mask, float lambda) {
    if (acc.size() != v.size() || static_cast<std::size_t>(v.size()) != mask.size())
        throw ValidationError("add_scaled_masked: size mismatch");
    const auto& words = mask.words();
    for (std::size_t w = 0; w < words.size(); ++w) {
        std::uint64_t bits = words[w];
        while (bits) {
            const auto i = static_cast<Eigen::Index>(w * 64 + std::countr_zero(bits));
            acc[i] += lambda * v[i];
            bits &= bits - 1;
        }
    }
}

void add_scaled(ArrayXf& acc, const ConstArrayRef& v, float lambda) {
    if (acc.size() != v.size()) throw ValidationError("add_scaled: size mismatch");
    acc += lambda * v;
}

ArrayXf merge_tensor(const ConstArrayRef& base, std::span<const TensorContribution> contributions) {
    ArrayXf acc = base;
    for (const auto& c : contributions) {
        if (!c.tau) throw InternalError("merge_tensor: null contribution");
        if (c.rescale != 1.0f) {
            ArrayXf scaled = *c.tau * c.rescale;
            if (c.mask)
                add_scaled_masked(acc, scaled, *c.mask, c.lambda);
            else
                add_scaled(acc, scaled, c.lambda);
        } else if (c.mask) {
            add_scaled_masked(acc, *c.tau, *c.mask, c.lambda);
        } else {
            add_scaled(acc, *c.tau, c.lambda);
        }
    }
    return acc;
}

double frobenius_inner(const ConstArrayRef& a, const ConstArrayRef& b) {
    if (a.size() != b.size()) throw ValidationError("frobenius_inner: size mismatch");
    return (a.cast<double>() * b.cast<double>()).sum();
}

double squared_frobenius_norm(const ConstArrayRef& a) {
    return a.cast<double>().square().sum();
}

Bitset nonzero_mask(const ConstArrayRef& v) {
    Bitset out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (v[i] != 0.0f) out.set(static_cast<std::size_t>(i));
    return out;
}

void check_aligned(const Checkpoint& base, const Checkpoint& other) {
    std::set<std::string> base_names, other_names;
    for (const auto& m : base.metas())
        if (m.is_arithmetic()) base_names.insert(m.name);
    for (const auto& m : other.metas())
        if (m.is_arithmetic()) other_names.insert(m.name);

    for (const auto& n : base_names)
        if (!other_names.count(n))
            throw ValidationError("tensor '" + n + "' present in '" + base.path() +
                                  "' but missing from '" + other.path() + "'");
    for (const auto& n : other_names)
        if (!base_names.count(n))
            throw ValidationError("tensor '" + n + "' present in '" + other.path() +
                                  "' but missing from '" + base.path() + "'");

    for (const auto& n : base_names) {
        const TensorMeta& a = base.meta(n);
        const TensorMeta& b = other.meta(n);
        if (a.shape != b.shape)
            throw ValidationError("tensor '" + n + "': shape mismatch between '" + base.path() +
                                  "' and '" + other.path() + "'");
        if (a.dtype_str != b.dtype_str)
            throw ValidationError("tensor '" + n + "': dtype mismatch (" + a.dtype_str + " vs " +
                                  b.dtype_str + ")");
    }
}

TaskVector checkpoint_delta(const Checkpoint& fine_tuned, const Checkpoint& base) {
    check_aligned(base, fine_tuned);
    TaskVector tv;
    tv.fine_tuned_path = fine_tuned.path();
    tv.base_path = base.path();
    for (const auto& m : base.metas()) {
        if (!m.is_arithmetic()) continue;
        Tensor t;
        t.shape = m.shape;
        t.dtype = m.dtype;
        t.dtype_str = m.dtype_str;
        t.values = delta(fine_tuned.read_f32(m.name), base.read_f32(m));
        tv.entries.emplace(m.name, std::move(t));
    }
    return tv;
}

}  // namespace tvmerge
