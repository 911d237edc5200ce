#pragma once

#include <map>
#include <span>
#include <string>

#include "tvmerge/mask.hpp"
#include "tvmerge/safetensors.hpp"
#include "tvmerge/tensor.hpp"

namespace tvmerge {

// Elementwise task-vector algebra. Everything runs in F32 working precision;
// reductions that feed reports accumulate in double.

inline ArrayXf delta(const ConstArrayRef& fine_tuned, const ConstArrayRef& base) {
    if (fine_tuned.size() != base.size()) throw ValidationError("delta: size mismatch");
    return fine_tuned - base;
}

// out[i] = v[i] where the bit is set, exact 0.0f elsewhere.
ArrayXf apply_mask(const ConstArrayRef& v, const Bitset& mask);

// Multiplies every element by 1/keep_fraction (the 1/(1-p) compensation for
// a drop rate p).
void rescale_in_place(ArrayXf& v, double keep_fraction);

// acc[i] += lambda * v[i] at set bits; other elements are left untouched
// bit-for-bit.
void add_scaled_masked(ArrayXf& acc, const ConstArrayRef& v, const Bitset& mask, float lambda);
void add_scaled(ArrayXf& acc, const ConstArrayRef& v, float lambda);

// One merge contribution: mask may be null (keep everything), rescale is a
// premultiplier applied to tau before the lambda-weighted add.
struct TensorContribution {
    const ArrayXf* tau = nullptr;
    const Bitset* mask = nullptr;
    float lambda = 1.0f;
    float rescale = 1.0f;
};

// W = base + sum_i lambda_i * (mask_i ⊙ rescale_i * tau_i), accumulated
// left to right in the given order.
ArrayXf merge_tensor(const ConstArrayRef& base, std::span<const TensorContribution> contributions);

double frobenius_inner(const ConstArrayRef& a, const ConstArrayRef& b);
double squared_frobenius_norm(const ConstArrayRef& a);

// Mask of the non-zero entries (the support of a sparse vector).
Bitset nonzero_mask(const ConstArrayRef& v);

// Materialized per-tensor deltas between two checkpoints, F32, arithmetic
// tensors only. Requires equal arithmetic name sets, shapes and dtypes.
struct TaskVector {
    std::map<std::string, Tensor> entries;
    std::string fine_tuned_path;
    std::string base_path;
};
TaskVector checkpoint_delta(const Checkpoint& fine_tuned, const Checkpoint& base);

// Checks that the arithmetic tensors of `other` line up with `base`
// (same names, shapes, dtypes); throws ValidationError naming the tensor.
void check_aligned(const Checkpoint& base, const Checkpoint& other);

}  // namespace tvmerge
