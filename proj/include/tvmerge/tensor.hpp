#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "tvmerge/dtype.hpp"

namespace tvmerge {

using ArrayXf = Eigen::ArrayXf;
using ConstArrayRef = Eigen::Ref<const Eigen::ArrayXf>;

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

// Row view used by row-wise pruning, block layouts and balance grids: the
// last axis is the row, everything before it is collapsed. A 1-D tensor (or
// a scalar) is a single row.
inline std::int64_t row_length(const Shape& s) {
    return s.empty() ? shape_numel(s) : s.back();
}
inline std::int64_t row_count(const Shape& s) {
    const std::int64_t len = row_length(s);
    return len == 0 ? 0 : shape_numel(s) / len;
}

// F32 working tensor plus the storage dtype it came from.
struct Tensor {
    Shape shape;
    Dtype dtype = Dtype::F32;
    std::string dtype_str = "F32";
    ArrayXf values;
};

}  // namespace tvmerge
