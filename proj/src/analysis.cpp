#include "tvmerge/analysis.hpp"

#include <cmath>
#include <ostream>

#include "tvmerge/errors.hpp"
#include "tvmerge/ops.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge {

double OverlapStats::rate() const {
    if (kept_a == 0) throw ValidationError("overlap rate undefined: first mask keeps nothing");
    return static_cast<double>(shared) / static_cast<double>(kept_a);
}

OverlapStats overlap_stats(const Bitset& a, const Bitset& b) {
    OverlapStats s;
    s.kept_a = a.count();
    s.kept_b = b.count();
    s.shared = a.and_count(b);
    return s;
}

double expected_random_overlap(double keep_fraction_b) {
    if (!(keep_fraction_b > 0.0) || keep_fraction_b > 1.0)
        throw ValidationError("keep fraction must be in (0, 1]");
    return keep_fraction_b;
}

std::uint64_t BalanceGrid::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

void BalanceGrid::write_csv(std::ostream& os) const {
    for (std::size_t r = 0; r < grid_rows; ++r) {
        for (std::size_t c = 0; c < grid_cols; ++c) {
            if (c) os << ',';
            os << counts[r * grid_cols + c];
        }
        os << '\n';
    }
}

BalanceGrid balance_grid(const Bitset& mask, const Shape& shape, std::size_t band_rows,
                         std::size_t band_cols) {
    if (band_rows < 1 || band_cols < 1) throw ValidationError("band sizes must be >= 1");
    const auto cols = static_cast<std::size_t>(row_length(shape));
    const auto rows = static_cast<std::size_t>(row_count(shape));
    if (rows == 0 || cols == 0) throw ValidationError("cannot band an empty tensor");
    if (mask.size() != rows * cols) throw ValidationError("mask does not match shape");
    if (band_rows > rows || band_cols > cols)
        throw ValidationError("band is larger than the tensor");

    BalanceGrid g;
    g.band_rows = band_rows;
    g.band_cols = band_cols;
    g.grid_rows = (rows + band_rows - 1) / band_rows;
    g.grid_cols = (cols + band_cols - 1) / band_cols;
    g.counts.assign(g.grid_rows * g.grid_cols, 0);

    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t gr = r / band_rows;
        for (std::size_t c = 0; c < cols; ++c) {
            if (mask.test(r * cols + c)) ++g.counts[gr * g.grid_cols + c / band_cols];
        }
    }

    double sum = 0.0;
    for (auto c : g.counts) sum += static_cast<double>(c);
    g.mean = sum / static_cast<double>(g.counts.size());
    double var = 0.0;
    for (auto c : g.counts) {
        const double d = static_cast<double>(c) - g.mean;
        var += d * d;
    }
    g.variance = var / static_cast<double>(g.counts.size());
    g.cv = g.mean > 0.0 ? std::sqrt(g.variance) / g.mean : 0.0;
    return g;
}

OrthoReport ortho_check(std::span<const ArrayXf* const> masked_vectors,
                        std::span<const double> lambdas) {
    const std::size_t k = masked_vectors.size();
    if (k < 2) throw ValidationError("orthogonality check needs at least two vectors");
    if (lambdas.size() != k) throw ValidationError("need one scaling coefficient per vector");
    const Eigen::Index n = masked_vectors.front()->size();
    for (const auto* v : masked_vectors)
        if (v->size() != n) throw ValidationError("orthogonality check: size mismatch");

    OrthoReport r;
    r.scaled_sq_norms.resize(k);
    r.inners.assign(k, std::vector<double>(k, 0.0));

    ArrayXf combined = ArrayXf::Zero(n);
    for (std::size_t i = 0; i < k; ++i)
        add_scaled(combined, *masked_vectors[i], static_cast<float>(lambdas[i]));
    r.combined_sq_norm = squared_frobenius_norm(combined);

    for (std::size_t i = 0; i < k; ++i) {
        ArrayXf scaled = *masked_vectors[i] * static_cast<float>(lambdas[i]);
        r.scaled_sq_norms[i] = squared_frobenius_norm(scaled);
        for (std::size_t j = 0; j < k; ++j)
            r.inners[i][j] = frobenius_inner(*masked_vectors[i], *masked_vectors[j]);
    }

    double expected = 0.0;
    for (std::size_t i = 0; i < k; ++i) expected += r.scaled_sq_norms[i];
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            expected += 2.0 * lambdas[i] * lambdas[j] * r.inners[i][j];

    r.residual = r.combined_sq_norm - expected;
    const double scale = std::max(r.combined_sq_norm, 1e-30);
    r.relative_residual = std::fabs(r.residual) / scale;
    return r;
}

std::pair<ArrayXf, ArrayXf> make_correlated_pair(std::size_t n, double sigma, std::uint64_t seed) {
    SplitMix64 rng(seed);
    ArrayXf a(static_cast<Eigen::Index>(n));
    ArrayXf b(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.next_gaussian();
        const double noise = rng.next_gaussian();
        a[static_cast<Eigen::Index>(i)] = static_cast<float>(x);
        b[static_cast<Eigen::Index>(i)] = static_cast<float>(x + sigma * noise);
    }
    return {std::move(a), std::move(b)};
}

}  // namespace tvmerge
