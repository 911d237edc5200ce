#pragma once

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tvmerge/rng.hpp"
#include "tvmerge/safetensors.hpp"
#include "tvmerge/tensor.hpp"

namespace testutil {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag = "tvmerge-test") {
        path_ = fs::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    fs::path path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline bool files_equal(const std::string& a, const std::string& b) {
    return read_file(a) == read_file(b);
}

// Hand-built container file: 8-byte LE length + header text + data bytes.
inline std::string container_bytes(const std::string& header, const std::string& data) {
    std::string out;
    const std::uint64_t len = header.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    out += header;
    out += data;
    return out;
}

inline std::string le_f32(float v) {
    std::string out(4, '\0');
    std::memcpy(out.data(), &v, 4);
    return out;
}

// Dyadic values (multiples of 1/64 in [-2, 2]): sums and small scalings stay
// exact in F32, so merge-algebra checks can demand bit equality.
inline tvmerge::ArrayXf dyadic_values(std::size_t n, std::uint64_t seed) {
    tvmerge::SplitMix64 rng(seed);
    tvmerge::ArrayXf out(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto ticks = static_cast<std::int64_t>(rng.bounded(257)) - 128;  // [-128, 128]
        out[static_cast<Eigen::Index>(i)] = static_cast<float>(ticks) / 64.0f;
    }
    return out;
}

inline tvmerge::ArrayXf gaussian_values(std::size_t n, std::uint64_t seed) {
    tvmerge::SplitMix64 rng(seed);
    tvmerge::ArrayXf out(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        out[static_cast<Eigen::Index>(i)] = static_cast<float>(rng.next_gaussian());
    return out;
}

inline tvmerge::Tensor f32_tensor(tvmerge::Shape shape, tvmerge::ArrayXf values) {
    tvmerge::Tensor t;
    t.shape = std::move(shape);
    t.dtype = tvmerge::Dtype::F32;
    t.dtype_str = "F32";
    t.values = std::move(values);
    return t;
}

// base + k fine-tuned variants over the same tensor set, dyadic everywhere.
struct SyntheticModel {
    std::string base_path;
    std::vector<std::string> ft_paths;
};

inline SyntheticModel make_model(const TempDir& dir, std::size_t k, std::uint64_t seed,
                                 const std::vector<std::pair<std::string, tvmerge::Shape>>& layout) {
    SyntheticModel model;
    std::vector<tvmerge::NamedTensor> base;
    for (const auto& [name, shape] : layout) {
        const auto n = static_cast<std::size_t>(tvmerge::shape_numel(shape));
        base.push_back({name, f32_tensor(shape, dyadic_values(n, seed ^ tvmerge::fnv1a64(name)))});
    }
    model.base_path = dir.file("base.safetensors");
    tvmerge::write_tensors(base, model.base_path);

    for (std::size_t v = 0; v < k; ++v) {
        std::vector<tvmerge::NamedTensor> ft = base;
        for (auto& t : ft) {
            const auto n = static_cast<std::size_t>(t.tensor.values.size());
            t.tensor.values += dyadic_values(n, seed * 31 + v * 1009 + tvmerge::fnv1a64(t.name));
        }
        model.ft_paths.push_back(dir.file("ft" + std::to_string(v) + ".safetensors"));
        tvmerge::write_tensors(ft, model.ft_paths[v]);
    }
    return model;
}

}  // namespace testutil
