#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tvmerge/dtype.hpp"
#include "tvmerge/tensor.hpp"

namespace tvmerge {

// Container layout: 8-byte little-endian header length, UTF-8 JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then the raw
// little-endian data region. Offsets are relative to the data region and
// must tile it contiguously in header order.

struct TensorMeta {
    std::string name;
    Dtype dtype = Dtype::Other;
    std::string dtype_str;
    Shape shape;
    std::uint64_t begin = 0;  // offsets within the data region
    std::uint64_t end = 0;
    std::size_t elem_size = 0;

    std::int64_t numel() const { return shape_numel(shape); }
    std::uint64_t nbytes() const { return end - begin; }
    bool is_arithmetic() const { return dtype_is_arithmetic(dtype); }
};

// Read-only handle over a checkpoint file. Tensor bytes are memory-mapped
// and materialized only when read, so holding a handle costs O(header).
// Handles are cheap to copy and safe to share across threads for reads.
class Checkpoint {
public:
    Checkpoint() = default;
    static Checkpoint open(const std::string& path);

    const std::string& path() const;
    const std::vector<TensorMeta>& metas() const;
    bool has(std::string_view name) const;
    const TensorMeta* find(std::string_view name) const;
    const TensorMeta& meta(std::string_view name) const;  // throws on unknown name

    // Working values, widened to F32. Arithmetic dtypes only.
    ArrayXf read_f32(const TensorMeta& meta) const;
    ArrayXf read_f32(std::string_view name) const;
    Tensor read_tensor(std::string_view name) const;

    std::span<const std::byte> raw(const TensorMeta& meta) const;
    std::string_view header_json() const;
    std::span<const std::byte> data_region() const;

private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

// Byte-identical copy of an opened checkpoint (header bytes and data region
// are passed through verbatim).
void write_checkpoint_copy(const Checkpoint& src, const std::string& path);

// Streaming writer. Declare every tensor up front (declaration order is file
// order), then append data in the same order. The header is serialized
// compactly and padded with spaces to an 8-byte boundary.
class CheckpointWriter {
public:
    explicit CheckpointWriter(std::string path);
    ~CheckpointWriter();
    CheckpointWriter(const CheckpointWriter&) = delete;
    CheckpointWriter& operator=(const CheckpointWriter&) = delete;

    void declare(std::string name, std::string dtype_str, Shape shape, std::size_t elem_size);
    void declare(std::string name, std::string dtype_str, Shape shape);

    void append_f32(const ConstArrayRef& working);  // narrows to the declared dtype
    void append_raw(std::span<const std::byte> bytes);
    void finish();

private:
    struct Pending {
        std::string name;
        std::string dtype_str;
        Shape shape;
        std::uint64_t begin = 0, end = 0;
    };
    void write_header_if_needed();

    std::string path_;
    std::vector<Pending> pending_;
    std::size_t next_ = 0;
    bool header_written_ = false;
    bool finished_ = false;
    struct FileHandle;
    std::unique_ptr<FileHandle> file_;
};

// Convenience for small in-memory fixtures.
struct NamedTensor {
    std::string name;
    Tensor tensor;
};
void write_tensors(const std::vector<NamedTensor>& tensors, const std::string& path);

}  // namespace tvmerge
