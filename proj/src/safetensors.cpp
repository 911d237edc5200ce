#include "tvmerge/safetensors.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "tvmerge/errors.hpp"

namespace tvmerge {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kMaxHeaderBytes = 256ull * 1024 * 1024;

std::uint64_t load_le64(const std::byte* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::to_integer<std::uint64_t>(p[i]);
    return v;
}

void store_le64(std::uint64_t v, unsigned char out[8]) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

struct Mapping {
    const std::byte* data = nullptr;
    std::size_t len = 0;

    explicit Mapping(const std::string& path) {
        int fd = ::open(path.c_str(), O_RDONLY);
        if (fd < 0) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
        struct stat st {};
        if (::fstat(fd, &st) != 0) {
            int err = errno;
            ::close(fd);
            throw IoError("cannot stat '" + path + "': " + std::strerror(err));
        }
        len = static_cast<std::size_t>(st.st_size);
        if (len > 0) {
            void* p = ::mmap(nullptr, len, PROT_READ, MAP_PRIVATE, fd, 0);
            if (p == MAP_FAILED) {
                int err = errno;
                ::close(fd);
                throw IoError("cannot mmap '" + path + "': " + std::strerror(err));
            }
            data = static_cast<const std::byte*>(p);
        }
        ::close(fd);
    }

    ~Mapping() {
        if (data) ::munmap(const_cast<std::byte*>(static_cast<const std::byte*>(data)), len);
    }

    Mapping(const Mapping&) = delete;
    Mapping& operator=(const Mapping&) = delete;
};

}  // namespace

struct Checkpoint::Impl {
    std::string path;
    std::unique_ptr<Mapping> map;
    std::string header;  // exact header bytes, kept for byte-identical copies
    std::uint64_t data_offset = 0;
    std::uint64_t data_size = 0;
    std::vector<TensorMeta> metas;
    std::unordered_map<std::string, std::size_t> index;
};

Checkpoint Checkpoint::open(const std::string& path) {
    auto impl = std::make_shared<Impl>();
    impl->path = path;
    impl->map = std::make_unique<Mapping>(path);
    const Mapping& map = *impl->map;

    if (map.len < 8) throw IoError("'" + path + "': file too short for a container header");
    const std::uint64_t header_len = load_le64(map.data);
    if (header_len > kMaxHeaderBytes) throw IoError("'" + path + "': implausible header length");
    if (header_len > map.len - 8) throw IoError("'" + path + "': header length exceeds file size");

    impl->header.assign(reinterpret_cast<const char*>(map.data + 8), header_len);
    impl->data_offset = 8 + header_len;
    impl->data_size = map.len - impl->data_offset;

    // Track duplicate top-level keys during the parse; the DOM silently
    // collapses them.
    std::vector<std::string> top_keys;
    ordered_json::parser_callback_t cb = [&](int depth, ordered_json::parse_event_t ev, ordered_json& val) {
        if (ev == ordered_json::parse_event_t::key && depth == 1)
            top_keys.push_back(val.get<std::string>());
        return true;
    };
    ordered_json header;
    try {
        header = ordered_json::parse(impl->header, cb);
    } catch (const std::exception& e) {
        throw IoError("'" + path + "': malformed header: " + e.what());
    }
    if (!header.is_object()) throw IoError("'" + path + "': header is not a JSON object");
    {
        std::unordered_map<std::string, int> seen;
        for (const auto& k : top_keys)
            if (++seen[k] == 2) throw IoError("'" + path + "': duplicate tensor name '" + k + "'");
    }

    std::uint64_t cursor = 0;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") {
            if (!it.value().is_object())
                throw IoError("'" + path + "': __metadata__ is not an object");
            continue;
        }
        const ordered_json& entry = it.value();
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            throw IoError("'" + path + "': malformed entry for tensor '" + it.key() + "'");

        TensorMeta meta;
        meta.name = it.key();
        if (!entry["dtype"].is_string())
            throw IoError("'" + path + "': tensor '" + meta.name + "': dtype is not a string");
        meta.dtype_str = entry["dtype"].get<std::string>();
        meta.dtype = dtype_from_string(meta.dtype_str);

        if (!entry["shape"].is_array())
            throw IoError("'" + path + "': tensor '" + meta.name + "': shape is not an array");
        std::int64_t numel_check = 1;
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
                throw IoError("'" + path + "': tensor '" + meta.name + "': bad shape entry");
            const std::int64_t dim = d.get<std::int64_t>();
            if (__builtin_mul_overflow(numel_check, dim, &numel_check))
                throw IoError("'" + path + "': tensor '" + meta.name + "': shape overflows");
            meta.shape.push_back(dim);
        }

        const auto& offs = entry["data_offsets"];
        if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() ||
            !offs[1].is_number_unsigned())
            throw IoError("'" + path + "': tensor '" + meta.name + "': bad data_offsets");
        meta.begin = offs[0].get<std::uint64_t>();
        meta.end = offs[1].get<std::uint64_t>();
        if (meta.begin > meta.end)
            throw IoError("'" + path + "': tensor '" + meta.name + "': reversed data_offsets");
        if (meta.end > impl->data_size)
            throw IoError("'" + path + "': tensor '" + meta.name + "': data region truncated");
        if (meta.begin != cursor)
            throw IoError("'" + path + "': tensor '" + meta.name + "': offsets are not contiguous");
        cursor = meta.end;

        const std::int64_t n = meta.numel();
        const std::size_t width = dtype_width(meta.dtype_str);
        if (width > 0) {
            if (meta.nbytes() != static_cast<std::uint64_t>(n) * width)
                throw IoError("'" + path + "': tensor '" + meta.name +
                              "': byte range does not match shape and dtype");
            meta.elem_size = width;
        } else if (n > 0) {
            if (meta.nbytes() % static_cast<std::uint64_t>(n) != 0)
                throw IoError("'" + path + "': tensor '" + meta.name +
                              "': byte range does not divide evenly by element count");
            meta.elem_size = meta.nbytes() / static_cast<std::uint64_t>(n);
        } else if (meta.nbytes() != 0) {
            throw IoError("'" + path + "': tensor '" + meta.name + "': empty tensor with data bytes");
        }

        impl->index.emplace(meta.name, impl->metas.size());
        impl->metas.push_back(std::move(meta));
    }
    if (cursor != impl->data_size)
        throw IoError("'" + path + "': data region has trailing bytes not covered by the header");

    Checkpoint ckpt;
    ckpt.impl_ = std::move(impl);
    return ckpt;
}

const std::string& Checkpoint::path() const { return impl_->path; }
const std::vector<TensorMeta>& Checkpoint::metas() const { return impl_->metas; }

bool Checkpoint::has(std::string_view name) const {
    return impl_->index.count(std::string(name)) > 0;
}

const TensorMeta* Checkpoint::find(std::string_view name) const {
    auto it = impl_->index.find(std::string(name));
    return it == impl_->index.end() ? nullptr : &impl_->metas[it->second];
}

const TensorMeta& Checkpoint::meta(std::string_view name) const {
    const TensorMeta* m = find(name);
    if (!m) throw ValidationError("unknown tensor name '" + std::string(name) + "' in '" + impl_->path + "'");
    return *m;
}

std::span<const std::byte> Checkpoint::raw(const TensorMeta& meta) const {
    return {impl_->map->data + impl_->data_offset + meta.begin, meta.nbytes()};
}

ArrayXf Checkpoint::read_f32(const TensorMeta& meta) const {
    if (!meta.is_arithmetic())
        throw ValidationError("tensor '" + meta.name + "' has non-arithmetic dtype '" +
                              meta.dtype_str + "'");
    const std::int64_t n = meta.numel();
    ArrayXf out(n);
    const std::byte* src = impl_->map->data + impl_->data_offset + meta.begin;
    switch (meta.dtype) {
        case Dtype::F32:
            std::memcpy(out.data(), src, static_cast<std::size_t>(n) * 4);
            break;
        case Dtype::F16:
            for (std::int64_t i = 0; i < n; ++i) {
                std::uint16_t h;  // foreign headers need not 8-align the data region
                std::memcpy(&h, src + 2 * i, 2);
                out[i] = f16_to_f32(h);
            }
            break;
        case Dtype::BF16:
            for (std::int64_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, src + 2 * i, 2);
                out[i] = bf16_to_f32(h);
            }
            break;
        default:
            throw InternalError("unreachable dtype");
    }
    return out;
}

ArrayXf Checkpoint::read_f32(std::string_view name) const { return read_f32(meta(name)); }

Tensor Checkpoint::read_tensor(std::string_view name) const {
    const TensorMeta& m = meta(name);
    return Tensor{m.shape, m.dtype, m.dtype_str, read_f32(m)};
}

std::string_view Checkpoint::header_json() const { return impl_->header; }

std::span<const std::byte> Checkpoint::data_region() const {
    return {impl_->map->data + impl_->data_offset, impl_->data_size};
}

// ---------------------------------------------------------------------------
// writing

struct CheckpointWriter::FileHandle {
    std::FILE* f = nullptr;
    ~FileHandle() {
        if (f) std::fclose(f);
    }
};

namespace {
void fwrite_checked(const void* data, std::size_t nbytes, std::FILE* f, const std::string& path) {
    if (nbytes == 0) return;
    if (std::fwrite(data, 1, nbytes, f) != nbytes)
        throw IoError("write failed for '" + path + "'");
}
}  // namespace

void write_checkpoint_copy(const Checkpoint& src, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot create '" + path + "': " + std::strerror(errno));
    try {
        unsigned char prefix[8];
        store_le64(src.header_json().size(), prefix);
        fwrite_checked(prefix, 8, f, path);
        fwrite_checked(src.header_json().data(), src.header_json().size(), f, path);
        auto data = src.data_region();
        fwrite_checked(data.data(), data.size(), f, path);
        if (std::fclose(f) != 0) throw IoError("close failed for '" + path + "'");
    } catch (...) {
        std::fclose(f);
        throw;
    }
}

CheckpointWriter::CheckpointWriter(std::string path) : path_(std::move(path)) {
    file_ = std::make_unique<FileHandle>();
    file_->f = std::fopen(path_.c_str(), "wb");
    if (!file_->f) throw IoError("cannot create '" + path_ + "': " + std::strerror(errno));
}

CheckpointWriter::~CheckpointWriter() = default;

void CheckpointWriter::declare(std::string name, std::string dtype_str, Shape shape,
                               std::size_t elem_size) {
    if (header_written_) throw InternalError("declare after data was appended");
    if (name.empty() || name == "__metadata__")
        throw ValidationError("invalid tensor name '" + name + "'");
    for (const auto& p : pending_)
        if (p.name == name) throw ValidationError("duplicate tensor name '" + name + "'");
    for (auto d : shape)
        if (d < 0) throw ValidationError("negative dimension for tensor '" + name + "'");

    Pending p;
    p.name = std::move(name);
    p.dtype_str = std::move(dtype_str);
    p.shape = std::move(shape);
    const std::uint64_t prev_end = pending_.empty() ? 0 : pending_.back().end;
    p.begin = prev_end;
    p.end = prev_end + static_cast<std::uint64_t>(shape_numel(p.shape)) * elem_size;
    pending_.push_back(std::move(p));
}

void CheckpointWriter::declare(std::string name, std::string dtype_str, Shape shape) {
    const std::size_t width = dtype_width(dtype_str);
    if (width == 0)
        throw ValidationError("unknown dtype '" + dtype_str + "' needs an explicit element size");
    declare(std::move(name), std::move(dtype_str), std::move(shape), width);
}

void CheckpointWriter::write_header_if_needed() {
    if (header_written_) return;
    ordered_json header = ordered_json::object();
    for (const auto& p : pending_) {
        ordered_json entry;
        entry["dtype"] = p.dtype_str;
        entry["shape"] = p.shape;
        entry["data_offsets"] = {p.begin, p.end};
        header[p.name] = std::move(entry);
    }
    std::string text = header.dump();
    while (text.size() % 8 != 0) text.push_back(' ');

    unsigned char prefix[8];
    store_le64(text.size(), prefix);
    fwrite_checked(prefix, 8, file_->f, path_);
    fwrite_checked(text.data(), text.size(), file_->f, path_);
    header_written_ = true;
}

void CheckpointWriter::append_raw(std::span<const std::byte> bytes) {
    write_header_if_needed();
    if (next_ >= pending_.size()) throw InternalError("append past the declared tensor list");
    const Pending& p = pending_[next_];
    if (bytes.size() != p.end - p.begin)
        throw ValidationError("tensor '" + p.name + "': appended " + std::to_string(bytes.size()) +
                              " bytes, declared " + std::to_string(p.end - p.begin));
    fwrite_checked(bytes.data(), bytes.size(), file_->f, path_);
    ++next_;
}

void CheckpointWriter::append_f32(const ConstArrayRef& working) {
    write_header_if_needed();
    if (next_ >= pending_.size()) throw InternalError("append past the declared tensor list");
    const Pending& p = pending_[next_];
    const std::int64_t n = shape_numel(p.shape);
    if (working.size() != n)
        throw ValidationError("tensor '" + p.name + "': value count " +
                              std::to_string(working.size()) + " does not match shape");
    const Dtype dtype = dtype_from_string(p.dtype_str);
    switch (dtype) {
        case Dtype::F32:
            fwrite_checked(working.data(), static_cast<std::size_t>(n) * 4, file_->f, path_);
            break;
        case Dtype::F16: {
            std::vector<std::uint16_t> buf(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) buf[i] = f32_to_f16(working[i]);
            fwrite_checked(buf.data(), buf.size() * 2, file_->f, path_);
            break;
        }
        case Dtype::BF16: {
            std::vector<std::uint16_t> buf(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) buf[i] = f32_to_bf16(working[i]);
            fwrite_checked(buf.data(), buf.size() * 2, file_->f, path_);
            break;
        }
        default:
            throw ValidationError("tensor '" + p.name + "': cannot narrow F32 values to dtype '" +
                                  p.dtype_str + "'");
    }
    ++next_;
}

void CheckpointWriter::finish() {
    write_header_if_needed();
    if (next_ != pending_.size())
        throw InternalError("finish called before all declared tensors were appended");
    if (std::fclose(file_->f) != 0) {
        file_->f = nullptr;
        throw IoError("close failed for '" + path_ + "'");
    }
    file_->f = nullptr;
    finished_ = true;
}

void write_tensors(const std::vector<NamedTensor>& tensors, const std::string& path) {
    CheckpointWriter w(path);
    for (const auto& t : tensors) w.declare(t.name, t.tensor.dtype_str, t.tensor.shape);
    for (const auto& t : tensors) w.append_f32(t.tensor.values);
    w.finish();
}

}  // namespace tvmerge
