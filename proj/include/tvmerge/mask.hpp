#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tvmerge/errors.hpp"

namespace tvmerge {

// Flat bitset over tensor elements, one bit per element in row-major order.
// Bits past size() are kept zero so popcounts can run word-wise.
class Bitset {
public:
    Bitset() = default;
    explicit Bitset(std::size_t nbits, bool all_set = false)
        : nbits_(nbits), words_((nbits + 63) / 64, all_set ? ~std::uint64_t{0} : 0) {
        clear_tail();
    }

    std::size_t size() const { return nbits_; }
    bool empty() const { return nbits_ == 0; }

    bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
    void set(std::size_t i) { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }
    void reset(std::size_t i) { words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63)); }

    std::size_t count() const {
        std::size_t c = 0;
        for (auto w : words_) c += std::popcount(w);
        return c;
    }

    std::size_t count_range(std::size_t begin, std::size_t end) const {
        std::size_t c = 0;
        for (std::size_t i = begin; i < end; ++i) c += test(i);
        return c;
    }

    std::size_t and_count(const Bitset& other) const {
        check_same_size(other);
        std::size_t c = 0;
        for (std::size_t w = 0; w < words_.size(); ++w) c += std::popcount(words_[w] & other.words_[w]);
        return c;
    }

    bool intersects(const Bitset& other) const {
        check_same_size(other);
        for (std::size_t w = 0; w < words_.size(); ++w)
            if (words_[w] & other.words_[w]) return true;
        return false;
    }

    void or_with(const Bitset& other) {
        check_same_size(other);
        for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= other.words_[w];
    }

    bool operator==(const Bitset& other) const {
        return nbits_ == other.nbits_ && words_ == other.words_;
    }

    const std::vector<std::uint64_t>& words() const { return words_; }

    // Flat indices of the set bits, ascending.
    std::vector<std::size_t> set_indices() const {
        std::vector<std::size_t> out;
        out.reserve(count());
        for (std::size_t w = 0; w < words_.size(); ++w) {
            std::uint64_t bits = words_[w];
            while (bits) {
                out.push_back(w * 64 + std::countr_zero(bits));
                bits &= bits - 1;
            }
        }
        return out;
    }

private:
    void clear_tail() {
        if (nbits_ & 63) words_.back() &= (~std::uint64_t{0}) >> (64 - (nbits_ & 63));
    }
    void check_same_size(const Bitset& other) const {
        if (nbits_ != other.nbits_) throw InternalError("bitset size mismatch");
    }

    std::size_t nbits_ = 0;
    std::vector<std::uint64_t> words_;
};

}  // namespace tvmerge
