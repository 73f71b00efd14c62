#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fpscreen {

/// Number of MACCS structural keys.
inline constexpr std::size_t kKeyCount = 166;
inline constexpr std::size_t kWordCount = 3;
inline constexpr std::uint32_t kMaxDistance = kKeyCount;

enum class BitstringErrc { wrong_length, invalid_character };

class BitstringError : public std::runtime_error {
public:
    BitstringError(BitstringErrc code, std::size_t position, const std::string& what)
        : std::runtime_error(what), code_(code), position_(position) {}

    BitstringErrc code() const noexcept { return code_; }
    /// Offending character index, or the observed length for wrong_length.
    std::size_t position() const noexcept { return position_; }

private:
    BitstringErrc code_;
    std::size_t position_;
};

/// 166 MACCS keys packed into three little-endian 64-bit words.
///
/// Key j (1-based) lives in word (j-1)/64 at bit (j-1)%64. Bits 166..191 are
/// padding and are always zero; every mutator preserves that.
class Fingerprint {
public:
    using Words = std::array<std::uint64_t, kWordCount>;

    /// Mask of the valid key bits in the last word (keys 129..166).
    static constexpr std::uint64_t kLastWordMask = (std::uint64_t{1} << (kKeyCount - 128)) - 1;

    constexpr Fingerprint() noexcept = default;

    /// Padding bits in `words` are cleared.
    static constexpr Fingerprint from_words(const Words& words) noexcept {
        Fingerprint fp;
        fp.words_ = words;
        fp.words_[2] &= kLastWordMask;
        return fp;
    }

    static Fingerprint from_keys(std::initializer_list<std::size_t> keys) {
        Fingerprint fp;
        for (auto key : keys) fp.set(key);
        return fp;
    }

    static constexpr Fingerprint all_ones() noexcept {
        return from_words({~std::uint64_t{0}, ~std::uint64_t{0}, ~std::uint64_t{0}});
    }

    constexpr const Words& words() const noexcept { return words_; }

    /// `key` is 1-based; out-of-range keys throw std::out_of_range.
    constexpr bool test(std::size_t key) const {
        check_key(key);
        return (words_[(key - 1) / 64] >> ((key - 1) % 64)) & 1u;
    }

    constexpr void set(std::size_t key, bool value = true) {
        check_key(key);
        const std::uint64_t bit = std::uint64_t{1} << ((key - 1) % 64);
        if (value)
            words_[(key - 1) / 64] |= bit;
        else
            words_[(key - 1) / 64] &= ~bit;
    }

    constexpr std::uint32_t popcount() const noexcept {
        return static_cast<std::uint32_t>(std::popcount(words_[0]) + std::popcount(words_[1]) +
                                          std::popcount(words_[2]));
    }

    constexpr bool empty() const noexcept { return (words_[0] | words_[1] | words_[2]) == 0; }

    constexpr Fingerprint operator|(const Fingerprint& other) const noexcept {
        return from_words({words_[0] | other.words_[0], words_[1] | other.words_[1],
                           words_[2] | other.words_[2]});
    }

    friend constexpr bool operator==(const Fingerprint&, const Fingerprint&) noexcept = default;

private:
    static constexpr void check_key(std::size_t key) {
        if (key < 1 || key > kKeyCount) throw std::out_of_range("MACCS key index out of range 1..166");
    }

    Words words_{};
};

/// Parses the canonical '0'/'1' text form.
///
/// 166 characters map character i to key i+1. A 167-character string is the
/// common toolkit layout with an unused leading bit 0; that character is
/// dropped and character i maps to key i.
inline Fingerprint parse_bitstring(std::string_view text) {
    if (text.size() != kKeyCount && text.size() != kKeyCount + 1) {
        throw BitstringError(BitstringErrc::wrong_length, text.size(),
                             "fingerprint bitstring must have 166 or 167 characters, got " +
                                 std::to_string(text.size()));
    }
    const std::size_t offset = text.size() - kKeyCount;
    Fingerprint::Words words{};
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '0' && c != '1') {
            throw BitstringError(BitstringErrc::invalid_character, i,
                                 "invalid character in fingerprint bitstring at position " +
                                     std::to_string(i));
        }
        if (i < offset || c == '0') continue;
        const std::size_t bit = i - offset;
        words[bit / 64] |= std::uint64_t{1} << (bit % 64);
    }
    return Fingerprint::from_words(words);
}

inline std::string to_bitstring(const Fingerprint& fp) {
    std::string out(kKeyCount, '0');
    const auto& words = fp.words();
    for (std::size_t bit = 0; bit < kKeyCount; ++bit) {
        if ((words[bit / 64] >> (bit % 64)) & 1u) out[bit] = '1';
    }
    return out;
}

/// Key-by-key Manhattan distance over unpacked 0/1 values. Slow on purpose:
/// this is the literal formula and serves as the oracle for the packed kernel.
inline std::uint32_t manhattan_reference(const Fingerprint& a, const Fingerprint& b) {
    std::int32_t sum = 0;
    for (std::size_t key = 1; key <= kKeyCount; ++key) {
        const std::int32_t aj = a.test(key) ? 1 : 0;
        const std::int32_t bj = b.test(key) ? 1 : 0;
        sum += aj > bj ? aj - bj : bj - aj;
    }
    return static_cast<std::uint32_t>(sum);
}

/// Manhattan distance on binary vectors equals Hamming distance: popcount of XOR.
inline constexpr std::uint32_t distance_packed(const Fingerprint& a, const Fingerprint& b) noexcept {
    const auto& x = a.words();
    const auto& y = b.words();
    return static_cast<std::uint32_t>(std::popcount(x[0] ^ y[0]) + std::popcount(x[1] ^ y[1]) +
                                      std::popcount(x[2] ^ y[2]));
}

/// Library rows as a matrix of fingerprints with a parallel CID column.
class FingerprintMatrix {
public:
    FingerprintMatrix() = default;

    FingerprintMatrix(std::vector<std::uint64_t> cids, std::vector<Fingerprint> rows)
        : cids_(std::move(cids)), rows_(std::move(rows)) {
        if (cids_.size() != rows_.size())
            throw std::invalid_argument("FingerprintMatrix: CID and row counts differ");
    }

    void push_back(std::uint64_t cid, const Fingerprint& fp) {
        cids_.push_back(cid);
        rows_.push_back(fp);
    }

    std::size_t size() const noexcept { return rows_.size(); }
    bool empty() const noexcept { return rows_.empty(); }
    std::span<const Fingerprint> rows() const noexcept { return rows_; }
    std::span<const std::uint64_t> row_cids() const noexcept { return cids_; }

private:
    std::vector<std::uint64_t> cids_;
    std::vector<Fingerprint> rows_;
};

/// Row-wise distances of every row of `matrix` to `query`.
///
/// The query is expanded once into a 0/1 vector and subtracted from each
/// unpacked row; the absolute differences of a row are summed into K[i].
/// The difference matrix is fused row by row rather than materialized.
inline std::vector<std::uint32_t> broadcast_distances(const FingerprintMatrix& matrix,
                                                      const Fingerprint& query) {
    std::array<std::int8_t, kKeyCount> b{};
    for (std::size_t j = 0; j < kKeyCount; ++j) b[j] = query.test(j + 1) ? 1 : 0;

    std::vector<std::uint32_t> distances;
    distances.reserve(matrix.size());
    std::array<std::int8_t, kKeyCount> c{};
    for (const auto& row : matrix.rows()) {
        for (std::size_t j = 0; j < kKeyCount; ++j) {
            const std::int8_t a = row.test(j + 1) ? 1 : 0;
            c[j] = static_cast<std::int8_t>(a - b[j]);
        }
        std::uint32_t k = 0;
        for (auto v : c) k += static_cast<std::uint32_t>(v < 0 ? -v : v);
        distances.push_back(k);
    }
    return distances;
}

}  // namespace fpscreen
