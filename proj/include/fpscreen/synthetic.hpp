#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <random>

#include "fpscreen/fingerprint.hpp"
#include "fpscreen/libstore.hpp"

namespace fpscreen {

/// Seeded synthetic corpus: CIDs 1..count, each key set with probability 1/4
/// (the AND of two uniform 64-bit draws per word).
class SyntheticCorpus {
public:
    explicit SyntheticCorpus(std::uint64_t seed) : rng_(seed) {}

    Fingerprint next_fingerprint() {
        std::array<std::uint64_t, kWordCount> w;
        for (auto& x : w) {
            const auto a = rng_();
            x = a & rng_();
        }
        return Fingerprint::from_words(w);
    }

    LibraryRecord next() { return {++cid_, next_fingerprint()}; }

private:
    std::mt19937_64 rng_;
    std::uint64_t cid_ = 0;
};

inline void write_synthetic_text(std::ostream& out, std::uint64_t count, std::uint64_t seed) {
    SyntheticCorpus corpus(seed);
    for (std::uint64_t i = 0; i < count; ++i) out << write_library_line(corpus.next()) << '\n';
}

/// Writes a sharded synthetic library directly, without a text stage.
inline ShardManifest build_synthetic_library(std::uint64_t count, std::uint64_t seed, std::size_t shard_count,
                                             const std::filesystem::path& out_dir) {
    SyntheticCorpus corpus(seed);
    std::uint64_t produced = 0;
    auto source = [&](std::span<std::byte> buffer) -> std::size_t {
        const auto n = std::min<std::uint64_t>(buffer.size() / shard_format::kRecordSize, count - produced);
        for (std::size_t i = 0; i < n; ++i) {
            shard_format::encode_record(
                corpus.next(), std::span<std::byte, shard_format::kRecordSize>(
                                   buffer.data() + i * shard_format::kRecordSize, shard_format::kRecordSize));
        }
        produced += n;
        return static_cast<std::size_t>(n);
    };
    return write_shards(source, count, shard_count, out_dir);
}

}  // namespace fpscreen
