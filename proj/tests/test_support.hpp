#pragma once

// Test-only helpers and brute-force oracles. Nothing here goes through the
// packed kernel, the bounded heap or the shard scanner.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpscreen/fingerprint.hpp"
#include "fpscreen/libstore.hpp"

namespace fpscreen::testing {

/// Each key set independently with probability `density`.
inline Fingerprint random_fingerprint(std::mt19937_64& rng, double density = 0.5) {
    std::bernoulli_distribution bit(density);
    Fingerprint fp;
    for (std::size_t key = 1; key <= kKeyCount; ++key)
        if (bit(rng)) fp.set(key);
    return fp;
}

inline std::string random_bitstring(std::mt19937_64& rng, std::size_t length = kKeyCount) {
    std::string s(length, '0');
    for (auto& c : s) c = (rng() & 1u) ? '1' : '0';
    return s;
}

/// Records with CIDs first_cid, first_cid+1, ... in a shuffled order so that
/// file order and CID order disagree.
inline std::vector<LibraryRecord> random_records(std::size_t count, std::uint64_t seed, double density = 0.25,
                                                 std::uint64_t first_cid = 1) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> cids(count);
    for (std::size_t i = 0; i < count; ++i) cids[i] = first_cid + i;
    std::shuffle(cids.begin(), cids.end(), rng);
    std::vector<LibraryRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back({cids[i], random_fingerprint(rng, density)});
    return out;
}

inline std::set<std::size_t> key_set(const Fingerprint& fp) {
    std::set<std::size_t> keys;
    for (std::size_t key = 1; key <= kKeyCount; ++key)
        if (fp.test(key)) keys.insert(key);
    return keys;
}

/// |A symmetric-difference B| computed on explicit key sets.
inline std::uint32_t set_distance(const Fingerprint& a, const Fingerprint& b) {
    const auto x = key_set(a);
    const auto y = key_set(b);
    std::vector<std::size_t> diff;
    std::set_symmetric_difference(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(diff));
    return static_cast<std::uint32_t>(diff.size());
}

/// Full-sort oracle: every (cid, distance) materialized, stable-sorted by
/// (distance, cid), truncated to n. Distances use the set-based count.
inline std::vector<std::pair<std::uint64_t, std::uint32_t>> oracle_topk(std::span<const LibraryRecord> records,
                                                                        std::span<const Fingerprint> queries,
                                                                        std::size_t n) {
    std::vector<std::pair<std::uint64_t, std::uint32_t>> all;
    all.reserve(records.size());
    for (const auto& rec : records) {
        std::uint32_t best = 1000;
        for (const auto& q : queries) best = std::min(best, set_distance(rec.fp, q));
        all.emplace_back(rec.cid, best);
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    if (all.size() > n) all.resize(n);
    return all;
}

/// Faster oracle for large fixtures: unpacks both sides key by key.
inline std::vector<std::pair<std::uint64_t, std::uint32_t>> oracle_topk_fast(std::span<const LibraryRecord> records,
                                                                             std::span<const Fingerprint> queries,
                                                                             std::size_t n) {
    std::vector<std::pair<std::uint64_t, std::uint32_t>> all;
    all.reserve(records.size());
    for (const auto& rec : records) {
        std::uint32_t best = 1000;
        for (const auto& q : queries) {
            std::uint32_t d = 0;
            for (std::size_t key = 1; key <= kKeyCount; ++key) d += rec.fp.test(key) != q.test(key);
            best = std::min(best, d);
        }
        all.emplace_back(rec.cid, best);
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    if (all.size() > n) all.resize(n);
    return all;
}

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("fpscreen-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace fpscreen::testing
