#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fpscreen/fingerprint.hpp"
#include "fpscreen/libstore.hpp"
#include "fpscreen/topk.hpp"

namespace fpscreen {

enum class Kernel { packed, reference };

inline std::string_view to_string(Kernel k) { return k == Kernel::packed ? "packed" : "reference"; }

inline std::optional<Kernel> parse_kernel(std::string_view s) {
    if (s == "packed") return Kernel::packed;
    if (s == "reference") return Kernel::reference;
    return std::nullopt;
}

struct SearchParams {
    std::size_t n = 30;
    std::size_t parallelism = 1;
    Kernel kernel = Kernel::packed;

    void validate() const {
        if (n < 1) throw std::invalid_argument("n must be at least 1");
        if (parallelism < 1) throw std::invalid_argument("parallelism must be at least 1");
    }
};

/// Records per scan block; progress and cancellation are checked per block.
inline constexpr std::size_t kScanBlockRecords = 65536;

class ScanCancelled : public std::runtime_error {
public:
    ScanCancelled() : std::runtime_error("search cancelled") {}
};

/// A shard failed during search; wraps the underlying error with its path.
class ScanError : public std::runtime_error {
public:
    ScanError(std::filesystem::path path, const std::string& message)
        : std::runtime_error(path.string() + ": " + message), path_(std::move(path)) {}

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

using ProgressFn = std::function<void(std::uint64_t records_done)>;
using ShardProgressFn = std::function<void(std::size_t shard_index, std::uint64_t records_done)>;

namespace kernels {

struct Packed {
    Fingerprint query;
    std::uint32_t operator()(const Fingerprint& fp) const noexcept { return distance_packed(fp, query); }
};

struct Reference {
    Fingerprint query;
    std::uint32_t operator()(const Fingerprint& fp) const { return manhattan_reference(fp, query); }
};

struct PackedDistance {
    std::uint32_t operator()(const Fingerprint& a, const Fingerprint& b) const noexcept {
        return distance_packed(a, b);
    }
};

struct ReferenceDistance {
    std::uint32_t operator()(const Fingerprint& a, const Fingerprint& b) const { return manhattan_reference(a, b); }
};

/// Batch scoring: a record's score is its distance to the nearest query.
template <typename Distance>
struct MinOverQueries {
    std::vector<Fingerprint> queries;
    Distance distance;

    std::uint32_t operator()(const Fingerprint& fp) const {
        std::uint32_t best = kMaxDistance + 1;
        for (const auto& q : queries) best = std::min(best, distance(fp, q));
        return best;
    }
};

}  // namespace kernels

/// Scans one shard with `score` and keeps the n best hits.
///
/// Progress fires after every block and once at the end with the final count
/// (also for an empty shard). Cancellation is checked before each block.
template <typename Scorer>
TopK scan_shard_with(const Shard& shard, const Scorer& score, std::size_t n, const ProgressFn& progress = {},
                     std::stop_token stop = {}) {
    ShardReader reader(shard);
    TopKCollector top(n);
    std::vector<std::byte> buffer(kScanBlockRecords * shard_format::kRecordSize);
    std::uint64_t done = 0;
    std::uint32_t threshold = top.threshold();

    for (;;) {
        if (stop.stop_requested()) throw ScanCancelled();
        const auto count = reader.read_raw(buffer);
        if (count == 0) break;
        const std::byte* rec = buffer.data();
        for (std::size_t i = 0; i < count; ++i, rec += shard_format::kRecordSize) {
            const std::uint32_t d = score(shard_format::decode_fingerprint(rec));
            if (d > threshold) continue;
            const std::uint64_t cid = shard_format::decode_cid(rec);
            if (!top.would_enter(d, cid)) continue;
            top.push(cid, d);
            threshold = top.threshold();
        }
        done += count;
        if (progress && done < reader.record_count()) progress(done);
    }
    if (progress) progress(done);
    return top.finish();
}

template <typename Scorer>
TopK scan_shard_with_kernel(const Shard& shard, Kernel kernel, const Scorer& packed, const auto& reference,
                            std::size_t n, const ProgressFn& progress, std::stop_token stop) {
    return kernel == Kernel::packed ? scan_shard_with(shard, packed, n, progress, stop)
                                    : scan_shard_with(shard, reference, n, progress, stop);
}

inline TopK scan_shard(const Shard& shard, const Fingerprint& query, const SearchParams& params,
                       const ProgressFn& progress = {}, std::stop_token stop = {}) {
    params.validate();
    return scan_shard_with_kernel(shard, params.kernel, kernels::Packed{query}, kernels::Reference{query}, params.n,
                                  progress, stop);
}

namespace detail {

/// Runs `scan_one(shard_index, stop)` for every shard on up to `parallelism`
/// workers pulling from a shared work list, then merges in shard order.
template <typename ScanOne>
TopK scan_all(const ShardManifest& manifest, std::size_t n, std::size_t parallelism, ScanOne&& scan_one,
              std::stop_token external) {
    const std::size_t shard_count = manifest.shards.size();
    std::vector<TopK> parts(shard_count);
    std::atomic<std::size_t> next{0};
    std::stop_source abort;
    std::stop_callback forward(external, [&] { abort.request_stop(); });
    std::mutex failure_mutex;
    std::exception_ptr failure;

    auto worker = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= shard_count) return;
            try {
                parts[i] = scan_one(i, abort.get_token());
            } catch (const ScanCancelled&) {
                abort.request_stop();
                return;
            } catch (const std::exception& e) {
                {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::make_exception_ptr(ScanError(manifest.shards[i].path, e.what()));
                }
                abort.request_stop();
                return;
            }
        }
    };

    const std::size_t workers = std::min(std::max<std::size_t>(parallelism, 1), std::max<std::size_t>(shard_count, 1));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> threads;
        threads.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    if (abort.stop_requested()) throw ScanCancelled();
    return merge_topk(parts, n);
}

}  // namespace detail

/// Top-n nearest records to `query` over every shard of the library.
/// The result does not depend on parallelism or shard completion order.
inline TopK search(const ShardManifest& manifest, const Fingerprint& query, const SearchParams& params,
                   const ShardProgressFn& progress = {}, std::stop_token stop = {}) {
    params.validate();
    return detail::scan_all(
        manifest, params.n, params.parallelism,
        [&](std::size_t i, std::stop_token token) {
            ProgressFn shard_progress;
            if (progress) shard_progress = [&progress, i](std::uint64_t done) { progress(i, done); };
            return scan_shard(manifest.shards[i], query, params, shard_progress, token);
        },
        stop);
}

/// Scores each record by its distance to the nearest of `queries`.
inline TopK batch_search(const ShardManifest& manifest, std::span<const Fingerprint> queries,
                         const SearchParams& params, const ShardProgressFn& progress = {},
                         std::stop_token stop = {}) {
    params.validate();
    if (queries.empty()) throw std::invalid_argument("batch search needs at least one query");
    const std::vector<Fingerprint> qs(queries.begin(), queries.end());
    const kernels::MinOverQueries<kernels::PackedDistance> packed{qs, {}};
    const kernels::MinOverQueries<kernels::ReferenceDistance> reference{qs, {}};
    return detail::scan_all(
        manifest, params.n, params.parallelism,
        [&](std::size_t i, std::stop_token token) {
            ProgressFn shard_progress;
            if (progress) shard_progress = [&progress, i](std::uint64_t done) { progress(i, done); };
            return scan_shard_with_kernel(manifest.shards[i], params.kernel, packed, reference, params.n,
                                          shard_progress, token);
        },
        stop);
}

}  // namespace fpscreen
