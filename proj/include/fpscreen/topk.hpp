#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fpscreen {

struct SearchHit {
    std::uint64_t cid = 0;
    std::uint32_t distance = 0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
    /// Distance ascending, then CID ascending.
    friend constexpr std::strong_ordering operator<=>(const SearchHit& a, const SearchHit& b) noexcept {
        if (auto c = a.distance <=> b.distance; c != 0) return c;
        return a.cid <=> b.cid;
    }
};

/// Keeps the `capacity` smallest elements seen under `Less`. top() is the
/// current worst kept element; anything not better than it is rejected in O(1).
template <typename T, typename Less = std::less<T>>
class BoundedMaxHeap {
public:
    explicit BoundedMaxHeap(std::size_t capacity, Less less = Less{}) : capacity_(capacity), less_(less) {
        if (capacity_ == 0) throw std::invalid_argument("top-k capacity must be at least 1");
        data_.reserve(capacity_);
    }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool full() const noexcept { return data_.size() == capacity_; }
    const T& top() const { return data_.front(); }

    bool would_enter(const T& item) const { return !full() || less_(item, data_.front()); }

    bool push(const T& item) {
        if (!full()) {
            data_.push_back(item);
            std::push_heap(data_.begin(), data_.end(), less_);
            return true;
        }
        if (!less_(item, data_.front())) return false;
        std::pop_heap(data_.begin(), data_.end(), less_);
        data_.back() = item;
        std::push_heap(data_.begin(), data_.end(), less_);
        return true;
    }

    /// Kept elements in ascending order; the heap is left empty.
    std::vector<T> take_sorted() {
        std::sort_heap(data_.begin(), data_.end(), less_);
        return std::exchange(data_, {});
    }

private:
    std::size_t capacity_;
    Less less_;
    std::vector<T> data_;
};

enum class TopKErrc { duplicate_cid };

class TopKError : public std::runtime_error {
public:
    TopKError(TopKErrc code, std::uint64_t cid)
        : std::runtime_error("CID " + std::to_string(cid) + " appears in more than one result part"),
          code_(code),
          cid_(cid) {}

    TopKErrc code() const noexcept { return code_; }
    std::uint64_t cid() const noexcept { return cid_; }

private:
    TopKErrc code_;
    std::uint64_t cid_;
};

/// The N best hits, sorted by the SearchHit order.
struct TopK {
    std::size_t capacity = 30;
    std::vector<SearchHit> hits;

    friend bool operator==(const TopK&, const TopK&) = default;
};

/// Streaming accumulator for one scan.
class TopKCollector {
public:
    explicit TopKCollector(std::size_t n) : heap_(n) {}

    bool would_enter(std::uint32_t distance, std::uint64_t cid) const {
        return heap_.would_enter({cid, distance});
    }

    /// Fast reject bound: hits with distance greater than this cannot enter.
    std::uint32_t threshold() const noexcept {
        return heap_.full() ? heap_.top().distance : std::numeric_limits<std::uint32_t>::max();
    }

    void push(std::uint64_t cid, std::uint32_t distance) { heap_.push({cid, distance}); }

    /// Throws TopKError if the kept hits repeat a CID.
    TopK finish() {
        TopK out{heap_.capacity(), heap_.take_sorted()};
        std::unordered_set<std::uint64_t> cids;
        for (const auto& h : out.hits)
            if (!cids.insert(h.cid).second) throw TopKError(TopKErrc::duplicate_cid, h.cid);
        return out;
    }

private:
    BoundedMaxHeap<SearchHit> heap_;
};

/// The `n` smallest hits of the union of `parts`. Parts come from disjoint
/// shards, so a CID seen twice signals a sharding bug and throws.
inline TopK merge_topk(std::span<const TopK> parts, std::size_t n) {
    TopKCollector collector(n);
    std::unordered_set<std::uint64_t> cids;
    for (const auto& part : parts) {
        for (const auto& hit : part.hits) {
            if (!cids.insert(hit.cid).second) throw TopKError(TopKErrc::duplicate_cid, hit.cid);
            collector.push(hit.cid, hit.distance);
        }
    }
    return collector.finish();
}

}  // namespace fpscreen
