#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "fpscreen/fingerprint.hpp"
#include "fpscreen/libstore.hpp"
#include "fpscreen/scan.hpp"
#include "fpscreen/topk.hpp"

namespace fpscreen {

enum class JobState { queued, running, done, failed, cancelled };

inline std::string_view to_string(JobState s) {
    switch (s) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
        case JobState::cancelled: return "cancelled";
    }
    return "unknown";
}

inline bool is_terminal(JobState s) {
    return s == JobState::done || s == JobState::failed || s == JobState::cancelled;
}

enum class JobErrc { invalid_request, queue_full, unknown_job, not_finished, job_failed, unavailable };

class JobError : public std::runtime_error {
public:
    JobError(JobErrc code, const std::string& message, std::map<std::string, std::string> detail = {})
        : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

    JobErrc code() const noexcept { return code_; }
    /// Field name -> problem, for invalid requests.
    const std::map<std::string, std::string>& detail() const noexcept { return detail_; }

private:
    JobErrc code_;
    std::map<std::string, std::string> detail_;
};

struct JobRequest {
    std::vector<Fingerprint> queries;
    bool batch = false;
    std::size_t n = 30;
};

/// Builds a request from text bitstrings; problems are reported per field
/// ("query" or "batch[i]") as JobErrc::invalid_request.
inline JobRequest make_request(const std::vector<std::string>& bitstrings, bool batch, std::size_t n) {
    std::map<std::string, std::string> problems;
    JobRequest req;
    req.batch = batch;
    req.n = n;
    if (n < 1) problems["n"] = "n must be at least 1";
    if (bitstrings.empty()) problems[batch ? "batch" : "query"] = "at least one fingerprint is required";
    if (!batch && bitstrings.size() > 1) problems["query"] = "single search takes exactly one fingerprint";
    for (std::size_t i = 0; i < bitstrings.size(); ++i) {
        const std::string field = batch ? "batch[" + std::to_string(i) + "]" : "query";
        try {
            req.queries.push_back(parse_bitstring(bitstrings[i]));
        } catch (const BitstringError& e) {
            problems[field] = e.code() == BitstringErrc::wrong_length
                                  ? "bitstring must be 166 or 167 characters of '0'/'1', got length " +
                                        std::to_string(e.position())
                                  : "bitstring has a character other than '0'/'1' at position " +
                                        std::to_string(e.position());
        }
    }
    if (!problems.empty()) throw JobError(JobErrc::invalid_request, "invalid search request", std::move(problems));
    return req;
}

struct ShardProgress {
    std::string label;
    std::uint64_t done = 0;
    std::uint64_t total = 0;
};

/// Consistent point-in-time view of a job, without the result payload.
struct JobSnapshot {
    using Clock = std::chrono::system_clock;

    std::string id;
    JobState state = JobState::queued;
    std::vector<ShardProgress> shards;
    std::size_t n = 30;
    std::size_t query_count = 1;
    bool batch = false;
    Clock::time_point submitted_at;
    std::optional<Clock::time_point> started_at;
    std::optional<Clock::time_point> finished_at;
    std::optional<std::string> error;

    /// Sum of done over sum of total, computed from this snapshot's own shards.
    /// A done job reports 1.0 even for an empty library.
    double progress() const {
        std::uint64_t done = 0, total = 0;
        for (const auto& s : shards) {
            done += s.done;
            total += s.total;
        }
        if (total == 0) return state == JobState::done ? 1.0 : 0.0;
        return static_cast<double>(done) / static_cast<double>(total);
    }
};

struct JobResult {
    TopK top;
    std::chrono::milliseconds elapsed{0};
};

struct JobQueueConfig {
    std::size_t workers = 1;           // jobs executed concurrently
    std::size_t scan_parallelism = 1;  // shard workers per job
    std::size_t queue_capacity = 128;  // queued (not yet running) jobs
    std::chrono::seconds result_ttl{3600};
};

/// In-process asynchronous search queue. Submission returns immediately;
/// jobs run FIFO on a fixed worker pool and report per-shard progress.
class JobQueue {
public:
    JobQueue(ShardManifest manifest, JobQueueConfig config)
        : manifest_(std::move(manifest)), config_(config), rng_(std::random_device{}()) {
        if (config_.workers < 1) throw std::invalid_argument("job queue needs at least one worker");
        if (config_.scan_parallelism < 1) throw std::invalid_argument("scan parallelism must be at least 1");
        workers_.reserve(config_.workers);
        for (std::size_t i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { work(); });
    }

    JobQueue(const JobQueue&) = delete;
    JobQueue& operator=(const JobQueue&) = delete;

    ~JobQueue() { shutdown(); }

    const ShardManifest& manifest() const noexcept { return manifest_; }
    const JobQueueConfig& config() const noexcept { return config_; }

    std::string submit(JobRequest request) {
        if (request.n < 1) throw JobError(JobErrc::invalid_request, "invalid search request", {{"n", "n must be at least 1"}});
        if (request.queries.empty())
            throw JobError(JobErrc::invalid_request, "invalid search request",
                           {{request.batch ? "batch" : "query", "at least one fingerprint is required"}});

        std::lock_guard lock(mutex_);
        if (stopping_) throw JobError(JobErrc::unavailable, "job queue is shutting down");
        evict_expired_locked();
        if (queue_.size() >= config_.queue_capacity) {
            throw JobError(JobErrc::queue_full,
                           "queue holds " + std::to_string(queue_.size()) + " jobs (limit " +
                               std::to_string(config_.queue_capacity) + ")");
        }
        auto job = std::make_shared<Job>();
        job->id = new_id_locked();
        job->request = std::move(request);
        job->submitted_at = JobSnapshot::Clock::now();
        for (const auto& shard : manifest_.shards) job->shards.push_back({shard.dataset_label, 0, shard.record_count});
        jobs_.emplace(job->id, job);
        queue_.push_back(job);
        cv_.notify_all();
        return job->id;
    }

    JobSnapshot status(const std::string& id) {
        std::lock_guard lock(mutex_);
        evict_expired_locked();
        return snapshot_locked(find_locked(id));
    }

    JobResult results(const std::string& id) {
        std::lock_guard lock(mutex_);
        const auto& job = find_locked(id);
        switch (job.state) {
            case JobState::done: return *job.result;
            case JobState::failed: throw JobError(JobErrc::job_failed, job.error.value_or("search failed"));
            case JobState::cancelled: throw JobError(JobErrc::job_failed, "job was cancelled");
            default:
                throw JobError(JobErrc::not_finished, "job is " + std::string(to_string(job.state)));
        }
    }

    /// Queued jobs are cancelled at once; running jobs stop at the next scan
    /// block boundary. Terminal jobs are left as they are.
    JobState cancel(const std::string& id) {
        std::lock_guard lock(mutex_);
        auto& job = find_locked(id);
        cancel_locked(job);
        return job.state;
    }

    /// Blocks until the job is terminal or `timeout` passes.
    JobSnapshot wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::hours(24)) {
        std::unique_lock lock(mutex_);
        auto& job = find_locked(id);
        cv_.wait_for(lock, timeout, [&] { return is_terminal(job.state); });
        return snapshot_locked(job);
    }

    /// Cancels queued and running jobs and joins the workers. Running jobs are
    /// observed cancelled before this returns. Returns the ids of the jobs
    /// that ended cancelled because of it.
    std::vector<std::string> shutdown() {
        std::vector<std::shared_ptr<Job>> outstanding;
        {
            std::lock_guard lock(mutex_);
            if (stopping_) return {};
            stopping_ = true;
            for (auto& [id, job] : jobs_) {
                if (is_terminal(job->state)) continue;
                outstanding.push_back(job);
                cancel_locked(*job);
            }
            cv_.notify_all();
        }
        workers_.clear();  // joins
        std::vector<std::string> cancelled;
        std::lock_guard lock(mutex_);
        for (const auto& job : outstanding)
            if (job->state == JobState::cancelled) cancelled.push_back(job->id);
        return cancelled;
    }

private:
    struct Job {
        std::string id;
        JobRequest request;
        JobState state = JobState::queued;
        std::vector<ShardProgress> shards;
        JobSnapshot::Clock::time_point submitted_at;
        std::optional<JobSnapshot::Clock::time_point> started_at;
        std::optional<JobSnapshot::Clock::time_point> finished_at;
        std::chrono::steady_clock::time_point finished_steady;
        std::optional<JobResult> result;
        std::optional<std::string> error;
        std::stop_source stop;
    };

    Job& find_locked(const std::string& id) {
        const auto it = jobs_.find(id);
        if (it == jobs_.end()) throw JobError(JobErrc::unknown_job, "unknown job '" + id + "'");
        return *it->second;
    }

    JobSnapshot snapshot_locked(const Job& job) const {
        JobSnapshot s;
        s.id = job.id;
        s.state = job.state;
        s.shards = job.shards;
        s.n = job.request.n;
        s.query_count = job.request.queries.size();
        s.batch = job.request.batch;
        s.submitted_at = job.submitted_at;
        s.started_at = job.started_at;
        s.finished_at = job.finished_at;
        s.error = job.error;
        return s;
    }

    void cancel_locked(Job& job) {
        if (job.state == JobState::queued) {
            std::erase_if(queue_, [&](const std::shared_ptr<Job>& j) { return j.get() == &job; });
            finish_locked(job, JobState::cancelled);
        } else if (job.state == JobState::running) {
            job.stop.request_stop();
        }
    }

    void finish_locked(Job& job, JobState state) {
        job.state = state;
        job.finished_at = JobSnapshot::Clock::now();
        job.finished_steady = std::chrono::steady_clock::now();
        cv_.notify_all();
    }

    void evict_expired_locked() {
        const auto now = std::chrono::steady_clock::now();
        std::erase_if(jobs_, [&](const auto& entry) {
            const auto& job = *entry.second;
            return is_terminal(job.state) && now - job.finished_steady >= config_.result_ttl;
        });
    }

    std::string new_id_locked() {
        for (;;) {
            char buf[33];
            std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                          static_cast<unsigned long long>(rng_()));
            if (!jobs_.contains(buf)) return buf;
        }
    }

    void work() {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
                if (stopping_ && queue_.empty()) return;
                job = queue_.front();
                queue_.pop_front();
                job->state = JobState::running;
                job->started_at = JobSnapshot::Clock::now();
                cv_.notify_all();
            }
            run(*job);
        }
    }

    void run(Job& job) {
        SearchParams params;
        params.n = job.request.n;
        params.parallelism = config_.scan_parallelism;
        auto progress = [this, &job](std::size_t shard, std::uint64_t done) {
            std::lock_guard lock(mutex_);
            auto& p = job.shards[shard];
            if (done > p.done) p.done = std::min(done, p.total);
        };
        const auto started = std::chrono::steady_clock::now();
        try {
            TopK top = job.request.batch
                           ? batch_search(manifest_, job.request.queries, params, progress, job.stop.get_token())
                           : search(manifest_, job.request.queries.front(), params, progress, job.stop.get_token());
            const auto elapsed =
                std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
            std::lock_guard lock(mutex_);
            job.result = JobResult{std::move(top), elapsed};
            finish_locked(job, JobState::done);
        } catch (const ScanCancelled&) {
            std::lock_guard lock(mutex_);
            finish_locked(job, JobState::cancelled);
        } catch (const std::exception& e) {
            std::lock_guard lock(mutex_);
            job.error = e.what();
            finish_locked(job, JobState::failed);
        }
    }

    const ShardManifest manifest_;
    const JobQueueConfig config_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<std::shared_ptr<Job>> queue_;
    std::unordered_map<std::string, std::shared_ptr<Job>> jobs_;
    std::mt19937_64 rng_;
    bool stopping_ = false;
    std::vector<std::jthread> workers_;  // last: joined before the state above is destroyed
};

}  // namespace fpscreen
