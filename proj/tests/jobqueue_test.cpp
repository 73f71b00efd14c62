#include <gtest/gtest.h>

#include <random>
#include <set>
#include <thread>

#include "fpscreen/jobqueue.hpp"
#include "test_support.hpp"

using namespace fpscreen;
using namespace std::chrono_literals;
using fpscreen::testing::oracle_topk;
using fpscreen::testing::random_fingerprint;
using fpscreen::testing::random_records;
using fpscreen::testing::TempDir;

namespace {

JobRequest single(const Fingerprint& q, std::size_t n = 30) {
    JobRequest r;
    r.queries = {q};
    r.n = n;
    return r;
}

}  // namespace

TEST(MakeRequest, ShortBitstringNamesLengthRule) {
    try {
        make_request({std::string(163, '0')}, false, 30);
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::invalid_request);
        ASSERT_TRUE(e.detail().contains("query"));
        EXPECT_NE(e.detail().at("query").find("166 or 167"), std::string::npos);
        EXPECT_NE(e.detail().at("query").find("163"), std::string::npos);
    }
}

TEST(MakeRequest, BatchReportsEachBadEntry) {
    try {
        make_request({std::string(166, '0'), std::string(10, '1'), std::string(166, 'x')}, true, 0);
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.detail().size(), 3u);
        EXPECT_TRUE(e.detail().contains("batch[1]"));
        EXPECT_TRUE(e.detail().contains("batch[2]"));
        EXPECT_TRUE(e.detail().contains("n"));
    }
}

TEST(MakeRequest, AcceptsBothLengths) {
    const auto r = make_request({std::string(166, '1'), "0" + std::string(166, '1')}, true, 5);
    ASSERT_EQ(r.queries.size(), 2u);
    EXPECT_EQ(r.queries[0], r.queries[1]);
}

TEST(JobQueue, ResultMatchesOracleAndDirectSearch) {
    TempDir dir;
    const auto records = random_records(20000, 1);
    const auto m = build_shards(records, 3, dir.path());
    JobQueue q(m, {});
    std::mt19937_64 rng(2);
    const auto query = random_fingerprint(rng, 0.25);
    const auto id = q.submit(single(query, 50));
    const auto snap = q.wait(id, 30s);
    ASSERT_EQ(snap.state, JobState::done);
    EXPECT_DOUBLE_EQ(snap.progress(), 1.0);
    ASSERT_EQ(snap.shards.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(snap.shards[i].label, m.shards[i].dataset_label);
        EXPECT_EQ(snap.shards[i].done, snap.shards[i].total);
    }
    EXPECT_TRUE(snap.started_at && snap.finished_at);
    EXPECT_LE(snap.submitted_at, *snap.started_at);
    EXPECT_LE(*snap.started_at, *snap.finished_at);

    const auto res = q.results(id);
    SearchParams p;
    p.n = 50;
    EXPECT_EQ(res.top, search(m, query, p));
    const Fingerprint qs[] = {query};
    std::vector<std::pair<std::uint64_t, std::uint32_t>> got;
    for (const auto& h : res.top.hits) got.emplace_back(h.cid, h.distance);
    EXPECT_EQ(got, oracle_topk(records, qs, 50));
}

TEST(JobQueue, BatchJob) {
    TempDir dir;
    const auto m = build_shards(random_records(5000, 3), 2, dir.path());
    JobQueue q(m, {});
    std::mt19937_64 rng(4);
    JobRequest r;
    r.batch = true;
    r.queries = {random_fingerprint(rng, 0.25), random_fingerprint(rng, 0.25)};
    const auto id = q.submit(r);
    ASSERT_EQ(q.wait(id, 30s).state, JobState::done);
    EXPECT_EQ(q.results(id).top, batch_search(m, r.queries, {}));
}

TEST(JobQueue, IdsAreUnique128BitHex) {
    TempDir dir;
    const auto m = build_shards(random_records(10, 5), 1, dir.path());
    JobQueue q(m, {});
    std::set<std::string> ids;
    for (int i = 0; i < 100; ++i) {
        const auto id = q.submit(single(Fingerprint{}));
        EXPECT_EQ(id.size(), 32u);
        EXPECT_EQ(id.find_first_not_of("0123456789abcdef"), std::string::npos);
        ids.insert(id);
    }
    EXPECT_EQ(ids.size(), 100u);
}

TEST(JobQueue, UnknownJob) {
    TempDir dir;
    const auto m = build_shards(random_records(10, 6), 1, dir.path());
    JobQueue q(m, {});
    const std::string bogus(32, '0');
    EXPECT_THROW(q.status(bogus), JobError);
    EXPECT_THROW(q.cancel(bogus), JobError);
    try {
        q.results(bogus);
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::unknown_job);
    }
}

TEST(JobQueue, InvalidRequestRejected) {
    TempDir dir;
    const auto m = build_shards(random_records(10, 7), 1, dir.path());
    JobQueue q(m, {});
    JobRequest r;
    EXPECT_THROW(q.submit(r), JobError);
    r.queries = {Fingerprint{}};
    r.n = 0;
    try {
        q.submit(r);
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::invalid_request);
    }
}

TEST(JobQueue, FifoAndQueueFullAndCancelQueued) {
    TempDir dir;
    // Large enough that the first job is still running while the rest are queued.
    const auto m = build_shards(random_records(1500000, 8), 4, dir.path());
    JobQueueConfig cfg;
    cfg.queue_capacity = 3;
    JobQueue q(m, cfg);
    const auto first = q.submit(single(Fingerprint{}));
    // Wait until the worker has taken the first job off the queue.
    for (int i = 0; i < 2000 && q.status(first).state == JobState::queued; ++i) std::this_thread::sleep_for(1ms);
    std::vector<std::string> queued;
    for (int i = 0; i < 3; ++i) queued.push_back(q.submit(single(Fingerprint{})));
    try {
        q.submit(single(Fingerprint{}));
        FAIL() << "expected queue_full";
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::queue_full);
    }
    EXPECT_EQ(q.status(queued[0]).state, JobState::queued);
    try {
        q.results(queued[0]);
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::not_finished);
    }

    EXPECT_EQ(q.cancel(queued[1]), JobState::cancelled);
    EXPECT_EQ(q.cancel(queued[1]), JobState::cancelled);  // idempotent
    EXPECT_THROW(q.results(queued[1]), JobError);

    const auto s0 = q.wait(queued[0], 60s);
    const auto s2 = q.wait(queued[2], 60s);
    const auto sf = q.wait(first, 60s);
    ASSERT_EQ(sf.state, JobState::done);
    ASSERT_EQ(s0.state, JobState::done);
    ASSERT_EQ(s2.state, JobState::done);
    EXPECT_LE(*sf.started_at, *s0.started_at);
    EXPECT_LE(*s0.started_at, *s2.started_at);
    EXPECT_FALSE(q.status(queued[1]).started_at.has_value());
}

TEST(JobQueue, CancelRunningJob) {
    TempDir dir;
    const auto m = build_shards(random_records(2000000, 9), 2, dir.path());
    JobQueue q(m, {});
    const auto id = q.submit(single(Fingerprint{}));
    for (int i = 0; i < 5000 && q.status(id).state != JobState::running; ++i) std::this_thread::sleep_for(1ms);
    q.cancel(id);
    const auto snap = q.wait(id, 30s);
    // A very fast machine may finish before the stop is observed.
    EXPECT_TRUE(snap.state == JobState::cancelled || snap.state == JobState::done);
    EXPECT_EQ(q.cancel(id), snap.state);
}

TEST(JobQueue, ProgressSnapshotsAreConsistent) {
    TempDir dir;
    const auto m = build_shards(random_records(1000000, 10), 4, dir.path());
    JobQueue q(m, {});
    const auto id = q.submit(single(Fingerprint{}));
    double last = 0;
    for (;;) {
        const auto s = q.status(id);
        std::uint64_t done = 0, total = 0;
        for (const auto& sh : s.shards) {
            EXPECT_LE(sh.done, sh.total);
            done += sh.done;
            total += sh.total;
        }
        EXPECT_EQ(total, m.total_records);
        EXPECT_DOUBLE_EQ(s.progress(), static_cast<double>(done) / total);
        EXPECT_GE(s.progress(), last);
        last = s.progress();
        if (is_terminal(s.state)) {
            EXPECT_EQ(s.state, JobState::done);
            EXPECT_EQ(done, total);
            break;
        }
        std::this_thread::sleep_for(2ms);
    }
}

TEST(JobQueue, FailedJobReportsError) {
    TempDir dir;
    const auto m = build_shards(random_records(1000, 11), 2, dir.path());
    std::filesystem::remove(m.shards[1].path);
    JobQueue q(m, {});
    const auto id = q.submit(single(Fingerprint{}));
    const auto snap = q.wait(id, 30s);
    ASSERT_EQ(snap.state, JobState::failed);
    ASSERT_TRUE(snap.error.has_value());
    EXPECT_NE(snap.error->find(m.shards[1].path.filename().string()), std::string::npos);
    try {
        q.results(id);
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::job_failed);
    }
}

TEST(JobQueue, TtlEvictsFinishedJobs) {
    TempDir dir;
    const auto m = build_shards(random_records(10, 12), 1, dir.path());
    JobQueueConfig cfg;
    cfg.result_ttl = 0s;
    JobQueue q(m, cfg);
    const auto id = q.submit(single(Fingerprint{}));
    ASSERT_EQ(q.wait(id, 30s).state, JobState::done);
    EXPECT_THROW(q.status(id), JobError);
}

TEST(JobQueue, ShutdownCancelsOutstanding) {
    TempDir dir;
    const auto m = build_shards(random_records(1000000, 13), 2, dir.path());
    auto q = std::make_unique<JobQueue>(m, JobQueueConfig{});
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) ids.push_back(q->submit(single(Fingerprint{})));
    q->shutdown();
    int cancelled = 0;
    for (const auto& id : ids) {
        const auto s = q->status(id);
        EXPECT_TRUE(is_terminal(s.state));
        cancelled += s.state == JobState::cancelled;
    }
    EXPECT_GE(cancelled, 3);
    try {
        q->submit(single(Fingerprint{}));
        FAIL();
    } catch (const JobError& e) {
        EXPECT_EQ(e.code(), JobErrc::unavailable);
    }
    q.reset();
}

TEST(JobQueue, EmptyLibraryCompletes) {
    TempDir dir;
    const auto m = build_shards(std::vector<LibraryRecord>{}, 2, dir.path());
    JobQueue q(m, {});
    const auto id = q.submit(single(Fingerprint{}));
    const auto s = q.wait(id, 30s);
    EXPECT_EQ(s.state, JobState::done);
    EXPECT_DOUBLE_EQ(s.progress(), 1.0);
    EXPECT_TRUE(q.results(id).top.hits.empty());
}
