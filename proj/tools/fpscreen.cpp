#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <numeric>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>

#include "fpscreen/jobqueue.hpp"
#include "fpscreen/libstore.hpp"
#include "fpscreen/molfile.hpp"
#include "fpscreen/scan.hpp"
#include "fpscreen/server.hpp"
#include "fpscreen/synthetic.hpp"

using namespace fpscreen;

namespace {

constexpr int kOk = 0;
constexpr int kDataError = 1;
constexpr int kUsageError = 2;

// 95,417,114 records in one hour.
constexpr std::uint64_t kBaselineRecords = 95417114;
constexpr double kBaselineRate = kBaselineRecords / 3600.0;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const CLI::Validator kAtLeastOne(
    [](std::string& v) -> std::string {
        std::uint64_t x = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || ptr != v.data() + v.size() || x < 1) return "must be an integer >= 1, got '" + v + "'";
        return {};
    },
    "INT>=1");

void fail(const std::string& msg) { std::cerr << "fpscreen: " << msg << '\n'; }

Fingerprint read_query(const std::string& arg) {
    std::string text = arg;
    if (arg.starts_with("@")) {
        std::ifstream in(arg.substr(1));
        if (!in) throw UsageError("cannot read query file '" + arg.substr(1) + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    const auto first = text.find_first_not_of(" \t\r\n");
    const auto last = text.find_last_not_of(" \t\r\n");
    text = first == std::string::npos ? "" : text.substr(first, last - first + 1);
    try {
        return parse_bitstring(text);
    } catch (const BitstringError& e) {
        throw UsageError(std::string("invalid query: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

struct BuildOpts {
    std::string input, out;
    std::size_t shards = 3;
};

int run_build(const BuildOpts& o) {
    std::ifstream in(o.input, std::ios::binary);
    if (!in) {
        fail("cannot open " + o.input);
        return kDataError;
    }
    const auto m = build_shards(in, o.shards, o.out);
    std::cout << "built " << m.total_records << " records into " << m.shards.size() << " shards in " << o.out
              << '\n';
    for (const auto& s : m.shards)
        std::cout << "  " << s.dataset_label << ' ' << s.path.filename().string() << ' ' << s.record_count << ' '
                  << checksum_hex(s.checksum) << '\n';
    return kOk;
}

struct SearchOpts {
    std::string library, query, format = "text", kernel = "packed";
    std::size_t n = 30, parallel = 1;
};

int run_search(const SearchOpts& o) {
    const auto query = read_query(o.query);  // before any library I/O
    SearchParams p;
    p.n = o.n;
    p.parallelism = o.parallel;
    p.kernel = *parse_kernel(o.kernel);
    const auto manifest = load_manifest(o.library);
    const auto top = search(manifest, query, p);
    if (o.format == "json") {
        json hits = json::array();
        for (std::size_t i = 0; i < top.hits.size(); ++i)
            hits.push_back({{"rank", i + 1}, {"cid", top.hits[i].cid}, {"distance", top.hits[i].distance}});
        std::cout << json{{"n", o.n}, {"kernel", o.kernel}, {"hits", hits}}.dump() << '\n';
    } else {
        for (std::size_t i = 0; i < top.hits.size(); ++i)
            std::cout << i + 1 << ' ' << top.hits[i].cid << ' ' << top.hits[i].distance << '\n';
    }
    return kOk;
}

struct GenOpts {
    std::string out;
    std::uint64_t count = 0, seed = 1;
};

int run_gen(const GenOpts& o) {
    std::ofstream out(o.out, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail("cannot open " + o.out + " for writing");
        return kDataError;
    }
    write_synthetic_text(out, o.count, o.seed);
    out.flush();
    if (!out) {
        fail("write to " + o.out + " failed");
        return kDataError;
    }
    std::cerr << "wrote " << o.count << " records to " << o.out << '\n';
    return kOk;
}

struct IngestOpts {
    std::string input, out, cid_property = "PUBCHEM_COMPOUND_CID";
};

int run_ingest(const IngestOpts& o) {
    std::ifstream in(o.input, std::ios::binary);
    if (!in) {
        fail("cannot open " + o.input);
        return kDataError;
    }
    std::ofstream out(o.out, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail("cannot open " + o.out + " for writing");
        return kDataError;
    }
    std::cerr << "warning: only " << kSupportedKeys.size()
              << " of 166 MACCS keys are computed from structures; the other keys are written as 0\n";
    SdfReader reader(in);
    std::size_t written = 0, skipped = 0;
    while (auto rec = reader.next()) {
        try {
            const auto mol = parse_molfile(rec->molblock);
            std::uint64_t cid = rec->index + 1;
            if (const auto it = rec->properties.find(o.cid_property); it != rec->properties.end()) {
                const auto& v = it->second;
                const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), cid);
                if (ec != std::errc{} || ptr != v.data() + v.size())
                    throw std::runtime_error(o.cid_property + " value '" + v + "' is not a CID");
            }
            out << write_library_line({cid, compute_subset_keys(mol).computed}) << '\n';
            ++written;
        } catch (const std::exception& e) {
            std::cerr << "record " << rec->index + 1 << " (line " << rec->first_line << "): " << e.what()
                      << '\n';
            ++skipped;
        }
    }
    out.flush();
    if (!out) {
        fail("write to " + o.out + " failed");
        return kDataError;
    }
    std::cerr << written << " records";
    if (skipped) std::cerr << ", " << skipped << " skipped";
    std::cerr << '\n';
    return kOk;
}

struct BenchOpts {
    std::string library, format = "text";
    std::size_t queries = 3, parallel = 4;
    std::uint64_t seed = 7;
};

int run_bench(const BenchOpts& o) {
    const auto manifest = load_manifest(o.library);
    SyntheticCorpus corpus(o.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<Fingerprint> queries;
    for (std::size_t i = 0; i < o.queries; ++i) queries.push_back(corpus.next_fingerprint());

    struct Row {
        Kernel kernel;
        std::size_t workers;
        double seconds;
        double rate;
    };
    std::vector<Row> rows;
    auto measure = [&](Kernel kernel, std::size_t workers) {
        SearchParams p;
        p.kernel = kernel;
        p.parallelism = workers;
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& q : queries) search(manifest, q, p);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double scanned = static_cast<double>(manifest.total_records) * queries.size();
        rows.push_back({kernel, workers, secs, secs > 0 ? scanned / secs : 0.0});
        if (o.format == "text")
            std::printf("%-9s workers=%-3zu %10.3f s  %14.0f records/s  (%.1fx baseline)\n",
                        std::string(to_string(kernel)).c_str(), workers, secs, rows.back().rate,
                        rows.back().rate / kBaselineRate);
    };

    if (o.format == "text")
        std::printf("library: %llu records in %zu shards, %zu queries per configuration\n"
                    "baseline: %llu records / 3600 s = %.0f records/s\n",
                    static_cast<unsigned long long>(manifest.total_records), manifest.shards.size(), o.queries,
                    static_cast<unsigned long long>(kBaselineRecords), kBaselineRate);
    measure(Kernel::packed, 1);
    if (o.parallel > 1) measure(Kernel::packed, o.parallel);
    measure(Kernel::reference, 1);

    const double total = std::accumulate(rows.begin(), rows.end(), 0.0, [](double s, const Row& r) { return s + r.seconds; });
    const bool ordered = rows.front().rate > rows.back().rate;
    json summary{{"records", manifest.total_records},
                 {"queries", o.queries},
                 {"baseline_records_per_s", std::round(kBaselineRate)},
                 {"packed_faster_than_reference", ordered},
                 {"wall_s", total},
                 {"runs", json::array()}};
    for (const auto& r : rows)
        summary["runs"].push_back(
            {{"kernel", to_string(r.kernel)}, {"workers", r.workers}, {"seconds", r.seconds}, {"records_per_s", r.rate}});
    if (o.format == "text") {
        std::printf("total wall time: %.3f s\n", total);
        if (!ordered) std::printf("note: reference kernel was not slower than packed on this run\n");
        std::cout << "summary " << summary.dump() << '\n';
    } else {
        std::cout << summary.dump() << '\n';
    }
    return kOk;
}

struct ServeOpts {
    std::string library, listen = "127.0.0.1:8080", cors_origin;
    std::size_t workers = 1, parallel = 1, queue_bound = 128;
    std::uint64_t ttl_seconds = 3600;
};

int run_serve(const ServeOpts& o) {
    ListenAddress addr;
    try {
        addr = parse_listen_address(o.listen);
    } catch (const std::invalid_argument& e) {
        fail(e.what());
        return kDataError;
    }
    auto manifest = load_manifest(o.library);
    if (const auto report = validate_manifest(manifest); !report.ok()) {
        for (const auto& v : report.violations) fail(std::string(to_string(v.kind)) + ": " + v.message);
        return kDataError;
    }

    // Signals are taken synchronously by this thread; block them before any
    // other thread exists so they all inherit the mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    JobQueueConfig qcfg;
    qcfg.workers = o.workers;
    qcfg.scan_parallelism = o.parallel;
    qcfg.queue_capacity = o.queue_bound;
    qcfg.result_ttl = std::chrono::seconds(o.ttl_seconds);
    JobQueue queue(std::move(manifest), qcfg);
    ServerConfig scfg;
    scfg.cors_origin = o.cors_origin;
    ApiServer server(&queue, scfg);
    if (!server.bind(addr)) {
        fail("cannot listen on " + o.listen);
        return kDataError;
    }
    std::cerr << "listening on http://" << addr.host << ':' << server.port() << " ("
              << queue.manifest().total_records << " records)" << std::endl;

    std::jthread http([&] { server.serve(); });
    int sig = 0;
    sigwait(&signals, &sig);
    std::cerr << "signal " << sig << ", shutting down" << std::endl;
    for (const auto& id : queue.shutdown()) std::cerr << "cancelled job " << id << std::endl;
    server.stop();
    http.join();
    std::cerr << "stopped" << std::endl;
    return kOk;
}

int run_validate(const std::string& library) {
    ShardManifest manifest;
    try {
        manifest = load_manifest(library);
    } catch (const LibraryError& e) {
        std::cout << "bad_manifest: " << e.what() << '\n';
        return kDataError;
    }
    const auto report = validate_manifest(manifest);
    for (const auto& v : report.violations) {
        std::cout << to_string(v.kind);
        if (!v.path.empty()) std::cout << ' ' << v.path.string();
        std::cout << ": " << v.message << '\n';
    }
    if (!report.ok()) return kDataError;
    std::cout << "ok: " << manifest.shards.size() << " shards, " << manifest.total_records << " records\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MACCS-166 fingerprint similarity search"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    BuildOpts build;
    auto* build_cmd = app.add_subcommand("build", "Build a sharded binary library from a text library");
    build_cmd->add_option("--input", build.input, "Text library (CID<TAB>bitstring per line)")->required();
    build_cmd->add_option("--out", build.out, "Output directory")->required();
    build_cmd->add_option("--shards", build.shards, "Number of shards")->check(kAtLeastOne)->capture_default_str();

    SearchOpts srch;
    auto* search_cmd = app.add_subcommand("search", "Synchronous top-N search");
    search_cmd->add_option("--library", srch.library, "Library directory")->required();
    search_cmd->add_option("--query", srch.query, "166/167-char bitstring, or @file")->required();
    search_cmd->add_option("--n", srch.n, "Number of hits")->check(kAtLeastOne)->capture_default_str();
    search_cmd->add_option("--parallel", srch.parallel, "Shard workers")->check(kAtLeastOne)->capture_default_str();
    search_cmd->add_option("--kernel", srch.kernel, "Distance kernel")
        ->check(CLI::IsMember({"packed", "reference"}))
        ->capture_default_str();
    search_cmd->add_option("--format", srch.format)->check(CLI::IsMember({"text", "json"}))->capture_default_str();

    GenOpts gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a seeded synthetic text library");
    gen_cmd->add_option("--out", gen.out, "Output text file")->required();
    gen_cmd->add_option("--count", gen.count, "Number of records")->required()->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();

    IngestOpts ingest;
    auto* ingest_cmd = app.add_subcommand("ingest-sdf", "Compute subset MACCS keys from an SDF file");
    ingest_cmd->add_option("--input", ingest.input, "SDF file")->required();
    ingest_cmd->add_option("--out", ingest.out, "Output text library")->required();
    ingest_cmd->add_option("--cid-property", ingest.cid_property, "SDF property holding the CID")
        ->capture_default_str();

    BenchOpts bench;
    auto* bench_cmd = app.add_subcommand("bench", "Measure scan throughput");
    bench_cmd->add_option("--library", bench.library, "Library directory")->required();
    bench_cmd->add_option("--queries", bench.queries, "Queries per configuration")
        ->check(kAtLeastOne)
        ->capture_default_str();
    bench_cmd->add_option("--parallel", bench.parallel, "Worker count compared against 1")
        ->check(kAtLeastOne)
        ->capture_default_str();
    bench_cmd->add_option("--seed", bench.seed)->capture_default_str();
    bench_cmd->add_option("--format", bench.format)->check(CLI::IsMember({"text", "json"}))->capture_default_str();

    ServeOpts serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
    serve_cmd->add_option("--library", serve.library, "Library directory")->required()->envname("FPSCREEN_LIBRARY");
    serve_cmd->add_option("--listen", serve.listen, "host:port")->envname("FPSCREEN_LISTEN")->capture_default_str();
    serve_cmd->add_option("--workers", serve.workers, "Concurrent jobs")
        ->check(kAtLeastOne)
        ->envname("FPSCREEN_WORKERS")
        ->capture_default_str();
    serve_cmd->add_option("--parallel", serve.parallel, "Shard workers per job")
        ->check(kAtLeastOne)
        ->envname("FPSCREEN_PARALLEL")
        ->capture_default_str();
    serve_cmd->add_option("--queue-bound", serve.queue_bound, "Maximum queued jobs")
        ->envname("FPSCREEN_QUEUE_BOUND")
        ->capture_default_str();
    serve_cmd->add_option("--result-ttl", serve.ttl_seconds, "Seconds finished jobs are kept")
        ->envname("FPSCREEN_RESULT_TTL")
        ->capture_default_str();
    serve_cmd->add_option("--cors-origin", serve.cors_origin, "Allowed browser origin")->envname("FPSCREEN_CORS_ORIGIN");

    std::string validate_library;
    auto* validate_cmd = app.add_subcommand("validate", "Check a library against its manifest");
    validate_cmd->add_option("--library", validate_library, "Library directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*build_cmd) return run_build(build);
        if (*search_cmd) return run_search(srch);
        if (*gen_cmd) return run_gen(gen);
        if (*ingest_cmd) return run_ingest(ingest);
        if (*bench_cmd) return run_bench(bench);
        if (*serve_cmd) return run_serve(serve);
        if (*validate_cmd) return run_validate(validate_library);
    } catch (const UsageError& e) {
        fail(e.what());
        return kUsageError;
    } catch (const LibraryError& e) {
        fail(e.what());
        return kDataError;
    } catch (const std::exception& e) {
        fail(e.what());
        return kDataError;
    }
    return kUsageError;
}
