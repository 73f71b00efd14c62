#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fpscreen/fingerprint.hpp"

namespace fpscreen {

struct LibraryRecord {
    std::uint64_t cid = 0;
    Fingerprint fp;

    friend bool operator==(const LibraryRecord&, const LibraryRecord&) = default;
};

enum class LibraryErrc {
    missing_tab,
    bad_cid,
    bad_fingerprint,
    bad_magic,
    version_mismatch,
    checksum_mismatch,
    truncated_file,
    bad_manifest,
    io_failure,
};

class LibraryError : public std::runtime_error {
public:
    LibraryError(LibraryErrc code, const std::string& message, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message),
          code_(code),
          line_(line) {}

    LibraryErrc code() const noexcept { return code_; }
    /// 1-based input line for text parse errors, 0 otherwise.
    std::size_t line() const noexcept { return line_; }

private:
    LibraryErrc code_;
    std::size_t line_;
};

// ---------------------------------------------------------------------------
// Text interchange: one `<CID>\t<bitstring>` record per line.

inline LibraryRecord parse_library_line(std::string_view line, std::size_t line_no = 0) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
        throw LibraryError(LibraryErrc::missing_tab, "expected <CID><TAB><bitstring>", line_no);
    }
    const auto cid_text = line.substr(0, tab);
    LibraryRecord rec;
    const auto [ptr, ec] = std::from_chars(cid_text.data(), cid_text.data() + cid_text.size(), rec.cid);
    if (cid_text.empty() || ec != std::errc{} || ptr != cid_text.data() + cid_text.size() || rec.cid == 0) {
        throw LibraryError(LibraryErrc::bad_cid, "CID must be a positive decimal integer, got '" +
                                                     std::string(cid_text) + "'",
                           line_no);
    }
    try {
        rec.fp = parse_bitstring(line.substr(tab + 1));
    } catch (const BitstringError& e) {
        throw LibraryError(LibraryErrc::bad_fingerprint, e.what(), line_no);
    }
    return rec;
}

/// Inverse of parse_library_line; no trailing newline.
inline std::string write_library_line(const LibraryRecord& rec) {
    return std::to_string(rec.cid) + '\t' + to_bitstring(rec.fp);
}

/// Calls `sink(record)` for every record of a text library; blank lines are
/// skipped. Errors carry the 1-based line number.
template <typename Sink>
std::uint64_t read_library_text(std::istream& in, Sink&& sink) {
    std::string line;
    std::size_t line_no = 0;
    std::uint64_t count = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        sink(parse_library_line(line, line_no));
        ++count;
    }
    if (in.bad()) throw LibraryError(LibraryErrc::io_failure, "read error in library text");
    return count;
}

// ---------------------------------------------------------------------------
// Binary shard format.
//
//   header (16 bytes): "FPS1" | u16 LE format version | 2 zero bytes | u64 LE record count
//   record (32 bytes): u64 LE CID | 21 fingerprint bytes | 3 zero bytes
//
// Fingerprint key j sits in byte (j-1)/8 at bit (j-1)%8, so loading the 24
// bytes after the CID as three LE words yields Fingerprint::words() directly.

namespace shard_format {

inline constexpr std::array<char, 4> kMagic = {'F', 'P', 'S', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;
inline constexpr std::size_t kRecordSize = 32;
inline constexpr std::size_t kFingerprintBytes = 21;

inline std::uint64_t load_le64(const std::byte* p) noexcept {
    std::uint64_t v;
    std::memcpy(&v, p, sizeof v);
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
    return v;
}

inline void store_le64(std::byte* p, std::uint64_t v) noexcept {
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
    std::memcpy(p, &v, sizeof v);
}

inline void encode_record(const LibraryRecord& rec, std::span<std::byte, kRecordSize> out) noexcept {
    store_le64(out.data(), rec.cid);
    const auto& w = rec.fp.words();
    store_le64(out.data() + 8, w[0]);
    store_le64(out.data() + 16, w[1]);
    store_le64(out.data() + 24, w[2]);
}

inline std::uint64_t decode_cid(const std::byte* rec) noexcept { return load_le64(rec); }

inline Fingerprint decode_fingerprint(const std::byte* rec) noexcept {
    return Fingerprint::from_words({load_le64(rec + 8), load_le64(rec + 16), load_le64(rec + 24)});
}

inline LibraryRecord decode_record(const std::byte* rec) noexcept {
    return {decode_cid(rec), decode_fingerprint(rec)};
}

inline std::array<std::byte, kHeaderSize> encode_header(std::uint64_t record_count) noexcept {
    std::array<std::byte, kHeaderSize> h{};
    std::memcpy(h.data(), kMagic.data(), kMagic.size());
    h[4] = static_cast<std::byte>(kVersion & 0xff);
    h[5] = static_cast<std::byte>(kVersion >> 8);
    store_le64(h.data() + 8, record_count);
    return h;
}

}  // namespace shard_format

/// Incremental 64-bit FNV-1a.
class Fnv1a64 {
public:
    static constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
    static constexpr std::uint64_t kPrime = 0x100000001b3ULL;

    void update(std::span<const std::byte> bytes) noexcept {
        std::uint64_t h = hash_;
        for (auto b : bytes) {
            h ^= static_cast<std::uint8_t>(b);
            h *= kPrime;
        }
        hash_ = h;
    }

    std::uint64_t value() const noexcept { return hash_; }

private:
    std::uint64_t hash_ = kOffset;
};

inline std::string checksum_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct Shard {
    std::filesystem::path path;
    std::uint64_t record_count = 0;
    std::string dataset_label;
    std::uint64_t checksum = 0;
};

/// "A".."Z", then "A1".."Z1", "A2", ...
inline std::string shard_label(std::size_t index) {
    std::string label(1, static_cast<char>('A' + index % 26));
    if (index >= 26) label += std::to_string(index / 26);
    return label;
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline File open_file(const std::filesystem::path& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode));
    if (!f) throw LibraryError(LibraryErrc::io_failure, "cannot open " + path.string());
    return f;
}

}  // namespace detail

/// Writes one shard file. The header count is patched in by finish().
class ShardWriter {
public:
    ShardWriter(std::filesystem::path path, std::string label)
        : file_(detail::open_file(path, "wb")), shard_{std::move(path), 0, std::move(label), 0} {
        buffer_.reserve(kBufferRecords * shard_format::kRecordSize);
        const auto header = shard_format::encode_header(0);
        write(header);
    }

    void append(const LibraryRecord& rec) {
        std::array<std::byte, shard_format::kRecordSize> bytes;
        shard_format::encode_record(rec, bytes);
        append_raw(bytes);
    }

    /// `records` must be whole encoded records.
    void append_raw(std::span<const std::byte> records) {
        hash_.update(records);
        shard_.record_count += records.size() / shard_format::kRecordSize;
        buffer_.insert(buffer_.end(), records.begin(), records.end());
        if (buffer_.size() >= kBufferRecords * shard_format::kRecordSize) flush();
    }

    Shard finish() {
        flush();
        const auto header = shard_format::encode_header(shard_.record_count);
        if (std::fseek(file_.get(), 0, SEEK_SET) != 0) fail();
        write(header);
        if (std::fflush(file_.get()) != 0) fail();
        file_.reset();
        shard_.checksum = hash_.value();
        return shard_;
    }

private:
    static constexpr std::size_t kBufferRecords = 65536;

    void flush() {
        write(buffer_);
        buffer_.clear();
    }

    void write(std::span<const std::byte> bytes) {
        if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), file_.get()) != bytes.size()) fail();
    }

    [[noreturn]] void fail() const {
        throw LibraryError(LibraryErrc::io_failure, "write failed for " + shard_.path.string());
    }

    detail::File file_;
    Shard shard_;
    Fnv1a64 hash_;
    std::vector<std::byte> buffer_;
};

/// Streaming shard reader with bounded memory. The header is validated on
/// open; the checksum is verified once the last record has been read.
class ShardReader {
public:
    explicit ShardReader(const Shard& shard, bool verify_checksum = true)
        : shard_(shard), verify_(verify_checksum) {
        std::error_code ec;
        const auto size = std::filesystem::file_size(shard.path, ec);
        if (ec) throw LibraryError(LibraryErrc::io_failure, "cannot stat " + shard.path.string());
        file_ = detail::open_file(shard.path, "rb");

        std::array<std::byte, shard_format::kHeaderSize> h{};
        if (size < h.size() || std::fread(h.data(), 1, h.size(), file_.get()) != h.size()) {
            throw LibraryError(LibraryErrc::truncated_file, shard.path.string() + ": shorter than header");
        }
        if (std::memcmp(h.data(), shard_format::kMagic.data(), shard_format::kMagic.size()) != 0) {
            throw LibraryError(LibraryErrc::bad_magic, shard.path.string() + ": not a fingerprint shard");
        }
        const auto version = static_cast<std::uint16_t>(std::to_integer<unsigned>(h[4]) |
                                                        (std::to_integer<unsigned>(h[5]) << 8));
        if (version != shard_format::kVersion) {
            throw LibraryError(LibraryErrc::version_mismatch,
                               shard.path.string() + ": format version " + std::to_string(version));
        }
        count_ = shard_format::load_le64(h.data() + 8);
        const auto expected = shard_format::kHeaderSize + count_ * shard_format::kRecordSize;
        if (size != expected) {
            throw LibraryError(LibraryErrc::truncated_file,
                               shard.path.string() + ": header declares " + std::to_string(count_) +
                                   " records but file holds " + std::to_string(size) + " bytes");
        }
    }

    std::uint64_t record_count() const noexcept { return count_; }
    std::uint64_t records_read() const noexcept { return read_; }

    /// Fills `buffer` with up to buffer.size()/32 encoded records; returns the
    /// number read, 0 at end.
    std::size_t read_raw(std::span<std::byte> buffer) {
        const std::size_t want = std::min<std::uint64_t>(buffer.size() / shard_format::kRecordSize, count_ - read_);
        if (want == 0) {
            finish();
            return 0;
        }
        const std::size_t bytes = want * shard_format::kRecordSize;
        if (std::fread(buffer.data(), 1, bytes, file_.get()) != bytes) {
            throw LibraryError(LibraryErrc::truncated_file, shard_.path.string() + ": unexpected end of file");
        }
        if (verify_) hash_.update(buffer.first(bytes));
        read_ += want;
        if (read_ == count_) finish();
        return want;
    }

    template <typename Sink>
    void for_each(Sink&& sink) {
        std::vector<std::byte> buffer(kBlockRecords * shard_format::kRecordSize);
        while (const auto n = read_raw(buffer)) {
            for (std::size_t i = 0; i < n; ++i)
                sink(shard_format::decode_record(buffer.data() + i * shard_format::kRecordSize));
        }
    }

    static constexpr std::size_t kBlockRecords = 65536;

private:
    void finish() {
        if (finished_) return;
        finished_ = true;
        if (verify_ && hash_.value() != shard_.checksum) {
            throw LibraryError(LibraryErrc::checksum_mismatch,
                               shard_.path.string() + ": checksum " + checksum_hex(hash_.value()) +
                                   " does not match manifest " + checksum_hex(shard_.checksum));
        }
    }

    Shard shard_;
    bool verify_;
    detail::File file_;
    std::uint64_t count_ = 0;
    std::uint64_t read_ = 0;
    Fnv1a64 hash_;
    bool finished_ = false;
};

inline std::vector<LibraryRecord> read_shard(const Shard& shard) {
    ShardReader reader(shard);
    std::vector<LibraryRecord> out;
    out.reserve(reader.record_count());
    reader.for_each([&](const LibraryRecord& rec) { out.push_back(rec); });
    return out;
}

// ---------------------------------------------------------------------------
// Manifest.

inline constexpr const char* kManifestFile = "manifest.json";

struct ShardManifest {
    std::vector<Shard> shards;
    std::uint64_t total_records = 0;
    int format_version = shard_format::kVersion;
    /// Directory the manifest was loaded from; shard paths are resolved
    /// against it and stored relative to it.
    std::filesystem::path directory;
};

inline nlohmann::json manifest_to_json(const ShardManifest& m) {
    nlohmann::json shards = nlohmann::json::array();
    for (const auto& s : m.shards) {
        auto rel = m.directory.empty() ? s.path : s.path.lexically_relative(m.directory);
        if (rel.empty()) rel = s.path;
        shards.push_back({{"path", rel.generic_string()},
                          {"record_count", s.record_count},
                          {"dataset_label", s.dataset_label},
                          {"checksum", checksum_hex(s.checksum)}});
    }
    return {{"format_version", m.format_version}, {"total_records", m.total_records}, {"shards", shards}};
}

inline ShardManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& directory) {
    ShardManifest m;
    m.directory = directory;
    try {
        m.format_version = j.at("format_version").get<int>();
        m.total_records = j.at("total_records").get<std::uint64_t>();
        for (const auto& s : j.at("shards")) {
            Shard shard;
            shard.path = directory / s.at("path").get<std::string>();
            shard.record_count = s.at("record_count").get<std::uint64_t>();
            shard.dataset_label = s.at("dataset_label").get<std::string>();
            const auto hex = s.at("checksum").get<std::string>();
            const auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), shard.checksum, 16);
            if (hex.empty() || ec != std::errc{} || ptr != hex.data() + hex.size()) {
                throw LibraryError(LibraryErrc::bad_manifest, "bad checksum '" + hex + "'");
            }
            m.shards.push_back(std::move(shard));
        }
    } catch (const nlohmann::json::exception& e) {
        throw LibraryError(LibraryErrc::bad_manifest, std::string("manifest: ") + e.what());
    }
    return m;
}

inline void save_manifest(const ShardManifest& m) {
    const auto path = m.directory / kManifestFile;
    const auto tmp = m.directory / (std::string(kManifestFile) + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << manifest_to_json(m).dump(2) << '\n';
        if (!out) throw LibraryError(LibraryErrc::io_failure, "cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw LibraryError(LibraryErrc::io_failure, "cannot write " + path.string());
}

inline ShardManifest load_manifest(const std::filesystem::path& directory) {
    const auto path = directory / kManifestFile;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LibraryError(LibraryErrc::io_failure, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LibraryError(LibraryErrc::bad_manifest, path.string() + ": " + e.what());
    }
    return manifest_from_json(j, directory);
}

namespace detail {

inline std::filesystem::path shard_file_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "shard-%04zu.fps", index);
    return buf;
}

/// Size of shard `i` when `total` records are split contiguously into `k`
/// shards; the first total%k shards carry one extra record.
inline std::uint64_t balanced_size(std::uint64_t total, std::size_t k, std::size_t i) {
    return total / k + (i < total % k ? 1 : 0);
}

}  // namespace detail

/// Splits encoded records from `source` into `shard_count` contiguous shards
/// under `out_dir` and writes the manifest. `source(buffer)` fills whole
/// records and returns the count, 0 at end.
template <typename Source>
ShardManifest write_shards(Source&& source, std::uint64_t total, std::size_t shard_count,
                           const std::filesystem::path& out_dir) {
    if (shard_count == 0) throw std::invalid_argument("shard_count must be at least 1");
    std::filesystem::create_directories(out_dir);

    ShardManifest manifest;
    manifest.directory = out_dir;
    std::vector<std::byte> buffer(ShardReader::kBlockRecords * shard_format::kRecordSize);
    for (std::size_t i = 0; i < shard_count; ++i) {
        ShardWriter writer(out_dir / detail::shard_file_name(i), shard_label(i));
        std::uint64_t remaining = detail::balanced_size(total, shard_count, i);
        while (remaining > 0) {
            const auto want = std::min<std::uint64_t>(remaining, ShardReader::kBlockRecords);
            const auto got = source(std::span(buffer).first(want * shard_format::kRecordSize));
            if (got == 0) throw LibraryError(LibraryErrc::io_failure, "record source ended early");
            writer.append_raw(std::span(buffer).first(got * shard_format::kRecordSize));
            remaining -= got;
        }
        manifest.shards.push_back(writer.finish());
        manifest.total_records += manifest.shards.back().record_count;
    }
    save_manifest(manifest);
    return manifest;
}

inline ShardManifest build_shards(std::span<const LibraryRecord> records, std::size_t shard_count,
                                  const std::filesystem::path& out_dir) {
    std::size_t next = 0;
    auto source = [&](std::span<std::byte> buffer) -> std::size_t {
        const std::size_t n = std::min(buffer.size() / shard_format::kRecordSize, records.size() - next);
        for (std::size_t i = 0; i < n; ++i) {
            shard_format::encode_record(
                records[next + i],
                std::span<std::byte, shard_format::kRecordSize>(buffer.data() + i * shard_format::kRecordSize,
                                                                shard_format::kRecordSize));
        }
        next += n;
        return n;
    };
    return write_shards(source, records.size(), shard_count, out_dir);
}

/// Builds a sharded library from a text library stream.
///
/// The text is parsed completely into a spill file first, so a parse error
/// leaves no shards and no manifest behind, and memory stays bounded.
inline ShardManifest build_shards(std::istream& input, std::size_t shard_count,
                                  const std::filesystem::path& out_dir) {
    if (shard_count == 0) throw std::invalid_argument("shard_count must be at least 1");
    std::filesystem::create_directories(out_dir);
    const auto spill_path = out_dir / ".ingest.tmp";

    struct SpillGuard {
        std::filesystem::path path;
        ~SpillGuard() {
            std::error_code ec;
            std::filesystem::remove(path, ec);
        }
    } guard{spill_path};

    std::uint64_t total = 0;
    {
        auto spill = detail::open_file(spill_path, "wb");
        std::vector<std::byte> buffer;
        buffer.reserve(ShardReader::kBlockRecords * shard_format::kRecordSize);
        auto flush = [&] {
            if (!buffer.empty() && std::fwrite(buffer.data(), 1, buffer.size(), spill.get()) != buffer.size())
                throw LibraryError(LibraryErrc::io_failure, "cannot write " + spill_path.string());
            buffer.clear();
        };
        total = read_library_text(input, [&](const LibraryRecord& rec) {
            std::array<std::byte, shard_format::kRecordSize> bytes;
            shard_format::encode_record(rec, bytes);
            buffer.insert(buffer.end(), bytes.begin(), bytes.end());
            if (buffer.size() >= buffer.capacity()) flush();
        });
        flush();
        if (std::fflush(spill.get()) != 0)
            throw LibraryError(LibraryErrc::io_failure, "cannot write " + spill_path.string());
    }

    auto spill = detail::open_file(spill_path, "rb");
    auto source = [&](std::span<std::byte> buffer) -> std::size_t {
        const auto got = std::fread(buffer.data(), 1, buffer.size(), spill.get());
        return got / shard_format::kRecordSize;
    };
    return write_shards(source, total, shard_count, out_dir);
}

/// Writes every record of the library, in shard order, as text lines.
inline std::uint64_t dump_library_text(const ShardManifest& manifest, std::ostream& out) {
    std::uint64_t n = 0;
    for (const auto& shard : manifest.shards) {
        ShardReader reader(shard);
        reader.for_each([&](const LibraryRecord& rec) {
            out << write_library_line(rec) << '\n';
            ++n;
        });
    }
    return n;
}

// ---------------------------------------------------------------------------
// Validation.

enum class ViolationKind {
    duplicate_path,
    sum_mismatch,
    missing_file,
    bad_header,
    count_mismatch,
    truncated_file,
    checksum_mismatch,
};

inline std::string_view to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::duplicate_path: return "duplicate_path";
        case ViolationKind::sum_mismatch: return "sum_mismatch";
        case ViolationKind::missing_file: return "missing_file";
        case ViolationKind::bad_header: return "bad_header";
        case ViolationKind::count_mismatch: return "count_mismatch";
        case ViolationKind::truncated_file: return "truncated_file";
        case ViolationKind::checksum_mismatch: return "checksum_mismatch";
    }
    return "unknown";
}

struct Violation {
    ViolationKind kind;
    std::filesystem::path path;  // empty for manifest-level violations
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const noexcept { return violations.empty(); }
};

/// Checks the manifest against the files on disk; every violation found is
/// reported rather than stopping at the first.
inline ValidationReport validate_manifest(const ShardManifest& manifest) {
    ValidationReport report;
    auto add = [&](ViolationKind kind, const std::filesystem::path& path, std::string message) {
        report.violations.push_back({kind, path, std::move(message)});
    };

    std::set<std::filesystem::path> seen;
    std::uint64_t sum = 0;
    for (const auto& shard : manifest.shards) {
        sum += shard.record_count;
        if (!seen.insert(shard.path.lexically_normal()).second) {
            add(ViolationKind::duplicate_path, shard.path, "shard path listed more than once");
        }
    }
    if (sum != manifest.total_records) {
        add(ViolationKind::sum_mismatch, {},
            "total_records is " + std::to_string(manifest.total_records) + " but shards sum to " +
                std::to_string(sum));
    }

    for (const auto& shard : manifest.shards) {
        if (!std::filesystem::exists(shard.path)) {
            add(ViolationKind::missing_file, shard.path, "shard file is missing: " + shard.path.string());
            continue;
        }
        try {
            ShardReader reader(shard);
            if (reader.record_count() != shard.record_count) {
                add(ViolationKind::count_mismatch, shard.path,
                    "header declares " + std::to_string(reader.record_count()) + " records, manifest " +
                        std::to_string(shard.record_count));
            }
            std::vector<std::byte> buffer(ShardReader::kBlockRecords * shard_format::kRecordSize);
            while (reader.read_raw(buffer) != 0) {
            }
        } catch (const LibraryError& e) {
            switch (e.code()) {
                case LibraryErrc::bad_magic:
                case LibraryErrc::version_mismatch:
                    add(ViolationKind::bad_header, shard.path, e.what());
                    break;
                case LibraryErrc::truncated_file:
                    add(ViolationKind::truncated_file, shard.path, e.what());
                    break;
                case LibraryErrc::checksum_mismatch:
                    add(ViolationKind::checksum_mismatch, shard.path, e.what());
                    break;
                default:
                    add(ViolationKind::missing_file, shard.path, e.what());
                    break;
            }
        }
    }
    return report;
}

}  // namespace fpscreen
