#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "fpscreen/jobqueue.hpp"
#include "fpscreen/libstore.hpp"
#include "fpscreen/molfile.hpp"

namespace fpscreen {

using json = nlohmann::json;

struct ListenAddress {
    std::string host = "127.0.0.1";
    int port = 8080;
};

/// "host:port", ":port" or "port". Throws std::invalid_argument.
inline ListenAddress parse_listen_address(std::string_view text) {
    ListenAddress addr;
    std::string_view port = text;
    if (const auto colon = text.rfind(':'); colon != std::string_view::npos) {
        addr.host = std::string(text.substr(0, colon));
        port = text.substr(colon + 1);
        if (addr.host.empty()) addr.host = "127.0.0.1";
        if (addr.host.size() > 2 && addr.host.front() == '[' && addr.host.back() == ']')
            addr.host = addr.host.substr(1, addr.host.size() - 2);
    }
    if (port.empty() || port.size() > 5 || port.find_first_not_of("0123456789") != std::string_view::npos)
        throw std::invalid_argument("invalid listen address '" + std::string(text) + "': bad port");
    addr.port = std::stoi(std::string(port));
    if (addr.port > 65535)
        throw std::invalid_argument("invalid listen address '" + std::string(text) + "': port out of range");
    return addr;
}

struct ServerConfig {
    std::string cors_origin;  // empty disables CORS headers
    std::size_t max_results = 100000;
};

namespace api {

inline constexpr std::string_view kPrefix = "/api/v1";

inline std::int64_t epoch_ms(std::chrono::system_clock::time_point t) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

inline json error_body(std::string_view code, std::string_view message, json detail = nullptr) {
    json body{{"code", code}, {"message", message}};
    body["detail"] = detail.is_null() ? json::object() : std::move(detail);
    return body;
}

inline json status_body(const JobSnapshot& s) {
    json shards = json::array();
    for (const auto& sh : s.shards) shards.push_back({{"label", sh.label}, {"done", sh.done}, {"total", sh.total}});
    auto opt_ms = [](const auto& t) -> json { return t ? json(epoch_ms(*t)) : json(nullptr); };
    json body{{"job_id", s.id},
              {"state", to_string(s.state)},
              {"progress", s.progress()},
              {"shards", std::move(shards)},
              {"n", s.n},
              {"timestamps",
               {{"submitted", epoch_ms(s.submitted_at)}, {"started", opt_ms(s.started_at)},
                {"finished", opt_ms(s.finished_at)}}}};
    if (s.error) body["error"] = *s.error;
    return body;
}

inline json results_body(const std::string& id, const JobSnapshot& s, const JobResult& r) {
    json hits = json::array();
    for (const auto& h : r.top.hits) hits.push_back({{"cid", h.cid}, {"distance", h.distance}});
    return {{"job_id", id}, {"hits", std::move(hits)}, {"n", s.n}, {"elapsed_ms", r.elapsed.count()}};
}

inline json library_body(const ShardManifest& m) {
    json shards = json::array();
    for (const auto& s : m.shards) shards.push_back({{"label", s.dataset_label}, {"record_count", s.record_count}});
    return {{"total_records", m.total_records}, {"shards", std::move(shards)}, {"format_version", m.format_version}};
}

/// Thrown inside handlers; turned into an error response.
struct ApiError {
    int status;
    std::string code;
    std::string message;
    json detail = json::object();
};

inline ApiError from_job_error(const JobError& e) {
    json detail = json::object();
    for (const auto& [k, v] : e.detail()) detail[k] = v;
    switch (e.code()) {
        case JobErrc::invalid_request: return {400, "invalid_request", e.what(), detail};
        case JobErrc::queue_full: return {429, "queue_full", e.what(), detail};
        case JobErrc::unknown_job: return {404, "unknown_job", e.what(), detail};
        case JobErrc::not_finished: return {409, "not_finished", e.what(), detail};
        case JobErrc::job_failed: return {500, "internal", e.what(), detail};
        case JobErrc::unavailable: return {503, "internal", e.what(), detail};
    }
    return {500, "internal", e.what(), detail};
}

struct ParsedSearch {
    JobRequest request;
    std::optional<json> warning;
};

/// Validates a POST /search body and converts it into a queue request.
inline ParsedSearch parse_search_body(const std::string& text, std::size_t max_results) {
    auto invalid = [](std::string message, json detail = json::object()) {
        return ApiError{400, "invalid_request", std::move(message), std::move(detail)};
    };
    json body;
    try {
        body = json::parse(text);
    } catch (const json::parse_error& e) {
        throw invalid("request body is not valid JSON", {{"body", e.what()}});
    }
    if (!body.is_object()) throw invalid("request body must be a JSON object");

    const bool has_query = body.contains("query") && !body["query"].is_null();
    const bool has_batch = body.contains("batch") && !body["batch"].is_null();
    if (has_query == has_batch)
        throw invalid("exactly one of 'query' or 'batch' is required",
                      {{"query", has_query ? "present" : "absent"}, {"batch", has_batch ? "present" : "absent"}});

    std::size_t n = 30;
    if (body.contains("n") && !body["n"].is_null()) {
        const auto& jn = body["n"];
        if (!jn.is_number_integer() || jn.get<std::int64_t>() < 1 ||
            static_cast<std::uint64_t>(jn.get<std::int64_t>()) > max_results)
            throw invalid("invalid 'n'", {{"n", "must be an integer in 1.." + std::to_string(max_results)}});
        n = jn.get<std::size_t>();
    }

    std::string kind = "bitstring";
    if (body.contains("query_kind") && !body["query_kind"].is_null()) {
        if (!body["query_kind"].is_string()) throw invalid("invalid 'query_kind'", {{"query_kind", "must be a string"}});
        kind = body["query_kind"].get<std::string>();
        if (kind != "bitstring" && kind != "molfile")
            throw invalid("invalid 'query_kind'", {{"query_kind", "must be 'bitstring' or 'molfile'"}});
    }

    ParsedSearch out;
    try {
        if (has_batch) {
            if (kind != "bitstring")
                throw invalid("batch entries must be bitstrings", {{"query_kind", "batch requires 'bitstring'"}});
            const auto& jb = body["batch"];
            if (!jb.is_array() || jb.empty())
                throw invalid("invalid 'batch'", {{"batch", "must be a non-empty array of bitstrings"}});
            std::vector<std::string> bits;
            for (std::size_t i = 0; i < jb.size(); ++i) {
                if (!jb[i].is_string())
                    throw invalid("invalid 'batch'", {{"batch[" + std::to_string(i) + "]", "must be a string"}});
                bits.push_back(jb[i].get<std::string>());
            }
            out.request = make_request(bits, true, n);
            return out;
        }
        const auto& jq = body["query"];
        if (!jq.is_string()) throw invalid("invalid 'query'", {{"query", "must be a string"}});
        if (kind == "bitstring") {
            out.request = make_request({jq.get<std::string>()}, false, n);
            return out;
        }
        Molecule mol;
        try {
            mol = parse_molfile(jq.get<std::string>());
        } catch (const MolfileError& e) {
            throw invalid("query molfile could not be parsed", {{"query", e.what()}});
        }
        const auto coverage = compute_subset_keys(mol);
        out.request.queries = {coverage.computed};
        out.request.n = n;
        const auto unsupported = KeyCoverage::unsupported_keys();
        out.warning = json{{"code", "partial_key_coverage"},
                           {"message", "molfile queries compute only " + std::to_string(kSupportedKeys.size()) +
                                           " of 166 keys; the listed keys are always 0 in the query"},
                           {"unsupported_keys", unsupported}};
        return out;
    } catch (const JobError& e) {
        throw from_job_error(e);
    }
}

}  // namespace api

/// HTTP facade over a job queue. A null queue means no library is loaded.
class ApiServer {
public:
    explicit ApiServer(JobQueue* queue, ServerConfig config = {}) : queue_(queue), config_(std::move(config)) {
        routes();
    }

    httplib::Server& http() noexcept { return http_; }

    /// Binds without serving. Returns false on failure.
    bool bind(const ListenAddress& addr) {
        if (addr.port == 0) {
            port_ = http_.bind_to_any_port(addr.host);
            return port_ > 0;
        }
        if (!http_.bind_to_port(addr.host, addr.port)) return false;
        port_ = addr.port;
        return true;
    }

    int port() const noexcept { return port_; }

    /// Serves until stop(); requires a successful bind().
    bool serve() { return http_.listen_after_bind(); }

    void stop() { http_.stop(); }

    void wait_until_ready() const { http_.wait_until_ready(); }

private:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void send_error(httplib::Response& res, const api::ApiError& e) {
        send(res, e.status, api::error_body(e.code, e.message, e.detail));
    }

    Handler guarded(Handler h) {
        return [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            try {
                h(req, res);
            } catch (const api::ApiError& e) {
                send_error(res, e);
            } catch (const JobError& e) {
                send_error(res, api::from_job_error(e));
            } catch (const std::exception& e) {
                send_error(res, {500, "internal", e.what()});
            }
        };
    }

    JobQueue& queue() {
        if (!queue_) throw api::ApiError{503, "internal", "no library is loaded"};
        return *queue_;
    }

    void routes() {
        const std::string p(api::kPrefix);

        http_.set_pre_routing_handler([this](const httplib::Request&, httplib::Response& res) {
            if (!config_.cors_origin.empty()) {
                res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
                res.set_header("Vary", "Origin");
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });

        http_.Options(p + "/.*", [this](const httplib::Request&, httplib::Response& res) {
            if (!config_.cors_origin.empty()) {
                res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
                res.set_header("Access-Control-Allow-Headers", "Content-Type");
                res.set_header("Access-Control-Expose-Headers", "Location");
                res.set_header("Access-Control-Max-Age", "600");
            }
            res.status = 204;
        });

        http_.Post(p + "/search", guarded([this, p](const httplib::Request& req, httplib::Response& res) {
            auto& q = queue();
            auto parsed = api::parse_search_body(req.body, config_.max_results);
            const auto id = q.submit(std::move(parsed.request));
            json body{{"job_id", id}};
            if (parsed.warning) body["warning"] = *parsed.warning;
            res.set_header("Location", p + "/jobs/" + id);
            send(res, 202, body);
        }));

        http_.Get(p + R"(/jobs/([0-9A-Za-z]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send(res, 200, api::status_body(queue().status(req.matches[1])));
        }));

        http_.Get(p + R"(/jobs/([0-9A-Za-z]+)/results)",
                  guarded([this](const httplib::Request& req, httplib::Response& res) {
                      auto& q = queue();
                      const std::string id = req.matches[1];
                      const auto snap = q.status(id);
                      if (snap.state == JobState::cancelled)
                          throw api::ApiError{409, "not_finished", "job was cancelled", {{"state", "cancelled"}}};
                      if (snap.state == JobState::failed)
                          throw api::ApiError{500, "internal", snap.error.value_or("search failed"),
                                              {{"state", "failed"}}};
                      if (snap.state != JobState::done)
                          throw api::ApiError{409, "not_finished", "job is " + std::string(to_string(snap.state)),
                                              {{"state", to_string(snap.state)}}};
                      send(res, 200, api::results_body(id, snap, q.results(id)));
                  }));

        http_.Delete(p + R"(/jobs/([0-9A-Za-z]+))",
                     guarded([this](const httplib::Request& req, httplib::Response& res) {
                         const std::string id = req.matches[1];
                         const auto state = queue().cancel(id);
                         send(res, 200, {{"job_id", id}, {"state", to_string(state)}});
                     }));

        http_.Get(p + "/library", guarded([this](const httplib::Request&, httplib::Response& res) {
            send(res, 200, api::library_body(queue().manifest()));
        }));

        // Unmatched routes and bodies httplib rejects on its own still get the error schema.
        http_.set_error_handler([this, p](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return;
            const int status = res.status;
            std::string_view code = status >= 500 ? "internal" : "invalid_request";
            if (status == 404 && req.path.starts_with(p + "/jobs/")) code = "unknown_job";
            send(res, status,
                 api::error_body(code, status == 404 ? "no such resource" : httplib::status_message(status)));
        });
    }

    JobQueue* queue_;
    ServerConfig config_;
    httplib::Server http_;
    int port_ = 0;
};

}  // namespace fpscreen
