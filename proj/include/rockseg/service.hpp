#pragma once

#include "rockseg/error.hpp"
#include "rockseg/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

namespace rockseg {

// Error surfaced to HTTP clients.
struct ApiError : std::runtime_error {
    int status;
    std::string code;
    std::string field;

    ApiError(int status, std::string code, const std::string& message, std::string field = {})
        : std::runtime_error(message), status(status), code(std::move(code)), field(std::move(field)) {}
};

// HTTP status for a library error code.
int http_status(ErrorCode code);

using Query = std::map<std::string, std::string>;

struct Session;
struct Job;

// Session store plus per-session FIFO job workers. Every method is
// thread-safe and throws ApiError.
class Service {
public:
    explicit Service(std::filesystem::path data_dir);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    const std::filesystem::path& data_dir() const noexcept { return data_dir_; }

    // POST /volume
    Json create_session(const Json& body);
    Json session_info(const std::string& sid) const;

    // GET /slice/{z}
    std::string render_slice(const std::string& sid, long z, const Query& q) const;

    // PUT /roi
    Json set_roi(const std::string& sid, const Json& body);

    // PUT/GET /training-table
    Json set_training_table(const std::string& sid, const Json& body);
    Json training_table(const std::string& sid) const;

    // /jobs
    Json submit_job(const std::string& sid, const Json& body);
    Json job(const std::string& id) const;
    Json jobs(const std::string& sid) const;
    Json cancel_job(const std::string& id);
    // True once the job reached a terminal state.
    bool wait_job(const std::string& id, std::chrono::milliseconds timeout) const;

    // GET /metrics/{labels}
    Json metrics(const std::string& sid, const std::string& labels, const Query& q) const;

    // GET /export/{artifact}
    ExportPayload export_artifact(const std::string& sid, const std::string& artifact, const Query& q) const;

private:
    std::shared_ptr<Session> session(const std::string& sid) const;
    std::shared_ptr<Job> find_job(const std::string& id) const;
    void worker(std::shared_ptr<Session> s);
    void run_job(Session& s, Job& job);

    std::filesystem::path data_dir_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
};

// JSON-over-HTTP front end of a Service.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    // Binds host:port (port 0 picks a free one) and returns the port.
    int bind(const std::string& host, int port);
    // Serves until stop(); call after bind().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// "host:port" or ":port" or "port".
std::pair<std::string, int> parse_bind_address(const std::string& s);

}  // namespace rockseg
