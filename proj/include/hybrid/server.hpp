#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hybrid/pipeline.hpp"

namespace hybrid {

inline constexpr int kProtocolVersion = 1;

/// First line sent on every connection.
std::string server_banner();

/// Request handling without transport. Requests are JSON objects
/// {"id": n, "op": ..., ...}; responses echo the id and carry
/// "status": "ok" | "error".
///
///   ping
///   knn_query       {"query": {entry} | "text": s | "vector": [..] | {"terms":[..],"values":[..]}, "k": n}
///   score           {"query": {entry}, "docnos": [..]}
///   pipeline_query  {"query": {entry} | "text": s, "k": n}
class RequestHandler {
   public:
    explicit RequestHandler(std::shared_ptr<const Pipeline> pipeline) : pipeline_(std::move(pipeline)) {}

    [[nodiscard]] nlohmann::json handle(const nlohmann::json &request) const;
    /// Parses one line; malformed input yields an error response.
    [[nodiscard]] std::string handle_line(const std::string &line) const;

   private:
    [[nodiscard]] nlohmann::json knn_query(const nlohmann::json &request) const;
    [[nodiscard]] nlohmann::json score(const nlohmann::json &request) const;
    [[nodiscard]] nlohmann::json pipeline_query(const nlohmann::json &request) const;

    std::shared_ptr<const Pipeline> pipeline_;
};

/// Newline-delimited JSON over TCP, one thread per connection.
class QueryServer {
   public:
    explicit QueryServer(std::shared_ptr<const Pipeline> pipeline);
    ~QueryServer();
    QueryServer(const QueryServer &) = delete;
    QueryServer &operator=(const QueryServer &) = delete;

    /// Binds and starts accepting in the background. Port 0 picks a free
    /// port. Throws std::runtime_error on bind failure.
    void start(const std::string &host, std::uint16_t port);
    [[nodiscard]] std::uint16_t port() const { return port_; }
    /// Blocks until stop() is called from another thread or a signal.
    void wait();
    void stop();

   private:
    void accept_loop();
    void serve_connection(int fd);

    RequestHandler handler_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::mutex conn_mu_;
    std::vector<std::thread> workers_;
    std::vector<int> open_fds_;
};

}  // namespace hybrid
