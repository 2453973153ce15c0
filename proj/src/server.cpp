#include "hybrid/server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace hybrid {

std::string server_banner()
{
    nlohmann::ordered_json b;
    b["server"] = "hybrid-retriever";
    b["proto"] = kProtocolVersion;
    return b.dump();
}

namespace {

class RequestError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

nlohmann::json error_response(const nlohmann::json &id, const std::string &message)
{
    return {{"id", id}, {"status", "error"}, {"message", message}};
}

QueryEntry query_from(const nlohmann::json &req)
{
    if (req.contains("query")) {
        try {
            return entry_from_json(req.at("query"));
        } catch (const std::invalid_argument &e) {
            throw RequestError(std::string("bad query: ") + e.what());
        }
    }
    if (req.contains("text")) {
        if (!req.at("text").is_string()) {
            throw RequestError("\"text\" must be a string");
        }
        QueryEntry q;
        q.docno = "query";
        q.fields["text"] = req.at("text").get<std::string>();
        return q;
    }
    throw RequestError("request needs \"query\" or \"text\"");
}

std::size_t k_from(const nlohmann::json &req)
{
    if (!req.contains("k")) {
        return 10;
    }
    const auto &k = req.at("k");
    if (!k.is_number_integer() || k.get<long long>() < 1) {
        throw RequestError("\"k\" must be a positive integer");
    }
    return k.get<std::size_t>();
}

AnyVector vector_from(const nlohmann::json &v)
{
    try {
        if (v.is_array()) {
            return DenseVector(v.get<std::vector<float>>());
        }
        if (v.is_object()) {
            auto terms = v.at("terms").get<std::vector<TermId>>();
            auto values = v.at("values").get<std::vector<float>>();
            if (terms.size() != values.size()) {
                throw RequestError("\"terms\" and \"values\" differ in length");
            }
            std::vector<SparseEntry> entries;
            for (std::size_t i = 0; i < terms.size(); ++i) {
                entries.push_back({terms[i], values[i]});
            }
            return SparseVector::from_unsorted(std::move(entries));
        }
    } catch (const nlohmann::json::exception &e) {
        throw RequestError(std::string("bad vector: ") + e.what());
    } catch (const std::invalid_argument &e) {
        throw RequestError(std::string("bad vector: ") + e.what());
    }
    throw RequestError("\"vector\" must be an array or {\"terms\", \"values\"}");
}

nlohmann::json hits_json(std::span<const RankedDoc> docs, std::size_t k)
{
    auto hits = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min(k, docs.size()); ++i) {
        hits.push_back(nlohmann::json::array({docs[i].docno, docs[i].score}));
    }
    return hits;
}

}  // namespace

nlohmann::json RequestHandler::handle(const nlohmann::json &request) const
{
    nlohmann::json id = nullptr;
    try {
        if (!request.is_object()) {
            throw RequestError("request must be a JSON object");
        }
        if (request.contains("id")) {
            id = request.at("id");
        }
        if (!request.contains("op") || !request.at("op").is_string()) {
            throw RequestError("request needs a string \"op\"");
        }
        const auto op = request.at("op").get<std::string>();
        nlohmann::json resp;
        if (op == "ping") {
            resp = nlohmann::json::object();
        } else if (op == "knn_query") {
            resp = knn_query(request);
        } else if (op == "score") {
            resp = score(request);
        } else if (op == "pipeline_query") {
            resp = pipeline_query(request);
        } else {
            throw RequestError("unknown op '" + op + "'");
        }
        resp["id"] = id;
        resp["status"] = "ok";
        return resp;
    } catch (const std::exception &e) {
        return error_response(id, e.what());
    }
}

std::string RequestHandler::handle_line(const std::string &line) const
{
    nlohmann::json request;
    try {
        request = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
        return error_response(nullptr, std::string("malformed JSON: ") + e.what()).dump();
    }
    return handle(request).dump();
}

nlohmann::json RequestHandler::knn_query(const nlohmann::json &req) const
{
    const auto k = k_from(req);
    std::vector<Candidate> cands;
    if (req.contains("vector")) {
        const auto *knn = dynamic_cast<const KnnProvider *>(&pipeline_->provider());
        if (knn == nullptr) {
            throw RequestError("raw vector queries need a k-NN candidate provider");
        }
        auto q = vector_from(req.at("vector"));
        if (!knn->space().accepts(q)) {
            throw RequestError("query vector does not fit space '" + knn->space().name() + "'");
        }
        cands = knn->search(q, k);
    } else {
        cands = pipeline_->provider().candidates(query_from(req), k);
    }
    std::vector<RankedDoc> docs;
    for (const auto &c : cands) {
        docs.push_back({pipeline_->docnos().docno(c.doc), c.score});
    }
    return {{"hits", hits_json(docs, k)}};
}

nlohmann::json RequestHandler::score(const nlohmann::json &req) const
{
    const auto &stage = pipeline_->final_stage() ? pipeline_->final_stage() : pipeline_->interm_stage();
    if (!stage) {
        throw RequestError("the experiment has no re-ranking model to score with");
    }
    auto query = query_from(req);
    if (!req.contains("docnos") || !req.at("docnos").is_array()) {
        throw RequestError("score needs a \"docnos\" array");
    }
    std::vector<DocId> ids;
    for (const auto &d : req.at("docnos")) {
        if (!d.is_string()) {
            throw RequestError("docnos must be strings");
        }
        auto id = pipeline_->docnos().find_docno(d.get<std::string>());
        if (!id) {
            throw RequestError("unknown docno '" + d.get<std::string>() + "'");
        }
        ids.push_back(*id);
    }
    auto features = stage->extractors->extract(query, ids, pipeline_->docnos());
    auto ranked = rank_with_model(stage->model, features);
    return {{"hits", hits_json(ranked.docs, ranked.docs.size())}};
}

nlohmann::json RequestHandler::pipeline_query(const nlohmann::json &req) const
{
    const auto k = k_from(req);
    auto result = pipeline_->run(query_from(req));
    auto stages = nlohmann::json::array();
    for (const auto &s : result.stages) {
        stages.push_back({{"name", s.name}, {"input", s.input}, {"output", s.output}});
    }
    return {{"hits", hits_json(result.docs, k)}, {"stages", stages}};
}

// Transport

namespace {

bool send_all(int fd, const std::string &data)
{
    std::size_t sent = 0;
    while (sent < data.size()) {
        auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n <= 0) {
            return false;
        }
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

}  // namespace

QueryServer::QueryServer(std::shared_ptr<const Pipeline> pipeline) : handler_(std::move(pipeline)) {}

QueryServer::~QueryServer()
{
    stop();
}

void QueryServer::start(const std::string &host, std::uint16_t port)
{
    if (running_) {
        throw std::logic_error("server already running");
    }
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo *res = nullptr;
    const auto service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0) {
        throw std::runtime_error("cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no address";
    for (auto *ai = res; ai != nullptr; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            last_error = std::strerror(errno);
            continue;
        }
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
            listen_fd_ = fd;
            break;
        }
        last_error = std::strerror(errno);
        ::close(fd);
    }
    ::freeaddrinfo(res);
    if (listen_fd_ < 0) {
        throw std::runtime_error("cannot bind " + host + ":" + service + ": " + last_error);
    }
    sockaddr_storage addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr *>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6 *>(&addr)->sin6_port
                                             : reinterpret_cast<sockaddr_in *>(&addr)->sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void QueryServer::accept_loop()
{
    while (running_) {
        pollfd p{listen_fd_, POLLIN, 0};
        int rc = ::poll(&p, 1, 100);
        if (rc <= 0 || !running_) {
            continue;
        }
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            continue;
        }
        std::lock_guard lock(conn_mu_);
        open_fds_.push_back(fd);
        workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void QueryServer::serve_connection(int fd)
{
    if (send_all(fd, server_banner() + "\n")) {
        std::string buffer;
        char chunk[4096];
        bool open = true;
        while (open) {
            auto n = ::recv(fd, chunk, sizeof(chunk), 0);
            if (n < 0 && errno == EINTR) {
                continue;
            }
            if (n <= 0) {
                break;
            }
            buffer.append(chunk, static_cast<std::size_t>(n));
            std::size_t start = 0;
            for (auto nl = buffer.find('\n', start); nl != std::string::npos; nl = buffer.find('\n', start)) {
                std::string line = buffer.substr(start, nl - start);
                start = nl + 1;
                if (!line.empty() && line.back() == '\r') {
                    line.pop_back();
                }
                if (line.find_first_not_of(" \t") == std::string::npos) {
                    continue;
                }
                if (!send_all(fd, handler_.handle_line(line) + "\n")) {
                    open = false;
                    break;
                }
            }
            buffer.erase(0, start);
        }
    }
    std::lock_guard lock(conn_mu_);
    if (auto it = std::find(open_fds_.begin(), open_fds_.end(), fd); it != open_fds_.end()) {
        open_fds_.erase(it);
        ::close(fd);
    }
}

void QueryServer::wait()
{
    while (running_) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
}

void QueryServer::stop()
{
    running_ = false;
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(conn_mu_);
        for (int fd : open_fds_) {
            ::shutdown(fd, SHUT_RDWR);
        }
        workers.swap(workers_);
    }
    for (auto &w : workers) {
        w.join();
    }
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

}  // namespace hybrid
