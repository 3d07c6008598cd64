#include <cctype>
#include <cmath>
#include <chrono>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "spass/service.hpp"

namespace spass::service {

void RequestLog::write(const std::string& method, const std::string& path, int status, const std::string& user,
                       double millis, std::size_t bytes) {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
    nlohmann::ordered_json j;
    j["ts_ms"] = ms;
    j["method"] = method;
    j["path"] = path;
    j["status"] = status;
    j["user"] = user.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(user);
    j["duration_ms"] = std::round(millis * 1000.0) / 1000.0;
    j["bytes"] = bytes;
    std::lock_guard lock(mu_);
    out_ << j.dump() << '\n';
    out_.flush();
}

struct Server::Impl {
    Api& api;
    ServiceConfig cfg;
    RequestLog& log;
    httplib::Server svr;
    std::thread thread;

    Impl(Api& a, const ServiceConfig& c, RequestLog& l) : api(a), cfg(c), log(l) {
        svr.set_payload_max_length(cfg.max_upload_bytes + (1u << 20));
        if (!cfg.static_dir.empty()) svr.set_mount_point("/ui", cfg.static_dir.string());
        auto handler = [this](const httplib::Request& hreq, httplib::Response& hres) { serve(hreq, hres); };
        const std::string any = R"(/.*)";
        svr.Get(any, handler);
        svr.Post(any, handler);
        svr.Put(any, handler);
        svr.Delete(any, handler);
        svr.Patch(any, handler);
    }

    void serve(const httplib::Request& hreq, httplib::Response& hres) {
        const auto start = std::chrono::steady_clock::now();
        Request req;
        req.method = hreq.method;
        req.path = hreq.path;
        for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
        for (const auto& [k, v] : hreq.headers) {
            std::string lower = k;
            for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            req.headers.emplace(lower, v);
        }
        if (hreq.is_multipart_form_data()) {
            if (hreq.has_file("file")) req.body = hreq.get_file_value("file").content;
        } else {
            req.body = hreq.body;
        }
        const Response res = api.handle(req);
        hres.status = res.status;
        for (const auto& [k, v] : res.headers) hres.set_header(k, v);
        hres.set_content(res.body, res.content_type);

        const auto who = api.principal(req);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        log.write(req.method, req.path, res.status, who ? who->user : "", ms, res.body.size());
    }
};

Server::Server(Api& api, const ServiceConfig& cfg, RequestLog& log) : impl_(std::make_unique<Impl>(api, cfg, log)) {}

Server::~Server() { stop(); }

bool Server::listen() { return impl_->svr.listen(impl_->cfg.host, impl_->cfg.port); }

int Server::start_background() {
    const int port = impl_->svr.bind_to_any_port(impl_->cfg.host);
    if (port < 0) return port;
    impl_->thread = std::thread([this] { impl_->svr.listen_after_bind(); });
    impl_->svr.wait_until_ready();
    return port;
}

void Server::stop() {
    impl_->svr.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace spass::service
