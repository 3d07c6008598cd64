#pragma once

// HTTP/JSON front end over a Pipeline.
//
// Routing and response shaping live in Api::handle, which takes a
// transport-neutral request; Server binds it to cpp-httplib.

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "spass/pipeline.hpp"

namespace spass::service {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Role { kReviewer, kAdmin };
const char* to_string(Role r);

struct Principal {
    std::string user;
    Role role = Role::kReviewer;
};

// token -> principal. File format: {"<token>": {"user": "...", "role": "admin"|"reviewer"}, ...}
using TokenTable = std::map<std::string, Principal>;
TokenTable parse_tokens(const std::string& json);
TokenTable load_tokens(const std::filesystem::path& path);

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "spass-data";
    std::filesystem::path tokens_path;   // required to serve
    std::filesystem::path static_dir;    // mounted at /ui when set
    std::filesystem::path initial_weights;  // W_0 for a new data directory
    std::filesystem::path log_path;      // request log; stderr when empty
    std::size_t page_size = 24;
    std::size_t max_page_size = 200;
    std::size_t max_upload_bytes = 32u << 20;
    pipeline::PipelineConfig pipeline;

    ServiceConfig();
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
std::optional<std::string> process_env(const std::string& name);

// Reads the JSON config file (if given) and applies SPASS_PORT,
// SPASS_DATA_DIR and SPASS_TOKENS. Relative paths in the file resolve
// against the file's directory.
ServiceConfig load_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env = process_env);
ServiceConfig parse_config(const std::string& json, const std::filesystem::path& base_dir);

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::map<std::string, std::string> headers;  // lower-case names
    std::string body;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
};

class Api {
public:
    Api(pipeline::Pipeline& pipeline, TokenTable tokens, ServiceConfig cfg);

    Response handle(const Request& req);
    // Principal named by the bearer token, if any.
    std::optional<Principal> principal(const Request& req) const;

private:
    Response dispatch(const Request& req, const Principal& who);

    pipeline::Pipeline& p_;
    TokenTable tokens_;
    ServiceConfig cfg_;
};

// One JSON object per line.
class RequestLog {
public:
    explicit RequestLog(std::ostream& out) : out_(out) {}
    void write(const std::string& method, const std::string& path, int status, const std::string& user,
               double millis, std::size_t bytes);

private:
    std::mutex mu_;
    std::ostream& out_;
};

class Server {
public:
    Server(Api& api, const ServiceConfig& cfg, RequestLog& log);
    ~Server();
    // Binds and serves until stop(); returns false if the bind fails.
    bool listen();
    // Binds an ephemeral port and serves on a background thread.
    int start_background();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace spass::service
