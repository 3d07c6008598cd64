#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spass/downlink.hpp"
#include "spass/pipeline_json.hpp"
#include "spass/service.hpp"

namespace spass::service {

namespace fs = std::filesystem;
using pipeline::Json;

const char* to_string(Role r) { return r == Role::kAdmin ? "admin" : "reviewer"; }

TokenTable parse_tokens(const std::string& json) {
    TokenTable out;
    try {
        const auto j = nlohmann::json::parse(json);
        if (!j.is_object()) throw ConfigError("token table must be a JSON object");
        for (const auto& [token, v] : j.items()) {
            Principal p;
            p.user = v.at("user").get<std::string>();
            const std::string role = v.value("role", "reviewer");
            if (role == "admin") p.role = Role::kAdmin;
            else if (role == "reviewer") p.role = Role::kReviewer;
            else throw ConfigError("unknown role '" + role + "'");
            if (token.empty() || p.user.empty()) throw ConfigError("token and user must be non-empty");
            out.emplace(token, p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed token table: ") + e.what());
    }
    return out;
}

TokenTable load_tokens(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read token table " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_tokens(ss.str());
}

ServiceConfig::ServiceConfig() { pipeline.background_training = true; }

std::optional<std::string> process_env(const std::string& name) {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
}

namespace {

int parse_port(const std::string& s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0 || v > 65535) {
        throw ConfigError("invalid port '" + s + "'");
    }
    return v;
}

}  // namespace

ServiceConfig parse_config(const std::string& json, const fs::path& base_dir) {
    ServiceConfig cfg;
    auto path_of = [&](const nlohmann::json& v) {
        fs::path p = v.get<std::string>();
        return p.is_relative() ? base_dir / p : p;
    };
    try {
        const auto j = nlohmann::json::parse(json);
        for (const auto& [key, v] : j.items()) {
            if (key == "host") cfg.host = v.get<std::string>();
            else if (key == "port") cfg.port = parse_port(std::to_string(v.get<int>()));
            else if (key == "data_dir") cfg.data_dir = path_of(v);
            else if (key == "tokens") cfg.tokens_path = path_of(v);
            else if (key == "static_dir") cfg.static_dir = path_of(v);
            else if (key == "initial_weights") cfg.initial_weights = path_of(v);
            else if (key == "log") cfg.log_path = path_of(v);
            else if (key == "page_size") cfg.page_size = v.get<std::size_t>();
            else if (key == "max_page_size") cfg.max_page_size = v.get<std::size_t>();
            else if (key == "max_upload_bytes") cfg.max_upload_bytes = v.get<std::size_t>();
            else if (key == "delta") cfg.pipeline.delta = v.get<double>();
            else if (key == "auto_retrain") cfg.pipeline.auto_retrain = v.get<bool>();
            else if (key == "warm_start") cfg.pipeline.warm_start = v.get<bool>();
            else if (key == "seed") cfg.pipeline.seed = v.get<std::uint64_t>();
            else if (key == "train") {
                auto& t = cfg.pipeline.train;
                for (const auto& [k, x] : v.items()) {
                    if (k == "max_epochs") t.max_epochs = x.get<std::size_t>();
                    else if (k == "batch_size") t.batch_size = x.get<std::size_t>();
                    else if (k == "patience") t.patience = x.get<std::size_t>();
                    else if (k == "learning_rate") t.adam.learning_rate = x.get<double>();
                    else if (k == "dropout") t.dropout = x.get<double>();
                    else if (k == "validation_fraction") t.validation_fraction = x.get<double>();
                    else if (k == "seed") t.seed = x.get<std::uint64_t>();
                    else throw ConfigError("unknown train option '" + k + "'");
                }
            } else {
                throw ConfigError("unknown config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (cfg.page_size == 0 || cfg.page_size > cfg.max_page_size) throw ConfigError("page_size out of range");
    (void)pipeline::delta_to_ppm(cfg.pipeline.delta);
    return cfg;
}

ServiceConfig load_config(const std::optional<fs::path>& file, const EnvLookup& env) {
    ServiceConfig cfg;
    if (file) {
        std::ifstream in(*file, std::ios::binary);
        if (!in) throw ConfigError("cannot read config " + file->string());
        std::stringstream ss;
        ss << in.rdbuf();
        cfg = parse_config(ss.str(), file->parent_path());
    }
    if (auto v = env("SPASS_PORT")) cfg.port = parse_port(*v);
    if (auto v = env("SPASS_DATA_DIR")) cfg.data_dir = *v;
    if (auto v = env("SPASS_TOKENS")) cfg.tokens_path = *v;
    return cfg;
}

// ---- responses

namespace {

class HttpError : public std::runtime_error {
public:
    HttpError(int status, std::string code, const std::string& msg, Json extra = Json::object())
        : std::runtime_error(msg), status(status), code(std::move(code)), extra(std::move(extra)) {}
    int status;
    std::string code;
    Json extra;
};

Response json_response(int status, Json body) {
    Json out;
    out["schema_version"] = kSchemaVersion;
    for (auto& [k, v] : body.items()) out[k] = std::move(v);
    return {status, "application/json", out.dump(2) + "\n", {}};
}

Response error_response(int status, const std::string& code, const std::string& message, const Json& extra = {}) {
    Json body;
    body["error"] = {{"code", code}, {"message", message}};
    if (extra.is_object()) {
        for (const auto& [k, v] : extra.items()) body["error"][k] = v;
    }
    return json_response(status, std::move(body));
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') ++i;
        const auto j = path.find('/', i);
        const auto end = j == std::string::npos ? path.size() : j;
        if (end > i) out.push_back(path.substr(i, end - i));
        i = end;
    }
    return out;
}

nlohmann::json parse_body(const Request& req) {
    if (req.body.empty()) throw HttpError(400, "bad_request", "request body must be JSON");
    try {
        return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
        throw HttpError(400, "bad_request", "request body is not valid JSON");
    }
}

std::size_t query_size(const Request& req, const std::string& key, std::size_t fallback, std::size_t lo,
                       std::size_t hi) {
    auto it = req.query.find(key);
    if (it == req.query.end()) return fallback;
    std::size_t v = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < lo || v > hi) {
        throw HttpError(400, "bad_request",
                        key + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return v;
}

void require_admin(const Principal& who) {
    if (who.role != Role::kAdmin) throw HttpError(403, "forbidden", "admin role required");
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& field) {
    if (!j.is_array()) throw HttpError(400, "bad_request", field + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& v : j) {
        if (!v.is_string()) throw HttpError(400, "bad_request", field + " must be an array of strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

Json image_json(pipeline::Pipeline& p, const pipeline::ImageEntry& e) {
    Json j = pipeline::to_json(e);
    const auto caption = p.display_caption(e.id);
    j["status"] = "captioned";
    j["reviewed"] = p.training_target(e.id).has_value();
    j["caption"] = caption ? Json(caption->caption) : Json(nullptr);
    j["caption_id"] = caption ? Json(caption->id) : Json(nullptr);
    return j;
}

Json annotations_json(const std::vector<pipeline::Annotation>& anns) {
    Json out = Json::array();
    for (const auto& a : anns) out.push_back(pipeline::to_json(a));
    return out;
}

}  // namespace

Api::Api(pipeline::Pipeline& pipeline, TokenTable tokens, ServiceConfig cfg)
    : p_(pipeline), tokens_(std::move(tokens)), cfg_(std::move(cfg)) {}

std::optional<Principal> Api::principal(const Request& req) const {
    auto it = req.headers.find("authorization");
    const std::string prefix = "Bearer ";
    if (it == req.headers.end() || it->second.rfind(prefix, 0) != 0) return std::nullopt;
    auto t = tokens_.find(it->second.substr(prefix.size()));
    if (t == tokens_.end()) return std::nullopt;
    return t->second;
}

Response Api::handle(const Request& req) {
    try {
        const auto parts = split_path(req.path);
        if (parts.size() == 1 && parts[0] == "health") {
            if (req.method != "GET") throw HttpError(405, "method_not_allowed", "use GET");
            return json_response(200, {{"status", "ok"}});
        }
        const auto who = principal(req);
        if (!who) throw HttpError(401, "unauthorized", "missing or unknown bearer token");
        return dispatch(req, *who);
    } catch (const HttpError& e) {
        return error_response(e.status, e.code, e.what(), e.extra);
    } catch (const pipeline::DuplicateImageError& e) {
        return error_response(409, "duplicate_image", e.what(), {{"original_id", e.original_id}});
    } catch (const pipeline::DuplicateVoteError& e) {
        return error_response(409, "duplicate_vote", e.what());
    } catch (const pipeline::BusyError& e) {
        return error_response(409, "busy", e.what());
    } catch (const pipeline::ConditionError& e) {
        return error_response(409, "condition_not_met", e.what());
    } catch (const pipeline::NotFoundError& e) {
        return error_response(404, "not_found", e.what());
    } catch (const pipeline::InvalidInputError& e) {
        return error_response(400, "invalid_input", e.what());
    } catch (const text::ParameterError& e) {
        return error_response(400, "invalid_input", e.what());
    } catch (const downlink::ScenarioError& e) {
        return error_response(400, "invalid_scenario", e.what());
    } catch (const nlohmann::json::exception& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

Response Api::dispatch(const Request& req, const Principal& who) {
    const auto parts = split_path(req.path);
    const std::string& m = req.method;
    auto not_found = [&] { return HttpError(404, "not_found", "no route for " + req.path); };
    auto method_check = [&](std::initializer_list<const char*> allowed) {
        for (const char* a : allowed) {
            if (m == a) return;
        }
        throw HttpError(405, "method_not_allowed", m + " not supported on " + req.path);
    };
    if (parts.empty()) throw not_found();
    const std::string& root = parts[0];

    if (root == "me" && parts.size() == 1) {
        method_check({"GET"});
        return json_response(200, {{"user", who.user}, {"role", to_string(who.role)}});
    }

    if (root == "images") {
        if (parts.size() == 1) {
            method_check({"GET", "POST"});
            if (m == "POST") {
                if (req.body.size() > cfg_.max_upload_bytes) throw HttpError(413, "too_large", "upload too large");
                const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(req.body.data()),
                                                          req.body.size());
                const auto r = p_.ingest(bytes, who.user, true);
                return json_response(201, {{"image", image_json(p_, r.image)},
                                           {"annotations", annotations_json({r.machine})}});
            }
            std::optional<std::string> task_set;
            if (auto it = req.query.find("task_set"); it != req.query.end()) task_set = it->second;
            std::string order = task_set ? "score" : "id";
            if (auto it = req.query.find("order"); it != req.query.end()) order = it->second;
            if (order != "score" && order != "id") throw HttpError(400, "bad_request", "order must be score or id");
            if (order == "score" && !task_set) throw HttpError(400, "bad_request", "order=score needs task_set");
            std::optional<bool> reviewed;
            if (auto it = req.query.find("reviewed"); it != req.query.end()) {
                if (it->second != "true" && it->second != "false") {
                    throw HttpError(400, "bad_request", "reviewed must be true or false");
                }
                reviewed = it->second == "true";
            }
            const std::size_t page = query_size(req, "page", 1, 1, 1u << 30);
            const std::size_t page_size = query_size(req, "page_size", cfg_.page_size, 1, cfg_.max_page_size);

            std::map<std::string, similarity::SimilarityScore> scores;
            std::vector<std::string> ids;
            if (task_set) {
                for (auto& r : p_.rank(*task_set)) {
                    ids.push_back(r.id);
                    scores.emplace(r.id, std::move(r.score));
                }
            }
            if (order == "id") {
                ids.clear();
                for (const auto& e : p_.images()) ids.push_back(e.id);
            }
            Json items = Json::array();
            std::size_t total = 0;
            const std::size_t first = (page - 1) * page_size;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const auto e = p_.image(ids[i]);
                if (!e) continue;
                Json j = image_json(p_, *e);
                if (reviewed && j["reviewed"].get<bool>() != *reviewed) continue;
                if (total >= first && total < first + page_size) {
                    j["position"] = i + 1;
                    auto s = scores.find(e->id);
                    j["score"] = s == scores.end() ? Json(nullptr) : pipeline::to_json(s->second);
                    items.push_back(std::move(j));
                }
                ++total;
            }
            Json body;
            body["task_set"] = task_set ? Json(*task_set) : Json(nullptr);
            body["order"] = order;
            body["page"] = page;
            body["page_size"] = page_size;
            body["total"] = total;
            body["items"] = std::move(items);
            return json_response(200, std::move(body));
        }
        const std::string& id = parts[1];
        if (parts.size() == 2) {
            method_check({"GET"});
            const auto e = p_.image(id);
            if (!e) throw pipeline::NotFoundError("unknown image " + id);
            const auto target = p_.training_target(id);
            return json_response(200, {{"image", image_json(p_, *e)},
                                       {"annotations", annotations_json(p_.annotations(id))},
                                       {"training_target", target ? Json(target->id) : Json(nullptr)}});
        }
        if (parts.size() == 3 && parts[2] == "file") {
            method_check({"GET"});
            const auto e = p_.image(id);
            if (!e) throw pipeline::NotFoundError("unknown image " + id);
            const auto bytes = p_.image_bytes(id);
            const std::string type = e->format == "png"   ? "image/png"
                                     : e->format == "ppm" ? "image/x-portable-pixmap"
                                                          : "application/octet-stream";
            return {200, type, std::string(bytes.begin(), bytes.end()), {}};
        }
        if (parts.size() == 3 && parts[2] == "reviews") {
            method_check({"POST"});
            const auto body = parse_body(req);
            if (!body.is_object() || !body.contains("caption") || !body["caption"].is_string()) {
                throw HttpError(400, "bad_request", "body must be {\"caption\": string}");
            }
            const auto anns = p_.submit_review(id, body["caption"].get<std::string>(), who.user);
            return json_response(201, {{"image_id", id}, {"annotations", annotations_json(anns)}});
        }
        throw not_found();
    }

    if (root == "captions" && parts.size() >= 2) {
        const std::string& id = parts[1];
        if (parts.size() == 2) {
            method_check({"GET"});
            const auto a = p_.annotation(id);
            if (!a) throw pipeline::NotFoundError("unknown caption " + id);
            return json_response(200, {{"annotation", pipeline::to_json(*a)}});
        }
        if (parts.size() == 3 && parts[2] == "votes") {
            method_check({"POST"});
            const auto a = p_.vote(id, who.user);
            const auto target = p_.training_target(a.image_id);
            return json_response(201, {{"annotation", pipeline::to_json(a)},
                                       {"training_target", target ? Json(target->id) : Json(nullptr)}});
        }
        throw not_found();
    }

    if (root == "tasks") {
        if (parts.size() == 1) {
            method_check({"GET", "POST"});
            if (m == "POST") {
                const auto body = parse_body(req);
                if (!body.is_object() || !body.contains("texts")) {
                    throw HttpError(400, "bad_request", "body must be {\"texts\": [string]}");
                }
                const auto t = p_.create_task_set(string_list(body["texts"], "texts"), who.user);
                return json_response(201, {{"task_set", pipeline::to_json(t)}});
            }
            Json list = Json::array();
            for (const auto& t : p_.task_sets()) list.push_back(pipeline::to_json(t));
            return json_response(200, {{"task_sets", std::move(list)}});
        }
        if (parts.size() == 2) {
            method_check({"GET"});
            const auto t = p_.task_set(parts[1]);
            if (!t) throw pipeline::NotFoundError("unknown task set " + parts[1]);
            return json_response(200, {{"task_set", pipeline::to_json(*t)}});
        }
        throw not_found();
    }

    if (root == "score" && parts.size() == 1) {
        method_check({"POST"});
        const auto body = parse_body(req);
        if (!body.is_object() || !body.contains("caption") || !body["caption"].is_string()) {
            throw HttpError(400, "bad_request", "body must carry a caption string");
        }
        std::vector<std::string> texts;
        if (body.contains("task_set")) {
            const auto t = p_.task_set(body["task_set"].get<std::string>());
            if (!t) throw pipeline::NotFoundError("unknown task set");
            texts = t->texts;
        } else if (body.contains("texts")) {
            texts = string_list(body["texts"], "texts");
        } else {
            throw HttpError(400, "bad_request", "body needs texts or task_set");
        }
        const auto tasks = similarity::SearchTaskSet::from_texts(texts);
        const auto tokens = text::tokenize(body["caption"].get<std::string>());
        return json_response(200, {{"tokens", tokens}, {"score", pipeline::to_json(similarity::score(tokens, tasks))}});
    }

    if (root == "simulate" && parts.size() == 1) {
        method_check({"POST"});
        if (req.body.empty()) throw HttpError(400, "bad_request", "scenario body required");
        const auto sc = downlink::parse_scenario(req.body, ".", [](const std::string& path) -> text::TokenList {
            throw downlink::ScenarioError("image paths are not accepted here: " + path);
        });
        const auto tasks = similarity::SearchTaskSet::from_texts(sc.tasks);
        downlink::SimOptions opts;
        opts.score = sc.score;
        std::string out;
        if (sc.policy) {
            out = downlink::report_json(
                downlink::run_simulation(sc.images, sc.schedule, *sc.policy, tasks, sc.seed, opts));
        } else {
            const auto pr = downlink::run_simulation(sc.images, sc.schedule, downlink::Policy::kPriority, tasks,
                                                     sc.seed, opts);
            const auto fi =
                downlink::run_simulation(sc.images, sc.schedule, downlink::Policy::kFifo, tasks, sc.seed, opts);
            out = downlink::comparison_json(pr, fi);
        }
        return {200, "application/json", out, {}};
    }

    if (root == "export" && parts.size() == 2) {
        method_check({"GET"});
        require_admin(who);
        std::vector<std::uint8_t> bytes;
        if (parts[1] == "dataset") bytes = p_.export_dataset();
        else if (parts[1] == "weights") bytes = p_.export_weights();
        else throw not_found();
        Response r{200, "application/x-tar", std::string(bytes.begin(), bytes.end()), {}};
        r.headers["Content-Disposition"] = "attachment; filename=\"spass-" + parts[1] + ".tar\"";
        return r;
    }

    if (root == "admin" && parts.size() >= 2) {
        require_admin(who);
        if (parts[1] == "retrain" && parts.size() == 2) {
            method_check({"POST"});
            const auto job = p_.start_retrain(who.user);
            Response r = json_response(202, {{"job", pipeline::to_json(job)}});
            r.headers["Location"] = "/admin/jobs/" + job.id;
            return r;
        }
        if (parts[1] == "jobs" && parts.size() == 3) {
            method_check({"GET"});
            const auto job = p_.job(parts[2]);
            if (!job) throw pipeline::NotFoundError("unknown job " + parts[2]);
            return json_response(200, {{"job", pipeline::to_json(*job)}});
        }
        if (parts[1] == "status" && parts.size() == 2) {
            method_check({"GET"});
            Json ckpts = Json::array();
            for (const auto& c : p_.checkpoints()) {
                Json j = pipeline::to_json(c);
                j.erase("history");
                ckpts.push_back(std::move(j));
            }
            return json_response(200, {{"dataset_size", p_.dataset_size()},
                                       {"train_size", p_.train_size()},
                                       {"delta_ppm", p_.delta_ppm()},
                                       {"should_retrain", p_.should_retrain()},
                                       {"busy", p_.busy()},
                                       {"checkpoints", std::move(ckpts)}});
        }
        throw not_found();
    }

    throw not_found();
}

}  // namespace spass::service
