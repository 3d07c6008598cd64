#include "spass/downlink.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spass/tensor.hpp"

namespace spass::downlink {

using nlohmann::ordered_json;

const char* to_string(ImageState s) {
    switch (s) {
        case ImageState::kCaptured: return "captured";
        case ImageState::kCaptioned: return "captioned";
        case ImageState::kQueued: return "queued";
        case ImageState::kTransmitting: return "transmitting";
        case ImageState::kTransmitted: return "transmitted";
    }
    return "?";
}

const char* to_string(Policy p) { return p == Policy::kPriority ? "priority" : "fifo"; }

Policy policy_from_string(const std::string& s) {
    if (s == "priority") return Policy::kPriority;
    if (s == "fifo") return Policy::kFifo;
    throw ScenarioError("unknown policy '" + s + "' (expected priority or fifo)");
}

ImageRecord::ImageRecord(std::string id, std::int64_t captured_at, std::int64_t size)
    : id_(std::move(id)), captured_at_(captured_at), size_(size) {
    if (captured_at < 0) throw ScheduleError("image " + id_ + ": negative capture time");
    if (size <= 0) throw ScheduleError("image " + id_ + ": size must be positive");
}

void ImageRecord::advance(ImageState from, ImageState to) {
    if (state_ != from) {
        throw StateError("image " + id_ + ": cannot go " + to_string(state_) + " -> " + to_string(to));
    }
    state_ = to;
}

void ImageRecord::set_caption(text::TokenList caption) {
    advance(ImageState::kCaptured, ImageState::kCaptioned);
    caption_ = std::move(caption);
}

void ImageRecord::set_score(similarity::SimilarityScore s) {
    advance(ImageState::kCaptioned, ImageState::kQueued);
    score_ = std::move(s);
}

void ImageRecord::start_transmission() { advance(ImageState::kQueued, ImageState::kTransmitting); }
void ImageRecord::finish_transmission() { advance(ImageState::kTransmitting, ImageState::kTransmitted); }

void enqueue(ImageRecord& record, const similarity::ReferenceIndex& tasks, const similarity::ScoreConfig& cfg) {
    if (record.state() != ImageState::kCaptioned || !record.caption()) {
        throw StateError("image " + record.id() + ": enqueue needs a captioned image");
    }
    similarity::SimilarityScore s;
    if (!record.caption()->empty()) s = similarity::score(*record.caption(), tasks, cfg);
    record.set_score(std::move(s));
}

void enqueue(ImageRecord& record, const similarity::SearchTaskSet& tasks, const similarity::ScoreConfig& cfg) {
    enqueue(record, similarity::ReferenceIndex(tasks, cfg.max_order), cfg);
}

void LinkSchedule::validate() const {
    std::int64_t prev_end = 0;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        const auto& w = windows[k];
        const std::string where = "window " + std::to_string(k);
        if (w.start < 0) throw ScheduleError(where + ": negative start");
        if (w.duration <= 0) throw ScheduleError(where + ": duration must be positive");
        if (w.bandwidth <= 0) throw ScheduleError(where + ": bandwidth must be positive");
        if (k > 0 && w.start < prev_end) throw ScheduleError(where + ": overlaps or precedes the previous window");
        prev_end = w.end();
    }
}

std::int64_t LinkSchedule::capacity() const {
    std::int64_t c = 0;
    for (const auto& w : windows) c += w.capacity();
    return c;
}

double SimReport::delivered_at(std::int64_t t) const {
    double v = 0.0;
    for (const auto& p : curve) {
        if (p.time > t) break;
        v = p.delivered_relevance;
    }
    return v;
}

namespace {

struct Pending {
    ImageRecord record;
    std::size_t index;  // position in arrival order
    double value() const { return record.score()->value; }
};

bool higher_priority(const Pending& a, const Pending& b, Policy p) {
    if (p == Policy::kPriority && a.value() != b.value()) return a.value() > b.value();
    if (a.record.captured_at() != b.record.captured_at()) return a.record.captured_at() < b.record.captured_at();
    return a.record.id() < b.record.id();
}

}  // namespace

SimReport run_simulation(const std::vector<ImageArrival>& images, const LinkSchedule& schedule, Policy policy,
                         const similarity::SearchTaskSet& tasks, std::uint64_t seed, const SimOptions& opts) {
    schedule.validate();
    opts.score.validate();
    const similarity::ReferenceIndex index(tasks, opts.score.max_order);

    std::vector<Pending> all;
    std::set<std::string> ids;
    for (const auto& img : images) {
        if (!ids.insert(img.id).second) throw ScheduleError("duplicate image id " + img.id);
        Pending p{ImageRecord(img.id, img.arrival, img.size), 0};
        p.record.set_caption(img.caption);
        enqueue(p.record, index, opts.score);
        all.push_back(std::move(p));
    }
    std::stable_sort(all.begin(), all.end(), [](const Pending& a, const Pending& b) {
        if (a.record.captured_at() != b.record.captured_at()) return a.record.captured_at() < b.record.captured_at();
        return a.record.id() < b.record.id();
    });
    for (std::size_t i = 0; i < all.size(); ++i) all[i].index = i;

    SimReport rep;
    rep.policy = policy;
    rep.seed = seed;
    rep.capacity = schedule.capacity();
    rep.curve.push_back({0, 0.0, 0});

    std::size_t next_arrival = 0;
    std::vector<std::size_t> queue;  // indices into all
    std::optional<std::size_t> current;
    std::int64_t remaining = 0;
    std::int64_t started_at = 0;
    double delivered = 0.0;

    auto admit = [&](std::int64_t t) {
        while (next_arrival < all.size() && all[next_arrival].record.captured_at() <= t) queue.push_back(next_arrival++);
    };
    auto pick = [&](std::int64_t t) {
        auto best = queue.begin();
        for (auto it = queue.begin(); it != queue.end(); ++it) {
            if (higher_priority(all[*it], all[*best], policy)) best = it;
        }
        const std::size_t chosen = *best;
        Decision d;
        d.time = t;
        d.chosen = all[chosen].record.id();
        d.chosen_score = all[chosen].value();
        if (opts.record_queues) {
            for (std::size_t q : queue) {
                d.queue.push_back({all[q].record.id(), all[q].value(), all[q].record.captured_at()});
            }
        }
        rep.decisions.push_back(std::move(d));
        queue.erase(best);
        all[chosen].record.start_transmission();
        current = chosen;
        remaining = all[chosen].record.size();
        started_at = t;
    };
    auto complete = [&](std::int64_t t_end) {
        Pending& p = all[*current];
        p.record.finish_transmission();
        delivered += p.value();
        rep.completions.push_back(
            {p.record.id(), p.record.captured_at(), p.record.size(), p.value(), started_at, t_end});
        rep.curve.push_back({t_end, delivered, rep.completions.size()});
        current.reset();
    };

    for (const auto& w : schedule.windows) {
        std::int64_t t = w.start;
        std::int64_t cap = w.bandwidth;  // left in tick t
        while (t < w.end()) {
            if (!current) {
                admit(t);
                if (queue.empty()) {
                    if (next_arrival >= all.size()) break;
                    const std::int64_t at = all[next_arrival].record.captured_at();
                    if (at >= w.end()) break;
                    t = at;
                    cap = w.bandwidth;
                    continue;
                }
                pick(t);
            }
            if (remaining <= cap) {
                cap -= remaining;
                rep.units_sent += remaining;
                remaining = 0;
                complete(t + 1);
                if (cap == 0) {
                    ++t;
                    cap = w.bandwidth;
                }
                continue;
            }
            remaining -= cap;
            rep.units_sent += cap;
            ++t;
            cap = w.bandwidth;
            // whole ticks that cannot finish the image
            const std::int64_t skip = std::min((remaining - 1) / w.bandwidth, w.end() - t);
            remaining -= skip * w.bandwidth;
            rep.units_sent += skip * w.bandwidth;
            t += skip;
        }
    }

    if (current) rep.untransmitted.push_back(all[*current].record.id());
    std::vector<std::size_t> left(queue.begin(), queue.end());
    for (std::size_t i = next_arrival; i < all.size(); ++i) left.push_back(i);
    std::sort(left.begin(), left.end());
    for (std::size_t i : left) rep.untransmitted.push_back(all[i].record.id());
    return rep;
}

bool dominates(const SimReport& priority, const SimReport& fifo) {
    std::set<std::int64_t> times;
    for (const auto& p : priority.curve) times.insert(p.time);
    for (const auto& p : fifo.curve) times.insert(p.time);
    for (auto t : times) {
        if (priority.delivered_at(t) < fifo.delivered_at(t)) return false;
    }
    return true;
}

// ---- scenario files

namespace {

std::int64_t get_int(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ScenarioError(where + ": missing '" + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number_integer()) throw ScenarioError(where + ": '" + key + "' must be an integer");
    return v.get<std::int64_t>();
}

}  // namespace

Scenario parse_scenario(const std::string& json_text, const std::string& base_dir, const PathCaptioner& captioner) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError(std::string("scenario is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ScenarioError("scenario must be a JSON object");
    Scenario s;
    try {
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("policy") && !j.at("policy").is_null()) {
            const auto p = j.at("policy").get<std::string>();
            if (p != "both") s.policy = policy_from_string(p);
        }
        if (!j.contains("tasks") || !j.at("tasks").is_array()) throw ScenarioError("scenario: 'tasks' must be a list");
        s.tasks = j.at("tasks").get<std::vector<std::string>>();
        if (j.contains("score")) {
            const auto& js = j.at("score");
            if (js.contains("weights")) {
                s.score.weights = js.at("weights").get<std::vector<double>>();
                s.score.max_order = static_cast<int>(s.score.weights.size());
            }
            if (js.contains("smoothing")) s.score.smoothing = js.at("smoothing").get<bool>();
        }
        if (!j.contains("windows") || !j.at("windows").is_array()) {
            throw ScenarioError("scenario: 'windows' must be a list");
        }
        for (std::size_t k = 0; k < j.at("windows").size(); ++k) {
            const auto& jw = j.at("windows")[k];
            const std::string where = "window " + std::to_string(k);
            s.schedule.windows.push_back(
                {get_int(jw, "start", where), get_int(jw, "duration", where), get_int(jw, "bandwidth", where)});
        }
        if (!j.contains("images") || !j.at("images").is_array()) throw ScenarioError("scenario: 'images' must be a list");
        for (std::size_t k = 0; k < j.at("images").size(); ++k) {
            const auto& ji = j.at("images")[k];
            const std::string where = "image " + std::to_string(k);
            ImageArrival a;
            if (!ji.contains("id")) throw ScenarioError(where + ": missing 'id'");
            a.id = ji.at("id").is_string() ? ji.at("id").get<std::string>() : ji.at("id").dump();
            a.arrival = get_int(ji, "arrival", where);
            a.size = get_int(ji, "size", where);
            if (a.arrival < 0) throw ScenarioError(where + ": negative arrival");
            if (a.size <= 0) throw ScenarioError(where + ": size must be positive");
            if (ji.contains("caption")) {
                a.caption = text::tokenize(ji.at("caption").get<std::string>());
            } else if (ji.contains("image")) {
                if (!captioner) throw ScenarioError(where + ": image paths need a captioning model");
                const auto path = std::filesystem::path(base_dir) / ji.at("image").get<std::string>();
                a.caption = captioner(path.string());
            } else {
                throw ScenarioError(where + ": needs 'caption' or 'image'");
            }
            s.images.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError(std::string("scenario: ") + e.what());
    }
    return s;
}

std::string scenario_to_json(const Scenario& s) {
    ordered_json j;
    j["seed"] = s.seed;
    j["policy"] = s.policy ? to_string(*s.policy) : "both";
    j["tasks"] = s.tasks;
    j["windows"] = ordered_json::array();
    for (const auto& w : s.schedule.windows) {
        j["windows"].push_back({{"start", w.start}, {"duration", w.duration}, {"bandwidth", w.bandwidth}});
    }
    j["images"] = ordered_json::array();
    for (const auto& im : s.images) {
        j["images"].push_back(
            {{"id", im.id}, {"arrival", im.arrival}, {"size", im.size}, {"caption", text::join(im.caption)}});
    }
    return j.dump(2) + "\n";
}

Scenario random_scenario(std::uint64_t seed, std::size_t images, bool equal_sizes) {
    static const std::vector<std::string> words{"dark",   "layered", "rock",  "bright", "dune",  "field", "crater",
                                                "rim",    "sand",    "ridge", "vein",   "white", "small", "large",
                                                "near",   "the",     "with",  "of",     "a",     "outcrop"};
    Rng rng(seed);
    auto sentence = [&](std::size_t lo, std::size_t hi) {
        const std::size_t n = lo + rng.below(hi - lo + 1);
        std::string out;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) out += ' ';
            out += words[rng.below(words.size())];
        }
        return out;
    };

    Scenario s;
    s.seed = seed;
    const std::size_t n_tasks = 1 + rng.below(3);
    for (std::size_t k = 0; k < n_tasks; ++k) s.tasks.push_back(sentence(2, 8));

    const std::int64_t fixed_size = 1 + static_cast<std::int64_t>(rng.below(20));
    std::int64_t horizon = 0;
    for (std::size_t i = 0; i < images; ++i) {
        ImageArrival a;
        char buf[16];
        std::snprintf(buf, sizeof buf, "img-%04zu", i);
        a.id = buf;
        a.arrival = static_cast<std::int64_t>(rng.below(200));
        a.size = equal_sizes ? fixed_size : 1 + static_cast<std::int64_t>(rng.below(30));
        // captions mix task words so scores spread over (0, 1]
        a.caption = rng.uniform() < 0.3 ? text::tokenize(s.tasks[rng.below(s.tasks.size())])
                                        : text::tokenize(sentence(1, 10));
        horizon = std::max(horizon, a.arrival);
        s.images.push_back(std::move(a));
    }
    std::int64_t t = static_cast<std::int64_t>(rng.below(10));
    const std::size_t n_windows = 1 + rng.below(8);
    for (std::size_t k = 0; k < n_windows; ++k) {
        Window w;
        w.start = t;
        w.duration = 1 + static_cast<std::int64_t>(rng.below(40));
        w.bandwidth = 1 + static_cast<std::int64_t>(rng.below(6));
        s.schedule.windows.push_back(w);
        t = w.end() + static_cast<std::int64_t>(rng.below(60));
    }
    return s;
}

// ---- reports

namespace {

ordered_json report_object(const SimReport& r, bool include_decisions) {
    ordered_json j;
    j["policy"] = to_string(r.policy);
    j["seed"] = r.seed;
    j["capacity"] = r.capacity;
    j["units_sent"] = r.units_sent;
    j["completions"] = ordered_json::array();
    for (const auto& c : r.completions) {
        j["completions"].push_back({{"id", c.id},
                                    {"captured_at", c.captured_at},
                                    {"size", c.size},
                                    {"score", c.score},
                                    {"started_at", c.started_at},
                                    {"completed_at", c.completed_at}});
    }
    j["untransmitted"] = r.untransmitted;
    j["curve"] = ordered_json::array();
    for (const auto& p : r.curve) {
        j["curve"].push_back(
            {{"time", p.time}, {"delivered_relevance", p.delivered_relevance}, {"delivered_count", p.delivered_count}});
    }
    if (include_decisions) {
        j["decisions"] = ordered_json::array();
        for (const auto& d : r.decisions) {
            ordered_json jd{{"time", d.time}, {"chosen", d.chosen}, {"score", d.chosen_score}};
            jd["queue"] = ordered_json::array();
            for (const auto& q : d.queue) {
                jd["queue"].push_back({{"id", q.id}, {"score", q.score}, {"captured_at", q.captured_at}});
            }
            j["decisions"].push_back(std::move(jd));
        }
    }
    return j;
}

std::string fmt(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

}  // namespace

std::string report_json(const SimReport& r, bool include_decisions) {
    ordered_json j;
    j["schema_version"] = 1;
    j["report"] = report_object(r, include_decisions);
    return j.dump(2) + "\n";
}

std::string comparison_json(const SimReport& priority, const SimReport& fifo, bool include_decisions) {
    ordered_json j;
    j["schema_version"] = 1;
    j["priority"] = report_object(priority, include_decisions);
    j["fifo"] = report_object(fifo, include_decisions);
    j["priority_dominates"] = dominates(priority, fifo);
    j["same_units_sent"] = priority.units_sent == fifo.units_sent;
    return j.dump(2) + "\n";
}

std::string curve_csv(const SimReport& r) {
    std::string out = "time,delivered_relevance,delivered_count\n";
    for (const auto& p : r.curve) {
        out += std::to_string(p.time) + "," + fmt(p.delivered_relevance) + "," + std::to_string(p.delivered_count) + "\n";
    }
    return out;
}

std::string comparison_csv(const SimReport& priority, const SimReport& fifo) {
    std::set<std::int64_t> times;
    for (const auto& p : priority.curve) times.insert(p.time);
    for (const auto& p : fifo.curve) times.insert(p.time);
    std::string out = "time,priority,fifo\n";
    for (auto t : times) {
        out += std::to_string(t) + "," + fmt(priority.delivered_at(t)) + "," + fmt(fifo.delivered_at(t)) + "\n";
    }
    return out;
}

}  // namespace spass::downlink
