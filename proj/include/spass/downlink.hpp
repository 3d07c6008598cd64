#pragma once

// Prioritized transmission over a windowed, bandwidth-limited link.
//
// Time is in integer ticks and sizes in abstract units. A window
// [start, start + duration) sends `bandwidth` units per tick. Transmissions
// are never preempted and resume after blackouts; capacity left in a tick
// after a completion goes to the next image.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spass/similarity.hpp"
#include "spass/text.hpp"

namespace spass::downlink {

class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ScheduleError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ImageState { kCaptured, kCaptioned, kQueued, kTransmitting, kTransmitted };

const char* to_string(ImageState s);

class ImageRecord {
public:
    ImageRecord(std::string id, std::int64_t captured_at, std::int64_t size);

    const std::string& id() const { return id_; }
    std::int64_t captured_at() const { return captured_at_; }
    std::int64_t size() const { return size_; }
    ImageState state() const { return state_; }
    const std::optional<text::TokenList>& caption() const { return caption_; }
    const std::optional<similarity::SimilarityScore>& score() const { return score_; }

    void set_caption(text::TokenList caption);  // captured -> captioned
    void set_score(similarity::SimilarityScore s);  // captioned -> queued
    void start_transmission();  // queued -> transmitting
    void finish_transmission();  // transmitting -> transmitted

private:
    void advance(ImageState from, ImageState to);

    std::string id_;
    std::int64_t captured_at_;
    std::int64_t size_;
    ImageState state_ = ImageState::kCaptured;
    std::optional<text::TokenList> caption_;
    std::optional<similarity::SimilarityScore> score_;
};

// Scores a captioned record against the tasks and moves it to queued.
void enqueue(ImageRecord& record, const similarity::ReferenceIndex& tasks, const similarity::ScoreConfig& cfg = {});
void enqueue(ImageRecord& record, const similarity::SearchTaskSet& tasks, const similarity::ScoreConfig& cfg = {});

struct Window {
    std::int64_t start = 0;
    std::int64_t duration = 0;
    std::int64_t bandwidth = 0;
    std::int64_t end() const { return start + duration; }
    std::int64_t capacity() const { return duration * bandwidth; }
};

struct LinkSchedule {
    std::vector<Window> windows;

    // Throws ScheduleError unless windows are sorted, non-overlapping, with
    // start >= 0, duration > 0 and bandwidth > 0.
    void validate() const;
    std::int64_t capacity() const;
};

enum class Policy { kPriority, kFifo };

const char* to_string(Policy p);
Policy policy_from_string(const std::string& s);

// Scenario input: one per image, caption already known.
struct ImageArrival {
    std::string id;
    std::int64_t arrival = 0;
    std::int64_t size = 1;
    text::TokenList caption;
};

struct Completion {
    std::string id;
    std::int64_t captured_at = 0;
    std::int64_t size = 0;
    double score = 0.0;
    std::int64_t started_at = 0;
    std::int64_t completed_at = 0;
};

struct QueueEntry {
    std::string id;
    double score = 0.0;
    std::int64_t captured_at = 0;
};

struct Decision {
    std::int64_t time = 0;
    std::string chosen;
    double chosen_score = 0.0;
    std::vector<QueueEntry> queue;  // queued images at decision time, chosen included
};

struct CurvePoint {
    std::int64_t time = 0;
    double delivered_relevance = 0.0;
    std::size_t delivered_count = 0;
};

struct SimReport {
    Policy policy = Policy::kPriority;
    std::uint64_t seed = 0;
    std::int64_t capacity = 0;
    std::int64_t units_sent = 0;  // includes partial progress
    std::vector<Completion> completions;  // in completion order
    std::vector<std::string> untransmitted;
    std::vector<Decision> decisions;
    std::vector<CurvePoint> curve;  // one point per completion, starting at (0, 0)

    // Cumulative delivered relevance at time t (completions with completed_at <= t).
    double delivered_at(std::int64_t t) const;
};

struct SimOptions {
    similarity::ScoreConfig score;
    bool record_queues = true;
};

SimReport run_simulation(const std::vector<ImageArrival>& images, const LinkSchedule& schedule, Policy policy,
                         const similarity::SearchTaskSet& tasks, std::uint64_t seed, const SimOptions& opts = {});

// Scenario files.
struct Scenario {
    std::vector<ImageArrival> images;
    LinkSchedule schedule;
    std::vector<std::string> tasks;
    std::optional<Policy> policy;  // unset: run both
    std::uint64_t seed = 0;
    similarity::ScoreConfig score;
};

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Images may give "caption" text or an "image" path; paths are resolved
// relative to `base_dir` and passed to `captioner`.
using PathCaptioner = std::function<text::TokenList(const std::string& path)>;
Scenario parse_scenario(const std::string& json, const std::string& base_dir = ".",
                        const PathCaptioner& captioner = {});
std::string scenario_to_json(const Scenario& s);

// Seeded random scenario. With equal_sizes every image has the same size.
Scenario random_scenario(std::uint64_t seed, std::size_t images, bool equal_sizes);

std::string report_json(const SimReport& r, bool include_decisions = true);
std::string comparison_json(const SimReport& priority, const SimReport& fifo, bool include_decisions = true);
std::string curve_csv(const SimReport& r);
// time,priority,fifo at the union of completion times
std::string comparison_csv(const SimReport& priority, const SimReport& fifo);

// True iff priority's delivered relevance is >= fifo's at every completion
// time of either run.
bool dominates(const SimReport& priority, const SimReport& fifo);

}  // namespace spass::downlink
