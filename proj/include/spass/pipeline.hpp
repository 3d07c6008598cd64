#pragma once

// Aggregated dataset, retraining trigger and checkpoint sequence.
//
// Data directory layout:
//   journal.jsonl           append-only log of images, annotations, votes, task sets
//   images/<sha256>.<ext>   content-addressed uploads (png, ppm or tns feature files)
//   checkpoints/w_NNNN.bin  model weights (+ .json sidecar)
//   state.json              D_train and the checkpoint list, replaced atomically

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "spass/captioner/encoder.hpp"
#include "spass/captioner/serialize.hpp"
#include "spass/captioner/train.hpp"
#include "spass/similarity.hpp"

namespace spass::pipeline {

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class NotFoundError : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class InvalidInputError : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class DuplicateImageError : public PipelineError {
public:
    DuplicateImageError(const std::string& msg, std::string original) : PipelineError(msg), original_id(std::move(original)) {}
    std::string original_id;
};
class DuplicateVoteError : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class BusyError : public PipelineError {
public:
    using PipelineError::PipelineError;
};
class ConditionError : public PipelineError {
public:
    using PipelineError::PipelineError;
};
// Thrown by fault hooks in tests.
class InjectedFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// delta in parts per million; throws InvalidInputError unless delta > 0.
std::int64_t delta_to_ppm(double delta);
// |D_train| * (1 + delta) <= |D|, evaluated exactly in integers.
bool should_retrain(std::size_t train_size, std::size_t dataset_size, std::int64_t delta_ppm);

struct Annotation {
    std::string id;  // cap-NNNNNN
    std::string image_id;
    std::string caption;
    std::string author;
    bool reviewed = false;
    std::uint64_t seq = 0;  // global submission order
    std::string timestamp;
    std::vector<std::string> voters;  // in voting order

    std::size_t votes() const { return voters.size(); }
};

struct ImageEntry {
    std::string id;  // img-NNNNNN
    std::string sha256;
    std::string file;    // relative to the data directory
    std::string format;  // png | ppm | tns
    std::optional<std::string> duplicate_of;
    std::string received_at;
    std::string submitted_by;
    std::vector<std::string> annotation_ids;
};

struct TaskSetEntry {
    std::string id;  // ts-NNNNNN
    std::vector<std::string> texts;
    std::string created_by;
    std::string created_at;
};

struct CheckpointInfo {
    std::size_t index = 0;
    std::string file;
    std::string created_at;
    std::size_t dataset_size = 0;
    std::string kind;  // init | fit | copy | import
    std::size_t best_epoch = 0;
    std::vector<captioner::EpochMetrics> history;
};

enum class JobState { kRunning, kSucceeded, kFailed };
const char* to_string(JobState s);

struct JobInfo {
    std::string id;  // job-NNNNNN
    JobState state = JobState::kRunning;
    std::string requested_by;
    std::string started_at;
    std::string finished_at;
    std::size_t dataset_size = 0;
    std::optional<std::size_t> checkpoint;
    std::string error;
};

struct FitSample {
    std::string image_id;
    std::string caption;
    captioner::FeatureMap features;
};

struct FitResult {
    captioner::CaptionModel model;
    std::string kind;  // fit | copy
    std::size_t best_epoch = 0;
    std::vector<captioner::EpochMetrics> history;
};

struct FitRequest {
    const captioner::CaptionModel& previous;
    const std::vector<FitSample>& samples;
    const captioner::TrainConfig& train;
    bool warm_start = true;
    std::uint64_t seed = 0;
};

using ModelFit = std::function<FitResult(const FitRequest&)>;

// Builds a vocabulary from the targets, warm-starts from `previous` (or
// draws fresh weights) and trains. Fewer than two usable samples, or a split
// that leaves no training data, returns a copy of `previous`.
FitResult default_model_fit(const FitRequest& req);

enum class FaultPoint {
    kAfterImageFile,
    kMidJournalAppend,  // half the record reaches disk
    kAfterCheckpointFile,
    kBeforeStateCommit,
};
using FaultHook = std::function<void(FaultPoint)>;

struct PipelineConfig {
    double delta = 0.5;
    bool warm_start = true;
    bool auto_retrain = false;  // evaluate the trigger after every event
    bool background_training = false;
    captioner::TrainConfig train;
    captioner::ModelDims dims;  // vocab is taken from the data
    captioner::EncoderConfig encoder;
    std::uint64_t seed = 1;
    std::function<std::string()> clock;  // ISO-8601 UTC; system clock when empty
};

class Pipeline {
public:
    // Opens or creates a data directory. A new directory starts with W_0:
    // `initial` if given, otherwise random weights over the special tokens.
    Pipeline(std::filesystem::path dir, PipelineConfig cfg, ModelFit fit = default_model_fit,
             std::optional<captioner::CaptionModel> initial = std::nullopt);
    ~Pipeline();
    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    struct IngestResult {
        ImageEntry image;
        Annotation machine;
    };
    // Stores and machine-captions one upload (PNG, PPM or feature file).
    // reject_duplicates: throw DuplicateImageError instead of recording a
    // flagged duplicate.
    IngestResult ingest(std::span<const std::uint8_t> bytes, const std::string& submitted_by, bool reject_duplicates);
    std::vector<IngestResult> ingest_and_annotate(const std::vector<std::vector<std::uint8_t>>& batch,
                                                  const std::string& submitted_by);
    std::vector<Annotation> submit_review(const std::string& image_id, const std::string& caption,
                                          const std::string& reviewer);
    Annotation vote(const std::string& caption_id, const std::string& user);
    TaskSetEntry create_task_set(const std::vector<std::string>& texts, const std::string& user);

    std::vector<ImageEntry> images() const;
    std::optional<ImageEntry> image(const std::string& id) const;
    std::vector<std::uint8_t> image_bytes(const std::string& id) const;
    std::vector<Annotation> annotations(const std::string& image_id) const;
    std::optional<Annotation> annotation(const std::string& caption_id) const;
    // Most-voted reviewed caption, ties to the earliest.
    std::optional<Annotation> training_target(const std::string& image_id) const;
    // Training target if reviewed, else the latest machine caption.
    std::optional<Annotation> display_caption(const std::string& image_id) const;
    std::vector<TaskSetEntry> task_sets() const;
    std::optional<TaskSetEntry> task_set(const std::string& id) const;

    // Images ranked by display caption against the task set.
    std::vector<similarity::RankedItem> rank(const std::string& task_set_id,
                                             const similarity::ScoreConfig& cfg = {}) const;
    std::vector<similarity::RankedItem> rank_texts(const std::vector<std::string>& texts,
                                                   const similarity::ScoreConfig& cfg = {}) const;

    std::size_t dataset_size() const;  // |D|
    std::size_t train_size() const;    // |D_train|
    std::vector<std::string> train_ids() const;
    bool should_retrain() const;
    std::int64_t delta_ppm() const { return delta_ppm_; }
    std::vector<CheckpointInfo> checkpoints() const;
    captioner::CaptionModel latest_model() const;

    // Throws BusyError while a job runs, ConditionError when the trigger is false.
    JobInfo start_retrain(const std::string& requested_by);
    // Starts a job when the trigger holds and none is running.
    std::optional<JobInfo> poll_trigger(const std::string& requested_by = "auto");
    std::optional<JobInfo> job(const std::string& id) const;
    bool busy() const;
    void wait_idle();

    std::vector<std::uint8_t> export_dataset() const;
    std::vector<std::uint8_t> export_weights() const;
    // Appends the archived model as a new checkpoint.
    CheckpointInfo import_weights(std::span<const std::uint8_t> archive);
    // Populates an empty or missing directory from a dataset archive.
    static void import_dataset(const std::filesystem::path& dir, std::span<const std::uint8_t> archive);

    void set_fault_hook(FaultHook hook);
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::string now() const;
    void fault(FaultPoint p) const;
    void load();
    void apply(const std::string& line);
    void append_journal(const std::string& lines);
    void write_state_locked();
    captioner::FeatureMap features_for(const ImageEntry& e, std::span<const std::uint8_t> bytes,
                                       const captioner::CaptionModel& model) const;
    IngestResult ingest_locked(std::span<const std::uint8_t> bytes, const std::string& submitted_by,
                               bool reject_duplicates);
    CheckpointInfo commit_checkpoint_locked(const captioner::CaptionModel& model, const std::string& kind,
                                            std::size_t dataset_size, std::size_t best_epoch,
                                            const std::vector<captioner::EpochMetrics>& history);
    std::optional<Annotation> training_target_locked(const std::string& image_id) const;
    std::optional<Annotation> display_caption_locked(const std::string& image_id) const;
    std::size_t dataset_size_locked() const;
    void after_event_locked(std::unique_lock<std::shared_mutex>& lock);
    JobInfo start_retrain_locked(std::unique_lock<std::shared_mutex>& lock, const std::string& requested_by);
    void run_job(const std::string& job_id, std::vector<std::string> ids);

    std::filesystem::path dir_;
    PipelineConfig cfg_;
    ModelFit fit_;
    std::int64_t delta_ppm_;
    FaultHook fault_hook_;

    mutable std::shared_mutex mu_;
    std::map<std::string, ImageEntry> images_;
    std::map<std::string, std::string> by_hash_;  // sha256 -> first image id
    std::map<std::string, Annotation> annotations_;
    std::map<std::string, TaskSetEntry> task_sets_;
    std::uint64_t next_image_ = 1, next_caption_ = 1, next_task_ = 1, next_seq_ = 1, next_job_ = 1;
    std::uintmax_t journal_size_ = 0;

    std::vector<std::string> d_train_;
    std::vector<CheckpointInfo> checkpoints_;
    captioner::CaptionModel latest_;
    std::unique_ptr<captioner::TinyEncoder> encoder_;

    std::map<std::string, JobInfo> jobs_;
    bool running_ = false;
    std::thread worker_;
    std::condition_variable_any idle_cv_;
};

}  // namespace spass::pipeline
