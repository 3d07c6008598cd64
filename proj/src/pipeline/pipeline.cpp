#include "spass/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "spass/archive.hpp"
#include "spass/pipeline_json.hpp"

namespace spass::pipeline {

namespace fs = std::filesystem;
using captioner::CaptionModel;
using captioner::FeatureMap;

namespace {

constexpr int kStateVersion = 1;
constexpr int kArchiveVersion = 1;

std::string format_id(const char* prefix, std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%06llu", prefix, static_cast<unsigned long long>(n));
    return buf;
}

std::uint64_t id_number(const std::string& id) {
    const auto dash = id.rfind('-');
    if (dash == std::string::npos) throw PipelineError("malformed id " + id);
    return std::stoull(id.substr(dash + 1));
}

std::string system_clock_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::vector<std::uint8_t> to_vec(const std::string& s) { return {s.begin(), s.end()}; }

CaptionModel fresh_model(const PipelineConfig& cfg) {
    captioner::ModelDims dims = cfg.dims;
    dims.vocab = text::Vocabulary().size();
    dims.feature = cfg.encoder.feature_dim();
    dims.locations = cfg.encoder.locations();
    CaptionModel m;
    m.weights = captioner::ModelWeights::random(dims, cfg.seed);
    m.encoder = cfg.encoder;
    m.max_caption_length = cfg.train.max_caption_length;
    return m;
}

void check_model_encoder(const CaptionModel& m) {
    const captioner::ModelDims& d = m.weights.dims;
    if (d.feature != m.encoder.feature_dim() || d.locations != m.encoder.locations()) {
        throw InvalidInputError("model feature shape does not match its encoder configuration");
    }
}

}  // namespace

const char* to_string(JobState s) {
    switch (s) {
        case JobState::kRunning: return "running";
        case JobState::kSucceeded: return "succeeded";
        case JobState::kFailed: return "failed";
    }
    return "?";
}

std::int64_t delta_to_ppm(double delta) {
    if (!(delta > 0.0) || !std::isfinite(delta) || delta > 1e6) {
        throw InvalidInputError("aggregation rate must be a positive number");
    }
    const auto ppm = static_cast<std::int64_t>(std::llround(delta * 1e6));
    if (ppm <= 0) throw InvalidInputError("aggregation rate below 1e-6");
    return ppm;
}

bool should_retrain(std::size_t train_size, std::size_t dataset_size, std::int64_t delta_ppm) {
    const auto lhs = static_cast<unsigned __int128>(train_size) * static_cast<unsigned __int128>(1'000'000 + delta_ppm);
    const auto rhs = static_cast<unsigned __int128>(dataset_size) * 1'000'000u;
    return lhs <= rhs;
}

FitResult default_model_fit(const FitRequest& req) {
    FitResult copy{req.previous, "copy", 0, {}};
    const std::size_t c_max = req.train.max_caption_length;
    std::vector<text::TokenList> tokens;
    std::vector<const FitSample*> usable;
    for (const auto& s : req.samples) {
        auto t = text::tokenize(s.caption);
        if (t.empty() || t.size() > c_max) continue;
        tokens.push_back(std::move(t));
        usable.push_back(&s);
    }
    if (usable.size() < 2) return copy;

    const auto vocab = text::build_vocabulary(tokens);
    captioner::ModelWeights init =
        req.warm_start ? captioner::remap_vocabulary(req.previous.weights, req.previous.vocab, vocab, req.seed)
                       : [&] {
                             auto dims = req.previous.weights.dims;
                             dims.vocab = vocab.size();
                             return captioner::ModelWeights::random(dims, req.seed, req.previous.weights.options);
                         }();
    std::vector<captioner::TrainingSample> data;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        data.push_back({usable[i]->features, text::encode(tokens[i], vocab)});
    }
    captioner::TrainResult r;
    try {
        r = captioner::train(data, vocab, std::move(init), req.train);
    } catch (const text::ParameterError&) {
        return copy;
    }
    FitResult out;
    out.model = req.previous;
    out.model.weights = std::move(r.weights);
    out.model.vocab = vocab;
    out.model.max_caption_length = c_max;
    out.kind = "fit";
    out.best_epoch = r.best_epoch;
    out.history = std::move(r.history);
    return out;
}

// ---- construction and persistence

Pipeline::Pipeline(fs::path dir, PipelineConfig cfg, ModelFit fit, std::optional<CaptionModel> initial)
    : dir_(std::move(dir)), cfg_(std::move(cfg)), fit_(std::move(fit)), delta_ppm_(delta_to_ppm(cfg_.delta)) {
    if (!fit_) throw InvalidInputError("model_fit must be callable");
    fs::create_directories(dir_ / "images");
    fs::create_directories(dir_ / "checkpoints");
    load();
    if (checkpoints_.empty()) {
        CaptionModel w0 = initial ? std::move(*initial) : fresh_model(cfg_);
        check_model_encoder(w0);
        std::unique_lock lock(mu_);
        commit_checkpoint_locked(w0, initial ? "import" : "init", 0, 0, {});
    }
    encoder_ = std::make_unique<captioner::TinyEncoder>(latest_.encoder);
}

Pipeline::~Pipeline() {
    if (worker_.joinable()) worker_.join();
}

std::string Pipeline::now() const { return cfg_.clock ? cfg_.clock() : system_clock_iso(); }

void Pipeline::fault(FaultPoint p) const {
    if (fault_hook_) fault_hook_(p);
}

void Pipeline::set_fault_hook(FaultHook hook) {
    std::unique_lock lock(mu_);
    fault_hook_ = std::move(hook);
}

void Pipeline::load() {
    const auto journal = dir_ / "journal.jsonl";
    if (fs::exists(journal)) {
        const auto bytes = captioner::read_file(journal);
        std::size_t pos = 0;
        while (pos < bytes.size()) {
            const auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
            if (nl == bytes.end()) break;  // torn tail
            const std::size_t end = static_cast<std::size_t>(nl - bytes.begin());
            const std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(pos), nl);
            try {
                apply(line);
            } catch (const std::exception& e) {
                if (end + 1 == bytes.size()) break;  // torn tail that happens to end in a newline
                throw PipelineError("corrupt journal at byte " + std::to_string(pos) + ": " + e.what());
            }
            pos = end + 1;
        }
        journal_size_ = pos;
        if (journal_size_ != bytes.size()) fs::resize_file(journal, journal_size_);
    }

    const auto state = dir_ / "state.json";
    if (!fs::exists(state)) return;
    const auto raw = captioner::read_file(state);
    try {
        const auto j = nlohmann::json::parse(raw.begin(), raw.end());
        if (j.at("schema_version").get<int>() != kStateVersion) throw PipelineError("unsupported state version");
        d_train_ = j.at("d_train").get<std::vector<std::string>>();
        for (const auto& c : j.at("checkpoints")) checkpoints_.push_back(checkpoint_from_json(c));
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("corrupt state.json: ") + e.what());
    }
    if (checkpoints_.empty()) throw PipelineError("state.json lists no checkpoints");
    latest_ = captioner::load_model(dir_ / checkpoints_.back().file);
}

void Pipeline::apply(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    const std::string type = j.at("type");
    if (type == "image") {
        ImageEntry e = image_from_json(j.at("image"));
        if (images_.count(e.id)) throw PipelineError("duplicate image id " + e.id);
        std::vector<Annotation> anns;
        for (const auto& ja : j.at("annotations")) {
            anns.push_back(annotation_from_json(ja));
            if (anns.back().image_id != e.id || annotations_.count(anns.back().id)) {
                throw PipelineError("bad annotation in image record " + e.id);
            }
        }
        next_image_ = std::max(next_image_, id_number(e.id) + 1);
        by_hash_.emplace(e.sha256, e.id);
        for (auto& a : anns) {
            next_caption_ = std::max(next_caption_, id_number(a.id) + 1);
            next_seq_ = std::max(next_seq_, a.seq + 1);
            e.annotation_ids.push_back(a.id);
            annotations_.emplace(a.id, std::move(a));
        }
        images_.emplace(e.id, std::move(e));
    } else if (type == "annotation") {
        Annotation a = annotation_from_json(j.at("annotation"));
        auto it = images_.find(a.image_id);
        if (it == images_.end()) throw PipelineError("annotation for unknown image " + a.image_id);
        if (annotations_.count(a.id)) throw PipelineError("duplicate annotation id " + a.id);
        next_caption_ = std::max(next_caption_, id_number(a.id) + 1);
        next_seq_ = std::max(next_seq_, a.seq + 1);
        it->second.annotation_ids.push_back(a.id);
        annotations_.emplace(a.id, std::move(a));
    } else if (type == "vote") {
        auto it = annotations_.find(j.at("caption_id").get<std::string>());
        if (it == annotations_.end()) throw PipelineError("vote for unknown caption");
        const std::string user = j.at("user");
        if (std::find(it->second.voters.begin(), it->second.voters.end(), user) != it->second.voters.end()) {
            throw PipelineError("repeated vote in journal");
        }
        it->second.voters.push_back(user);
    } else if (type == "task_set") {
        TaskSetEntry t = task_set_from_json(j.at("task_set"));
        next_task_ = std::max(next_task_, id_number(t.id) + 1);
        task_sets_.emplace(t.id, std::move(t));
    } else {
        throw PipelineError("unknown journal record type " + type);
    }
}

void Pipeline::append_journal(const std::string& lines) {
    const auto path = dir_ / "journal.jsonl";
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT, 0644);
    if (fd < 0) throw PipelineError("cannot open journal");
    struct Closer {
        int fd;
        ~Closer() { ::close(fd); }
    } closer{fd};
    // drop any torn record left by an earlier failure
    if (::ftruncate(fd, static_cast<off_t>(journal_size_)) != 0 ||
        ::lseek(fd, static_cast<off_t>(journal_size_), SEEK_SET) < 0) {
        throw PipelineError("cannot position journal");
    }
    auto write_all = [&](const char* p, std::size_t n) {
        while (n > 0) {
            const auto w = ::write(fd, p, n);
            if (w <= 0) throw PipelineError("journal write failed");
            p += w;
            n -= static_cast<std::size_t>(w);
        }
    };
    if (fault_hook_) {
        const std::size_t half = lines.size() / 2;
        write_all(lines.data(), half);
        fault(FaultPoint::kMidJournalAppend);
        write_all(lines.data() + half, lines.size() - half);
    } else {
        write_all(lines.data(), lines.size());
    }
    if (::fsync(fd) != 0) throw PipelineError("journal fsync failed");
    journal_size_ += lines.size();
}

void Pipeline::write_state_locked() {
    Json j;
    j["schema_version"] = kStateVersion;
    j["delta_ppm"] = delta_ppm_;
    j["d_train"] = d_train_;
    j["checkpoints"] = Json::array();
    for (const auto& c : checkpoints_) j["checkpoints"].push_back(to_json(c));
    const auto path = dir_ / "state.json";
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << j.dump(2) << '\n';
        out.flush();
        if (!out) throw PipelineError("cannot write state.json");
    }
    fault(FaultPoint::kBeforeStateCommit);
    fs::rename(tmp, path);
}

CheckpointInfo Pipeline::commit_checkpoint_locked(const CaptionModel& model, const std::string& kind,
                                                  std::size_t dataset_size, std::size_t best_epoch,
                                                  const std::vector<captioner::EpochMetrics>& history) {
    CheckpointInfo info;
    info.index = checkpoints_.size();
    char name[32];
    std::snprintf(name, sizeof name, "checkpoints/w_%04zu.bin", info.index);
    info.file = name;
    info.created_at = now();
    info.dataset_size = dataset_size;
    info.kind = kind;
    info.best_epoch = best_epoch;
    info.history = history;

    captioner::save_model(model, dir_ / info.file);
    fault(FaultPoint::kAfterCheckpointFile);
    checkpoints_.push_back(info);
    try {
        write_state_locked();
    } catch (...) {
        checkpoints_.pop_back();
        throw;
    }
    latest_ = model;
    return info;
}

captioner::FeatureMap Pipeline::features_for(const ImageEntry& e, std::span<const std::uint8_t> bytes,
                                             const CaptionModel& model) const {
    const auto& d = model.weights.dims;
    if (e.format == "tns") {
        FeatureMap f;
        try {
            f = captioner::read_features(bytes);
        } catch (const captioner::FormatError& err) {
            throw InvalidInputError(std::string("feature file: ") + err.what());
        }
        if (f.annotations.rows != d.locations || f.annotations.cols != d.feature) {
            throw InvalidInputError("feature file has shape " + std::to_string(f.annotations.rows) + "x" +
                                    std::to_string(f.annotations.cols) + ", model expects " +
                                    std::to_string(d.locations) + "x" + std::to_string(d.feature));
        }
        return f;
    }
    captioner::Image img;
    try {
        img = captioner::decode_image(bytes);
    } catch (const captioner::DecodeError& err) {
        throw InvalidInputError(std::string("undecodable image: ") + err.what());
    }
    if (encoder_ && encoder_->config() == model.encoder) return encoder_->encode(img);
    return captioner::TinyEncoder(model.encoder).encode(img);
}

// ---- mutations

Pipeline::IngestResult Pipeline::ingest_locked(std::span<const std::uint8_t> bytes, const std::string& submitted_by,
                                               bool reject_duplicates) {
    if (bytes.empty()) throw InvalidInputError("empty upload");
    if (submitted_by.empty()) throw InvalidInputError("submitter must be named");
    const std::string sha = archive::sha256_hex(bytes);
    const auto dup = by_hash_.find(sha);
    if (dup != by_hash_.end() && reject_duplicates) {
        throw DuplicateImageError("image already stored as " + dup->second, dup->second);
    }

    ImageEntry e;
    if (captioner::looks_like_tensor_file(bytes)) e.format = "tns";
    else if (captioner::looks_like_image(bytes)) e.format = bytes[0] == 0x89 ? "png" : "ppm";
    else throw InvalidInputError("undecodable upload: not a PNG, PPM or feature file");

    const FeatureMap f = features_for(e, bytes, latest_);
    captioner::DecodeOptions opts;
    opts.max_len = latest_.max_caption_length;
    const auto gen = captioner::generate(f, latest_.weights, opts);

    e.id = format_id("img", next_image_);
    e.sha256 = sha;
    e.file = "images/" + sha + "." + e.format;
    if (dup != by_hash_.end()) e.duplicate_of = dup->second;
    e.received_at = now();
    e.submitted_by = submitted_by;

    Annotation a;
    a.id = format_id("cap", next_caption_);
    a.image_id = e.id;
    a.caption = text::join(text::decode(gen.caption, latest_.vocab));
    char author[32];
    std::snprintf(author, sizeof author, "model:w_%04zu", checkpoints_.size() - 1);
    a.author = author;
    a.reviewed = false;
    a.seq = next_seq_;
    a.timestamp = e.received_at;

    if (!fs::exists(dir_ / e.file)) captioner::write_file_atomic(dir_ / e.file, bytes);
    fault(FaultPoint::kAfterImageFile);

    Json line;
    line["type"] = "image";
    line["image"] = to_json(e);
    line["annotations"] = Json::array({to_json(a)});
    const std::string text = line.dump() + "\n";
    append_journal(text);
    apply(line.dump());
    return {images_.at(e.id), annotations_.at(a.id)};
}

Pipeline::IngestResult Pipeline::ingest(std::span<const std::uint8_t> bytes, const std::string& submitted_by,
                                        bool reject_duplicates) {
    std::unique_lock lock(mu_);
    auto r = ingest_locked(bytes, submitted_by, reject_duplicates);
    after_event_locked(lock);
    return r;
}

std::vector<Pipeline::IngestResult> Pipeline::ingest_and_annotate(const std::vector<std::vector<std::uint8_t>>& batch,
                                                                  const std::string& submitted_by) {
    std::vector<IngestResult> out;
    for (const auto& b : batch) out.push_back(ingest(b, submitted_by, false));
    return out;
}

std::vector<Annotation> Pipeline::submit_review(const std::string& image_id, const std::string& caption,
                                                const std::string& reviewer) {
    std::unique_lock lock(mu_);
    if (!images_.count(image_id)) throw NotFoundError("unknown image " + image_id);
    if (reviewer.empty()) throw InvalidInputError("reviewer must be named");
    if (text::tokenize(caption).empty()) throw InvalidInputError("caption is empty");
    Annotation a;
    a.id = format_id("cap", next_caption_);
    a.image_id = image_id;
    a.caption = caption;
    a.author = reviewer;
    a.reviewed = true;
    a.seq = next_seq_;
    a.timestamp = now();
    Json line;
    line["type"] = "annotation";
    line["annotation"] = to_json(a);
    append_journal(line.dump() + "\n");
    apply(line.dump());
    after_event_locked(lock);
    std::vector<Annotation> out;
    for (const auto& id : images_.at(image_id).annotation_ids) out.push_back(annotations_.at(id));
    return out;
}

Annotation Pipeline::vote(const std::string& caption_id, const std::string& user) {
    std::unique_lock lock(mu_);
    auto it = annotations_.find(caption_id);
    if (it == annotations_.end()) throw NotFoundError("unknown caption " + caption_id);
    if (user.empty()) throw InvalidInputError("voter must be named");
    if (std::find(it->second.voters.begin(), it->second.voters.end(), user) != it->second.voters.end()) {
        throw DuplicateVoteError(user + " already voted for " + caption_id);
    }
    Json line;
    line["type"] = "vote";
    line["caption_id"] = caption_id;
    line["user"] = user;
    line["timestamp"] = now();
    append_journal(line.dump() + "\n");
    apply(line.dump());
    after_event_locked(lock);
    return annotations_.at(caption_id);
}

TaskSetEntry Pipeline::create_task_set(const std::vector<std::string>& texts, const std::string& user) {
    std::unique_lock lock(mu_);
    try {
        (void)similarity::SearchTaskSet::from_texts(texts);
    } catch (const text::ParameterError& e) {
        throw InvalidInputError(e.what());
    }
    TaskSetEntry t;
    t.id = format_id("ts", next_task_);
    t.texts = texts;
    t.created_by = user;
    t.created_at = now();
    Json line;
    line["type"] = "task_set";
    line["task_set"] = to_json(t);
    append_journal(line.dump() + "\n");
    apply(line.dump());
    return task_sets_.at(t.id);
}

// ---- reads

std::vector<ImageEntry> Pipeline::images() const {
    std::shared_lock lock(mu_);
    std::vector<ImageEntry> out;
    for (const auto& [id, e] : images_) out.push_back(e);
    return out;
}

std::optional<ImageEntry> Pipeline::image(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = images_.find(id);
    if (it == images_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::uint8_t> Pipeline::image_bytes(const std::string& id) const {
    const auto e = image(id);
    if (!e) throw NotFoundError("unknown image " + id);
    return captioner::read_file(dir_ / e->file);
}

std::vector<Annotation> Pipeline::annotations(const std::string& image_id) const {
    std::shared_lock lock(mu_);
    auto it = images_.find(image_id);
    if (it == images_.end()) throw NotFoundError("unknown image " + image_id);
    std::vector<Annotation> out;
    for (const auto& id : it->second.annotation_ids) out.push_back(annotations_.at(id));
    return out;
}

std::optional<Annotation> Pipeline::annotation(const std::string& caption_id) const {
    std::shared_lock lock(mu_);
    auto it = annotations_.find(caption_id);
    if (it == annotations_.end()) return std::nullopt;
    return it->second;
}

std::optional<Annotation> Pipeline::training_target_locked(const std::string& image_id) const {
    auto it = images_.find(image_id);
    if (it == images_.end()) throw NotFoundError("unknown image " + image_id);
    const Annotation* best = nullptr;
    for (const auto& id : it->second.annotation_ids) {
        const Annotation& a = annotations_.at(id);
        if (!a.reviewed) continue;
        if (!best || a.votes() > best->votes() || (a.votes() == best->votes() && a.seq < best->seq)) best = &a;
    }
    if (!best) return std::nullopt;
    return *best;
}

std::optional<Annotation> Pipeline::display_caption_locked(const std::string& image_id) const {
    if (auto t = training_target_locked(image_id)) return t;
    const Annotation* latest = nullptr;
    for (const auto& id : images_.at(image_id).annotation_ids) {
        const Annotation& a = annotations_.at(id);
        if (!latest || a.seq > latest->seq) latest = &a;
    }
    if (!latest) return std::nullopt;
    return *latest;
}

std::optional<Annotation> Pipeline::training_target(const std::string& image_id) const {
    std::shared_lock lock(mu_);
    return training_target_locked(image_id);
}

std::optional<Annotation> Pipeline::display_caption(const std::string& image_id) const {
    std::shared_lock lock(mu_);
    if (!images_.count(image_id)) throw NotFoundError("unknown image " + image_id);
    return display_caption_locked(image_id);
}

std::vector<TaskSetEntry> Pipeline::task_sets() const {
    std::shared_lock lock(mu_);
    std::vector<TaskSetEntry> out;
    for (const auto& [id, t] : task_sets_) out.push_back(t);
    return out;
}

std::optional<TaskSetEntry> Pipeline::task_set(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = task_sets_.find(id);
    if (it == task_sets_.end()) return std::nullopt;
    return it->second;
}

std::vector<similarity::RankedItem> Pipeline::rank(const std::string& task_set_id,
                                                   const similarity::ScoreConfig& cfg) const {
    const auto t = task_set(task_set_id);
    if (!t) throw NotFoundError("unknown task set " + task_set_id);
    return rank_texts(t->texts, cfg);
}

std::vector<similarity::RankedItem> Pipeline::rank_texts(const std::vector<std::string>& texts,
                                                         const similarity::ScoreConfig& cfg) const {
    std::optional<similarity::SearchTaskSet> tasks;
    try {
        tasks = similarity::SearchTaskSet::from_texts(texts);
    } catch (const text::ParameterError& e) {
        throw InvalidInputError(e.what());
    }
    std::vector<similarity::CandidateCaption> cands;
    {
        std::shared_lock lock(mu_);
        for (const auto& [id, e] : images_) {
            const auto c = display_caption_locked(id);
            cands.push_back({id, c ? text::tokenize(c->caption) : text::TokenList{}});
        }
    }
    return similarity::rank(cands, *tasks, cfg);
}

std::size_t Pipeline::dataset_size_locked() const {
    std::size_t n = 0;
    for (const auto& [id, e] : images_) {
        for (const auto& aid : e.annotation_ids) {
            if (annotations_.at(aid).reviewed) {
                ++n;
                break;
            }
        }
    }
    return n;
}

std::size_t Pipeline::dataset_size() const {
    std::shared_lock lock(mu_);
    return dataset_size_locked();
}

std::size_t Pipeline::train_size() const {
    std::shared_lock lock(mu_);
    return d_train_.size();
}

std::vector<std::string> Pipeline::train_ids() const {
    std::shared_lock lock(mu_);
    return d_train_;
}

bool Pipeline::should_retrain() const {
    std::shared_lock lock(mu_);
    return pipeline::should_retrain(d_train_.size(), dataset_size_locked(), delta_ppm_);
}

std::vector<CheckpointInfo> Pipeline::checkpoints() const {
    std::shared_lock lock(mu_);
    return checkpoints_;
}

CaptionModel Pipeline::latest_model() const {
    std::shared_lock lock(mu_);
    return latest_;
}

// ---- retraining

void Pipeline::after_event_locked(std::unique_lock<std::shared_mutex>& lock) {
    if (!cfg_.auto_retrain || running_) return;
    if (!pipeline::should_retrain(d_train_.size(), dataset_size_locked(), delta_ppm_)) return;
    start_retrain_locked(lock, "auto");
}

std::optional<JobInfo> Pipeline::poll_trigger(const std::string& requested_by) {
    std::unique_lock lock(mu_);
    if (running_ || !pipeline::should_retrain(d_train_.size(), dataset_size_locked(), delta_ppm_)) return std::nullopt;
    return start_retrain_locked(lock, requested_by);
}

JobInfo Pipeline::start_retrain(const std::string& requested_by) {
    std::unique_lock lock(mu_);
    return start_retrain_locked(lock, requested_by);
}

JobInfo Pipeline::start_retrain_locked(std::unique_lock<std::shared_mutex>& lock, const std::string& requested_by) {
    if (running_) throw BusyError("a training job is already running");
    if (!pipeline::should_retrain(d_train_.size(), dataset_size_locked(), delta_ppm_)) {
        throw ConditionError("retrain condition not met: |D_train|=" + std::to_string(d_train_.size()) +
                             ", |D|=" + std::to_string(dataset_size_locked()));
    }
    std::vector<std::string> ids;
    for (const auto& [id, e] : images_) {
        if (training_target_locked(id)) ids.push_back(id);
    }
    JobInfo job;
    job.id = format_id("job", next_job_++);
    job.requested_by = requested_by;
    job.started_at = now();
    job.dataset_size = ids.size();
    jobs_[job.id] = job;
    running_ = true;

    if (cfg_.background_training) {
        if (worker_.joinable()) worker_.join();
        worker_ = std::thread([this, id = job.id, ids = std::move(ids)]() mutable { run_job(id, std::move(ids)); });
    } else {
        lock.unlock();
        run_job(job.id, std::move(ids));
        lock.lock();
    }
    return jobs_.at(job.id);
}

void Pipeline::run_job(const std::string& job_id, std::vector<std::string> ids) {
    std::string error;
    try {
        std::vector<FitSample> samples;
        CaptionModel previous;
        std::vector<std::pair<ImageEntry, std::string>> snapshot;
        {
            std::shared_lock lock(mu_);
            previous = latest_;
            for (const auto& id : ids) snapshot.emplace_back(images_.at(id), training_target_locked(id)->caption);
        }
        for (const auto& [e, caption] : snapshot) {
            const auto bytes = captioner::read_file(dir_ / e.file);
            samples.push_back({e.id, caption, features_for(e, bytes, previous)});
        }
        const FitRequest req{previous, samples, cfg_.train, cfg_.warm_start, cfg_.seed + checkpoints().size()};
        FitResult r = fit_(req);
        check_model_encoder(r.model);

        std::unique_lock lock(mu_);
        const auto old_train = d_train_;
        d_train_ = ids;
        try {
            const auto info = commit_checkpoint_locked(r.model, r.kind, ids.size(), r.best_epoch, r.history);
            jobs_[job_id].checkpoint = info.index;
        } catch (...) {
            d_train_ = old_train;
            throw;
        }
        jobs_[job_id].state = JobState::kSucceeded;
        jobs_[job_id].finished_at = now();
        running_ = false;
    } catch (const std::exception& e) {
        error = e.what();
    } catch (...) {
        error = "unknown error";
    }
    if (!error.empty()) {
        std::unique_lock lock(mu_);
        jobs_[job_id].state = JobState::kFailed;
        jobs_[job_id].error = error;
        jobs_[job_id].finished_at = now();
        running_ = false;
    }
    idle_cv_.notify_all();
}

std::optional<JobInfo> Pipeline::job(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

bool Pipeline::busy() const {
    std::shared_lock lock(mu_);
    return running_;
}

void Pipeline::wait_idle() {
    std::unique_lock lock(mu_);
    idle_cv_.wait(lock, [&] { return !running_; });
}

// ---- export / import

std::vector<std::uint8_t> Pipeline::export_dataset() const {
    std::shared_lock lock(mu_);
    std::string images_jsonl, annotations_jsonl, tasks_jsonl;
    std::map<std::string, std::string> files;  // archive name -> data dir path
    std::vector<const Annotation*> anns;
    for (const auto& [id, e] : images_) {
        images_jsonl += to_json(e).dump() + "\n";
        files.emplace(e.file, e.file);
        for (const auto& aid : e.annotation_ids) anns.push_back(&annotations_.at(aid));
    }
    std::sort(anns.begin(), anns.end(), [](const Annotation* a, const Annotation* b) { return a->seq < b->seq; });
    for (const auto* a : anns) annotations_jsonl += to_json(*a).dump() + "\n";
    for (const auto& [id, t] : task_sets_) tasks_jsonl += to_json(t).dump() + "\n";

    Json manifest;
    manifest["schema_version"] = kArchiveVersion;
    manifest["kind"] = "spass-dataset";
    manifest["images"] = images_.size();
    manifest["annotations"] = anns.size();
    manifest["task_sets"] = task_sets_.size();
    manifest["reviewed_images"] = dataset_size_locked();

    std::vector<archive::Entry> entries{{"manifest.json", to_vec(manifest.dump(2) + "\n")},
                                        {"images.jsonl", to_vec(images_jsonl)},
                                        {"annotations.jsonl", to_vec(annotations_jsonl)},
                                        {"tasks.jsonl", to_vec(tasks_jsonl)}};
    for (const auto& [name, path] : files) entries.push_back({name, captioner::read_file(dir_ / path)});
    return archive::write_tar(entries);
}

std::vector<std::uint8_t> Pipeline::export_weights() const {
    std::shared_lock lock(mu_);
    const auto& c = checkpoints_.back();
    Json manifest;
    manifest["schema_version"] = kArchiveVersion;
    manifest["kind"] = "spass-weights";
    manifest["checkpoint"] = to_json(c);
    auto sidecar = dir_ / c.file;
    sidecar += ".json";
    return archive::write_tar({{"manifest.json", to_vec(manifest.dump(2) + "\n")},
                               {"model.bin", captioner::read_file(dir_ / c.file)},
                               {"model.bin.json", captioner::read_file(sidecar)}});
}

CheckpointInfo Pipeline::import_weights(std::span<const std::uint8_t> bytes) {
    std::vector<archive::Entry> entries;
    try {
        entries = archive::read_tar(bytes);
    } catch (const archive::ArchiveError& e) {
        throw InvalidInputError(e.what());
    }
    const archive::Entry *bin = nullptr, *json = nullptr;
    for (const auto& e : entries) {
        if (e.name == "model.bin") bin = &e;
        if (e.name == "model.bin.json") json = &e;
    }
    if (!bin || !json) throw InvalidInputError("weights archive lacks model.bin or model.bin.json");
    CaptionModel m;
    try {
        m = captioner::model_from_parts(bin->data, std::string(json->data.begin(), json->data.end()));
    } catch (const captioner::FormatError& e) {
        throw InvalidInputError(e.what());
    }
    check_model_encoder(m);
    std::unique_lock lock(mu_);
    if (running_) throw BusyError("a training job is running");
    auto info = commit_checkpoint_locked(m, "import", d_train_.size(), 0, {});
    if (!(encoder_->config() == latest_.encoder)) encoder_ = std::make_unique<captioner::TinyEncoder>(latest_.encoder);
    return info;
}

void Pipeline::import_dataset(const fs::path& dir, std::span<const std::uint8_t> bytes) {
    if (fs::exists(dir) && !fs::is_empty(dir)) throw InvalidInputError("import target must be empty: " + dir.string());
    std::vector<archive::Entry> entries;
    try {
        entries = archive::read_tar(bytes);
    } catch (const archive::ArchiveError& e) {
        throw InvalidInputError(e.what());
    }
    std::map<std::string, const archive::Entry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    auto text_of = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw InvalidInputError("dataset archive lacks " + name);
        return std::string(it->second->data.begin(), it->second->data.end());
    };
    auto lines_of = [&](const std::string& name) {
        std::vector<nlohmann::json> out;
        std::istringstream in(text_of(name));
        for (std::string line; std::getline(in, line);) {
            if (!line.empty()) out.push_back(nlohmann::json::parse(line));
        }
        return out;
    };

    std::string journal;
    std::vector<std::pair<std::string, const archive::Entry*>> files;
    try {
        const auto manifest = nlohmann::json::parse(text_of("manifest.json"));
        if (manifest.at("kind") != "spass-dataset" || manifest.at("schema_version") != kArchiveVersion) {
            throw InvalidInputError("not a dataset archive");
        }
        std::map<std::string, std::vector<Json>> anns_by_image;
        for (const auto& ja : lines_of("annotations.jsonl")) {
            const Annotation a = annotation_from_json(ja);
            anns_by_image[a.image_id].push_back(to_json(a));
        }
        std::set<std::string> seen;
        for (const auto& ji : lines_of("images.jsonl")) {
            const ImageEntry e = image_from_json(ji);
            auto it = by_name.find(e.file);
            if (it == by_name.end()) throw InvalidInputError("dataset archive lacks " + e.file);
            if (archive::sha256_hex(it->second->data) != e.sha256) {
                throw InvalidInputError("content hash mismatch for " + e.file);
            }
            if (e.file.find("..") != std::string::npos || e.file.rfind("images/", 0) != 0) {
                throw InvalidInputError("unsafe path in archive: " + e.file);
            }
            if (seen.insert(e.file).second) files.emplace_back(e.file, it->second);
            Json line;
            line["type"] = "image";
            line["image"] = to_json(e);
            line["annotations"] = Json::array();
            for (auto& a : anns_by_image[e.id]) line["annotations"].push_back(a);
            anns_by_image.erase(e.id);
            journal += line.dump() + "\n";
        }
        for (const auto& [id, rest] : anns_by_image) {
            if (!rest.empty()) throw InvalidInputError("annotation references unknown image " + id);
        }
        for (const auto& jt : lines_of("tasks.jsonl")) {
            Json line;
            line["type"] = "task_set";
            line["task_set"] = to_json(task_set_from_json(jt));
            journal += line.dump() + "\n";
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInputError(std::string("malformed dataset archive: ") + e.what());
    }

    fs::create_directories(dir / "images");
    for (const auto& [name, entry] : files) captioner::write_file_atomic(dir / name, entry->data);
    captioner::write_file_atomic(dir / "journal.jsonl", as_bytes(journal));
}

}  // namespace spass::pipeline
