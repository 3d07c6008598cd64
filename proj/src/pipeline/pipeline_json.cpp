#include "spass/pipeline_json.hpp"

#include <cmath>

namespace spass::pipeline {

Json to_json(const ImageEntry& e) {
    Json j;
    j["id"] = e.id;
    j["sha256"] = e.sha256;
    j["file"] = e.file;
    j["format"] = e.format;
    j["duplicate_of"] = e.duplicate_of ? Json(*e.duplicate_of) : Json(nullptr);
    j["received_at"] = e.received_at;
    j["submitted_by"] = e.submitted_by;
    return j;
}

Json to_json(const Annotation& a) {
    Json j;
    j["id"] = a.id;
    j["image_id"] = a.image_id;
    j["caption"] = a.caption;
    j["author"] = a.author;
    j["reviewed"] = a.reviewed;
    j["votes"] = a.votes();
    j["voters"] = a.voters;
    j["seq"] = a.seq;
    j["timestamp"] = a.timestamp;
    return j;
}

Json to_json(const TaskSetEntry& t) {
    Json j;
    j["id"] = t.id;
    j["texts"] = t.texts;
    j["created_by"] = t.created_by;
    j["created_at"] = t.created_at;
    return j;
}

Json to_json(const captioner::EpochMetrics& m) {
    return Json{{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"bleu", m.bleu}};
}

Json to_json(const CheckpointInfo& c) {
    Json j;
    j["index"] = c.index;
    j["file"] = c.file;
    j["created_at"] = c.created_at;
    j["dataset_size"] = c.dataset_size;
    j["kind"] = c.kind;
    j["best_epoch"] = c.best_epoch;
    j["history"] = Json::array();
    for (const auto& m : c.history) j["history"].push_back(to_json(m));
    return j;
}

Json to_json(const JobInfo& job) {
    Json j;
    j["id"] = job.id;
    j["state"] = to_string(job.state);
    j["requested_by"] = job.requested_by;
    j["started_at"] = job.started_at;
    j["finished_at"] = job.finished_at.empty() ? Json(nullptr) : Json(job.finished_at);
    j["dataset_size"] = job.dataset_size;
    j["checkpoint"] = job.checkpoint ? Json(*job.checkpoint) : Json(nullptr);
    j["error"] = job.error.empty() ? Json(nullptr) : Json(job.error);
    return j;
}

Json to_json(const similarity::SimilarityScore& s) {
    Json j;
    j["value"] = s.value;
    j["log_value"] = std::isfinite(s.log_value) ? Json(s.log_value) : Json(nullptr);
    j["p"] = s.precisions;
    j["eta"] = s.brevity_penalty;
    return j;
}

ImageEntry image_from_json(const nlohmann::json& j) {
    ImageEntry e;
    e.id = j.at("id");
    e.sha256 = j.at("sha256");
    e.file = j.at("file");
    e.format = j.at("format");
    if (!j.at("duplicate_of").is_null()) e.duplicate_of = j.at("duplicate_of").get<std::string>();
    e.received_at = j.at("received_at");
    e.submitted_by = j.at("submitted_by");
    return e;
}

Annotation annotation_from_json(const nlohmann::json& j) {
    Annotation a;
    a.id = j.at("id");
    a.image_id = j.at("image_id");
    a.caption = j.at("caption");
    a.author = j.at("author");
    a.reviewed = j.at("reviewed");
    a.seq = j.at("seq");
    a.timestamp = j.at("timestamp");
    if (j.contains("voters")) a.voters = j.at("voters").get<std::vector<std::string>>();
    return a;
}

TaskSetEntry task_set_from_json(const nlohmann::json& j) {
    TaskSetEntry t;
    t.id = j.at("id");
    t.texts = j.at("texts").get<std::vector<std::string>>();
    t.created_by = j.at("created_by");
    t.created_at = j.at("created_at");
    return t;
}

CheckpointInfo checkpoint_from_json(const nlohmann::json& j) {
    CheckpointInfo c;
    c.index = j.at("index");
    c.file = j.at("file");
    c.created_at = j.at("created_at");
    c.dataset_size = j.at("dataset_size");
    c.kind = j.at("kind");
    c.best_epoch = j.at("best_epoch");
    for (const auto& m : j.at("history")) {
        captioner::EpochMetrics e;
        e.epoch = m.at("epoch");
        e.train_loss = m.at("train_loss");
        e.bleu = m.at("bleu").get<captioner::BleuScores>();
        c.history.push_back(e);
    }
    return c;
}

}  // namespace spass::pipeline
