#pragma once

#include "json.hpp"
#include "spass/pipeline.hpp"

namespace spass::pipeline {

using Json = nlohmann::ordered_json;

Json to_json(const ImageEntry& e);
Json to_json(const Annotation& a);
Json to_json(const TaskSetEntry& t);
Json to_json(const CheckpointInfo& c);
Json to_json(const JobInfo& j);
// log_value of -inf is written as null
Json to_json(const similarity::SimilarityScore& s);
Json to_json(const captioner::EpochMetrics& m);

ImageEntry image_from_json(const nlohmann::json& j);
Annotation annotation_from_json(const nlohmann::json& j);
TaskSetEntry task_set_from_json(const nlohmann::json& j);
CheckpointInfo checkpoint_from_json(const nlohmann::json& j);

}  // namespace spass::pipeline
