#pragma once

// Tensor container format (all integers and floats little-endian):
//
//   magic    8 bytes  "SPASSTNS"
//   version  u32      1
//   count    u32      number of tensors
//   per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64[rank]
//     values   f64[prod(dims)], row-major
//
// Model checkpoints store every ModelWeights tensor under its for_each name;
// a JSON sidecar (<path>.json) carries the hyperparameters and vocabulary.
// Feature files hold a single tensor named "features" of shape L x D.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spass/captioner/encoder.hpp"
#include "spass/captioner/weights.hpp"
#include "spass/text.hpp"

namespace spass::captioner {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;
};

std::vector<std::uint8_t> write_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> write_features(const FeatureMap& f);
FeatureMap read_features(std::span<const std::uint8_t> bytes);
bool looks_like_tensor_file(std::span<const std::uint8_t> bytes);

// Everything needed to caption an image.
struct CaptionModel {
    ModelWeights weights;
    text::Vocabulary vocab;
    EncoderConfig encoder;
    std::size_t max_caption_length = text::kDefaultMaxCaptionLength;

    std::string sidecar_json() const;

    friend bool operator==(const CaptionModel&, const CaptionModel&) = default;
};

std::vector<std::uint8_t> write_weights(const ModelWeights& w);
ModelWeights read_weights(std::span<const std::uint8_t> bytes, const ModelDims& dims, const ModelOptions& opts);

CaptionModel model_from_parts(std::span<const std::uint8_t> weights_bytes, const std::string& sidecar_json);

// Writes <path> and <path>.json, each via a temporary file and rename.
void save_model(const CaptionModel& model, const std::filesystem::path& path);
CaptionModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Temp file + rename in the same directory.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace spass::captioner
