#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "spass/captioner/image.hpp"
#include "spass/captioner/model.hpp"

namespace spass::captioner {

// Frozen feature extractor producing an L x D annotation matrix.
class ImageEncoder {
public:
    virtual ~ImageEncoder() = default;
    virtual FeatureMap encode(const Image& image) const = 0;
    virtual std::size_t locations() const = 0;
    virtual std::size_t feature_dim() const = 0;
};

struct EncoderConfig {
    std::size_t input_size = 32;  // images are resized to input_size x input_size
    std::size_t grid = 4;         // output is grid x grid locations
    std::array<std::size_t, 3> channels{8, 16, 32};
    std::uint64_t seed = 7;
    double leak = 0.1;

    // 224x224 input, 14x14x512 output.
    static EncoderConfig reference();

    std::size_t locations() const { return grid * grid; }
    std::size_t feature_dim() const { return channels[2]; }
    // Average-pool factor of each stage; throws ShapeError if input_size is
    // not a multiple of grid.
    std::array<std::size_t, 3> pool_factors() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Three stages of 3x3 convolution (same padding), leaky ReLU and average
// pooling. Filters are drawn once from `seed` and never trained; biases are
// zero and inputs are centred on 0.5, so a uniform mid-grey image maps to an
// all-zero feature map.
class TinyEncoder final : public ImageEncoder {
public:
    explicit TinyEncoder(const EncoderConfig& cfg = {});

    FeatureMap encode(const Image& image) const override;
    std::size_t locations() const override { return cfg_.locations(); }
    std::size_t feature_dim() const override { return cfg_.feature_dim(); }
    const EncoderConfig& config() const { return cfg_; }

private:
    struct Stage {
        std::size_t in_ch = 0, out_ch = 0, pool = 1;
        std::vector<double> filters;  // out_ch x in_ch x 3 x 3
        std::vector<double> bias;
    };
    EncoderConfig cfg_;
    std::array<Stage, 3> stages_;
};

}  // namespace spass::captioner
