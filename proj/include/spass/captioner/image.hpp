#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace spass::captioner {

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// RGB image, row-major, channel-interleaved, values in [0, 1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h * 3, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t ch) { return pixels[(y * width + x) * 3 + ch]; }
    double at(std::size_t y, std::size_t x, std::size_t ch) const { return pixels[(y * width + x) * 3 + ch]; }
};

// Accepts PNG and binary PPM (P6, maxval 255).
Image decode_image(std::span<const std::uint8_t> bytes);
bool looks_like_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_ppm(const Image& img);

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height);

}  // namespace spass::captioner
