#include "spass/captioner/synthetic.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "spass/tensor.hpp"

namespace spass::captioner {

namespace {

struct Colour {
    const char* name;
    double r, g, b;
};

constexpr std::array<Colour, 4> kColours{{
    {"red", 0.90, 0.10, 0.10},
    {"green", 0.10, 0.80, 0.20},
    {"blue", 0.10, 0.20, 0.90},
    {"white", 0.95, 0.95, 0.95},
}};
constexpr std::array<const char*, 4> kShapes{"circle", "square", "triangle", "bar"};
constexpr std::array<const char*, 4> kPositions{"left", "right", "top", "bottom"};
constexpr std::array<const char*, 2> kSizes{"small", "large"};

bool inside(std::size_t shape, double dx, double dy, double r) {
    switch (shape) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return std::abs(dx) <= r && std::abs(dy) <= r;
        case 2: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
        default: return std::abs(dx) <= r && std::abs(dy) <= r / 3.0;
    }
}

}  // namespace

std::vector<SyntheticSample> synthetic_shapes_corpus(std::size_t count, std::uint64_t seed, std::size_t image_size) {
    constexpr std::size_t kCombos = 4 * 4 * 4 * 2;
    if (count > 64) throw std::invalid_argument("synthetic corpus supports at most 64 scenes");
    if (image_size < 8) throw std::invalid_argument("synthetic images must be at least 8 pixels wide");

    Rng rng(seed);
    std::vector<std::size_t> combos(kCombos);
    for (std::size_t i = 0; i < kCombos; ++i) combos[i] = i;
    rng.shuffle(combos);

    std::vector<SyntheticSample> out;
    const double S = static_cast<double>(image_size);
    for (std::size_t k = 0; k < count; ++k) {
        std::size_t c = combos[k];
        const std::size_t colour = c % 4;
        c /= 4;
        const std::size_t shape = c % 4;
        c /= 4;
        const std::size_t pos = c % 4;
        c /= 4;
        const std::size_t size = c % 2;

        static constexpr double cx_of[4] = {0.25, 0.75, 0.5, 0.5};
        static constexpr double cy_of[4] = {0.5, 0.5, 0.25, 0.75};
        const double cx = cx_of[pos] * S, cy = cy_of[pos] * S;
        const double r = (size == 0 ? 0.16 : 0.28) * S;

        Image img(image_size, image_size);
        for (std::size_t y = 0; y < image_size; ++y) {
            for (std::size_t x = 0; x < image_size; ++x) {
                const double noise = rng.uniform(-0.03, 0.03);
                double rgb[3] = {0.76 + noise, 0.60 + noise, 0.42 + noise};
                if (inside(shape, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r)) {
                    rgb[0] = kColours[colour].r;
                    rgb[1] = kColours[colour].g;
                    rgb[2] = kColours[colour].b;
                }
                for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
            }
        }

        std::string caption;
        const std::string desc = std::string(kSizes[size]) + " " + kColours[colour].name + " " + kShapes[shape];
        if ((shape + pos) % 2 == 0) {
            caption = "a " + desc + " on the " + kPositions[pos] + " side of the frame";
        } else {
            caption = "there is a " + desc + " near the " + kPositions[pos] + " edge";
        }
        out.push_back({std::move(img), std::move(caption)});
    }
    return out;
}

}  // namespace spass::captioner
