#include "spass/captioner/encoder.hpp"

#include <cmath>
#include <string>

namespace spass::captioner {

EncoderConfig EncoderConfig::reference() {
    EncoderConfig cfg;
    cfg.input_size = 224;
    cfg.grid = 14;
    cfg.channels = {32, 128, 512};
    return cfg;
}

std::array<std::size_t, 3> EncoderConfig::pool_factors() const {
    if (grid == 0 || input_size == 0 || input_size % grid != 0) {
        throw ShapeError("encoder input size " + std::to_string(input_size) + " is not a multiple of grid " +
                         std::to_string(grid));
    }
    const std::size_t total = input_size / grid;
    // most even split into three integer factors, largest first
    std::array<std::size_t, 3> best{total, 1, 1};
    for (std::size_t a = 1; a <= total; ++a) {
        if (total % a) continue;
        for (std::size_t b = 1; b <= a; ++b) {
            if ((total / a) % b) continue;
            const std::size_t c = total / a / b;
            if (c > b) continue;
            if (a < best[0]) best = {a, b, c};
        }
    }
    return best;
}

TinyEncoder::TinyEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    const auto pools = cfg_.pool_factors();
    for (std::size_t c : cfg_.channels) {
        if (c == 0) throw ShapeError("encoder channel counts must be positive");
    }
    Rng rng(cfg_.seed);
    std::size_t in_ch = 3;
    for (std::size_t s = 0; s < 3; ++s) {
        Stage& st = stages_[s];
        st.in_ch = in_ch;
        st.out_ch = cfg_.channels[s];
        st.pool = pools[s];
        st.filters.resize(st.out_ch * st.in_ch * 9);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(st.in_ch * 9));
        for (double& x : st.filters) x = rng.normal() * std_dev;
        st.bias.assign(st.out_ch, 0.0);
        in_ch = st.out_ch;
    }
}

FeatureMap TinyEncoder::encode(const Image& image) const {
    if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height * 3) {
        throw DecodeError("malformed image buffer");
    }
    const Image resized = resize_bilinear(image, cfg_.input_size, cfg_.input_size);

    // channel-major activations: ch x size x size
    std::size_t size = cfg_.input_size;
    std::vector<double> act(3 * size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) act[(ch * size + y) * size + x] = resized.at(y, x, ch) - 0.5;

    for (const Stage& st : stages_) {
        std::vector<double> conv(st.out_ch * size * size, 0.0);
        for (std::size_t o = 0; o < st.out_ch; ++o) {
            double* out = conv.data() + o * size * size;
            for (std::size_t i = 0; i < st.in_ch; ++i) {
                const double* in = act.data() + i * size * size;
                const double* k = st.filters.data() + (o * st.in_ch + i) * 9;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const double kv = k[(dy + 1) * 3 + (dx + 1)];
                        const std::size_t y_lo = dy < 0 ? 1 : 0, y_hi = dy > 0 ? size - 1 : size;
                        const std::size_t x_lo = dx < 0 ? 1 : 0, x_hi = dx > 0 ? size - 1 : size;
                        for (std::size_t y = y_lo; y < y_hi; ++y) {
                            const double* src = in + (y + static_cast<std::size_t>(dy + 1) - 1) * size;
                            double* dst = out + y * size;
                            for (std::size_t x = x_lo; x < x_hi; ++x) dst[x] += kv * src[x + static_cast<std::size_t>(dx + 1) - 1];
                        }
                    }
                }
            }
            for (std::size_t p = 0; p < size * size; ++p) {
                const double v = out[p] + st.bias[o];
                out[p] = v >= 0.0 ? v : cfg_.leak * v;
            }
        }
        const std::size_t next = size / st.pool;
        const double inv = 1.0 / static_cast<double>(st.pool * st.pool);
        std::vector<double> pooled(st.out_ch * next * next, 0.0);
        for (std::size_t o = 0; o < st.out_ch; ++o)
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x)
                    pooled[(o * next + y / st.pool) * next + x / st.pool] += conv[(o * size + y) * size + x] * inv;
        act = std::move(pooled);
        size = next;
    }

    FeatureMap f{Matrix(cfg_.locations(), cfg_.feature_dim())};
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t d = 0; d < cfg_.feature_dim(); ++d)
                f.annotations(y * size + x, d) = act[(d * size + y) * size + x];
    return f;
}

}  // namespace spass::captioner
