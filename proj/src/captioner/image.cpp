#include "spass/captioner/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace spass::captioner {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool is_png(std::span<const std::uint8_t> b) {
    return b.size() >= 8 && std::memcmp(b.data(), kPngSignature, 8) == 0;
}

bool is_ppm(std::span<const std::uint8_t> b) { return b.size() >= 2 && b[0] == 'P' && b[1] == '6'; }

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw DecodeError(std::string("PNG: ") + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DecodeError("PNG: " + msg);
    }
    Image out(img.width, img.height);
    for (std::size_t k = 0; k < out.pixels.size(); ++k) out.pixels[k] = raw[k] / 255.0;
    return out;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 2;
    auto next_int = [&]() -> long {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        long v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            any = true;
            if (v > 1'000'000) throw DecodeError("PPM: header value too large");
        }
        if (!any) throw DecodeError("PPM: malformed header");
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw DecodeError("PPM: unsupported dimensions or maxval");
    ++pos;  // single whitespace before the raster
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    if (pos + need > bytes.size()) throw DecodeError("PPM: truncated raster");
    Image out(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
    for (std::size_t k = 0; k < need; ++k) out.pixels[k] = bytes[pos + k] / 255.0;
    return out;
}

}  // namespace

bool looks_like_image(std::span<const std::uint8_t> bytes) { return is_png(bytes) || is_ppm(bytes); }

Image decode_image(std::span<const std::uint8_t> bytes) {
    if (is_png(bytes)) return decode_png(bytes);
    if (is_ppm(bytes)) return decode_ppm(bytes);
    throw DecodeError("unrecognized image format");
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    std::vector<std::uint8_t> raw(img.pixels.size());
    std::transform(img.pixels.begin(), img.pixels.end(), raw.begin(), to_byte);
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, raw.data(), 0, nullptr)) {
        throw DecodeError(std::string("PNG encode: ") + pi.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, raw.data(), 0, nullptr)) {
        throw DecodeError(std::string("PNG encode: ") + pi.message);
    }
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.pixels.size());
    for (double v : img.pixels) out.push_back(to_byte(v));
    return out;
}

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
    if (img.width == 0 || img.height == 0) throw DecodeError("cannot resize an empty image");
    if (img.width == width && img.height == height) return img;
    Image out(width, height);
    const double sx = static_cast<double>(img.width) / static_cast<double>(width);
    const double sy = static_cast<double>(img.height) / static_cast<double>(height);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx =
                std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double tx = fx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double top = img.at(y0, x0, ch) * (1 - tx) + img.at(y0, x1, ch) * tx;
                const double bot = img.at(y1, x0, ch) * (1 - tx) + img.at(y1, x1, ch) * tx;
                out.at(y, x, ch) = top * (1 - ty) + bot * ty;
            }
        }
    }
    return out;
}

}  // namespace spass::captioner
