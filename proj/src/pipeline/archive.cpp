#include "spass/archive.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstring>
#include <memory>

namespace spass::archive {

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(std::uint8_t* field, std::size_t width, std::uint64_t value) {
    // width - 1 digits plus NUL
    std::snprintf(reinterpret_cast<char*>(field), width, "%0*llo", static_cast<int>(width - 1),
                  static_cast<unsigned long long>(value));
}

std::uint64_t get_octal(const std::uint8_t* field, std::size_t width) {
    std::uint64_t v = 0;
    std::size_t i = 0;
    while (i < width && (field[i] == ' ' || field[i] == 0)) ++i;
    for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) v = v * 8 + (field[i] - '0');
    return v;
}

std::uint64_t checksum(const std::uint8_t* header) {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < kBlock; ++i) sum += (i >= 148 && i < 156) ? ' ' : header[i];
    return sum;
}

}  // namespace

std::vector<std::uint8_t> write_tar(const std::vector<Entry>& entries) {
    std::vector<std::uint8_t> out;
    for (const auto& e : entries) {
        if (e.name.empty() || e.name.size() > 99) throw ArchiveError("tar entry name must be 1..99 bytes: " + e.name);
        std::uint8_t h[kBlock] = {};
        std::memcpy(h, e.name.data(), e.name.size());
        put_octal(h + 100, 8, 0644);
        put_octal(h + 108, 8, 0);
        put_octal(h + 116, 8, 0);
        put_octal(h + 124, 12, e.data.size());
        put_octal(h + 136, 12, 0);
        h[156] = '0';
        std::memcpy(h + 257, "ustar", 6);
        h[263] = '0';
        h[264] = '0';
        put_octal(h + 148, 7, checksum(h));
        h[155] = ' ';
        out.insert(out.end(), h, h + kBlock);
        out.insert(out.end(), e.data.begin(), e.data.end());
        out.resize(out.size() + (kBlock - e.data.size() % kBlock) % kBlock, 0);
    }
    out.resize(out.size() + 2 * kBlock, 0);
    return out;
}

std::vector<Entry> read_tar(std::span<const std::uint8_t> bytes) {
    std::vector<Entry> out;
    std::size_t pos = 0;
    while (true) {
        if (pos + kBlock > bytes.size()) throw ArchiveError("tar archive truncated");
        const std::uint8_t* h = bytes.data() + pos;
        bool zero = true;
        for (std::size_t i = 0; i < kBlock && zero; ++i) zero = h[i] == 0;
        if (zero) break;
        if (get_octal(h + 148, 8) != checksum(h)) throw ArchiveError("tar header checksum mismatch");
        const std::uint8_t type = h[156];
        const std::uint64_t size = get_octal(h + 124, 12);
        pos += kBlock;
        if (size > bytes.size() - pos) throw ArchiveError("tar entry truncated");
        if (type == '0' || type == 0) {
            Entry e;
            e.name.assign(reinterpret_cast<const char*>(h), strnlen(reinterpret_cast<const char*>(h), 100));
            e.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                          bytes.begin() + static_cast<std::ptrdiff_t>(pos + size));
            out.push_back(std::move(e));
        }
        pos += (size + kBlock - 1) / kBlock * kBlock;
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

}  // namespace spass::archive
