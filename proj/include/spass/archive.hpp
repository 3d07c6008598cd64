#pragma once

// Minimal ustar reader/writer for export bundles. Regular files only;
// names up to 100 bytes.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spass::archive {

class ArchiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Entry {
    std::string name;
    std::vector<std::uint8_t> data;
};

// mtime is fixed at 0 so identical inputs give identical bytes.
std::vector<std::uint8_t> write_tar(const std::vector<Entry>& entries);
std::vector<Entry> read_tar(std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace spass::archive
