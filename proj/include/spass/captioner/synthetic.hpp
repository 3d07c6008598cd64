#pragma once

// Procedurally drawn "terrain" scenes with template captions, used as a
// stand-in training corpus and for end-to-end tests.

#include <cstdint>
#include <string>
#include <vector>

#include "spass/captioner/image.hpp"

namespace spass::captioner {

struct SyntheticSample {
    Image image;
    std::string caption;
};

// `count` distinct scenes (count <= 64). Each shows one coloured shape on a
// noisy sand-coloured background; the caption names its size, colour, shape
// and position.
std::vector<SyntheticSample> synthetic_shapes_corpus(std::size_t count, std::uint64_t seed,
                                                     std::size_t image_size = 32);

}  // namespace spass::captioner
