#pragma once

// Binary PGM (P5) / PPM (P6) persistence; ASCII P2/P3 are accepted on read.

#include <filesystem>

#include "vqamask/image.hpp"

namespace vqamask::io {

/// Throws Unreadable on missing files or malformed headers.
Image read_image(const std::filesystem::path& path);
/// P5 for one channel, P6 for three. Throws WriteFailure.
void write_image(const std::filesystem::path& path, const Image& image);

/// Any nonzero sample becomes 1.
BinaryMask read_mask(const std::filesystem::path& path);
/// Single-channel P5 with foreground 255, background 0.
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

Image mask_to_image(const BinaryMask& mask);

}  // namespace vqamask::io
