#pragma once

#include "ngf/image.hpp"

#include <filesystem>

namespace ngf {

/// Reads an 8-bit PNG. `expected_channels` (1 or 3) must match the file's
/// color type exactly; palette, 16-bit and alpha images are rejected with a
/// ValidationError naming the file.
ImageU8 read_png(const std::filesystem::path& path, int expected_channels);

/// Writes an 8-bit gray or RGB PNG. Output bytes depend only on the pixels.
void write_png(const std::filesystem::path& path, const ImageU8& img);

} // namespace ngf
