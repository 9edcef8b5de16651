#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace adaptagen {

/// 8-bit interleaved RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    std::size_t byte_size() const { return static_cast<std::size_t>(width) * height * 3; }
};

bool is_png(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const Image& image);
/// Decodes any libpng-readable PNG to 8-bit RGB (alpha dropped, palettes and
/// gray expanded).
Image decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Pixel bytes for PNG input; the raw bytes otherwise.
std::vector<std::uint8_t> pixel_bytes(std::span<const std::uint8_t> file_bytes);

}  // namespace adaptagen
