#include "adaptagen/image_io.hpp"

#include <cstring>

#include <png.h>

#include "adaptagen/common.hpp"

namespace adaptagen {

bool is_png(std::span<const std::uint8_t> bytes) {
    static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return bytes.size() >= 8 && std::memcmp(bytes.data(), kSignature, 8) == 0;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.width <= 0 || image.height <= 0 || image.rgb.size() != image.byte_size()) {
        throw Error("encode_png: raster size does not match dimensions");
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
        throw Error(std::string("encode_png: ") + png.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
        throw Error(std::string("encode_png: ") + png.message);
    }
    out.resize(size);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw Error(std::string("decode_png: ") + png.message);
    }
    png.format = PNG_FORMAT_RGB;
    Image image;
    image.width = static_cast<int>(png.width);
    image.height = static_cast<int>(png.height);
    image.rgb.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, image.rgb.data(), 0, nullptr)) {
        png_image_free(&png);
        throw Error(std::string("decode_png: ") + png.message);
    }
    return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    write_file_atomic(path, encode_png(image));
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }

std::vector<std::uint8_t> pixel_bytes(std::span<const std::uint8_t> file_bytes) {
    if (is_png(file_bytes)) {
        return decode_png(file_bytes).rgb;
    }
    return {file_bytes.begin(), file_bytes.end()};
}

}  // namespace adaptagen
