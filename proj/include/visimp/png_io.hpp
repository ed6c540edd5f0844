#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "visimp/raster.hpp"

namespace visimp {

/// Largest accepted PNG side. Anything bigger is rejected as a dimension
/// overflow before pixel data is allocated.
inline constexpr int kMaxPngSide = 1 << 15;
inline constexpr std::int64_t kMaxPngPixels = std::int64_t(1) << 28;

struct PngInfo {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;  // libpng PNG_COLOR_TYPE_* value
};

/// Reads only the header. Throws DataError on anything that is not a PNG.
PngInfo probe_png(std::span<const std::uint8_t> bytes);

/// Decodes any non-interlaced or interlaced PNG to 8-bit RGB, or RGBA when the
/// file carries alpha. Grayscale is expanded, 16-bit samples are reduced.
BitmapImage decode_image_png(std::span<const std::uint8_t> bytes);
std::string encode_image_png(const BitmapImage& image);

/// Maps are single-channel grayscale PNGs. 16-bit is the native format:
/// v is stored as round(v * 65535). 8-bit grayscale is accepted on read
/// (v = sample / 255); palette, color and sub-byte depths are rejected.
ImportanceMap decode_map_png(std::span<const std::uint8_t> bytes);
std::string encode_map_png(const ImportanceMap& map);

BitmapImage read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const BitmapImage& image);

ImportanceMap read_map(const std::filesystem::path& path);
void write_map(const std::filesystem::path& path, const ImportanceMap& map);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace visimp
