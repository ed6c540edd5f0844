#include "visimp/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "visimp/error.hpp"

namespace visimp {

namespace {

enum class DecodeMode { image, map };

// All state touched between setjmp and a possible longjmp lives here, owned
// by the caller's frame, so nothing in the jumping frame is left indeterminate.
struct DecodeContext {
    std::span<const std::uint8_t> input;
    std::size_t pos = 0;
    DecodeMode mode = DecodeMode::image;
    bool header_only = false;
    char error[256] = {};

    PngInfo info;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
};

struct EncodeContext {
    std::string output;
    char error[256] = {};
};

void on_error(png_structp png, png_const_charp message) {
    auto* buffer = static_cast<char*>(png_get_error_ptr(png));
    std::snprintf(buffer, 256, "%s", message);
    png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

void read_bytes(png_structp png, png_bytep out, png_size_t n) {
    auto* ctx = static_cast<DecodeContext*>(png_get_io_ptr(png));
    if (ctx->pos + n > ctx->input.size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, ctx->input.data() + ctx->pos, n);
    ctx->pos += n;
}

void write_bytes(png_structp png, png_bytep data, png_size_t n) {
    auto* ctx = static_cast<EncodeContext*>(png_get_io_ptr(png));
    ctx->output.append(reinterpret_cast<const char*>(data), n);
}

void flush_bytes(png_structp) {}

bool decode_impl(DecodeContext& ctx, png_structp png, png_infop info) {
    if (setjmp(png_jmpbuf(png))) return false;

    png_set_read_fn(png, &ctx, read_bytes);
    png_set_user_limits(png, kMaxPngSide, kMaxPngSide);
    png_read_info(png, info);

    ctx.info.width = int(png_get_image_width(png, info));
    ctx.info.height = int(png_get_image_height(png, info));
    ctx.info.bit_depth = png_get_bit_depth(png, info);
    ctx.info.color_type = png_get_color_type(png, info);
    if (std::int64_t(ctx.info.width) * ctx.info.height > kMaxPngPixels) {
        std::snprintf(ctx.error, sizeof ctx.error, "dimension overflow: %dx%d", ctx.info.width, ctx.info.height);
        return false;
    }
    if (ctx.header_only) return true;

    if (ctx.mode == DecodeMode::map) {
        const int ct = ctx.info.color_type;
        if (ct != PNG_COLOR_TYPE_GRAY) {
            std::snprintf(ctx.error, sizeof ctx.error, "importance maps must be single-channel grayscale PNG");
            return false;
        }
        if (ctx.info.bit_depth != 8 && ctx.info.bit_depth != 16) {
            std::snprintf(ctx.error, sizeof ctx.error, "unsupported map bit depth %d", ctx.info.bit_depth);
            return false;
        }
        ctx.channels = 1;
    } else {
        png_set_palette_to_rgb(png);
        png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        png_set_strip_16(png);
        png_set_gray_to_rgb(png);
    }
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    if (ctx.mode == DecodeMode::image) ctx.channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    ctx.pixels.resize(rowbytes * std::size_t(ctx.info.height));
    ctx.rows.resize(std::size_t(ctx.info.height));
    for (int y = 0; y < ctx.info.height; ++y) ctx.rows[std::size_t(y)] = ctx.pixels.data() + rowbytes * std::size_t(y);
    png_read_image(png, ctx.rows.data());
    png_read_end(png, nullptr);
    return true;
}

DecodeContext decode(std::span<const std::uint8_t> bytes, DecodeMode mode, bool header_only) {
    DecodeContext ctx;
    ctx.input = bytes;
    ctx.mode = mode;
    ctx.header_only = header_only;
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw DataError("not a PNG stream");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, ctx.error, on_error, on_warning);
    if (!png) throw Error("failed to allocate PNG reader");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("failed to allocate PNG info");
    }
    const bool ok = decode_impl(ctx, png, info);
    png_destroy_read_struct(&png, &info, nullptr);
    if (!ok) throw DataError(std::string("PNG decode failed: ") + ctx.error);
    return ctx;
}

bool encode_impl(EncodeContext& ctx, png_structp png, png_infop info, int width, int height, int bit_depth,
                 int color_type, const std::vector<png_bytep>& rows) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_set_write_fn(png, &ctx, write_bytes, flush_bytes);
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    return true;
}

std::string encode(const std::uint8_t* pixels, int width, int height, int bit_depth, int color_type,
                   std::size_t rowbytes) {
    EncodeContext ctx;
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[std::size_t(y)] = const_cast<png_bytep>(pixels + rowbytes * std::size_t(y));
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, ctx.error, on_error, on_warning);
    if (!png) throw Error("failed to allocate PNG writer");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("failed to allocate PNG info");
    }
    const bool ok = encode_impl(ctx, png, info, width, height, bit_depth, color_type, rows);
    png_destroy_write_struct(&png, &info);
    if (!ok) throw Error(std::string("PNG encode failed: ") + ctx.error);
    return std::move(ctx.output);
}

}  // namespace

PngInfo probe_png(std::span<const std::uint8_t> bytes) {
    return decode(bytes, DecodeMode::image, true).info;
}

BitmapImage decode_image_png(std::span<const std::uint8_t> bytes) {
    DecodeContext ctx = decode(bytes, DecodeMode::image, false);
    return BitmapImage(ctx.info.width, ctx.info.height, ctx.channels, std::move(ctx.pixels));
}

std::string encode_image_png(const BitmapImage& image) {
    const int color_type = image.channels() == 4 ? PNG_COLOR_TYPE_RGB_ALPHA : PNG_COLOR_TYPE_RGB;
    return encode(image.data().data(), image.width(), image.height(), 8, color_type,
                  std::size_t(image.width()) * std::size_t(image.channels()));
}

ImportanceMap decode_map_png(std::span<const std::uint8_t> bytes) {
    DecodeContext ctx = decode(bytes, DecodeMode::map, false);
    const int w = ctx.info.width;
    const int h = ctx.info.height;
    std::vector<double> values(std::size_t(w) * std::size_t(h));
    if (ctx.info.bit_depth == 16) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const unsigned sample = (unsigned(ctx.pixels[2 * i]) << 8) | unsigned(ctx.pixels[2 * i + 1]);
            values[i] = double(sample) / 65535.0;
        }
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = double(ctx.pixels[i]) / 255.0;
    }
    return ImportanceMap(w, h, std::move(values));
}

std::string encode_map_png(const ImportanceMap& map) {
    std::vector<std::uint8_t> samples(map.size() * 2);
    const auto values = map.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto q = std::uint16_t(std::lround(values[i] * 65535.0));
        samples[2 * i] = std::uint8_t(q >> 8);
        samples[2 * i + 1] = std::uint8_t(q & 0xff);
    }
    return encode(samples.data(), map.width(), map.height(), 16, PNG_COLOR_TYPE_GRAY,
                  std::size_t(map.width()) * 2);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

BitmapImage read_image(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_image_png(as_bytes(bytes));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_image(const std::filesystem::path& path, const BitmapImage& image) {
    write_file(path, encode_image_png(image));
}

ImportanceMap read_map(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_map_png(as_bytes(bytes));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_map(const std::filesystem::path& path, const ImportanceMap& map) {
    write_file(path, encode_map_png(map));
}

}  // namespace visimp
