#include "visimp/retarget.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "visimp/error.hpp"
#include "visimp/rng.hpp"

namespace visimp {

namespace {

bool parse_positive(std::string_view s, int& out) {
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end && out > 0;
}

}  // namespace

AspectRatio parse_aspect(const std::string& text) {
    const auto colon = text.find(':');
    AspectRatio a;
    if (colon == std::string::npos || !parse_positive(std::string_view(text).substr(0, colon), a.w) ||
        !parse_positive(std::string_view(text).substr(colon + 1), a.h)) {
        throw ParameterError("aspect must look like W:H with positive integers, got '" + text + "'");
    }
    return a;
}

const char* to_string(CropMethod method) {
    switch (method) {
        case CropMethod::importance: return "importance";
        case CropMethod::edge: return "edge";
        case CropMethod::random: return "random";
        case CropMethod::external: return "external";
    }
    return "importance";
}

CropMethod crop_method_from_string(const std::string& s) {
    for (auto m : {CropMethod::importance, CropMethod::edge, CropMethod::random, CropMethod::external}) {
        if (s == to_string(m)) return m;
    }
    throw ParameterError("unknown crop method '" + s + "'");
}

std::string crop_result_to_json(const CropResult& r) {
    return nlohmann::json{{"rect", {r.rect.x, r.rect.y, r.rect.w, r.rect.h}},
                          {"contained_importance", r.contained_importance},
                          {"method", to_string(r.method)}}
        .dump();
}

CropSize crop_size(const CropSpec& spec, int width, int height) {
    if (const auto* size = std::get_if<CropSize>(&spec)) {
        if (size->w < 1 || size->h < 1) throw ParameterError("crop size must be positive");
        if (size->w > width || size->h > height) {
            throw ParameterError("crop " + std::to_string(size->w) + "x" + std::to_string(size->h) +
                                 " does not fit in " + std::to_string(width) + "x" + std::to_string(height));
        }
        return *size;
    }
    const auto& a = std::get<AspectRatio>(spec);
    if (a.w < 1 || a.h < 1) throw ParameterError("aspect ratio must be positive");
    const std::int64_t W = width, H = height, aw = a.w, ah = a.h;
    CropSize out;
    if (W * ah <= H * aw) {
        out.w = width;
        out.h = int(std::clamp<std::int64_t>((2 * W * ah + aw) / (2 * aw), 1, H));
    } else {
        out.h = height;
        out.w = int(std::clamp<std::int64_t>((2 * H * aw + ah) / (2 * ah), 1, W));
    }
    return out;
}

CropResult best_crop(const ImportanceMap& map, const CropSpec& spec, CropMethod method) {
    const CropSize size = crop_size(spec, map.width(), map.height());
    const IntegralTable table(map);
    const int nx = map.width() - size.w + 1;
    const int ny = map.height() - size.h + 1;

    double best = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) best = std::max(best, table.rect_sum(x, y, size.w, size.h));
    }
    const double threshold = best - kCropTieTolerance * std::max(1.0, std::abs(best));
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            const double s = table.rect_sum(x, y, size.w, size.h);
            if (s >= threshold) return {{x, y, size.w, size.h}, s, method};
        }
    }
    throw Error("crop search found no window");  // unreachable: the maximum itself passes
}

CropResult random_crop(const ImportanceMap& map, const CropSpec& spec, std::uint64_t seed) {
    const CropSize size = crop_size(spec, map.width(), map.height());
    const auto nx = std::uint64_t(map.width() - size.w + 1);
    const auto ny = std::uint64_t(map.height() - size.h + 1);
    Rng rng(seed);
    const std::uint64_t index = rng.below(nx * ny);
    const int x = int(index % nx);
    const int y = int(index / nx);
    const IntegralTable table(map);
    return {{x, y, size.w, size.h}, table.rect_sum(x, y, size.w, size.h), CropMethod::random};
}

CropResult edge_crop(const BitmapImage& image, const CropSpec& spec) {
    return best_crop(edge_energy(image), spec, CropMethod::edge);
}

BitmapImage retarget_image(const BitmapImage& image, const BoundingBox& r) {
    if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > image.width() || r.y + r.h > image.height()) {
        throw ParameterError("crop rectangle lies outside the image");
    }
    const int c = image.channels();
    std::vector<std::uint8_t> out;
    out.reserve(std::size_t(r.w) * std::size_t(r.h) * std::size_t(c));
    const auto src = image.data();
    for (int y = r.y; y < r.y + r.h; ++y) {
        const auto row = src.subspan((std::size_t(y) * std::size_t(image.width()) + std::size_t(r.x)) * std::size_t(c),
                                     std::size_t(r.w) * std::size_t(c));
        out.insert(out.end(), row.begin(), row.end());
    }
    return BitmapImage(r.w, r.h, c, std::move(out));
}

}  // namespace visimp
