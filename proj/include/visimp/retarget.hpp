#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "visimp/metrics.hpp"
#include "visimp/raster.hpp"

namespace visimp {

struct AspectRatio {
    int w = 1;
    int h = 1;
};

struct CropSize {
    int w = 1;
    int h = 1;
};

/// Either an aspect ratio (the largest fitting rectangle is used) or an
/// exact size in pixels.
using CropSpec = std::variant<AspectRatio, CropSize>;

/// Parses "W:H" with positive integers. Throws ParameterError otherwise.
AspectRatio parse_aspect(const std::string& text);

enum class CropMethod { importance, edge, random, external };

const char* to_string(CropMethod method);
CropMethod crop_method_from_string(const std::string& s);

struct CropResult {
    BoundingBox rect;
    double contained_importance = 0.0;
    CropMethod method = CropMethod::importance;
};

std::string crop_result_to_json(const CropResult& result);

/// Crop dimensions for `spec` on a width x height source. For an aspect
/// ratio this is the largest rectangle of that shape that fits, with the
/// constrained side rounded to the nearest pixel.
CropSize crop_size(const CropSpec& spec, int width, int height);

/// Two window sums closer than this (relative to the best sum) are a tie.
inline constexpr double kCropTieTolerance = 1e-10;

/// Window of crop_size(spec) with the largest importance sum, found with an
/// integral table. Ties (within kCropTieTolerance) go to the smallest y,
/// then the smallest x.
CropResult best_crop(const ImportanceMap& map, const CropSpec& spec, CropMethod method = CropMethod::importance);

/// Uniformly random window position, reproducible for a given seed.
CropResult random_crop(const ImportanceMap& map, const CropSpec& spec, std::uint64_t seed);

/// Edge-energy baseline: best_crop over edge_energy(image).
CropResult edge_crop(const BitmapImage& image, const CropSpec& spec);

BitmapImage retarget_image(const BitmapImage& image, const BoundingBox& rect);

}  // namespace visimp
