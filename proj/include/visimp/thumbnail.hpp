#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "visimp/raster.hpp"

namespace visimp {

/// Carving works on importance in 2^-32 fixed point so incremental row and
/// column sums stay exact.
inline constexpr double kCarveFixedScale = 4294967296.0;
std::int64_t importance_to_fixed(double value);

enum class SeamAxis { row, column };

struct Removal {
    SeamAxis axis;
    int index;  // position in the image as it was just before this removal
    std::int64_t sum;
};

/// Carving state after a removal, for observers.
struct CarveState {
    std::span<const int> rows;     // surviving source row indices
    std::span<const int> columns;  // surviving source column indices
    std::span<const std::int64_t> row_sums;
    std::span<const std::int64_t> column_sums;
};

struct CarveResult {
    BitmapImage image;
    ImportanceMap map;
    std::vector<Removal> removals;
};

/// Removes whole rows and columns, least total importance first, until the
/// image is target_width x target_height. Only a dimension still above its
/// target is eligible; between a candidate row and column the smaller sum
/// wins, ties going to the column; within an axis ties go to the lowest index.
CarveResult carve(const BitmapImage& image, const ImportanceMap& map, int target_width, int target_height,
                  const std::function<void(const CarveState&)>& observer = {});

/// 95th percentile with linear interpolation between order statistics.
double percentile95(std::span<const double> values);

/// alpha = clamp(map / q95, 0, 1); pixel = alpha * pixel + (1 - alpha) * white.
/// An alpha channel, if present, is copied unchanged.
BitmapImage fade_composite(const BitmapImage& image, const ImportanceMap& map);

/// Carve to a square of side min(width, height), fade, then resample to
/// side x side.
BitmapImage make_thumbnail(const BitmapImage& image, const ImportanceMap& map, int side);

}  // namespace visimp
