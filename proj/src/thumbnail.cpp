#include "visimp/thumbnail.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "visimp/error.hpp"

namespace visimp {

std::int64_t importance_to_fixed(double value) {
    return std::llround(value * kCarveFixedScale);
}

namespace {

// Lowest-index position of the smallest entry.
std::size_t argmin(const std::vector<std::int64_t>& v) {
    return std::size_t(std::min_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

CarveResult carve(const BitmapImage& image, const ImportanceMap& map, int target_width, int target_height,
                  const std::function<void(const CarveState&)>& observer) {
    const int w = image.width();
    const int h = image.height();
    if (map.width() != w || map.height() != h) throw DataError("carving needs a map of the image's size");
    if (target_width < 1 || target_height < 1 || target_width > w || target_height > h) {
        throw ParameterError("carve target " + std::to_string(target_width) + "x" + std::to_string(target_height) +
                             " must be positive and no larger than " + std::to_string(w) + "x" + std::to_string(h));
    }

    std::vector<std::int64_t> fixed(map.size());
    std::transform(map.values().begin(), map.values().end(), fixed.begin(), importance_to_fixed);
    auto q = [&](int row, int col) { return fixed[std::size_t(row) * std::size_t(w) + std::size_t(col)]; };

    std::vector<int> rows(static_cast<std::size_t>(h));
    std::vector<int> cols(static_cast<std::size_t>(w));
    std::iota(rows.begin(), rows.end(), 0);
    std::iota(cols.begin(), cols.end(), 0);
    std::vector<std::int64_t> row_sums(std::size_t(h), 0);
    std::vector<std::int64_t> col_sums(std::size_t(w), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            row_sums[std::size_t(y)] += q(y, x);
            col_sums[std::size_t(x)] += q(y, x);
        }
    }

    std::vector<Removal> removals;
    while (int(cols.size()) > target_width || int(rows.size()) > target_height) {
        const bool col_ok = int(cols.size()) > target_width;
        const bool row_ok = int(rows.size()) > target_height;
        const std::size_t ci = col_ok ? argmin(col_sums) : 0;
        const std::size_t ri = row_ok ? argmin(row_sums) : 0;
        const bool take_row = row_ok && (!col_ok || row_sums[ri] < col_sums[ci]);

        if (take_row) {
            const int src = rows[ri];
            removals.push_back({SeamAxis::row, int(ri), row_sums[ri]});
            for (std::size_t k = 0; k < cols.size(); ++k) col_sums[k] -= q(src, cols[k]);
            rows.erase(rows.begin() + std::ptrdiff_t(ri));
            row_sums.erase(row_sums.begin() + std::ptrdiff_t(ri));
        } else {
            const int src = cols[ci];
            removals.push_back({SeamAxis::column, int(ci), col_sums[ci]});
            for (std::size_t k = 0; k < rows.size(); ++k) row_sums[k] -= q(rows[k], src);
            cols.erase(cols.begin() + std::ptrdiff_t(ci));
            col_sums.erase(col_sums.begin() + std::ptrdiff_t(ci));
        }
        if (observer) observer({rows, cols, row_sums, col_sums});
    }

    const int c = image.channels();
    std::vector<std::uint8_t> pixels;
    pixels.reserve(rows.size() * cols.size() * std::size_t(c));
    std::vector<double> values;
    values.reserve(rows.size() * cols.size());
    for (int y : rows) {
        for (int x : cols) {
            for (int k = 0; k < c; ++k) pixels.push_back(image.at(x, y, k));
            values.push_back(map.at(x, y));
        }
    }
    return {BitmapImage(int(cols.size()), int(rows.size()), c, std::move(pixels)),
            ImportanceMap(int(cols.size()), int(rows.size()), std::move(values)), std::move(removals)};
}

double percentile95(std::span<const double> values) {
    if (values.empty()) throw DataError("percentile of an empty set");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.95 * double(sorted.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

BitmapImage fade_composite(const BitmapImage& image, const ImportanceMap& map) {
    if (map.width() != image.width() || map.height() != image.height()) {
        throw DataError("fade needs a map of the image's size");
    }
    double q95 = percentile95(map.values());
    if (q95 <= 0.0) q95 = 1.0;
    BitmapImage out = image;
    const int color_channels = 3;
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const double alpha = std::clamp(map.at(x, y) / q95, 0.0, 1.0);
            for (int k = 0; k < color_channels; ++k) {
                const double v = alpha * image.at(x, y, k) + (1.0 - alpha) * 255.0;
                out.at(x, y, k) = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

BitmapImage make_thumbnail(const BitmapImage& image, const ImportanceMap& map, int side) {
    if (side < 1) throw ParameterError("thumbnail side must be positive");
    const int square = std::min(image.width(), image.height());
    const CarveResult carved = carve(image, map, square, square);
    return resize_image(fade_composite(carved.image, carved.map), side, side);
}

}  // namespace visimp
