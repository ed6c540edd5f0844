#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace visimp {

/// 8-bit RGB or RGBA raster, row-major, channels interleaved.
class BitmapImage {
public:
    BitmapImage(int width, int height, int channels, std::vector<std::uint8_t> data);
    BitmapImage(int width, int height, int channels, std::uint8_t fill = 0);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return std::size_t(width_) * std::size_t(height_); }

    std::uint8_t at(int x, int y, int c) const { return data_[index(x, y, c)]; }
    std::uint8_t& at(int x, int y, int c) { return data_[index(x, y, c)]; }

    std::span<const std::uint8_t> data() const { return data_; }
    std::span<std::uint8_t> data() { return data_; }

    bool operator==(const BitmapImage&) const = default;

private:
    std::size_t index(int x, int y, int c) const {
        return (std::size_t(y) * std::size_t(width_) + std::size_t(x)) * std::size_t(channels_) +
               std::size_t(c);
    }

    int width_;
    int height_;
    int channels_;
    std::vector<std::uint8_t> data_;
};

/// Unconstrained real-valued grid. Used for intermediate quantities
/// (impulse accumulations, logits, energies) that are not yet maps.
struct RealGrid {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    RealGrid() = default;
    RealGrid(int w, int h, double fill = 0.0);
    RealGrid(int w, int h, std::vector<double> v);

    double at(int x, int y) const { return values[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
    double& at(int x, int y) { return values[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
    std::size_t size() const { return values.size(); }

    bool operator==(const RealGrid&) const = default;
};

/// Dense per-pixel importance in [0,1]. The invariant is checked on
/// construction and cannot be broken afterwards.
class ImportanceMap {
public:
    ImportanceMap(int width, int height, double fill = 0.0);
    ImportanceMap(int width, int height, std::vector<double> values);
    explicit ImportanceMap(RealGrid grid);

    int width() const { return grid_.width; }
    int height() const { return grid_.height; }
    std::size_t size() const { return grid_.size(); }

    double at(int x, int y) const { return grid_.at(x, y); }
    std::span<const double> values() const { return grid_.values; }
    const RealGrid& grid() const { return grid_; }

    double max_value() const;

    bool operator==(const ImportanceMap&) const = default;

private:
    RealGrid grid_;
};

bool same_dims(const ImportanceMap& a, const ImportanceMap& b);

/// Half-width of the truncated Gaussian kernel: ceil(3 sigma).
int gaussian_radius(double sigma);

/// Unnormalized taps exp(-k^2 / 2 sigma^2) for k in [-radius, radius].
std::vector<double> gaussian_taps(double sigma);

/// Separable Gaussian filter. Near the border the kernel is renormalized
/// over in-bounds taps, so constant inputs are fixed points.
RealGrid gaussian_blur(const RealGrid& grid, double sigma);
ImportanceMap gaussian_blur(const ImportanceMap& map, double sigma, bool normalize_peak = false);

/// Scale a nonnegative grid so its maximum is 1. An all-zero grid stays zero.
ImportanceMap peak_normalize(const RealGrid& grid);
ImportanceMap peak_normalize(const ImportanceMap& map);

/// Running 2-D prefix sums with a zero guard row and column.
class IntegralTable {
public:
    explicit IntegralTable(const RealGrid& grid);
    explicit IntegralTable(const ImportanceMap& map) : IntegralTable(map.grid()) {}

    int width() const { return width_; }
    int height() const { return height_; }

    /// Entry (x, y) of the (width+1) x (height+1) table.
    double at(int x, int y) const { return table_[std::size_t(y) * std::size_t(width_ + 1) + std::size_t(x)]; }

    double rect_sum(int x, int y, int w, int h) const {
        return at(x + w, y + h) - at(x, y + h) - at(x + w, y) + at(x, y);
    }

    double total() const { return at(width_, height_); }

private:
    int width_;
    int height_;
    std::vector<double> table_;
};

IntegralTable integral(const ImportanceMap& map);

/// ITU-R BT.601 luma of the first three channels.
RealGrid luma(const BitmapImage& image);

/// Central-difference gradient magnitude of luma, scaled so the maximum is 1.
ImportanceMap edge_energy(const BitmapImage& image);

/// Bilinear resampling with pixel-center alignment and clamped borders.
RealGrid resample_bilinear(const RealGrid& grid, int width, int height);
ImportanceMap resample_bilinear(const ImportanceMap& map, int width, int height);

/// Area-averaging when shrinking, bilinear when enlarging. Results are
/// rounded to the nearest 8-bit level.
BitmapImage resize_image(const BitmapImage& image, int width, int height);

}  // namespace visimp
