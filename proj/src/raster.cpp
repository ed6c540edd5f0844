#include "visimp/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "visimp/error.hpp"

namespace visimp {

namespace {

void check_dims(int width, int height) {
    if (width < 1 || height < 1) {
        throw DataError("raster dimensions must be positive, got " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
}

struct Tap {
    int index;
    double weight;
};

// Per-output-index taps for one axis of a resampling.
std::vector<std::vector<Tap>> axis_taps(int src, int dst, bool area) {
    std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst));
    const double scale = double(src) / double(dst);
    for (int i = 0; i < dst; ++i) {
        auto& out = taps[std::size_t(i)];
        if (area) {
            const double lo = i * scale;
            const double hi = (i + 1) * scale;
            for (int s = int(std::floor(lo)); s < int(std::ceil(hi)) && s < src; ++s) {
                const double overlap = std::min(hi, double(s + 1)) - std::max(lo, double(s));
                if (overlap > 0.0) out.push_back({s, overlap / scale});
            }
        } else {
            double pos = (i + 0.5) * scale - 0.5;
            pos = std::clamp(pos, 0.0, double(src - 1));
            const int i0 = int(std::floor(pos));
            const int i1 = std::min(i0 + 1, src - 1);
            const double t = pos - i0;
            out.push_back({i0, 1.0 - t});
            if (i1 != i0) out.push_back({i1, t});
        }
    }
    return taps;
}

// Separable resampling of `planes` interleaved planes stored as doubles.
std::vector<double> resample_planes(const std::vector<double>& src, int sw, int sh, int planes, int dw,
                                    int dh, bool area_x, bool area_y) {
    const auto tx = axis_taps(sw, dw, area_x);
    const auto ty = axis_taps(sh, dh, area_y);
    std::vector<double> rows(std::size_t(dw) * std::size_t(sh) * std::size_t(planes), 0.0);
    for (int y = 0; y < sh; ++y) {
        for (int x = 0; x < dw; ++x) {
            for (const Tap& t : tx[std::size_t(x)]) {
                for (int c = 0; c < planes; ++c) {
                    rows[(std::size_t(y) * dw + x) * planes + c] +=
                        t.weight * src[(std::size_t(y) * sw + t.index) * planes + c];
                }
            }
        }
    }
    std::vector<double> out(std::size_t(dw) * std::size_t(dh) * std::size_t(planes), 0.0);
    for (int y = 0; y < dh; ++y) {
        for (const Tap& t : ty[std::size_t(y)]) {
            for (int x = 0; x < dw; ++x) {
                for (int c = 0; c < planes; ++c) {
                    out[(std::size_t(y) * dw + x) * planes + c] +=
                        t.weight * rows[(std::size_t(t.index) * dw + x) * planes + c];
                }
            }
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// BitmapImage

BitmapImage::BitmapImage(int width, int height, int channels, std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    check_dims(width, height);
    if (channels != 3 && channels != 4) {
        throw DataError("bitmap must have 3 or 4 channels, got " + std::to_string(channels));
    }
    if (data_.size() != std::size_t(width) * std::size_t(height) * std::size_t(channels)) {
        throw DataError("bitmap data length does not match its dimensions");
    }
}

BitmapImage::BitmapImage(int width, int height, int channels, std::uint8_t fill)
    : BitmapImage(width, height, channels,
                  std::vector<std::uint8_t>(std::size_t(std::max(width, 0)) * std::size_t(std::max(height, 0)) *
                                                std::size_t(std::max(channels, 0)),
                                            fill)) {}

// ---------------------------------------------------------------------------
// RealGrid / ImportanceMap

RealGrid::RealGrid(int w, int h, double fill) : width(w), height(h) {
    check_dims(w, h);
    values.assign(std::size_t(w) * std::size_t(h), fill);
}

RealGrid::RealGrid(int w, int h, std::vector<double> v) : width(w), height(h), values(std::move(v)) {
    check_dims(w, h);
    if (values.size() != std::size_t(w) * std::size_t(h)) {
        throw DataError("grid data length does not match its dimensions");
    }
}

ImportanceMap::ImportanceMap(int width, int height, double fill)
    : ImportanceMap(RealGrid(width, height, fill)) {}

ImportanceMap::ImportanceMap(int width, int height, std::vector<double> values)
    : ImportanceMap(RealGrid(width, height, std::move(values))) {}

ImportanceMap::ImportanceMap(RealGrid grid) : grid_(std::move(grid)) {
    for (double v : grid_.values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw DataError("importance value outside [0,1]: " + std::to_string(v));
        }
    }
}

double ImportanceMap::max_value() const {
    return *std::max_element(grid_.values.begin(), grid_.values.end());
}

bool same_dims(const ImportanceMap& a, const ImportanceMap& b) {
    return a.width() == b.width() && a.height() == b.height();
}

// ---------------------------------------------------------------------------
// Gaussian filtering

int gaussian_radius(double sigma) {
    return int(std::ceil(3.0 * sigma));
}

std::vector<double> gaussian_taps(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ParameterError("gaussian sigma must be positive, got " + std::to_string(sigma));
    }
    const int r = gaussian_radius(sigma);
    std::vector<double> taps(std::size_t(2 * r + 1));
    for (int k = -r; k <= r; ++k) {
        taps[std::size_t(k + r)] = std::exp(-double(k) * double(k) / (2.0 * sigma * sigma));
    }
    return taps;
}

RealGrid gaussian_blur(const RealGrid& grid, double sigma) {
    const auto taps = gaussian_taps(sigma);
    const int r = gaussian_radius(sigma);
    const int w = grid.width;
    const int h = grid.height;

    RealGrid tmp(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int lo = std::max(-r, -x);
            const int hi = std::min(r, w - 1 - x);
            double acc = 0.0;
            double norm = 0.0;
            for (int k = lo; k <= hi; ++k) {
                const double t = taps[std::size_t(k + r)];
                acc += t * grid.at(x + k, y);
                norm += t;
            }
            tmp.at(x, y) = acc / norm;
        }
    }

    RealGrid out(w, h);
    for (int y = 0; y < h; ++y) {
        const int lo = std::max(-r, -y);
        const int hi = std::min(r, h - 1 - y);
        double norm = 0.0;
        for (int k = lo; k <= hi; ++k) norm += taps[std::size_t(k + r)];
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = lo; k <= hi; ++k) acc += taps[std::size_t(k + r)] * tmp.at(x, y + k);
            out.at(x, y) = acc / norm;
        }
    }
    return out;
}

ImportanceMap gaussian_blur(const ImportanceMap& map, double sigma, bool normalize_peak) {
    RealGrid blurred = gaussian_blur(map.grid(), sigma);
    if (normalize_peak) return peak_normalize(blurred);
    for (double& v : blurred.values) v = std::clamp(v, 0.0, 1.0);
    return ImportanceMap(std::move(blurred));
}

ImportanceMap peak_normalize(const RealGrid& grid) {
    double peak = 0.0;
    for (double v : grid.values) {
        if (!(v >= 0.0)) throw DataError("peak normalization requires nonnegative finite values");
        peak = std::max(peak, v);
    }
    if (!std::isfinite(peak)) throw DataError("peak normalization requires finite values");
    RealGrid out = grid;
    if (peak > 0.0) {
        for (double& v : out.values) v = std::min(v / peak, 1.0);
    }
    return ImportanceMap(std::move(out));
}

ImportanceMap peak_normalize(const ImportanceMap& map) {
    return peak_normalize(map.grid());
}

// ---------------------------------------------------------------------------
// Integral table

IntegralTable::IntegralTable(const RealGrid& grid)
    : width_(grid.width), height_(grid.height),
      table_(std::size_t(grid.width + 1) * std::size_t(grid.height + 1), 0.0) {
    const std::size_t stride = std::size_t(width_ + 1);
    for (int y = 0; y < height_; ++y) {
        double row = 0.0;
        for (int x = 0; x < width_; ++x) {
            row += grid.at(x, y);
            table_[std::size_t(y + 1) * stride + std::size_t(x + 1)] =
                table_[std::size_t(y) * stride + std::size_t(x + 1)] + row;
        }
    }
}

IntegralTable integral(const ImportanceMap& map) {
    return IntegralTable(map);
}

// ---------------------------------------------------------------------------
// Energy

RealGrid luma(const BitmapImage& image) {
    RealGrid out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            out.at(x, y) = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
        }
    }
    return out;
}

ImportanceMap edge_energy(const BitmapImage& image) {
    const RealGrid gray = luma(image);
    const int w = gray.width;
    const int h = gray.height;
    RealGrid mag(w, h);
    double peak = 0.0;
    for (int y = 0; y < h; ++y) {
        const int ym = std::max(y - 1, 0);
        const int yp = std::min(y + 1, h - 1);
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(x - 1, 0);
            const int xp = std::min(x + 1, w - 1);
            const double gx = 0.5 * (gray.at(xp, y) - gray.at(xm, y));
            const double gy = 0.5 * (gray.at(x, yp) - gray.at(x, ym));
            const double m = std::sqrt(gx * gx + gy * gy);
            mag.at(x, y) = m;
            peak = std::max(peak, m);
        }
    }
    if (peak > 0.0) {
        for (double& v : mag.values) v = std::min(v / peak, 1.0);
    }
    return ImportanceMap(std::move(mag));
}

// ---------------------------------------------------------------------------
// Resampling

RealGrid resample_bilinear(const RealGrid& grid, int width, int height) {
    check_dims(width, height);
    return RealGrid(width, height,
                    resample_planes(grid.values, grid.width, grid.height, 1, width, height, false, false));
}

ImportanceMap resample_bilinear(const ImportanceMap& map, int width, int height) {
    RealGrid out = resample_bilinear(map.grid(), width, height);
    for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
    return ImportanceMap(std::move(out));
}

BitmapImage resize_image(const BitmapImage& image, int width, int height) {
    check_dims(width, height);
    if (width == image.width() && height == image.height()) return image;
    const int planes = image.channels();
    std::vector<double> src(image.data().begin(), image.data().end());
    const auto out = resample_planes(src, image.width(), image.height(), planes, width, height,
                                     width <= image.width(), height <= image.height());
    std::vector<std::uint8_t> bytes(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        bytes[i] = std::uint8_t(std::clamp(std::lround(out[i]), 0L, 255L));
    }
    return BitmapImage(width, height, planes, std::move(bytes));
}

}  // namespace visimp
