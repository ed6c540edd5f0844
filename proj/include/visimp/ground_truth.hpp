#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "visimp/raster.hpp"

namespace visimp {

struct ClickPoint {
    double x = 0.0;
    double y = 0.0;
    std::optional<double> t_ms;
};

struct Participant {
    std::string id;
    std::vector<ClickPoint> points;
};

/// Clicks (or fixation locations) of every participant on one image.
struct ClickLog {
    int image_width = 0;
    int image_height = 0;
    std::vector<Participant> participants;
};

/// Per-participant binary importance masks for one image.
struct AnnotationSet {
    int image_width = 0;
    int image_height = 0;
    std::vector<std::vector<std::uint8_t>> masks;  // row-major, entries 0 or 1
};

struct PointAggregate {
    ImportanceMap map;
    std::size_t accepted = 0;
    /// One line per rejected point.
    std::vector<std::string> diagnostics;
};

/// Default blur for click and fixation maps: a 32 px radius read as sigma = radius / 2.
inline constexpr double kDefaultClickSigma = 16.0;

/// Unit impulse per point, Gaussian blur, then peak normalization. Points
/// outside the image are dropped and reported. Throws DataError for a log
/// with no participants or with duplicate participant ids.
PointAggregate aggregate_points(const ClickLog& log, double sigma);

/// Per-pixel mean of the masks. Throws DataError on an empty set, a mask of
/// the wrong size, or entries other than 0 and 1.
ImportanceMap aggregate_masks(const AnnotationSet& set);

/// {"width":W,"height":H,"participants":[{"id":"p1","points":[{"x":..,"y":..,"t":..}]}]}
ClickLog parse_click_log(const std::string& json_text);
ClickLog load_click_log(const std::filesystem::path& path);

/// {"width":W,"height":H,"masks":["p1.png", ...]}; mask paths are relative to
/// the manifest. A mask pixel is set when its first channel is >= 128.
AnnotationSet load_annotation_set(const std::filesystem::path& manifest);

}  // namespace visimp
