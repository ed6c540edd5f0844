#include "visimp/ground_truth.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "visimp/error.hpp"
#include "visimp/png_io.hpp"

namespace visimp {

using nlohmann::json;

PointAggregate aggregate_points(const ClickLog& log, double sigma) {
    if (log.participants.empty()) throw DataError("click log has no participants");
    if (log.image_width < 1 || log.image_height < 1) throw DataError("click log has invalid image dimensions");
    gaussian_taps(sigma);  // validates sigma before any work

    std::set<std::string> seen;
    RealGrid impulses(log.image_width, log.image_height);
    PointAggregate result{ImportanceMap(log.image_width, log.image_height), 0, {}};
    for (const Participant& p : log.participants) {
        if (!seen.insert(p.id).second) throw DataError("duplicate participant id '" + p.id + "'");
        for (std::size_t i = 0; i < p.points.size(); ++i) {
            const ClickPoint& pt = p.points[i];
            const bool inside = std::isfinite(pt.x) && std::isfinite(pt.y) && pt.x >= 0.0 && pt.y >= 0.0 &&
                                pt.x < log.image_width && pt.y < log.image_height;
            if (!inside) {
                result.diagnostics.push_back("participant " + p.id + " point " + std::to_string(i) + " at (" +
                                             std::to_string(pt.x) + ", " + std::to_string(pt.y) +
                                             ") is outside the image; rejected");
                continue;
            }
            impulses.at(int(std::floor(pt.x)), int(std::floor(pt.y))) += 1.0;
            ++result.accepted;
        }
    }
    result.map = peak_normalize(gaussian_blur(impulses, sigma));
    return result;
}

ImportanceMap aggregate_masks(const AnnotationSet& set) {
    if (set.masks.empty()) throw DataError("annotation set has no masks");
    const std::size_t n = std::size_t(set.image_width) * std::size_t(set.image_height);
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t m = 0; m < set.masks.size(); ++m) {
        const auto& mask = set.masks[m];
        if (mask.size() != n) {
            throw DataError("mask " + std::to_string(m) + " does not match the image dimensions");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i] > 1) throw DataError("mask " + std::to_string(m) + " is not binary");
            counts[i] += mask[i];
        }
    }
    std::vector<double> values(n);
    const double total = double(set.masks.size());
    for (std::size_t i = 0; i < n; ++i) values[i] = double(counts[i]) / total;
    return ImportanceMap(set.image_width, set.image_height, std::move(values));
}

ClickLog parse_click_log(const std::string& json_text) {
    ClickLog log;
    try {
        const json doc = json::parse(json_text);
        log.image_width = doc.at("width").get<int>();
        log.image_height = doc.at("height").get<int>();
        for (const auto& pj : doc.at("participants")) {
            Participant p;
            p.id = pj.at("id").get<std::string>();
            for (const auto& q : pj.at("points")) {
                ClickPoint pt;
                pt.x = q.at("x").get<double>();
                pt.y = q.at("y").get<double>();
                if (q.contains("t") && !q["t"].is_null()) pt.t_ms = q["t"].get<double>();
                p.points.push_back(pt);
            }
            log.participants.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed click log: ") + e.what());
    }
    if (log.image_width < 1 || log.image_height < 1) throw DataError("click log has invalid image dimensions");
    return log;
}

ClickLog load_click_log(const std::filesystem::path& path) {
    return parse_click_log(read_file(path));
}

AnnotationSet load_annotation_set(const std::filesystem::path& manifest) {
    AnnotationSet set;
    std::vector<std::string> paths;
    try {
        const json doc = json::parse(read_file(manifest));
        set.image_width = doc.at("width").get<int>();
        set.image_height = doc.at("height").get<int>();
        paths = doc.at("masks").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed annotation manifest: ") + e.what());
    }
    const auto base = manifest.parent_path();
    for (const auto& rel : paths) {
        const BitmapImage img = read_image(base / rel);
        if (img.width() != set.image_width || img.height() != set.image_height) {
            throw DataError("mask " + rel + " does not match the manifest dimensions");
        }
        std::vector<std::uint8_t> mask(img.pixel_count());
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                mask[std::size_t(y) * std::size_t(img.width()) + std::size_t(x)] = img.at(x, y, 0) >= 128 ? 1 : 0;
            }
        }
        set.masks.push_back(std::move(mask));
    }
    return set;
}

}  // namespace visimp
