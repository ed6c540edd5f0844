#include "visimp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "visimp/error.hpp"

namespace visimp {

using nlohmann::json;

namespace {

void require_same_dims(const ImportanceMap& a, const ImportanceMap& b) {
    if (!same_dims(a, b)) {
        throw DataError("map dimensions differ: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                        " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
    }
}

double mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

constexpr const char* kKindNames[] = {"title", "axis_label", "paragraph", "legend", "data", "image", "other"};

}  // namespace

const char* to_string(ElementKind kind) {
    return kKindNames[static_cast<int>(kind)];
}

ElementKind element_kind_from_string(const std::string& s) {
    for (int i = 0; i < 7; ++i) {
        if (s == kKindNames[i]) return static_cast<ElementKind>(i);
    }
    throw DataError("unknown element kind '" + s + "'");
}

ElementSegmentation parse_segmentation(const std::string& json_text) {
    ElementSegmentation seg;
    std::set<std::string> ids;
    try {
        const json doc = json::parse(json_text);
        for (const auto& e : doc.at("elements")) {
            Element el;
            el.id = e.at("id").get<std::string>();
            el.kind = e.contains("kind") ? element_kind_from_string(e["kind"].get<std::string>()) : ElementKind::other;
            const auto box = e.at("bbox").get<std::vector<int>>();
            if (box.size() != 4) throw DataError("element '" + el.id + "' bbox must have 4 entries");
            el.bbox = {box[0], box[1], box[2], box[3]};
            if (el.bbox.w < 1 || el.bbox.h < 1) throw DataError("element '" + el.id + "' has an empty bbox");
            if (!ids.insert(el.id).second) throw DataError("duplicate element id '" + el.id + "'");
            seg.elements.push_back(std::move(el));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed segmentation: ") + e.what());
    }
    return seg;
}

std::string segmentation_to_json(const ElementSegmentation& seg) {
    json elements = json::array();
    for (const auto& e : seg.elements) {
        elements.push_back({{"id", e.id},
                            {"kind", to_string(e.kind)},
                            {"bbox", {e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h}}});
    }
    return json{{"elements", elements}}.dump();
}

double kl_divergence(const ImportanceMap& pred, const ImportanceMap& gt, double epsilon) {
    require_same_dims(pred, gt);
    if (!(epsilon >= 0.0)) throw ParameterError("KL epsilon must be nonnegative");
    if (gt.max_value() <= 0.0) throw DataError("KL divergence needs a ground truth with nonzero mass");
    const auto p = pred.values();
    const auto q = gt.values();
    const double n = double(p.size());
    const double p_mass = std::accumulate(p.begin(), p.end(), 0.0) + epsilon * n;
    const double q_mass = std::accumulate(q.begin(), q.end(), 0.0) + epsilon * n;
    if (!(p_mass > 0.0)) throw UndefinedMetricError("KL divergence needs a prediction with nonzero mass");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double qi = (q[i] + epsilon) / q_mass;
        const double pi = (p[i] + epsilon) / p_mass;
        if (qi > 0.0) kl += qi * (std::log(qi) - std::log(pi));
    }
    return std::max(kl, 0.0);
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("correlation inputs differ in length");
    if (a.size() < 2) throw DataError("correlation needs at least two values");
    const double ma = mean(a);
    const double mb = mean(b);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    // A constant input can still leave rounding residue in va, so test it exactly.
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (va <= 0.0 || vb <= 0.0 || constant(a) || constant(b)) {
        throw UndefinedMetricError("correlation is undefined for a zero-variance input");
    }
    const double n = double(a.size());
    const double r = (cov / n) / (std::sqrt(va / n) * std::sqrt(vb / n));
    return std::clamp(r, -1.0, 1.0);
}

double cross_correlation(const ImportanceMap& pred, const ImportanceMap& gt) {
    require_same_dims(pred, gt);
    return pearson(pred.values(), gt.values());
}

double rmse(const ImportanceMap& pred, const ImportanceMap& gt) {
    require_same_dims(pred, gt);
    const auto p = pred.values();
    const auto q = gt.values();
    double sse = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sse += (p[i] - q[i]) * (p[i] - q[i]);
    return std::sqrt(sse / double(p.size()));
}

double r_squared(const ImportanceMap& pred, const ImportanceMap& gt) {
    require_same_dims(pred, gt);
    const auto p = pred.values();
    const auto q = gt.values();
    const double mq = mean(q);
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        sse += (q[i] - p[i]) * (q[i] - p[i]);
        sst += (q[i] - mq) * (q[i] - mq);
    }
    const bool constant = std::all_of(q.begin(), q.end(), [&](double v) { return v == q.front(); });
    if (sst <= 0.0 || constant) throw UndefinedMetricError("R^2 is undefined for a zero-variance ground truth");
    return 1.0 - sse / sst;
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("spearman inputs differ in length");
    if (a.size() < 2) throw DataError("spearman needs at least two values");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb);
}

std::map<std::string, double> score_elements(const ImportanceMap& map, const ElementSegmentation& seg) {
    std::map<std::string, double> scores;
    for (const Element& e : seg.elements) {
        const BoundingBox& b = e.bbox;
        if (b.w < 1 || b.h < 1 || b.x < 0 || b.y < 0 || b.x + b.w > map.width() || b.y + b.h > map.height()) {
            throw DataError("element '" + e.id + "' lies outside the " + std::to_string(map.width()) + "x" +
                            std::to_string(map.height()) + " map");
        }
        double best = 0.0;
        for (int y = b.y; y < b.y + b.h; ++y) {
            for (int x = b.x; x < b.x + b.w; ++x) best = std::max(best, map.at(x, y));
        }
        scores[e.id] = best;
    }
    return scores;
}

std::vector<std::string> rank_elements(const std::map<std::string, double>& scores,
                                       const ElementSegmentation& seg) {
    std::vector<std::string> ids;
    for (const Element& e : seg.elements) ids.push_back(e.id);
    std::stable_sort(ids.begin(), ids.end(),
                     [&](const std::string& a, const std::string& b) { return scores.at(a) > scores.at(b); });
    return ids;
}

MetricReport evaluate(const ImportanceMap& pred_in, const ImportanceMap& gt, const EvalOptions& options) {
    require_same_dims(pred_in, gt);
    const ImportanceMap pred =
        options.pred_blur_sigma > 0.0 ? gaussian_blur(pred_in, options.pred_blur_sigma) : pred_in;
    MetricReport report;
    auto attempt = [&](bool enabled, const char* name, std::optional<double>& slot, auto&& fn) {
        if (!enabled) return;
        try {
            slot = fn();
        } catch (const UndefinedMetricError& e) {
            report.undefined[name] = e.what();
        } catch (const DataError& e) {
            if (!same_dims(pred, gt)) throw;
            report.undefined[name] = e.what();
        }
    };
    attempt(options.kl, "kl", report.kl, [&] { return kl_divergence(pred, gt, options.kl_epsilon); });
    attempt(options.cc, "cc", report.cc, [&] { return cross_correlation(pred, gt); });
    attempt(options.rmse, "rmse", report.rmse, [&] { return rmse(pred, gt); });
    attempt(options.r2, "r2", report.r2, [&] { return r_squared(pred, gt); });
    return report;
}

}  // namespace visimp
