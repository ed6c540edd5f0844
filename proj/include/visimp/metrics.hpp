#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "visimp/raster.hpp"

namespace visimp {

struct BoundingBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const BoundingBox&) const = default;
};

enum class ElementKind { title, axis_label, paragraph, legend, data, image, other };

const char* to_string(ElementKind kind);
ElementKind element_kind_from_string(const std::string& s);

struct Element {
    std::string id;
    ElementKind kind = ElementKind::other;
    BoundingBox bbox;
};

/// Labeled element boxes of one design or visualization.
struct ElementSegmentation {
    std::vector<Element> elements;
};

/// {"elements":[{"id":"e1","kind":"title","bbox":[x,y,w,h]}, ...]}
/// Checks w,h >= 1 and unique ids; bounds are checked against a map at use.
ElementSegmentation parse_segmentation(const std::string& json_text);
std::string segmentation_to_json(const ElementSegmentation& seg);

inline constexpr double kDefaultKlEpsilon = 1e-12;

/// KL(P, Q) = sum_i q_i (log q_i - log p_i) with natural log, where both maps
/// are shifted by `epsilon` per pixel and normalized to unit mass.
double kl_divergence(const ImportanceMap& pred, const ImportanceMap& gt, double epsilon = kDefaultKlEpsilon);

/// Pearson correlation with population moments. Throws
/// UndefinedMetricError when either map has zero variance.
double cross_correlation(const ImportanceMap& pred, const ImportanceMap& gt);
double pearson(std::span<const double> a, std::span<const double> b);

double rmse(const ImportanceMap& pred, const ImportanceMap& gt);

/// 1 - SSE / SST against the ground-truth mean.
double r_squared(const ImportanceMap& pred, const ImportanceMap& gt);

/// Average ranks, 1-based; ties share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);
double spearman(std::span<const double> a, std::span<const double> b);

/// Maximum map value inside each element box. The caller supplies a
/// peak-normalized map.
std::map<std::string, double> score_elements(const ImportanceMap& map, const ElementSegmentation& seg);

/// Element ids ordered by descending score; ties keep segmentation order.
std::vector<std::string> rank_elements(const std::map<std::string, double>& scores,
                                       const ElementSegmentation& seg);

struct MetricReport {
    std::optional<double> kl;
    std::optional<double> cc;
    std::optional<double> rmse;
    std::optional<double> r2;
    std::map<std::string, double> element_scores;
    /// Metric name -> reason, for metrics that were requested but undefined.
    std::map<std::string, std::string> undefined;
};

struct EvalOptions {
    bool kl = true;
    bool cc = true;
    bool rmse = true;
    bool r2 = true;
    double kl_epsilon = kDefaultKlEpsilon;
    /// Blur applied to the prediction before comparison; 0 disables.
    double pred_blur_sigma = 0.0;
};

/// Computes the selected metrics. Dimension mismatches throw; metrics that are
/// undefined for this pair are recorded in `undefined` instead.
MetricReport evaluate(const ImportanceMap& pred, const ImportanceMap& gt, const EvalOptions& options = {});

}  // namespace visimp
