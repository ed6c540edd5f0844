#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "visimp/metrics.hpp"
#include "visimp/predictor.hpp"
#include "visimp/raster.hpp"

namespace visimp {

/// Importance weights planted by the generator.
inline constexpr double kSynthTextWeight = 1.0;
inline constexpr double kSynthLargestRectWeight = 0.6;
inline constexpr double kSynthOtherRectWeight = 0.3;

/// Id of the reserved empty region every synthetic design contains.
inline constexpr const char* kSynthBackgroundId = "background";

struct SynthOptions {
    int count = 1;
    int width = 64;
    int height = 64;
    std::uint64_t seed = 1;
};

/// A procedurally generated design: plain background, one or two stripe
/// "text" blocks, two or three solid rectangles or bars, and a reserved
/// empty background box. The target is the peak-normalized blur of the
/// element weights (text 1.0, largest rectangle 0.6, others 0.3).
struct SynthSample {
    BitmapImage image;
    ImportanceMap target;
    ElementSegmentation elements;
};

/// Blur applied to synthetic targets: max(width, height) / 32.
double synth_blur_sigma(int width, int height);

SynthSample synth_sample(int width, int height, std::uint64_t seed);
std::vector<SynthSample> synth_corpus(const SynthOptions& options);

/// Writes NNNN.png, NNNN_map.png, NNNN_elements.json and manifest.json.
void write_corpus(const std::filesystem::path& dir, const std::vector<SynthSample>& corpus,
                  const SynthOptions& options);
std::vector<SynthSample> load_corpus(const std::filesystem::path& manifest);

std::vector<TrainingSample> training_samples(const std::vector<SynthSample>& corpus);

}  // namespace visimp
