#include "visimp/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>

#include <json.hpp>

#include "visimp/error.hpp"
#include "visimp/png_io.hpp"
#include "visimp/rng.hpp"

namespace visimp {

using nlohmann::json;

namespace {

using Rgb = std::array<std::uint8_t, 3>;

bool overlaps(const BoundingBox& a, const BoundingBox& b, int gap) {
    return a.x < b.x + b.w + gap && b.x < a.x + a.w + gap && a.y < b.y + b.h + gap && b.y < a.y + a.h + gap;
}

void fill(BitmapImage& img, const BoundingBox& b, const Rgb& color) {
    for (int y = b.y; y < b.y + b.h; ++y) {
        for (int x = b.x; x < b.x + b.w; ++x) {
            for (int k = 0; k < 3; ++k) img.at(x, y, k) = color[std::size_t(k)];
        }
    }
}

// Dark dashes on every other row, broken into word-like runs.
void draw_text(BitmapImage& img, const BoundingBox& b, const Rgb& ink, Rng& rng) {
    for (int y = b.y; y < b.y + b.h; y += 2) {
        int x = b.x;
        while (x < b.x + b.w) {
            const int word = rng.range(2, 6);
            for (int k = 0; k < word && x < b.x + b.w; ++k, ++x) {
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = ink[std::size_t(c)];
            }
            x += 1;
        }
    }
}

std::string sample_stem(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

}  // namespace

double synth_blur_sigma(int width, int height) {
    return double(std::max(width, height)) / 32.0;
}

SynthSample synth_sample(int width, int height, std::uint64_t seed) {
    if (width < 16 || height < 16) throw ParameterError("synthetic designs need at least 16x16 pixels");
    Rng rng(seed);
    const Rgb background{std::uint8_t(rng.range(200, 255)), std::uint8_t(rng.range(200, 255)),
                         std::uint8_t(rng.range(200, 255))};
    BitmapImage img(width, height, 3);
    fill(img, {0, 0, width, height}, background);

    std::vector<BoundingBox> placed;
    auto place = [&](int min_w, int max_w, int min_h, int max_h) -> std::optional<BoundingBox> {
        for (int attempt = 0; attempt < 200; ++attempt) {
            BoundingBox b;
            b.w = rng.range(min_w, max_w);
            b.h = rng.range(min_h, max_h);
            b.x = rng.range(0, width - b.w);
            b.y = rng.range(0, height - b.h);
            if (std::none_of(placed.begin(), placed.end(), [&](const BoundingBox& o) { return overlaps(b, o, 1); })) {
                placed.push_back(b);
                return b;
            }
        }
        return std::nullopt;
    };

    SynthSample sample{img, ImportanceMap(width, height), {}};
    RealGrid weights(width, height);
    auto paint_weight = [&](const BoundingBox& b, double w) {
        for (int y = b.y; y < b.y + b.h; ++y) {
            for (int x = b.x; x < b.x + b.w; ++x) weights.at(x, y) = w;
        }
    };

    const auto bg = place(width / 4, width / 4, height / 4, height / 4);
    sample.elements.elements.push_back({kSynthBackgroundId, ElementKind::other, *bg});

    const int n_text = rng.range(1, 2);
    for (int i = 0; i < n_text; ++i) {
        const auto box = place(width / 4, width / 2, height / 8, height / 4);
        if (!box) continue;
        const auto shade = std::uint8_t(rng.range(0, 80));
        draw_text(sample.image, *box, {shade, shade, shade}, rng);
        paint_weight(*box, kSynthTextWeight);
        sample.elements.elements.push_back({"text" + std::to_string(i), ElementKind::paragraph, *box});
    }

    std::vector<BoundingBox> rects;
    const int n_rect = rng.range(2, 3);
    for (int i = 0; i < n_rect; ++i) {
        const bool bar = rng.below(2) == 1;
        const auto box = bar ? place(width / 10, width / 6, height / 4, height / 2)
                             : place(width / 6, width / 2, height / 6, height / 3);
        if (!box) continue;
        const Rgb color{std::uint8_t(rng.range(0, 255)), std::uint8_t(rng.range(0, 255)),
                        std::uint8_t(rng.range(0, 255))};
        fill(sample.image, *box, color);
        rects.push_back(*box);
        sample.elements.elements.push_back({"rect" + std::to_string(i), ElementKind::data, *box});
    }
    std::size_t largest = 0;
    for (std::size_t i = 1; i < rects.size(); ++i) {
        if (rects[i].w * rects[i].h > rects[largest].w * rects[largest].h) largest = i;
    }
    for (std::size_t i = 0; i < rects.size(); ++i) {
        paint_weight(rects[i], i == largest ? kSynthLargestRectWeight : kSynthOtherRectWeight);
    }

    sample.target = peak_normalize(gaussian_blur(weights, synth_blur_sigma(width, height)));
    return sample;
}

std::vector<SynthSample> synth_corpus(const SynthOptions& options) {
    if (options.count < 0) throw ParameterError("sample count must be nonnegative");
    Rng master(options.seed);
    std::vector<SynthSample> out;
    out.reserve(std::size_t(options.count));
    for (int i = 0; i < options.count; ++i) out.push_back(synth_sample(options.width, options.height, master.next()));
    return out;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<SynthSample>& corpus,
                  const SynthOptions& options) {
    std::filesystem::create_directories(dir);
    json samples = json::array();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string stem = sample_stem(i);
        write_image(dir / (stem + ".png"), corpus[i].image);
        write_map(dir / (stem + "_map.png"), corpus[i].target);
        write_file(dir / (stem + "_elements.json"), segmentation_to_json(corpus[i].elements));
        samples.push_back({{"image", stem + ".png"},
                           {"map", stem + "_map.png"},
                           {"elements", stem + "_elements.json"}});
    }
    const json manifest = {{"width", options.width},
                           {"height", options.height},
                           {"seed", options.seed},
                           {"count", corpus.size()},
                           {"samples", samples}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<SynthSample> load_corpus(const std::filesystem::path& manifest) {
    json doc;
    try {
        doc = json::parse(read_file(manifest));
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed corpus manifest: ") + e.what());
    }
    const auto base = manifest.parent_path();
    std::vector<SynthSample> out;
    try {
        for (const auto& s : doc.at("samples")) {
            BitmapImage image = read_image(base / s.at("image").get<std::string>());
            ImportanceMap map = read_map(base / s.at("map").get<std::string>());
            if (map.width() != image.width() || map.height() != image.height()) {
                throw DataError("corpus map and image sizes differ");
            }
            ElementSegmentation seg;
            if (s.contains("elements")) {
                seg = parse_segmentation(read_file(base / s["elements"].get<std::string>()));
            }
            out.push_back({std::move(image), std::move(map), std::move(seg)});
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed corpus manifest: ") + e.what());
    }
    return out;
}

std::vector<TrainingSample> training_samples(const std::vector<SynthSample>& corpus) {
    std::vector<TrainingSample> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) out.push_back({s.image, s.target});
    return out;
}

}  // namespace visimp
