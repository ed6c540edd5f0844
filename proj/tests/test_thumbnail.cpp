#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "visimp/error.hpp"
#include "visimp/thumbnail.hpp"

using namespace visimp;

namespace {

oracle::Grid grid(const ImportanceMap& m) { return {m.values().begin(), m.values().end()}; }

// Source pixel (x, y) encoded into the first two channels so carved output
// reveals which rows and columns survived.
BitmapImage coordinate_image(int w, int h) {
    BitmapImage img(w, h, 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = std::uint8_t(x);
            img.at(x, y, 1) = std::uint8_t(y);
        }
    }
    return img;
}

}  // namespace

TEST_CASE("carve") {
    Rng rng(1);
    SUBCASE("target equal to the source changes nothing") {
        const BitmapImage img = oracle::random_image(rng, 9, 7);
        const ImportanceMap m = oracle::random_map(rng, 9, 7);
        const CarveResult r = carve(img, m, 9, 7);
        CHECK(r.removals.empty());
        CHECK(r.image == img);
        CHECK(r.map == m);
    }
    SUBCASE("column sums 0.1, 0.9, 0.5 with target width 2 drop column 0") {
        const ImportanceMap m(3, 2, std::vector<double>{0.05, 0.45, 0.25, 0.05, 0.45, 0.25});
        const CarveResult r = carve(coordinate_image(3, 2), m, 2, 2);
        REQUIRE(r.removals.size() == 1);
        CHECK(r.removals[0].axis == SeamAxis::column);
        CHECK(r.removals[0].index == 0);
        CHECK(r.image.at(0, 0, 0) == 1);
        CHECK(r.image.at(1, 0, 0) == 2);
    }
    SUBCASE("ties between a row and a column go to the column") {
        const CarveResult r = carve(coordinate_image(3, 3), ImportanceMap(3, 3, 0.5), 2, 2);
        REQUIRE(r.removals.size() == 2);
        CHECK(r.removals[0].axis == SeamAxis::column);
        CHECK(r.removals[0].index == 0);
    }
    SUBCASE("random 20x30 instances follow the naive recompute-every-step oracle") {
        for (int t = 0; t < 30; ++t) {
            const int tw = rng.range(1, 20), th = rng.range(1, 30);
            const ImportanceMap m = oracle::random_map(rng, 20, 30);
            const CarveResult r = carve(coordinate_image(20, 30), m, tw, th);
            const auto steps = oracle::naive_carve(grid(m), 20, 30, tw, th);
            REQUIRE(r.removals.size() == steps.size());
            for (std::size_t i = 0; i < steps.size(); ++i) {
                CHECK((r.removals[i].axis == SeamAxis::column) == steps[i].column);
                CHECK(r.removals[i].index == steps[i].index);
                CHECK(r.removals[i].sum == steps[i].sum);
            }
            CHECK(r.image.width() == tw);
            CHECK(r.image.height() == th);
            CHECK(r.map.width() == tw);
            CHECK(r.map.height() == th);
            // Image and map were carved identically.
            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) CHECK(r.map.at(x, y) == m.at(r.image.at(x, y, 0), r.image.at(x, y, 1)));
            }
        }
    }
    SUBCASE("incremental sums equal recomputed sums and each step removes the minimum") {
        for (int t = 0; t < 10; ++t) {
            const int w = rng.range(2, 16), h = rng.range(2, 16);
            const ImportanceMap m = oracle::random_map(rng, w, h);
            std::vector<std::int64_t> fixed;
            for (double v : m.values()) fixed.push_back(importance_to_fixed(v));
            int steps = 0;
            bool sums_ok = true;
            const CarveResult r = carve(coordinate_image(w, h), m, 1, 1, [&](const CarveState& s) {
                ++steps;
                for (std::size_t i = 0; i < s.rows.size(); ++i) {
                    std::int64_t sum = 0;
                    for (int c : s.columns) sum += fixed[std::size_t(s.rows[i] * w + c)];
                    sums_ok = sums_ok && sum == s.row_sums[i];
                }
                for (std::size_t i = 0; i < s.columns.size(); ++i) {
                    std::int64_t sum = 0;
                    for (int rr : s.rows) sum += fixed[std::size_t(rr * w + s.columns[i])];
                    sums_ok = sums_ok && sum == s.column_sums[i];
                }
            });
            CHECK(sums_ok);
            CHECK(steps == (w - 1) + (h - 1));
            CHECK(r.image.width() == 1);
        }
    }
    SUBCASE("errors") {
        const BitmapImage img(4, 4, 3);
        CHECK_THROWS_AS(carve(img, ImportanceMap(4, 4), 5, 4), ParameterError);
        CHECK_THROWS_AS(carve(img, ImportanceMap(4, 4), 0, 4), ParameterError);
        CHECK_THROWS_AS(carve(img, ImportanceMap(3, 4), 2, 2), DataError);
    }
}

TEST_CASE("percentile95") {
    Rng rng(2);
    CHECK(percentile95(std::vector<double>{3.0}) == 3.0);
    for (int t = 0; t < 20; ++t) {
        const auto v = oracle::random_values(rng, std::size_t(rng.range(1, 300)));
        CHECK(percentile95(v) == doctest::Approx(oracle::percentile(v, 0.95)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(percentile95(std::vector<double>{}), DataError);
}

TEST_CASE("fade_composite") {
    Rng rng(3);
    const BitmapImage img = oracle::random_image(rng, 12, 10);
    CHECK(fade_composite(img, ImportanceMap(12, 10, 1.0)) == img);
    const BitmapImage white = fade_composite(img, ImportanceMap(12, 10, 0.0));
    for (auto s : white.data()) CHECK(s == 255);

    SUBCASE("random instances match the per-pixel formula within one level") {
        for (int t = 0; t < 20; ++t) {
            const BitmapImage src = oracle::random_image(rng, 11, 8, t % 2 ? 4 : 3);
            const ImportanceMap m = oracle::random_map(rng, 11, 8);
            double q95 = oracle::percentile(grid(m), 0.95);
            if (q95 == 0.0) q95 = 1.0;
            const BitmapImage out = fade_composite(src, m);
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 11; ++x) {
                    const double a = std::clamp(m.at(x, y) / q95, 0.0, 1.0);
                    for (int c = 0; c < 3; ++c) {
                        const double expect = a * src.at(x, y, c) + (1.0 - a) * 255.0;
                        CHECK(std::abs(out.at(x, y, c) - expect) <= 1.0);
                        // Monotone toward white.
                        CHECK(out.at(x, y, c) >= src.at(x, y, c));
                    }
                    if (src.channels() == 4) CHECK(out.at(x, y, 3) == src.at(x, y, 3));
                }
            }
        }
    }
    CHECK_THROWS_AS(fade_composite(img, ImportanceMap(3, 3)), DataError);
}

TEST_CASE("make_thumbnail") {
    Rng rng(4);
    SUBCASE("square input with a full map is a plain downscale") {
        const BitmapImage img = oracle::random_image(rng, 64, 64);
        CHECK(make_thumbnail(img, ImportanceMap(64, 64, 1.0), 16) == resize_image(img, 16, 16));
    }
    SUBCASE("planted important columns survive carving of a wide table") {
        const int w = 120, h = 40;
        std::vector<double> v(std::size_t(w * h), 0.05);
        for (int y = 0; y < h; ++y) {
            for (int x : {0, 1, 2, 117, 118, 119}) v[std::size_t(y * w + x)] = 1.0;
        }
        const CarveResult r = carve(coordinate_image(w, h), ImportanceMap(w, h, v), h, h);
        bool left = false, right = false;
        for (int x = 0; x < r.image.width(); ++x) {
            left = left || r.image.at(x, 0, 0) == 1;
            right = right || r.image.at(x, 0, 0) == 118;
        }
        CHECK(left);
        CHECK(right);
        const BitmapImage thumb = make_thumbnail(coordinate_image(w, h), ImportanceMap(w, h, v), 20);
        CHECK(thumb.width() == 20);
    }
    SUBCASE("output is always side x side") {
        for (int t = 0; t < 20; ++t) {
            const int w = rng.range(1, 50), h = rng.range(1, 50), side = rng.range(1, 64);
            const BitmapImage thumb = make_thumbnail(oracle::random_image(rng, w, h), oracle::random_map(rng, w, h), side);
            CHECK(thumb.width() == side);
            CHECK(thumb.height() == side);
        }
    }
    CHECK_THROWS_AS(make_thumbnail(BitmapImage(4, 4, 3), ImportanceMap(4, 4), 0), ParameterError);
}
