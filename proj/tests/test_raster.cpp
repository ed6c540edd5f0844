#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "visimp/error.hpp"
#include "visimp/png_io.hpp"
#include "visimp/raster.hpp"

using namespace visimp;

TEST_CASE("bitmap and map constructors validate their invariants") {
    CHECK_THROWS_AS(BitmapImage(0, 4, 3), DataError);
    CHECK_THROWS_AS(BitmapImage(4, 4, 2), DataError);
    CHECK_THROWS_AS(BitmapImage(2, 2, 3, std::vector<std::uint8_t>(11)), DataError);
    CHECK_THROWS_AS(ImportanceMap(2, 1, std::vector<double>{0.5, 1.5}), DataError);
    CHECK_THROWS_AS(ImportanceMap(2, 1, std::vector<double>{0.5, std::nan("")}), DataError);
    CHECK_NOTHROW(ImportanceMap(2, 1, std::vector<double>{0.0, 1.0}));
}

TEST_CASE("gaussian blur") {
    SUBCASE("non-positive sigma is a parameter error") {
        CHECK_THROWS_AS(gaussian_blur(ImportanceMap(4, 4), 0.0), ParameterError);
        CHECK_THROWS_AS(gaussian_blur(ImportanceMap(4, 4), -1.0), ParameterError);
    }
    SUBCASE("center impulse gives a symmetric blob peaking at the impulse") {
        RealGrid g(21, 21);
        g.at(10, 10) = 1.0;
        const RealGrid b = gaussian_blur(g, 2.0);
        for (int y = 0; y < 21; ++y) {
            for (int x = 0; x < 21; ++x) {
                CHECK(b.at(x, y) <= b.at(10, 10));
                CHECK(b.at(x, y) == doctest::Approx(b.at(20 - x, y)).epsilon(1e-12));
                CHECK(b.at(x, y) == doctest::Approx(b.at(x, 20 - y)).epsilon(1e-12));
            }
        }
    }
    SUBCASE("constant maps are fixed points") {
        for (double sigma : {0.5, 2.0, 7.0, 40.0}) {
            const ImportanceMap m = gaussian_blur(ImportanceMap(13, 9, 0.37), sigma);
            for (double v : m.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
        }
    }
    SUBCASE("impulse near a corner, sigma 16: symmetric weights and equal to dense convolution") {
        RealGrid g(64, 64);
        g.at(10, 10) = 1.0;
        const RealGrid b = gaussian_blur(g, 16.0);
        // Renormalization divides each output by the mass of its in-bounds
        // taps, which differs between 10+k and 10-k this close to the edge.
        // Undoing it must leave a mirror-symmetric result.
        auto in_bounds_mass = [](int y) {
            double s = 0.0;
            for (int d = -48; d <= 48; ++d) {
                if (y + d >= 0 && y + d < 64) s += std::exp(-d * d / 512.0);
            }
            return s;
        };
        for (int k = 1; k <= 10; ++k) {
            const double up = b.at(10, 10 + k) * in_bounds_mass(10 + k);
            const double down = b.at(10, 10 - k) * in_bounds_mass(10 - k);
            CHECK(std::abs(up - down) < 1e-12 * up);
        }
        const auto dense = oracle::dense_blur(g.values, 64, 64, 16.0);
        double worst = 0.0;
        for (std::size_t i = 0; i < dense.size(); ++i) worst = std::max(worst, std::abs(dense[i] - b.values[i]));
        CHECK(worst < 1e-9);
    }
    SUBCASE("separable blur equals dense convolution on random small maps") {
        Rng rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            const int w = rng.range(1, 14), h = rng.range(1, 14);
            const double sigma = rng.uniform(0.3, 5.0);
            const ImportanceMap m = oracle::random_map(rng, w, h);
            const ImportanceMap b = gaussian_blur(m, sigma);
            const auto dense = oracle::dense_blur(oracle::Grid(m.values().begin(), m.values().end()), w, h, sigma);
            for (std::size_t i = 0; i < dense.size(); ++i) {
                CHECK(std::abs(dense[i] - b.values()[i]) < 1e-9);
                CHECK(b.values()[i] >= 0.0);
                CHECK(b.values()[i] <= 1.0);
            }
        }
    }
    SUBCASE("peak normalization on request") {
        RealGrid g(9, 9);
        g.at(3, 4) = 0.2;
        const ImportanceMap m = gaussian_blur(ImportanceMap(g), 1.5, true);
        CHECK(m.max_value() == 1.0);
        CHECK(m.at(3, 4) == 1.0);
    }
}

TEST_CASE("integral table") {
    SUBCASE("all-zeros map") {
        const IntegralTable t = integral(ImportanceMap(5, 3));
        for (int y = 0; y <= 3; ++y) {
            for (int x = 0; x <= 5; ++x) CHECK(t.at(x, y) == 0.0);
        }
    }
    SUBCASE("all-ones 4x4, rectangle (1,1,2,2)") {
        const IntegralTable t = integral(ImportanceMap(4, 4, 1.0));
        CHECK(t.rect_sum(1, 1, 2, 2) == 4.0);
        CHECK(t.total() == 16.0);
    }
    SUBCASE("guard row and column are zero, total is the full sum") {
        Rng rng(5);
        const ImportanceMap m = oracle::random_map(rng, 7, 6);
        const IntegralTable t = integral(m);
        for (int x = 0; x <= 7; ++x) CHECK(t.at(x, 0) == 0.0);
        for (int y = 0; y <= 6; ++y) CHECK(t.at(0, y) == 0.0);
        double s = 0.0;
        for (double v : m.values()) s += v;
        CHECK(t.total() == doctest::Approx(s).epsilon(1e-12));
    }
    SUBCASE("100 random 16x16 maps, every rectangle equals the naive sum") {
        Rng rng(1234);
        const double tol = 1e-9 * 256;
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const ImportanceMap m = oracle::random_map(rng, 16, 16);
            const oracle::Grid g(m.values().begin(), m.values().end());
            const IntegralTable t = integral(m);
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    for (int h = 1; y + h <= 16; ++h) {
                        for (int w = 1; x + w <= 16; ++w) {
                            worst = std::max(worst, std::abs(t.rect_sum(x, y, w, h) - oracle::rect_sum(g, 16, x, y, w, h)));
                        }
                    }
                }
            }
        }
        CHECK(worst <= tol);
    }
}

TEST_CASE("edge energy") {
    SUBCASE("uniform color gives all zeros") {
        BitmapImage img(6, 5, 3, 120);
        const ImportanceMap e = edge_energy(img);
        for (double v : e.values()) CHECK(v == 0.0);
    }
    SUBCASE("vertical step edge peaks on the edge columns") {
        BitmapImage img(10, 4, 3, 0);
        for (int y = 0; y < 4; ++y) {
            for (int x = 5; x < 10; ++x) {
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = 255;
            }
        }
        const ImportanceMap e = edge_energy(img);
        for (int y = 0; y < 4; ++y) {
            CHECK(e.at(4, y) == 1.0);
            CHECK(e.at(5, y) == 1.0);
            CHECK(e.at(0, y) == 0.0);
            CHECK(e.at(9, y) == 0.0);
        }
    }
    SUBCASE("random 8x8 images match the per-pixel oracle") {
        Rng rng(8);
        for (int trial = 0; trial < 10; ++trial) {
            const BitmapImage img = oracle::random_image(rng, 8, 8, trial % 2 ? 4 : 3);
            const ImportanceMap e = edge_energy(img);
            const auto expect = oracle::edge_energy(img);
            for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(e.values()[i] - expect[i]) < 1e-12);
        }
    }
}

TEST_CASE("bilinear resampling matches the naive oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const int w = rng.range(1, 12), h = rng.range(1, 12);
        const int ow = rng.range(1, 25), oh = rng.range(1, 25);
        const ImportanceMap m = oracle::random_map(rng, w, h);
        const ImportanceMap r = resample_bilinear(m, ow, oh);
        const auto expect = oracle::bilinear(oracle::Grid(m.values().begin(), m.values().end()), w, h, ow, oh);
        REQUIRE(r.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(r.values()[i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("resize_image") {
    SUBCASE("identity size is a copy") {
        Rng rng(4);
        const BitmapImage img = oracle::random_image(rng, 7, 5);
        CHECK(resize_image(img, 7, 5) == img);
    }
    SUBCASE("2x box downscale averages 2x2 blocks") {
        BitmapImage img(4, 2, 3, 0);
        img.at(0, 0, 0) = 100;
        img.at(1, 1, 0) = 200;
        const BitmapImage out = resize_image(img, 2, 1);
        CHECK(out.at(0, 0, 0) == 75);
        CHECK(out.at(1, 0, 0) == 0);
    }
}

TEST_CASE("map PNG round trip") {
    SUBCASE("zeros and ones are exact") {
        for (double fill : {0.0, 1.0}) {
            const ImportanceMap m(9, 4, fill);
            const std::string png = encode_map_png(m);
            const PngInfo info = probe_png(as_bytes(png));
            CHECK(info.bit_depth == 16);
            CHECK(decode_map_png(as_bytes(png)) == m);
        }
    }
    SUBCASE("1000 random values stay within half a quantization step") {
        Rng rng(99);
        const ImportanceMap m = oracle::random_map(rng, 40, 25);
        const ImportanceMap back = decode_map_png(as_bytes(encode_map_png(m)));
        for (std::size_t i = 0; i < m.size(); ++i) {
            CHECK(std::abs(back.values()[i] - m.values()[i]) <= 1.0 / 131070.0 + 1e-15);
            const double q = std::round(m.values()[i] * 65535.0) / 65535.0;
            CHECK(back.values()[i] == q);
        }
    }
    SUBCASE("files on disk") {
        const auto dir = oracle::temp_dir("raster_png");
        Rng rng(1);
        const ImportanceMap m = oracle::random_map(rng, 3, 3);
        write_map(dir / "m.png", m);
        const ImportanceMap back = read_map(dir / "m.png");
        for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(back.values()[i] - m.values()[i]) <= 1.0 / 131070.0);
        CHECK_THROWS_AS(read_map(dir / "missing.png"), DataError);
    }
    SUBCASE("malformed and unsupported files are rejected") {
        CHECK_THROWS_AS(decode_map_png(as_bytes("not a png")), DataError);
        const std::string png = encode_map_png(ImportanceMap(8, 8, 0.5));
        CHECK_THROWS_AS(decode_map_png(as_bytes(png.substr(0, png.size() / 2))), DataError);
        // An RGB image is not a map.
        const std::string rgb = encode_image_png(BitmapImage(2, 2, 3));
        CHECK_THROWS_AS(decode_map_png(as_bytes(rgb)), DataError);
    }
}

TEST_CASE("image PNG round trip is lossless for RGB and RGBA") {
    Rng rng(21);
    for (int channels : {3, 4}) {
        const BitmapImage img = oracle::random_image(rng, 13, 7, channels);
        CHECK(decode_image_png(as_bytes(encode_image_png(img))) == img);
    }
}

TEST_CASE("oversized PNG headers are rejected before allocation") {
    // Patch the IHDR width of a valid file to 2^20. The CRC no longer matches,
    // so either check may fire; both are data errors.
    std::string png = encode_image_png(BitmapImage(1, 1, 3));
    png[16] = 0;
    png[17] = 0x10;
    png[18] = 0;
    png[19] = 0;
    CHECK_THROWS_AS(decode_image_png(as_bytes(png)), DataError);
}
