#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <future>
#include <thread>

#include <json.hpp>

#include "oracles.hpp"
#include "visimp/metrics.hpp"
#include "visimp/png_io.hpp"
#include "visimp/retarget.hpp"
#include "visimp/service.hpp"

using namespace visimp;
using nlohmann::json;

namespace {

// Every tensor random, heads included, so outputs depend on the input and the seed.
ModelCheckpoint random_checkpoint(std::uint64_t seed) {
    const Architecture arch;
    Rng rng(seed);
    std::vector<double> p(arch.parameter_count());
    for (double& v : p) v = rng.uniform(-0.5, 0.5);
    return make_checkpoint(arch, p);
}

std::shared_ptr<const Predictor> toy_model(std::uint64_t seed = 1) {
    return std::make_shared<const FcnPredictor>(random_checkpoint(seed));
}

// Importance 1 inside `hot`, `low` elsewhere.
ImportanceMap planted(int w, int h, BoundingBox hot, double low = 0.1) {
    std::vector<double> v(std::size_t(w * h), low);
    for (int y = hot.y; y < hot.y + hot.h; ++y) {
        for (int x = hot.x; x < hot.x + hot.w; ++x) v[std::size_t(y * w + x)] = 1.0;
    }
    return ImportanceMap(w, h, v);
}

class BlockingPredictor final : public Predictor {
public:
    explicit BlockingPredictor(std::shared_future<void> go) : go_(std::move(go)) {}
    ImportanceMap predict(const BitmapImage& image) const override {
        entered.store(true);
        go_.wait();
        return ImportanceMap(image.width(), image.height(), 0.5);
    }
    std::string describe() const override { return "blocking"; }
    mutable std::atomic<bool> entered{false};

private:
    std::shared_future<void> go_;
};

ImportanceMap decode_map(const Reply& r) { return decode_map_png(as_bytes(r.body)); }
BitmapImage decode_image(const Reply& r) { return decode_image_png(as_bytes(r.body)); }

}  // namespace

TEST_CASE("predict") {
    Rng rng(1);
    const Service service({}, toy_model());
    const std::string png = encode_image_png(oracle::random_image(rng, 600, 450));

    const Reply r = service.predict(png);
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "image/png");
    const ImportanceMap m = decode_map(r);
    CHECK(m.width() == 600);
    CHECK(m.height() == 450);
    CHECK_FALSE(r.header("X-Compute-Time-Ms").empty());
    CHECK(service.predict(png).body == r.body);

    SUBCASE("1x1 image") {
        const Reply one = service.predict(encode_image_png(BitmapImage(1, 1, 3, 128)));
        REQUIRE(one.status == 200);
        CHECK(decode_map(one).width() == 1);
    }
    SUBCASE("truncated or empty upload is 400") {
        CHECK(service.predict(png.substr(0, png.size() / 2)).status == 400);
        CHECK(service.predict(png.substr(0, 10)).status == 400);
        CHECK(service.predict("").status == 400);
        CHECK(service.predict("not a png at all").status == 400);
        const json err = json::parse(service.predict("").body);
        CHECK(err.contains("error"));
    }
    SUBCASE("side over the limit is 413") {
        ServiceConfig cfg;
        cfg.max_side = 64;
        const Service small(cfg, toy_model());
        CHECK(small.predict(encode_image_png(BitmapImage(65, 10, 3))).status == 413);
        CHECK(small.predict(encode_image_png(BitmapImage(64, 64, 3))).status == 200);
    }
    SUBCASE("no model is 503") {
        const Service empty;
        CHECK(empty.predict(png).status == 503);
        CHECK(json::parse(empty.healthz().body)["model_loaded"] == false);
    }
}

TEST_CASE("parallel predictions equal serial ones") {
    Rng rng(2);
    ServiceConfig cfg;
    cfg.workers = 4;
    const Service service(cfg, toy_model(3));
    std::vector<std::string> pngs;
    for (int i = 0; i < 6; ++i) pngs.push_back(encode_image_png(oracle::random_image(rng, 96 + 16 * i, 80)));
    std::vector<std::string> serial;
    for (const auto& p : pngs) serial.push_back(service.predict(p).body);

    std::vector<std::string> parallel(pngs.size() * 3);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < parallel.size(); ++i) {
        threads.emplace_back([&, i] { parallel[i] = service.predict(pngs[i % pngs.size()]).body; });
    }
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < parallel.size(); ++i) CHECK(parallel[i] == serial[i % pngs.size()]);
}

TEST_CASE("score") {
    Rng rng(3);
    const BitmapImage img = oracle::random_image(rng, 80, 60);
    const std::string png = encode_image_png(img);
    auto external = std::make_shared<ExternalMapPredictor>();
    external->add(img, planted(80, 60, {50, 10, 10, 10}));
    const Service service({}, external);

    const std::string seg = R"({"elements":[
        {"id":"canvas","kind":"other","bbox":[0,0,80,60]},
        {"id":"cold","kind":"paragraph","bbox":[0,30,20,20]},
        {"id":"hot","kind":"title","bbox":[45,5,20,20]}]})";
    const Reply r = service.score(png, seg);
    REQUIRE(r.status == 200);
    const json body = json::parse(r.body);
    CHECK(body["scores"]["canvas"] == 1.0);
    CHECK(body["scores"]["hot"].get<double>() > body["scores"]["cold"].get<double>());
    CHECK(body["ranking"][0] != "cold");
    CHECK(body["ranking"].back() == "cold");

    SUBCASE("equals /predict followed by local scoring") {
        const ImportanceMap m = peak_normalize(decode_map(service.predict(png)));
        const auto local = score_elements(m, parse_segmentation(seg));
        for (const auto& [id, s] : local) CHECK(body["scores"][id].get<double>() == s);
        const Service fcn({}, toy_model(5));
        const json b2 = json::parse(fcn.score(png, seg).body);
        const auto local2 = score_elements(peak_normalize(decode_map(fcn.predict(png))), parse_segmentation(seg));
        for (const auto& [id, s] : local2) CHECK(b2["scores"][id].get<double>() == s);
    }
    SUBCASE("empty element list") {
        const Reply e = service.score(png, R"({"elements":[]})");
        REQUIRE(e.status == 200);
        CHECK(json::parse(e.body)["scores"].empty());
        CHECK(json::parse(e.body)["ranking"].empty());
    }
    SUBCASE("malformed segmentation is 400") {
        CHECK(service.score(png, "{").status == 400);
        CHECK(service.score(png, R"({"elements":[{"id":"a","bbox":[0,0,1]}]})").status == 400);
    }
    SUBCASE("box outside the image is 422") {
        CHECK(service.score(png, R"({"elements":[{"id":"a","bbox":[70,0,20,5]}]})").status == 422);
        CHECK(service.score(png, R"({"elements":[{"id":"a","bbox":[0,-1,5,5]}]})").status == 422);
    }
}

TEST_CASE("retarget") {
    Rng rng(4);
    SUBCASE("1:1 on a square image returns the image") {
        const BitmapImage img = oracle::random_image(rng, 48, 48);
        const Service service({}, toy_model());
        const Reply r = service.retarget(encode_image_png(img), R"({"aspect":"1:1"})");
        REQUIRE(r.status == 200);
        CHECK(decode_image(r) == img);
        const json crop = json::parse(r.header("X-Crop-Result"));
        CHECK(crop["rect"] == json::array({0, 0, 48, 48}));
        CHECK(crop["method"] == "importance");
    }
    SUBCASE("1:4 on 600x450 returns the exhaustive-search crop") {
        const BitmapImage img = oracle::random_image(rng, 600, 450);
        const ImportanceMap m = oracle::random_map(rng, 600, 450);
        auto external = std::make_shared<ExternalMapPredictor>();
        external->add(img, m);
        const Service service({}, external);
        const Reply r = service.retarget(encode_image_png(img), R"({"aspect":"1:4"})");
        REQUIRE(r.status == 200);
        const json crop = json::parse(r.header("X-Crop-Result"));
        const oracle::Window o = oracle::exhaustive_crop({m.values().begin(), m.values().end()}, 600, 450, 113, 450);
        CHECK(crop["rect"] == json::array({o.x, o.y, 113, 450}));
        CHECK(crop["contained_importance"].get<double>() == doctest::Approx(o.sum).epsilon(1e-12));
        CHECK(decode_image(r) == retarget_image(img, {o.x, o.y, 113, 450}));
    }
    SUBCASE("methods, sizes and errors") {
        const std::string png = encode_image_png(oracle::random_image(rng, 40, 30));
        const Service service({}, toy_model());
        const Reply sized = service.retarget(png, R"({"width":10,"height":7})");
        REQUIRE(sized.status == 200);
        CHECK(decode_image(sized).width() == 10);
        CHECK(json::parse(service.retarget(png, R"({"aspect":"2:1","method":"edge"})").header("X-Crop-Result"))["method"] ==
              "edge");
        const std::string rnd = R"({"aspect":"1:2","method":"random","seed":9})";
        CHECK(service.retarget(png, rnd).body == service.retarget(png, rnd).body);
        CHECK(service.retarget(png, R"({"aspect":"0:4"})").status == 400);
        CHECK(service.retarget(png, R"({"aspect":"wide"})").status == 400);
        CHECK(service.retarget(png, R"({})").status == 400);
        CHECK(service.retarget(png, R"({"aspect":"1:1","method":"external"})").status == 400);
        CHECK(service.retarget(png, R"({"width":41,"height":7})").status == 422);
        // The edge baseline needs no model.
        CHECK(Service().retarget(png, R"({"aspect":"1:1","method":"edge"})").status == 200);
        CHECK(Service().retarget(png, R"({"aspect":"1:1"})").status == 503);
    }
}

TEST_CASE("thumbnail") {
    Rng rng(5);
    const std::string png = encode_image_png(oracle::random_image(rng, 90, 40));
    const Service service({}, toy_model());
    const Reply r = service.thumbnail(png, R"({"side":32})");
    REQUIRE(r.status == 200);
    const BitmapImage t = decode_image(r);
    CHECK(t.width() == 32);
    CHECK(t.height() == 32);
    CHECK(service.thumbnail(png, R"({"side":32})").body == r.body);
    CHECK(service.thumbnail(png, R"({"side":0})").status == 400);
    CHECK(service.thumbnail(png, R"({})").status == 400);
}

TEST_CASE("healthz and schemas") {
    const Service service({}, toy_model());
    const json h = json::parse(service.healthz().body);
    CHECK(h["status"] == "ok");
    CHECK(h["model_loaded"] == true);
    const json list = json::parse(service.schema("").body);
    for (const char* name : {"segmentation", "score_response", "retarget_params", "crop_result", "thumbnail_params"}) {
        CHECK(std::find(list["schemas"].begin(), list["schemas"].end(), name) != list["schemas"].end());
        CHECK(service.schema(name).status == 200);
    }
    CHECK(service.schema("nope").status == 404);
}

TEST_CASE("admission") {
    SUBCASE("gate") {
        AdmissionGate gate(1);
        CHECK(gate.acquire(std::chrono::milliseconds(10)));
        CHECK_FALSE(gate.acquire(std::chrono::milliseconds(20)));
        gate.release();
        CHECK(gate.acquire(std::chrono::milliseconds(10)));
        gate.release();
    }
    SUBCASE("queued request times out with 503") {
        std::promise<void> go;
        auto blocking = std::make_shared<BlockingPredictor>(go.get_future().share());
        ServiceConfig cfg;
        cfg.workers = 1;
        cfg.queue_timeout = std::chrono::milliseconds(50);
        const Service service(cfg, blocking);
        const std::string png = encode_image_png(BitmapImage(8, 8, 3));
        auto first = std::async(std::launch::async, [&] { return service.predict(png).status; });
        while (!blocking->entered.load()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
        CHECK(service.predict(png).status == 503);
        go.set_value();
        CHECK(first.get() == 200);
        CHECK(service.predict(png).status == 200);
    }
}

TEST_CASE("checkpoint hot reload") {
    const auto dir = oracle::temp_dir("service_reload");
    const auto path = dir / "model.ckpt";
    const ModelCheckpoint a = random_checkpoint(1);
    const ModelCheckpoint b = random_checkpoint(2);
    save_checkpoint(path, a);

    Service service({}, std::make_shared<const FcnPredictor>(a));
    Rng rng(6);
    const BitmapImage img = oracle::random_image(rng, 32, 32);
    const std::string png = encode_image_png(img);
    const std::string before = service.predict(png).body;

    CheckpointReloader reloader(service, path, std::chrono::milliseconds(10));
    const auto stamp = std::filesystem::last_write_time(path);
    save_checkpoint(path, b);
    std::filesystem::last_write_time(path, stamp + std::chrono::seconds(2));
    for (int i = 0; i < 500 && reloader.reload_count() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    REQUIRE(reloader.reload_count() == 1);
    const std::string after = service.predict(png).body;
    CHECK(after != before);
    CHECK(after == encode_map_png(FcnPredictor(b).predict(img)));
}

TEST_CASE("HTTP round trip") {
    Rng rng(7);
    const BitmapImage img = oracle::random_image(rng, 64, 48);
    const std::string png = encode_image_png(img);
    Service service({}, toy_model());
    HttpServer server(service);
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client cli("127.0.0.1", port);

    auto raw = cli.Post("/predict", png, "image/png");
    REQUIRE(raw);
    CHECK(raw->status == 200);
    CHECK(raw->body == service.predict(png).body);
    CHECK(raw->has_header("X-Compute-Time-Ms"));

    auto multi = cli.Post("/predict", httplib::MultipartFormDataItems{{"image", png, "a.png", "image/png"}});
    REQUIRE(multi);
    CHECK(multi->body == raw->body);

    auto scored = cli.Post("/score", httplib::MultipartFormDataItems{
                                         {"image", png, "a.png", "image/png"},
                                         {"segmentation", R"({"elements":[{"id":"a","bbox":[0,0,8,8]}]})", "", "application/json"}});
    REQUIRE(scored);
    CHECK(scored->status == 200);
    CHECK(json::parse(scored->body)["ranking"][0] == "a");

    auto cropped = cli.Post("/retarget", httplib::MultipartFormDataItems{
                                             {"image", png, "a.png", "image/png"}, {"params", R"({"aspect":"1:1"})", "", ""}});
    REQUIRE(cropped);
    CHECK(cropped->status == 200);
    CHECK(json::parse(cropped->get_header_value("X-Crop-Result"))["rect"][2] == 48);

    auto thumb = cli.Post("/thumbnail", httplib::MultipartFormDataItems{
                                            {"image", png, "a.png", "image/png"}, {"params", R"({"side":16})", "", ""}});
    REQUIRE(thumb);
    CHECK(decode_image_png(as_bytes(thumb->body)).width() == 16);

    auto missing = cli.Post("/score", httplib::MultipartFormDataItems{{"image", png, "a.png", "image/png"}});
    REQUIRE(missing);
    CHECK(missing->status == 400);

    auto bad = cli.Post("/predict", std::string("garbage"), "image/png");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    auto health = cli.Get("/healthz");
    REQUIRE(health);
    CHECK(json::parse(health->body)["status"] == "ok");
    auto schema = cli.Get("/schema/segmentation");
    REQUIRE(schema);
    CHECK(json::parse(schema->body)["required"][0] == "elements");
    server.stop();
}
