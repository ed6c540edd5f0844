#include "visimp/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "visimp/error.hpp"
#include "visimp/metrics.hpp"
#include "visimp/png_io.hpp"
#include "visimp/retarget.hpp"
#include "visimp/thumbnail.hpp"

namespace visimp {

using nlohmann::json;

namespace {

Reply error_reply(int status, const std::string& message) {
    return {status, "application/json", json{{"error", message}}.dump(), {}};
}

Reply png_reply(std::string body) {
    return {200, "image/png", std::move(body), {}};
}

std::string format_ms(double ms) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", ms);
    return buf;
}

struct GateGuard {
    AdmissionGate& gate;
    ~GateGuard() { gate.release(); }
};

const json& schemas() {
    static const json doc = {
        {"segmentation",
         {{"type", "object"},
          {"required", {"elements"}},
          {"properties",
           {{"elements",
             {{"type", "array"},
              {"items",
               {{"type", "object"},
                {"required", {"id", "bbox"}},
                {"properties",
                 {{"id", {{"type", "string"}}},
                  {"kind",
                   {{"enum", {"title", "axis_label", "paragraph", "legend", "data", "image", "other"}}}},
                  {"bbox",
                   {{"type", "array"},
                    {"items", {{"type", "integer"}}},
                    {"minItems", 4},
                    {"maxItems", 4},
                    {"description", "[x, y, w, h] in pixels"}}}}}}}}}}}}},
        {"score_response",
         {{"type", "object"},
          {"properties",
           {{"scores", {{"type", "object"}, {"additionalProperties", {{"type", "number"}}}}},
            {"ranking", {{"type", "array"}, {"items", {{"type", "string"}}}}}}}}},
        {"retarget_params",
         {{"type", "object"},
          {"properties",
           {{"aspect", {{"type", "string"}, {"pattern", "^[0-9]+:[0-9]+$"}}},
            {"width", {{"type", "integer"}, {"minimum", 1}}},
            {"height", {{"type", "integer"}, {"minimum", 1}}},
            {"method", {{"enum", {"importance", "edge", "random"}}}},
            {"seed", {{"type", "integer"}}}}}}},
        {"crop_result",
         {{"type", "object"},
          {"properties",
           {{"rect", {{"type", "array"}, {"items", {{"type", "integer"}}}}},
            {"contained_importance", {{"type", "number"}}},
            {"method", {{"enum", {"importance", "edge", "random", "external"}}}}}}}},
        {"thumbnail_params",
         {{"type", "object"},
          {"required", {"side"}},
          {"properties", {{"side", {{"type", "integer"}, {"minimum", 1}}}}}}},
        {"error", {{"type", "object"}, {"properties", {{"error", {{"type", "string"}}}}}}}};
    return doc;
}

// Map exactly as a client receives it from /predict.
ImportanceMap as_transmitted(const ImportanceMap& map) {
    return decode_map_png(as_bytes(encode_map_png(map)));
}

}  // namespace

std::string Reply::header(std::string_view name) const {
    for (const auto& [k, v] : headers) {
        if (k == name) return v;
    }
    return {};
}

// ---------------------------------------------------------------------------
// AdmissionGate

AdmissionGate::AdmissionGate(int slots) : free_(std::max(1, slots)) {}

bool AdmissionGate::acquire(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    const std::uint64_t ticket = next_ticket_++;
    waiting_.push_back(ticket);
    const bool ok = cv_.wait_for(lock, timeout, [&] { return waiting_.front() == ticket && free_ > 0; });
    if (!ok) {
        waiting_.erase(std::find(waiting_.begin(), waiting_.end(), ticket));
        cv_.notify_all();
        return false;
    }
    waiting_.pop_front();
    --free_;
    cv_.notify_all();
    return true;
}

void AdmissionGate::release() {
    {
        const std::lock_guard lock(mutex_);
        ++free_;
    }
    cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceConfig config, std::shared_ptr<const Predictor> predictor)
    : config_(config), predictor_(std::move(predictor)),
      gate_(config.workers > 0 ? config.workers : int(std::max(1u, std::thread::hardware_concurrency()))) {}

void Service::set_predictor(std::shared_ptr<const Predictor> predictor) {
    const std::lock_guard lock(predictor_mutex_);
    predictor_ = std::move(predictor);
}

std::shared_ptr<const Predictor> Service::predictor() const {
    const std::lock_guard lock(predictor_mutex_);
    return predictor_;
}

Reply Service::with_image(std::string_view png, bool needs_predictor,
                          const std::function<Reply(const BitmapImage&, const Predictor*)>& body) const {
    if (png.empty()) return error_reply(400, "request carries no image");
    PngInfo info;
    try {
        info = probe_png(as_bytes(png));
    } catch (const DataError& e) {
        return error_reply(400, e.what());
    }
    if (info.width > config_.max_side || info.height > config_.max_side) {
        return error_reply(413, "image is " + std::to_string(info.width) + "x" + std::to_string(info.height) +
                                    "; the limit is " + std::to_string(config_.max_side) + " px per side");
    }
    const auto snapshot = predictor();
    if (needs_predictor && !snapshot) return error_reply(503, "no model loaded");

    std::optional<BitmapImage> image;
    try {
        image = decode_image_png(as_bytes(png));
    } catch (const DataError& e) {
        return error_reply(400, e.what());
    }

    if (!gate_.acquire(config_.queue_timeout)) return error_reply(503, "server busy; request timed out in queue");
    const GateGuard guard{gate_};
    try {
        return body(*image, snapshot.get());
    } catch (const ParameterError& e) {
        return error_reply(422, e.what());
    } catch (const DataError& e) {
        return error_reply(422, e.what());
    } catch (const std::exception& e) {
        return error_reply(500, e.what());
    }
}

Reply Service::predict(std::string_view png) const {
    return with_image(png, true, [](const BitmapImage& image, const Predictor* predictor) {
        const auto start = std::chrono::steady_clock::now();
        const ImportanceMap map = predictor->predict(image);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        Reply r = png_reply(encode_map_png(map));
        r.headers.push_back({"X-Compute-Time-Ms", format_ms(ms)});
        r.headers.push_back({"X-Predictor", predictor->describe()});
        return r;
    });
}

Reply Service::score(std::string_view png, std::string_view segmentation_json) const {
    ElementSegmentation seg;
    try {
        seg = parse_segmentation(std::string(segmentation_json));
    } catch (const DataError& e) {
        return error_reply(400, e.what());
    }
    return with_image(png, true, [&](const BitmapImage& image, const Predictor* predictor) {
        for (const Element& e : seg.elements) {
            const BoundingBox& b = e.bbox;
            if (b.x < 0 || b.y < 0 || b.x + b.w > image.width() || b.y + b.h > image.height()) {
                return error_reply(422, "element '" + e.id + "' lies outside the image");
            }
        }
        const auto start = std::chrono::steady_clock::now();
        const ImportanceMap map = peak_normalize(as_transmitted(predictor->predict(image)));
        const auto scores = score_elements(map, seg);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        json body = {{"scores", json::object()}, {"ranking", rank_elements(scores, seg)}};
        for (const auto& [id, s] : scores) body["scores"][id] = s;
        Reply r{200, "application/json", body.dump(), {}};
        r.headers.push_back({"X-Compute-Time-Ms", format_ms(ms)});
        return r;
    });
}

Reply Service::retarget(std::string_view png, std::string_view params_json) const {
    CropSpec spec;
    CropMethod method = CropMethod::importance;
    std::uint64_t seed = 0;
    try {
        const json p = json::parse(params_json);
        if (p.contains("aspect")) {
            spec = parse_aspect(p["aspect"].get<std::string>());
        } else if (p.contains("width") && p.contains("height")) {
            spec = CropSize{p["width"].get<int>(), p["height"].get<int>()};
        } else {
            return error_reply(400, "retarget params need \"aspect\" or \"width\" and \"height\"");
        }
        if (p.contains("method")) method = crop_method_from_string(p["method"].get<std::string>());
        if (method == CropMethod::external) return error_reply(400, "method 'external' is not served");
        if (p.contains("seed")) seed = p["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        return error_reply(400, std::string("malformed params: ") + e.what());
    } catch (const ParameterError& e) {
        return error_reply(400, e.what());
    }
    const bool needs_predictor = method != CropMethod::edge;
    return with_image(png, needs_predictor, [&](const BitmapImage& image, const Predictor* predictor) {
        CropResult crop;
        if (method == CropMethod::edge) {
            crop = edge_crop(image, spec);
        } else {
            const ImportanceMap map = predictor->predict(image);
            crop = method == CropMethod::random ? random_crop(map, spec, seed) : best_crop(map, spec);
        }
        Reply r = png_reply(encode_image_png(retarget_image(image, crop.rect)));
        r.headers.push_back({"X-Crop-Result", crop_result_to_json(crop)});
        return r;
    });
}

Reply Service::thumbnail(std::string_view png, std::string_view params_json) const {
    int side = 0;
    try {
        side = json::parse(params_json).at("side").get<int>();
    } catch (const json::exception& e) {
        return error_reply(400, std::string("malformed params: ") + e.what());
    }
    if (side < 1 || side > config_.max_side) {
        return error_reply(400, "side must be in [1, " + std::to_string(config_.max_side) + "]");
    }
    return with_image(png, true, [&](const BitmapImage& image, const Predictor* predictor) {
        return png_reply(encode_image_png(make_thumbnail(image, predictor->predict(image), side)));
    });
}

Reply Service::healthz() const {
    const auto p = predictor();
    return {200, "application/json",
            json{{"status", "ok"}, {"model_loaded", bool(p)}, {"predictor", p ? p->describe() : ""}}.dump(), {}};
}

Reply Service::schema(std::string_view name) const {
    const json& all = schemas();
    if (name.empty()) {
        json names = json::array();
        for (const auto& [k, v] : all.items()) names.push_back(k);
        return {200, "application/json", json{{"schemas", names}}.dump(), {}};
    }
    const std::string key(name);
    if (!all.contains(key)) return error_reply(404, "no schema named '" + key + "'");
    return {200, "application/schema+json", all[key].dump(), {}};
}

// ---------------------------------------------------------------------------
// HTTP binding

namespace {

void send(httplib::Response& res, const Reply& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
}

std::optional<std::string> part(const httplib::Request& req, const std::string& name) {
    if (!req.is_multipart_form_data() || !req.has_file(name)) return std::nullopt;
    return req.get_file_value(name).content;
}

}  // namespace

void register_routes(httplib::Server& server, Service& service) {
    server.Post("/predict", [&service](const httplib::Request& req, httplib::Response& res) {
        if (req.is_multipart_form_data()) {
            const auto image = part(req, "image");
            send(res, service.predict(image ? *image : std::string()));
        } else {
            send(res, service.predict(req.body));
        }
    });
    server.Post("/score", [&service](const httplib::Request& req, httplib::Response& res) {
        const auto image = part(req, "image");
        const auto seg = part(req, "segmentation");
        if (!image || !seg) return send(res, error_reply(400, "expected multipart parts 'image' and 'segmentation'"));
        send(res, service.score(*image, *seg));
    });
    server.Post("/retarget", [&service](const httplib::Request& req, httplib::Response& res) {
        const auto image = part(req, "image");
        const auto params = part(req, "params");
        if (!image || !params) return send(res, error_reply(400, "expected multipart parts 'image' and 'params'"));
        send(res, service.retarget(*image, *params));
    });
    server.Post("/thumbnail", [&service](const httplib::Request& req, httplib::Response& res) {
        const auto image = part(req, "image");
        const auto params = part(req, "params");
        if (!image || !params) return send(res, error_reply(400, "expected multipart parts 'image' and 'params'"));
        send(res, service.thumbnail(*image, *params));
    });
    server.Get("/healthz", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.healthz()); });
    server.Get("/schema", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.schema("")); });
    server.Get(R"(/schema/([A-Za-z_]+))", [&service](const httplib::Request& req, httplib::Response& res) {
        send(res, service.schema(req.matches[1].str()));
    });
}

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    const int slots =
        service.config().workers > 0 ? service.config().workers : int(std::max(1u, std::thread::hardware_concurrency()));
    const std::size_t threads = std::size_t(std::max(8, 4 * slots));
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_->set_payload_max_length(std::size_t(256) << 20);
    register_routes(*server_, service_);
}

HttpServer::~HttpServer() {
    stop();
}

int HttpServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
        if (bound < 0) throw Error("cannot bind " + host);
    } else if (!server_->bind_to_port(host, port)) {
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void HttpServer::wait() {
    if (thread_.joinable()) thread_.join();
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------------------
// CheckpointReloader

CheckpointReloader::CheckpointReloader(Service& service, std::filesystem::path path,
                                       std::chrono::milliseconds interval)
    : service_(service), path_(std::move(path)), interval_(interval) {
    std::error_code ec;
    last_seen_ = std::filesystem::last_write_time(path_, ec);
    thread_ = std::jthread([this](std::stop_token st) { run(st); });
}

CheckpointReloader::~CheckpointReloader() {
    thread_.request_stop();
}

int CheckpointReloader::reload_count() const {
    const std::lock_guard lock(mutex_);
    return reloads_;
}

void CheckpointReloader::run(std::stop_token stop) {
    std::unique_lock lock(mutex_);
    while (!stop.stop_requested()) {
        cv_.wait_for(lock, stop, interval_, [] { return false; });
        if (stop.stop_requested()) break;
        std::error_code ec;
        const auto stamp = std::filesystem::last_write_time(path_, ec);
        if (ec || stamp == last_seen_) continue;
        try {
            auto predictor = std::make_shared<const FcnPredictor>(load_checkpoint(path_));
            service_.set_predictor(std::move(predictor));
            last_seen_ = stamp;
            ++reloads_;
        } catch (const Error&) {
            // Half-written file; retry on the next tick.
        }
    }
}

}  // namespace visimp
