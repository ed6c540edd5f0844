#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "visimp/predictor.hpp"

namespace httplib {
class Server;
}

namespace visimp {

struct ServiceConfig {
    /// Largest accepted image side; larger uploads get 413.
    int max_side = 1500;
    /// Concurrent compute slots. 0 means std::thread::hardware_concurrency().
    int workers = 0;
    /// How long a request may wait for a compute slot before 503.
    std::chrono::milliseconds queue_timeout{10000};
};

/// Transport-independent response.
struct Reply {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;

    std::string header(std::string_view name) const;
};

/// FIFO admission control: at most `slots` holders, waiters served in
/// arrival order, each giving up after its timeout.
class AdmissionGate {
public:
    explicit AdmissionGate(int slots);

    bool acquire(std::chrono::milliseconds timeout);
    void release();

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int free_;
    std::uint64_t next_ticket_ = 0;
    std::deque<std::uint64_t> waiting_;
};

/// Endpoint logic of the importance service. Every handler is a pure function
/// of (current predictor snapshot, request); the predictor can be swapped
/// at any time and in-flight requests keep the snapshot they started with.
class Service {
public:
    explicit Service(ServiceConfig config = {}, std::shared_ptr<const Predictor> predictor = nullptr);

    void set_predictor(std::shared_ptr<const Predictor> predictor);
    std::shared_ptr<const Predictor> predictor() const;
    const ServiceConfig& config() const { return config_; }

    /// Body: PNG image. Reply: 16-bit grayscale PNG map.
    Reply predict(std::string_view png) const;
    /// Reply: {"scores":{id:score},"ranking":[ids by descending score]}.
    Reply score(std::string_view png, std::string_view segmentation_json) const;
    /// Params: {"aspect":"W:H"} or {"width":W,"height":H}, optional
    /// "method" (importance|edge|random) and "seed". Reply: cropped PNG with
    /// the CropResult JSON in the X-Crop-Result header.
    Reply retarget(std::string_view png, std::string_view params_json) const;
    /// Params: {"side":N}. Reply: side x side PNG.
    Reply thumbnail(std::string_view png, std::string_view params_json) const;

    Reply healthz() const;
    /// With an empty name, the list of published schemas.
    Reply schema(std::string_view name) const;

private:
    Reply with_image(std::string_view png, bool needs_predictor,
                     const std::function<Reply(const BitmapImage&, const Predictor*)>& body) const;

    ServiceConfig config_;
    mutable std::mutex predictor_mutex_;
    std::shared_ptr<const Predictor> predictor_;
    mutable AdmissionGate gate_;
};

/// Routes: POST /predict, /score, /retarget, /thumbnail; GET /healthz,
/// /schema, /schema/<name>. /score, /retarget and /thumbnail take
/// multipart/form-data with an "image" part and a "segmentation" or
/// "params" part.
void register_routes(httplib::Server& server, Service& service);

/// Starts an HTTP server on a background thread.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds (port 0 picks a free port) and starts serving. Returns the port.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from elsewhere.
    void wait();
    void stop();

private:
    Service& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

/// Polls a checkpoint file and swaps the service's predictor whenever the
/// file's modification time changes and it loads cleanly.
class CheckpointReloader {
public:
    CheckpointReloader(Service& service, std::filesystem::path path,
                       std::chrono::milliseconds interval = std::chrono::milliseconds(1000));
    ~CheckpointReloader();

    int reload_count() const;

private:
    void run(std::stop_token stop);

    Service& service_;
    std::filesystem::path path_;
    std::chrono::milliseconds interval_;
    mutable std::mutex mutex_;
    std::condition_variable_any cv_;
    int reloads_ = 0;
    std::filesystem::file_time_type last_seen_{};
    std::jthread thread_;
};

}  // namespace visimp
