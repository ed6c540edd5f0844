// visimp: command-line entry point for the importance toolkit.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 internal error.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "visimp/error.hpp"
#include "visimp/ground_truth.hpp"
#include "visimp/metrics.hpp"
#include "visimp/png_io.hpp"
#include "visimp/predictor.hpp"
#include "visimp/retarget.hpp"
#include "visimp/service.hpp"
#include "visimp/synth.hpp"
#include "visimp/thumbnail.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace visimp;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_size(const std::string& text) {
    const auto x = text.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        std::size_t used = 0;
        const int w = std::stoi(text.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(text);
        const int h = std::stoi(text.substr(x + 1), &used);
        if (used != text.size() - x - 1 || w < 1 || h < 1) throw std::invalid_argument(text);
        return {w, h};
    } catch (const std::logic_error&) {
        throw UsageError("size must look like WxH, got '" + text + "'");
    }
}

json report_to_json(const MetricReport& r) {
    json j = json::object();
    auto put = [&](const char* name, const std::optional<double>& v) {
        if (v) j[name] = *v;
    };
    put("kl", r.kl);
    put("cc", r.cc);
    put("rmse", r.rmse);
    put("r2", r.r2);
    if (!r.undefined.empty()) j["undefined"] = r.undefined;
    return j;
}

std::unique_ptr<Predictor> predictor_from_checkpoint(const std::string& path) {
    return std::make_unique<FcnPredictor>(load_checkpoint(path));
}

// --------------------------------------------------------------------------

struct AggregateArgs {
    std::string clicks, masks, output;
    double sigma = kDefaultClickSigma;
};

int run_aggregate(const AggregateArgs& a) {
    if (a.clicks.empty() == a.masks.empty()) throw UsageError("give exactly one of --clicks or --masks");
    json summary = {{"output", a.output}};
    if (!a.clicks.empty()) {
        const PointAggregate agg = aggregate_points(load_click_log(a.clicks), a.sigma);
        for (const auto& d : agg.diagnostics) std::cerr << "warning: " << d << "\n";
        write_map(a.output, agg.map);
        summary["accepted"] = agg.accepted;
        summary["rejected"] = agg.diagnostics.size();
        summary["sigma"] = a.sigma;
    } else {
        const AnnotationSet set = load_annotation_set(a.masks);
        write_map(a.output, aggregate_masks(set));
        summary["masks"] = set.masks.size();
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

struct EvalArgs {
    std::vector<std::string> pred, gt, elements;
    std::string metrics = "kl,cc,rmse,r2";
    double pred_blur = 0.0;
    double kl_epsilon = kDefaultKlEpsilon;
};

int run_eval(const EvalArgs& a) {
    if (a.pred.size() != a.gt.size()) throw UsageError("--pred and --gt must be given the same number of times");
    if (!a.elements.empty() && a.elements.size() != a.pred.size()) {
        throw UsageError("--elements must be given once per --pred");
    }
    EvalOptions options;
    options.kl = options.cc = options.rmse = options.r2 = false;
    std::stringstream ss(a.metrics);
    for (std::string name; std::getline(ss, name, ',');) {
        if (name == "kl") options.kl = true;
        else if (name == "cc") options.cc = true;
        else if (name == "rmse") options.rmse = true;
        else if (name == "r2") options.r2 = true;
        else throw UsageError("unknown metric '" + name + "'");
    }
    options.pred_blur_sigma = a.pred_blur;
    options.kl_epsilon = a.kl_epsilon;

    std::map<std::string, std::pair<double, int>> sums;
    for (std::size_t i = 0; i < a.pred.size(); ++i) {
        const ImportanceMap pred = read_map(a.pred[i]);
        const ImportanceMap gt = read_map(a.gt[i]);
        const MetricReport report = evaluate(pred, gt, options);
        json row = report_to_json(report);
        row["pred"] = a.pred[i];
        row["gt"] = a.gt[i];
        for (const char* name : {"kl", "cc", "rmse", "r2"}) {
            if (row.contains(name)) {
                sums[name].first += row[name].get<double>();
                sums[name].second += 1;
            }
        }
        if (!a.elements.empty()) {
            const ElementSegmentation seg = parse_segmentation(read_file(a.elements[i]));
            const auto pred_scores = score_elements(peak_normalize(pred), seg);
            const auto gt_scores = score_elements(peak_normalize(gt), seg);
            row["element_scores"] = pred_scores;
            std::vector<double> ps, gs;
            for (const auto& e : seg.elements) {
                ps.push_back(pred_scores.at(e.id));
                gs.push_back(gt_scores.at(e.id));
            }
            try {
                const double rho = spearman(ps, gs);
                row["element_spearman"] = rho;
                sums["element_spearman"].first += rho;
                sums["element_spearman"].second += 1;
            } catch (const Error& e) {
                row["undefined"]["element_spearman"] = e.what();
            }
        }
        std::cout << row.dump() << "\n";
    }
    json avg = {{"average", true}, {"count", a.pred.size()}};
    for (const auto& [name, s] : sums) avg[name] = s.first / double(s.second);
    std::cout << avg.dump() << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, output;
    int epochs = TrainConfig{}.epochs;
    double lr = TrainConfig{}.learning_rate;
    double momentum = 0.9;
    int batch = 8;
    std::uint64_t seed = 1;
    bool no_skip = false;
    int holdout = 0;
    bool quiet = false;
};

int run_train(const TrainArgs& a) {
    const auto corpus = load_corpus(a.data);
    if (a.holdout < 0 || a.holdout >= int(corpus.size())) {
        throw UsageError("--holdout must leave at least one training sample");
    }
    const std::size_t n_train = corpus.size() - std::size_t(a.holdout);
    const std::vector<SynthSample> train_part(corpus.begin(), corpus.begin() + std::ptrdiff_t(n_train));
    const auto samples = training_samples(train_part);

    TrainConfig config;
    config.epochs = a.epochs;
    config.learning_rate = a.lr;
    config.momentum = a.momentum;
    config.batch_size = a.batch;
    config.seed = a.seed;
    config.skip_connections = !a.no_skip;
    if (!a.quiet) {
        config.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << loss << "\n"; };
    }
    const ModelCheckpoint ckpt = train(samples, config);
    save_checkpoint(a.output, ckpt);

    json summary = {{"checkpoint", a.output},
                    {"train_samples", n_train},
                    {"parameters", ckpt.architecture.parameter_count()},
                    {"loss_curve", ckpt.metadata.loss_curve}};
    if (a.holdout > 0) {
        const FcnPredictor predictor(ckpt);
        double cc = 0.0, kl = 0.0;
        for (std::size_t i = n_train; i < corpus.size(); ++i) {
            const ImportanceMap p = predictor.predict(corpus[i].image);
            cc += cross_correlation(p, corpus[i].target);
            kl += kl_divergence(p, corpus[i].target);
        }
        summary["holdout"] = {{"count", a.holdout}, {"cc", cc / a.holdout}, {"kl", kl / a.holdout}};
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

struct PredictArgs {
    std::string ckpt, external, image, output;
    bool resample = false;
};

int run_predict(const PredictArgs& a) {
    if (a.ckpt.empty() == a.external.empty()) throw UsageError("give exactly one of --ckpt or --external");
    const BitmapImage image = read_image(a.image);
    const auto start = std::chrono::steady_clock::now();
    const ImportanceMap map = a.ckpt.empty()
                                  ? load_external_map(a.external, std::pair{image.width(), image.height()}, a.resample)
                                  : predictor_from_checkpoint(a.ckpt)->predict(image);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    write_map(a.output, map);
    std::cout << json{{"output", a.output}, {"width", map.width()}, {"height", map.height()}, {"ms", ms}}.dump()
              << "\n";
    return 0;
}

struct RetargetArgs {
    std::string image, map, ckpt, aspect, size, method = "importance", output, json_out;
    std::uint64_t seed = 0;
};

int run_retarget(const RetargetArgs& a) {
    if (a.aspect.empty() == a.size.empty()) throw UsageError("give exactly one of --aspect or --size");
    CropSpec spec;
    if (!a.aspect.empty()) {
        try {
            spec = parse_aspect(a.aspect);
        } catch (const ParameterError& e) {
            throw UsageError(e.what());
        }
    } else {
        const auto [w, h] = parse_size(a.size);
        spec = CropSize{w, h};
    }
    const CropMethod method = crop_method_from_string(a.method);
    const BitmapImage image = read_image(a.image);

    auto importance = [&]() -> ImportanceMap {
        if (!a.map.empty()) return load_external_map(a.map, std::pair{image.width(), image.height()}, false);
        if (!a.ckpt.empty()) return predictor_from_checkpoint(a.ckpt)->predict(image);
        if (method == CropMethod::random) return ImportanceMap(image.width(), image.height());
        throw UsageError("method '" + a.method + "' needs --map or --ckpt");
    };

    CropResult crop;
    switch (method) {
        case CropMethod::edge: crop = edge_crop(image, spec); break;
        case CropMethod::random: crop = random_crop(importance(), spec, a.seed); break;
        case CropMethod::importance:
        case CropMethod::external: crop = best_crop(importance(), spec, method); break;
    }
    write_image(a.output, retarget_image(image, crop.rect));
    const std::string result = crop_result_to_json(crop);
    if (!a.json_out.empty()) write_file(a.json_out, result + "\n");
    std::cout << result << "\n";
    return 0;
}

struct ThumbnailArgs {
    std::string image, map, ckpt, output;
    int size = 256;
};

int run_thumbnail(const ThumbnailArgs& a) {
    if (a.map.empty() == a.ckpt.empty()) throw UsageError("give exactly one of --map or --ckpt");
    const BitmapImage image = read_image(a.image);
    const ImportanceMap map = a.map.empty() ? predictor_from_checkpoint(a.ckpt)->predict(image)
                                            : load_external_map(a.map, std::pair{image.width(), image.height()});
    write_image(a.output, make_thumbnail(image, map, a.size));
    std::cout << json{{"output", a.output}, {"side", a.size}}.dump() << "\n";
    return 0;
}

struct ServeArgs {
    std::string host = "0.0.0.0";
    int port = 8080;
    std::string ckpt, external_maps;
    int max_px = 1500;
    int workers = 0;
    int queue_timeout_ms = 10000;
    bool watch = false;
    bool resample = false;
};

HttpServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int run_serve(const ServeArgs& a) {
    if (!a.ckpt.empty() && !a.external_maps.empty()) throw UsageError("give at most one of --ckpt or --external-maps");
    ServiceConfig config;
    config.max_side = a.max_px;
    config.workers = a.workers;
    config.queue_timeout = std::chrono::milliseconds(a.queue_timeout_ms);
    Service service(config);
    if (!a.ckpt.empty()) service.set_predictor(std::make_shared<const FcnPredictor>(load_checkpoint(a.ckpt)));
    if (!a.external_maps.empty()) {
        service.set_predictor(std::make_shared<const ExternalMapPredictor>(fs::path(a.external_maps), a.resample));
    }
    std::unique_ptr<CheckpointReloader> reloader;
    if (a.watch && !a.ckpt.empty()) reloader = std::make_unique<CheckpointReloader>(service, a.ckpt);

    HttpServer server(service);
    const int port = server.start(a.host, a.port);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << a.host << ":" << port << "\n";
    server.wait();
    g_server = nullptr;
    return 0;
}

struct SynthArgs {
    int count = 1;
    std::string size = "64x64";
    std::uint64_t seed = 1;
    std::string output;
};

int run_synth(const SynthArgs& a) {
    SynthOptions options;
    options.count = a.count;
    std::tie(options.width, options.height) = parse_size(a.size);
    options.seed = a.seed;
    write_corpus(a.output, synth_corpus(options), options);
    std::cout << json{{"manifest", (fs::path(a.output) / "manifest.json").string()}, {"count", a.count}}.dump()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"visimp: importance maps for graphic designs and visualizations"};
    app.require_subcommand(1);

    AggregateArgs agg;
    auto* c_agg = app.add_subcommand("aggregate", "Build a ground-truth map from clicks or binary masks");
    auto* o_clicks = c_agg->add_option("--clicks", agg.clicks, "Click/fixation log JSON");
    auto* o_masks = c_agg->add_option("--masks", agg.masks, "Annotation manifest JSON");
    o_clicks->excludes(o_masks);
    c_agg->add_option("--sigma", agg.sigma, "Gaussian sigma in pixels (clicks only)")->capture_default_str();
    c_agg->add_option("-o,--output", agg.output, "Output map PNG")->required();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Compare predicted and ground-truth maps");
    c_eval->add_option("--pred", ev.pred, "Predicted map PNG (repeatable)")->required();
    c_eval->add_option("--gt", ev.gt, "Ground-truth map PNG (repeatable)")->required();
    c_eval->add_option("--metrics", ev.metrics, "Comma-separated subset of kl,cc,rmse,r2")->capture_default_str();
    c_eval->add_option("--elements", ev.elements, "Element segmentation JSON per pair (repeatable)");
    c_eval->add_option("--pred-blur", ev.pred_blur, "Blur sigma applied to predictions; 0 disables")
        ->capture_default_str();
    c_eval->add_option("--kl-epsilon", ev.kl_epsilon, "Per-pixel regularizer for KL")->capture_default_str();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the toy FCN on a synth corpus");
    c_train->add_option("--data", tr.data, "Corpus manifest.json")->required();
    c_train->add_option("-o,--output", tr.output, "Checkpoint path")->required();
    c_train->add_option("--epochs", tr.epochs)->capture_default_str();
    c_train->add_option("--lr", tr.lr)->capture_default_str();
    c_train->add_option("--momentum", tr.momentum)->capture_default_str();
    c_train->add_option("--batch", tr.batch)->capture_default_str();
    c_train->add_option("--seed", tr.seed)->capture_default_str();
    c_train->add_flag("--no-skip", tr.no_skip, "Disable the skip connection");
    c_train->add_option("--holdout", tr.holdout, "Hold out the last N samples for evaluation")->capture_default_str();
    c_train->add_flag("-q,--quiet", tr.quiet, "No per-epoch progress");

    PredictArgs pr;
    auto* c_pred = app.add_subcommand("predict", "Predict an importance map");
    c_pred->add_option("--ckpt", pr.ckpt, "Checkpoint file");
    c_pred->add_option("--external", pr.external, "Precomputed map to ingest instead of running the model");
    c_pred->add_flag("--resample", pr.resample, "Resample an external map to the image size");
    c_pred->add_option("--image", pr.image, "Input PNG")->required();
    c_pred->add_option("-o,--output", pr.output, "Output map PNG")->required();

    RetargetArgs rt;
    auto* c_rt = app.add_subcommand("retarget", "Crop the most important region at a given aspect or size");
    c_rt->add_option("--image", rt.image, "Input PNG")->required();
    c_rt->add_option("--map", rt.map, "Importance map PNG");
    c_rt->add_option("--ckpt", rt.ckpt, "Checkpoint to predict the map with");
    c_rt->add_option("--aspect", rt.aspect, "Aspect ratio W:H");
    c_rt->add_option("--size", rt.size, "Exact crop size WxH");
    c_rt->add_option("--method", rt.method, "importance | edge | random | external")->capture_default_str();
    c_rt->add_option("--seed", rt.seed, "Seed for the random baseline")->capture_default_str();
    c_rt->add_option("-o,--output", rt.output, "Cropped PNG")->required();
    c_rt->add_option("--json", rt.json_out, "Also write the crop result JSON here");

    ThumbnailArgs th;
    auto* c_th = app.add_subcommand("thumbnail", "Carve and fade an image into a square thumbnail");
    c_th->add_option("--image", th.image, "Input PNG")->required();
    c_th->add_option("--map", th.map, "Importance map PNG");
    c_th->add_option("--ckpt", th.ckpt, "Checkpoint to predict the map with");
    c_th->add_option("--size", th.size, "Thumbnail side in pixels")->capture_default_str();
    c_th->add_option("-o,--output", th.output, "Output PNG")->required();

    ServeArgs sv;
    auto* c_sv = app.add_subcommand("serve", "Run the HTTP service");
    c_sv->add_option("--host", sv.host)->capture_default_str();
    c_sv->add_option("--port", sv.port)->envname("VISIMP_PORT")->capture_default_str();
    c_sv->add_option("--ckpt", sv.ckpt, "Checkpoint file")->envname("VISIMP_CKPT");
    c_sv->add_option("--external-maps", sv.external_maps, "Directory of <image digest>.png maps");
    c_sv->add_flag("--resample", sv.resample, "Resample external maps to the request size");
    c_sv->add_option("--max-px", sv.max_px, "Largest accepted side")->envname("VISIMP_MAXPX")->capture_default_str();
    c_sv->add_option("--workers", sv.workers, "Compute slots; 0 = hardware threads")->capture_default_str();
    c_sv->add_option("--queue-timeout-ms", sv.queue_timeout_ms)->capture_default_str();
    c_sv->add_flag("--watch", sv.watch, "Reload the checkpoint when the file changes");

    SynthArgs sy;
    auto* c_sy = app.add_subcommand("synth", "Generate a synthetic design corpus");
    c_sy->add_option("--count", sy.count)->capture_default_str();
    c_sy->add_option("--size", sy.size, "WxH")->capture_default_str();
    c_sy->add_option("--seed", sy.seed)->capture_default_str();
    c_sy->add_option("-o,--output", sy.output, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*c_agg) return run_aggregate(agg);
        if (*c_eval) return run_eval(ev);
        if (*c_train) return run_train(tr);
        if (*c_pred) return run_predict(pr);
        if (*c_rt) return run_retarget(rt);
        if (*c_th) return run_thumbnail(th);
        if (*c_sv) return run_serve(sv);
        if (*c_sy) return run_synth(sy);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const UndefinedMetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}
