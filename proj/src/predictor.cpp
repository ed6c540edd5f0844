#include "visimp/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "fcn.hpp"
#include "visimp/error.hpp"
#include "visimp/png_io.hpp"
#include "visimp/rng.hpp"

namespace visimp {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "VISIMP1";
constexpr std::size_t kMagicLen = 7;

// Output stays strictly inside (0,1) even when the logit saturates.
constexpr double kProbabilityFloor = 1e-15;

std::string block_name(int b) {
    return "block" + std::to_string(b);
}

ImportanceMap probabilities(const RealGrid& logits) {
    RealGrid p = logits;
    for (double& v : p.values) v = std::clamp(sigmoid(v), kProbabilityFloor, 1.0 - kProbabilityFloor);
    return ImportanceMap(std::move(p));
}

void require_same_size(const RealGrid& logits, const ImportanceMap& target) {
    if (logits.width != target.width() || logits.height != target.height()) {
        throw DataError("logits and target differ in size");
    }
}

json architecture_to_json(const Architecture& arch) {
    json layers = json::array();
    for (const auto& l : arch.layers()) {
        layers.push_back(
            {{"op", l.op}, {"kernel", l.kernel}, {"stride", l.stride}, {"channels", l.channels}, {"name", l.name}});
    }
    return {{"input_channels", arch.input_channels},
            {"block_channels", arch.block_channels},
            {"skip", arch.skip},
            {"layers", layers}};
}

Architecture architecture_from_json(const json& j) {
    Architecture arch;
    arch.input_channels = j.at("input_channels").get<int>();
    const auto channels = j.at("block_channels").get<std::vector<int>>();
    if (channels.size() != std::size_t(Architecture::kBlocks)) throw DataError("checkpoint must describe 4 blocks");
    std::copy(channels.begin(), channels.end(), arch.block_channels.begin());
    arch.skip = j.at("skip").get<bool>();
    if (arch.input_channels < 1 || arch.input_channels > 4) throw DataError("unsupported input channel count");
    for (int c : arch.block_channels) {
        if (c < 1 || c > 1024) throw DataError("unsupported block width in checkpoint");
    }
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
        layers.push_back({l.at("op").get<std::string>(), l.at("kernel").get<int>(), l.at("stride").get<int>(),
                          l.at("channels").get<int>(), l.at("name").get<std::string>()});
    }
    if (layers != arch.layers()) throw DataError("checkpoint layer list does not match its architecture");
    return arch;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(in[std::size_t(i)])) << (8 * i);
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture and checkpoints

std::vector<LayerSpec> Architecture::layers() const {
    std::vector<LayerSpec> out;
    for (int b = 0; b < kBlocks; ++b) {
        const int c = block_channels[std::size_t(b)];
        out.push_back({"conv", 3, 1, c, block_name(b)});
        out.push_back({"tanh", 0, 0, c, ""});
        out.push_back({"downsample", 2, 2, c, "avgpool"});
    }
    out.push_back({"conv", 1, 1, 1, "head"});
    if (skip) out.push_back({"skip_merge", 1, 1, 1, "skip_head"});
    out.push_back({"upsample", 0, skip ? downsample_factor() / 2 : downsample_factor(), 1, "bilinear"});
    return out;
}

std::size_t Architecture::parameter_count() const {
    return fcn::ParamLayout(*this).total;
}

std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const Architecture& arch) {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    int in_c = arch.input_channels;
    for (int b = 0; b < Architecture::kBlocks; ++b) {
        const int c = arch.block_channels[std::size_t(b)];
        out.push_back({block_name(b) + ".weight", {c, in_c, 3, 3}});
        out.push_back({block_name(b) + ".bias", {c}});
        in_c = c;
    }
    out.push_back({"head.weight", {1, in_c, 1, 1}});
    out.push_back({"head.bias", {1}});
    if (arch.skip) {
        out.push_back({"skip_head.weight", {1, arch.block_channels[Architecture::kBlocks - 2], 1, 1}});
        out.push_back({"skip_head.bias", {1}});
    }
    return out;
}

void ModelCheckpoint::validate() const {
    const auto layout = tensor_layout(architecture);
    if (layout.size() != tensors.size()) throw DataError("checkpoint tensor count does not match the architecture");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& [name, shape] = layout[i];
        const NamedTensor& t = tensors[i];
        if (t.name != name) throw DataError("checkpoint tensor '" + t.name + "' where '" + name + "' was expected");
        if (t.shape != shape) throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
        const auto count = std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                                           [](std::size_t a, int b) { return a * std::size_t(b); });
        if (t.data.size() != count) throw DataError("checkpoint tensor '" + name + "' has the wrong length");
    }
}

std::vector<double> ModelCheckpoint::flat_parameters() const {
    validate();
    std::vector<double> flat;
    flat.reserve(architecture.parameter_count());
    for (const auto& t : tensors) flat.insert(flat.end(), t.data.begin(), t.data.end());
    return flat;
}

ModelCheckpoint make_checkpoint(const Architecture& arch, std::span<const double> params, TrainingMetadata metadata) {
    if (params.size() != arch.parameter_count()) throw DataError("parameter vector does not match the architecture");
    ModelCheckpoint ckpt{arch, {}, std::move(metadata)};
    std::size_t offset = 0;
    for (const auto& [name, shape] : tensor_layout(arch)) {
        const auto count = std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                                           [](std::size_t a, int b) { return a * std::size_t(b); });
        NamedTensor t{name, shape, std::vector<float>(count)};
        for (std::size_t i = 0; i < count; ++i) t.data[i] = float(params[offset + i]);
        offset += count;
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

std::vector<double> initial_parameters(const Architecture& arch, std::uint64_t seed) {
    const fcn::ParamLayout layout(arch);
    std::vector<double> params(layout.total, 0.0);
    Rng rng(seed);
    int in_c = arch.input_channels;
    for (int b = 0; b < Architecture::kBlocks; ++b) {
        const int out_c = arch.block_channels[std::size_t(b)];
        const double bound = std::sqrt(3.0 / double(in_c * 9));
        const std::size_t n = std::size_t(out_c) * in_c * 9;
        for (std::size_t i = 0; i < n; ++i) params[layout.conv_w[b] + i] = rng.uniform(-bound, bound);
        in_c = out_c;
    }
    return params;
}

// ---------------------------------------------------------------------------
// Inference and loss

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

RealGrid forward_logits(const ModelCheckpoint& ckpt, const BitmapImage& image) {
    const auto params = ckpt.flat_parameters();
    return fcn::forward(ckpt.architecture, params, image, nullptr);
}

ImportanceMap forward(const ModelCheckpoint& ckpt, const BitmapImage& image) {
    return probabilities(forward_logits(ckpt, image));
}

double loss(const RealGrid& logits, const ImportanceMap& target) {
    require_same_size(logits, target);
    const auto q = target.values();
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double z = logits.values[i];
        total += std::max(z, 0.0) - z * q[i] + std::log1p(std::exp(-std::abs(z)));
    }
    return total / double(q.size());
}

RealGrid loss_gradient(const RealGrid& logits, const ImportanceMap& target) {
    require_same_size(logits, target);
    const auto q = target.values();
    const double n = double(q.size());
    RealGrid grad(logits.width, logits.height);
    for (std::size_t i = 0; i < q.size(); ++i) grad.values[i] = (sigmoid(logits.values[i]) - q[i]) / n;
    return grad;
}

double target_entropy(const ImportanceMap& target) {
    double total = 0.0;
    for (double q : target.values()) {
        if (q > 0.0) total -= q * std::log(q);
        if (q < 1.0) total -= (1.0 - q) * std::log1p(-q);
    }
    return total / double(target.size());
}

double loss_and_gradient(const Architecture& arch, std::span<const double> params, const BitmapImage& image,
                         const ImportanceMap& target, std::span<double> gradient) {
    fcn::Cache cache;
    const RealGrid logits = fcn::forward(arch, params, image, &cache);
    const double value = loss(logits, target);
    fcn::backward(arch, params, cache, loss_gradient(logits, target), gradient);
    return value;
}

double sample_loss(const Architecture& arch, std::span<const double> params, const BitmapImage& image,
                   const ImportanceMap& target) {
    return loss(fcn::forward(arch, params, image, nullptr), target);
}

// ---------------------------------------------------------------------------
// Training

ModelCheckpoint train(std::span<const TrainingSample> dataset, const TrainConfig& config) {
    if (dataset.empty()) throw DataError("training set is empty");
    const int w = dataset.front().image.width();
    const int h = dataset.front().image.height();
    for (const auto& s : dataset) {
        if (s.image.width() != w || s.image.height() != h || s.target.width() != w || s.target.height() != h) {
            throw DataError("training samples must share one image and target size");
        }
    }
    if (config.epochs < 0) throw ParameterError("epochs must be nonnegative");
    if (config.batch_size < 1) throw ParameterError("batch size must be positive");
    if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
        throw ParameterError("learning rate must be finite and nonnegative");
    }

    Architecture arch;
    arch.block_channels = config.block_channels;
    arch.skip = config.skip_connections;
    std::vector<double> params = initial_parameters(arch, config.seed);
    std::vector<double> velocity(params.size(), 0.0);
    std::vector<double> grad(params.size(), 0.0);

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler(config.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainingMetadata meta{config.epochs, config.learning_rate, config.momentum, config.batch_size, config.seed, {}};
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffler.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(config.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < end; ++k) {
                const TrainingSample& s = dataset[order[k]];
                epoch_loss += loss_and_gradient(arch, params, s.image, s.target, grad);
            }
            const double scale = 1.0 / double(end - start);
            for (std::size_t i = 0; i < params.size(); ++i) {
                velocity[i] = config.momentum * velocity[i] + grad[i] * scale;
                params[i] -= config.learning_rate * velocity[i];
            }
        }
        epoch_loss /= double(dataset.size());
        if (!std::isfinite(epoch_loss)) {
            throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch) +
                                   "; lower the learning rate");
        }
        meta.loss_curve.push_back(epoch_loss);
        if (config.on_epoch) config.on_epoch(epoch, epoch_loss);
    }
    return make_checkpoint(arch, params, std::move(meta));
}

// ---------------------------------------------------------------------------
// Checkpoint files

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
    ckpt.validate();
    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
        offset += t.data.size() * 4;
    }
    const auto& m = ckpt.metadata;
    const json header = {{"format_version", 1},
                         {"architecture", architecture_to_json(ckpt.architecture)},
                         {"metadata",
                          {{"epochs", m.epochs},
                           {"learning_rate", m.learning_rate},
                           {"momentum", m.momentum},
                           {"batch_size", m.batch_size},
                           {"seed", m.seed},
                           {"loss_curve", m.loss_curve}}},
                         {"tensors", tensors},
                         {"data_bytes", offset}};
    const std::string text = header.dump();

    std::string out(kMagic, kMagicLen);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& t : ckpt.tensors) {
        for (float f : t.data) {
            const auto bits = std::bit_cast<std::uint32_t>(f);
            for (int i = 0; i < 4; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
        }
    }
    return out;
}

ModelCheckpoint parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < kMagicLen + 8 || bytes.substr(0, kMagicLen) != std::string_view(kMagic, kMagicLen)) {
        throw DataError("not a VISIMP1 checkpoint");
    }
    const std::uint64_t header_len = get_u64(bytes.substr(kMagicLen, 8));
    if (header_len > bytes.size() - kMagicLen - 8) throw DataError("checkpoint header is truncated");
    const std::string_view header_text = bytes.substr(kMagicLen + 8, header_len);
    const std::string_view blob = bytes.substr(kMagicLen + 8 + header_len);

    ModelCheckpoint ckpt;
    try {
        const json header = json::parse(header_text);
        if (header.at("format_version").get<int>() != 1) throw DataError("unsupported checkpoint version");
        ckpt.architecture = architecture_from_json(header.at("architecture"));
        const auto& m = header.at("metadata");
        ckpt.metadata.epochs = m.at("epochs").get<int>();
        ckpt.metadata.learning_rate = m.at("learning_rate").get<double>();
        ckpt.metadata.momentum = m.at("momentum").get<double>();
        ckpt.metadata.batch_size = m.at("batch_size").get<int>();
        ckpt.metadata.seed = m.at("seed").get<std::uint64_t>();
        ckpt.metadata.loss_curve = m.at("loss_curve").get<std::vector<double>>();
        for (const auto& tj : header.at("tensors")) {
            NamedTensor t;
            t.name = tj.at("name").get<std::string>();
            t.shape = tj.at("shape").get<std::vector<int>>();
            const auto offset = tj.at("offset").get<std::size_t>();
            const auto count = tj.at("count").get<std::size_t>();
            if (offset > blob.size() || count > (blob.size() - offset) / 4) {
                throw DataError("checkpoint tensor '" + t.name + "' exceeds the data section");
            }
            t.data.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                std::uint32_t bits = 0;
                for (int k = 0; k < 4; ++k) {
                    bits |= std::uint32_t(std::uint8_t(blob[offset + 4 * i + std::size_t(k)])) << (8 * k);
                }
                t.data[i] = std::bit_cast<float>(bits);
            }
            ckpt.tensors.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint header: ") + e.what());
    }
    ckpt.validate();
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
    write_file(path, serialize_checkpoint(ckpt));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(read_file(path));
}

// ---------------------------------------------------------------------------
// External maps and predictors

ImportanceMap load_external_map(const std::filesystem::path& path, std::optional<std::pair<int, int>> expected,
                                bool resample) {
    ImportanceMap map = read_map(path);
    if (!expected) return map;
    const auto [w, h] = *expected;
    if (map.width() == w && map.height() == h) return map;
    if (!resample) {
        throw DataError(path.string() + " is " + std::to_string(map.width()) + "x" + std::to_string(map.height()) +
                        " but " + std::to_string(w) + "x" + std::to_string(h) + " was expected");
    }
    return resample_bilinear(map, w, h);
}

std::string image_digest(const BitmapImage& image) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto mix = [&](std::uint8_t byte) {
        hash ^= byte;
        hash *= 0x100000001b3ULL;
    };
    for (int v : {image.width(), image.height(), image.channels()}) {
        for (int i = 0; i < 4; ++i) mix(std::uint8_t((unsigned(v) >> (8 * i)) & 0xff));
    }
    for (std::uint8_t b : image.data()) mix(b);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

FcnPredictor::FcnPredictor(ModelCheckpoint ckpt) : ckpt_(std::move(ckpt)), params_(ckpt_.flat_parameters()) {}

ImportanceMap FcnPredictor::predict(const BitmapImage& image) const {
    return probabilities(fcn::forward(ckpt_.architecture, params_, image, nullptr));
}

std::string FcnPredictor::describe() const {
    return std::string("fcn(") + (ckpt_.architecture.skip ? "skip" : "noskip") + ", " +
           std::to_string(params_.size()) + " params)";
}

ExternalMapPredictor::ExternalMapPredictor(std::optional<std::filesystem::path> directory, bool resample)
    : directory_(std::move(directory)), resample_(resample) {}

void ExternalMapPredictor::add(const BitmapImage& image, ImportanceMap map) {
    if (!resample_ && (map.width() != image.width() || map.height() != image.height())) {
        throw DataError("external map size does not match its image");
    }
    const std::lock_guard lock(mutex_);
    maps_.insert_or_assign(image_digest(image), std::move(map));
}

ImportanceMap ExternalMapPredictor::predict(const BitmapImage& image) const {
    const std::string key = image_digest(image);
    {
        const std::lock_guard lock(mutex_);
        if (auto it = maps_.find(key); it != maps_.end()) {
            const ImportanceMap& m = it->second;
            if (m.width() == image.width() && m.height() == image.height()) return m;
            return resample_bilinear(m, image.width(), image.height());
        }
    }
    if (directory_) {
        const auto path = *directory_ / (key + ".png");
        if (std::filesystem::exists(path)) {
            return load_external_map(path, std::pair{image.width(), image.height()}, resample_);
        }
    }
    throw DataError("no external map registered for image " + key);
}

std::string ExternalMapPredictor::describe() const {
    return "external-maps";
}

}  // namespace visimp
