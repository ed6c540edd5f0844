#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "visimp/raster.hpp"

namespace visimp {

/// One entry of the serialized architecture descriptor.
struct LayerSpec {
    std::string op;  // "conv", "tanh", "downsample", "upsample", "skip_merge"
    int kernel = 0;
    int stride = 0;
    int channels = 0;
    std::string name;

    bool operator==(const LayerSpec&) const = default;
};

/// Toy fully convolutional importance network: four blocks of
/// 3x3 conv + tanh + 2x average pooling, a 1x1 head, and bilinear upsampling
/// back to the input. With `skip`, a second 1x1 head on the third block's
/// output is merged at 1/8 resolution before the final upsample.
struct Architecture {
    static constexpr int kBlocks = 4;

    int input_channels = 3;
    std::array<int, kBlocks> block_channels{8, 8, 16, 16};
    bool skip = true;

    static constexpr int downsample_factor() { return 1 << kBlocks; }
    std::vector<LayerSpec> layers() const;
    std::size_t parameter_count() const;

    bool operator==(const Architecture&) const = default;
};

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;

    bool operator==(const NamedTensor&) const = default;
};

struct TrainingMetadata {
    int epochs = 0;
    double learning_rate = 0.0;
    double momentum = 0.0;
    int batch_size = 0;
    std::uint64_t seed = 0;
    std::vector<double> loss_curve;

    bool operator==(const TrainingMetadata&) const = default;
};

struct ModelCheckpoint {
    Architecture architecture;
    std::vector<NamedTensor> tensors;
    TrainingMetadata metadata;

    /// Throws DataError if tensor names or shapes disagree with the architecture.
    void validate() const;

    /// Tensors concatenated in architecture order, widened to double.
    std::vector<double> flat_parameters() const;

    bool operator==(const ModelCheckpoint&) const = default;
};

/// Tensor names and shapes in parameter order.
std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const Architecture& arch);

/// Builds a checkpoint from a flat parameter vector (narrowed to float).
ModelCheckpoint make_checkpoint(const Architecture& arch, std::span<const double> params,
                                TrainingMetadata metadata = {});

/// Conv weights uniform in +-sqrt(3 / fan_in); biases and heads zero.
std::vector<double> initial_parameters(const Architecture& arch, std::uint64_t seed);

/// Logits at input resolution. Inputs whose sides are not multiples of the
/// downsampling factor are edge-padded and the result cropped.
RealGrid forward_logits(const ModelCheckpoint& ckpt, const BitmapImage& image);

/// Per-pixel sigmoid of forward_logits; every value lies in (0,1).
ImportanceMap forward(const ModelCheckpoint& ckpt, const BitmapImage& image);

double sigmoid(double z);

/// Mean sigmoid cross entropy over real-valued targets, evaluated in logit form.
double loss(const RealGrid& logits, const ImportanceMap& target);

/// dL/dlogit_i = (sigmoid(logit_i) - Q_i) / N.
RealGrid loss_gradient(const RealGrid& logits, const ImportanceMap& target);

/// -(1/N) sum [Q ln Q + (1-Q) ln(1-Q)], the floor of `loss` for a fixed target.
double target_entropy(const ImportanceMap& target);

struct TrainingSample {
    BitmapImage image;
    ImportanceMap target;
};

struct TrainConfig {
    int epochs = 40;
    double learning_rate = 0.2;
    double momentum = 0.9;
    int batch_size = 8;
    std::uint64_t seed = 1;
    bool skip_connections = true;
    std::array<int, Architecture::kBlocks> block_channels{8, 8, 16, 16};
    /// Called after every epoch with (epoch index, mean training loss).
    std::function<void(int, double)> on_epoch;
};

/// Mini-batch SGD with momentum on the cross-entropy loss. Deterministic for a
/// given seed. Throws TrainingDiverged on a non-finite loss.
ModelCheckpoint train(std::span<const TrainingSample> dataset, const TrainConfig& config);

/// Loss for one sample at a flat parameter vector; dL/dparams is added to
/// `gradient`. Exposed for gradient checking.
double loss_and_gradient(const Architecture& arch, std::span<const double> params, const BitmapImage& image,
                         const ImportanceMap& target, std::span<double> gradient);
double sample_loss(const Architecture& arch, std::span<const double> params, const BitmapImage& image,
                   const ImportanceMap& target);

/// Binary checkpoint: the magic "VISIMP1", a little-endian u64 header length,
/// a JSON header (architecture, metadata, tensor name/shape/offset), then
/// little-endian float32 tensor data.
std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Reads a map file produced elsewhere. With `expected` set, a size mismatch
/// is resolved by bilinear resampling when `resample` is true and rejected
/// otherwise.
ImportanceMap load_external_map(const std::filesystem::path& path,
                                std::optional<std::pair<int, int>> expected = std::nullopt,
                                bool resample = false);

/// Content digest of an image (FNV-1a 64 over dims and samples), hex encoded.
std::string image_digest(const BitmapImage& image);

/// Anything that turns a bitmap into an importance map of the same size.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual ImportanceMap predict(const BitmapImage& image) const = 0;
    virtual std::string describe() const = 0;
};

class FcnPredictor final : public Predictor {
public:
    explicit FcnPredictor(ModelCheckpoint ckpt);
    ImportanceMap predict(const BitmapImage& image) const override;
    std::string describe() const override;
    const ModelCheckpoint& checkpoint() const { return ckpt_; }

private:
    ModelCheckpoint ckpt_;
    std::vector<double> params_;
};

/// Serves precomputed maps keyed by image_digest: registered in memory, or
/// found as <directory>/<digest>.png.
class ExternalMapPredictor final : public Predictor {
public:
    explicit ExternalMapPredictor(std::optional<std::filesystem::path> directory = std::nullopt,
                                  bool resample = false);

    void add(const BitmapImage& image, ImportanceMap map);
    ImportanceMap predict(const BitmapImage& image) const override;
    std::string describe() const override;

private:
    std::optional<std::filesystem::path> directory_;
    bool resample_;
    mutable std::mutex mutex_;
    std::map<std::string, ImportanceMap> maps_;
};

}  // namespace visimp
