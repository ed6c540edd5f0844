#pragma once

// Forward and backward passes of the toy FCN over a flat double parameter
// vector. Private to the library.

#include <span>
#include <vector>

#include "visimp/predictor.hpp"

namespace visimp::fcn {

struct Tensor3 {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(std::size_t(c_) * h_ * w_, 0.0) {}

    double* plane(int k) { return v.data() + std::size_t(k) * h * w; }
    const double* plane(int k) const { return v.data() + std::size_t(k) * h * w; }
};

/// Offsets of each tensor inside the flat parameter vector.
struct ParamLayout {
    std::size_t conv_w[Architecture::kBlocks];
    std::size_t conv_b[Architecture::kBlocks];
    std::size_t head_w, head_b;
    std::size_t skip_w, skip_b;
    std::size_t total;

    explicit ParamLayout(const Architecture& arch);
};

/// Activations kept for the backward pass.
struct Cache {
    int height = 0;  // unpadded input size
    int width = 0;
    Tensor3 input;                                   // padded, normalized
    Tensor3 activated[Architecture::kBlocks];        // tanh outputs at block resolution
    Tensor3 pooled[Architecture::kBlocks];           // block outputs after pooling
};

/// Padded, normalized network input: samples / 255 - 0.5, edge replicated.
Tensor3 make_input(const BitmapImage& image, int input_channels);

/// Logits cropped to the image size. Fills `cache` when given.
RealGrid forward(const Architecture& arch, std::span<const double> params, const BitmapImage& image,
                 Cache* cache);

/// Accumulates dL/dparams into `grad` given dL/dlogits at image resolution.
void backward(const Architecture& arch, std::span<const double> params, const Cache& cache,
              const RealGrid& dlogits, std::span<double> grad);

}  // namespace visimp::fcn
