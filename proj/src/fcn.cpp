#include "fcn.hpp"

#include <algorithm>
#include <cmath>

#include "visimp/error.hpp"

namespace visimp::fcn {

namespace {

struct AxisTap {
    int i0, i1;
    double w0, w1;
};

// Bilinear taps from `src` to `dst` samples with pixel-center alignment.
std::vector<AxisTap> upsample_taps(int src, int dst) {
    std::vector<AxisTap> taps(static_cast<std::size_t>(dst));
    const double scale = double(src) / double(dst);
    for (int i = 0; i < dst; ++i) {
        const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, double(src - 1));
        const int i0 = int(std::floor(pos));
        const int i1 = std::min(i0 + 1, src - 1);
        const double t = pos - i0;
        taps[std::size_t(i)] = {i0, i1, 1.0 - t, t};
    }
    return taps;
}

// Single-plane bilinear upsample.
void upsample(const double* in, int h, int w, double* out, int oh, int ow) {
    const auto ty = upsample_taps(h, oh);
    const auto tx = upsample_taps(w, ow);
    for (int y = 0; y < oh; ++y) {
        const AxisTap& a = ty[std::size_t(y)];
        const double* r0 = in + std::size_t(a.i0) * w;
        const double* r1 = in + std::size_t(a.i1) * w;
        for (int x = 0; x < ow; ++x) {
            const AxisTap& b = tx[std::size_t(x)];
            out[std::size_t(y) * ow + x] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                                           a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        }
    }
}

// Adjoint of `upsample`: accumulates into `din`.
void upsample_backward(const double* dout, int oh, int ow, double* din, int h, int w) {
    const auto ty = upsample_taps(h, oh);
    const auto tx = upsample_taps(w, ow);
    for (int y = 0; y < oh; ++y) {
        const AxisTap& a = ty[std::size_t(y)];
        double* r0 = din + std::size_t(a.i0) * w;
        double* r1 = din + std::size_t(a.i1) * w;
        for (int x = 0; x < ow; ++x) {
            const AxisTap& b = tx[std::size_t(x)];
            const double g = dout[std::size_t(y) * ow + x];
            r0[b.i0] += a.w0 * b.w0 * g;
            r0[b.i1] += a.w0 * b.w1 * g;
            r1[b.i0] += a.w1 * b.w0 * g;
            r1[b.i1] += a.w1 * b.w1 * g;
        }
    }
}

// 3x3 convolution, stride 1, zero padding.
void conv3x3(const Tensor3& in, const double* weight, const double* bias, Tensor3& out) {
    const int h = in.h;
    const int w = in.w;
    for (int o = 0; o < out.c; ++o) {
        double* dst = out.plane(o);
        std::fill(dst, dst + std::size_t(h) * w, bias[o]);
        for (int i = 0; i < in.c; ++i) {
            const double* src = in.plane(i);
            const double* k = weight + (std::size_t(o) * in.c + i) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    const double kv = k[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        double* drow = dst + std::size_t(y) * w;
                        const double* srow = src + std::size_t(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) drow[x] += kv * srow[x];
                    }
                }
            }
        }
    }
}

// Gradients of conv3x3 given dout. `din` may be null for the first layer.
void conv3x3_backward(const Tensor3& in, const double* weight, const Tensor3& dout, double* dweight,
                      double* dbias, Tensor3* din) {
    const int h = in.h;
    const int w = in.w;
    for (int o = 0; o < dout.c; ++o) {
        const double* g = dout.plane(o);
        double bsum = 0.0;
        for (std::size_t p = 0; p < std::size_t(h) * w; ++p) bsum += g[p];
        dbias[o] += bsum;
        for (int i = 0; i < in.c; ++i) {
            const double* src = in.plane(i);
            const double* k = weight + (std::size_t(o) * in.c + i) * 9;
            double* dk = dweight + (std::size_t(o) * in.c + i) * 9;
            double* dsrc = din ? din->plane(i) : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy);
                const int y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    const double kv = k[ky * 3 + kx];
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = g + std::size_t(y) * w;
                        const double* srow = src + std::size_t(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
                        if (dsrc) {
                            double* drow = dsrc + std::size_t(y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) drow[x] += kv * grow[x];
                        }
                    }
                    dk[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

Tensor3 avgpool2(const Tensor3& in) {
    Tensor3 out(in.c, in.h / 2, in.w / 2);
    for (int c = 0; c < in.c; ++c) {
        const double* src = in.plane(c);
        double* dst = out.plane(c);
        for (int y = 0; y < out.h; ++y) {
            const double* r0 = src + std::size_t(2 * y) * in.w;
            const double* r1 = r0 + in.w;
            for (int x = 0; x < out.w; ++x) {
                dst[std::size_t(y) * out.w + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    return out;
}

Tensor3 avgpool2_backward(const Tensor3& dout, int h, int w) {
    Tensor3 din(dout.c, h, w);
    for (int c = 0; c < dout.c; ++c) {
        const double* g = dout.plane(c);
        double* dst = din.plane(c);
        for (int y = 0; y < dout.h; ++y) {
            double* r0 = dst + std::size_t(2 * y) * w;
            double* r1 = r0 + w;
            for (int x = 0; x < dout.w; ++x) {
                const double v = 0.25 * g[std::size_t(y) * dout.w + x];
                r0[2 * x] = v;
                r0[2 * x + 1] = v;
                r1[2 * x] = v;
                r1[2 * x + 1] = v;
            }
        }
    }
    return din;
}

// 1x1 convolution to a single output plane.
std::vector<double> conv1x1(const Tensor3& in, const double* weight, double bias) {
    std::vector<double> out(std::size_t(in.h) * in.w, bias);
    for (int c = 0; c < in.c; ++c) {
        const double* src = in.plane(c);
        const double k = weight[c];
        for (std::size_t p = 0; p < out.size(); ++p) out[p] += k * src[p];
    }
    return out;
}

void conv1x1_backward(const Tensor3& in, const double* weight, const std::vector<double>& dout,
                      double* dweight, double* dbias, Tensor3& din) {
    double bsum = 0.0;
    for (double g : dout) bsum += g;
    *dbias += bsum;
    for (int c = 0; c < in.c; ++c) {
        const double* src = in.plane(c);
        double* dsrc = din.plane(c);
        const double k = weight[c];
        double acc = 0.0;
        for (std::size_t p = 0; p < dout.size(); ++p) {
            acc += dout[p] * src[p];
            dsrc[p] += k * dout[p];
        }
        dweight[c] += acc;
    }
}

int padded(int n) {
    const int f = Architecture::downsample_factor();
    return (n + f - 1) / f * f;
}

}  // namespace

ParamLayout::ParamLayout(const Architecture& arch) {
    std::size_t offset = 0;
    int in_c = arch.input_channels;
    for (int b = 0; b < Architecture::kBlocks; ++b) {
        const int out_c = arch.block_channels[std::size_t(b)];
        conv_w[b] = offset;
        offset += std::size_t(out_c) * in_c * 9;
        conv_b[b] = offset;
        offset += std::size_t(out_c);
        in_c = out_c;
    }
    head_w = offset;
    offset += std::size_t(arch.block_channels[Architecture::kBlocks - 1]);
    head_b = offset;
    offset += 1;
    skip_w = offset;
    skip_b = offset;
    if (arch.skip) {
        offset += std::size_t(arch.block_channels[Architecture::kBlocks - 2]);
        skip_b = offset;
        offset += 1;
    }
    total = offset;
}

Tensor3 make_input(const BitmapImage& image, int input_channels) {
    if (image.channels() < input_channels) throw DataError("image has fewer channels than the network input");
    const int h = padded(image.height());
    const int w = padded(image.width());
    Tensor3 t(input_channels, h, w);
    for (int c = 0; c < input_channels; ++c) {
        double* dst = t.plane(c);
        for (int y = 0; y < h; ++y) {
            const int sy = std::min(y, image.height() - 1);
            for (int x = 0; x < w; ++x) {
                const int sx = std::min(x, image.width() - 1);
                dst[std::size_t(y) * w + x] = image.at(sx, sy, c) / 255.0 - 0.5;
            }
        }
    }
    return t;
}

RealGrid forward(const Architecture& arch, std::span<const double> params, const BitmapImage& image,
                 Cache* cache) {
    const ParamLayout layout(arch);
    if (params.size() != layout.total) throw DataError("parameter vector does not match the architecture");

    Cache local;
    Cache& c = cache ? *cache : local;
    c.height = image.height();
    c.width = image.width();
    c.input = make_input(image, arch.input_channels);

    const Tensor3* x = &c.input;
    for (int b = 0; b < Architecture::kBlocks; ++b) {
        Tensor3 z(arch.block_channels[std::size_t(b)], x->h, x->w);
        conv3x3(*x, params.data() + layout.conv_w[b], params.data() + layout.conv_b[b], z);
        for (double& v : z.v) v = std::tanh(v);
        c.activated[b] = std::move(z);
        c.pooled[b] = avgpool2(c.activated[b]);
        x = &c.pooled[b];
    }

    const Tensor3& top = c.pooled[Architecture::kBlocks - 1];
    std::vector<double> head = conv1x1(top, params.data() + layout.head_w, params[layout.head_b]);
    const int ph = c.input.h;
    const int pw = c.input.w;
    std::vector<double> full(std::size_t(ph) * pw);
    if (arch.skip) {
        const Tensor3& mid = c.pooled[Architecture::kBlocks - 2];
        std::vector<double> merged = conv1x1(mid, params.data() + layout.skip_w, params[layout.skip_b]);
        std::vector<double> up(merged.size());
        upsample(head.data(), top.h, top.w, up.data(), mid.h, mid.w);
        for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += up[i];
        upsample(merged.data(), mid.h, mid.w, full.data(), ph, pw);
    } else {
        upsample(head.data(), top.h, top.w, full.data(), ph, pw);
    }

    RealGrid logits(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y) {
        for (int xx = 0; xx < image.width(); ++xx) logits.at(xx, y) = full[std::size_t(y) * pw + xx];
    }
    return logits;
}

void backward(const Architecture& arch, std::span<const double> params, const Cache& c, const RealGrid& dlogits,
              std::span<double> grad) {
    const ParamLayout layout(arch);
    const int ph = c.input.h;
    const int pw = c.input.w;
    std::vector<double> dfull(std::size_t(ph) * pw, 0.0);
    for (int y = 0; y < c.height; ++y) {
        for (int x = 0; x < c.width; ++x) dfull[std::size_t(y) * pw + x] = dlogits.at(x, y);
    }

    const Tensor3& top = c.pooled[Architecture::kBlocks - 1];
    const Tensor3& mid = c.pooled[Architecture::kBlocks - 2];
    std::vector<double> dhead(std::size_t(top.h) * top.w, 0.0);
    Tensor3 dmid(mid.c, mid.h, mid.w);
    if (arch.skip) {
        std::vector<double> dmerged(std::size_t(mid.h) * mid.w, 0.0);
        upsample_backward(dfull.data(), ph, pw, dmerged.data(), mid.h, mid.w);
        conv1x1_backward(mid, params.data() + layout.skip_w, dmerged, grad.data() + layout.skip_w,
                         grad.data() + layout.skip_b, dmid);
        upsample_backward(dmerged.data(), mid.h, mid.w, dhead.data(), top.h, top.w);
    } else {
        upsample_backward(dfull.data(), ph, pw, dhead.data(), top.h, top.w);
    }

    Tensor3 dx(top.c, top.h, top.w);
    conv1x1_backward(top, params.data() + layout.head_w, dhead, grad.data() + layout.head_w,
                     grad.data() + layout.head_b, dx);

    for (int b = Architecture::kBlocks - 1; b >= 0; --b) {
        if (b == Architecture::kBlocks - 2) {
            for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dmid.v[i];
        }
        const Tensor3& act = c.activated[b];
        Tensor3 dz = avgpool2_backward(dx, act.h, act.w);
        for (std::size_t i = 0; i < dz.v.size(); ++i) dz.v[i] *= 1.0 - act.v[i] * act.v[i];
        const Tensor3& in = b == 0 ? c.input : c.pooled[b - 1];
        Tensor3 din;
        if (b > 0) din = Tensor3(in.c, in.h, in.w);
        conv3x3_backward(in, params.data() + layout.conv_w[b], dz, grad.data() + layout.conv_w[b],
                         grad.data() + layout.conv_b[b], b > 0 ? &din : nullptr);
        dx = std::move(din);
    }
}

}  // namespace visimp::fcn
