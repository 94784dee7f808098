// SPDX-License-Identifier: Apache-2.0
//
// Convolutions lowered to GEMM through im2col. Per-sample work is
// independent; weight and bias gradients are formed per sample and summed in
// sample order so the result does not depend on the thread count.

#include <algorithm>
#include <memory>

#include <Eigen/Core>

#include "collagan/ops.hpp"
#include "collagan/parallel.hpp"

namespace collagan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Geometry {
    std::int64_t channels, height, width;  // image side
    int kernel, stride, padding;
    std::int64_t out_h, out_w;             // column side
    std::int64_t rows() const { return channels * kernel * kernel; }
    std::int64_t cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose source column ox*stride - padding + kx lies
// inside the image.
void valid_range(const Geometry& g, int kx, std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t off = kx - g.padding;
    lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    const std::int64_t last = g.width - 1 - off;  // largest ox*stride allowed
    hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
    if (hi < lo) hi = lo;
}

void im2col(const double* img, const Geometry& g, double* cols) {
    const std::int64_t plane = g.cols();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                std::int64_t lo, hi;
                valid_range(g, kx, lo, hi);
                const std::int64_t off = kx - g.padding;
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.padding + ky;
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = img + (c * g.height + iy) * g.width + off;
                    std::fill(dst, dst + lo, 0.0);
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
                    }
                    std::fill(dst + hi, dst + g.out_w, 0.0);
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates columns back into the image.
void col2im(const double* cols, const Geometry& g, double* img) {
    const std::int64_t plane = g.cols();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
                const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                std::int64_t lo, hi;
                valid_range(g, kx, lo, hi);
                const std::int64_t off = kx - g.padding;
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.padding + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    const double* src = row + oy * g.out_w;
                    double* dst = img + (c * g.height + iy) * g.width + off;
                    for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
        }
    }
}

// 1x1, stride 1, no padding: the image already is its column matrix.
bool is_pointwise(const Geometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

std::unique_ptr<double[]> scratch(std::int64_t n) {
    return std::make_unique_for_overwrite<double[]>(static_cast<std::size_t>(n));
}

void require_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4) {
        throw ShapeError(std::string(what) + " must be rank 4, got " + shape_to_string(t.shape()));
    }
}

void check_bias(const Tensor& bias, std::int64_t channels, const char* op) {
    if (bias.rank() != 1 || bias.dim(0) != channels) {
        throw ShapeError(std::string(op) + ": bias axis 0 must equal output channels " + std::to_string(channels) +
                         ", got " + shape_to_string(bias.shape()));
    }
}

// Sum per-sample partial gradients in sample order into dst.
void reduce_partials(const std::vector<std::vector<double>>& partials, std::vector<double>& dst) {
    for (const auto& p : partials) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += p[i];
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank4(input, "conv2d input");
    require_rank4(weight, "conv2d weight");
    const std::int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin) {
        throw ShapeError("conv2d: axis 1 (channels) mismatch: input has " + std::to_string(cin) +
                         ", weight expects " + std::to_string(weight.dim(1)));
    }
    if (kh != kw || (kh != 1 && kh != 3 && kh != 4)) {
        throw ShapeError("conv2d: kernel axes 2,3 must be square 1, 3 or 4, got " + shape_to_string(weight.shape()));
    }
    if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
    if (padding < 0) throw ShapeError("conv2d: negative padding");
    check_bias(bias, cout, "conv2d");
    const std::int64_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t ow = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh) throw ShapeError("conv2d: axis 2 (height) smaller than kernel");
    if (w + 2 * padding < kw) throw ShapeError("conv2d: axis 3 (width) smaller than kernel");

    const Geometry g{cin, h, w, static_cast<int>(kh), stride, padding, oh, ow};
    const std::int64_t in_plane = cin * h * w;
    const std::int64_t out_plane = cout * oh * ow;
    std::vector<double> out(static_cast<std::size_t>(batch * out_plane));
    const double* x = input.data().data();
    const double* wt = weight.data().data();
    const double* bs = bias.data().data();

    parallel_for(batch, [&](std::int64_t b) {
        const double* src = x + b * in_plane;
        std::unique_ptr<double[]> cols;
        if (!is_pointwise(g)) {
            cols = scratch(g.rows() * g.cols());
            im2col(src, g, cols.get());
            src = cols.get();
        }
        MapMat y(out.data() + b * out_plane, cout, g.cols());
        y.noalias() = ConstMapMat(wt, cout, g.rows()) * ConstMapMat(src, g.rows(), g.cols());
        for (std::int64_t c = 0; c < cout; ++c) y.row(c).array() += bs[c];
    });

    return Tensor::make_result(
        {batch, cout, oh, ow}, std::move(out), {input, weight, bias},
        [g, batch, cout, in_plane, out_plane](detail::Node& self) {
            auto& in = *self.inputs[0];
            auto& wn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            const double* gy = self.grad.data();
            std::vector<std::vector<double>> dw_parts(wn.requires_grad ? batch : 0);
            parallel_for(batch, [&](std::int64_t b) {
                ConstMapMat dy(gy + b * out_plane, cout, g.cols());
                const bool pointwise = is_pointwise(g);
                auto cols = pointwise ? nullptr : scratch(g.rows() * g.cols());
                if (wn.requires_grad) {
                    const double* src = in.data.data() + b * in_plane;
                    if (!pointwise) {
                        im2col(src, g, cols.get());
                        src = cols.get();
                    }
                    auto& part = dw_parts[static_cast<std::size_t>(b)];
                    part.resize(static_cast<std::size_t>(cout * g.rows()));
                    MapMat(part.data(), cout, g.rows()).noalias() =
                        dy * ConstMapMat(src, g.rows(), g.cols()).transpose();
                }
                if (in.requires_grad) {
                    const ConstMapMat wmat(wn.data.data(), cout, g.rows());
                    if (pointwise) {
                        MapMat(in.grad.data() + b * in_plane, g.rows(), g.cols()).noalias() += wmat.transpose() * dy;
                    } else {
                        MapMat(cols.get(), g.rows(), g.cols()).noalias() = wmat.transpose() * dy;
                        col2im(cols.get(), g, in.grad.data() + b * in_plane);
                    }
                }
            });
            if (wn.requires_grad) reduce_partials(dw_parts, wn.grad);
            if (bn.requires_grad) {
                const std::int64_t plane = g.cols();
                for (std::int64_t b = 0; b < batch; ++b) {
                    for (std::int64_t c = 0; c < cout; ++c) {
                        const double* row = gy + b * out_plane + c * plane;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < plane; ++i) s += row[i];
                        bn.grad[static_cast<std::size_t>(c)] += s;
                    }
                }
            }
        });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
    require_rank4(input, "conv_transpose2d input");
    require_rank4(weight, "conv_transpose2d weight");
    if (stride != 2) throw ShapeError("conv_transpose2d: only stride 2 is supported");
    const std::int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (weight.dim(0) != cin) {
        throw ShapeError("conv_transpose2d: axis 1 (channels) mismatch: input has " + std::to_string(cin) +
                         ", weight expects " + std::to_string(weight.dim(0)));
    }
    if (weight.dim(2) != 4 || weight.dim(3) != 4) {
        throw ShapeError("conv_transpose2d: kernel axes 2,3 must be 4x4, got " + shape_to_string(weight.shape()));
    }
    const std::int64_t cout = weight.dim(1);
    check_bias(bias, cout, "conv_transpose2d");
    const std::int64_t oh = 2 * h, ow = 2 * w;

    // Column geometry of the strided conv that maps the output back to the input.
    const Geometry g{cout, oh, ow, 4, 2, 1, h, w};
    const std::int64_t in_plane = cin * h * w;
    const std::int64_t out_plane = cout * oh * ow;
    const std::int64_t k = g.rows();
    std::vector<double> out(static_cast<std::size_t>(batch * out_plane), 0.0);
    const double* x = input.data().data();
    const double* wt = weight.data().data();
    const double* bs = bias.data().data();

    parallel_for(batch, [&](std::int64_t b) {
        auto cols = scratch(k * g.cols());
        MapMat(cols.get(), k, g.cols()).noalias() =
            ConstMapMat(wt, cin, k).transpose() * ConstMapMat(x + b * in_plane, cin, g.cols());
        double* y = out.data() + b * out_plane;
        col2im(cols.get(), g, y);
        for (std::int64_t c = 0; c < cout; ++c) {
            for (std::int64_t i = 0; i < oh * ow; ++i) y[c * oh * ow + i] += bs[c];
        }
    });

    return Tensor::make_result(
        {batch, cout, oh, ow}, std::move(out), {input, weight, bias},
        [g, batch, cin, cout, k, in_plane, out_plane](detail::Node& self) {
            auto& in = *self.inputs[0];
            auto& wn = *self.inputs[1];
            auto& bn = *self.inputs[2];
            const double* gy = self.grad.data();
            std::vector<std::vector<double>> dw_parts(wn.requires_grad ? batch : 0);
            parallel_for(batch, [&](std::int64_t b) {
                auto cols = scratch(k * g.cols());
                im2col(gy + b * out_plane, g, cols.get());
                ConstMapMat dcols(cols.get(), k, g.cols());
                if (in.requires_grad) {
                    MapMat dx(in.grad.data() + b * in_plane, cin, g.cols());
                    dx.noalias() += ConstMapMat(wn.data.data(), cin, k) * dcols;
                }
                if (wn.requires_grad) {
                    auto& part = dw_parts[static_cast<std::size_t>(b)];
                    part.resize(static_cast<std::size_t>(cin * k));
                    MapMat(part.data(), cin, k).noalias() =
                        ConstMapMat(in.data.data() + b * in_plane, cin, g.cols()) * dcols.transpose();
                }
            });
            if (wn.requires_grad) reduce_partials(dw_parts, wn.grad);
            if (bn.requires_grad) {
                const std::int64_t plane = g.height * g.width;
                for (std::int64_t b = 0; b < batch; ++b) {
                    for (std::int64_t c = 0; c < cout; ++c) {
                        const double* row = gy + b * out_plane + c * plane;
                        double s = 0.0;
                        for (std::int64_t i = 0; i < plane; ++i) s += row[i];
                        bn.grad[static_cast<std::size_t>(c)] += s;
                    }
                }
            }
        });
}

}  // namespace collagan
