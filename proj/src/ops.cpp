// SPDX-License-Identifier: Apache-2.0

#include "collagan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace collagan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != sb.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_to_string(sa) + " vs " + shape_to_string(sb));
    }
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i] != sb[i]) {
            throw ShapeError(std::string(op) + ": axis " + std::to_string(i) + " mismatch " + shape_to_string(sa) +
                             " vs " + shape_to_string(sb));
        }
    }
}

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + " must be rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
    }
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
    return axis;
}

// Unary elementwise op: forward value and local derivative from (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a}, [deriv](detail::Node& self) {
        auto& x = *self.inputs[0];
        for (std::size_t i = 0; i < self.data.size(); ++i) x.grad[i] += self.grad[i] * deriv(x.data[i], self.data[i]);
    });
}

}  // namespace

// ---- normalisation and activations ----------------------------------------

Tensor instance_norm(const Tensor& input, double eps) {
    require_rank(input, 4, "instance_norm input");
    const std::int64_t planes = input.dim(0) * input.dim(1);
    const std::int64_t n = input.dim(2) * input.dim(3);
    if (n < 2) throw ShapeError("instance_norm: axes 2,3 need at least 2 elements per plane");
    auto x = input.data();
    std::vector<double> out(x.size());
    std::vector<double> inv_std(static_cast<std::size_t>(planes));
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* xp = x.data() + p * n;
        double m = 0.0;
        for (std::int64_t i = 0; i < n; ++i) m += xp[i];
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::int64_t i = 0; i < n; ++i) v += (xp[i] - m) * (xp[i] - m);
        v /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(v + eps);
        inv_std[static_cast<std::size_t>(p)] = is;
        double* yp = out.data() + p * n;
        for (std::int64_t i = 0; i < n; ++i) yp[i] = (xp[i] - m) * is;
    }
    return Tensor::make_result(input.shape(), std::move(out), {input},
                               [inv_std = std::move(inv_std), planes, n](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   const double inv_n = 1.0 / static_cast<double>(n);
                                   for (std::int64_t p = 0; p < planes; ++p) {
                                       const double* y = self.data.data() + p * n;
                                       const double* dy = self.grad.data() + p * n;
                                       double mdy = 0.0, mdyy = 0.0;
                                       for (std::int64_t i = 0; i < n; ++i) {
                                           mdy += dy[i];
                                           mdyy += dy[i] * y[i];
                                       }
                                       mdy *= inv_n;
                                       mdyy *= inv_n;
                                       const double is = inv_std[static_cast<std::size_t>(p)];
                                       double* dx = x.grad.data() + p * n;
                                       for (std::int64_t i = 0; i < n; ++i) dx[i] += is * (dy[i] - mdy - y[i] * mdyy);
                                   }
                               });
}

Tensor leaky_relu(const Tensor& input, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
    return unary(
        input, [slope](double v) { return v >= 0.0 ? v : slope * v; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& input) {
    return unary(
        input,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor dropout(const Tensor& input, double rate, bool training, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0,1)");
    if (!training || rate == 0.0) return input;
    const double keep_scale = 1.0 / (1.0 - rate);
    auto x = input.data();
    std::vector<double> mask(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = uniform01(rng) >= rate ? keep_scale : 0.0;
        out[i] = x[i] * mask[i];
    }
    return Tensor::make_result(input.shape(), std::move(out), {input}, [mask = std::move(mask)](detail::Node& self) {
        auto& in = *self.inputs[0];
        for (std::size_t i = 0; i < mask.size(); ++i) in.grad[i] += self.grad[i] * mask[i];
    });
}

// ---- pooling and shape -----------------------------------------------------

Tensor avg_pool_global(const Tensor& input) {
    require_rank(input, 4, "avg_pool_global input");
    const std::int64_t planes = input.dim(0) * input.dim(1);
    const std::int64_t n = input.dim(2) * input.dim(3);
    if (n == 0) throw ShapeError("avg_pool_global: empty spatial axes");
    auto x = input.data();
    std::vector<double> out(static_cast<std::size_t>(planes));
    for (std::int64_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += x[static_cast<std::size_t>(p * n + i)];
        out[static_cast<std::size_t>(p)] = s / static_cast<double>(n);
    }
    return Tensor::make_result({input.dim(0), input.dim(1)}, std::move(out), {input}, [planes, n](detail::Node& self) {
        auto& in = *self.inputs[0];
        const double inv = 1.0 / static_cast<double>(n);
        for (std::int64_t p = 0; p < planes; ++p) {
            const double g = self.grad[static_cast<std::size_t>(p)] * inv;
            for (std::int64_t i = 0; i < n; ++i) in.grad[static_cast<std::size_t>(p * n + i)] += g;
        }
    });
}

Tensor avg_pool2(const Tensor& input) {
    require_rank(input, 4, "avg_pool2 input");
    const std::int64_t planes = input.dim(0) * input.dim(1);
    const std::int64_t h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0) throw ShapeError("avg_pool2: axis 2 (height) must be even");
    if (w % 2 != 0) throw ShapeError("avg_pool2: axis 3 (width) must be even");
    const std::int64_t oh = h / 2, ow = w / 2;
    auto x = input.data();
    std::vector<double> out(static_cast<std::size_t>(planes * oh * ow));
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* xp = x.data() + p * h * w;
        double* yp = out.data() + p * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t xx = 0; xx < ow; ++xx) {
                const double* r0 = xp + (2 * y) * w + 2 * xx;
                yp[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r0[w] + r0[w + 1]);
            }
        }
    }
    return Tensor::make_result({input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
                               [planes, h, w, oh, ow](detail::Node& self) {
                                   auto& in = *self.inputs[0];
                                   for (std::int64_t p = 0; p < planes; ++p) {
                                       double* dx = in.grad.data() + p * h * w;
                                       const double* dy = self.grad.data() + p * oh * ow;
                                       for (std::int64_t y = 0; y < oh; ++y) {
                                           for (std::int64_t xx = 0; xx < ow; ++xx) {
                                               const double g = 0.25 * dy[y * ow + xx];
                                               double* r0 = dx + (2 * y) * w + 2 * xx;
                                               r0[0] += g;
                                               r0[1] += g;
                                               r0[w] += g;
                                               r0[w + 1] += g;
                                           }
                                       }
                                   }
                               });
}

Tensor concat(const std::vector<Tensor>& inputs, int axis) {
    if (inputs.empty()) throw ShapeError("concat: no inputs");
    const int rank = inputs[0].rank();
    axis = normalize_axis(axis, rank, "concat");
    Shape out_shape = inputs[0].shape();
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& t : inputs) {
        if (t.rank() != rank) throw ShapeError("concat: rank mismatch " + shape_to_string(t.shape()));
        for (int d = 0; d < rank; ++d) {
            if (d != axis && t.dim(d) != inputs[0].dim(d)) {
                throw ShapeError("concat: axis " + std::to_string(d) + " mismatch " +
                                 shape_to_string(inputs[0].shape()) + " vs " + shape_to_string(t.shape()));
            }
        }
        out_shape[static_cast<std::size_t>(axis)] += t.dim(axis);
    }
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<std::size_t>(d)];
    const std::int64_t out_chunk = out_shape[static_cast<std::size_t>(axis)] * inner;

    std::vector<std::int64_t> chunks, offsets;
    std::int64_t off = 0;
    for (const auto& t : inputs) {
        chunks.push_back(t.dim(axis) * inner);
        offsets.push_back(off);
        off += chunks.back();
    }
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const double* src = inputs[k].data().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(src + o * chunks[k], src + (o + 1) * chunks[k], out.data() + o * out_chunk + offsets[k]);
        }
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), inputs,
                               [chunks, offsets, outer, out_chunk](detail::Node& self) {
                                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                       auto& in = *self.inputs[k];
                                       if (!in.requires_grad) continue;
                                       for (std::int64_t o = 0; o < outer; ++o) {
                                           const double* g = self.grad.data() + o * out_chunk + offsets[k];
                                           double* dst = in.grad.data() + o * chunks[k];
                                           for (std::int64_t i = 0; i < chunks[k]; ++i) dst[i] += g[i];
                                       }
                                   }
                               });
}

Tensor slice(const Tensor& input, int axis, std::int64_t start, std::int64_t length) {
    const int rank = input.rank();
    axis = normalize_axis(axis, rank, "slice");
    const std::int64_t extent = input.dim(axis);
    if (start < 0 || length < 0 || start + length > extent) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") outside axis " + std::to_string(axis) + " of extent " + std::to_string(extent));
    }
    Shape out_shape = input.shape();
    out_shape[static_cast<std::size_t>(axis)] = length;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= input.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= input.dim(d);
    const std::int64_t in_chunk = extent * inner, out_chunk = length * inner, off = start * inner;
    const double* src = input.data().data();
    std::vector<double> out(static_cast<std::size_t>(outer * out_chunk));
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy(src + o * in_chunk + off, src + o * in_chunk + off + out_chunk, out.data() + o * out_chunk);
    }
    return Tensor::make_result(std::move(out_shape), std::move(out), {input},
                               [outer, in_chunk, out_chunk, off](detail::Node& self) {
                                   auto& in = *self.inputs[0];
                                   for (std::int64_t o = 0; o < outer; ++o) {
                                       const double* g = self.grad.data() + o * out_chunk;
                                       double* dst = in.grad.data() + o * in_chunk + off;
                                       for (std::int64_t i = 0; i < out_chunk; ++i) dst[i] += g[i];
                                   }
                               });
}

Tensor reshape(const Tensor& input, Shape shape) {
    if (shape_numel(shape) != input.numel()) {
        throw ShapeError("reshape: " + shape_to_string(input.shape()) + " -> " + shape_to_string(shape) +
                         " changes element count");
    }
    std::vector<double> out(input.data().begin(), input.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), {input}, [](detail::Node& self) {
        auto& in = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const std::int64_t batch = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
    if (weight.dim(1) != fin) {
        throw ShapeError("linear: axis 1 (features) mismatch: input has " + std::to_string(fin) +
                         ", weight expects " + std::to_string(weight.dim(1)));
    }
    if (bias.rank() != 1 || bias.dim(0) != fout) {
        throw ShapeError("linear: bias axis 0 must equal " + std::to_string(fout));
    }
    std::vector<double> out(static_cast<std::size_t>(batch * fout));
    MapMat y(out.data(), batch, fout);
    y.noalias() = ConstMapMat(input.data().data(), batch, fin) * ConstMapMat(weight.data().data(), fout, fin).transpose();
    const double* b = bias.data().data();
    for (std::int64_t r = 0; r < batch; ++r) {
        for (std::int64_t c = 0; c < fout; ++c) y(r, c) += b[c];
    }
    return Tensor::make_result({batch, fout}, std::move(out), {input, weight, bias},
                               [batch, fin, fout](detail::Node& self) {
                                   auto& x = *self.inputs[0];
                                   auto& w = *self.inputs[1];
                                   auto& b = *self.inputs[2];
                                   ConstMapMat dy(self.grad.data(), batch, fout);
                                   if (x.requires_grad) {
                                       MapMat(x.grad.data(), batch, fin).noalias() +=
                                           dy * ConstMapMat(w.data.data(), fout, fin);
                                   }
                                   if (w.requires_grad) {
                                       RowMat dw = dy.transpose() * ConstMapMat(x.data.data(), batch, fin);
                                       MapMat(w.grad.data(), fout, fin) += dw;
                                   }
                                   if (b.requires_grad) {
                                       for (std::int64_t r = 0; r < batch; ++r) {
                                           for (std::int64_t c = 0; c < fout; ++c) b.grad[c] += dy(r, c);
                                       }
                                   }
                               });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& l = *self.inputs[0];
        auto& r = *self.inputs[1];
        if (l.requires_grad) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) l.grad[i] += self.grad[i];
        }
        if (r.requires_grad) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) r.grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& l = *self.inputs[0];
        auto& r = *self.inputs[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double lv = l.data[i], rv = r.data[i], g = self.grad[i];
            if (l.requires_grad) l.grad[i] += g * rv;
            if (r.requires_grad) r.grad[i] += g * lv;
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        auto& l = *self.inputs[0];
        auto& r = *self.inputs[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double rv = r.data[i], g = self.grad[i];
            if (l.requires_grad) l.grad[i] += g / rv;
            if (r.requires_grad) r.grad[i] -= g * self.data[i] / rv;
        }
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data()) {
        if (!(v > 0.0)) throw NumericError("log: non-positive argument");
    }
    return unary(a, [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp_min(const Tensor& a, double floor) {
    return unary(
        a, [floor](double v) { return v < floor ? floor : v; }, [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Tensor scale_channels(const Tensor& x, const Tensor& scale) {
    if (x.rank() < 2) throw ShapeError("scale_channels: input needs rank >= 2");
    require_rank(scale, 2, "scale_channels scale");
    if (scale.dim(0) != x.dim(0)) throw ShapeError("scale_channels: axis 0 (batch) mismatch");
    if (scale.dim(1) != x.dim(1)) throw ShapeError("scale_channels: axis 1 (channels) mismatch");
    const std::int64_t planes = x.dim(0) * x.dim(1);
    const std::int64_t n = planes == 0 ? 0 : x.numel() / planes;
    auto xv = x.data();
    auto sv = scale.data();
    std::vector<double> out(xv.size());
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(p * n + i)] = xv[static_cast<std::size_t>(p * n + i)] * sv[static_cast<std::size_t>(p)];
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, scale}, [planes, n](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& sn = *self.inputs[1];
        for (std::int64_t p = 0; p < planes; ++p) {
            const double s = sn.data[static_cast<std::size_t>(p)];
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const auto k = static_cast<std::size_t>(p * n + i);
                if (xn.requires_grad) xn.grad[k] += self.grad[k] * s;
                acc += self.grad[k] * xn.data[k];
            }
            if (sn.requires_grad) sn.grad[static_cast<std::size_t>(p)] += acc;
        }
    });
}

Tensor broadcast_samples(const Tensor& v, const Shape& shape) {
    require_rank(v, 1, "broadcast_samples source");
    if (shape.empty() || shape[0] != v.dim(0)) throw ShapeError("broadcast_samples: axis 0 (batch) mismatch");
    const std::int64_t batch = v.dim(0);
    const std::int64_t n = batch == 0 ? 0 : shape_numel(shape) / batch;
    std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
    for (std::int64_t b = 0; b < batch; ++b) {
        std::fill(out.begin() + b * n, out.begin() + (b + 1) * n, v.data()[static_cast<std::size_t>(b)]);
    }
    return Tensor::make_result(shape, std::move(out), {v}, [batch, n](detail::Node& self) {
        auto& in = *self.inputs[0];
        for (std::int64_t b = 0; b < batch; ++b) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += self.grad[static_cast<std::size_t>(b * n + i)];
            in.grad[static_cast<std::size_t>(b)] += s;
        }
    });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
    auto x = a.data();
    const double s = std::accumulate(x.begin(), x.end(), 0.0);
    return Tensor::make_result({}, {s}, {a}, [](detail::Node& self) {
        auto& in = *self.inputs[0];
        for (auto& g : in.grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    auto x = a.data();
    const double inv = 1.0 / static_cast<double>(x.size());
    const double s = std::accumulate(x.begin(), x.end(), 0.0) * inv;
    return Tensor::make_result({}, {s}, {a}, [inv](detail::Node& self) {
        auto& in = *self.inputs[0];
        for (auto& g : in.grad) g += self.grad[0] * inv;
    });
}

Tensor mean_abs(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean_abs of empty tensor");
    auto x = a.data();
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += std::abs(v);
    return Tensor::make_result({}, {s * inv}, {a}, [inv](detail::Node& self) {
        auto& in = *self.inputs[0];
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < in.grad.size(); ++i) {
            const double v = in.data[i];
            in.grad[i] += v > 0.0 ? g : (v < 0.0 ? -g : 0.0);
        }
    });
}

Tensor mean_sq(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean_sq of empty tensor");
    auto x = a.data();
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += v * v;
    return Tensor::make_result({}, {s * inv}, {a}, [inv](detail::Node& self) {
        auto& in = *self.inputs[0];
        const double g = 2.0 * self.grad[0] * inv;
        for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += g * in.data[i];
    });
}

Tensor sample_range(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "sample_range");
    if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("sample_range: empty batch axis");
    const std::int64_t batch = x.dim(0);
    const std::int64_t n = x.numel() / batch;
    if (n == 0) throw ShapeError("sample_range: empty samples");
    auto xv = x.data(), yv = y.data();
    // Arg positions index the pair: [0, n) in x, [n, 2n) in y.
    std::vector<std::int64_t> arg_max(static_cast<std::size_t>(batch)), arg_min(static_cast<std::size_t>(batch));
    std::vector<double> out(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) {
        std::int64_t imax = 0, imin = 0;
        double vmax = xv[static_cast<std::size_t>(b * n)], vmin = vmax;
        for (std::int64_t i = 0; i < 2 * n; ++i) {
            const double v = i < n ? xv[static_cast<std::size_t>(b * n + i)] : yv[static_cast<std::size_t>(b * n + i - n)];
            if (v > vmax) vmax = v, imax = i;
            if (v < vmin) vmin = v, imin = i;
        }
        arg_max[static_cast<std::size_t>(b)] = imax;
        arg_min[static_cast<std::size_t>(b)] = imin;
        out[static_cast<std::size_t>(b)] = vmax - vmin;
    }
    return Tensor::make_result({batch}, std::move(out), {x, y}, [arg_max, arg_min, n](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& yn = *self.inputs[1];
        auto route = [&](std::int64_t b, std::int64_t pos, double g) {
            if (pos < n) {
                if (xn.requires_grad) xn.grad[static_cast<std::size_t>(b * n + pos)] += g;
            } else if (yn.requires_grad) {
                yn.grad[static_cast<std::size_t>(b * n + pos - n)] += g;
            }
        };
        for (std::size_t b = 0; b < arg_max.size(); ++b) {
            route(static_cast<std::int64_t>(b), arg_max[b], self.grad[b]);
            route(static_cast<std::int64_t>(b), arg_min[b], -self.grad[b]);
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> classes) {
    require_rank(logits, 2, "softmax_cross_entropy logits");
    const std::int64_t batch = logits.dim(0), n = logits.dim(1);
    if (static_cast<std::int64_t>(classes.size()) != batch) {
        throw ShapeError("softmax_cross_entropy: axis 0 (batch) has " + std::to_string(batch) + " rows but " +
                         std::to_string(classes.size()) + " class indices");
    }
    for (int c : classes) {
        if (c < 0 || c >= n) {
            throw ShapeError("softmax_cross_entropy: class index " + std::to_string(c) +
                             " outside axis 1 extent " + std::to_string(n));
        }
    }
    auto z = logits.data();
    std::vector<double> prob(z.size());
    double loss = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
        const double* row = z.data() + b * n;
        const double m = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::int64_t k = 0; k < n; ++k) s += std::exp(row[k] - m);
        const double lse = m + std::log(s);
        for (std::int64_t k = 0; k < n; ++k) prob[static_cast<std::size_t>(b * n + k)] = std::exp(row[k] - lse);
        loss += lse - row[classes[static_cast<std::size_t>(b)]];
    }
    const double inv = 1.0 / static_cast<double>(batch);
    std::vector<int> cls(classes.begin(), classes.end());
    return Tensor::make_result({}, {loss * inv}, {logits},
                               [prob = std::move(prob), cls = std::move(cls), n, inv](detail::Node& self) {
                                   auto& in = *self.inputs[0];
                                   const double g = self.grad[0] * inv;
                                   for (std::size_t b = 0; b < cls.size(); ++b) {
                                       for (std::int64_t k = 0; k < n; ++k) {
                                           const auto i = b * static_cast<std::size_t>(n) + static_cast<std::size_t>(k);
                                           in.grad[i] += g * (prob[i] - (k == cls[b] ? 1.0 : 0.0));
                                       }
                                   }
                               });
}

// ---- filtering -------------------------------------------------------------

namespace {

inline std::int64_t reflect(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

// Windowed mean along one axis of every plane. `stride` is the element step
// along the filtered axis, `count` its extent, `lines`/`line_step` enumerate
// the other axis.
void box_pass(const double* src, double* dst, std::int64_t count, std::int64_t stride, std::int64_t lines,
              std::int64_t line_step, int radius, double inv) {
    for (std::int64_t l = 0; l < lines; ++l) {
        const double* s = src + l * line_step;
        double* d = dst + l * line_step;
        for (std::int64_t i = 0; i < count; ++i) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += s[reflect(i + k, count) * stride];
            d[i * stride] = acc * inv;
        }
    }
}

void box_pass_adjoint(const double* grad, double* dst, std::int64_t count, std::int64_t stride, std::int64_t lines,
                      std::int64_t line_step, int radius, double inv) {
    for (std::int64_t l = 0; l < lines; ++l) {
        const double* g = grad + l * line_step;
        double* d = dst + l * line_step;
        for (std::int64_t i = 0; i < count; ++i) {
            const double v = g[i * stride] * inv;
            for (int k = -radius; k <= radius; ++k) d[reflect(i + k, count) * stride] += v;
        }
    }
}

}  // namespace

Tensor box_filter(const Tensor& input, int window) {
    require_rank(input, 4, "box_filter input");
    const std::int64_t planes = input.dim(0) * input.dim(1);
    const std::int64_t h = input.dim(2), w = input.dim(3);
    if (window < 1 || window % 2 == 0) throw ShapeError("box_filter: window must be odd and positive");
    if (window > h) throw ShapeError("box_filter: window larger than image along axis 2 (height)");
    if (window > w) throw ShapeError("box_filter: window larger than image along axis 3 (width)");
    const int radius = window / 2;
    const double inv = 1.0 / static_cast<double>(window);
    auto x = input.data();
    std::vector<double> tmp(x.size()), out(x.size());
    for (std::int64_t p = 0; p < planes; ++p) {
        const std::int64_t base = p * h * w;
        box_pass(x.data() + base, tmp.data() + base, w, 1, h, w, radius, inv);
        box_pass(tmp.data() + base, out.data() + base, h, w, w, 1, radius, inv);
    }
    return Tensor::make_result(input.shape(), std::move(out), {input}, [planes, h, w, radius, inv](detail::Node& self) {
        auto& in = *self.inputs[0];
        std::vector<double> tmp(self.grad.size(), 0.0);
        for (std::int64_t p = 0; p < planes; ++p) {
            const std::int64_t base = p * h * w;
            box_pass_adjoint(self.grad.data() + base, tmp.data() + base, h, w, w, 1, radius, inv);
            box_pass_adjoint(tmp.data() + base, in.grad.data() + base, w, 1, h, w, radius, inv);
        }
    });
}

}  // namespace collagan
