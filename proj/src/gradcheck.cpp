// SPDX-License-Identifier: Apache-2.0

#include "collagan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "collagan/generator.hpp"
#include "collagan/losses.hpp"

namespace collagan {

namespace {

Tensor randn(const Shape& shape, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = dist(rng);
    return Tensor::from_data(shape, std::move(v));
}

// Normal values pushed at least `gap` away from `centre`, so a kink there is
// never within one finite-difference step.
Tensor randn_away(const Shape& shape, Rng& rng, double centre, double gap) {
    Tensor t = randn(shape, rng);
    for (double& x : t.mutable_data()) x = centre + (x >= 0 ? gap + x : x - gap);
    return t;
}

Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = lo + (hi - lo) * uniform01(rng);
    return Tensor::from_data(shape, std::move(v));
}

Tensor projected(const Tensor& out, const Tensor& weights) {
    if (!weights.defined()) return out;
    return sum(out * weights);
}

using Inputs = std::vector<Tensor>;

GradCase primitive(std::string name, std::function<Inputs(Rng&)> make, TensorFn fn) {
    return {std::move(name), false, std::move(make), [fn](Rng&) { return fn; }};
}

GradCase composite(std::string name, std::function<Inputs(Rng&)> make, std::function<TensorFn(Rng&)> make_fn) {
    return {std::move(name), true, std::move(make), std::move(make_fn)};
}

const Shape kImage{2, 3, 8, 8};
const Shape kGray{2, 1, 8, 8};

CycleBundle bundle_from(const Inputs& in, int target) {
    // in = [recon_k..., original_k...] for the three non-target domains.
    CycleBundle b;
    b.target = target;
    b.num_domains = 4;
    int j = 0;
    for (int k = 0; k < 4; ++k) {
        if (k == target) continue;
        b.reconstructions[k] = in[static_cast<std::size_t>(j)];
        b.originals[k] = in[static_cast<std::size_t>(j + 3)];
        ++j;
    }
    return b;
}

Inputs six_gray(Rng& rng) {
    Inputs in;
    for (int i = 0; i < 6; ++i) in.push_back(randn(kGray, rng));
    // Keep every reconstruction error away from the |.| kink.
    for (int i = 0; i < 3; ++i) {
        Tensor offset = randn_away(kGray, rng, 0.0, 0.05);
        in[static_cast<std::size_t>(i)] = Tensor::from_data(kGray, [&] {
            std::vector<double> v(in[static_cast<std::size_t>(i + 3)].data().begin(),
                                  in[static_cast<std::size_t>(i + 3)].data().end());
            for (std::size_t e = 0; e < v.size(); ++e) v[e] += offset.data()[e];
            return v;
        }());
    }
    return in;
}

}  // namespace

double max_gradient_error(const TensorFn& fn, const std::vector<Tensor>& inputs, Rng& projection_rng, double h,
                          double floor) {
    std::vector<Tensor> leaves;
    for (const auto& t : inputs) leaves.push_back(Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, true));

    Tensor out = fn(leaves);
    Tensor weights;
    if (out.numel() != 1) weights = randn(out.shape(), projection_rng);
    Tensor loss = projected(out, weights);
    if (loss.numel() != 1) throw ShapeError("gradcheck: projected output is not scalar");
    loss.backward();

    auto evaluate = [&]() {
        NoGradGuard no_grad;
        return projected(fn(leaves), weights).item();
    };

    double worst = 0.0;
    for (auto& leaf : leaves) {
        const std::vector<double> analytic = leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                                             : std::vector<double>(static_cast<std::size_t>(leaf.numel()), 0.0);
        std::vector<double> numeric(analytic.size());
        auto values = leaf.mutable_data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + h;
            const double plus = evaluate();
            values[j] = saved - h;
            const double minus = evaluate();
            values[j] = saved;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        double diff = 0.0, scale = floor;
        for (std::size_t j = 0; j < analytic.size(); ++j) {
            diff = std::max(diff, std::abs(analytic[j] - numeric[j]));
            scale = std::max({scale, std::abs(analytic[j]), std::abs(numeric[j])});
        }
        worst = std::max(worst, diff / scale);
    }
    return worst;
}

std::vector<GradCase> standard_gradient_cases() {
    std::vector<GradCase> c;

    // ---- convolution
    struct ConvSpec {
        const char* name;
        int k, stride, pad;
    };
    for (ConvSpec s : {ConvSpec{"conv2d_1x1", 1, 1, 0}, ConvSpec{"conv2d_3x3", 3, 1, 1}, ConvSpec{"conv2d_4x4_s2", 4, 2, 1}}) {
        c.push_back(primitive(
            s.name,
            [s](Rng& r) { return Inputs{randn(kImage, r), randn({4, 3, s.k, s.k}, r), randn({4}, r)}; },
            [s](const Inputs& in) { return conv2d(in[0], in[1], in[2], s.stride, s.pad); }));
    }
    c.push_back(primitive(
        "conv_transpose2d",
        [](Rng& r) { return Inputs{randn({2, 3, 4, 4}, r), randn({3, 2, 4, 4}, r), randn({2}, r)}; },
        [](const Inputs& in) { return conv_transpose2d(in[0], in[1], in[2]); }));

    // ---- normalisation and activations
    c.push_back(primitive("instance_norm", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return instance_norm(in[0]); }));
    c.push_back(primitive("leaky_relu", [](Rng& r) { return Inputs{randn_away(kImage, r, 0.0, 1e-3)}; },
                          [](const Inputs& in) { return leaky_relu(in[0], 0.2); }));
    c.push_back(primitive("sigmoid", [](Rng& r) { return Inputs{randn(kImage, r, 2.0)}; },
                          [](const Inputs& in) { return sigmoid(in[0]); }));
    c.push_back({"dropout", false, [](Rng& r) { return Inputs{randn(kImage, r)}; }, [](Rng& r) {
                     const Rng mask_rng = r;
                     return TensorFn([mask_rng](const Inputs& in) {
                         Rng local = mask_rng;
                         return dropout(in[0], 0.5, true, local);
                     });
                 }});

    // ---- pooling and shape
    c.push_back(primitive("avg_pool_global", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return avg_pool_global(in[0]); }));
    c.push_back(primitive("avg_pool2", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return avg_pool2(in[0]); }));
    c.push_back(primitive("concat", [](Rng& r) { return Inputs{randn(kImage, r), randn({2, 2, 8, 8}, r)}; },
                          [](const Inputs& in) { return concat({in[0], in[1]}, 1); }));
    c.push_back(primitive("slice", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return slice(in[0], 2, 2, 5); }));
    c.push_back(primitive("reshape", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return reshape(in[0], {6, 64}); }));
    c.push_back(primitive("linear", [](Rng& r) { return Inputs{randn({2, 6}, r), randn({5, 6}, r), randn({5}, r)}; },
                          [](const Inputs& in) { return linear(in[0], in[1], in[2]); }));

    // ---- elementwise
    c.push_back(primitive("add", [](Rng& r) { return Inputs{randn(kImage, r), randn(kImage, r)}; },
                          [](const Inputs& in) { return add(in[0], in[1]); }));
    c.push_back(primitive("sub", [](Rng& r) { return Inputs{randn(kImage, r), randn(kImage, r)}; },
                          [](const Inputs& in) { return sub(in[0], in[1]); }));
    c.push_back(primitive("mul", [](Rng& r) { return Inputs{randn(kImage, r), randn(kImage, r)}; },
                          [](const Inputs& in) { return mul(in[0], in[1]); }));
    c.push_back(primitive("mul_self", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return mul(in[0], in[0]); }));
    c.push_back(primitive("div", [](Rng& r) { return Inputs{randn(kImage, r), randn_away(kImage, r, 0.0, 0.5)}; },
                          [](const Inputs& in) { return div(in[0], in[1]); }));
    c.push_back(primitive("add_scalar", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return add_scalar(in[0], 0.7); }));
    c.push_back(primitive("mul_scalar", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return mul_scalar(in[0], -1.3); }));
    c.push_back(primitive("log", [](Rng& r) { return Inputs{rand_uniform(kImage, r, 0.2, 3.0)}; },
                          [](const Inputs& in) { return log(in[0]); }));
    c.push_back(primitive("clamp_min", [](Rng& r) { return Inputs{randn_away(kImage, r, 0.1, 1e-3)}; },
                          [](const Inputs& in) { return clamp_min(in[0], 0.1); }));
    c.push_back(primitive("scale_channels", [](Rng& r) { return Inputs{randn(kImage, r), randn({2, 3}, r)}; },
                          [](const Inputs& in) { return scale_channels(in[0], in[1]); }));
    c.push_back(primitive("broadcast_samples", [](Rng& r) { return Inputs{randn({2}, r)}; },
                          [](const Inputs& in) { return broadcast_samples(in[0], kImage); }));

    // ---- reductions
    c.push_back(primitive("sum", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return sum(in[0]); }));
    c.push_back(primitive("mean", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return mean(in[0]); }));
    c.push_back(primitive("mean_abs", [](Rng& r) { return Inputs{randn_away(kImage, r, 0.0, 1e-3)}; },
                          [](const Inputs& in) { return mean_abs(in[0]); }));
    c.push_back(primitive("mean_sq", [](Rng& r) { return Inputs{randn(kImage, r)}; },
                          [](const Inputs& in) { return mean_sq(in[0]); }));
    c.push_back(primitive("sample_range", [](Rng& r) { return Inputs{randn(kGray, r), randn(kGray, r)}; },
                          [](const Inputs& in) { return sample_range(in[0], in[1]); }));
    c.push_back({"softmax_cross_entropy", false, [](Rng& r) { return Inputs{randn({3, 4}, r, 2.0)}; }, [](Rng& r) {
                     std::vector<int> classes;
                     for (int i = 0; i < 3; ++i) classes.push_back(static_cast<int>(r() % 4));
                     return TensorFn([classes](const Inputs& in) { return softmax_cross_entropy(in[0], classes); });
                 }});
    for (int w : {3, 7}) {
        c.push_back(primitive("box_filter_" + std::to_string(w), [](Rng& r) { return Inputs{randn(kImage, r)}; },
                              [w](const Inputs& in) { return box_filter(in[0], w); }));
    }

    // ---- losses and blocks
    c.push_back(composite("ssim_map", [](Rng& r) { return Inputs{randn(kGray, r), randn(kGray, r)}; },
                          [](Rng&) { return TensorFn([](const Inputs& in) { return ssim_map(in[0], in[1]); }); }));
    c.push_back(composite("ssim_loss", [](Rng& r) { return Inputs{randn(kGray, r), randn(kGray, r)}; },
                          [](Rng&) { return TensorFn([](const Inputs& in) { return ssim_loss(in[0], in[1]); }); }));
    c.push_back(composite("mcc_loss", six_gray, [](Rng& r) {
        const int target = static_cast<int>(r() % 4);
        return TensorFn([target](const Inputs& in) { return mcc_loss(bundle_from(in, target)); });
    }));
    c.push_back(composite("mcc_ssim_loss", six_gray, [](Rng& r) {
        const int target = static_cast<int>(r() % 4);
        return TensorFn([target](const Inputs& in) { return mcc_ssim_loss(bundle_from(in, target)); });
    }));
    c.push_back(composite("gan_loss_dsc", [](Rng& r) { return Inputs{randn({2, 1, 2, 2}, r), randn({2, 1, 2, 2}, r)}; },
                          [](Rng&) { return TensorFn([](const Inputs& in) { return gan_loss_dsc(in[0], in[1]); }); }));
    c.push_back(composite("gan_loss_gen", [](Rng& r) { return Inputs{randn({2, 1, 2, 2}, r)}; },
                          [](Rng&) { return TensorFn([](const Inputs& in) { return gan_loss_gen(in[0]); }); }));
    c.push_back(composite("clsf_loss_real", [](Rng& r) { return Inputs{randn({2, 4}, r, 2.0)}; }, [](Rng& r) {
        const int d = static_cast<int>(r() % 4);
        return TensorFn([d](const Inputs& in) { return clsf_loss_real(in[0], d); });
    }));
    c.push_back(composite("clsf_loss_fake", [](Rng& r) { return Inputs{randn({2, 4}, r, 2.0)}; }, [](Rng& r) {
        const int d = static_cast<int>(r() % 4);
        return TensorFn([d](const Inputs& in) { return clsf_loss_fake(in[0], d); });
    }));
    c.push_back(composite("ccnl_block", [](Rng& r) { return Inputs{randn(kImage, r)}; }, [](Rng& r) {
        auto unit = CCNLUnit::create(3, 2, 2, 0.2, r);
        return TensorFn([unit](const Inputs& in) { return ccnl_forward(unit, in[0]); });
    }));
    c.push_back(composite("ccam_block", [](Rng& r) { return Inputs{randn({2, 6, 8, 8}, r)}; }, [](Rng& r) {
        auto unit = CCAMUnit::create(6, 4, 0.2, r);
        const int d = static_cast<int>(r() % 4);
        return TensorFn([unit, d](const Inputs& in) { return ccam_forward(unit, in[0], TargetMask(d, 4, 2, 8, 8)); });
    }));
    return c;
}

std::vector<GradCaseResult> run_gradient_suite(const std::vector<GradCase>& cases, std::uint64_t seed, int trials,
                                               double primitive_tolerance, double composite_tolerance) {
    if (trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
    std::vector<GradCaseResult> results;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const GradCase& gc = cases[i];
        GradCaseResult res;
        res.name = gc.name;
        res.composite = gc.composite;
        res.trials = trials;
        res.tolerance = gc.composite ? composite_tolerance : primitive_tolerance;
        for (int t = 0; t < trials; ++t) {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(t)};
            Rng rng(seq);
            const auto inputs = gc.make_inputs(rng);
            const TensorFn fn = gc.make_fn(rng);
            res.max_error = std::max(res.max_error, max_gradient_error(fn, inputs, rng));
        }
        results.push_back(res);
    }
    return results;
}

}  // namespace collagan
