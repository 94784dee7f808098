// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "collagan/losses.hpp"
#include "collagan/metrics.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "ssim_oracle.hpp"

using namespace collagan;
using collagan::test::uniform_tensor;

namespace {

CycleBundle make_bundle(int target, Rng& rng, const Shape& shape, double offset = 0.0) {
    CycleBundle b;
    b.target = target;
    b.forward_fake = uniform_tensor(shape, rng);
    for (int k = 0; k < kNumDomains; ++k) {
        if (k == target) continue;
        b.originals[k] = uniform_tensor(shape, rng);
        b.reconstructions[k] = add_scalar(b.originals[k], offset);
    }
    return b;
}

Tensor logits_with_prob(double p_true, int true_class) {
    // Remaining mass split evenly across the other three classes.
    std::vector<double> v(4, std::log((1.0 - p_true) / 3.0));
    v[static_cast<std::size_t>(true_class)] = std::log(p_true);
    return Tensor::from_data({1, 4}, v);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("gan_loss_dsc values") {
    const Shape s{2, 1, 2, 2};
    CHECK(gan_loss_dsc(Tensor::full(s, 1.0), Tensor::full(s, 0.0)).item() == 0.0);
    CHECK(gan_loss_dsc(Tensor::full(s, 0.0), Tensor::full(s, 1.0)).item() == 2.0);
    CHECK(gan_loss_dsc(Tensor::full(s, 0.5), Tensor::full(s, 0.5)).item() == 0.5);
    CHECK_THROWS_AS(gan_loss_dsc(Tensor::zeros(s), Tensor::zeros({2, 1, 2, 3})), ShapeError);
}

TEST_CASE("gan_loss_gen values") {
    const Shape s{1, 1, 4, 4};
    CHECK(gan_loss_gen(Tensor::full(s, 1.0)).item() == 0.0);
    CHECK(gan_loss_gen(Tensor::full(s, 0.0)).item() == 1.0);
    CHECK(gan_loss_gen(Tensor::full(s, 0.5)).item() == 0.25);
}

TEST_CASE("LSGAN minima sit at the targets") {
    Rng rng(1);
    const Shape s{1, 1, 2, 2};
    for (int i = 0; i < 20; ++i) {
        const Tensor r = uniform_tensor(s, rng), f = uniform_tensor(s, rng);
        CHECK(gan_loss_dsc(r, f).item() >= 0.0);
        CHECK(gan_loss_gen(f).item() >= 0.0);
    }
}

TEST_CASE("classification losses: ln 4, ln 2 and 0") {
    for (int cls = 0; cls < 4; ++cls) {
        CHECK(std::abs(clsf_loss_real(Tensor::zeros({1, 4}), cls).item() - std::log(4.0)) < 1e-12);
        CHECK(std::abs(clsf_loss_fake(Tensor::zeros({1, 4}), cls).item() - std::log(4.0)) < 1e-12);
        CHECK(std::abs(clsf_loss_real(logits_with_prob(0.5, cls), cls).item() - std::numbers::ln2) < 1e-12);
        CHECK(std::abs(clsf_loss_fake(logits_with_prob(0.5, cls), cls).item() - std::numbers::ln2) < 1e-12);
        std::vector<double> sure(4, -1000.0);
        sure[static_cast<std::size_t>(cls)] = 1000.0;
        CHECK(clsf_loss_real(Tensor::from_data({1, 4}, sure), cls).item() == 0.0);
        CHECK(clsf_loss_fake(Tensor::from_data({1, 4}, sure), cls).item() == 0.0);
    }
    CHECK_THROWS(clsf_loss_real(Tensor::zeros({1, 4}), 4));
}

TEST_CASE("mcc_loss sums N-1 mean absolute errors") {
    Rng rng(2);
    const CycleBundle perfect = make_bundle(1, rng, {2, 1, 8, 8});
    CHECK(mcc_loss(perfect).item() == 0.0);
    CHECK(std::abs(mcc_ssim_loss(perfect).item()) < 1e-12);

    const CycleBundle shifted = make_bundle(1, rng, {2, 1, 8, 8}, -0.125);
    CHECK(std::abs(mcc_loss(shifted).item() - 3 * 0.125) < 1e-12);

    CycleBundle b = make_bundle(0, rng, {1, 1, 8, 8});
    b.reconstructions[2] = add_scalar(b.originals[2], 0.5);
    CHECK(std::abs(mcc_loss(b).item() - 0.5) < 1e-12);
}

TEST_CASE("mcc_loss is nonnegative") {
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
        CycleBundle b = make_bundle(i % 4, rng, {1, 1, 8, 8});
        for (auto& [k, t] : b.reconstructions) t = uniform_tensor(t.shape(), rng);
        CHECK(mcc_loss(b).item() > 0.0);
        CHECK(mcc_ssim_loss(b).item() > 0.0);
    }
}

TEST_CASE("cycle bundle must hold exactly the non-target domains") {
    Rng rng(4);
    CycleBundle b = make_bundle(2, rng, {1, 1, 8, 8});
    CHECK_NOTHROW(b.validate());
    auto missing = b;
    missing.reconstructions.erase(0);
    CHECK_THROWS_WITH(mcc_loss(missing), doctest::Contains("expected 3"));
    auto keyed_target = missing;
    keyed_target.reconstructions[2] = b.forward_fake;
    CHECK_THROWS_WITH(mcc_loss(keyed_target), doctest::Contains("target"));
    auto no_original = b;
    no_original.originals.erase(3);
    CHECK_THROWS(mcc_ssim_loss(no_original));
}

TEST_CASE("mcc_ssim_loss equals the sum of per-domain ssim losses") {
    Rng rng(5);
    CycleBundle b = make_bundle(3, rng, {1, 1, 8, 8});
    double expected = 0.0;
    test::SsimOracle oracle;
    for (auto& [k, t] : b.reconstructions) {
        t = add(b.originals[k], uniform_tensor(t.shape(), rng, -0.5, 0.5));
        const double s = oracle.mean(b.originals[k].data().data(), t.data().data(), 8, 8);
        expected += -std::log(0.5 * s + 0.5);
    }
    CHECK(std::abs(mcc_ssim_loss(b).item() - expected) < 1e-12);
}

TEST_CASE("ssim_map of an image with itself is one") {
    Rng rng(6);
    for (int i = 0; i < 5; ++i) {
        const Tensor x = uniform_tensor({2, 1, 9, 11}, rng);
        const Tensor s = ssim_map(x, x);
        for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-9);
    }
    const Tensor flat = Tensor::full({1, 1, 8, 8}, 3.0);
    const Tensor s = ssim_map(flat, flat);
    for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-9);
}

TEST_CASE("ssim_map is symmetric and bounded") {
    Rng rng(7);
    for (int i = 0; i < 10; ++i) {
        const Tensor x = uniform_tensor({1, 1, 8, 8}, rng);
        const Tensor y = uniform_tensor({1, 1, 8, 8}, rng);
        const Tensor a = ssim_map(x, y), b = ssim_map(y, x);
        CHECK(test::max_abs_diff(a.data(), b.data()) < 1e-12);
        for (double v : a.data()) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("ssim_map agrees with the brute-force oracle") {
    Rng rng(8);
    test::SsimOracle oracle;
    for (int i = 0; i < 20; ++i) {
        const Tensor x = uniform_tensor({1, 1, 12, 10}, rng, -2.0, 2.0);
        const Tensor y = add(mul_scalar(x, 0.7), uniform_tensor({1, 1, 12, 10}, rng, -1.0, 1.0));
        const auto ref = oracle.map(x.data().data(), y.data().data(), 12, 10);
        CHECK(test::max_abs_diff(ssim_map(x, y).data(), ref) < 1e-9);
    }
}

TEST_CASE("mirrored image gives negative SSIM matching the oracle") {
    // y = 10 - x keeps local means near 5 while flipping every local deviation.
    std::vector<double> v(64);
    for (int i = 0; i < 64; ++i) v[static_cast<std::size_t>(i)] = 5.0 + ((i / 8 + i % 8) % 2 ? 1.0 : -1.0) * (1.0 + 0.1 * (i % 3));
    const Tensor x = Tensor::from_data({1, 1, 8, 8}, v);
    const Tensor y = add_scalar(mul_scalar(x, -1.0), 10.0);
    const auto s = ssim_map(x, y);
    const auto ref = test::SsimOracle{}.map(x.data().data(), y.data().data(), 8, 8);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(s.data()[i] < 0.0);
        CHECK(std::abs(s.data()[i] - ref[i]) < 1e-9);
    }
}

TEST_CASE("ssim_map batch samples are independent") {
    Rng rng(10);
    const Tensor x = uniform_tensor({2, 1, 8, 8}, rng);
    const Tensor y = uniform_tensor({2, 1, 8, 8}, rng);
    const Tensor both = ssim_map(x, y);
    for (int b = 0; b < 2; ++b) {
        const Tensor one = ssim_map(slice(x, 0, b, 1), slice(y, 0, b, 1));
        CHECK(test::max_abs_diff(slice(both, 0, b, 1).data(), one.data()) < 1e-15);
    }
}

TEST_CASE("ssim_map rejects mismatched shapes and oversize windows") {
    CHECK_THROWS_AS(ssim_map(Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 1, 8, 9})), ShapeError);
    CHECK_THROWS_AS(ssim_map(Tensor::zeros({1, 1, 6, 8}), Tensor::zeros({1, 1, 6, 8})), ShapeError);
}

TEST_CASE("ssim_loss identities") {
    const Shape s{1, 1, 8, 8};
    CHECK(std::abs(ssim_loss_from_map(Tensor::full(s, 1.0)).item()) < 1e-12);
    CHECK(std::abs(ssim_loss_from_map(Tensor::full(s, 0.0)).item() - std::numbers::ln2) < 1e-12);
    CHECK(std::abs(ssim_loss_from_map(Tensor::full(s, -1.0)).item() + std::log(kSsimLossFloor)) < 1e-12);
    Rng rng(11);
    const Tensor x = uniform_tensor(s, rng);
    CHECK(std::abs(ssim_loss(x, x).item()) < 1e-12);
}

TEST_CASE("weighted totals") {
    Rng rng(12);
    CycleBundle b = make_bundle(0, rng, {2, 1, 8, 8});
    for (auto& [k, t] : b.reconstructions) t = uniform_tensor(t.shape(), rng);
    const Tensor patch = uniform_tensor({2, 1, 1, 1}, rng);
    const Tensor logits = uniform_tensor({2, 4}, rng);

    const auto zero = total_generator_loss(b, patch, logits, LossWeights{0, 0, 0, 0});
    CHECK(zero.total.item() == 0.0);

    const auto only_mcc = total_generator_loss(b, patch, logits, LossWeights{1, 0, 0, 0});
    CHECK(only_mcc.total.item() == only_mcc.mcc.item());
    const auto only_ssim = total_generator_loss(b, patch, logits, LossWeights{0, 1, 0, 0});
    CHECK(only_ssim.total.item() == only_ssim.mcc_ssim.item());
    const auto only_gan = total_generator_loss(b, patch, logits, LossWeights{0, 0, 1, 0});
    CHECK(only_gan.total.item() == only_gan.gan_gen.item());
    const auto only_clsf = total_generator_loss(b, patch, logits, LossWeights{0, 0, 0, 1});
    CHECK(only_clsf.total.item() == only_clsf.clsf_fake.item());

    const LossWeights w{10, 1, 1, 1};
    const auto t = total_generator_loss(b, patch, logits, w);
    CHECK(t.total.item() ==
          doctest::Approx(10 * t.mcc.item() + t.mcc_ssim.item() + t.gan_gen.item() + t.clsf_fake.item()).epsilon(1e-14));

    const auto d = total_discriminator_loss(patch, patch, logits, 1);
    CHECK(d.total.item() == doctest::Approx(d.gan_dsc.item() + d.clsf_real.item()).epsilon(1e-14));

    CHECK_THROWS(total_generator_loss(b, patch, logits, LossWeights{-1, 1, 1, 1}));
    CHECK_THROWS(LossWeights{0, 0, 0, 0}.validate());
    CHECK_NOTHROW(LossWeights{}.validate());
}

TEST_CASE("gradient of the weighted sum is the weighted sum of gradients") {
    Rng rng(13);
    const Tensor base = uniform_tensor({1, 1, 8, 8}, rng);
    CycleBundle b = make_bundle(1, rng, {1, 1, 8, 8});
    const Tensor logits = uniform_tensor({1, 4}, rng);
    const Tensor patch_base = uniform_tensor({1, 1, 1, 1}, rng);
    auto grad = [&](const LossWeights& w) {
        Tensor fake = Tensor::from_data(base.shape(), {base.data().begin(), base.data().end()}, true);
        Tensor patch = Tensor::from_data(patch_base.shape(), {patch_base.data().begin(), patch_base.data().end()}, true);
        CycleBundle bb = b;
        bb.reconstructions[0] = mul(fake, b.reconstructions[0]);
        bb.reconstructions[2] = add(fake, b.reconstructions[2]);
        total_generator_loss(bb, patch, logits, w).total.backward();
        std::vector<double> g(fake.grad().begin(), fake.grad().end());
        g.insert(g.end(), patch.grad().begin(), patch.grad().end());
        return g;
    };
    const auto g_mcc = grad({1, 0, 0, 0});
    const auto g_ssim = grad({0, 1, 0, 0});
    const auto g_gan = grad({0, 0, 1, 0});
    const auto g_all = grad({3, 0.5, 2, 0});
    for (std::size_t i = 0; i < g_all.size(); ++i) {
        CHECK(g_all[i] == doctest::Approx(3 * g_mcc[i] + 0.5 * g_ssim[i] + 2 * g_gan[i]).epsilon(1e-12));
    }
}

TEST_CASE("scalar SSIM and the differentiable map agree") {
    Rng rng(14);
    for (int i = 0; i < 20; ++i) {
        const Tensor x = uniform_tensor({1, 1, 16, 16}, rng);
        const Tensor y = add(x, uniform_tensor({1, 1, 16, 16}, rng, -1.0, 1.0));
        CHECK(std::abs(ssim_scalar(x, y) - mean(ssim_map(x, y)).item()) < 1e-9);
    }
}

}  // TEST_SUITE
