// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "collagan/discriminator.hpp"
#include "collagan/losses.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace collagan;
using collagan::test::uniform_tensor;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c;
    c.base_channels = 2;
    c.levels = 2;
    return c;
}

std::vector<DomainImage> sources(int target, const std::vector<Tensor>& images) {
    std::vector<DomainImage> out;
    for (int k = 0; k < static_cast<int>(images.size()); ++k) {
        if (k != target) out.push_back({k, images[static_cast<std::size_t>(k)]});
    }
    return out;
}

std::vector<Tensor> random_images(int n, const Shape& shape, Rng& rng) {
    std::vector<Tensor> out;
    for (int k = 0; k < n; ++k) out.push_back(uniform_tensor(shape, rng));
    return out;
}

}  // namespace

TEST_SUITE("generator") {

TEST_CASE("TargetMask holds one constant-one channel and a one-hot vector") {
    const TargetMask m(2, 4, 3, 5, 6);
    CHECK(m.spatial().shape() == Shape{3, 4, 5, 6});
    CHECK(m.vector().shape() == Shape{3, 4});
    for (int b = 0; b < 3; ++b) {
        double vsum = 0.0;
        for (int k = 0; k < 4; ++k) {
            vsum += m.vector().at({b, k});
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 6; ++x) CHECK(m.spatial().at({b, k, y, x}) == (k == 2 ? 1.0 : 0.0));
        }
        CHECK(vsum == 1.0);
    }
    CHECK_THROWS_AS(TargetMask(4, 4, 1, 2, 2), std::out_of_range);
    CHECK_THROWS_AS(TargetMask(-1, 4, 1, 2, 2), std::out_of_range);
    CHECK_THROWS(TargetMask(0, 1, 1, 2, 2));
    CHECK_THROWS_AS(TargetMask(0, 4, 0, 2, 2), ShapeError);
}

TEST_CASE("CCNL output has c1 + c3 channels at the input extent") {
    Rng rng(1);
    const CCNLUnit u = CCNLUnit::create(3, 5, 7, 0.2, rng);
    CHECK(u.out_channels() == 12);
    const Tensor y = ccnl_forward(u, uniform_tensor({2, 3, 16, 16}, rng));
    CHECK(y.shape() == Shape{2, 12, 16, 16});
    CHECK_THROWS_AS(ccnl_forward(u, Tensor::zeros({1, 4, 16, 16})), ShapeError);
}

TEST_CASE("CCAM with zero MLP weights halves the features exactly") {
    Rng rng(2);
    CCAMUnit u = CCAMUnit::create(6, 4, 0.2, rng);
    for (auto* t : {&u.hidden.weight, &u.hidden.bias, &u.out.weight, &u.out.bias}) {
        std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
    }
    const Tensor x = uniform_tensor({2, 6, 5, 5}, rng);
    const Tensor y = ccam_forward(u, x, TargetMask(1, 4, 2, 5, 5));
    for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(y.data()[i] == x.data()[i] / 2.0);
}

TEST_CASE("CCAM scaling lies in (0,1) and depends on the mask") {
    Rng rng(3);
    const CCAMUnit u = CCAMUnit::create(8, 4, 0.2, rng);
    const Tensor x = uniform_tensor({1, 8, 4, 4}, rng, -20.0, 20.0);
    const Tensor a0 = u.attention(x, TargetMask(0, 4, 1, 4, 4));
    const Tensor a3 = u.attention(x, TargetMask(3, 4, 1, 4, 4));
    for (double v : a0.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK_FALSE(test::bitwise_equal(a0, a3));
    CHECK_THROWS_AS(u.attention(x, TargetMask(0, 3, 1, 4, 4)), ShapeError);
}

TEST_CASE("impute output shape equals the input shape") {
    Rng rng(4);
    const GeneratorNet net(small_config(), rng);
    const auto images = random_images(4, {1, 1, 64, 64}, rng);
    const Tensor y = impute(net, sources(0, images), TargetMask(0, 4, 1, 64, 64));
    CHECK(y.shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("impute is deterministic and invariant to input order") {
    Rng rng(5);
    const GeneratorNet net(small_config(), rng);
    const auto images = random_images(4, {2, 1, 8, 8}, rng);
    const TargetMask mask(1, 4, 2, 8, 8);
    auto in = sources(1, images);
    const Tensor ref = impute(net, in, mask);
    CHECK(test::bitwise_equal(ref, impute(net, in, mask)));
    std::sort(in.begin(), in.end(), [](const DomainImage& a, const DomainImage& b) { return a.domain < b.domain; });
    do {
        CHECK(test::bitwise_equal(ref, impute(net, in, mask)));
    } while (std::next_permutation(in.begin(), in.end(),
                                   [](const DomainImage& a, const DomainImage& b) { return a.domain < b.domain; }));
}

TEST_CASE("impute rejects malformed source sets") {
    Rng rng(6);
    const GeneratorNet net(small_config(), rng);
    const auto images = random_images(4, {1, 1, 8, 8}, rng);
    const TargetMask mask(0, 4, 1, 8, 8);
    auto in = sources(0, images);

    auto dup = in;
    dup[1].domain = dup[0].domain;
    CHECK_THROWS_WITH(impute(net, dup, mask), doctest::Contains("duplicate"));

    auto with_target = in;
    with_target[0].domain = 0;
    CHECK_THROWS_WITH(impute(net, with_target, mask), doctest::Contains("target"));

    auto too_few = in;
    too_few.pop_back();
    CHECK_THROWS(impute(net, too_few, mask));

    auto bad_shape = in;
    bad_shape[2].image = Tensor::zeros({1, 1, 8, 16});
    CHECK_THROWS_AS(impute(net, bad_shape, mask), ShapeError);

    CHECK_THROWS(impute(net, in, TargetMask(0, 3, 1, 8, 8)));
}

TEST_CASE("N-1 backward cycles, each shaped like the forward input") {
    Rng rng(7);
    const GeneratorNet net(small_config(), rng);
    const auto images = random_images(4, {1, 1, 8, 8}, rng);
    const int target = 0;
    const Tensor fake = impute(net, sources(target, images), TargetMask(target, 4, 1, 8, 8));
    int cycles = 0;
    for (int k = 0; k < 4; ++k) {
        if (k == target) continue;
        std::vector<DomainImage> reals;
        for (int j = 0; j < 4; ++j) {
            if (j != target && j != k) reals.push_back({j, images[static_cast<std::size_t>(j)]});
        }
        CHECK(reals.size() == 2);
        const Tensor rec = backward_cycle(net, fake, reals, target, k);
        CHECK(rec.shape() == images[0].shape());
        ++cycles;
    }
    CHECK(cycles == 3);
    CHECK_THROWS(backward_cycle(net, fake, {{2, images[2]}, {3, images[3]}}, 1, 1));
}

TEST_CASE("branches have separate parameters") {
    Rng rng(8);
    const GeneratorNet net(small_config(), rng);
    const auto params = net.parameters();
    std::vector<std::string> names;
    for (const auto& p : params) names.push_back(p.name);
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
    std::set<const void*> ids;
    for (const auto& p : params) ids.insert(p.tensor.id());
    CHECK(ids.size() == params.size());
}

TEST_CASE("every generator parameter receives a nonzero gradient at initialisation") {
    Rng rng(9);
    const GeneratorNet net(small_config(), rng);
    DiscriminatorConfig dc;
    dc.base_channels = 2;
    const DiscriminatorNet disc(dc, rng);
    const auto images = random_images(4, {2, 1, 32, 32}, rng);
    const auto params = net.parameters();
    set_trainable(params, true);

    const int target = 2;
    CycleBundle bundle;
    bundle.target = target;
    bundle.forward_fake = impute(net, sources(target, images), TargetMask(target, 4, 2, 32, 32));
    for (int k = 0; k < 4; ++k) {
        if (k == target) continue;
        std::vector<DomainImage> reals;
        for (int j = 0; j < 4; ++j) {
            if (j != target && j != k) reals.push_back({j, images[static_cast<std::size_t>(j)]});
        }
        bundle.reconstructions[k] = backward_cycle(net, bundle.forward_fake, reals, target, k);
        bundle.originals[k] = images[static_cast<std::size_t>(k)];
    }
    const auto out = disc.forward(bundle.forward_fake);
    total_generator_loss(bundle, out.patch_map, out.class_logits, LossWeights{}).total.backward();
    for (const auto& p : params) {
        INFO(p.name);
        REQUIRE(p.tensor.has_grad());
        const auto g = p.tensor.grad();
        CHECK(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; }));
    }
}

TEST_CASE("miniature generator end-to-end gradient matches finite differences") {
    Rng rng(10);
    const GeneratorNet net(small_config(), rng);
    const auto images = random_images(4, {1, 1, 8, 8}, rng);
    const Tensor proj = uniform_tensor({1, 1, 8, 8}, rng, -1.0, 1.0);
    const auto params = net.parameters();
    set_trainable(params, true);
    const TargetMask mask(3, 4, 1, 8, 8);
    auto loss = [&] { return sum(mul(impute(net, sources(3, images), mask), proj)); };

    zero_grads(params);
    loss().backward();
    // Normwise over the whole parameter vector: biases ahead of an instance
    // norm have an exactly zero gradient, so per-tensor scaling would only
    // measure finite-difference noise.
    const double h = 1e-5;
    std::vector<double> analytic, numeric;
    for (auto p : params) {
        const auto g = p.tensor.grad();
        analytic.insert(analytic.end(), g.begin(), g.end());
        auto w = p.tensor.mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double keep = w[i];
            NoGradGuard ng;
            w[i] = keep + h;
            const double up = loss().item();
            w[i] = keep - h;
            const double down = loss().item();
            w[i] = keep;
            numeric.push_back((up - down) / (2 * h));
        }
    }
    double scale = 1e-8;
    for (std::size_t i = 0; i < analytic.size(); ++i) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    const double err = test::max_abs_diff(analytic, numeric) / scale;
    MESSAGE("parameters " << count_parameters(params) << ", normwise error " << err);
    CHECK(err < 1e-4);
}

TEST_CASE("generator config validation") {
    GeneratorConfig c;
    c.levels = 0;
    CHECK_THROWS(c.validate());
    c = {};
    c.leaky_slope = 1.0;
    CHECK_THROWS(c.validate());
    Rng rng(11);
    const GeneratorNet net(small_config(), rng);
    const auto images = random_images(4, {1, 1, 7, 8}, rng);
    CHECK_THROWS_AS(impute(net, sources(0, images), TargetMask(0, 4, 1, 7, 8)), ShapeError);
}

}  // TEST_SUITE
