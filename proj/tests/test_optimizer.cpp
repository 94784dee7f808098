// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "collagan/optimizer.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace collagan;

TEST_SUITE("optimizer") {

TEST_CASE("first Adam step moves each weight by about lr against the gradient sign") {
    Tensor w = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    Adam opt({{"w", w}}, AdamConfig{0.01, 0.9, 0.999, 1e-8});
    sum(mul(w, Tensor::from_data({3}, {3.0, -0.25, 1e-3}))).backward();
    opt.step();
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(w.data()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
    CHECK(w.data()[2] == doctest::Approx(0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-9));
    CHECK(opt.step_count() == 1);
    CHECK_FALSE(w.has_grad());
}

TEST_CASE("parameters without gradients are left alone") {
    Tensor a = Tensor::full({2}, 1.0, true);
    Tensor b = Tensor::full({2}, 1.0, true);
    Adam opt({{"a", a}, {"b", b}}, AdamConfig{});
    sum(a).backward();
    opt.step();
    CHECK(a.data()[0] != 1.0);
    CHECK(b.data()[0] == 1.0);
    CHECK(b.data()[1] == 1.0);
}

TEST_CASE("Adam minimises a quadratic") {
    Tensor w = Tensor::from_data({2}, {3.0, -4.0}, true);
    Adam opt({{"w", w}}, AdamConfig{0.05});
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 500; ++i) {
        const Tensor loss = mean_sq(w);
        if (i == 0) first = loss.item();
        last = loss.item();
        loss.backward();
        opt.step();
    }
    CHECK(last < 1e-3 * first);
}

TEST_CASE("state round-trip resumes identically") {
    auto run = [](int steps, Adam* opt, Tensor& w) {
        for (int i = 0; i < steps; ++i) {
            mean_sq(add_scalar(w, -1.0)).backward();
            opt->step();
        }
    };
    Tensor w1 = Tensor::from_data({2}, {0.3, -0.7}, true);
    Adam o1({{"w", w1}}, AdamConfig{0.1});
    run(5, &o1, w1);

    Tensor w2 = w1.clone();
    w2.set_requires_grad(true);
    Adam o2({{"w", w2}}, AdamConfig{0.1});
    o2.load_state(o1.state());
    CHECK(o2.step_count() == 5);
    run(3, &o1, w1);
    run(3, &o2, w2);
    CHECK(test::bitwise_equal(w1, w2));

    Tensor other = Tensor::zeros({3}, true);
    Adam o3({{"w", other}}, AdamConfig{});
    CHECK_THROWS_AS(o3.load_state(o1.state()), FormatError);
    Adam o4({{"q", Tensor::zeros({2}, true)}}, AdamConfig{});
    CHECK_THROWS_AS(o4.load_state(o1.state()), FormatError);
}

TEST_CASE("config validation") {
    CHECK_THROWS(AdamConfig{0.0}.validate());
    CHECK_THROWS(AdamConfig{1e-3, 1.0}.validate());
    CHECK_THROWS(AdamConfig{1e-3, 0.9, 0.999, 0.0}.validate());
    CHECK_NOTHROW(AdamConfig{}.validate());
}

}  // TEST_SUITE
