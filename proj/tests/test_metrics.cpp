// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <sstream>

#include "collagan/metrics.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "ssim_oracle.hpp"

using namespace collagan;
using collagan::test::uniform_tensor;

TEST_SUITE("metrics") {

TEST_CASE("nmse cases") {
    Rng rng(1);
    const Tensor x = uniform_tensor({1, 8, 8}, rng);
    CHECK(nmse(x, x) == 0.0);
    CHECK(nmse(x, Tensor::zeros({1, 8, 8})) == 1.0);
    CHECK(nmse(x, mul_scalar(x, 1.1)) == doctest::Approx(0.01).epsilon(1e-12));
    for (double eps : {1e-3, 0.25, -0.5}) {
        CHECK(nmse(x, mul_scalar(x, 1.0 + eps)) == doctest::Approx(eps * eps).epsilon(1e-10));
    }
    CHECK_THROWS_AS(nmse(Tensor::zeros({4}), x), ShapeError);
    CHECK_THROWS_AS(nmse(Tensor::zeros({1, 8, 8}), x), NumericError);
}

TEST_CASE("dice cases") {
    const std::vector<double> a = {1, 1, 1, 1, 0, 0, 0, 0};
    const std::vector<double> b = {0, 0, 1, 1, 1, 1, 0, 0};
    const std::vector<double> c = {0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<double> empty(8, 0.0);
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, c) == 0.0);
    CHECK(dice(a, b) == 0.5);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(a, empty) == 0.0);
    CHECK_THROWS_AS(dice(a, std::vector<double>(3)), ShapeError);
}

TEST_CASE("dice is symmetric and permutation invariant") {
    Rng rng(2);
    std::vector<double> a(200), b(200);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng() % 3 == 0;
        b[i] = rng() % 2 == 0;
    }
    CHECK(dice(a, b) == dice(b, a));
    std::vector<std::size_t> perm(a.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pa(a.size()), pb(b.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        pa[i] = a[perm[i]];
        pb[i] = b[perm[i]];
    }
    CHECK(dice(pa, pb) == dice(a, b));
}

TEST_CASE("scalar SSIM: identity, symmetry and oracle agreement") {
    Rng rng(3);
    test::SsimOracle oracle;
    for (int i = 0; i < 20; ++i) {
        const Tensor x = uniform_tensor({1, 10, 9}, rng);
        const Tensor y = uniform_tensor({1, 10, 9}, rng);
        CHECK(std::abs(ssim_scalar(x, x) - 1.0) < 1e-9);
        CHECK(std::abs(ssim_scalar(x, y) - ssim_scalar(y, x)) < 1e-12);
        CHECK(std::abs(ssim_scalar(x, y) - oracle.mean(x.data().data(), y.data().data(), 10, 9)) < 1e-9);
    }
    CHECK_THROWS_AS(ssim_scalar(Tensor::zeros({1, 5, 9}), Tensor::zeros({1, 5, 9})), ShapeError);
    CHECK_THROWS_AS(ssim_scalar(Tensor::zeros({2, 8, 8}), Tensor::zeros({2, 8, 8})), ShapeError);
}

TEST_CASE("report aggregates equal recomputed means") {
    MetricsReport r;
    r.tag = "T2_Colla";
    r.records = {{0, 0, 1, 0.1, 0.9}, {0, 1, 1, 0.3, 0.7}, {1, 0, 2, 0.2, 0.8}};
    const auto agg = r.aggregates();
    REQUIRE(agg.size() == 2);
    CHECK(agg[0].target == 1);
    CHECK(agg[0].count == 2);
    CHECK(agg[0].nmse_mean == doctest::Approx(0.2));
    CHECK(agg[0].nmse_std == doctest::Approx(0.1));
    CHECK(agg[0].ssim_mean == doctest::Approx(0.8));
    CHECK(agg[1].nmse_std == 0.0);
    std::ostringstream csv, table;
    r.write_csv(csv);
    r.write_table(table);
    CHECK(csv.str().rfind("tag,subject,slice,target,nmse,ssim\n", 0) == 0);
    CHECK(csv.str().find("T2_Colla,0,1,T2,0.29999999999999999") != std::string::npos);
    CHECK(table.str().find("T2F") != std::string::npos);
}

TEST_CASE("pgm output") {
    test::TempDir dir("pgm");
    const Tensor img = Tensor::from_data({1, 2, 3}, {0, 1, 2, 3, 4, 5});
    write_pgm(dir.path() / "a.pgm", img);
    const std::string bytes = test::read_file(dir.path() / "a.pgm");
    CHECK(bytes.rfind("P5\n3 2\n255\n", 0) == 0);
    CHECK(static_cast<unsigned char>(bytes[bytes.size() - 6]) == 0);
    CHECK(static_cast<unsigned char>(bytes.back()) == 255);
}

TEST_CASE("toy segmenter finds planted lesions on real data") {
    const Dataset ds = generate_dataset(3, 6, 64, 64, 2);
    const ToySegmenter seg;
    for (const auto& set : ds.sets) {
        const DomainSet p = preprocess(set);
        CHECK(dice(p.lesion_mask, seg.segment(p.images)) > 0.9);
    }
}

TEST_CASE("essentiality study: row layout and ignored domains") {
    const Dataset ds = generate_dataset(3, 2, 32, 32, 5);
    std::vector<DomainSet> pre;
    for (const auto& s : ds.sets) pre.push_back(preprocess(s));
    std::vector<const DomainSet*> sets;
    for (const auto& s : pre) sets.push_back(&s);
    Rng rng(1);
    GeneratorConfig gc;
    gc.base_channels = 2;
    gc.levels = 2;
    const GeneratorNet net(gc, rng);
    const auto rows = essentiality_study(net, sets);
    REQUIRE(rows.size() == kPhantomDomains + 1);
    CHECK(rows[0].label == "Original");
    CHECK(rows[1].label == "T1_Colla");
    CHECK(rows[4].label == "T1Gd_Colla");
    const auto used = ToySegmenter::inputs();
    for (int k = 0; k < kPhantomDomains; ++k) {
        if (std::find(used.begin(), used.end(), k) != used.end()) continue;
        CHECK(rows[static_cast<std::size_t>(k + 1)].per_image == rows[0].per_image);
    }
    const auto again = essentiality_study(net, sets);
    CHECK(again[0].per_image == rows[0].per_image);
    std::ostringstream csv;
    write_essentiality_csv(csv, rows);
    CHECK(csv.str().find("T2F_Colla,T2F,6,") != std::string::npos);
}

TEST_CASE("imputation helpers keep the image shape") {
    const Dataset ds = generate_dataset(3, 1, 32, 32, 5);
    const DomainSet p = preprocess(ds.sets[0]);
    Rng rng(2);
    GeneratorConfig gc;
    gc.base_channels = 2;
    gc.levels = 2;
    const GeneratorNet net(gc, rng);
    const auto all = impute_all_domains(net, p);
    REQUIRE(all.size() == 4);
    CHECK(all[2].shape() == p.images[2].shape());
    CHECK(test::bitwise_equal(all[1], impute_domain(net, p, 1)));
    CHECK_THROWS(impute_domain(net, p, 4));
}

}  // TEST_SUITE
