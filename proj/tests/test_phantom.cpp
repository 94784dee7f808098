// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "collagan/phantom.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace collagan;

namespace {

std::vector<bool> support(const Tensor& t) {
    std::vector<bool> s;
    for (double v : t.data()) s.push_back(v != 0.0);
    return s;
}

}  // namespace

TEST_SUITE("phantom") {

TEST_CASE("same seed gives bitwise-identical datasets") {
    const Dataset a = generate_dataset(4, 3, 32, 32, 5);
    const Dataset b = generate_dataset(4, 3, 32, 32, 5);
    CHECK(a == b);
    const Dataset c = generate_dataset(4, 3, 32, 32, 6);
    CHECK_FALSE(a == c);
}

TEST_CASE("10 subjects x 28 slices split 224/28/28 by subject") {
    const Dataset ds = generate_dataset(10, 28, 32, 32, 1);
    CHECK(ds.sets.size() == 280);
    CHECK(ds.select(Split::kTrain).size() == 224);
    CHECK(ds.select(Split::kVal).size() == 28);
    CHECK(ds.select(Split::kTest).size() == 28);
    std::map<int, std::set<Split>> seen;
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
        for (const auto* set : ds.select(s)) seen[set->subject].insert(s);
    }
    for (const auto& [subject, splits] : seen) CHECK(splits.size() == 1);
}

TEST_CASE("split rule") {
    for (int n : {3, 5, 10, 14, 15, 25}) {
        const auto sp = split_subjects(n, 9);
        const auto held = static_cast<std::ptrdiff_t>(std::max(1L, std::lround(n / 10.0)));
        CHECK(std::count(sp.begin(), sp.end(), Split::kVal) == held);
        CHECK(std::count(sp.begin(), sp.end(), Split::kTest) == held);
    }
    CHECK_THROWS(split_subjects(2, 0));
    CHECK_THROWS(generate_dataset(3, 1, 48, 32, 0));
    CHECK_THROWS(generate_dataset(3, 0, 32, 32, 0));
    CHECK(parse_split("val") == Split::kVal);
    CHECK(split_name(Split::kTest) == "test");
    CHECK_THROWS(parse_split("holdout"));
}

TEST_CASE("exclusive lesions have zero contrast outside their domain") {
    int with_lesion = 0;
    for (int slice = 0; slice < 8; ++slice) {
        const PhantomScene scene = make_scene(1, slice, 8, 3);
        const DomainSet full = render_scene(scene, 64, 64);
        const DomainSet clean = render_scene(scene, 64, 64, {}, false);
        for (int d = 0; d < kPhantomDomains; ++d) {
            if (d == kExclusiveDomain) continue;
            CHECK(test::bitwise_equal(full.images[static_cast<std::size_t>(d)], clean.images[static_cast<std::size_t>(d)]));
        }
        const auto m = full.lesion_mask.data();
        const auto a = full.images[kExclusiveDomain].data();
        const auto b = clean.images[kExclusiveDomain].data();
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i] != 0.0) {
                CHECK(a[i] - b[i] == doctest::Approx(1.0));
            } else {
                CHECK(a[i] == b[i]);
            }
        }
        with_lesion += std::any_of(m.begin(), m.end(), [](double v) { return v != 0.0; });
    }
    CHECK(with_lesion > 0);
}

TEST_CASE("domains share the head support") {
    const Dataset ds = generate_dataset(3, 2, 64, 64, 4);
    for (const auto& set : ds.sets) {
        const auto ref = support(set.images[0]);
        for (const auto& img : set.images) CHECK(support(img) == ref);
    }
}

TEST_CASE("contrast curves are strictly monotone in tissue value") {
    const ContrastTransform c;
    for (int d = 0; d < kPhantomDomains; ++d) {
        double prev = c.apply(d, 0.0, false);
        for (int i = 1; i <= 1000; ++i) {
            const double v = c.apply(d, i / 1000.0, false);
            CHECK(v != prev);
            CHECK((v > prev) == (d != 1));
            prev = v;
        }
    }
}

TEST_CASE("scene primitives stay in the unit square with values in [0,1]") {
    for (int s = 0; s < 5; ++s) {
        const PhantomScene scene = make_scene(s, 3, 10, 8);
        for (const auto& e : scene.primitives) {
            const double r = std::max(e.ax, e.ay);
            CHECK(e.cx - r >= 0.0);
            CHECK(e.cx + r <= 1.0);
            CHECK(e.cy - r >= 0.0);
            CHECK(e.cy + r <= 1.0);
            CHECK(e.value >= 0.0);
            CHECK(e.value <= 1.0);
        }
    }
}

TEST_CASE("normalize gives unit spread over nonzero pixels and keeps zeros") {
    const Dataset ds = generate_dataset(3, 1, 32, 32, 2);
    for (const auto& img : ds.sets[0].images) {
        const Tensor n = normalize(img);
        double sum = 0.0, sq = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n.data().size(); ++i) {
            CHECK((img.data()[i] == 0.0) == (n.data()[i] == 0.0));
            if (n.data()[i] == 0.0) continue;
            sum += n.data()[i];
            ++count;
        }
        const double mean = sum / static_cast<double>(count);
        for (double v : n.data())
            if (v != 0.0) sq += (v - mean) * (v - mean);
        CHECK(std::abs(std::sqrt(sq / static_cast<double>(count)) - 1.0) < 1e-9);
        CHECK(test::bitwise_equal(normalize(n), n));
    }
    CHECK_THROWS_AS(normalize(Tensor::zeros({1, 4, 4})), NumericError);
    CHECK_THROWS_AS(normalize(Tensor::full({1, 4, 4}, 2.0)), NumericError);
}

TEST_CASE("forced flip twice is the identity") {
    const Dataset ds = generate_dataset(3, 1, 32, 32, 3);
    const DomainSet& s = ds.sets[1];
    const DomainSet twice = apply_augment(apply_augment(s, {1.0, true}), {1.0, true});
    for (int d = 0; d < kPhantomDomains; ++d) CHECK(test::bitwise_equal(twice.images[d], s.images[d]));
    CHECK(test::bitwise_equal(twice.lesion_mask, s.lesion_mask));
    const DomainSet once = apply_augment(s, {1.0, true});
    CHECK(once.images[0].at({0, 5, 0}) == s.images[0].at({0, 5, 31}));
}

TEST_CASE("scale draws are uniform on [0.9, 1.1] and flips are fair") {
    Rng rng(12);
    constexpr int kDraws = 100000;
    std::vector<double> u;
    int flips = 0;
    for (int i = 0; i < kDraws; ++i) {
        const AugmentParams p = draw_augment(rng);
        REQUIRE(p.scale >= 0.9);
        REQUIRE(p.scale <= 1.1);
        u.push_back((p.scale - 0.9) / 0.2);
        flips += p.flip;
    }
    std::sort(u.begin(), u.end());
    double ks = 0.0;
    for (int i = 0; i < kDraws; ++i) {
        ks = std::max({ks, std::abs((i + 1.0) / kDraws - u[static_cast<std::size_t>(i)]),
                       std::abs(u[static_cast<std::size_t>(i)] - static_cast<double>(i) / kDraws)});
    }
    CHECK(ks < 1.63 / std::sqrt(static_cast<double>(kDraws)));  // alpha = 0.01
    CHECK(std::abs(flips / static_cast<double>(kDraws) - 0.5) < 4 * std::sqrt(0.25 / kDraws));
}

TEST_CASE("augmentation moves the lesion identically in every domain") {
    const PhantomScene scene = make_scene(2, 4, 8, 7);
    const DomainSet full = render_scene(scene, 64, 64);
    const DomainSet clean = render_scene(scene, 64, 64, {}, false);
    REQUIRE(std::any_of(full.lesion_mask.data().begin(), full.lesion_mask.data().end(), [](double v) { return v > 0; }));
    for (const AugmentParams p : {AugmentParams{0.93, false}, AugmentParams{1.07, true}}) {
        const DomainSet a = apply_augment(full, p);
        const DomainSet b = apply_augment(clean, p);
        for (int d = 0; d < kExclusiveDomain; ++d) CHECK(test::bitwise_equal(a.images[d], b.images[d]));
        const auto diff_a = a.images[kExclusiveDomain].data();
        const auto diff_b = b.images[kExclusiveDomain].data();
        const auto mask = a.lesion_mask.data();
        int checked = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            CHECK((mask[i] == 0.0 || mask[i] == 1.0));
            const double diff = diff_a[i] - diff_b[i];
            if (std::abs(diff - 0.5) < 1e-9) continue;
            CHECK((diff > 0.5) == (mask[i] == 1.0));
            ++checked;
        }
        CHECK(checked > 4000);
        const auto ref = support(a.images[0]);
        for (const auto& img : a.images) CHECK(support(img) == ref);
    }
}

TEST_CASE("unit scale without flip is an exact copy") {
    const Dataset ds = generate_dataset(3, 1, 32, 32, 3);
    const DomainSet same = apply_augment(ds.sets[0], {1.0, false});
    for (int d = 0; d < kPhantomDomains; ++d) CHECK(test::bitwise_equal(same.images[d], ds.sets[0].images[d]));
}

TEST_CASE("stack_domain builds a batch") {
    const Dataset ds = generate_dataset(3, 2, 32, 32, 3);
    const auto train = ds.select(Split::kTrain);
    const Tensor t = stack_domain(train, 2);
    CHECK(t.shape() == Shape{static_cast<std::int64_t>(train.size()), 1, 32, 32});
    CHECK(t.at({1, 0, 16, 16}) == train[1]->images[2].at({0, 16, 16}));
}

TEST_CASE("dataset save and load round-trip bitwise") {
    test::TempDir dir("phantom_rt");
    const Dataset ds = generate_dataset(4, 3, 32, 32, 21);
    save_dataset(ds, dir.path());
    const Dataset back = load_dataset(dir.path());
    CHECK(back == ds);
    const std::string manifest = test::read_file(dir.path() / "manifest.txt");
    CHECK(manifest.find("T1 T2 T2F T1Gd") != std::string::npos);
    CHECK(manifest.find("seed 21") != std::string::npos);
}

TEST_CASE("corrupt subject files and version mismatches are rejected") {
    test::TempDir dir("phantom_bad");
    const Dataset ds = generate_dataset(3, 1, 32, 32, 22);
    save_dataset(ds, dir.path());
    const std::string manifest = test::read_file(dir.path() / "manifest.txt");

    {
        std::string bumped = manifest;
        bumped.replace(bumped.find("collagan-dataset 1"), 18, "collagan-dataset 2");
        std::ofstream(dir.path() / "manifest.txt") << bumped;
        CHECK_THROWS_WITH_AS(load_dataset(dir.path()), doctest::Contains("version"), FormatError);
        std::ofstream(dir.path() / "manifest.txt") << manifest;
    }
    CHECK_NOTHROW(load_dataset(dir.path()));
    for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
        if (entry.path().extension() != ".snap") continue;
        std::fstream f(entry.path(), std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        break;
    }
    CHECK_THROWS_AS(load_dataset(dir.path()), FormatError);
    CHECK_THROWS_AS(load_dataset(dir.path() / "nowhere"), FormatError);
}

}  // TEST_SUITE
