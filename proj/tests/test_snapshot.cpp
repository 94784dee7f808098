// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include "collagan/snapshot.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace collagan;

namespace {

std::vector<NamedTensor> sample_tensors() {
    Rng rng(11);
    return {{"a", test::uniform_tensor({2, 3}, rng)},
            {"b.weight", test::uniform_tensor({1, 2, 3, 4}, rng)},
            {"scalar", Tensor::scalar(-0.0)},
            {"empty", Tensor::zeros({0, 3})}};
}

}  // namespace

TEST_SUITE("snapshot") {

TEST_CASE("write then read round-trips bitwise") {
    const auto tensors = sample_tensors();
    std::stringstream ss;
    write_snapshot(ss, tensors);
    const auto back = read_snapshot(ss);
    REQUIRE(back.size() == tensors.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].name == tensors[i].name);
        CHECK(test::bitwise_equal(back[i].tensor, tensors[i].tensor));
    }
}

TEST_CASE("layout starts with magic and version") {
    std::stringstream ss;
    write_snapshot(ss, sample_tensors());
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 8) == "CLGNSNAP");
    CHECK(static_cast<unsigned char>(bytes[8]) == kSnapshotVersion);
}

TEST_CASE("bad magic, bad version and truncation are rejected") {
    std::stringstream ss;
    write_snapshot(ss, sample_tensors());
    const std::string good = ss.str();

    std::string bad = good;
    bad[0] = 'X';
    std::istringstream in1(bad);
    CHECK_THROWS_AS(read_snapshot(in1), FormatError);

    bad = good;
    bad[8] = 99;
    std::istringstream in2(bad);
    CHECK_THROWS_WITH_AS(read_snapshot(in2), doctest::Contains("version"), FormatError);

    std::istringstream in3(good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(read_snapshot(in3), FormatError);
}

TEST_CASE("assign_from_snapshot copies by name and checks shapes") {
    const auto src = sample_tensors();
    std::vector<NamedTensor> dst = {{"b.weight", Tensor::zeros({1, 2, 3, 4})}, {"a", Tensor::zeros({2, 3})}};
    assign_from_snapshot(dst, src);
    CHECK(test::bitwise_equal(dst[0].tensor, src[1].tensor));
    CHECK(test::bitwise_equal(dst[1].tensor, src[0].tensor));

    std::vector<NamedTensor> wrong = {{"a", Tensor::zeros({3, 2})}};
    CHECK_THROWS_AS(assign_from_snapshot(wrong, src), FormatError);
    std::vector<NamedTensor> missing = {{"zzz", Tensor::zeros({1})}};
    CHECK_THROWS_AS(assign_from_snapshot(missing, src), FormatError);
}

TEST_CASE("file round-trip") {
    test::TempDir dir("snapshot");
    const auto tensors = sample_tensors();
    save_snapshot(dir.path() / "t.snap", tensors);
    const auto back = load_snapshot(dir.path() / "t.snap");
    REQUIRE(back.size() == tensors.size());
    CHECK(test::bitwise_equal(back[1].tensor, tensors[1].tensor));
    CHECK_THROWS_AS(load_snapshot(dir.path() / "missing.snap"), FormatError);
}

}  // TEST_SUITE
