#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mvdetr/nn.hpp"

using namespace mvdetr;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

ParamStore<float> make_store(std::uint64_t seed) {
    ParamStore<float> ps(seed);
    ps.parameter("a.weight", {3, 4}, InitSpec::uniform_fan_in, 3);
    ps.parameter("a.bias", {4}, InitSpec::zeros);
    ps.parameter("b.gamma", {1, 5}, InitSpec::ones);
    return ps;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise exact") {
    auto path = tmp_path("mvdetr_ckpt_roundtrip.mvw");
    auto src = make_store(101);
    save_checkpoint(path, src);
    auto dst = make_store(202);  // different init values, same names/shapes
    load_checkpoint(path, dst);
    for (const auto& e : src.entries()) {
        const auto* o = dst.find(e.name);
        REQUIRE(o != nullptr);
        REQUIRE(o->tensor.numel() == e.tensor.numel());
        for (std::size_t i = 0; i < e.tensor.numel(); ++i)
            CHECK(o->tensor.node().value[i] == e.tensor.node().value[i]);
    }
    std::remove(path.c_str());
}

TEST_CASE("strict load rejects missing and extra parameters") {
    auto path = tmp_path("mvdetr_ckpt_names.mvw");
    auto src = make_store(1);
    save_checkpoint(path, src);

    ParamStore<float> extra(2);
    extra.parameter("a.weight", {3, 4}, InitSpec::uniform_fan_in, 3);
    extra.parameter("a.bias", {4}, InitSpec::zeros);
    extra.parameter("b.gamma", {1, 5}, InitSpec::ones);
    extra.parameter("c.new", {2}, InitSpec::zeros);  // not in the file
    CHECK_THROWS_AS(load_checkpoint(path, extra), IoError);

    ParamStore<float> fewer(3);
    fewer.parameter("a.weight", {3, 4}, InitSpec::uniform_fan_in, 3);  // file has extras
    CHECK_THROWS_AS(load_checkpoint(path, fewer), IoError);
    std::remove(path.c_str());
}

TEST_CASE("partial load fills the intersection and leaves the rest alone") {
    auto path = tmp_path("mvdetr_ckpt_partial.mvw");
    auto src = make_store(7);
    save_checkpoint(path, src);

    ParamStore<float> dst(8);
    dst.parameter("a.weight", {3, 4}, InitSpec::uniform_fan_in, 3);
    auto untouched = dst.parameter("c.new", {2, 2}, InitSpec::uniform_fan_in, 3);
    std::vector<float> before = untouched.node().value;
    load_checkpoint(path, dst, /*partial=*/true);
    const auto* w = dst.find("a.weight");
    const auto* sw = src.find("a.weight");
    for (std::size_t i = 0; i < w->tensor.numel(); ++i)
        CHECK(w->tensor.node().value[i] == sw->tensor.node().value[i]);
    CHECK(untouched.node().value == before);
    std::remove(path.c_str());
}

TEST_CASE("shape mismatch is rejected even in partial mode") {
    auto path = tmp_path("mvdetr_ckpt_shape.mvw");
    auto src = make_store(9);
    save_checkpoint(path, src);
    ParamStore<float> dst(10);
    dst.parameter("a.weight", {4, 3}, InitSpec::uniform_fan_in, 3);  // transposed shape
    CHECK_THROWS_AS(load_checkpoint(path, dst, true), IoError);
    std::remove(path.c_str());
}

TEST_CASE("inspect lists names and shapes sorted by name") {
    auto path = tmp_path("mvdetr_ckpt_inspect.mvw");
    save_checkpoint(path, make_store(11));
    auto listing = inspect_checkpoint(path);
    REQUIRE(listing.size() == 3);
    CHECK(listing[0].first == "a.bias");
    CHECK(listing[0].second == std::vector<int>{4});
    CHECK(listing[1].first == "a.weight");
    CHECK(listing[1].second == std::vector<int>{3, 4});
    CHECK(listing[2].first == "b.gamma");
    std::remove(path.c_str());
}

TEST_CASE("corrupt files raise IoError") {
    auto path = tmp_path("mvdetr_ckpt_bad.mvw");
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f << "not a checkpoint";
    }
    ParamStore<float> ps(0);
    CHECK_THROWS_AS(load_checkpoint(path, ps), IoError);
    CHECK_THROWS_AS(inspect_checkpoint(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(path, ps), IoError);
}
