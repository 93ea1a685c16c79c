#include <cmath>

#include "doctest.h"
#include "mvdetr/camera.hpp"

using namespace mvdetr;

TEST_CASE("unproject: principal point, K-inverse oracle, zero-depth filtering") {
    CameraIntrinsics k{500, 500, 320, 240, 640, 480};
    Vec3 p = k.unproject_pixel(320, 240, 1.7);
    CHECK(p.x == 0.0);
    CHECK(p.y == 0.0);
    CHECK(p.z == 1.7);

    Vec3 q = k.unproject_pixel(420, 340, 2.0);
    CHECK(std::abs(q.x - 0.4) < 1e-12);
    CHECK(std::abs(q.y - 0.4) < 1e-12);
    CHECK(q.z == 2.0);

    DepthFrame depth;
    depth.width = 4;
    depth.height = 3;
    depth.depth.assign(12, 0.0f);
    depth.depth[5] = 2.5f;
    ColorFrame color;
    color.width = 4;
    color.height = 3;
    color.rgb.assign(36, 0.25f);
    CameraIntrinsics k2{110, 110, 2, 1.5, 4, 3};
    auto cloud = unproject(depth, color, k2);
    CHECK(cloud.points.size() == 1);
    CHECK(cloud.points[0].position[2] == 2.5f);
    CHECK(cloud.points[0].pixel[0] == 1);  // (u,v) = (col,row)
    CHECK(cloud.points[0].pixel[1] == 1);
    CHECK(cloud.points[0].color[0] == 0.25f);

    depth.depth[5] = 0.0f;
    CHECK_THROWS_AS(unproject(depth, color, k2), ContractError);
}

TEST_CASE("unproject size equals strictly-positive depth count") {
    DepthFrame depth;
    depth.width = 8;
    depth.height = 8;
    Rng rng(21);
    int positive = 0;
    depth.depth.resize(64);
    for (auto& v : depth.depth) {
        bool on = rng.uniform() < 0.5;
        v = on ? static_cast<float>(rng.uniform(0.5, 3.0)) : 0.0f;
        positive += on;
    }
    ColorFrame color;
    color.width = 8;
    color.height = 8;
    color.rgb.assign(64 * 3, 0.5f);
    CameraIntrinsics k{110, 110, 4, 4, 8, 8};
    CHECK(unproject(depth, color, k).points.size() == static_cast<std::size_t>(positive));
}

TEST_CASE("intrinsics validation") {
    CameraIntrinsics bad{0, 110, 4, 4, 8, 8};
    CHECK_THROWS_AS(bad.validate(), ContractError);
    CameraIntrinsics bad2{110, 110, 9, 4, 8, 8};  // cx outside image
    CHECK_THROWS_AS(bad2.validate(), ContractError);
}

TEST_CASE("sample_points: permutation at n=|cloud|, determinism, 3-sigma uniformity") {
    ColoredPointCloud cloud;
    for (int i = 0; i < 40; ++i) {
        CloudPoint p{};
        p.position[0] = static_cast<float>(i);
        cloud.points.push_back(p);
    }
    CHECK_THROWS_AS(sample_points(cloud, 0, 1), ContractError);

    auto perm = sample_points(cloud, 40, 9);
    std::vector<int> seen(40, 0);
    for (const auto& p : perm.points) ++seen[static_cast<int>(p.position[0])];
    for (int c : seen) CHECK(c == 1);

    auto one_a = sample_points(cloud, 1, 77);
    auto one_b = sample_points(cloud, 1, 77);
    CHECK(one_a.points[0].position[0] == one_b.points[0].position[0]);

    // selection frequency across seeds: binomial(trials, n/N) within 3 sigma
    const int trials = 1000, n = 4, N = 40;
    std::vector<int> freq(N, 0);
    for (int s = 0; s < trials; ++s)
        for (const auto& p : sample_points(cloud, n, static_cast<std::uint64_t>(s)).points)
            ++freq[static_cast<int>(p.position[0])];
    double mean = trials * static_cast<double>(n) / N;
    double sigma = std::sqrt(trials * (static_cast<double>(n) / N) * (1.0 - static_cast<double>(n) / N));
    int outliers = 0;
    for (int c : freq)
        if (std::abs(c - mean) > 3 * sigma) ++outliers;
    // allow a single 3-sigma excursion across 40 bins
    CHECK(outliers <= 1);
}

TEST_CASE("sample_points pads with replacement when the cloud is small") {
    ColoredPointCloud cloud;
    CloudPoint p{};
    cloud.points.assign(3, p);
    auto out = sample_points(cloud, 10, 5);
    CHECK(out.points.size() == 10);
}
