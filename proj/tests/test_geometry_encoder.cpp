#include <cmath>

#include "doctest.h"
#include "fd_check.hpp"
#include "mvdetr/geometry_encoder.hpp"

using namespace mvdetr;
using namespace mvdetr::testutil;

TEST_CASE("knn: collinear oracle, tie-break, k=N-1, contract") {
    std::vector<std::array<double, 3>> pts{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
    auto nb = knn(pts, 1);
    CHECK(nb == std::vector<int>{1, 0, 1});

    std::vector<std::array<double, 3>> same(4, {1, 1, 1});
    auto nb2 = knn(same, 2);
    CHECK(nb2 == std::vector<int>{1, 2, 0, 2, 0, 1, 0, 1});

    Rng rng(3);
    std::vector<std::array<double, 3>> rnd(6);
    for (auto& p : rnd) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    auto nb3 = knn(rnd, 5);
    for (int i = 0; i < 6; ++i) {
        std::vector<int> row(nb3.begin() + i * 5, nb3.begin() + (i + 1) * 5);
        std::sort(row.begin(), row.end());
        std::vector<int> expect;
        for (int j = 0; j < 6; ++j)
            if (j != i) expect.push_back(j);
        CHECK(row == expect);
    }

    CHECK_THROWS_AS(knn(pts, 3), ContractError);  // requires k < N
}

TEST_CASE("point_embed: shape, zero-weight bias path, gradient") {
    GeometryEncoderConfig cfg;
    cfg.k = 2;
    ParamStore<double> ps(5);
    GeometryEncoder<double> enc(ps, cfg);

    Rng rng(7);
    auto xyz = rand_tensor({6, 3}, rng);
    auto out = enc.point_embed(xyz, BnMode::train);
    CHECK(out.rows() == 6);
    CHECK(out.cols() == 16);

    // zero weights: every row becomes gelu(bn(b)) and rows are identical
    auto* w = ps.find("geometry.embed.weight");
    std::fill(w->tensor.node().value.begin(), w->tensor.node().value.end(), 0.0);
    auto* b = ps.find("geometry.embed.bias");
    for (std::size_t i = 0; i < b->tensor.numel(); ++i)
        b->tensor.node().value[i] = 0.1 * static_cast<double>(i);
    auto out2 = enc.point_embed(xyz, BnMode::eval);
    for (int i = 1; i < 6; ++i)
        for (int j = 0; j < 16; ++j) CHECK(out2.at(i, j) == out2.at(0, j));

    ParamStore<double> ps2(6);
    GeometryEncoder<double> enc2(ps2, cfg);
    std::vector<TensorT<double>> leaves;
    for (auto& e : ps2.entries())
        if (e.trainable) leaves.push_back(e.tensor);
    CHECK(fd_check(leaves, [&] { return sum_all(mul(enc2.point_embed(xyz, BnMode::train),
                                                    enc2.point_embed(xyz, BnMode::train))); }) < 1e-4);
}

TEST_CASE("communicate: identical neighbors collapse the max; row shuffles are no-ops") {
    GeometryEncoderConfig cfg;
    cfg.k = 3;
    cfg.layers = 1;
    ParamStore<double> ps(11);
    GeometryEncoder<double> enc(ps, cfg);
    Rng rng(13);

    // all features identical -> every edge is [f; 0]; output rows equal
    auto base = rand_tensor({1, 16}, rng);
    std::vector<double> rep;
    for (int i = 0; i < 4; ++i)
        rep.insert(rep.end(), base.data().begin(), base.data().end());
    auto f_same = TensorT<double>::from_data({4, 16}, rep);
    std::vector<int> idx{1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 2};
    auto out = enc.communicate(f_same, idx, 0, BnMode::eval);
    for (int i = 1; i < 4; ++i)
        for (int j = 0; j < 16; ++j) CHECK(out.at(i, j) == out.at(0, j));

    // shuffling a neighbor row never changes the output (max is order-free)
    auto f = rand_tensor({4, 16}, rng);
    auto out_a = enc.communicate(f, idx, 0, BnMode::eval);
    std::vector<int> idx2 = idx;
    std::swap(idx2[0], idx2[2]);
    std::swap(idx2[7], idx2[8]);
    auto out_b = enc.communicate(f, idx2, 0, BnMode::eval);
    for (std::size_t i = 0; i < out_a.numel(); ++i) CHECK(out_a.data()[i] == out_b.data()[i]);
}

TEST_CASE("communicate matches a straight-line re-computation, N=4") {
    GeometryEncoderConfig cfg;
    cfg.k = 2;
    cfg.layers = 1;
    ParamStore<double> ps(17);
    GeometryEncoder<double> enc(ps, cfg);
    Rng rng(19);
    auto f = rand_tensor({4, 16}, rng);
    std::vector<int> idx{1, 2, 0, 3, 3, 1, 2, 0};
    auto got = enc.communicate(f, idx, 0, BnMode::eval);

    const auto& w = ps.find("geometry.comm0.weight")->tensor;
    const auto& b = ps.find("geometry.comm0.bias")->tensor;
    const auto& gm = ps.find("geometry.comm0.bn.gamma")->tensor;
    const auto& bt = ps.find("geometry.comm0.bn.beta")->tensor;
    const auto& rm = ps.find("geometry.comm0.bn.running_mean")->tensor;
    const auto& rv = ps.find("geometry.comm0.bn.running_var")->tensor;

    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < 16; ++c) {
            double best = -1e300;
            for (int jj = 0; jj < 2; ++jj) {
                int j = idx[static_cast<std::size_t>(i) * 2 + jj];
                // edge = [f_i ; f_j - f_i], then linear, bn(eval), gelu
                double acc = b.data()[static_cast<std::size_t>(c)];
                for (int a = 0; a < 16; ++a) {
                    acc += f.at(i, a) * w.at(a, c);
                    acc += (f.at(j, a) - f.at(i, a)) * w.at(16 + a, c);
                }
                double norm = (acc - rm.data()[static_cast<std::size_t>(c)]) /
                              std::sqrt(rv.data()[static_cast<std::size_t>(c)] + 1e-5);
                double y = norm * gm.data()[static_cast<std::size_t>(c)] +
                           bt.data()[static_cast<std::size_t>(c)];
                double act = y * 0.5 * (1.0 + std::erf(y / std::sqrt(2.0)));
                best = std::max(best, act);
            }
            CHECK(got.at(i, c) == doctest::Approx(best).epsilon(1e-10));
        }
    }
}

TEST_CASE("encode is equivariant to point reordering") {
    GeometryEncoderConfig cfg;
    cfg.k = 3;
    ParamStore<float> ps(23);
    GeometryEncoder<float> enc(ps, cfg);
    Rng rng(29);
    int n = 12;
    std::vector<std::array<double, 3>> pts(static_cast<std::size_t>(n));
    for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};

    auto to_tensor = [](const std::vector<std::array<double, 3>>& v) {
        std::vector<float> d;
        for (const auto& p : v)
            for (double x : p) d.push_back(static_cast<float>(x));
        return Tensor::from_data({static_cast<int>(v.size()), 3}, d);
    };
    auto out1 = enc.encode(to_tensor(pts), knn(pts, cfg.k), BnMode::eval);

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle(31);
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[shuffle.uniform_index(static_cast<std::uint32_t>(i))]);
    std::vector<std::array<double, 3>> pts2(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pts2[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] =
        pts[static_cast<std::size_t>(i)];
    auto out2 = enc.encode(to_tensor(pts2), knn(pts2, cfg.k), BnMode::eval);

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg.d; ++j)
            CHECK(out1.at(i, j) ==
                      doctest::Approx(out2.at(perm[static_cast<std::size_t>(i)], j)).epsilon(1e-5));
}

TEST_CASE("end-to-end encoder gradient vs finite differences") {
    GeometryEncoderConfig cfg;
    cfg.d = 8;
    cfg.k = 2;
    ParamStore<double> ps(37);
    GeometryEncoder<double> enc(ps, cfg);
    Rng rng(41);
    auto xyz = rand_tensor({6, 3}, rng);
    std::vector<std::array<double, 3>> pts(6);
    for (int i = 0; i < 6; ++i) pts[static_cast<std::size_t>(i)] = {xyz.at(i, 0), xyz.at(i, 1), xyz.at(i, 2)};
    auto idx = knn(pts, 2);
    std::vector<TensorT<double>> leaves{xyz};
    for (auto& e : ps.entries())
        if (e.trainable) leaves.push_back(e.tensor);
    CHECK(fd_check(leaves, [&] {
              auto y = enc.encode(xyz, idx, BnMode::train);
              return sum_all(mul(y, y));
          }) < 1e-4);
}
