#include <benchmark/benchmark.h>

#include "mvdetr/loss.hpp"
#include "mvdetr/model.hpp"

using namespace mvdetr;

namespace {

SceneInput make_input(int n, int k, int w, int h) {
    Rng rng(7);
    SceneInput input;
    for (int i = 0; i < n; ++i) {
        input.positions.push_back(
            {rng.uniform(-2.0, 2.0), rng.uniform(-1.5, 1.5), rng.uniform(0.5, 5.0)});
        input.pixels.emplace_back(rng.uniform(0.0, w - 1.0), rng.uniform(0.0, h - 1.0));
    }
    input.neighbors = knn(input.positions, k);
    input.color.width = w;
    input.color.height = h;
    input.color.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (auto& v : input.color.rgb) v = static_cast<float>(rng.uniform());
    return input;
}

void bm_forward(benchmark::State& state) {
    ModelConfig cfg;
    cfg.sample_points = static_cast<int>(state.range(0));
    MvDetr<float> model(cfg, 1);
    auto input = make_input(cfg.sample_points, cfg.geometry.k, 128, 96);
    for (auto _ : state) {
        auto layers = model.forward(input, BnMode::eval);
        benchmark::DoNotOptimize(layers.back().logits.data().data());
    }
}
BENCHMARK(bm_forward)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

void bm_knn(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Rng rng(3);
    std::vector<std::array<double, 3>> pts(static_cast<std::size_t>(n));
    for (auto& p : pts) p = {rng.uniform(), rng.uniform(), rng.uniform()};
    for (auto _ : state) {
        auto nb = knn(pts, 5);
        benchmark::DoNotOptimize(nb.data());
    }
}
BENCHMARK(bm_knn)->Arg(512)->Arg(2048);

void bm_matmul(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Rng rng(5);
    std::vector<float> da(static_cast<std::size_t>(n) * n), db = da;
    for (auto& v : da) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : db) v = static_cast<float>(rng.uniform(-1, 1));
    auto a = Tensor::from_data({n, n}, da), b = Tensor::from_data({n, n}, db);
    for (auto _ : state) {
        auto c = matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(256);

void bm_hungarian(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Rng rng(9);
    std::vector<double> cost(static_cast<std::size_t>(n) * n);
    for (auto& v : cost) v = rng.uniform();
    for (auto _ : state) {
        auto a = hungarian(cost, n, n);
        benchmark::DoNotOptimize(a.pairs.data());
    }
}
BENCHMARK(bm_hungarian)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
