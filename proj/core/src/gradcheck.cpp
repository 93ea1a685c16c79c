#include "mvdetr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mvdetr {

namespace {

// Reduced widths keep the FD sweep well under the time budget while still
// touching every op in the pipeline.
ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.geometry.d = 8;
    cfg.geometry.k = 3;
    cfg.geometry.layers = 2;
    cfg.visual.width1 = 4;
    cfg.visual.width2 = 8;
    cfg.visual.heads = 2;
    cfg.decoder.num_queries = 4;
    cfg.decoder.layers = 2;
    cfg.decoder.content_dim = 16;
    cfg.decoder.heads = 2;
    cfg.decoder.rpe_hidden = 8;
    cfg.decoder.ffn_hidden = 32;
    cfg.decoder.num_classes = 3;
    cfg.sample_points = 32;
    return cfg;
}

SceneInput random_input(const ModelConfig& cfg, Rng& rng, int width, int height) {
    SceneInput input;
    int n = cfg.sample_points;
    input.positions.reserve(static_cast<std::size_t>(n));
    input.pixels.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        input.positions.push_back(
            {rng.uniform(-1.2, 1.2), rng.uniform(-0.9, 0.9), rng.uniform(1.0, 4.0)});
        input.pixels.emplace_back(rng.uniform(1.0, width - 2.0), rng.uniform(1.0, height - 2.0));
    }
    input.neighbors = knn(input.positions, cfg.geometry.k);
    input.color.width = width;
    input.color.height = height;
    input.color.rgb.resize(static_cast<std::size_t>(width) * height * 3);
    for (auto& v : input.color.rgb) v = static_cast<float>(rng.uniform());
    return input;
}

std::vector<Box3D> random_gts(Rng& rng, int num_classes) {
    std::vector<Box3D> gts(2);
    for (std::size_t i = 0; i < gts.size(); ++i) {
        Box3D& b = gts[i];
        b.center = {rng.uniform(-0.8, 0.8), rng.uniform(-0.5, 0.5), rng.uniform(1.5, 3.5)};
        b.size = {rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9)};
        b.yaw = rng.uniform(-2.5, 2.5);
        b.class_id = static_cast<int>(rng.uniform_index(static_cast<std::uint32_t>(num_classes)));
    }
    return gts;
}

std::string module_of(const std::string& param_name) {
    auto dot = param_name.find('.');
    return dot == std::string::npos ? param_name : param_name.substr(0, dot);
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, int elements_per_tensor, double h) {
    ModelConfig cfg = tiny_config();
    MvDetr<double> model(cfg, Rng::substream_seed(seed, "gradcheck-init"));
    Rng rng = Rng::substream(seed, "gradcheck-data");
    SceneInput input = random_input(cfg, rng, 16, 12);
    std::vector<Box3D> gts = random_gts(rng, cfg.decoder.num_classes);
    LossWeights weights;

    // Freeze the assignment from an initial forward pass so every FD
    // probe differentiates the same objective.
    Assignment assign;
    {
        auto layers = model.forward(input, BnMode::train);
        auto cost = match_cost(to_pred_boxes(layers.back()), gts, weights.match());
        assign = hungarian(cost, cfg.decoder.num_queries, static_cast<int>(gts.size()));
    }

    auto eval_loss = [&]() -> TensorT<double> {
        auto layers = model.forward(input, BnMode::train);
        TensorT<double> sum;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto bd = layer_loss(layers[l], gts, assign, weights);
            sum = l == 0 ? bd.total : add(sum, bd.total);
        }
        return mul_scalar(sum, 1.0 / static_cast<double>(layers.size()));
    };

    // Analytic gradients of the frozen objective.
    model.params().zero_grad();
    backward(eval_loss());
    std::vector<std::vector<double>> analytic;
    for (const auto& e : model.params().entries())
        analytic.push_back(e.trainable ? e.tensor.node().grad : std::vector<double>{});

    GradCheckReport report;
    auto module_slot = [&](const std::string& name) -> GradCheckModule& {
        for (auto& m : report.modules)
            if (m.name == name) return m;
        report.modules.push_back({name, 0, 0});
        return report.modules.back();
    };

    Rng pick = Rng::substream(seed, "gradcheck-elements");
    auto& entries = model.params().entries();
    for (std::size_t ei = 0; ei < entries.size(); ++ei) {
        auto& e = entries[ei];
        if (!e.trainable) continue;
        auto& val = e.tensor.node().value;
        int n = static_cast<int>(val.size());
        std::vector<int> idx;
        if (n <= elements_per_tensor) {
            for (int i = 0; i < n; ++i) idx.push_back(i);
        } else {
            while (static_cast<int>(idx.size()) < elements_per_tensor) {
                int c = static_cast<int>(pick.uniform_index(static_cast<std::uint32_t>(n)));
                if (std::find(idx.begin(), idx.end(), c) == idx.end()) idx.push_back(c);
            }
        }
        GradCheckModule& mod = module_slot(module_of(e.name));
        for (int i : idx) {
            double saved = val[static_cast<std::size_t>(i)];
            val[static_cast<std::size_t>(i)] = saved + h;
            double fp = eval_loss().item();
            val[static_cast<std::size_t>(i)] = saved - h;
            double fm = eval_loss().item();
            val[static_cast<std::size_t>(i)] = saved;
            double fd = (fp - fm) / (2 * h);
            double an = analytic[ei][static_cast<std::size_t>(i)];
            double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            mod.max_rel_err = std::max(mod.max_rel_err, rel);
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++mod.checked;
            ++report.checked;
        }
    }
    return report;
}

}  // namespace mvdetr
