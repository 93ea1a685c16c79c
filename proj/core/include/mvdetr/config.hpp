#pragma once

#include <string>
#include <vector>

#include "mvdetr/loss.hpp"
#include "mvdetr/model.hpp"

namespace mvdetr {

struct TrainConfig {
    int epochs = 200;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip_norm = 1.0;
    double lr_decay = 1.0;  // multiplicative per-epoch factor
    int batch_size = 2;
    // Fraction of epochs trained with batch-statistic normalization; the
    // remaining epochs freeze the running stats and train against them,
    // so the optimized network matches the eval-time forward pass.
    double bn_freeze = 0.5;
    int eval_every = 25;       // epochs between validation AP evaluations
    int checkpoint_every = 50;
    double score_thresh = 0.3;
    int threads = 1;
};

// One source of truth per run: every module config plus seeds, parsed
// from a single JSON document. Unknown keys are rejected; the resolved
// config is echoed into the run directory.
struct RunConfig {
    std::uint64_t seed = 0;
    CameraIntrinsics camera{110, 110, 64, 48, 128, 96};
    GeneratorConfig generator = GeneratorConfig::defaults();
    ModelConfig model;
    LossWeights loss;
    TrainConfig train;

    // decoder.num_classes always mirrors the generator class count
    void sync_derived() { model.decoder.num_classes = static_cast<int>(generator.classes.size()); }
};

// Parses a config file; empty path yields the defaults. `overrides` are
// dotted-path assignments like "model.decoder.layers=2" applied after the
// file. Throws ConfigError with key/position diagnostics.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

RunConfig parse_run_config_json(const std::string& text, const std::vector<std::string>& overrides = {});

// Resolved config as canonical JSON (the echo format).
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace mvdetr
