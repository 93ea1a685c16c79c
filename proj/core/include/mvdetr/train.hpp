#pragma once

#include <functional>
#include <optional>

#include "mvdetr/config.hpp"
#include "mvdetr/evaluation.hpp"

namespace mvdetr {

// Adam with global-norm gradient clipping over a parameter store.
class Adam {
public:
    Adam(ParamStore<float>& params, double beta1, double beta2, double eps, double clip_norm);

    void step(double lr);

private:
    ParamStore<float>& params_;
    double beta1_, beta2_, eps_, clip_norm_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainSample {
    std::string id;
    SceneInput input;
    std::vector<Box3D> gts;
};

struct EpochStats {
    int epoch = 0;
    double classification = 0, center = 0, size = 0, yaw = 0, iou = 0, total = 0;
    double ap25 = -1, ap50 = -1;  // -1 when not evaluated this epoch
    double wall_ms = 0;
};

struct TrainOptions {
    std::string out_dir;               // empty: no checkpoints/metrics on disk
    bool mask_visual = false;          // geometry-only ablation
    std::optional<double> stop_at_ap50;  // early stop once val AP50 reaches this
    bool stable_output = false;        // zero wall_ms in metrics.jsonl
    std::function<void(const EpochStats&)> on_epoch;
    // Optional point-resampling augmentation: called once per (sample, epoch)
    // before the forward pass and must return a fresh SceneInput for the
    // sample (e.g. a new farthest-point draw). Null: the stored input is
    // reused every epoch.
    std::function<SceneInput(const TrainSample&, int epoch)> resample;
};

// Loads and preprocesses a generated dataset directory into train and
// validation sample lists (manifest split).
std::pair<std::vector<TrainSample>, std::vector<TrainSample>> load_train_samples(
    const std::string& data_dir, const RunConfig& cfg);

EvalReport evaluate_model(const MvDetr<float>& model, const std::vector<TrainSample>& samples,
                          double score_thresh, bool mask_visual = false);

// Deterministic training loop: per-epoch seeded shuffling, batch gradient
// averaging in sample order, Adam update, periodic validation AP.
// Throws NumericError on the first non-finite value, naming the op.
std::vector<EpochStats> train_loop(MvDetr<float>& model, const std::vector<TrainSample>& train_set,
                                   const std::vector<TrainSample>& val_set, const RunConfig& cfg,
                                   const TrainOptions& opts = {});

}  // namespace mvdetr
