#include "mvdetr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mvdetr/scene_io.hpp"

namespace mvdetr {

Adam::Adam(ParamStore<float>& params, double beta1, double beta2, double eps, double clip_norm)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps), clip_norm_(clip_norm) {
    for (const auto& e : params_.entries()) {
        if (!e.trainable) continue;
        m_.emplace_back(e.tensor.numel(), 0.0);
        v_.emplace_back(e.tensor.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    // global gradient norm, accumulated in double
    double sq = 0;
    for (const auto& e : params_.entries()) {
        if (!e.trainable) continue;
        for (float g : e.tensor.node().grad) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    double scale = (clip_norm_ > 0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;

    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t slot = 0;
    for (auto& e : params_.entries()) {
        if (!e.trainable) continue;
        auto& m = m_[slot];
        auto& v = v_[slot];
        auto& val = e.tensor.node().value;
        const auto& grad = e.tensor.node().grad;
        for (std::size_t i = 0; i < val.size(); ++i) {
            double g = static_cast<double>(grad[i]) * scale;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            double mh = m[i] / bc1, vh = v[i] / bc2;
            val[i] = static_cast<float>(static_cast<double>(val[i]) -
                                        lr * mh / (std::sqrt(vh) + eps_));
        }
        ++slot;
    }
}

std::pair<std::vector<TrainSample>, std::vector<TrainSample>> load_train_samples(
    const std::string& data_dir, const RunConfig& cfg) {
    Manifest m = read_manifest(data_dir + "/manifest.json");
    auto load = [&](const std::vector<std::string>& ids) {
        std::vector<TrainSample> out;
        out.reserve(ids.size());
        for (const auto& id : ids) {
            LoadedScene ls = load_scene_dir(data_dir + "/scenes/" + id);
            TrainSample s;
            s.id = id;
            s.input = preprocess_scene(ls.color, ls.depth, ls.scene.intrinsics,
                                       cfg.model.sample_points, cfg.model.geometry.k,
                                       Rng::substream_seed(cfg.seed, "sample:" + id));
            for (const auto& sb : ls.scene.boxes) s.gts.push_back(sb.box);
            out.push_back(std::move(s));
        }
        return out;
    };
    return {load(m.train_ids), load(m.val_ids)};
}

EvalReport evaluate_model(const MvDetr<float>& model, const std::vector<TrainSample>& samples,
                          double score_thresh, bool mask_visual) {
    std::vector<Detection> dets;
    std::vector<GtBox> gts;
    for (const auto& s : samples) {
        auto layers = model.forward(s.input, BnMode::eval, mask_visual);
        for (const auto& b : predict(layers.back(), score_thresh)) dets.push_back({s.id, b});
        for (const auto& g : s.gts) gts.push_back({s.id, g});
    }
    return evaluate(dets, gts);
}

std::vector<EpochStats> train_loop(MvDetr<float>& model, const std::vector<TrainSample>& train_set,
                                   const std::vector<TrainSample>& val_set, const RunConfig& cfg,
                                   const TrainOptions& opts) {
    if (train_set.empty()) throw ContractError("train_loop: empty training set");
    const TrainConfig& tc = cfg.train;
    Adam opt(model.params(), tc.beta1, tc.beta2, tc.eps, tc.clip_norm);

    std::ofstream metrics;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        metrics.open(opts.out_dir + "/metrics.jsonl", std::ios::trunc);
        if (!metrics) throw IoError("cannot open metrics.jsonl in " + opts.out_dir);
    }

    bool prev_checks = g_finite_checks;
    g_finite_checks = true;
    std::vector<EpochStats> history;
    std::vector<int> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    try {
        for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
            auto t0 = std::chrono::steady_clock::now();
            // seeded per-epoch shuffle (Fisher-Yates)
            Rng rng = Rng::substream(cfg.seed, "epoch:" + std::to_string(epoch));
            for (std::size_t i = order.size(); i > 1; --i) {
                std::size_t j = rng.uniform_index(static_cast<std::uint32_t>(i));
                std::swap(order[i - 1], order[j]);
            }

            double lr = tc.lr * std::pow(tc.lr_decay, static_cast<double>(epoch - 1));
            int freeze_after = static_cast<int>(tc.bn_freeze * static_cast<double>(tc.epochs));
            BnMode bn_mode = epoch > freeze_after ? BnMode::eval : BnMode::train;
            EpochStats st;
            st.epoch = epoch;
            std::size_t n_batches = 0;
            for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
                std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
                model.params().zero_grad();
                Tensor batch_total;
                double bc = 0, bcen = 0, bsz = 0, byaw = 0, biou = 0;
                for (std::size_t i = b; i < end; ++i) {
                    const TrainSample& s = train_set[static_cast<std::size_t>(order[i])];
                    SceneInput resampled;
                    if (opts.resample) resampled = opts.resample(s, epoch);
                    auto layers = model.forward(opts.resample ? resampled : s.input, bn_mode,
                                                opts.mask_visual);
                    auto loss = set_prediction_loss(layers, s.gts, cfg.loss);
                    batch_total = (i == b) ? loss.total : add(batch_total, loss.total);
                    const auto& last = loss.layers.back();
                    bc += static_cast<double>(last.classification.item());
                    bcen += static_cast<double>(last.center.item());
                    bsz += static_cast<double>(last.size.item());
                    byaw += static_cast<double>(last.yaw.item());
                    biou += static_cast<double>(last.iou.item());
                }
                double inv = 1.0 / static_cast<double>(end - b);
                auto objective = mul_scalar(batch_total, static_cast<float>(inv));
                backward(objective);
                opt.step(lr);

                st.total += static_cast<double>(objective.item());
                st.classification += bc * inv;
                st.center += bcen * inv;
                st.size += bsz * inv;
                st.yaw += byaw * inv;
                st.iou += biou * inv;
                ++n_batches;
            }
            double inv_b = 1.0 / static_cast<double>(n_batches);
            st.total *= inv_b;
            st.classification *= inv_b;
            st.center *= inv_b;
            st.size *= inv_b;
            st.yaw *= inv_b;
            st.iou *= inv_b;

            bool last_epoch = epoch == tc.epochs;
            bool eval_now = !val_set.empty() &&
                            (last_epoch || (tc.eval_every > 0 && epoch % tc.eval_every == 0));
            if (eval_now) {
                EvalReport rep = evaluate_model(model, val_set, tc.score_thresh, opts.mask_visual);
                st.ap25 = rep.mean_ap25;
                st.ap50 = rep.mean_ap50;
            }
            st.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();

            if (metrics.is_open()) {
                nlohmann::json j{{"epoch", st.epoch},
                                 {"loss", st.total},
                                 {"classification", st.classification},
                                 {"center", st.center},
                                 {"size", st.size},
                                 {"yaw", st.yaw},
                                 {"iou", st.iou},
                                 {"wall_ms", opts.stable_output ? 0.0 : st.wall_ms}};
                if (st.ap25 >= 0) {
                    j["ap25"] = st.ap25;
                    j["ap50"] = st.ap50;
                }
                metrics << j.dump() << "\n";
                metrics.flush();
            }
            if (!opts.out_dir.empty() &&
                (last_epoch || (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0))) {
                save_checkpoint(opts.out_dir + "/checkpoint_" + std::to_string(epoch) + ".mvw",
                                model.params());
            }
            history.push_back(st);
            if (opts.on_epoch) opts.on_epoch(st);
            if (opts.stop_at_ap50 && st.ap50 >= 0 && st.ap50 >= *opts.stop_at_ap50) break;
        }
    } catch (...) {
        g_finite_checks = prev_checks;
        throw;
    }
    g_finite_checks = prev_checks;

    if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir + "/checkpoint_final.mvw", model.params());
    return history;
}

}  // namespace mvdetr
