#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvdetr/gradcheck.hpp"
#include "mvdetr/scene_io.hpp"
#include "mvdetr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvdetr;

namespace {

std::string scene_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05d", index);
    return buf;
}

void echo_config(const std::string& dir, const RunConfig& cfg) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/config.json");
    if (!out) throw IoError("cannot write " + dir + "/config.json");
    out << run_config_to_json(cfg) << "\n";
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, int count) {
    echo_config(out_dir, cfg);
    fs::create_directories(out_dir + "/scenes");
    Manifest manifest;
    for (int i = 0; i < count; ++i) {
        std::string id = scene_id(i);
        Scene scene = generate_scene(Rng::substream_seed(cfg.seed, "scene:" + id),
                                     cfg.generator, cfg.camera);
        save_scene_dir(out_dir + "/scenes/" + id, scene);
        (is_validation_id(id) ? manifest.val_ids : manifest.train_ids).push_back(id);
    }
    write_manifest(out_dir + "/manifest.json", manifest);
    json summary{{"scenes", count},
                 {"train", manifest.train_ids.size()},
                 {"val", manifest.val_ids.size()},
                 {"out", out_dir}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              bool stable_output) {
    echo_config(out_dir, cfg);
    auto [train_set, val_set] = load_train_samples(data_dir, cfg);
    MvDetr<float> model(cfg.model, Rng::substream_seed(cfg.seed, "init"));
    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.stable_output = stable_output;
    opts.on_epoch = [&](const EpochStats& st) {
        std::fprintf(stderr, "epoch %4d  loss %.4f  cls %.4f  ctr %.4f  size %.4f  yaw %.4f  iou %.4f",
                     st.epoch, st.total, st.classification, st.center, st.size, st.yaw, st.iou);
        if (st.ap25 >= 0) std::fprintf(stderr, "  ap25 %.3f  ap50 %.3f", st.ap25, st.ap50);
        std::fprintf(stderr, "\n");
    };
    auto history = train_loop(model, train_set, val_set, cfg, opts);

    const auto& eval_set = val_set.empty() ? train_set : val_set;
    EvalReport report = evaluate_model(model, eval_set, cfg.train.score_thresh);
    json j = json::parse(report_to_json(report));
    j["epochs_run"] = history.size();
    j["checkpoint"] = out_dir + "/checkpoint_final.mvw";
    std::cout << j.dump() << "\n";
    return 0;
}

std::vector<TrainSample> pick_split(std::pair<std::vector<TrainSample>, std::vector<TrainSample>>&& sets,
                                    const std::string& split) {
    if (split == "train") return std::move(sets.first);
    if (split == "val") return sets.second.empty() ? std::move(sets.first) : std::move(sets.second);
    auto all = std::move(sets.first);
    all.insert(all.end(), sets.second.begin(), sets.second.end());
    return all;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& data_dir,
             const std::string& dets_path, const std::string& split) {
    std::vector<GtBox> gts;
    std::vector<Detection> dets;
    auto samples = pick_split(load_train_samples(data_dir, cfg), split);
    for (const auto& s : samples)
        for (const auto& g : s.gts) gts.push_back({s.id, g});
    if (!dets_path.empty()) {
        dets = read_detections(dets_path);
    } else {
        MvDetr<float> model(cfg.model, Rng::substream_seed(cfg.seed, "init"));
        load_checkpoint(ckpt, model.params());
        for (const auto& s : samples) {
            auto layers = model.forward(s.input, BnMode::eval);
            for (const auto& b : predict(layers.back(), cfg.train.score_thresh))
                dets.push_back({s.id, b});
        }
    }
    std::cout << report_to_json(evaluate(dets, gts)) << "\n";
    return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& ckpt, const std::string& scene_dir,
              const std::string& ply_path) {
    LoadedScene ls = load_scene_dir(scene_dir);
    SceneInput input = preprocess_scene(ls.color, ls.depth, ls.scene.intrinsics,
                                        cfg.model.sample_points, cfg.model.geometry.k,
                                        Rng::substream_seed(cfg.seed, "infer"));
    MvDetr<float> model(cfg.model, Rng::substream_seed(cfg.seed, "init"));
    load_checkpoint(ckpt, model.params());
    auto layers = model.forward(input, BnMode::eval);
    auto boxes = predict(layers.back(), cfg.train.score_thresh);

    json out = json::array();
    for (const auto& b : boxes)
        out.push_back({{"class_id", b.class_id},
                       {"score", b.score},
                       {"center", {b.center.x, b.center.y, b.center.z}},
                       {"size", {b.size.x, b.size.y, b.size.z}},
                       {"yaw", b.yaw}});
    std::cout << out.dump() << "\n";

    if (!ply_path.empty()) {
        // points colored by the nearest predicted box center, for eyeballing
        static const float palette[8][3] = {{0.9f, 0.2f, 0.2f}, {0.2f, 0.8f, 0.2f},
                                            {0.2f, 0.4f, 0.9f}, {0.9f, 0.8f, 0.1f},
                                            {0.8f, 0.3f, 0.8f}, {0.2f, 0.8f, 0.8f},
                                            {0.9f, 0.5f, 0.1f}, {0.6f, 0.6f, 0.6f}};
        ColoredPointCloud cloud;
        for (const auto& p : input.positions) {
            CloudPoint cp{};
            for (int a = 0; a < 3; ++a) cp.position[a] = static_cast<float>(p[static_cast<std::size_t>(a)]);
            int best = -1;
            double best_d = 1e30;
            for (std::size_t q = 0; q < boxes.size(); ++q) {
                Vec3 d = Vec3{p[0], p[1], p[2]} - boxes[q].center;
                double dist = d.dot(d);
                if (dist < best_d) { best_d = dist; best = static_cast<int>(q); }
            }
            const float* c = best >= 0 ? palette[best % 8] : palette[7];
            for (int a = 0; a < 3; ++a) cp.color[a] = c[a];
            cloud.points.push_back(cp);
        }
        write_ply(ply_path, cloud);
    }
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, double tol) {
    auto report = run_gradcheck(cfg.seed);
    json j{{"max_rel_err", report.max_rel_err},
           {"checked", report.checked},
           {"passed", report.passed(tol)},
           {"modules", json::object()}};
    for (const auto& m : report.modules) {
        j["modules"][m.name] = {{"max_rel_err", m.max_rel_err}, {"checked", m.checked}};
        std::fprintf(stderr, "%-12s checked %4d  max rel err %.3e\n", m.name.c_str(), m.checked,
                     m.max_rel_err);
    }
    std::cout << j.dump() << "\n";
    if (!report.passed(tol)) throw NumericError("gradcheck failed: max rel err exceeds tolerance");
    return 0;
}

int cmd_inspect(const std::string& ckpt) {
    json out = json::array();
    for (const auto& [name, shape] : inspect_checkpoint(ckpt))
        out.push_back({{"name", name}, {"shape", shape}});
    std::cout << out.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MV-DETR multi-view RGBD 3D object detection"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, out_dir, data_dir, ckpt, scene_dir, ply_path, dets_path;
    std::string split = "val";
    std::vector<std::string> overrides;
    bool stable_output = false;
    int count = 16;
    std::int64_t seed_flag = -1;

    app.add_option("--config", config_path, "run config JSON (defaults when omitted)");
    app.add_option("--set", overrides, "dotted config override, e.g. model.decoder.layers=2");
    app.add_option("--seed", seed_flag, "override the config seed");
    app.add_flag("--stable-output", stable_output, "omit wall-clock fields from outputs");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic RGBD scene dataset");
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_option("--count", count, "number of scenes");

    auto* train = app.add_subcommand("train", "train a model on a generated dataset");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "run output directory")->required();

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint or a detections file");
    evalc->add_option("--ckpt", ckpt, "checkpoint path");
    evalc->add_option("--data", data_dir, "dataset directory")->required();
    evalc->add_option("--dets", dets_path, "score a detections JSON instead of running the model");
    evalc->add_option("--split", split, "train|val|all")->check(CLI::IsMember({"train", "val", "all"}));

    auto* infer = app.add_subcommand("infer", "run one scene through a checkpoint");
    infer->add_option("--ckpt", ckpt, "checkpoint path")->required();
    infer->add_option("--scene", scene_dir, "scene directory")->required();
    infer->add_option("--ply", ply_path, "also write a colored point cloud PLY");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");

    auto* inspect = app.add_subcommand("inspect", "list the tensors in a checkpoint");
    inspect->add_option("--ckpt", ckpt, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = load_run_config(config_path, overrides);
        if (seed_flag >= 0) {
            cfg.seed = static_cast<std::uint64_t>(seed_flag);
        }
        if (gen->parsed()) return cmd_gen_data(cfg, out_dir, count);
        if (train->parsed()) return cmd_train(cfg, data_dir, out_dir, stable_output);
        if (evalc->parsed()) {
            if (ckpt.empty() && dets_path.empty())
                throw ConfigError("eval: provide --ckpt or --dets");
            return cmd_eval(cfg, ckpt, data_dir, dets_path, split);
        }
        if (infer->parsed()) return cmd_infer(cfg, ckpt, scene_dir, ply_path);
        if (grad->parsed()) return cmd_gradcheck(cfg, 1e-4);
        if (inspect->parsed()) return cmd_inspect(ckpt);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::ios_base::failure& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    }
    return 0;
}
