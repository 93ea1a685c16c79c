// Acceptance gate: one test case per acceptance criterion, each printing
// a single PASS/FAIL line with the measured value and threshold.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "mvdetr/gradcheck.hpp"
#include "mvdetr/scene_io.hpp"
#include "mvdetr/train.hpp"

using namespace mvdetr;

namespace {

void verdict(const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] %s — %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string scene_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%05d", index);
    return buf;
}

TrainSample make_sample(const RunConfig& cfg, const std::string& id) {
    Scene scene =
        generate_scene(Rng::substream_seed(cfg.seed, "scene:" + id), cfg.generator, cfg.camera);
    auto [color, depth] = render_scene(scene);
    TrainSample s;
    s.id = id;
    s.input = preprocess_scene(color, depth, cfg.camera, cfg.model.sample_points,
                               cfg.model.geometry.k, Rng::substream_seed(cfg.seed, "sample:" + id));
    for (const auto& sb : scene.boxes) s.gts.push_back(sb.box);
    return s;
}

std::vector<TrainSample> make_samples(const RunConfig& cfg, int first, int count) {
    std::vector<TrainSample> out;
    for (int i = first; i < first + count; ++i) out.push_back(make_sample(cfg, scene_name(i)));
    return out;
}

// Distance from a point to the surface of a yaw-rotated box.
double box_surface_distance(const Vec3& p, const Vec3& center, const Vec3& half, double yaw) {
    Vec3 local = rotate_yaw(p - center, -yaw);
    double q[3] = {std::abs(local.x) - half.x, std::abs(local.y) - half.y,
                   std::abs(local.z) - half.z};
    double out = 0;
    for (double v : q) out += std::max(v, 0.0) * std::max(v, 0.0);
    double inside = std::min(std::max({q[0], q[1], q[2]}), 0.0);
    return std::abs(std::sqrt(out) + inside);
}

// Matched-pair class accuracy: hungarian-match final-layer predictions to
// GT with the training cost, then score argmax classes.
std::pair<int, int> matched_class_counts(const MvDetr<float>& model,
                                         const std::vector<TrainSample>& samples,
                                         bool mask_visual) {
    LossWeights w;
    int correct = 0, total = 0;
    for (const auto& s : samples) {
        auto layers = model.forward(s.input, BnMode::eval, mask_visual);
        auto preds = to_pred_boxes(layers.back());
        auto cost = match_cost(preds, s.gts, w.match());
        auto assign = hungarian(cost, static_cast<int>(preds.size()), static_cast<int>(s.gts.size()));
        for (auto [qi, gi] : assign.pairs) {
            const auto& probs = preds[static_cast<std::size_t>(qi)].probs;
            int best = 0;
            for (std::size_t c = 1; c + 1 < probs.size(); ++c)
                if (probs[c] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
            ++total;
            if (best == s.gts[static_cast<std::size_t>(gi)].class_id) ++correct;
        }
    }
    return {correct, total};
}

}  // namespace

TEST_CASE("gradient integrity") {
    auto t0 = std::chrono::steady_clock::now();
    auto report = run_gradcheck(0);
    double secs = seconds_since(t0);
    bool ok = report.passed(1e-4) && secs < 60.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "max rel err %.3e (tol 1e-4) over %d elements, %.1f s (budget 60 s)",
                  report.max_rel_err, report.checked, secs);
    verdict("gradient-integrity", ok, buf);
    CHECK(ok);
}

TEST_CASE("unprojection round trip") {
    Rng rng(41);
    double max_px = 0, max_depth = 0;
    for (int i = 0; i < 10000; ++i) {
        CameraIntrinsics k;
        k.width = 32 + static_cast<int>(rng.uniform_index(640));
        k.height = 32 + static_cast<int>(rng.uniform_index(480));
        k.fx = rng.uniform(60, 400);
        k.fy = rng.uniform(60, 400);
        k.cx = rng.uniform(0.2, 0.8) * k.width;
        k.cy = rng.uniform(0.2, 0.8) * k.height;
        double u = rng.uniform(0, k.width - 1), v = rng.uniform(0, k.height - 1);
        double z = rng.uniform(0.05, 50.0);
        Vec3 p = k.unproject_pixel(u, v, z);
        auto [u2, v2] = k.project(p);
        max_px = std::max({max_px, std::abs(u2 - u), std::abs(v2 - v)});
        max_depth = std::max(max_depth, std::abs(p.z - z));
    }
    bool ok = max_px < 1e-5 && max_depth == 0.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "10000 triples, max pixel err %.2e (tol 1e-5), max depth err %g (exact)",
                  max_px, max_depth);
    verdict("unprojection-round-trip", ok, buf);
    CHECK(ok);
}

TEST_CASE("render/unproject surface consistency") {
    RunConfig cfg;
    cfg.seed = 17;
    long total = 0, close = 0;
    for (int i = 0; i < 100; ++i) {
        Scene scene = generate_scene(Rng::substream_seed(cfg.seed, "surf:" + std::to_string(i)),
                                     cfg.generator, cfg.camera);
        auto [color, depth] = render_scene(scene);
        auto cloud = unproject(depth, color, scene.intrinsics);
        Vec3 rc = (scene.room_lo + scene.room_hi) * 0.5;
        Vec3 rh = (scene.room_hi - scene.room_lo) * 0.5;
        for (const auto& pt : cloud.points) {
            Vec3 p{pt.position[0], pt.position[1], pt.position[2]};
            double d = box_surface_distance(p, rc, rh, 0.0);
            for (const auto& sb : scene.boxes)
                d = std::min(d, box_surface_distance(p, sb.box.center, sb.box.size * 0.5, sb.box.yaw));
            ++total;
            if (d <= 1e-4) ++close;
        }
    }
    double frac = static_cast<double>(close) / static_cast<double>(total);
    bool ok = frac >= 0.999;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.4f%% of %ld points within 1e-4 m of a surface (need 99.9%%)",
                  100.0 * frac, total);
    verdict("render-unproject-consistency", ok, buf);
    CHECK(ok);
}

TEST_CASE("3DV-RPE canonical invariance") {
    Rng rng(59);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        Vec3 p{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        Box3D box;
        box.center = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        box.size = {rng.uniform(0.2, 2), rng.uniform(0.2, 2), rng.uniform(0.2, 2)};
        box.yaw = rng.uniform(-M_PI, M_PI);
        double phi = rng.uniform(-M_PI, M_PI);
        Vec3 t{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};

        Box3D moved = box;
        moved.center = rotate_yaw(box.center, phi) + t;
        moved.yaw = wrap_angle(box.yaw + phi);
        Vec3 pm = rotate_yaw(p, phi) + t;

        auto a = canonical_offsets(p, box);
        auto b = canonical_offsets(pm, moved);
        for (int j = 0; j < 24; ++j)
            worst = std::max(worst, std::abs(a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]));
    }
    bool ok = worst < 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof buf, "1000 rigid-motion triples, max offset deviation %.2e (tol 1e-9)", worst);
    verdict("rpe-canonical-invariance", ok, buf);
    CHECK(ok);
}

TEST_CASE("oracle: hungarian vs exhaustive") {
    Rng rng(67);
    int agree = 0;
    const int trials = 500;
    for (int t = 0; t < trials; ++t) {
        int m = 1 + static_cast<int>(rng.uniform_index(7));
        int g = 1 + static_cast<int>(rng.uniform_index(7));
        std::vector<double> cost(static_cast<std::size_t>(m) * g);
        for (auto& c : cost) c = rng.uniform(-5, 5);
        auto assign = hungarian(cost, m, g);

        // brute force over injective maps of the smaller side
        int small = std::min(m, g), large = std::max(m, g);
        std::vector<int> perm(static_cast<std::size_t>(large));
        std::iota(perm.begin(), perm.end(), 0);
        double best = 1e300;
        do {
            double c = 0;
            for (int i = 0; i < small; ++i) {
                int qi = m <= g ? i : perm[static_cast<std::size_t>(i)];
                int gi = m <= g ? perm[static_cast<std::size_t>(i)] : i;
                c += cost[static_cast<std::size_t>(qi) * g + gi];
            }
            best = std::min(best, c);
        } while (std::next_permutation(perm.begin(), perm.end()));

        double got = 0;
        for (auto [qi, gi] : assign.pairs) got += cost[static_cast<std::size_t>(qi) * g + gi];
        if (std::abs(got - best) < 1e-9 && std::abs(assign.total_cost - best) < 1e-9 &&
            static_cast<int>(assign.pairs.size()) == small)
            ++agree;
    }
    bool ok = agree == trials;
    verdict("oracle-hungarian", ok,
            std::to_string(agree) + "/" + std::to_string(trials) + " random matrices match exhaustive minimum");
    CHECK(ok);
}

TEST_CASE("oracle: average precision vs direct PR enumeration") {
    Rng rng(73);
    int agree = 0;
    const int trials = 500;
    for (int t = 0; t < trials; ++t) {
        // random single-class instances over a couple of scenes
        std::vector<Detection> dets;
        std::vector<GtBox> gts;
        int n_scenes = 1 + static_cast<int>(rng.uniform_index(3));
        for (int s = 0; s < n_scenes; ++s) {
            std::string id = "s" + std::to_string(s);
            int ng = static_cast<int>(rng.uniform_index(4));
            int nd = static_cast<int>(rng.uniform_index(6));
            auto rand_box = [&]() {
                Box3D b;
                b.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 3)};
                b.size = {rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2)};
                b.yaw = 0;
                return b;
            };
            for (int i = 0; i < ng; ++i) gts.push_back({id, rand_box()});
            for (int i = 0; i < nd; ++i) {
                Box3D b = rand_box();
                b.score = rng.uniform();
                if (!gts.empty() && rng.uniform() < 0.6) {
                    // perturb a GT so some detections overlap meaningfully
                    const Box3D& g = gts[rng.uniform_index(static_cast<std::uint32_t>(gts.size()))].box;
                    b = g;
                    b.center.x += rng.uniform(-0.3, 0.3);
                    b.score = rng.uniform();
                }
                dets.push_back({id, b});
            }
        }
        if (gts.empty()) { ++agree; continue; }
        auto ap = average_precision(dets, gts, 0.25);

        // oracle: explicit greedy match then direct all-point interpolation
        std::vector<std::size_t> order(dets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dets[a].box.score != dets[b].box.score) return dets[a].box.score > dets[b].box.score;
            return dets[a].scene_id < dets[b].scene_id;
        });
        std::vector<bool> used(gts.size(), false), tp(order.size(), false);
        for (std::size_t r = 0; r < order.size(); ++r) {
            const auto& d = dets[order[r]];
            int best = -1;
            double best_iou = 0.25;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (used[g] || gts[g].scene_id != d.scene_id) continue;
                double i = iou3d(d.box, gts[g].box);
                if (i >= best_iou && (best < 0 || i > best_iou)) { best = static_cast<int>(g); best_iou = i; }
            }
            if (best >= 0) { used[static_cast<std::size_t>(best)] = true; tp[r] = true; }
        }
        double expected = 0;
        int cum_tp = 0;
        std::vector<std::pair<double, double>> pr;  // (recall, precision)
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (tp[r]) ++cum_tp;
            pr.emplace_back(static_cast<double>(cum_tp) / static_cast<double>(gts.size()),
                            static_cast<double>(cum_tp) / static_cast<double>(r + 1));
        }
        double prev_recall = 0;
        for (std::size_t r = 0; r < pr.size(); ++r) {
            if (!tp[r] || pr[r].first == prev_recall) continue;
            double pmax = 0;
            for (std::size_t j = r; j < pr.size(); ++j) pmax = std::max(pmax, pr[j].second);
            expected += (pr[r].first - prev_recall) * pmax;
            prev_recall = pr[r].first;
        }
        double got = ap.count(0) ? ap.at(0) : 0.0;
        if (std::abs(got - expected) < 1e-12) ++agree;
    }
    bool ok = agree == trials;
    verdict("oracle-average-precision", ok,
            std::to_string(agree) + "/" + std::to_string(trials) + " instances match the direct PR computation");
    CHECK(ok);
}

TEST_CASE("oracle: linear attention vs dense form") {
    Rng rng(79);
    int n = 37, d = 8;
    auto mk = [&](int r, int c) {
        std::vector<float> v(static_cast<std::size_t>(r) * c);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1.5, 1.5));
        return Tensor::from_data({r, c}, v);
    };
    auto q = mk(n, d), k = mk(n, d), v = mk(n, d);
    auto out = relu_linear_attention(q, k, v, 1e-6f);
    double worst = 0;
    for (int i = 0; i < n; ++i) {
        double denom = 1e-6;
        std::vector<double> num(static_cast<std::size_t>(d), 0.0);
        for (int j = 0; j < n; ++j) {
            double w = 0;
            for (int a = 0; a < d; ++a)
                w += std::max(0.0, static_cast<double>(q.at(i, a))) *
                     std::max(0.0, static_cast<double>(k.at(j, a)));
            denom += w;
            for (int a = 0; a < d; ++a) num[static_cast<std::size_t>(a)] += w * static_cast<double>(v.at(j, a));
        }
        for (int a = 0; a < d; ++a)
            worst = std::max(worst,
                             std::abs(num[static_cast<std::size_t>(a)] / denom - static_cast<double>(out.at(i, a))));
    }
    bool ok = worst < 1e-5;
    char buf[120];
    std::snprintf(buf, sizeof buf, "max deviation from dense form %.2e (tol 1e-5)", worst);
    verdict("oracle-linear-attention", ok, buf);
    CHECK(ok);
}

TEST_CASE("oracle: knn vs brute force") {
    Rng rng(83);
    bool all_ok = true;
    for (int t = 0; t < 10 && all_ok; ++t) {
        int n = 16 + static_cast<int>(rng.uniform_index(497));  // up to 512
        int k = 1 + static_cast<int>(rng.uniform_index(8));
        std::vector<std::array<double, 3>> pts(static_cast<std::size_t>(n));
        for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto got = knn(pts, k);
        for (int i = 0; i < n && all_ok; ++i) {
            std::vector<std::pair<double, int>> d;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                double dd = 0;
                for (int a = 0; a < 3; ++a) {
                    double x = pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] -
                               pts[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];
                    dd += x * x;
                }
                d.emplace_back(dd, j);
            }
            std::sort(d.begin(), d.end());
            for (int a = 0; a < k; ++a)
                if (got[static_cast<std::size_t>(i) * k + a] != d[static_cast<std::size_t>(a)].second)
                    all_ok = false;
        }
    }
    verdict("oracle-knn", all_ok, "10 random clouds (N up to 512) match full-sort neighbours exactly");
    CHECK(all_ok);
}

TEST_CASE("overfit convergence") {
    auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg;  // defaults, seed 0
    cfg.sync_derived();
    auto samples = make_samples(cfg, 0, 8);
    MvDetr<float> model(cfg.model, Rng::substream_seed(cfg.seed, "init"));
    RunConfig run = cfg;
    run.train.epochs = 500;
    run.train.eval_every = 5;
    run.train.checkpoint_every = 0;
    TrainOptions opts;
    opts.stop_at_ap50 = 1.0;
    auto history = train_loop(model, samples, samples, run, opts);
    double ap50 = history.back().ap50;
    double secs = seconds_since(t0);
    bool ok = ap50 == 1.0 && secs < 900.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "AP50 %.3f after %d epochs (need 1.0 within 500), %.0f s (budget 900 s)",
                  ap50, history.back().epoch, secs);
    verdict("overfit-convergence", ok, buf);
    CHECK(ok);
}

TEST_CASE("generalization sanity") {
    RunConfig cfg;
    cfg.seed = 0;
    cfg.model.sample_points = 1024;
    cfg.sync_derived();
    cfg.train.epochs = 90;
    cfg.train.eval_every = 0;
    cfg.train.checkpoint_every = 0;
    auto train_set = make_samples(cfg, 0, 256);
    auto eval_set = make_samples(cfg, 1000, 32);
    MvDetr<float> model(cfg.model, Rng::substream_seed(cfg.seed, "init"));
    TrainOptions opts;
    // fresh farthest-point draw per scene per epoch (sampling augmentation)
    opts.resample = [&cfg](const TrainSample& s, int epoch) {
        Scene scene = generate_scene(Rng::substream_seed(cfg.seed, "scene:" + s.id),
                                     cfg.generator, cfg.camera);
        auto [color, depth] = render_scene(scene);
        return preprocess_scene(color, depth, cfg.camera, cfg.model.sample_points,
                                cfg.model.geometry.k,
                                Rng::substream_seed(cfg.seed, "sample:" + s.id + ":" +
                                                                  std::to_string(epoch)));
    };
    train_loop(model, train_set, {}, cfg, opts);
    EvalReport rep = evaluate_model(model, eval_set, cfg.train.score_thresh);
    bool ok = rep.mean_ap25 >= 0.80;
    char buf[120];
    std::snprintf(buf, sizeof buf, "mean AP25 %.3f on 32 held-out scenes (need >= 0.80)", rep.mean_ap25);
    verdict("generalization-sanity", ok, buf);
    CHECK(ok);
}

TEST_CASE("color ablation") {
    RunConfig cfg;
    cfg.seed = 3;
    cfg.model.sample_points = 1024;
    // two classes with identical size profiles, disjoint palettes
    ClassProfile red{{0.5, 0.5, 0.5}, {0.9, 0.9, 0.9}, {}};
    red.palette = {{0.86f, 0.12f, 0.12f}, {0.72f, 0.18f, 0.10f}};
    ClassProfile blue = red;
    blue.palette = {{0.12f, 0.25f, 0.86f}, {0.10f, 0.45f, 0.72f}};
    cfg.generator.classes = {red, blue};
    cfg.sync_derived();
    cfg.train.epochs = 80;
    cfg.train.eval_every = 0;
    cfg.train.checkpoint_every = 0;
    auto samples = make_samples(cfg, 0, 24);

    MvDetr<float> full(cfg.model, Rng::substream_seed(cfg.seed, "init"));
    train_loop(full, samples, {}, cfg, {});
    auto [fc, ft] = matched_class_counts(full, samples, false);

    MvDetr<float> geo(cfg.model, Rng::substream_seed(cfg.seed, "init"));
    TrainOptions geo_opts;
    geo_opts.mask_visual = true;
    train_loop(geo, samples, {}, cfg, geo_opts);
    auto [gc, gt] = matched_class_counts(geo, samples, true);

    double full_acc = ft ? static_cast<double>(fc) / ft : 0.0;
    double geo_acc = gt ? static_cast<double>(gc) / gt : 1.0;
    bool ok = full_acc >= 0.95 && geo_acc <= 0.60;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "matched-pair class accuracy: full %.3f (need >= 0.95), geometry-only %.3f (need <= 0.60)",
                  full_acc, geo_acc);
    verdict("color-ablation", ok, buf);
    CHECK(ok);
}

TEST_CASE("determinism") {
    namespace fs = std::filesystem;
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    fs::path base = fs::temp_directory_path() / "mvdetr_determinism";
    fs::remove_all(base);

    RunConfig cfg;
    cfg.seed = 11;
    cfg.model.sample_points = 256;
    cfg.sync_derived();
    cfg.train.epochs = 2;
    cfg.train.eval_every = 1;
    cfg.train.checkpoint_every = 0;

    bool scenes_ok = true, runs_ok = true;
    for (int rep = 0; rep < 2; ++rep) {
        Scene scene = generate_scene(Rng::substream_seed(cfg.seed, "scene:scene_00000"),
                                     cfg.generator, cfg.camera);
        save_scene_dir((base / ("ds" + std::to_string(rep))).string(), scene);

        auto samples = make_samples(cfg, 0, 3);
        MvDetr<float> model(cfg.model, Rng::substream_seed(cfg.seed, "init"));
        TrainOptions opts;
        opts.out_dir = (base / ("run" + std::to_string(rep))).string();
        opts.stable_output = true;
        train_loop(model, samples, samples, cfg, opts);
    }
    for (const char* f : {"color.ppm", "depth.bin", "gt.json", "meta.json"})
        scenes_ok = scenes_ok && slurp(base / "ds0" / f) == slurp(base / "ds1" / f);
    for (const char* f : {"checkpoint_final.mvw", "metrics.jsonl"})
        runs_ok = runs_ok && slurp(base / "run0" / f) == slurp(base / "run1" / f) &&
                  !slurp(base / "run0" / f).empty();
    bool ok = scenes_ok && runs_ok;
    verdict("determinism", ok,
            std::string("repeated runs byte-identical: scenes ") + (scenes_ok ? "yes" : "NO") +
                ", checkpoints+metrics " + (runs_ok ? "yes" : "NO"));
    CHECK(ok);
}
