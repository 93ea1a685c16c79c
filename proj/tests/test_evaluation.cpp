#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "mvdetr/common.hpp"
#include "mvdetr/evaluation.hpp"

using namespace mvdetr;

namespace {

Box3D make_box(double cx, double cy, double cz, double sx, double sy, double sz, double yaw,
               int cls, double score = 1.0) {
    Box3D b;
    b.center = {cx, cy, cz};
    b.size = {sx, sy, sz};
    b.yaw = yaw;
    b.class_id = cls;
    b.score = score;
    return b;
}

Detection det(const std::string& scene, const Box3D& b) { return Detection{scene, b}; }
GtBox gt(const std::string& scene, const Box3D& b) { return GtBox{scene, b}; }

}  // namespace

TEST_CASE("iou3d: identity, disjoint, nesting, symmetry") {
    Box3D a = make_box(0, 0, 2, 1, 1, 1, 0, 0);
    CHECK(iou3d(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    Box3D far = make_box(5, 0, 2, 1, 1, 1, 0, 0);
    CHECK(iou3d(a, far) == 0.0);
    Box3D inner = make_box(0, 0, 2, 0.5, 0.5, 0.5, 0, 0);
    CHECK(iou3d(a, inner) == doctest::Approx(0.125).epsilon(1e-12));
    Box3D b = make_box(0.3, 0.1, 2.2, 0.9, 1.2, 0.8, 0.4, 0);
    CHECK(iou3d(a, b) == doctest::Approx(iou3d(b, a)).epsilon(1e-12));
    CHECK(iou3d(a, b) > 0.0);
    CHECK(iou3d(a, b) < 1.0);
}

TEST_CASE("average precision: exact match set gives 1.0") {
    Box3D a = make_box(0, 0, 2, 1, 1, 1, 0, 0, 0.9);
    Box3D b = make_box(2, 0, 3, 0.8, 0.6, 0.7, 0.3, 0, 0.8);
    std::vector<GtBox> gts{gt("s0", a), gt("s0", b)};
    auto ap = average_precision({det("s0", a), det("s0", b)}, gts, 0.5);
    REQUIRE(ap.count(0) == 1);
    CHECK(ap.at(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("average precision: one FP above one TP yields 0.5") {
    Box3D g = make_box(0, 0, 2, 1, 1, 1, 0, 0);
    Box3D tp = g;
    tp.score = 0.8;
    Box3D fp = make_box(6, 0, 2, 1, 1, 1, 0, 0, 0.9);
    auto ap = average_precision({det("s0", fp), det("s0", tp)}, {gt("s0", g)}, 0.5);
    // precision at the single recall point 1.0 is 1/2
    CHECK(ap.at(0) == doctest::Approx(0.5).epsilon(1e-12));
    // FP below the TP does not hurt under all-point interpolation
    fp.score = 0.1;
    ap = average_precision({det("s0", fp), det("s0", tp)}, {gt("s0", g)}, 0.5);
    CHECK(ap.at(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("average precision: invariant to monotone score transforms") {
    Rng rng(59);
    std::vector<GtBox> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 12; ++i) {
        auto g = make_box(i * 3.0, 0.5, 2, 1, 1, 1, 0, 0);
        gts.push_back(gt("s0", g));
        if (rng.uniform() < 0.7) {
            auto d = g;
            d.center.x += rng.uniform(-0.3, 0.3);
            d.score = rng.uniform(0.05, 0.95);
            dets.push_back(det("s0", d));
        }
        if (rng.uniform() < 0.5)
            dets.push_back(det("s0", make_box(i * 3.0 + 1.5, 0.5, 2, 1, 1, 1, 0, 0,
                                              rng.uniform(0.05, 0.95))));
    }
    auto base = average_precision(dets, gts, 0.25);
    auto squashed = dets;
    for (auto& d : squashed) d.box.score = d.box.score * d.box.score * 0.5;  // strictly monotone
    auto after = average_precision(squashed, gts, 0.25);
    CHECK(after.at(0) == doctest::Approx(base.at(0)).epsilon(1e-12));
}

TEST_CASE("average precision: scene and class boundaries are respected") {
    Box3D g = make_box(0, 0, 2, 1, 1, 1, 0, 0, 0);
    // same geometry in the wrong scene or wrong class never matches
    auto ap = average_precision({det("s1", make_box(0, 0, 2, 1, 1, 1, 0, 0, 0.9))},
                                {gt("s0", g)}, 0.25);
    CHECK(ap.at(0) == 0.0);
    Box3D wrong_class = make_box(0, 0, 2, 1, 1, 1, 0, 1, 0.9);
    ap = average_precision({det("s0", wrong_class)}, {gt("s0", g)}, 0.25);
    CHECK(ap.at(0) == 0.0);
    CHECK(ap.count(1) == 0);  // class 1 has no GT anywhere
}

TEST_CASE("evaluate: mean over classes, counts, empty detections") {
    Box3D a = make_box(0, 0, 2, 1, 1, 1, 0, 0, 0.9);
    Box3D b = make_box(3, 0, 2, 1, 1, 1, 0, 1, 0.9);
    std::vector<GtBox> gts{gt("s0", a), gt("s0", b)};
    // class 0 is found exactly, class 1 is missed entirely
    auto rep = evaluate({det("s0", a)}, gts);
    CHECK(rep.gt_count == 2);
    CHECK(rep.det_count == 1);
    CHECK(rep.mean_ap50 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.mean_ap25 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.matched50 == 1);
    CHECK(rep.per_scene.at("s0") == std::pair<int, int>(2, 1));

    auto empty = evaluate({}, gts);
    CHECK(empty.mean_ap25 == 0.0);
    CHECK(empty.mean_ap50 == 0.0);
    CHECK(empty.det_count == 0);
}

TEST_CASE("detection interchange file round trip") {
    namespace fs = std::filesystem;
    auto path = (fs::temp_directory_path() / "mvdetr_dets_test.json").string();
    std::vector<Detection> dets{det("scene_00001", make_box(0.25, -0.5, 2.125, 1, 0.75, 0.5, 0.375, 2, 0.625)),
                                det("scene_00002", make_box(-1, 0, 3, 0.5, 0.5, 0.5, -0.25, 0, 0.5))};
    write_detections(path, dets);
    auto back = read_detections(path);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].scene_id == dets[i].scene_id);
        CHECK(back[i].box.class_id == dets[i].box.class_id);
        CHECK(back[i].box.score == doctest::Approx(dets[i].box.score).epsilon(1e-12));
        CHECK(back[i].box.center.x == doctest::Approx(dets[i].box.center.x).epsilon(1e-12));
        CHECK(back[i].box.size.z == doctest::Approx(dets[i].box.size.z).epsilon(1e-12));
        CHECK(back[i].box.yaw == doctest::Approx(dets[i].box.yaw).epsilon(1e-12));
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_detections(path), IoError);
}
