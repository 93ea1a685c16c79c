#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvdetr/box.hpp"

namespace mvdetr {

struct Detection {
    std::string scene_id;
    Box3D box;  // class_id and score used
};

struct GtBox {
    std::string scene_id;
    Box3D box;
};

struct EvalReport {
    std::map<int, double> ap25, ap50;  // per class with >= 1 GT
    double mean_ap25 = 0, mean_ap50 = 0;
    int gt_count = 0, det_count = 0;
    int matched25 = 0, matched50 = 0;
    std::map<std::string, std::pair<int, int>> per_scene;  // id -> (gts, dets)
};

// Per-class AP at one IoU threshold: detections sorted by descending
// score (ties by scene id then insertion order), greedy-matched to the
// highest-IoU unmatched same-class GT in their scene; area under the
// monotone precision-recall curve (all-point interpolation). Classes with
// no GT anywhere are excluded.
std::map<int, double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GtBox>& gts, double iou_thresh,
                                        int* matched_out = nullptr);

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GtBox>& gts);

std::string report_to_json(const EvalReport& report);

// Detection interchange file: JSON array of
// {scene_id, class_id, score, center, size, yaw}.
void write_detections(const std::string& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections(const std::string& path);

}  // namespace mvdetr
