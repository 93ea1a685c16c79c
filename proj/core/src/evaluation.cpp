#include "mvdetr/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace mvdetr {

using nlohmann::json;

std::map<int, double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GtBox>& gts, double iou_thresh,
                                        int* matched_out) {
    std::set<int> classes;
    for (const auto& g : gts) classes.insert(g.box.class_id);

    std::map<int, double> ap;
    int matched_total = 0;
    for (int cls : classes) {
        // ground truths of this class, grouped by scene
        std::map<std::string, std::vector<std::size_t>> gt_by_scene;
        std::size_t n_gt = 0;
        for (std::size_t i = 0; i < gts.size(); ++i)
            if (gts[i].box.class_id == cls) {
                gt_by_scene[gts[i].scene_id].push_back(i);
                ++n_gt;
            }
        std::vector<char> gt_used(gts.size(), 0);

        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < dets.size(); ++i)
            if (dets[i].box.class_id == cls) order.push_back(i);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dets[a].box.score != dets[b].box.score) return dets[a].box.score > dets[b].box.score;
            return dets[a].scene_id < dets[b].scene_id;  // then insertion order (stable)
        });

        std::vector<char> tp(order.size(), 0);
        for (std::size_t r = 0; r < order.size(); ++r) {
            const Detection& d = dets[order[r]];
            auto it = gt_by_scene.find(d.scene_id);
            if (it == gt_by_scene.end()) continue;
            double best_iou = 0;
            std::size_t best_gt = gts.size();
            for (std::size_t gi : it->second) {
                if (gt_used[gi]) continue;
                double v = iou3d(d.box, gts[gi].box);
                if (v > best_iou) {
                    best_iou = v;
                    best_gt = gi;
                }
            }
            if (best_gt < gts.size() && best_iou >= iou_thresh) {
                tp[r] = 1;
                gt_used[best_gt] = 1;
            }
        }

        // all-point interpolated area under the PR curve
        double area = 0;
        if (n_gt > 0) {
            std::size_t cum_tp = 0;
            std::vector<double> precision(order.size()), recall(order.size());
            for (std::size_t r = 0; r < order.size(); ++r) {
                cum_tp += tp[r] ? 1u : 0u;
                precision[r] = static_cast<double>(cum_tp) / static_cast<double>(r + 1);
                recall[r] = static_cast<double>(cum_tp) / static_cast<double>(n_gt);
            }
            for (std::size_t r = order.size(); r-- > 1;)
                precision[r - 1] = std::max(precision[r - 1], precision[r]);
            double prev_recall = 0;
            for (std::size_t r = 0; r < order.size(); ++r) {
                area += (recall[r] - prev_recall) * precision[r];
                prev_recall = recall[r];
            }
            matched_total += static_cast<int>(cum_tp);
        }
        ap[cls] = area;
    }
    if (matched_out) *matched_out = matched_total;
    return ap;
}

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GtBox>& gts) {
    EvalReport rep;
    rep.ap25 = average_precision(dets, gts, 0.25, &rep.matched25);
    rep.ap50 = average_precision(dets, gts, 0.50, &rep.matched50);
    rep.gt_count = static_cast<int>(gts.size());
    rep.det_count = static_cast<int>(dets.size());
    auto mean = [](const std::map<int, double>& m) {
        if (m.empty()) return 0.0;
        double s = 0;
        for (const auto& [cls, v] : m) s += v;
        return s / static_cast<double>(m.size());
    };
    rep.mean_ap25 = mean(rep.ap25);
    rep.mean_ap50 = mean(rep.ap50);
    for (const auto& g : gts) rep.per_scene[g.scene_id].first++;
    for (const auto& d : dets) rep.per_scene[d.scene_id].second++;
    return rep;
}

std::string report_to_json(const EvalReport& rep) {
    json j;
    auto per_class = [](const std::map<int, double>& m) {
        json o = json::object();
        for (const auto& [cls, v] : m) o[std::to_string(cls)] = v;
        return o;
    };
    j["ap25"] = per_class(rep.ap25);
    j["ap50"] = per_class(rep.ap50);
    j["mean_ap25"] = rep.mean_ap25;
    j["mean_ap50"] = rep.mean_ap50;
    j["counts"] = {{"gt", rep.gt_count},
                   {"detections", rep.det_count},
                   {"matched25", rep.matched25},
                   {"matched50", rep.matched50}};
    json scenes = json::object();
    for (const auto& [id, c] : rep.per_scene) scenes[id] = {{"gt", c.first}, {"detections", c.second}};
    j["per_scene"] = scenes;
    return j.dump(2);
}

void write_detections(const std::string& path, const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets)
        arr.push_back({{"scene_id", d.scene_id},
                       {"class_id", d.box.class_id},
                       {"score", d.box.score},
                       {"center", {d.box.center.x, d.box.center.y, d.box.center.z}},
                       {"size", {d.box.size.x, d.box.size.y, d.box.size.z}},
                       {"yaw", d.box.yaw}});
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << arr.dump(2) << "\n";
}

std::vector<Detection> read_detections(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json arr = json::parse(f);
    std::vector<Detection> out;
    for (const auto& jd : arr) {
        Detection d;
        d.scene_id = jd.at("scene_id");
        d.box.class_id = jd.at("class_id");
        d.box.score = jd.at("score");
        d.box.center = {jd.at("center").at(0), jd.at("center").at(1), jd.at("center").at(2)};
        d.box.size = {jd.at("size").at(0), jd.at("size").at(1), jd.at("size").at(2)};
        d.box.yaw = jd.at("yaw");
        out.push_back(d);
    }
    return out;
}

}  // namespace mvdetr
