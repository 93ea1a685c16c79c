#pragma once

#include <vector>

#include "mvdetr/box.hpp"

namespace mvdetr {

// One-to-one assignment of min(M,G) (query, ground-truth) pairs.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // sorted by query index
    double total_cost = 0;
};

// Exact minimum-cost bipartite assignment. Deterministic: among all
// optimal assignments, returns the lexicographically smallest pair list.
// An empty matrix yields an empty assignment.
Assignment hungarian(const std::vector<double>& cost, int m, int g);

// A prediction reduced to plain values for tape-free matching.
struct PredBox {
    Box3D box;
    std::vector<double> probs;  // softmax over C+1, last = no-object
};

// DETR-style matching cost: 2(1-p_class) + L1(center) + L1(size) +
// 0.5|wrapped yaw diff| + 2(1-IoU3D). Row-major M x G.
struct MatchWeights {
    double cls = 2.0, center = 1.0, size = 1.0, yaw = 0.5, iou = 2.0;
};

std::vector<double> match_cost(const std::vector<PredBox>& preds, const std::vector<Box3D>& gts,
                               const MatchWeights& w = {});

}  // namespace mvdetr
