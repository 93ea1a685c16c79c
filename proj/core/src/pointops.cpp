#include <algorithm>
#include <array>
#include <limits>
#include <vector>

#include "mvdetr/common.hpp"

namespace mvdetr {

std::vector<int> knn(const std::vector<std::array<double, 3>>& points, int k) {
    int n = static_cast<int>(points.size());
    if (k < 1 || n <= k) throw ContractError("knn: requires 1 <= k < N");
    std::vector<int> out(static_cast<std::size_t>(n) * k);
    std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double dx = points[static_cast<std::size_t>(i)][0] - points[static_cast<std::size_t>(j)][0];
            double dy = points[static_cast<std::size_t>(i)][1] - points[static_cast<std::size_t>(j)][1];
            double dz = points[static_cast<std::size_t>(i)][2] - points[static_cast<std::size_t>(j)][2];
            cand[m++] = {dx * dx + dy * dy + dz * dz, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = cand[static_cast<std::size_t>(j)].second;
    }
    return out;
}

// Farthest-point sampling, deterministic with start index 0; distance
// ties keep the lower index.
std::vector<int> farthest_point_sample(const std::vector<std::array<double, 3>>& points, int m) {
    int n = static_cast<int>(points.size());
    if (m < 1 || m > n) throw ContractError("farthest_point_sample: requires 1 <= m <= N");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(m));
    std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    int cur = 0;
    out.push_back(cur);
    for (int s = 1; s < m; ++s) {
        int best = -1;
        double best_d = -1;
        for (int j = 0; j < n; ++j) {
            double dx = points[static_cast<std::size_t>(j)][0] - points[static_cast<std::size_t>(cur)][0];
            double dy = points[static_cast<std::size_t>(j)][1] - points[static_cast<std::size_t>(cur)][1];
            double dz = points[static_cast<std::size_t>(j)][2] - points[static_cast<std::size_t>(cur)][2];
            double d = dx * dx + dy * dy + dz * dz;
            if (d < dist[static_cast<std::size_t>(j)]) dist[static_cast<std::size_t>(j)] = d;
            if (dist[static_cast<std::size_t>(j)] > best_d) {
                best_d = dist[static_cast<std::size_t>(j)];
                best = j;
            }
        }
        cur = best;
        out.push_back(cur);
    }
    return out;
}

}  // namespace mvdetr
