#include "mvdetr/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvdetr {

namespace {

// O(n^3) Hungarian algorithm with potentials on a square matrix.
double square_assignment_cost(const std::vector<double>& a, int n) {
    if (n == 0) return 0;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1), v(static_cast<std::size_t>(n) + 1);
    std::vector<int> p(static_cast<std::size_t>(n) + 1), way(static_cast<std::size_t>(n) + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            int i0 = p[static_cast<std::size_t>(j0)], j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = a[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] -
                             u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    double total = 0;
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<std::size_t>(j)] > 0)
            total += a[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1) * n + (j - 1)];
    return total;
}

// Minimum cost of matching min(|rows|, |cols|) pairs from a submatrix.
double min_cost(const std::vector<double>& cost, int g, const std::vector<int>& rows,
                const std::vector<int>& cols) {
    int n = static_cast<int>(std::max(rows.size(), cols.size()));
    if (n == 0) return 0;
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            a[i * static_cast<std::size_t>(n) + j] =
                cost[static_cast<std::size_t>(rows[i]) * g + cols[j]];
    return square_assignment_cost(a, n);
}

}  // namespace

Assignment hungarian(const std::vector<double>& cost, int m, int g) {
    if (m < 0 || g < 0 || cost.size() != static_cast<std::size_t>(m) * g)
        throw ContractError("hungarian: cost matrix size mismatch");
    for (double c : cost)
        if (!std::isfinite(c)) throw ContractError("hungarian: cost entries must be finite");
    Assignment out;
    int need = std::min(m, g);
    if (need == 0) return out;

    std::vector<int> all_rows(static_cast<std::size_t>(m)), free_cols;
    for (int i = 0; i < m; ++i) all_rows[static_cast<std::size_t>(i)] = i;
    for (int j = 0; j < g; ++j) free_cols.push_back(j);
    double opt = min_cost(cost, g, all_rows, free_cols);

    // Fix pairs greedily in lexicographic order, using the solver as a
    // feasibility oracle for an optimal completion.
    double fixed_cost = 0;
    int q = 0;
    auto tol = [&](double x) { return 1e-9 * std::max(1.0, std::abs(x)); };
    while (static_cast<int>(out.pairs.size()) < need) {
        std::vector<int> later_rows;
        for (int i = q + 1; i < m; ++i) later_rows.push_back(i);
        bool fixed = false;
        for (std::size_t jj = 0; jj < free_cols.size() && !fixed; ++jj) {
            int j = free_cols[jj];
            double c = cost[static_cast<std::size_t>(q) * g + j];
            std::vector<int> rest_cols;
            for (int rc : free_cols)
                if (rc != j) rest_cols.push_back(rc);
            double completion =
                static_cast<int>(out.pairs.size()) + 1 < need
                    ? min_cost(cost, g, later_rows, rest_cols)
                    : 0;
            if (std::abs(fixed_cost + c + completion - opt) <= tol(opt)) {
                out.pairs.emplace_back(q, j);
                fixed_cost += c;
                free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(jj));
                fixed = true;
            }
        }
        ++q;
        if (q >= m && static_cast<int>(out.pairs.size()) < need)
            throw ContractError("hungarian: internal inconsistency");
    }
    out.total_cost = opt;
    return out;
}

std::vector<double> match_cost(const std::vector<PredBox>& preds, const std::vector<Box3D>& gts,
                               const MatchWeights& w) {
    if (gts.empty()) throw ContractError("match_cost: needs at least one ground truth");
    std::size_t m = preds.size(), g = gts.size();
    std::vector<double> cost(m * g);
    for (std::size_t i = 0; i < m; ++i) {
        const PredBox& p = preds[i];
        for (std::size_t j = 0; j < g; ++j) {
            const Box3D& t = gts[j];
            double l1c = std::abs(p.box.center.x - t.center.x) +
                         std::abs(p.box.center.y - t.center.y) +
                         std::abs(p.box.center.z - t.center.z);
            double l1s = std::abs(p.box.size.x - t.size.x) + std::abs(p.box.size.y - t.size.y) +
                         std::abs(p.box.size.z - t.size.z);
            double dyaw = std::abs(wrap_angle(p.box.yaw - t.yaw));
            double pc = p.probs.at(static_cast<std::size_t>(t.class_id));
            cost[i * g + j] = w.cls * (1.0 - pc) + w.center * l1c + w.size * l1s + w.yaw * dyaw +
                              w.iou * (1.0 - iou3d(p.box, t));
        }
    }
    return cost;
}

}  // namespace mvdetr
