#pragma once

// Hungarian one-to-one assignment (shortest augmenting paths with potentials)
// and the query-to-target matching cost.

#include <cmath>
#include <limits>
#include <vector>

#include "deimv2/geometry.hpp"

namespace deimv2 {

struct TargetSet {
    std::vector<BoxCxCyWh> boxes;
    std::vector<int> classes;
    std::vector<bool> is_blended;

    size_t size() const { return boxes.size(); }
    void push(const BoxCxCyWh& b, int cls, bool blended = false) {
        boxes.push_back(b);
        classes.push_back(cls);
        is_blended.push_back(blended);
    }
};

using CostMatrix = std::vector<std::vector<double>>;

// minimizes total assigned cost; |result| = min(n,m); pairs sorted by row.
// Ties during augmentation resolve toward the lowest column index, scanning
// rows in ascending order.
inline std::vector<std::pair<int, int>> hungarian(const CostMatrix& cost) {
    int n = int(cost.size());
    if (n == 0) return {};
    int m = int(cost[0].size());
    if (m == 0) return {};
    for (auto& row : cost) {
        check(int(row.size()) == m, "hungarian: ragged cost matrix");
        for (double c : row) check(!std::isnan(c), "hungarian: NaN in cost matrix");
    }
    bool transposed = n > m;
    int R = transposed ? m : n, C = transposed ? n : m;
    auto at = [&](int i, int j) { return transposed ? cost[size_t(j)][size_t(i)] : cost[size_t(i)][size_t(j)]; };

    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(size_t(R) + 1, 0), v(size_t(C) + 1, 0);
    std::vector<int> p(size_t(C) + 1, 0), way(size_t(C) + 1, 0);
    for (int i = 1; i <= R; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(size_t(C) + 1, INF);
        std::vector<bool> used(size_t(C) + 1, false);
        do {
            used[size_t(j0)] = true;
            int i0 = p[size_t(j0)], j1 = -1;
            double delta = INF;
            for (int j = 1; j <= C; ++j) {
                if (used[size_t(j)]) continue;
                double cur = at(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
                if (cur < minv[size_t(j)]) { minv[size_t(j)] = cur; way[size_t(j)] = j0; }
                if (minv[size_t(j)] < delta) { delta = minv[size_t(j)]; j1 = j; }
            }
            for (int j = 0; j <= C; ++j) {
                if (used[size_t(j)]) { u[size_t(p[size_t(j)])] += delta; v[size_t(j)] -= delta; }
                else minv[size_t(j)] -= delta;
            }
            j0 = j1;
        } while (p[size_t(j0)] != 0);
        do {
            int j1 = way[size_t(j0)];
            p[size_t(j0)] = p[size_t(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<std::pair<int, int>> out;
    for (int j = 1; j <= C; ++j)
        if (p[size_t(j)] != 0) {
            int r = p[size_t(j)] - 1, c = j - 1;
            out.push_back(transposed ? std::pair{c, r} : std::pair{r, c});
        }
    std::sort(out.begin(), out.end());
    return out;
}

struct MatchCostWeights {
    double cost_class = 2, cost_bbox = 5, cost_giou = 2;
};

// focal-style classification cost, L1 box distance, and GIoU complement;
// rows are queries, columns targets. Operates on plain values.
inline CostMatrix match_cost(const std::vector<float>& class_logits, int num_classes,
                             const std::vector<BoxCxCyWh>& pred_boxes, const TargetSet& targets,
                             const MatchCostWeights& w = {}) {
    int K = int(pred_boxes.size());
    int T = int(targets.size());
    CostMatrix cost(size_t(K), std::vector<double>(size_t(T), 0.0));
    const double alpha = 0.25, gamma = 2.0;
    for (int k = 0; k < K; ++k) {
        for (int t = 0; t < T; ++t) {
            double logit = double(class_logits[size_t(k) * num_classes + size_t(targets.classes[size_t(t)])]);
            double pr = 1.0 / (1.0 + std::exp(-logit));
            pr = std::min(1.0 - 1e-8, std::max(1e-8, pr));
            double pos = alpha * std::pow(1 - pr, gamma) * (-std::log(pr));
            double neg = (1 - alpha) * std::pow(pr, gamma) * (-std::log(1 - pr));
            double cls = pos - neg;
            const auto& pb = pred_boxes[size_t(k)];
            const auto& tb = targets.boxes[size_t(t)];
            double l1 = std::abs(pb.cx - tb.cx) + std::abs(pb.cy - tb.cy) +
                        std::abs(pb.w - tb.w) + std::abs(pb.h - tb.h);
            double g = giou(pb, tb);
            cost[size_t(k)][size_t(t)] = w.cost_class * cls + w.cost_bbox * l1 + w.cost_giou * (1 - g);
        }
    }
    return cost;
}

inline std::vector<BoxCxCyWh> boxes_from_tensor(const Tensor& t) {
    check(t.ndim() == 2 && t.dim(1) == 4, "boxes_from_tensor: need [N,4]");
    std::vector<BoxCxCyWh> out(size_t(t.dim(0)));
    for (int i = 0; i < t.dim(0); ++i) {
        const float* p = t.data().data() + size_t(i) * 4;
        out[size_t(i)] = {p[0], p[1], p[2], p[3]};
    }
    return out;
}

}  // namespace deimv2
