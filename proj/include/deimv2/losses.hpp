#pragma once

// The five-component training objective: matchability-aware classification,
// fine-grained localization over edge distributions, decoupled distillation
// from the final decoder layer, plus L1 and GIoU box terms. FGL and DDF (the
// "local loss") switch off for the ultra-light variants.
//
// The loss kernels are scalar-generic: training runs them in 32-bit, the
// gradient oracle instantiates the same code in 64-bit.

#include <vector>

#include "deimv2/decoder.hpp"
#include "deimv2/matching.hpp"

namespace deimv2 {

struct LossWeights {
    double mal = 1.0;    // lambda1
    double fgl = 0.15;   // lambda2
    double ddf = 1.5;    // lambda3
    double l1 = 5.0;     // lambda4
    double giou = 2.0;   // lambda5
};

struct MALParams {
    double gamma = 1.5;
};

struct LossBreakdown {
    Tensor total;  // scalar graph tensor
    double mal = 0, fgl = 0, ddf = 0, l1 = 0, giou = 0;
    double weighted_total = 0;
};

// matched entry (query k -> target t) with the IoU of the predicted box
struct Match {
    int query = 0;
    int target = 0;
    double iou_weight = 0;
};

inline std::vector<Match> matches_with_iou(const std::vector<std::pair<int, int>>& assignment,
                                           const std::vector<BoxCxCyWh>& pred_boxes,
                                           const TargetSet& targets) {
    std::vector<Match> out;
    out.reserve(assignment.size());
    for (auto& [k, t] : assignment)
        out.push_back({k, t, iou(pred_boxes[size_t(k)], targets.boxes[size_t(t)])});
    return out;
}

// Matched (query, class) entries use the IoU-interpolated target
// q = IoU(pred, gt): contribution -(q^g log p + (1-q^g) log(1-p)).
// Every other entry contributes the focal negative -p^g log(1-p).
// Normalized by the number of matches (at least one).
template <typename T>
TensorT<T> mal_loss(const TensorT<T>& class_logits, const std::vector<Match>& matches,
                    const TargetSet& targets, const MALParams& params = {}) {
    int K = class_logits.dim(0), C = class_logits.dim(1);
    (void)K;
    auto log_p = neg(softplus(neg(class_logits)));
    auto log_1mp = neg(softplus(class_logits));
    auto p_gamma = exp_e(mul_scalar(log_p, T(params.gamma)));
    std::vector<T> coef_p(class_logits.data().size(), T(0));     // on log p
    std::vector<T> coef_1mp(class_logits.data().size(), T(0));   // on log(1-p), matched slots
    std::vector<T> unmatched(class_logits.data().size(), T(1));  // focal negatives elsewhere
    for (auto& m : matches) {
        size_t at = size_t(m.query) * size_t(C) + size_t(targets.classes[size_t(m.target)]);
        T qg = T(std::pow(m.iou_weight, params.gamma));
        coef_p[at] = qg;
        coef_1mp[at] = T(1) - qg;
        unmatched[at] = T(0);
    }
    auto matched_term = add(mul_const(log_p, std::move(coef_p)), mul_const(log_1mp, std::move(coef_1mp)));
    auto unmatched_term = mul_const(mul(p_gamma, log_1mp), std::move(unmatched));
    auto total = neg(add(sum_all(matched_term), sum_all(unmatched_term)));
    return mul_scalar(total, T(1) / T(std::max<size_t>(1, matches.size())));
}

// distribution-focal localization: cross-entropy against the two bins
// bracketing each target edge offset, linearly weighted by proximity and
// scaled per sample by IoU; mean over matched edges
template <typename T>
TensorT<T> fgl_loss(const TensorT<T>& dist_softmax, const std::vector<BoxCxCyWh>& refs,
                    const std::vector<Match>& matches, const TargetSet& targets,
                    int bins, double range) {
    if (matches.empty()) return TensorT<T>::scalar(T(0));
    double c0 = -range;
    double step = 2.0 * range / (bins - 1);
    std::vector<int> rows;
    rows.reserve(matches.size() * 4);
    std::vector<T> coef;
    coef.reserve(matches.size() * 4 * size_t(bins));
    for (auto& m : matches) {
        double offs[4];
        edge_offset_targets(refs[size_t(m.query)], targets.boxes[size_t(m.target)], range, offs);
        for (int e = 0; e < 4; ++e) {
            rows.push_back(m.query * 4 + e);
            double t = offs[e];
            int lo = std::clamp(int(std::floor((t - c0) / step)), 0, bins - 2);
            double wr = std::clamp((t - (c0 + lo * step)) / step, 0.0, 1.0);
            std::vector<T> c(size_t(bins), T(0));
            c[size_t(lo)] = T((1.0 - wr) * m.iou_weight);
            c[size_t(lo) + 1] = T(wr * m.iou_weight);
            coef.insert(coef.end(), c.begin(), c.end());
        }
    }
    auto gathered = gather0(dist_softmax, rows);
    auto lg = log_e(add_scalar(gathered, T(1e-12)));
    auto total = neg(sum_all(mul_const(lg, std::move(coef))));
    return mul_scalar(total, T(1) / T(matches.size() * 4));
}

// decoupled distillation: the final layer's distributions teach the earlier
// layers through a detached-teacher KL, weighted by the teacher's IoU with
// its matched target; zero when there is a single layer
template <typename T>
TensorT<T> ddf_loss(const std::vector<TensorT<T>>& student_dists, const TensorT<T>& teacher_dist,
                    const std::vector<Match>& final_matches, int bins) {
    if (student_dists.empty() || final_matches.empty()) return TensorT<T>::scalar(T(0));
    std::vector<int> rows;
    std::vector<T> tcoef;  // teacher prob * iou weight, teacher detached
    double const_term = 0; // sum t*log(t) * iou (teacher entropy side of KL)
    for (auto& m : final_matches) {
        for (int e = 0; e < 4; ++e) {
            int row = m.query * 4 + e;
            rows.push_back(row);
            for (int n = 0; n < bins; ++n) {
                double t = double(teacher_dist.data()[size_t(row) * size_t(bins) + size_t(n)]);
                tcoef.push_back(T(t * m.iou_weight));
                if (t > 1e-12) const_term += t * std::log(t) * m.iou_weight;
            }
        }
    }
    auto acc = TensorT<T>::scalar(T(0));
    for (auto& s : student_dists) {
        auto gathered = gather0(s, rows);
        auto lg = log_e(add_scalar(gathered, T(1e-12)));
        auto cross = neg(sum_all(mul_const(lg, tcoef)));       // -sum t log s
        acc = add(acc, add_scalar(cross, T(const_term)));      // + sum t log t
    }
    return mul_scalar(acc, T(1) / T(student_dists.size() * final_matches.size() * 4));
}

template <typename T>
TensorT<T> l1_loss_matched(const TensorT<T>& pred_boxes, const std::vector<Match>& matches,
                           const TargetSet& targets) {
    if (matches.empty()) return TensorT<T>::scalar(T(0));
    std::vector<int> rows;
    std::vector<T> neg_tgt;
    for (auto& m : matches) {
        rows.push_back(m.query);
        const auto& b = targets.boxes[size_t(m.target)];
        neg_tgt.insert(neg_tgt.end(), {T(-b.cx), T(-b.cy), T(-b.w), T(-b.h)});
    }
    auto pred = gather0(pred_boxes, rows);
    auto diff = abs_e(add_const(pred, std::move(neg_tgt)));
    return mul_scalar(sum_all(diff), T(1) / T(matches.size()));
}

template <typename T>
TensorT<T> giou_loss_matched(const TensorT<T>& pred_boxes, const std::vector<Match>& matches,
                             const TargetSet& targets) {
    if (matches.empty()) return TensorT<T>::scalar(T(0));
    std::vector<int> rows;
    std::vector<BoxCxCyWh> tgt;
    for (auto& m : matches) {
        rows.push_back(m.query);
        tgt.push_back(targets.boxes[size_t(m.target)]);
    }
    auto pred = gather0(pred_boxes, rows);
    auto g = giou_rows(pred, tgt);
    return mul_scalar(sum_all(neg(add_scalar(g, T(-1)))), T(1) / T(matches.size()));
}

// Hungarian match per prediction set (deep supervision across decoder layers
// plus the encoder's dense proposals), then the weighted five-component sum;
// FGL and DDF contribute only under the local-loss switch.
inline LossBreakdown total_loss(const std::vector<LayerPrediction>& layer_preds,
                                const DenseProposals& encoder_props, const TargetSet& targets,
                                const LossWeights& w, bool local_loss_enabled,
                                int dist_bins = 16, double bin_range = 0.5,
                                const MALParams& mal_params = {},
                                const MatchCostWeights& match_weights = {}) {
    struct Set {
        const Tensor* logits;
        const Tensor* boxes;
        const Tensor* dist;                  // null for the encoder head
        const std::vector<BoxCxCyWh>* refs;  // null for the encoder head
    };
    std::vector<Set> sets;
    for (auto& p : layer_preds) sets.push_back({&p.class_logits, &p.boxes, &p.dist_softmax, &p.refs_used});
    sets.push_back({&encoder_props.class_logits, &encoder_props.boxes, nullptr, nullptr});

    Tensor mal_acc = Tensor::scalar(0.f), fgl_acc = Tensor::scalar(0.f);
    Tensor l1_acc = Tensor::scalar(0.f), giou_acc = Tensor::scalar(0.f);
    std::vector<Match> final_matches;
    for (size_t si = 0; si < sets.size(); ++si) {
        auto& s = sets[si];
        int C = s.logits->dim(1);
        auto pred_boxes = boxes_from_tensor(*s.boxes);
        std::vector<Match> matches;
        if (targets.size() > 0) {
            auto cost = match_cost(s.logits->data(), C, pred_boxes, targets, match_weights);
            matches = matches_with_iou(hungarian(cost), pred_boxes, targets);
        }
        mal_acc = add(mal_acc, mal_loss(*s.logits, matches, targets, mal_params));
        l1_acc = add(l1_acc, l1_loss_matched(*s.boxes, matches, targets));
        giou_acc = add(giou_acc, giou_loss_matched(*s.boxes, matches, targets));
        if (local_loss_enabled && s.dist && !matches.empty())
            fgl_acc = add(fgl_acc, fgl_loss(*s.dist, *s.refs, matches, targets, dist_bins, bin_range));
        if (si + 1 == layer_preds.size()) final_matches = matches;
    }
    Tensor ddf_acc = Tensor::scalar(0.f);
    if (local_loss_enabled && layer_preds.size() >= 2 && !final_matches.empty()) {
        std::vector<Tensor> students;
        for (size_t l = 0; l + 1 < layer_preds.size(); ++l)
            students.push_back(layer_preds[l].dist_softmax);
        ddf_acc = ddf_loss(students, layer_preds.back().dist_softmax, final_matches, dist_bins);
    }

    LossBreakdown out;
    out.mal = double(mal_acc.item());
    out.fgl = double(fgl_acc.item());
    out.ddf = double(ddf_acc.item());
    out.l1 = double(l1_acc.item());
    out.giou = double(giou_acc.item());
    out.total = add(add(mul_scalar(mal_acc, float(w.mal)),
                        add(mul_scalar(fgl_acc, float(w.fgl)), mul_scalar(ddf_acc, float(w.ddf)))),
                    add(mul_scalar(l1_acc, float(w.l1)), mul_scalar(giou_acc, float(w.giou))));
    out.weighted_total = double(out.total.item());
    return out;
}

}  // namespace deimv2
