#pragma once

// Box representations and IoU/GIoU kernels shared by matching, losses,
// augmentation and evaluation. All coordinates are normalized to [0,1];
// pixel conversion happens only at image I/O boundaries.

#include <vector>

#include "deimv2/core.hpp"

namespace deimv2 {

struct BoxCxCyWh {
    double cx = 0, cy = 0, w = 0, h = 0;
};

struct BoxXyXy {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double area() const { return (x2 - x1) * (y2 - y1); }
};

inline BoxXyXy to_xyxy(const BoxCxCyWh& b) {
    return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}
inline BoxCxCyWh to_cxcywh(const BoxXyXy& b) {
    return {(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, b.x2 - b.x1, b.y2 - b.y1};
}

// IoU with zero-area and disjoint cases mapping to 0, never NaN
inline double iou(const BoxXyXy& a, const BoxXyXy& b) {
    double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0 || iy <= 0) return 0.0;
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;
    return inter / uni;
}
inline double iou(const BoxCxCyWh& a, const BoxCxCyWh& b) { return iou(to_xyxy(a), to_xyxy(b)); }

// GIoU = IoU - (|C| - |A u B|) / |C|, C the tightest enclosing box
inline double giou(const BoxXyXy& a, const BoxXyXy& b) {
    double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    double inter = (ix > 0 && iy > 0) ? ix * iy : 0.0;
    double uni = a.area() + b.area() - inter;
    double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    double carea = cw * ch;
    double i = uni > 0 ? inter / uni : 0.0;
    if (carea <= 0) return i;
    return i - (carea - uni) / carea;
}
inline double giou(const BoxCxCyWh& a, const BoxCxCyWh& b) { return giou(to_xyxy(a), to_xyxy(b)); }

inline std::vector<std::vector<double>> pairwise_iou(const std::vector<BoxCxCyWh>& A,
                                                     const std::vector<BoxCxCyWh>& B) {
    std::vector<std::vector<double>> r(A.size(), std::vector<double>(B.size(), 0.0));
    for (size_t i = 0; i < A.size(); ++i)
        for (size_t j = 0; j < B.size(); ++j) r[i][j] = iou(A[i], B[j]);
    return r;
}

inline std::vector<std::vector<double>> pairwise_giou(const std::vector<BoxCxCyWh>& A,
                                                      const std::vector<BoxCxCyWh>& B) {
    std::vector<std::vector<double>> r(A.size(), std::vector<double>(B.size(), 0.0));
    for (size_t i = 0; i < A.size(); ++i)
        for (size_t j = 0; j < B.size(); ++j) r[i][j] = giou(A[i], B[j]);
    return r;
}

// ---------------------------------------------------------------------------
// differentiable box math on [N,4] cxcywh tensors (used by the L1/GIoU losses)

template <typename T>
TensorT<T> boxes_to_xyxy(const TensorT<T>& b) {  // [N,4] cxcywh -> [N,4] xyxy
    check(b.ndim() == 2 && b.dim(1) == 4, "boxes_to_xyxy: need [N,4]");
    int N = b.dim(0);
    auto n = detail::make_op<T>("box_xyxy", {N, 4}, {b.node()});
    for (int i = 0; i < N; ++i) {
        const T* p = b.data().data() + size_t(i) * 4;
        T* o = n->val.data() + size_t(i) * 4;
        o[0] = p[0] - p[2] / 2; o[1] = p[1] - p[3] / 2;
        o[2] = p[0] + p[2] / 2; o[3] = p[1] + p[3] / 2;
    }
    if (n->requires_grad) n->backward = [N](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < N; ++i) {
            const T* g = s.grad.data() + size_t(i) * 4;
            T* d = p.grad.data() + size_t(i) * 4;
            d[0] += g[0] + g[2];
            d[1] += g[1] + g[3];
            d[2] += (g[2] - g[0]) / 2;
            d[3] += (g[3] - g[1]) / 2;
        }
    };
    return TensorT<T>(n);
}

template <typename T>
TensorT<T> boxes_to_cxcywh(const TensorT<T>& b) {  // [N,4] xyxy -> [N,4] cxcywh
    check(b.ndim() == 2 && b.dim(1) == 4, "boxes_to_cxcywh: need [N,4]");
    int N = b.dim(0);
    auto n = detail::make_op<T>("box_cxcywh", {N, 4}, {b.node()});
    for (int i = 0; i < N; ++i) {
        const T* p = b.data().data() + size_t(i) * 4;
        T* o = n->val.data() + size_t(i) * 4;
        o[0] = (p[0] + p[2]) / 2; o[1] = (p[1] + p[3]) / 2;
        o[2] = p[2] - p[0];       o[3] = p[3] - p[1];
    }
    if (n->requires_grad) n->backward = [N](Node<T>& s) {
        auto& p = *s.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < N; ++i) {
            const T* g = s.grad.data() + size_t(i) * 4;
            T* d = p.grad.data() + size_t(i) * 4;
            d[0] += g[0] / 2 - g[2];
            d[1] += g[1] / 2 - g[3];
            d[2] += g[0] / 2 + g[2];
            d[3] += g[1] / 2 + g[3];
        }
    };
    return TensorT<T>(n);
}

// new = sigmoid(logit(ref) + delta); refs are plain values clamped away from
// {0,1}, delta is a graph tensor [N,4]
template <typename T>
TensorT<T> refine_boxes(const std::vector<BoxCxCyWh>& ref, const TensorT<T>& delta) {
    check(delta.ndim() == 2 && delta.dim(1) == 4 && int(ref.size()) == delta.dim(0),
          "refine_boxes: need refs [N] and delta [N,4]");
    std::vector<T> lg(ref.size() * 4);
    auto logit = [](double v) {
        v = std::min(1.0 - 1e-4, std::max(1e-4, v));
        return std::log(v / (1.0 - v));
    };
    for (size_t i = 0; i < ref.size(); ++i) {
        lg[i * 4 + 0] = T(logit(ref[i].cx));
        lg[i * 4 + 1] = T(logit(ref[i].cy));
        lg[i * 4 + 2] = T(logit(ref[i].w));
        lg[i * 4 + 3] = T(logit(ref[i].h));
    }
    return sigmoid(add_const(delta, std::move(lg)));
}

// per-row GIoU between predicted boxes [N,4] (graph, cxcywh) and constant
// target boxes; returns [N] tensor, differentiable a.e.
template <typename T>
TensorT<T> giou_rows(const TensorT<T>& pred_cxcywh, const std::vector<BoxCxCyWh>& tgt) {
    check(pred_cxcywh.ndim() == 2 && pred_cxcywh.dim(1) == 4, "giou_rows: need [N,4]");
    int N = pred_cxcywh.dim(0);
    check(int(tgt.size()) == N, "giou_rows: target count mismatch");
    auto a = boxes_to_xyxy(pred_cxcywh);
    auto n = detail::make_op<T>("giou", {N}, {a.node()});
    for (int i = 0; i < N; ++i) {
        const T* p = a.data().data() + size_t(i) * 4;
        BoxXyXy pa{double(p[0]), double(p[1]), double(p[2]), double(p[3])};
        n->val[size_t(i)] = T(giou(pa, to_xyxy(tgt[size_t(i)])));
    }
    if (n->requires_grad) n->backward = [tgt, N](Node<T>& s) {
        auto& a = *s.parents[0];
        if (!a.requires_grad) return;
        a.ensure_grad();
        // analytic partials of giou wrt pred xyxy corners
        for (int i = 0; i < N; ++i) {
            T g = s.grad[size_t(i)];
            if (g == T(0)) continue;
            const T* p = a.val.data() + size_t(i) * 4;
            BoxXyXy bb = to_xyxy(tgt[size_t(i)]);
            double ax1 = double(p[0]), ay1 = double(p[1]), ax2 = double(p[2]), ay2 = double(p[3]);
            double ix1 = std::max(ax1, bb.x1), iy1 = std::max(ay1, bb.y1);
            double ix2 = std::min(ax2, bb.x2), iy2 = std::min(ay2, bb.y2);
            double iw = ix2 - ix1, ih = iy2 - iy1;
            double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
            double aw = ax2 - ax1, ah = ay2 - ay1;
            double area_a = aw * ah, area_b = bb.area();
            double uni = area_a + area_b - inter;
            double cx1 = std::min(ax1, bb.x1), cy1 = std::min(ay1, bb.y1);
            double cx2 = std::max(ax2, bb.x2), cy2 = std::max(ay2, bb.y2);
            double cw = cx2 - cx1, ch = cy2 - cy1, carea = cw * ch;
            // d inter / d corners
            double di[4] = {0, 0, 0, 0};
            if (inter > 0) {
                if (ax1 > bb.x1) di[0] = -ih;
                if (ay1 > bb.y1) di[1] = -iw;
                if (ax2 < bb.x2) di[2] = ih;
                if (ay2 < bb.y2) di[3] = iw;
            }
            double da[4] = {-ah, -aw, ah, aw};  // d area_a
            double dc[4] = {0, 0, 0, 0};        // d carea
            if (ax1 < bb.x1) dc[0] = -ch;
            if (ay1 < bb.y1) dc[1] = -cw;
            if (ax2 > bb.x2) dc[2] = ch;
            if (ay2 > bb.y2) dc[3] = cw;
            double u_inv = uni > 0 ? 1.0 / uni : 0.0;
            double grad4[4];
            for (int c = 0; c < 4; ++c) {
                double du = da[c] - di[c];
                double d_iou = uni > 0 ? (di[c] * uni - inter * du) * u_inv * u_inv : 0.0;
                double d_pen = 0.0;
                if (carea > 0) {
                    // penalty = (carea - uni)/carea = 1 - uni/carea
                    d_pen = -(du * carea - uni * dc[c]) / (carea * carea);
                }
                grad4[c] = d_iou - d_pen;
            }
            T* d = a.grad.data() + size_t(i) * 4;
            for (int c = 0; c < 4; ++c) d[c] += g * T(grad4[c]);
        }
    };
    return TensorT<T>(n);
}

}  // namespace deimv2
