#pragma once

// RT-DETR-style hybrid encoder: one self-attention layer on the deepest
// level, top-down + bottom-up convolutional fusion, a dense prediction head
// over every anchor, and top-K selection that seeds the decoder.

#include <algorithm>
#include <vector>

#include "deimv2/geometry.hpp"
#include "deimv2/hgnet.hpp"
#include "deimv2/nn.hpp"

namespace deimv2 {

struct EncoderHyper {
    int h_enc = 512;    // AIFI feed-forward hidden
    int h_fuse = 128;   // fuse block hidden width
    int n_fuse = 1;     // 3x3 convs per fuse block
    int n_dense = 1;    // 3x3 convs in the dense head
    bool sep_fuse = false;
    bool sep_ds = false;
    bool sep_dense = false;
};

struct FuseBlock {
    ConvLayer reduce, expand;
    std::vector<BlockConv> convs;
    int d = 0, hidden = 0;

    FuseBlock() = default;
    FuseBlock(ParamRegistry& reg, const std::string& name, int d_, int hidden_, int n, bool sep, Rng& rng)
        : d(d_), hidden(hidden_) {
        auto s = reg.scope(name);
        reduce = ConvLayer(reg, "reduce", 2 * d_, hidden_, 1, 1, rng, 1, true);
        for (int i = 0; i < n; ++i)
            convs.emplace_back(reg, "conv" + std::to_string(i), hidden_, rng, sep, true);
        expand = ConvLayer(reg, "expand", hidden_, d_, 1, 1, rng, 1, false);
    }
    Tensor operator()(const Tensor& a, const Tensor& b) const {
        auto x = reduce(concat0<float>({a, b}));
        for (auto& c : convs) x = c(x);
        return expand(x);
    }
    CostSheet costs(int H, int W) const {
        CostSheet c = reduce.costs(H, W);
        for (auto& cv : convs) c += cv.costs(H, W);
        c += expand.costs(H, W);
        return c;
    }
};

struct AnchorInfo {
    int level = 0;
    int cy = 0, cx = 0;          // grid cell
    BoxCxCyWh prior;             // cell center, level-proportional size
};

struct DenseProposals {
    Tensor class_logits;         // [A, C]
    Tensor boxes;                // [A, 4] cxcywh, decoded
    Tensor anchor_feats;         // [A, d_enc] fused features (pre-head)
    std::vector<AnchorInfo> anchors;
};

struct SelectedQueries {
    std::vector<int> indices;          // strictly decreasing by score
    Tensor content;                    // [K, d_dec]
    std::vector<BoxCxCyWh> ref_boxes;  // detached
};

struct HybridEncoder {
    int d = 0, num_classes = 80, num_levels = 2;
    EncoderHyper hyper;
    std::vector<ConvLayer> input_proj;      // HGNet levels only
    bool has_proj = false;
    MultiHeadAttention aifi_attn;
    LayerNormLayer aifi_ln1, aifi_ln2;
    Mlp aifi_ffn;
    std::vector<FuseBlock> fuse_td, fuse_bu;
    std::vector<ConvLayer> ds_full;
    std::vector<SepConvLayer> ds_sep;
    std::vector<BlockConv> dense_convs;
    ConvLayer dense_out;

    HybridEncoder() = default;
    HybridEncoder(ParamRegistry& reg, int d_, int num_classes_, const std::vector<int>& level_channels,
                  const EncoderHyper& h, Rng& rng)
        : d(d_), num_classes(num_classes_), num_levels(int(level_channels.size())), hyper(h) {
        auto sc = reg.scope("encoder");
        for (size_t i = 0; i < level_channels.size(); ++i) {
            if (level_channels[i] != d_) {
                has_proj = true;
                input_proj.emplace_back(reg, "proj" + std::to_string(i), level_channels[i], d_, 1, 1, rng, 1, false);
            }
        }
        check(!has_proj || input_proj.size() == level_channels.size(),
              "encoder: either all levels need projection or none");
        aifi_attn = MultiHeadAttention(reg, "aifi.attn", d_, attn_heads_for(d_), rng);
        aifi_ln1 = LayerNormLayer(reg, "aifi.ln1", d_);
        aifi_ln2 = LayerNormLayer(reg, "aifi.ln2", d_);
        aifi_ffn = Mlp(reg, "aifi.ffn", d_, h.h_enc, rng);
        for (int i = 0; i < num_levels - 1; ++i) {
            fuse_td.emplace_back(reg, "fuse_td" + std::to_string(i), d_, h.h_fuse, h.n_fuse, h.sep_fuse, rng);
            fuse_bu.emplace_back(reg, "fuse_bu" + std::to_string(i), d_, h.h_fuse, h.n_fuse, h.sep_fuse, rng);
            if (h.sep_ds) ds_sep.emplace_back(reg, "ds" + std::to_string(i), d_, 2, rng, false);
            else ds_full.emplace_back(reg, "ds" + std::to_string(i), d_, d_, 3, 2, rng, 1, false);
        }
        for (int i = 0; i < h.n_dense; ++i)
            dense_convs.emplace_back(reg, "dense" + std::to_string(i), d_, rng, h.sep_dense, true);
        dense_out = ConvLayer(reg, "dense_out", d_, num_classes_ + 4, 1, 1, rng, 1, false);
        // focal-style prior so dense class probabilities start near 0.01
        for (int c = 0; c < num_classes_; ++c) dense_out.b.data()[size_t(c)] = -4.595f;
    }

    std::pair<FeaturePyramid, DenseProposals> forward(const FeaturePyramid& pyramid,
                                                      int img_h, int img_w) const {
        check(int(pyramid.size()) == num_levels, "encoder: unexpected level count");
        std::vector<Tensor> lv(pyramid.size());
        for (size_t i = 0; i < pyramid.size(); ++i)
            lv[i] = has_proj ? input_proj[i](pyramid[i].feature) : pyramid[i].feature;

        // AIFI on the deepest level only
        {
            auto& deep = lv.back();
            int h = deep.dim(1), w = deep.dim(2);
            auto tok = chw_to_tokens(deep);
            auto pos = sincos_pos_2d(h, w, d);
            auto t = aifi_ln1(tok);
            auto tp = add(t, pos);
            tok = add(tok, aifi_attn(tp, tp, t));
            tok = add(tok, aifi_ffn(aifi_ln2(tok)));
            lv.back() = tokens_to_chw(tok, h, w);
        }

        // top-down then bottom-up fusion
        std::vector<Tensor> td(lv.size());
        td.back() = lv.back();
        for (int i = num_levels - 2; i >= 0; --i) {
            auto up = bilinear_resize(td[size_t(i + 1)], lv[size_t(i)].dim(1), lv[size_t(i)].dim(2));
            td[size_t(i)] = fuse_td[size_t(i)](lv[size_t(i)], up);
        }
        std::vector<Tensor> bu(lv.size());
        bu[0] = td[0];
        for (int i = 1; i < num_levels; ++i) {
            auto down = hyper.sep_ds ? ds_sep[size_t(i - 1)](bu[size_t(i - 1)])
                                     : ds_full[size_t(i - 1)](bu[size_t(i - 1)]);
            bu[size_t(i)] = fuse_bu[size_t(i - 1)](td[size_t(i)], down);
        }

        FeaturePyramid fused;
        for (size_t i = 0; i < bu.size(); ++i) fused.push_back({pyramid[i].stride, bu[i]});

        // dense head over every level
        DenseProposals props;
        std::vector<Tensor> logits_parts, delta_parts, feat_parts;
        std::vector<float> prior_logits;
        for (size_t i = 0; i < fused.size(); ++i) {
            auto x = fused[i].feature;
            for (auto& c : dense_convs) x = c(x);
            auto head = dense_out(x);                      // [C+4, h, w]
            auto head_tok = chw_to_tokens(head);           // [h*w, C+4]
            logits_parts.push_back(slice_cols(head_tok, 0, num_classes));
            delta_parts.push_back(slice_cols(head_tok, num_classes, num_classes + 4));
            feat_parts.push_back(chw_to_tokens(x));
            int gh = head.dim(1), gw = head.dim(2), stride = fused[i].stride;
            for (int cy = 0; cy < gh; ++cy)
                for (int cx = 0; cx < gw; ++cx) {
                    AnchorInfo a;
                    a.level = int(i);
                    a.cy = cy; a.cx = cx;
                    a.prior.cx = (cx + 0.5) * stride / img_w;
                    a.prior.cy = (cy + 0.5) * stride / img_h;
                    a.prior.w = std::min(0.99, 4.0 * stride / img_w);
                    a.prior.h = std::min(0.99, 4.0 * stride / img_h);
                    props.anchors.push_back(a);
                }
        }
        props.class_logits = concat0<float>(logits_parts);
        props.anchor_feats = concat0<float>(feat_parts);
        std::vector<BoxCxCyWh> priors(props.anchors.size());
        for (size_t i = 0; i < priors.size(); ++i) priors[i] = props.anchors[i].prior;
        props.boxes = refine_boxes(priors, concat0<float>(delta_parts));
        (void)prior_logits;
        return {fused, props};
    }

    // scores are per-anchor max class logits; deterministic tie-break by
    // lower anchor index; K <= A required
    static std::vector<int> topk_indices(const Tensor& class_logits, int K) {
        int A = class_logits.dim(0), C = class_logits.dim(1);
        check(K <= A, "select_topk: K = " + std::to_string(K) + " exceeds anchor count " + std::to_string(A));
        std::vector<std::pair<float, int>> scored(size_t{size_t(A)});
        for (int a = 0; a < A; ++a) {
            float m = class_logits.data()[size_t(a) * C];
            for (int c = 1; c < C; ++c) m = std::max(m, class_logits.data()[size_t(a) * C + c]);
            scored[size_t(a)] = {m, a};
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        std::vector<int> idx(size_t{size_t(K)});
        for (int i = 0; i < K; ++i) idx[size_t(i)] = scored[size_t(i)].second;
        return idx;
    }

    CostSheet costs(const std::vector<std::pair<int, int>>& level_hw,
                    const std::vector<int>& level_channels) const {
        CostSheet c;
        std::vector<int64_t> cells;
        for (auto& [h, w] : level_hw) cells.push_back(int64_t(h) * w);
        if (has_proj)
            for (size_t i = 0; i < input_proj.size(); ++i)
                c += input_proj[i].costs(level_hw[i].first, level_hw[i].second);
        (void)level_channels;
        int64_t ntok = cells.back();
        c += aifi_attn.costs(ntok);
        c += aifi_ffn.costs(ntok);
        c.act_elems += 2 * ntok * d;  // norms
        for (int i = num_levels - 2; i >= 0; --i) {
            c.macs += 4 * int64_t(d) * cells[size_t(i)];  // upsample interpolation
            c += fuse_td[size_t(i)].costs(level_hw[size_t(i)].first, level_hw[size_t(i)].second);
        }
        for (int i = 1; i < num_levels; ++i) {
            if (hyper.sep_ds) c += ds_sep[size_t(i - 1)].costs(level_hw[size_t(i - 1)].first, level_hw[size_t(i - 1)].second);
            else c += ds_full[size_t(i - 1)].costs(level_hw[size_t(i - 1)].first, level_hw[size_t(i - 1)].second);
            c += fuse_bu[size_t(i - 1)].costs(level_hw[size_t(i)].first, level_hw[size_t(i)].second);
        }
        for (auto& [h, w] : level_hw) {
            for (auto& dc : dense_convs) c += dc.costs(h, w);
            c += dense_out.costs(h, w);
        }
        return c;
    }
};

}  // namespace deimv2
