#pragma once

// Efficient decoder: iterative refinement over the selected queries with
// multi-scale deformable attention, SwiGLU feed-forwards, RMS normalization,
// one position embedding shared by every layer, and a distribution-based
// box head whose expected offsets drive the between-layer refinement.

#include <vector>

#include "deimv2/encoder.hpp"
#include "deimv2/geometry.hpp"
#include "deimv2/nn.hpp"

namespace deimv2 {

struct DecoderConfig {
    int layers = 3;
    int d = 64;
    int heads = 2;              // d/32 rounded down to a divisor of d, min 2
    int sampling_points = 4;    // per level
    int dist_bins = 16;
    double bin_range = 0.5;     // offsets span [-0.5, 0.5] box units
    int num_levels = 2;
    int num_queries = 100;
    int num_classes = 80;
    int ffn_hidden = 128;
};

inline std::vector<float> dist_bin_centers(int n, double range) {
    std::vector<float> c(size_t{size_t(n)});
    for (int i = 0; i < n; ++i) c[size_t(i)] = float(-range + 2.0 * range * i / (n - 1));
    return c;
}

// expected edge offsets from softmax-normalized bin logits, applied to the
// reference edges in units of box size; result clamped to [0,1]
inline Tensor integral_boxes(const Tensor& dist_logits, const std::vector<BoxCxCyWh>& refs,
                             int bins, double range) {
    int K = int(refs.size());
    check(dist_logits.ndim() == 2 && dist_logits.dim(0) == K && dist_logits.dim(1) == 4 * bins,
          "integral_boxes: logits must be [K, 4*bins]");
    auto soft = softmax(reshape(dist_logits, {K * 4, bins}));
    auto centers = Tensor::from({bins, 1}, dist_bin_centers(bins, range));
    auto offs = reshape(matmul(soft, centers), {K, 4});   // [K,4] in box units
    std::vector<float> unit(size_t(K) * 4), base(size_t(K) * 4);
    for (int i = 0; i < K; ++i) {
        auto xy = to_xyxy(refs[size_t(i)]);
        unit[size_t(i) * 4 + 0] = float(refs[size_t(i)].w);
        unit[size_t(i) * 4 + 1] = float(refs[size_t(i)].h);
        unit[size_t(i) * 4 + 2] = float(refs[size_t(i)].w);
        unit[size_t(i) * 4 + 3] = float(refs[size_t(i)].h);
        base[size_t(i) * 4 + 0] = float(xy.x1);
        base[size_t(i) * 4 + 1] = float(xy.y1);
        base[size_t(i) * 4 + 2] = float(xy.x2);
        base[size_t(i) * 4 + 3] = float(xy.y2);
    }
    auto edges = add_const(mul_const(offs, std::move(unit)), std::move(base));
    return clamp(boxes_to_cxcywh(edges), 0.f, 1.f);
}

// FGL/DDF target offsets: the inverse of the integral decode
inline void edge_offset_targets(const BoxCxCyWh& ref, const BoxCxCyWh& gt, double range,
                                double out[4]) {
    auto r = to_xyxy(ref), g = to_xyxy(gt);
    double w = std::max(ref.w, 1e-6), h = std::max(ref.h, 1e-6);
    out[0] = std::clamp((g.x1 - r.x1) / w, -range, range);
    out[1] = std::clamp((g.y1 - r.y1) / h, -range, range);
    out[2] = std::clamp((g.x2 - r.x2) / w, -range, range);
    out[3] = std::clamp((g.y2 - r.y2) / h, -range, range);
}

struct MSDeformAttn {
    LinearLayer offsets, weights, out;
    int d = 0, heads = 0, levels = 0, points = 0;

    MSDeformAttn() = default;
    MSDeformAttn(ParamRegistry& reg, const std::string& name, int d_, int heads_, int levels_,
                 int points_, Rng& rng)
        : d(d_), heads(heads_), levels(levels_), points(points_) {
        auto sc = reg.scope(name);
        int hlp = heads_ * levels_ * points_;
        offsets = LinearLayer(reg, "offsets", d_, hlp * 2, rng);
        weights = LinearLayer(reg, "weights", d_, hlp, rng);
        out = LinearLayer(reg, "out", d_, d_, rng);
        // start from a directional sampling pattern with uniform weights
        std::fill(offsets.W.data().begin(), offsets.W.data().end(), 0.f);
        std::fill(weights.W.data().begin(), weights.W.data().end(), 0.f);
        for (int h = 0; h < heads_; ++h) {
            double th = 2.0 * 3.14159265358979 * h / heads_;
            for (int l = 0; l < levels_; ++l)
                for (int p = 0; p < points_; ++p) {
                    int base = ((h * levels_ + l) * points_ + p) * 2;
                    double m = 0.5 * (p + 1) / points_;
                    offsets.b.data()[size_t(base)] = float(std::cos(th) * m);
                    offsets.b.data()[size_t(base) + 1] = float(std::sin(th) * m);
                }
        }
    }

    // value_maps: per level [d, h, w], sorted by stride ascending
    Tensor operator()(const Tensor& query, const std::vector<BoxCxCyWh>& refs,
                      const std::vector<Tensor>& value_maps) const {
        check(int(value_maps.size()) == levels, "msdeform: level count mismatch");
        int K = query.dim(0);
        check(int(refs.size()) == K, "msdeform: refs/query mismatch");
        int dh = d / heads;
        auto off = offsets(query);                                   // [K, HLP*2]
        auto wl = weights(query);                                    // [K, HLP]
        auto wsm = reshape(softmax(reshape(wl, {K * heads, levels * points})), {K, heads * levels * points});
        std::vector<float> sx(size_t(K) * points * 2), bx(size_t(K) * points * 2);
        for (int k = 0; k < K; ++k)
            for (int p = 0; p < points; ++p) {
                sx[(size_t(k) * points + p) * 2 + 0] = float(refs[size_t(k)].w * 0.5);
                sx[(size_t(k) * points + p) * 2 + 1] = float(refs[size_t(k)].h * 0.5);
                bx[(size_t(k) * points + p) * 2 + 0] = float(refs[size_t(k)].cx);
                bx[(size_t(k) * points + p) * 2 + 1] = float(refs[size_t(k)].cy);
            }
        std::vector<Tensor> head_outs;
        head_outs.reserve(size_t(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor acc;
            for (int l = 0; l < levels; ++l) {
                int col = (h * levels + l) * points;
                auto off_hl = reshape(slice_cols(off, col * 2, (col + points) * 2), {K * points, 2});
                auto pts = add_const(mul_const(off_hl, sx), bx);
                auto vh = slice0(value_maps[size_t(l)], h * dh, (h + 1) * dh);
                auto sampled = sample_points(vh, pts);               // [K*P, dh]
                auto w_hl = reshape(slice_cols(wsm, col, col + points), {K * points});
                auto contrib = sum_row_groups(mul_colvec(sampled, w_hl), points);
                acc = acc.defined() ? add(acc, contrib) : contrib;
            }
            head_outs.push_back(acc);
        }
        return out(concat_cols(head_outs));
    }

    CostSheet costs(int64_t K) const {
        CostSheet c;
        int hlp = heads * levels * points;
        c.macs = K * int64_t(d) * hlp * 2 + K * int64_t(d) * hlp +
                 K * int64_t(hlp) * (d / heads) * 4 + K * int64_t(d) * d;
        c.act_elems = K * hlp;  // weight softmax
        return c;
    }
};

struct DecoderLayer {
    RMSNormLayer n1, n2, n3;
    MultiHeadAttention self_attn;
    MSDeformAttn cross;
    SwiGLU ffn;

    DecoderLayer() = default;
    DecoderLayer(ParamRegistry& reg, const std::string& name, const DecoderConfig& c, Rng& rng) {
        auto sc = reg.scope(name);
        n1 = RMSNormLayer(reg, "n1", c.d);
        self_attn = MultiHeadAttention(reg, "self_attn", c.d, c.heads, rng);
        n2 = RMSNormLayer(reg, "n2", c.d);
        cross = MSDeformAttn(reg, "cross", c.d, c.heads, c.num_levels, c.sampling_points, rng);
        n3 = RMSNormLayer(reg, "n3", c.d);
        ffn = SwiGLU(reg, "ffn", c.d, c.ffn_hidden, rng);
    }
    Tensor operator()(const Tensor& x, const Tensor& pos, const std::vector<BoxCxCyWh>& refs,
                      const std::vector<Tensor>& value_maps) const {
        auto t = n1(x);
        auto tp = add(t, pos);
        auto y = add(x, self_attn(tp, tp, t));
        auto t2 = n2(y);
        y = add(y, cross(t2, refs, value_maps));
        auto t3 = n3(y);
        return add(y, ffn(t3));
    }
    CostSheet costs(int64_t K) const {
        CostSheet c = self_attn.costs(K);
        c += cross.costs(K);
        c += ffn.costs(K);
        c.act_elems += 3 * K * int64_t(ffn.d);
        return c;
    }
};

struct LayerPrediction {
    Tensor class_logits;   // [K, C]
    Tensor boxes;          // [K, 4] cxcywh in [0,1]
    Tensor dist_softmax;   // [K*4, bins], rows sum to 1
    std::vector<BoxCxCyWh> refs_used;
};

struct Decoder {
    DecoderConfig cfg;
    Tensor pos_embed;        // [K, d], the single shared set
    Tensor tgt_embed;        // [K, d] learned content embedding
    LinearLayer anchor_proj;
    LinearLayer value_proj;  // shared across layers
    std::vector<DecoderLayer> layers;
    LinearLayer class_head, dist_head;  // shared across layers

    Decoder() = default;
    Decoder(ParamRegistry& reg, const DecoderConfig& c, Rng& rng) : cfg(c) {
        auto sc = reg.scope("decoder");
        pos_embed = reg.add("pos_embed", normal_param({c.num_queries, c.d}, 0.02, rng), true);
        tgt_embed = reg.add("tgt_embed", normal_param({c.num_queries, c.d}, 0.02, rng), true);
        anchor_proj = LinearLayer(reg, "anchor_proj", c.d, c.d, rng);
        value_proj = LinearLayer(reg, "value_proj", c.d, c.d, rng);
        for (int i = 0; i < c.layers; ++i)
            layers.emplace_back(reg, "layers." + std::to_string(i), c, rng);
        class_head = LinearLayer(reg, "class_head", c.d, c.num_classes, rng);
        dist_head = LinearLayer(reg, "dist_head", c.d, 4 * c.dist_bins, rng);
        for (auto& b : class_head.b.data()) b = -4.595f;  // p0 = 0.01 prior
    }

    // content from detached anchor features plus the learned embedding
    Tensor make_content(const Tensor& anchor_feats_detached) const {
        return add(anchor_proj(anchor_feats_detached), tgt_embed);
    }

    std::vector<Tensor> project_values(const FeaturePyramid& pyramid) const {
        std::vector<Tensor> vm;
        for (auto& lv : pyramid) {
            int h = lv.feature.dim(1), w = lv.feature.dim(2);
            vm.push_back(tokens_to_chw(value_proj(chw_to_tokens(lv.feature)), h, w));
        }
        return vm;
    }

    // runs the layers sequentially; every layer emits predictions (deep
    // supervision); references are detached between layers
    std::vector<LayerPrediction> forward(const Tensor& content, const std::vector<BoxCxCyWh>& initial_refs,
                                         const FeaturePyramid& pyramid) const {
        FeaturePyramid sorted = pyramid;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const FeatureLevel& a, const FeatureLevel& b) { return a.stride < b.stride; });
        auto value_maps = project_values(sorted);
        std::vector<LayerPrediction> preds;
        Tensor x = content;
        std::vector<BoxCxCyWh> refs = initial_refs;
        for (auto& layer : layers) {
            x = layer(x, pos_embed, refs, value_maps);
            LayerPrediction p;
            p.refs_used = refs;
            p.class_logits = class_head(x);
            auto dist_logits = dist_head(x);
            p.dist_softmax = softmax(reshape(dist_logits, {cfg.num_queries * 4, cfg.dist_bins}));
            p.boxes = integral_boxes(dist_logits, refs, cfg.dist_bins, cfg.bin_range);
            preds.push_back(p);
            refs.resize(size_t(cfg.num_queries));
            for (int k = 0; k < cfg.num_queries; ++k) {
                const float* bv = p.boxes.data().data() + size_t(k) * 4;
                refs[size_t(k)] = {bv[0], bv[1], bv[2], bv[3]};
            }
        }
        return preds;
    }

    CostSheet costs(int64_t total_cells) const {
        CostSheet c;
        int64_t K = cfg.num_queries;
        c.macs += anchor_proj.macs(K);
        c.macs += value_proj.macs(total_cells);
        for (auto& l : layers) c += l.costs(K);
        c.macs += int64_t(cfg.layers) * (class_head.macs(K) + dist_head.macs(K));
        c.act_elems += int64_t(cfg.layers) * K * 4 * cfg.dist_bins;  // dist softmax
        return c;
    }
};

}  // namespace deimv2
