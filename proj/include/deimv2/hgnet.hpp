#pragma once

// HGNetv2-B0 and its pruned descendants for the ultra-light variants.
// Stage widths follow the published B0 table; the P/F/A rules prune depth
// and width progressively. Emits a two-level pyramid.

#include <vector>

#include "deimv2/nn.hpp"

namespace deimv2 {

enum class HGVariant { B0, P, F, A };

struct PruneRule {
    HGVariant variant = HGVariant::B0;
    bool drop_stage4 = false;
    int last_stage_blocks = 2;
    int last_block_channels = 512;  // output channels of the deepest stage
    int last_block_mid = 64;        // hidden width inside the deepest blocks
};

inline PruneRule prune_rule(HGVariant v) {
    switch (v) {
        case HGVariant::B0: return {v, false, 1, 1024, 128};
        case HGVariant::P:  return {v, true, 2, 512, 64};
        case HGVariant::F:  return {v, true, 1, 256, 64};
        case HGVariant::A:  return {v, true, 1, 256, 32};
    }
    return {};
}

struct HGStageSpec {
    int cin = 0, mid = 0, cout = 0;
    int blocks = 1;
    bool downsample = false;
    bool light = false;  // 1x1 + depthwise-5x5 layers instead of full 3x3
};

inline std::vector<HGStageSpec> hg_stages(const PruneRule& r) {
    std::vector<HGStageSpec> s = {
        {16, 16, 64, 1, false, false},
        {64, 32, 256, 1, true, false},
        {256, 64, 512, 2, true, true},
        {512, 128, 1024, 1, true, true},
    };
    if (r.drop_stage4) {
        s.pop_back();
        s.back().blocks = r.last_stage_blocks;
        s.back().cout = r.last_block_channels;
        s.back().mid = r.last_block_mid;
    } else {
        s.back().blocks = r.last_stage_blocks;
        s.back().cout = r.last_block_channels;
        s.back().mid = r.last_block_mid;
    }
    return s;
}

// one HG block: a stack of convolutions whose outputs accumulate by channel
// concatenation, squeezed back through a two-step 1x1 aggregation; residual
// when input and output widths agree
struct HGBlock {
    std::vector<ConvLayer> layers;      // full 3x3 path
    std::vector<ConvLayer> light_pre;   // light path: 1x1 then depthwise 5x5
    std::vector<ConvLayer> light_dw;
    ConvLayer squeeze, excite;
    bool light = false, residual = false;
    int cin = 0, mid = 0, cout = 0;
    static constexpr int kConvs = 3;

    HGBlock() = default;
    HGBlock(ParamRegistry& reg, const std::string& name, int cin_, int mid_, int cout_, bool light_, Rng& rng)
        : light(light_), residual(cin_ == cout_), cin(cin_), mid(mid_), cout(cout_) {
        auto s = reg.scope(name);
        int c = cin;
        for (int i = 0; i < kConvs; ++i) {
            std::string nm = "conv" + std::to_string(i);
            if (light) {
                light_pre.emplace_back(reg, nm + ".pre", c, mid, 1, 1, rng, 1, false);
                light_dw.emplace_back(reg, nm + ".dw", mid, mid, 5, 1, rng, mid, true);
            } else {
                layers.emplace_back(reg, nm, c, mid, 3, 1, rng, 1, true);
            }
            c = mid;
        }
        squeeze = ConvLayer(reg, "squeeze", cin + kConvs * mid, cout / 2, 1, 1, rng, 1, true);
        excite = ConvLayer(reg, "excite", cout / 2, cout, 1, 1, rng, 1, true);
    }
    Tensor operator()(const Tensor& x) const {
        std::vector<Tensor> feats = {x};
        Tensor cur = x;
        for (int i = 0; i < kConvs; ++i) {
            cur = light ? light_dw[size_t(i)](light_pre[size_t(i)](cur)) : layers[size_t(i)](cur);
            feats.push_back(cur);
        }
        auto y = excite(squeeze(concat0<float>(feats)));
        return residual ? add(y, x) : y;
    }
    CostSheet costs(int H, int W) const {
        CostSheet c;
        for (int i = 0; i < kConvs; ++i) {
            if (light) { c += light_pre[size_t(i)].costs(H, W); c += light_dw[size_t(i)].costs(H, W); }
            else c += layers[size_t(i)].costs(H, W);
        }
        c += squeeze.costs(H, W);
        c += excite.costs(H, W);
        return c;
    }
};

struct FeatureLevel {
    int stride = 0;
    Tensor feature;  // [C, H/stride, W/stride]
};
using FeaturePyramid = std::vector<FeatureLevel>;

struct HGNetBackbone {
    PruneRule rule;
    std::vector<HGStageSpec> stages;
    ConvLayer stem1, stem2a, stem2b, stem3, stem4;
    std::vector<ConvLayer> downsamples;           // depthwise 3x3 stride 2 at stage entry
    std::vector<std::vector<HGBlock>> stage_blocks;

    HGNetBackbone() = default;
    HGNetBackbone(ParamRegistry& reg, const PruneRule& r, Rng& rng) : rule(r), stages(hg_stages(r)) {
        auto sc = reg.scope("backbone");
        stem1 = ConvLayer(reg, "stem1", 3, 16, 3, 2, rng);
        stem2a = ConvLayer(reg, "stem2a", 16, 8, 3, 1, rng);
        stem2b = ConvLayer(reg, "stem2b", 8, 16, 3, 1, rng);
        stem3 = ConvLayer(reg, "stem3", 32, 16, 3, 2, rng);
        stem4 = ConvLayer(reg, "stem4", 16, 16, 1, 1, rng);
        for (size_t i = 0; i < stages.size(); ++i) {
            auto& st = stages[i];
            if (st.downsample)
                downsamples.emplace_back(reg, "ds" + std::to_string(i), st.cin, st.cin, 3, 2, rng, st.cin, false);
            std::vector<HGBlock> blocks;
            int c = st.cin;
            for (int b = 0; b < st.blocks; ++b) {
                blocks.emplace_back(reg, "stage" + std::to_string(i) + ".block" + std::to_string(b),
                                    c, st.mid, st.cout, st.light, rng);
                c = st.cout;
            }
            stage_blocks.push_back(std::move(blocks));
        }
    }

    int min_divisor() const { return rule.drop_stage4 ? 16 : 32; }

    // two deepest stage outputs: {16,32} for B0, {8,16} for P/F/A
    FeaturePyramid forward(const Tensor& image) const {
        check(image.ndim() == 3 && image.dim(0) == 3, "hgnet: image must be [3,H,W]");
        int H = image.dim(1), W = image.dim(2);
        int div = min_divisor();
        check(H % div == 0 && W % div == 0,
              "hgnet: resolution " + std::to_string(H) + "x" + std::to_string(W) +
              " not divisible by " + std::to_string(div) + "; letterbox-pad the input");
        auto s1 = stem1(image);
        auto s2 = stem2b(stem2a(s1));
        auto x = stem4(stem3(concat0<float>({s1, s2})));
        int stride = 4;
        FeaturePyramid all;
        size_t ds = 0;
        for (size_t i = 0; i < stages.size(); ++i) {
            if (stages[i].downsample) {
                x = downsamples[ds++](x);
                stride *= 2;
            }
            for (auto& b : stage_blocks[i]) x = b(x);
            all.push_back({stride, x});
        }
        return {all.end() - 2, all.end()};
    }

    CostSheet costs(int H, int W) const {
        CostSheet c = stem1.costs(H, W);
        c += stem2a.costs(H / 2, W / 2);
        c += stem2b.costs(H / 2, W / 2);
        c += stem3.costs(H / 2, W / 2);
        c += stem4.costs(H / 4, W / 4);
        int stride = 4;
        size_t ds = 0;
        for (size_t i = 0; i < stages.size(); ++i) {
            if (stages[i].downsample) {
                c += downsamples[ds++].costs(H / stride, W / stride);
                stride *= 2;
            }
            for (auto& b : stage_blocks[i]) c += b.costs(H / stride, W / stride);
        }
        return c;
    }
};

}  // namespace deimv2
