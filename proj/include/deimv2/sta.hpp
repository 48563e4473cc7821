#pragma once

// Spatial Tuning Adapter: parameter-free resizing of the three stride-16 ViT
// taps into a {8,16,32} pyramid, a fast-downsampling detail path over the raw
// image, and per-level Bi-Fusion (two 1x1 projections, sum, one 3x3 refine).

#include <vector>

#include "deimv2/hgnet.hpp"
#include "deimv2/vit.hpp"

namespace deimv2 {

// shallow tap feeds the fine level, deep tap the coarse one
inline const std::vector<int>& sta_tap_indices() {
    static const std::vector<int> taps = {5, 8, 11};
    return taps;
}
inline const std::vector<int>& sta_strides() {
    static const std::vector<int> s = {8, 16, 32};
    return s;
}

// resize the stride-16 taps to strides {8,16,32}; contributes no parameters
inline std::vector<Tensor> resize_taps(const TapSet& taps) {
    check(taps.features.size() == 3, "resize_taps: expected 3 taps");
    int h = taps.features[0].dim(1), w = taps.features[0].dim(2);
    std::vector<Tensor> out(3);
    out[0] = bilinear_resize(taps.features[0], h * 2, w * 2);
    out[1] = bilinear_resize(taps.features[1], h, w);
    out[2] = bilinear_resize(taps.features[2], (h + 1) / 2, (w + 1) / 2);
    return out;
}

struct DetailPath {
    // channel schedule 16 -> 32(s8) -> 64(s16) -> 128(s32); the stride-32 map
    // comes from a 1x1 stride-2 conv so every detail feature keeps a receptive
    // field of at most 31 pixels
    ConvLayer c1, c2, c3, c4, c5;

    DetailPath() = default;
    DetailPath(ParamRegistry& reg, Rng& rng) {
        auto s = reg.scope("detail");
        c1 = ConvLayer(reg, "c1", 3, 16, 3, 2, rng);
        c2 = ConvLayer(reg, "c2", 16, 16, 3, 2, rng);
        c3 = ConvLayer(reg, "c3", 16, 32, 3, 2, rng);
        c4 = ConvLayer(reg, "c4", 32, 64, 3, 2, rng);
        c5 = ConvLayer(reg, "c5", 64, 128, 1, 2, rng);
    }
    // maps at strides 8, 16, 32
    std::vector<Tensor> operator()(const Tensor& image) const {
        auto d8 = c3(c2(c1(image)));
        auto d16 = c4(d8);
        auto d32 = c5(d16);
        return {d8, d16, d32};
    }
    CostSheet costs(int H, int W) const {
        CostSheet c = c1.costs(H, W);
        c += c2.costs(H / 2, W / 2);
        c += c3.costs(H / 4, W / 4);
        c += c4.costs(H / 8, W / 8);
        c += c5.costs(H / 16, W / 16);
        return c;
    }
    static const std::vector<int>& channels() {
        static const std::vector<int> ch = {32, 64, 128};
        return ch;
    }
};

struct BiFusion {
    ConvLayer proj_sem, proj_det, refine;

    BiFusion() = default;
    BiFusion(ParamRegistry& reg, const std::string& name, int d_back, int c_det, int d_enc, Rng& rng) {
        auto s = reg.scope(name);
        proj_sem = ConvLayer(reg, "sem", d_back, d_enc, 1, 1, rng, 1, false);
        proj_det = ConvLayer(reg, "det", c_det, d_enc, 1, 1, rng, 1, false);
        refine = ConvLayer(reg, "refine", d_enc, d_enc, 3, 1, rng, 1, true);
    }
    Tensor operator()(const Tensor& semantic, const Tensor& detail) const {
        check(semantic.dim(1) == detail.dim(1) && semantic.dim(2) == detail.dim(2),
              "bi_fusion: spatial shapes disagree " + shape_str(semantic.shape()) + " vs " +
              shape_str(detail.shape()));
        return refine(add(proj_sem(semantic), proj_det(detail)));
    }
    CostSheet costs(int H, int W) const {
        CostSheet c = proj_sem.costs(H, W);
        c += proj_det.costs(H, W);
        c += refine.costs(H, W);
        return c;
    }
};

struct STA {
    int d_back = 0, d_enc = 0;
    DetailPath detail;
    std::vector<BiFusion> fusions;  // one per level
    bool detail_enabled = true;     // ablation hook: values change, shapes never

    STA() = default;
    STA(ParamRegistry& reg, int d_back_, int d_enc_, Rng& rng) : d_back(d_back_), d_enc(d_enc_) {
        auto s = reg.scope("sta");
        detail = DetailPath(reg, rng);
        for (int l = 0; l < 3; ++l)
            fusions.emplace_back(reg, "fusion" + std::to_string(l), d_back_,
                                 DetailPath::channels()[size_t(l)], d_enc_, rng);
    }

    FeaturePyramid operator()(const Tensor& image, const TapSet& taps) const {
        auto semantic = resize_taps(taps);
        auto det = detail(image);
        FeaturePyramid pyr;
        for (int l = 0; l < 3; ++l) {
            Tensor d = det[size_t(l)];
            if (!detail_enabled) d = Tensor::zeros(d.shape());
            pyr.push_back({sta_strides()[size_t(l)], fusions[size_t(l)](semantic[size_t(l)], d)});
        }
        return pyr;
    }

    CostSheet costs(int H, int W) const {
        CostSheet c = detail.costs(H, W);
        // tap resizes: 4 MACs per interpolated output (identity level free)
        c.macs += 4 * int64_t(d_back) * ((H / 8) * (W / 8) + (H / 32) * (W / 32));
        for (int l = 0; l < 3; ++l) {
            int s = sta_strides()[size_t(l)];
            c += fusions[size_t(l)].costs(H / s, W / s);
        }
        return c;
    }
};

}  // namespace deimv2
