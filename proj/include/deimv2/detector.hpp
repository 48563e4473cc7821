#pragma once

// Assembles a full detector from a VariantSpec: backbone (+ STA for the ViT
// variants), hybrid encoder, top-K selection, decoder. Head widths/depths the
// tables leave open are fixed per variant here.

#include <memory>

#include "deimv2/config.hpp"
#include "deimv2/decoder.hpp"
#include "deimv2/encoder.hpp"
#include "deimv2/hgnet.hpp"
#include "deimv2/sta.hpp"
#include "deimv2/vit.hpp"

namespace deimv2 {

struct ArchHyper {
    EncoderHyper enc;
    int h_dec = 128;  // decoder SwiGLU hidden
};

inline ArchHyper arch_hyper(const VariantSpec& s) {
    auto mk = [](int h_enc, int h_fuse, int n_fuse, int n_dense, int h_dec,
                 bool sep_fuse, bool sep_ds, bool sep_dense) {
        ArchHyper a;
        a.enc = {h_enc, h_fuse, n_fuse, n_dense, sep_fuse, sep_ds, sep_dense};
        a.h_dec = h_dec;
        return a;
    };
    if (s.name == "X") return mk(1024, 256, 3, 5, 2048, false, false, false);
    if (s.name == "L") return mk(1024, 192, 2, 3, 768, false, false, false);
    if (s.name == "M") return mk(768, 192, 1, 1, 512, false, false, false);
    if (s.name == "S") return mk(384, 96, 1, 1, 256, false, true, true);
    if (s.name == "Nano") return mk(192, 64, 1, 8, 96, false, true, false);
    if (s.name == "Pico") return mk(224, 48, 1, 1, 224, false, true, false);
    if (s.name == "Femto") return mk(192, 64, 1, 2, 192, false, true, false);
    if (s.name == "Atto") return mk(128, 32, 1, 2, 96, false, true, false);
    // user-defined variants default to lean proportional widths
    return mk(2 * s.d_enc, std::max(16, s.d_enc / 2), 1, 1, 2 * s.d_dec, false, true, false);
}

struct ForwardResult {
    FeaturePyramid fused;
    DenseProposals dense;
    SelectedQueries selected;
    std::vector<LayerPrediction> layer_preds;
};

struct Detector {
    VariantSpec spec;
    ArchHyper hyper;
    ParamRegistry reg;
    std::unique_ptr<ViTBackbone> vit;
    std::unique_ptr<HGNetBackbone> hgnet;
    std::unique_ptr<STA> sta;
    std::unique_ptr<HybridEncoder> encoder;
    std::unique_ptr<Decoder> decoder;

    explicit Detector(const VariantSpec& s, uint64_t seed = 0) : spec(s), hyper(arch_hyper(s)) {
        Rng rng(hash_mix(seed, 0xdeadbeefULL));
        std::vector<int> level_channels;
        if (is_vit(s.backbone)) {
            bool swiglu = s.backbone == BackboneKind::ViTSPlus;
            vit = std::make_unique<ViTBackbone>(reg, make_vit_config(s.d_back, swiglu, s.input_resolution), rng);
            sta = std::make_unique<STA>(reg, s.d_back, s.d_enc, rng);
            level_channels = {s.d_enc, s.d_enc, s.d_enc};
        } else {
            hgnet = std::make_unique<HGNetBackbone>(reg, prune_rule(hg_variant(s.backbone)), rng);
            auto stages = hg_stages(hgnet->rule);
            level_channels = {stages[stages.size() - 2].cout, stages.back().cout};
        }
        check(int(level_channels.size()) == s.num_scales, "detector: scale count mismatch");
        encoder = std::make_unique<HybridEncoder>(reg, s.d_enc, s.num_classes, level_channels, hyper.enc, rng);
        DecoderConfig dc;
        dc.layers = s.decoder_layers;
        dc.d = s.d_dec;
        dc.heads = attn_heads_for(s.d_dec);
        dc.num_levels = s.num_scales;
        dc.num_queries = s.num_queries;
        dc.num_classes = s.num_classes;
        dc.ffn_hidden = hyper.h_dec;
        decoder = std::make_unique<Decoder>(reg, dc, rng);
    }

    static HGVariant hg_variant(BackboneKind k) {
        switch (k) {
            case BackboneKind::HGB0: return HGVariant::B0;
            case BackboneKind::HGP: return HGVariant::P;
            case BackboneKind::HGF: return HGVariant::F;
            case BackboneKind::HGA: return HGVariant::A;
            default: throw std::runtime_error("not an HGNet backbone");
        }
    }

    FeaturePyramid backbone_forward(const Tensor& image) const {
        if (vit) {
            auto taps = vit->forward_taps(image, sta_tap_indices());
            return (*sta)(image, taps);
        }
        return hgnet->forward(image);
    }

    ForwardResult forward(const Tensor& image) const {
        ForwardResult r;
        int H = image.dim(1), W = image.dim(2);
        auto pyr = backbone_forward(image);
        std::tie(r.fused, r.dense) = encoder->forward(pyr, H, W);
        r.selected.indices = HybridEncoder::topk_indices(r.dense.class_logits, spec.num_queries);
        auto feats = gather0(r.dense.anchor_feats.detach(), r.selected.indices);
        r.selected.content = decoder->make_content(feats);
        r.selected.ref_boxes.resize(size_t(spec.num_queries));
        for (int i = 0; i < spec.num_queries; ++i) {
            const float* b = r.dense.boxes.data().data() + size_t(r.selected.indices[size_t(i)]) * 4;
            r.selected.ref_boxes[size_t(i)] = {b[0], b[1], b[2], b[3]};
        }
        r.layer_preds = decoder->forward(r.selected.content, r.selected.ref_boxes, r.fused);
        return r;
    }

    std::vector<std::pair<int, int>> level_hw(int H, int W) const {
        std::vector<std::pair<int, int>> hw;
        if (vit) {
            for (int s : sta_strides()) hw.push_back({H / s, W / s});
        } else {
            int base = hgnet->rule.drop_stage4 ? 8 : 16;
            hw.push_back({H / base, W / base});
            hw.push_back({H / (2 * base), W / (2 * base)});
        }
        return hw;
    }

    // per-module analytic MACs/FLOPs at a given input resolution
    std::vector<std::pair<std::string, CostSheet>> module_costs(int H, int W) const {
        std::vector<std::pair<std::string, CostSheet>> out;
        if (vit) {
            out.push_back({"backbone", vit->costs(H, W)});
            out.push_back({"sta", sta->costs(H, W)});
        } else {
            out.push_back({"backbone", hgnet->costs(H, W)});
        }
        auto hw = level_hw(H, W);
        std::vector<int> chans;  // channels entering the encoder
        out.push_back({"encoder", encoder->costs(hw, chans)});
        int64_t cells = 0;
        for (auto& [h, w] : hw) cells += int64_t(h) * w;
        out.push_back({"decoder", decoder->costs(cells)});
        return out;
    }
};

}  // namespace deimv2
