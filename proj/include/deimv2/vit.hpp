#pragma once

// Plain 12-layer ViT backbones for the S/M/L/X variants. Blocks are pre-norm
// attention + feed-forward; the S+ width uses a SwiGLU feed-forward, matching
// the parameter budget of its public checkpoint. Intermediate block outputs
// ("taps") at stride 16 feed the adapter.

#include <vector>

#include "deimv2/nn.hpp"

namespace deimv2 {

struct ViTConfig {
    int patch_size = 16;
    int depth = 12;
    int dim = 192;           // 192 | 256 | 384
    int heads = 3;           // dim / 64
    int mlp_hidden = 768;    // 4 * dim
    bool swiglu = false;     // ViT-S+ feed-forward flavor
    int register_tokens = 4;
    int ref_resolution = 640;  // position embedding grid = ref/patch
};

inline ViTConfig make_vit_config(int dim, bool swiglu, int ref_resolution) {
    check(dim % 64 == 0, "vit dim must be divisible by 64, got " + std::to_string(dim));
    ViTConfig c;
    c.dim = dim;
    c.heads = dim / 64;
    c.mlp_hidden = 4 * dim;
    c.swiglu = swiglu;
    c.ref_resolution = ref_resolution;
    return c;
}

struct ViTBlock {
    LayerNormLayer ln1, ln2;
    MultiHeadAttention attn;
    Mlp mlp;
    SwiGLU glu;
    bool swiglu = false;

    ViTBlock() = default;
    ViTBlock(ParamRegistry& reg, const std::string& name, const ViTConfig& c, Rng& rng)
        : swiglu(c.swiglu) {
        auto s = reg.scope(name);
        ln1 = LayerNormLayer(reg, "ln1", c.dim);
        attn = MultiHeadAttention(reg, "attn", c.dim, c.heads, rng);
        ln2 = LayerNormLayer(reg, "ln2", c.dim);
        if (swiglu) glu = SwiGLU(reg, "ffn", c.dim, c.mlp_hidden, rng);
        else mlp = Mlp(reg, "ffn", c.dim, c.mlp_hidden, rng);
    }
    Tensor operator()(const Tensor& x) const {
        auto t = ln1(x);
        auto y = add(x, attn(t, t, t));
        auto t2 = ln2(y);
        return add(y, swiglu ? glu(t2) : mlp(t2));
    }
    CostSheet costs(int64_t tokens) const {
        CostSheet c = attn.costs(tokens);
        c += swiglu ? glu.costs(tokens) : mlp.costs(tokens);
        c.act_elems += 2 * tokens * int64_t(swiglu ? glu.d : mlp.fc1.din);  // norms
        return c;
    }
};

struct TapSet {
    std::vector<int> tap_indices;   // 1-indexed block numbers
    std::vector<Tensor> features;   // each [dim, H/16, W/16]
};

struct ViTBackbone {
    ViTConfig cfg;
    ConvLayer patch;             // 16x16 stride-16 embedding
    Tensor pos_embed;            // [ref_grid^2, dim]
    Tensor registers;            // [4, dim]
    std::vector<ViTBlock> blocks;
    LayerNormLayer final_ln;

    ViTBackbone() = default;
    ViTBackbone(ParamRegistry& reg, const ViTConfig& c, Rng& rng) : cfg(c) {
        auto s = reg.scope("backbone");
        patch = ConvLayer(reg, "patch", 3, c.dim, c.patch_size, c.patch_size, rng, 1, false);
        patch.pad = 0;
        int g = c.ref_resolution / c.patch_size;
        pos_embed = reg.add("pos_embed", normal_param({g * g, c.dim}, 0.02, rng), true);
        registers = reg.add("registers", normal_param({c.register_tokens, c.dim}, 0.02, rng), true);
        blocks.reserve(size_t(c.depth));
        for (int i = 0; i < c.depth; ++i)
            blocks.emplace_back(reg, "blocks." + std::to_string(i), c, rng);
        final_ln = LayerNormLayer(reg, "ln", c.dim);
    }

    // runs all blocks once, recording the requested 1-indexed tap outputs
    // reshaped to [dim, H/16, W/16] with register tokens dropped
    TapSet forward_taps(const Tensor& image, const std::vector<int>& taps) const {
        check(image.ndim() == 3 && image.dim(0) == 3, "vit: image must be [3,H,W]");
        int H = image.dim(1), W = image.dim(2);
        check(H % cfg.patch_size == 0 && W % cfg.patch_size == 0,
              "vit: resolution " + std::to_string(H) + "x" + std::to_string(W) +
              " not divisible by patch size " + std::to_string(cfg.patch_size) +
              "; letterbox-pad the input to a multiple of " + std::to_string(cfg.patch_size));
        int gh = H / cfg.patch_size, gw = W / cfg.patch_size;
        auto grid = patch(image);                       // [dim, gh, gw]
        auto tokens = chw_to_tokens(grid);              // [gh*gw, dim]
        Tensor pe = pos_embed;
        int ref_g = cfg.ref_resolution / cfg.patch_size;
        if (gh != ref_g || gw != ref_g) {
            auto pe_grid = tokens_to_chw(pos_embed, ref_g, ref_g);
            pe = chw_to_tokens(bilinear_resize(pe_grid, gh, gw));
        }
        tokens = add(tokens, pe);
        auto x = concat0<float>({registers, tokens});   // registers lead the sequence
        TapSet out;
        out.tap_indices = taps;
        out.features.resize(taps.size());
        for (int i = 0; i < int(blocks.size()); ++i) {
            x = blocks[size_t(i)](x);
            for (size_t t = 0; t < taps.size(); ++t) {
                if (taps[t] == i + 1) {
                    auto spatial = slice0(x, cfg.register_tokens, cfg.register_tokens + gh * gw);
                    out.features[t] = tokens_to_chw(spatial, gh, gw);
                }
            }
        }
        for (auto& f : out.features) check(f.defined(), "vit: tap index out of range");
        return out;
    }

    CostSheet costs(int H, int W) const {
        CostSheet c = patch.costs(H, W);
        int64_t n = int64_t(H / cfg.patch_size) * (W / cfg.patch_size);
        int64_t tokens = n + cfg.register_tokens;
        for (auto& b : blocks) c += b.costs(tokens);
        c.act_elems += tokens * cfg.dim;  // final norm
        return c;
    }
};

}  // namespace deimv2
