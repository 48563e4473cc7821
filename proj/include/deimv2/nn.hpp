#pragma once

// Network building blocks on top of the tensor core: a parameter registry
// with hierarchical names, initializers, and the layers shared by the
// backbones, adapter, encoder and decoder. Every block that costs compute
// exposes a macs()/acts() pair used by the budget accountant.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deimv2/core.hpp"

namespace deimv2 {

struct ParamEntry {
    std::string name;
    Tensor t;
    bool decay = true;      // weight decay applies (weights yes, gains/biases no)
    bool backbone = false;  // backbone learning-rate group
};

class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t, bool decay) {
        std::string full = scope_.empty() ? name : scope_ + "." + name;
        for (auto& e : entries_) check(e.name != full, "duplicate parameter name: " + full);
        entries_.push_back({full, t, decay, full.rfind("backbone.", 0) == 0});
        return t;
    }
    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    int64_t count_params(const std::string& prefix = "") const {
        int64_t n = 0;
        for (auto& e : entries_)
            if (prefix.empty() || e.name.rfind(prefix, 0) == 0) n += e.t.size();
        return n;
    }

    class Scope {
    public:
        Scope(ParamRegistry& r, const std::string& name) : r_(r), saved_(r.scope_) {
            r_.scope_ = saved_.empty() ? name : saved_ + "." + name;
        }
        ~Scope() { r_.scope_ = saved_; }

    private:
        ParamRegistry& r_;
        std::string saved_;
    };
    Scope scope(const std::string& name) { return Scope(*this, name); }

private:
    std::vector<ParamEntry> entries_;
    std::string scope_;
};

// ---------------------------------------------------------------------------
// initializers

inline Tensor xavier_uniform(const Shape& s, int fan_in, int fan_out, Rng& rng) {
    double lim = std::sqrt(6.0 / double(fan_in + fan_out));
    std::vector<float> d(size_t(numel(s)));
    for (auto& v : d) v = float(rng.uniform(-lim, lim));
    auto t = Tensor::from(s, std::move(d));
    t.node()->requires_grad = true;
    return t;
}
inline Tensor zeros_param(const Shape& s) {
    auto t = Tensor::zeros(s);
    t.node()->requires_grad = true;
    return t;
}
inline Tensor const_param(const Shape& s, float v) {
    auto t = Tensor::filled(s, v);
    t.node()->requires_grad = true;
    return t;
}
inline Tensor normal_param(const Shape& s, double std, Rng& rng) {
    std::vector<float> d(size_t(numel(s)));
    for (auto& v : d) v = float(rng.normal() * std);
    auto t = Tensor::from(s, std::move(d));
    t.node()->requires_grad = true;
    return t;
}

struct CostSheet {
    int64_t macs = 0;       // conv/linear/attention matmuls + 4 per interpolated output
    int64_t act_elems = 0;  // softmax/activation/norm elements, 5 FLOPs each
    int64_t flops() const { return 2 * macs + 5 * act_elems; }
    void operator+=(const CostSheet& o) { macs += o.macs; act_elems += o.act_elems; }
};

// ---------------------------------------------------------------------------
// layers

struct LinearLayer {
    Tensor W, b;
    bool has_bias = true;
    int din = 0, dout = 0;

    LinearLayer() = default;
    LinearLayer(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng, bool bias = true)
        : has_bias(bias), din(in), dout(out) {
        auto s = reg.scope(name);
        W = reg.add("w", xavier_uniform({in, out}, in, out, rng), true);
        if (bias) b = reg.add("b", zeros_param({out}), false);
    }
    Tensor operator()(const Tensor& x) const {
        const Tensor* bp = has_bias ? &b : nullptr;
        return linear(x, W, bp);
    }
    int64_t macs(int64_t n_rows) const { return int64_t(din) * dout * n_rows; }
};

struct ConvLayer {
    Tensor w, b;
    int cin = 0, cout = 0, k = 1, stride = 1, pad = 0, groups = 1;
    bool act = false;  // SiLU after conv

    ConvLayer() = default;
    ConvLayer(ParamRegistry& reg, const std::string& name, int cin_, int cout_, int k_, int stride_,
              Rng& rng, int groups_ = 1, bool act_ = true)
        : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(k_ / 2), groups(groups_), act(act_) {
        auto s = reg.scope(name);
        int fan_in = k * k * cin / groups, fan_out = k * k * cout / groups;
        w = reg.add("w", xavier_uniform({cout, cin / groups, k, k}, fan_in, fan_out, rng), true);
        b = reg.add("b", zeros_param({cout}), false);
    }
    Tensor operator()(const Tensor& x) const {
        auto y = conv2d(x, w, &b, stride, pad, groups);
        return act ? silu(y) : y;
    }
    void out_hw(int H, int W, int& Ho, int& Wo) const {
        Ho = (H + 2 * pad - k) / stride + 1;
        Wo = (W + 2 * pad - k) / stride + 1;
    }
    CostSheet costs(int H, int W) const {
        int Ho, Wo;
        out_hw(H, W, Ho, Wo);
        CostSheet c;
        c.macs = int64_t(k) * k * cin * cout / groups * Ho * Wo;
        c.act_elems = act ? int64_t(cout) * Ho * Wo : 0;
        return c;
    }
};

// depthwise 3x3 + pointwise 1x1, used where a variant opts into separable convs
struct SepConvLayer {
    ConvLayer dw, pw;
    SepConvLayer() = default;
    SepConvLayer(ParamRegistry& reg, const std::string& name, int c, int stride, Rng& rng, bool act = true) {
        auto s = reg.scope(name);
        dw = ConvLayer(reg, "dw", c, c, 3, stride, rng, c, false);
        pw = ConvLayer(reg, "pw", c, c, 1, 1, rng, 1, act);
    }
    Tensor operator()(const Tensor& x) const { return pw(dw(x)); }
    CostSheet costs(int H, int W) const {
        CostSheet c = dw.costs(H, W);
        int Ho, Wo;
        dw.out_hw(H, W, Ho, Wo);
        c += pw.costs(Ho, Wo);
        return c;
    }
};

// a 3x3 block conv that is either full or separable, stride 1
struct BlockConv {
    bool sep = false;
    ConvLayer full;
    SepConvLayer split;
    BlockConv() = default;
    BlockConv(ParamRegistry& reg, const std::string& name, int c, Rng& rng, bool sep_, bool act = true)
        : sep(sep_) {
        if (sep) split = SepConvLayer(reg, name, c, 1, rng, act);
        else full = ConvLayer(reg, name, c, c, 3, 1, rng, 1, act);
    }
    Tensor operator()(const Tensor& x) const { return sep ? split(x) : full(x); }
    CostSheet costs(int H, int W) const { return sep ? split.costs(H, W) : full.costs(H, W); }
};

struct LayerNormLayer {
    Tensor g, b;
    int d = 0;
    LayerNormLayer() = default;
    LayerNormLayer(ParamRegistry& reg, const std::string& name, int d_) : d(d_) {
        auto s = reg.scope(name);
        g = reg.add("g", const_param({d}, 1.f), false);
        b = reg.add("b", zeros_param({d}), false);
    }
    Tensor operator()(const Tensor& x) const { return layer_norm(x, g, b); }
};

struct RMSNormLayer {
    Tensor g;
    int d = 0;
    RMSNormLayer() = default;
    RMSNormLayer(ParamRegistry& reg, const std::string& name, int d_) : d(d_) {
        auto s = reg.scope(name);
        g = reg.add("g", const_param({d}, 1.f), false);
    }
    Tensor operator()(const Tensor& x) const { return rms_norm(x, g); }
};

// multi-head attention over token matrices [T,d]; q/k may carry additive
// position terms supplied by the caller
struct MultiHeadAttention {
    LinearLayer q, k, v, o;
    int d = 0, heads = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamRegistry& reg, const std::string& name, int d_, int heads_, Rng& rng)
        : d(d_), heads(heads_) {
        check(d_ % heads_ == 0, "attention dim not divisible by heads");
        auto s = reg.scope(name);
        q = LinearLayer(reg, "q", d_, d_, rng);
        k = LinearLayer(reg, "k", d_, d_, rng);
        v = LinearLayer(reg, "v", d_, d_, rng);
        o = LinearLayer(reg, "o", d_, d_, rng);
    }
    Tensor operator()(const Tensor& xq, const Tensor& xk, const Tensor& xv) const {
        int dh = d / heads;
        auto Q = q(xq), K = k(xk), V = v(xv);
        float scale = 1.f / std::sqrt(float(dh));
        std::vector<Tensor> outs;
        outs.reserve(size_t(heads));
        for (int h = 0; h < heads; ++h) {
            auto Qh = slice_cols(Q, h * dh, (h + 1) * dh);
            auto Kh = slice_cols(K, h * dh, (h + 1) * dh);
            auto Vh = slice_cols(V, h * dh, (h + 1) * dh);
            auto attn = softmax(mul_scalar(matmul(Qh, transpose2d(Kh)), scale));
            outs.push_back(matmul(attn, Vh));
        }
        return o(concat_cols(outs));
    }
    CostSheet costs(int64_t tokens) const {
        CostSheet c;
        c.macs = 4 * tokens * int64_t(d) * d + 2 * tokens * tokens * d;
        c.act_elems = tokens * tokens * heads;  // softmax
        return c;
    }
};

// GELU MLP: d -> hidden -> d with biases
struct Mlp {
    LinearLayer fc1, fc2;
    Mlp() = default;
    Mlp(ParamRegistry& reg, const std::string& name, int d, int hidden, Rng& rng) {
        auto s = reg.scope(name);
        fc1 = LinearLayer(reg, "fc1", d, hidden, rng);
        fc2 = LinearLayer(reg, "fc2", hidden, d, rng);
    }
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
    CostSheet costs(int64_t tokens) const {
        CostSheet c;
        c.macs = tokens * (int64_t(fc1.din) * fc1.dout + int64_t(fc2.din) * fc2.dout);
        c.act_elems = tokens * fc1.dout;
        return c;
    }
};

// SwiGLU feed-forward, no biases
struct SwiGLU {
    Tensor Wg, Wv, Wo;
    int d = 0, hidden = 0;
    SwiGLU() = default;
    SwiGLU(ParamRegistry& reg, const std::string& name, int d_, int hidden_, Rng& rng)
        : d(d_), hidden(hidden_) {
        auto s = reg.scope(name);
        Wg = reg.add("wg", xavier_uniform({d_, hidden_}, d_, hidden_, rng), true);
        Wv = reg.add("wv", xavier_uniform({d_, hidden_}, d_, hidden_, rng), true);
        Wo = reg.add("wo", xavier_uniform({hidden_, d_}, hidden_, d_, rng), true);
    }
    Tensor operator()(const Tensor& x) const { return swiglu_ffn(x, Wg, Wv, Wo); }
    CostSheet costs(int64_t tokens) const {
        CostSheet c;
        c.macs = 3 * tokens * int64_t(d) * hidden;
        c.act_elems = tokens * hidden;
        return c;
    }
};

// decoder/attention head count: d/32 rounded down to a divisor of d, floor 2
inline int attn_heads_for(int d) {
    int h = std::max(2, d / 32);
    while (h > 1 && d % h != 0) --h;
    return std::max(h, 1);
}

// 2-d sinusoidal position embedding for a [h*w, d] token grid (constant)
inline Tensor sincos_pos_2d(int h, int w, int d) {
    check(d % 4 == 0, "sincos embedding needs d divisible by 4");
    int quarter = d / 4;
    std::vector<float> out(size_t(h) * w * d);
    const double temp = 10000.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float* row = out.data() + (size_t(y) * w + x) * d;
            for (int i = 0; i < quarter; ++i) {
                double omega = 1.0 / std::pow(temp, double(i) / quarter);
                row[i] = float(std::sin(x * omega));
                row[quarter + i] = float(std::cos(x * omega));
                row[2 * quarter + i] = float(std::sin(y * omega));
                row[3 * quarter + i] = float(std::cos(y * omega));
            }
        }
    return Tensor::from({h * w, d}, std::move(out));
}

// [C,H,W] -> [H*W, C] tokens and back
inline Tensor chw_to_tokens(const Tensor& x) {
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    return transpose2d(reshape(x, {C, H * W}));
}
inline Tensor tokens_to_chw(const Tensor& t, int H, int W) {
    int C = t.dim(1);
    return reshape(transpose2d(t), {C, H, W});
}

}  // namespace deimv2
