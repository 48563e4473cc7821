#include <catch2/catch_amalgamated.hpp>

#include "deimv2/accounting.hpp"
#include "deimv2/detector.hpp"

using namespace deimv2;

namespace {

Tensor random_image(int H, int W, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> d(size_t(3) * H * W);
    for (auto& v : d) v = float(rng.uniform());
    return Tensor::from({3, H, W}, std::move(d));
}

}  // namespace

TEST_CASE("vit taps shapes and determinism") {
    auto cfg = make_vit_config(192, false, 320);
    REQUIRE(cfg.heads == 3);
    REQUIRE_THROWS_AS(make_vit_config(100, false, 320), std::runtime_error);

    ParamRegistry r1, r2;
    Rng g1(5), g2(5);
    ViTBackbone b1(r1, cfg, g1), b2(r2, cfg, g2);
    for (size_t i = 0; i < r1.entries().size(); ++i)
        REQUIRE(r1.entries()[i].t.data() == r2.entries()[i].t.data());

    auto img = random_image(320, 320, 3);
    auto taps = b1.forward_taps(img, {5, 8, 11});
    REQUIRE(taps.features.size() == 3);
    for (auto& f : taps.features) {
        REQUIRE(f.shape() == Shape{192, 20, 20});
    }
    REQUIRE_THROWS_WITH(b1.forward_taps(random_image(100, 100, 1), {5, 8, 11}),
                        Catch::Matchers::ContainsSubstring("letterbox"));

    // position-embedding interpolation path: a non-reference resolution works
    auto taps2 = b1.forward_taps(random_image(480, 480, 4), {5, 8, 11});
    REQUIRE(taps2.features[0].shape() == Shape{192, 30, 30});
}

TEST_CASE("hgnet pyramid shapes per rule") {
    Rng rng(7);
    ParamRegistry reg;
    HGNetBackbone b0(reg, prune_rule(HGVariant::B0), rng);
    auto py = b0.forward(random_image(320, 320, 1));
    REQUIRE(py.size() == 2);
    REQUIRE(py[0].stride == 16);
    REQUIRE(py[1].stride == 32);
    REQUIRE(py[0].feature.dim(0) == 512);
    REQUIRE(py[1].feature.dim(0) == 1024);   // deepest channels match d_back

    ParamRegistry regp;
    HGNetBackbone p(regp, prune_rule(HGVariant::P), rng);
    auto pyp = p.forward(random_image(160, 160, 2));
    REQUIRE(pyp[0].stride == 8);
    REQUIRE(pyp[1].stride == 16);
    REQUIRE(pyp[1].feature.dim(0) == 512);

    ParamRegistry regf, rega;
    HGNetBackbone f(regf, prune_rule(HGVariant::F), rng);
    HGNetBackbone a(rega, prune_rule(HGVariant::A), rng);
    REQUIRE(f.forward(random_image(160, 160, 3))[1].feature.dim(0) == 256);
    REQUIRE(a.forward(random_image(160, 160, 3))[1].feature.dim(0) == 256);

    // parameter count strictly decreases across B0 -> P -> F -> A
    REQUIRE(reg.count_params() > regp.count_params());
    REQUIRE(regp.count_params() > regf.count_params());
    REQUIRE(regf.count_params() > rega.count_params());

    REQUIRE_THROWS_WITH(b0.forward(random_image(160, 144, 1)),
                        Catch::Matchers::ContainsSubstring("letterbox"));
}

TEST_CASE("pruning P from B0 removes exactly the stage-4 parameters") {
    Rng rng(11);
    ParamRegistry reg0, regp;
    HGNetBackbone b0(reg0, prune_rule(HGVariant::B0), rng);
    HGNetBackbone p(regp, prune_rule(HGVariant::P), rng);
    int64_t stage4 = reg0.count_params("backbone.stage3.") + reg0.count_params("backbone.ds3.");
    REQUIRE(reg0.count_params() - regp.count_params() == stage4);
}

TEST_CASE("sta produces a valid pyramid and zero-parameter resizing") {
    Rng rng(13);
    ParamRegistry reg;
    auto cfg = make_vit_config(192, false, 320);
    ViTBackbone vit(reg, cfg, rng);
    int64_t before = reg.count_params();
    STA sta(reg, 192, 96, rng);
    int64_t sta_params = reg.count_params() - before;

    auto img = random_image(320, 320, 9);
    auto taps = vit.forward_taps(img, sta_tap_indices());
    auto resized = resize_taps(taps);
    REQUIRE(resized[0].shape() == Shape{192, 40, 40});
    REQUIRE(resized[1].shape() == Shape{192, 20, 20});
    REQUIRE(resized[2].shape() == Shape{192, 10, 10});
    // stride-16 tap passes through bit-identical
    REQUIRE(resized[1].data() == taps.features[1].data());

    auto pyr = sta(img, taps);
    REQUIRE(pyr.size() == 3);
    int strides[3] = {8, 16, 32};
    for (int l = 0; l < 3; ++l) {
        REQUIRE(pyr[size_t(l)].stride == strides[l]);
        REQUIRE(pyr[size_t(l)].feature.dim(0) == 96);
    }

    // detail path parameters stay under 1% of the smallest ViT variant budget
    ParamRegistry dreg;
    Rng drng(1);
    DetailPath dp(dreg, drng);
    REQUIRE(dreg.count_params() < 97000);
    (void)sta_params;

    // ablation: disabling the detail path changes values, never shapes
    STA sta_off = sta;
    sta_off.detail_enabled = false;
    auto pyr_off = sta_off(img, taps);
    for (int l = 0; l < 3; ++l)
        REQUIRE(pyr_off[size_t(l)].feature.shape() == pyr[size_t(l)].feature.shape());
}

TEST_CASE("constant tap stays constant at every scale") {
    TapSet taps;
    taps.tap_indices = {5, 8, 11};
    for (int i = 0; i < 3; ++i) taps.features.push_back(Tensor::filled({4, 10, 10}, 2.5f));
    auto resized = resize_taps(taps);
    for (auto& f : resized)
        for (float v : f.data()) REQUIRE(v == Catch::Approx(2.5).margin(1e-6));
}

TEST_CASE("bi_fusion gradient reaches both branches") {
    Rng rng(17);
    ParamRegistry reg;
    BiFusion bf(reg, "bf", 8, 4, 6, rng);
    auto sem = random_image(6, 6, 1);  // wrong channel count on purpose below
    auto s = Tensor::from({8, 5, 5}, std::vector<float>(200, 0.3f));
    auto d = Tensor::from({4, 5, 5}, std::vector<float>(100, -0.2f));
    s.node()->requires_grad = true;
    d.node()->requires_grad = true;
    auto outp = bf(s, d);
    backward(sum_all(mul(outp, outp)));
    double gs = 0, gd = 0;
    for (float g : s.grad()) gs += std::abs(g);
    for (float g : d.grad()) gd += std::abs(g);
    REQUIRE(gs > 0);
    REQUIRE(gd > 0);
    REQUIRE_THROWS_WITH(bf(s, Tensor::zeros({4, 3, 3})),
                        Catch::Matchers::ContainsSubstring("spatial shapes"));
    (void)sem;
}

TEST_CASE("encoder anchors and top-k selection") {
    auto [spec, sched] = builtin("Atto");
    (void)sched;
    spec.input_resolution = 160;
    Detector model(spec, 3);
    auto img = random_image(160, 160, 5);
    auto res = model.forward(img);

    // anchor count is the grid sum over levels
    REQUIRE(res.dense.class_logits.dim(0) == 20 * 20 + 10 * 10);
    REQUIRE(res.dense.class_logits.dim(1) == 80);
    REQUIRE(res.dense.boxes.shape() == Shape{500, 4});
    for (float v : res.dense.boxes.data()) {
        REQUIRE(v >= 0.f);
        REQUIRE(v <= 1.f);
    }
    REQUIRE(int(res.selected.indices.size()) == spec.num_queries);
    // indices strictly decreasing by score
    auto score = [&](int a) {
        float m = res.dense.class_logits.data()[size_t(a) * 80];
        for (int c = 1; c < 80; ++c)
            m = std::max(m, res.dense.class_logits.data()[size_t(a) * 80 + c]);
        return m;
    };
    for (size_t i = 1; i < res.selected.indices.size(); ++i) {
        float s0 = score(res.selected.indices[i - 1]), s1 = score(res.selected.indices[i]);
        REQUIRE((s0 > s1 || (s0 == s1 && res.selected.indices[i - 1] < res.selected.indices[i])));
    }
    // deep supervision: one prediction per decoder layer with documented shapes
    REQUIRE(res.layer_preds.size() == 3);
    for (auto& p : res.layer_preds) {
        REQUIRE(p.class_logits.shape() == Shape{100, 80});
        REQUIRE(p.boxes.shape() == Shape{100, 4});
        REQUIRE(p.dist_softmax.shape() == Shape{400, 16});
        for (float v : p.boxes.data()) {
            REQUIRE(v >= 0.f);
            REQUIRE(v <= 1.f);
        }
    }
}

TEST_CASE("topk ties break toward lower index") {
    auto logits = Tensor::filled({5, 2}, 0.f);
    auto idx = HybridEncoder::topk_indices(logits, 3);
    REQUIRE(idx == std::vector<int>{0, 1, 2});
    logits.data()[2 * 2] = 1.f;  // anchor 2, class 0
    logits.data()[8] = 2.f;      // anchor 4
    auto idx2 = HybridEncoder::topk_indices(logits, 2);
    REQUIRE(idx2 == std::vector<int>{4, 2});
    REQUIRE_THROWS_AS(HybridEncoder::topk_indices(logits, 9), std::runtime_error);
}

TEST_CASE("decoder: single shared position embedding and reference behavior") {
    auto [spec, sched] = builtin("Atto");
    (void)sched;
    spec.input_resolution = 160;
    Detector model(spec, 1);

    // exactly one position-embedding parameter set, K*d_dec scalars
    int64_t pos_params = 0;
    int pos_sets = 0;
    for (auto& e : model.reg.entries())
        if (e.name.find("pos_embed") != std::string::npos && e.name.rfind("decoder.", 0) == 0) {
            pos_params += e.t.size();
            ++pos_sets;
        }
    REQUIRE(pos_sets == 1);
    REQUIRE(pos_params == int64_t(spec.num_queries) * spec.d_dec);

    // with the distribution head forced to uniform (zero weights and biases),
    // every layer's boxes equal the selected references
    for (auto& e : model.reg.entries())
        if (e.name.rfind("decoder.dist_head", 0) == 0)
            std::fill(e.t.data().begin(), e.t.data().end(), 0.f);
    auto img = random_image(160, 160, 2);
    auto res = model.forward(img);
    for (auto& p : res.layer_preds)
        for (int k = 0; k < spec.num_queries; ++k) {
            REQUIRE(p.boxes.data()[size_t(k) * 4 + 0] ==
                    Catch::Approx(res.selected.ref_boxes[size_t(k)].cx).margin(2e-6));
            REQUIRE(p.boxes.data()[size_t(k) * 4 + 2] ==
                    Catch::Approx(res.selected.ref_boxes[size_t(k)].w).margin(2e-6));
        }
}

TEST_CASE("integral boxes") {
    std::vector<BoxCxCyWh> refs = {{0.5, 0.5, 0.2, 0.4}};
    int N = 16;
    // one-hot at the center pair of bins averages to zero offset only for a
    // symmetric pair; use uniform distribution for the exact-zero case
    auto uniform_logits = Tensor::zeros({1, 4 * N});
    auto b = integral_boxes(uniform_logits, refs, N, 0.5);
    REQUIRE(b.data()[0] == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(b.data()[2] == Catch::Approx(0.2).margin(1e-6));
    REQUIRE(b.data()[3] == Catch::Approx(0.4).margin(1e-6));

    // one-hot at bin n shifts the edge by exactly c_n (in box units)
    auto centers = dist_bin_centers(N, 0.5);
    std::vector<float> logits(size_t(4 * N), 0.f);
    int n = 3;
    logits[size_t(n)] = 40.f;  // left edge, bin 3: sharp one-hot
    auto b2 = integral_boxes(Tensor::from({1, 4 * N}, std::move(logits)), refs, N, 0.5);
    double x1_expect = (0.5 - 0.1) + centers[size_t(n)] * 0.2;
    double x1_got = b2.data()[0] - b2.data()[2] / 2;
    REQUIRE(x1_got == Catch::Approx(x1_expect).margin(1e-4));
}

TEST_CASE("refine_boxes") {
    std::vector<BoxCxCyWh> refs = {{0.3, 0.6, 0.2, 0.1}};
    auto d0 = Tensor::zeros({1, 4});
    auto same = refine_boxes(refs, d0);
    REQUIRE(same.data()[0] == Catch::Approx(0.3).margin(1e-6));
    REQUIRE(same.data()[3] == Catch::Approx(0.1).margin(1e-6));

    // positive delta on cx strictly increases cx
    auto dp = Tensor::from({1, 4}, {0.5f, 0, 0, 0});
    REQUIRE(refine_boxes(refs, dp).data()[0] > 0.3);

    // refs at exactly 0/1 are clamped before the logit
    std::vector<BoxCxCyWh> extreme = {{0.0, 1.0, 0.5, 0.5}};
    auto e = refine_boxes(extreme, d0);
    REQUIRE(std::isfinite(e.data()[0]));
    REQUIRE(std::isfinite(e.data()[1]));

    // logit/sigmoid round trip
    for (double r : {0.01, 0.25, 0.5, 0.75, 0.99}) {
        std::vector<BoxCxCyWh> rr = {{r, r, r, r}};
        auto back = refine_boxes(rr, d0);
        REQUIRE(back.data()[0] == Catch::Approx(r).margin(1e-6));
    }
}

TEST_CASE("msdeform_attn degenerate gather and weight normalization") {
    // single level, weights uniform after zero-init; offsets forced to zero;
    // a single 1x1 map makes sampling exact regardless of position
    Rng rng(19);
    ParamRegistry reg;
    MSDeformAttn att(reg, "att", 8, 2, 1, 4, rng);
    std::fill(att.offsets.b.data().begin(), att.offsets.b.data().end(), 0.f);
    // identity output projection
    std::fill(att.out.W.data().begin(), att.out.W.data().end(), 0.f);
    for (int i = 0; i < 8; ++i) att.out.W.data()[size_t(i * 8 + i)] = 1.f;
    auto vmap = Tensor::from({8, 1, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto q = Tensor::zeros({1, 8});
    std::vector<BoxCxCyWh> refs = {{0.5, 0.5, 0.4, 0.4}};
    auto out = att(q, refs, {vmap});
    for (int c = 0; c < 8; ++c) REQUIRE(out.data()[size_t(c)] == Catch::Approx(double(c + 1)).margin(1e-5));
}

TEST_CASE("msdeform_attn gradient vs finite differences") {
    // double-precision standalone replica of the sampling path
    using DT = TensorT<double>;
    Rng rng(23);
    int K = 2, d = 8, heads = 2, P = 4, dh = 4;
    std::vector<BoxCxCyWh> refs = {{0.4, 0.4, 0.3, 0.3}, {0.6, 0.6, 0.25, 0.25}};
    std::vector<double> mapd(size_t(8) * 4 * 4);
    for (auto& v : mapd) v = rng.normal();
    auto vmap = DT::from({8, 4, 4}, std::move(mapd));
    std::vector<double> base(size_t(K) * P * 2), scale(size_t(K) * P * 2);
    for (int k = 0; k < K; ++k)
        for (int p = 0; p < P; ++p) {
            scale[(size_t(k) * P + p) * 2] = refs[size_t(k)].w * 0.5;
            scale[(size_t(k) * P + p) * 2 + 1] = refs[size_t(k)].h * 0.5;
            base[(size_t(k) * P + p) * 2] = refs[size_t(k)].cx;
            base[(size_t(k) * P + p) * 2 + 1] = refs[size_t(k)].cy;
        }
    auto forward = [&](const DT& off_and_w) {
        // first K*heads*P*2 entries are offsets, rest are weight logits
        auto off = slice_cols(off_and_w, 0, heads * P * 2);
        auto wl = slice_cols(off_and_w, heads * P * 2, heads * P * 2 + heads * P);
        auto wsm = reshape(softmax(reshape(wl, {K * heads, P})), {K, heads * P});
        std::vector<DT> houts;
        for (int h = 0; h < heads; ++h) {
            auto off_h = reshape(slice_cols(off, h * P * 2, (h + 1) * P * 2), {K * P, 2});
            auto pts = add_const(mul_const(off_h, scale), base);
            auto vh = slice0(vmap, h * dh, (h + 1) * dh);
            auto sampled = sample_points(vh, pts);
            auto w_h = reshape(slice_cols(wsm, h * P, (h + 1) * P), {K * P});
            houts.push_back(sum_row_groups(mul_colvec(sampled, w_h), P));
        }
        auto out = concat_cols(houts);
        return sum_all(mul(out, out));
    };
    std::vector<double> owd(size_t(K) * (heads * P * 2 + heads * P));
    for (auto& v : owd) v = rng.uniform(-0.3, 0.3);
    auto ow = DT::from({K, heads * P * 2 + heads * P}, std::move(owd));
    auto f = std::function([&](const DT& v) { return forward(v); });
    REQUIRE(finite_diff_check<double>(f, ow, 1e-6) < 1e-4);
}

TEST_CASE("decoder zero residual branches keep state identical") {
    Rng rng(29);
    ParamRegistry reg;
    DecoderConfig dc;
    dc.layers = 1; dc.d = 16; dc.heads = 2; dc.num_levels = 1; dc.num_queries = 3;
    dc.ffn_hidden = 32;
    DecoderLayer layer(reg, "l", dc, rng);
    // zero every output projection so the residual branches vanish
    std::fill(layer.self_attn.o.W.data().begin(), layer.self_attn.o.W.data().end(), 0.f);
    std::fill(layer.self_attn.o.b.data().begin(), layer.self_attn.o.b.data().end(), 0.f);
    std::fill(layer.cross.out.W.data().begin(), layer.cross.out.W.data().end(), 0.f);
    std::fill(layer.cross.out.b.data().begin(), layer.cross.out.b.data().end(), 0.f);
    std::fill(layer.ffn.Wo.data().begin(), layer.ffn.Wo.data().end(), 0.f);
    Rng drng(1);
    std::vector<float> xd(48);
    for (auto& v : xd) v = float(drng.normal());
    auto x = Tensor::from({3, 16}, std::move(xd));
    auto pos = Tensor::zeros({3, 16});
    std::vector<BoxCxCyWh> refs(3, BoxCxCyWh{0.5, 0.5, 0.3, 0.3});
    auto vmap = Tensor::filled({16, 4, 4}, 0.5f);
    auto y = layer(x, pos, refs, {vmap});
    for (size_t i = 0; i < x.data().size(); ++i)
        REQUIRE(y.data()[i] == Catch::Approx(x.data()[i]).margin(1e-6));
}

TEST_CASE("msdeform level order invariance") {
    auto [spec, sched] = builtin("Atto");
    (void)sched;
    spec.input_resolution = 160;
    Detector model(spec, 4);
    auto img = random_image(160, 160, 8);
    auto pyr = model.backbone_forward(img);
    auto [fused, dense] = model.encoder->forward(pyr, 160, 160);
    auto idx = HybridEncoder::topk_indices(dense.class_logits, spec.num_queries);
    auto feats = gather0(dense.anchor_feats.detach(), idx);
    auto content = model.decoder->make_content(feats);
    std::vector<BoxCxCyWh> refs(size_t(spec.num_queries), BoxCxCyWh{0.5, 0.5, 0.3, 0.3});
    auto p1 = model.decoder->forward(content, refs, fused);
    FeaturePyramid reversed = {fused[1], fused[0]};
    auto p2 = model.decoder->forward(content, refs, reversed);
    REQUIRE(p1.back().class_logits.data() == p2.back().class_logits.data());
}
