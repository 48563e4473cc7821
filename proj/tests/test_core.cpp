#include <catch2/catch_amalgamated.hpp>

#include "deimv2/core.hpp"

using namespace deimv2;

using DT = TensorT<double>;

namespace {

DT random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
    std::vector<double> d(size_t(numel(s)));
    for (auto& v : d) v = rng.normal() * scale;
    return DT::from(s, std::move(d));
}

}  // namespace

TEST_CASE("linear basics") {
    // x = 0 -> y = b
    auto x = DT::zeros({2, 3});
    auto W = DT::from({3, 2}, {1, 2, 3, 4, 5, 6});
    auto b = DT::from({2}, {0.5, -1.5});
    auto y = linear(x, W, &b);
    REQUIRE(y.data()[0] == 0.5);
    REQUIRE(y.data()[1] == -1.5);
    REQUIRE(y.data()[2] == 0.5);

    // W = identity, b = 0 -> y = x
    auto xi = DT::from({2, 2}, {1, 2, 3, 4});
    auto I = DT::from({2, 2}, {1, 0, 0, 1});
    auto yi = linear(xi, I);
    REQUIRE(yi.data() == xi.data());

    REQUIRE_THROWS_WITH(matmul(DT::zeros({2, 3}), DT::zeros({2, 3})),
                        Catch::Matchers::ContainsSubstring("[2,3]"));
}

TEST_CASE("linear gradient vs finite differences") {
    Rng rng(11);
    for (int seed = 0; seed < 5; ++seed) {
        auto W = random_tensor({4, 2}, rng);
        auto x = random_tensor({3, 4}, rng);
        auto f = std::function([&](const DT& v) {
            auto y = matmul(v, W);
            return sum_all(mul(y, y));
        });
        REQUIRE(finite_diff_check<double>(f, x) < 1e-7);
        auto g = std::function([&](const DT& wv) {
            auto y = matmul(x, wv);
            return sum_all(mul(y, y));
        });
        REQUIRE(finite_diff_check<double>(g, W) < 1e-7);
    }
}

TEST_CASE("conv2d parameter arithmetic and identity") {
    // 1x1 kernel with identity weights copies channels
    auto x = DT::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto w = DT::from({2, 2, 1, 1}, {1, 0, 0, 1});
    auto y = conv2d<double>(x, w, nullptr, 1, 0);
    REQUIRE(y.data() == x.data());

    // 3->16 channels 3x3 with bias: 3*16*9 + 16 = 448 parameters
    auto w2 = DT::zeros({16, 3, 3, 3});
    auto b2 = DT::zeros({16});
    REQUIRE(w2.size() + b2.size() == 448);

    // output spatial size follows floor((H + 2p - k)/s) + 1
    auto x3 = DT::zeros({1, 7, 7});
    auto w3 = DT::zeros({1, 1, 3, 3});
    auto y3 = conv2d<double>(x3, w3, nullptr, 2, 1);
    REQUIRE(y3.shape() == Shape{1, 4, 4});

    REQUIRE_THROWS_AS(conv2d<double>(DT::zeros({3, 4, 4}), DT::zeros({4, 2, 1, 1}), nullptr, 1, 0, 2),
                      std::runtime_error);
}

TEST_CASE("conv2d gradient vs finite differences") {
    Rng rng(7);
    for (int seed = 0; seed < 3; ++seed) {
        auto x = random_tensor({2, 5, 5}, rng);
        auto w = random_tensor({3, 2, 3, 3}, rng, 0.5);
        auto b = random_tensor({3}, rng, 0.1);
        auto fx = std::function([&](const DT& v) {
            auto y = conv2d<double>(v, w, &b, 2, 1);
            return sum_all(mul(y, y));
        });
        REQUIRE(finite_diff_check<double>(fx, x) < 1e-6);
        auto fw = std::function([&](const DT& v) {
            auto y = conv2d<double>(x, v, &b, 2, 1);
            return sum_all(mul(y, y));
        });
        REQUIRE(finite_diff_check<double>(fw, w) < 1e-6);
    }
    // grouped (depthwise) convolution gradient
    auto x = random_tensor({4, 4, 4}, rng);
    auto w = random_tensor({4, 1, 3, 3}, rng, 0.5);
    auto fg = std::function([&](const DT& v) {
        auto y = conv2d<double>(x, v, nullptr, 1, 1, 4);
        return sum_all(mul(y, y));
    });
    REQUIRE(finite_diff_check<double>(fg, w) < 1e-6);
}

TEST_CASE("softmax values and gradient") {
    auto c = softmax(DT::from({4}, {3.0, 3.0, 3.0, 3.0}));
    for (double v : c.data()) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));

    auto p = softmax(DT::from({2}, {0.0, std::log(3.0)}));
    REQUIRE(p.data()[0] == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(p.data()[1] == Catch::Approx(0.75).margin(1e-12));

    Rng rng(3);
    for (int seed = 0; seed < 5; ++seed) {
        auto x = random_tensor({5}, rng);
        auto f = std::function([&](const DT& v) {
            // softmax cross-entropy against class 2
            auto s = softmax(v);
            auto lp = log_e(s);
            return neg(sum_all(mul(lp, DT::from({5}, {0, 0, 1, 0, 0}))));
        });
        REQUIRE(finite_diff_check<double>(f, x) < 1e-6);
    }
    // rows sum to one
    Rng r2(5);
    auto m = random_tensor({7, 9}, r2);
    auto sm = softmax(m);
    for (int i = 0; i < 7; ++i) {
        double s = 0;
        for (int j = 0; j < 9; ++j) s += sm.data()[size_t(i * 9 + j)];
        REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("rms_norm") {
    auto g1 = DT::filled({4}, 1.0);
    auto y = rms_norm(DT::from({4}, {2, 2, 2, 2}), g1, 0.0);
    for (double v : y.data()) REQUIRE(v == Catch::Approx(1.0).margin(1e-12));

    auto y0 = rms_norm(DT::zeros({4}), g1);  // eps guards division
    for (double v : y0.data()) REQUIRE(v == 0.0);

    // positive-scale invariance
    Rng rng(9);
    auto x = random_tensor({8}, rng);
    auto xs = mul_scalar(x, 7.3);
    auto a = rms_norm(x, g1 = DT::filled({8}, 1.0), 1e-12);
    auto b = rms_norm(xs, g1, 1e-12);
    for (size_t i = 0; i < 8; ++i) REQUIRE(a.data()[i] == Catch::Approx(b.data()[i]).margin(1e-6));

    for (int seed = 0; seed < 5; ++seed) {
        auto xr = random_tensor({8}, rng);
        auto gain = random_tensor({8}, rng);
        auto f = std::function([&](const DT& v) {
            return sum_all(mul(rms_norm(v, gain), DT::from({8}, {1, -2, 3, -4, 0.5, 1, 1, 2})));
        });
        REQUIRE(finite_diff_check<double>(f, xr) < 1e-6);
        auto fg = std::function([&](const DT& v) {
            return sum_all(rms_norm(xr, v));
        });
        REQUIRE(finite_diff_check<double>(fg, gain) < 1e-6);
    }
}

TEST_CASE("layer_norm gradient") {
    Rng rng(13);
    auto gain = random_tensor({6}, rng);
    auto bias = random_tensor({6}, rng);
    auto x = random_tensor({3, 6}, rng);
    auto f = std::function([&](const DT& v) {
        return sum_all(mul(layer_norm(v, gain, bias), random_tensor({3, 6}, rng = Rng(42))));
    });
    REQUIRE(finite_diff_check<double>(f, x) < 1e-6);
}

TEST_CASE("swiglu_ffn") {
    // x = 0 -> 0 (swish(0) = 0)
    auto Wg = DT::filled({3, 4}, 0.3);
    auto Wv = DT::filled({3, 4}, -0.2);
    auto Wo = DT::filled({4, 3}, 0.7);
    auto y0 = swiglu_ffn(DT::zeros({2, 3}), Wg, Wv, Wo);
    for (double v : y0.data()) REQUIRE(v == 0.0);

    // scalar case: all weights 1, x = 1 -> swish(1) = 0.7311
    auto one = DT::filled({1, 1}, 1.0);
    auto w1 = DT::filled({1, 1}, 1.0);
    auto ys = swiglu_ffn(one, w1, w1, w1);
    REQUIRE(ys.data()[0] == Catch::Approx(0.731058578630005).margin(1e-9));

    Rng rng(21);
    auto x = random_tensor({2, 3}, rng);
    auto f = std::function([&](const DT& v) {
        auto y = swiglu_ffn(v, Wg, Wv, Wo);
        return sum_all(mul(y, y));
    });
    REQUIRE(finite_diff_check<double>(f, x) < 1e-6);
}

TEST_CASE("bilinear_resize") {
    // constant field preserved at any size
    auto c = DT::filled({2, 3, 3}, 5.0);
    auto r = bilinear_resize(c, 7, 5);
    for (double v : r.data()) REQUIRE(v == Catch::Approx(5.0).margin(1e-12));

    // hand-computed half-pixel row case [1,3]: 1x2 -> 1x4
    auto row = DT::from({1, 1, 2}, {1.0, 3.0});
    auto up = bilinear_resize(row, 1, 4);
    REQUIRE(up.data()[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(up.data()[1] == Catch::Approx(1.5).margin(1e-12));
    REQUIRE(up.data()[2] == Catch::Approx(2.5).margin(1e-12));
    REQUIRE(up.data()[3] == Catch::Approx(3.0).margin(1e-12));

    // identity size is bit-equal
    Rng rng(31);
    auto x = random_tensor({3, 4, 5}, rng);
    auto same = bilinear_resize(x, 4, 5);
    REQUIRE(same.data() == x.data());

    // min/max bounds preserved
    auto big = bilinear_resize(x, 9, 11);
    auto [mn, mx] = std::minmax_element(x.data().begin(), x.data().end());
    for (double v : big.data()) {
        REQUIRE(v >= *mn - 1e-12);
        REQUIRE(v <= *mx + 1e-12);
    }

    auto f = std::function([&](const DT& v) {
        auto y = bilinear_resize(v, 7, 9);
        return sum_all(mul(y, y));
    });
    REQUIRE(finite_diff_check<double>(f, x) < 1e-6);
}

TEST_CASE("sample_points gradient") {
    Rng rng(17);
    auto fmap = random_tensor({2, 4, 4}, rng);
    // interior points away from cell boundaries keep bilinear smooth
    auto pts = DT::from({3, 2}, {0.31, 0.42, 0.55, 0.68, 0.72, 0.33});
    auto fm = std::function([&](const DT& v) {
        auto y = sample_points(v, pts);
        return sum_all(mul(y, y));
    });
    REQUIRE(finite_diff_check<double>(fm, fmap) < 1e-6);
    auto fp = std::function([&](const DT& v) {
        auto y = sample_points(fmap, v);
        return sum_all(mul(y, y));
    });
    REQUIRE(finite_diff_check<double>(fp, pts, 1e-6) < 1e-5);
}

TEST_CASE("backward basics") {
    // loss = sum(x) -> gradient of ones
    auto x = DT::from({3}, {1, 2, 3});
    x.node()->requires_grad = true;
    backward(sum_all(x));
    for (double g : x.grad()) REQUIRE(g == 1.0);

    // loss = sum(x^2) at [1,2] -> grad [2,4]
    auto x2 = DT::from({2}, {1, 2});
    x2.node()->requires_grad = true;
    backward(sum_all(mul(x2, x2)));
    REQUIRE(x2.grad()[0] == Catch::Approx(2.0));
    REQUIRE(x2.grad()[1] == Catch::Approx(4.0));

    // running backward twice without reset doubles leaf gradients
    auto x3 = DT::from({2}, {3, 4});
    x3.node()->requires_grad = true;
    auto loss = sum_all(mul(x3, x3));
    backward(loss);
    auto g1 = x3.grad();
    backward(loss);
    REQUIRE(x3.grad()[0] == Catch::Approx(2 * g1[0]));
    REQUIRE(x3.grad()[1] == Catch::Approx(2 * g1[1]));

    REQUIRE_THROWS_AS(backward(DT::zeros({2})), std::runtime_error);
}

TEST_CASE("composite chain gradient: conv -> rms_norm -> linear") {
    Rng rng(23);
    auto x = random_tensor({2, 4, 4}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng, 0.4);
    auto gain = DT::filled({16}, 1.0);
    auto W = random_tensor({16, 2}, rng, 0.4);
    auto f = std::function([&](const DT& v) {
        auto y = conv2d<double>(v, w, nullptr, 1, 1);      // [3,4,4]
        auto flat = reshape(y, {3, 16});
        auto nrm = rms_norm(flat, gain);
        auto out = matmul(nrm, W);                         // [3,2]
        return sum_all(mul(out, out));
    });
    REQUIRE(finite_diff_check<double>(f, x) < 1e-4);
}

TEST_CASE("finite_diff_check sanity on linear map") {
    Rng rng(29);
    std::vector<double> cv(6);
    for (auto& v : cv) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.5, 1.5);
    auto c = DT::from({6}, std::move(cv));
    auto f = std::function([&](const DT& v) { return sum_all(mul(v, c)); });
    auto x = random_tensor({6}, rng);
    REQUIRE(finite_diff_check<double>(f, x, 1e-4) < 1e-9);
}

TEST_CASE("elementwise min/max, clamp, gather, concat") {
    Rng rng(37);
    auto a = random_tensor({6}, rng);
    auto b = random_tensor({6}, rng);
    auto f = std::function([&](const DT& v) {
        return sum_all(mul(min_e(v, b), max_e(v, b)));
    });
    REQUIRE(finite_diff_check<double>(f, a) < 1e-6);

    auto x = DT::from({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto g = gather0(x, {2, 0, 2});
    REQUIRE(g.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
    x.node()->requires_grad = true;
    auto g2 = gather0(x, {2, 0, 2});
    backward(sum_all(g2));
    REQUIRE(x.grad()[4] == 2.0);  // row 2 gathered twice
    REQUIRE(x.grad()[0] == 1.0);
    REQUIRE(x.grad()[6] == 0.0);

    auto c1 = DT::from({1, 2}, {1, 2});
    auto c2 = DT::from({2, 2}, {3, 4, 5, 6});
    auto cc = concat0<double>({c1, c2});
    REQUIRE(cc.shape() == Shape{3, 2});
    REQUIRE(cc.data() == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("deterministic rng") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    REQUIRE(sample_seed(7, 3, 11) == sample_seed(7, 3, 11));
    REQUIRE(sample_seed(7, 3, 11) != sample_seed(7, 3, 12));
    REQUIRE(sample_seed(7, 3, 11) != sample_seed(7, 4, 11));
}
