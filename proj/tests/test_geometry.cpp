#include <catch2/catch_amalgamated.hpp>

#include "deimv2/geometry.hpp"

using namespace deimv2;

TEST_CASE("box conversion") {
    BoxCxCyWh b{0.5, 0.5, 1, 1};
    auto xy = to_xyxy(b);
    REQUIRE(xy.x1 == Catch::Approx(0.0));
    REQUIRE(xy.y1 == Catch::Approx(0.0));
    REQUIRE(xy.x2 == Catch::Approx(1.0));
    REQUIRE(xy.y2 == Catch::Approx(1.0));

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        BoxCxCyWh c{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
        auto back = to_cxcywh(to_xyxy(c));
        REQUIRE(back.cx == Catch::Approx(c.cx).margin(1e-7));
        REQUIRE(back.cy == Catch::Approx(c.cy).margin(1e-7));
        REQUIRE(back.w == Catch::Approx(c.w).margin(1e-7));
        REQUIRE(back.h == Catch::Approx(c.h).margin(1e-7));
    }

    BoxCxCyWh deg{0.3, 0.4, 0, 0.2};
    auto dxy = to_xyxy(deg);
    REQUIRE(dxy.x1 == dxy.x2);
}

TEST_CASE("iou cases") {
    BoxXyXy a{0, 0, 2, 2}, ident{0, 0, 2, 2};
    REQUIRE(iou(a, ident) == Catch::Approx(1.0));

    BoxXyXy far{5, 5, 6, 6};
    REQUIRE(iou(a, far) == 0.0);

    BoxXyXy b{1, 1, 3, 3};
    REQUIRE(iou(a, b) == Catch::Approx(1.0 / 7.0).margin(1e-9));

    // zero-area boxes give 0, not NaN
    BoxXyXy z{1, 1, 1, 1};
    REQUIRE(iou(z, z) == 0.0);
    REQUIRE(iou(a, z) == 0.0);
}

TEST_CASE("giou cases") {
    BoxXyXy a{0, 0, 2, 2};
    REQUIRE(giou(a, a) == Catch::Approx(1.0));

    BoxXyXy b{1, 1, 3, 3};
    REQUIRE(giou(a, b) == Catch::Approx(1.0 / 7.0 - 2.0 / 9.0).margin(1e-9));

    BoxXyXy c{0, 0, 1, 1}, d{2, 2, 3, 3};
    REQUIRE(giou(c, d) == Catch::Approx(0.0 - 7.0 / 9.0).margin(1e-9));
}

TEST_CASE("iou/giou symmetry and ordering") {
    Rng rng(17);
    for (int i = 0; i < 200; ++i) {
        BoxCxCyWh a{rng.uniform(), rng.uniform(), rng.uniform(0.01, 0.6), rng.uniform(0.01, 0.6)};
        BoxCxCyWh b{rng.uniform(), rng.uniform(), rng.uniform(0.01, 0.6), rng.uniform(0.01, 0.6)};
        REQUIRE(iou(a, b) == Catch::Approx(iou(b, a)).margin(1e-12));
        REQUIRE(giou(a, b) == Catch::Approx(giou(b, a)).margin(1e-12));
        REQUIRE(giou(a, b) <= iou(a, b) + 1e-12);
        REQUIRE(giou(a, b) > -1.0);
        REQUIRE(giou(a, b) <= 1.0);
    }
}

TEST_CASE("pairwise kernels") {
    std::vector<BoxCxCyWh> A = {{0.25, 0.25, 0.5, 0.5}, {0.75, 0.75, 0.5, 0.5}};
    std::vector<BoxCxCyWh> B = {{0.25, 0.25, 0.5, 0.5}};
    auto I = pairwise_iou(A, B);
    REQUIRE(I.size() == 2);
    REQUIRE(I[0][0] == Catch::Approx(1.0));
    REQUIRE(I[1][0] == 0.0);
    auto G = pairwise_giou(A, B);
    REQUIRE(G[0][0] == Catch::Approx(1.0));
    REQUIRE(G[1][0] < 0.0);
}

TEST_CASE("giou gradient matches finite differences") {
    using DT = TensorT<double>;
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<BoxCxCyWh> tgt = {
            {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)}};
        std::vector<double> pv = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7),
                                  rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)};
        auto pred = DT::from({1, 4}, std::move(pv));
        auto f = std::function([&](const DT& v) {
            // 1 - giou loss
            return sum_all(neg(giou_rows(v, tgt)));
        });
        REQUIRE(finite_diff_check<double>(f, pred, 1e-6) < 1e-5);
    }
}
